#ifndef XPLAIN_VERIFIABILITY_VERIFIABILITY_H_
#define XPLAIN_VERIFIABILITY_VERIFIABILITY_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "xplain/attribution/attribution.h"
#include "xplain/core/dataset.h"
#include "xplain/core/model.h"

namespace xplain::verifiability {

struct PlausibilityScore {
  double value = 0.0;
  bool degenerate = false;  // attribution mass is zero
};

// Share of absolute attribution mass that falls inside `mask`. Throws
// InvalidArgument("mask empty") for an empty mask and for indices outside e.
PlausibilityScore Plausibility(std::span<const double> e, const FeatureSet& mask);

// Model probability of the ground-truth class.
double Quality(const Model& model, const Instance& x, int truth);

// 1-based ranks, ties share the average rank.
std::vector<double> AverageRanks(std::span<const double> v);

// Pearson correlation of average ranks. Throws InvalidArgument for unequal
// lengths, fewer than 3 entries, and "constant vector".
double Spearman(std::span<const double> p, std::span<const double> q);

// Everything an explainer may look at for one study instance. Real explainers
// use model, x and target; test doubles may use the rest.
struct ExplainContext {
  const Model& model;
  const Instance& x;
  int target;  // predicted class
  int truth;
  const FeatureSet& mask;
  int row;
  std::uint64_t seed;
};

struct NamedExplainer {
  std::string name;
  std::function<std::vector<double>(const ExplainContext&)> fn;
};

// Wraps an attribution explainer; bind its background first if it needs one.
NamedExplainer Wrap(std::string name, attribution::Explainer explainer);

struct StudyOptions {
  std::uint64_t seed = 42;
};

struct PairResult {
  std::vector<double> p;
  std::vector<double> q;
  std::optional<double> v;  // empty when p or q is constant
  int degenerate_p = 0;     // instances with zero attribution mass
};

struct ExplainerResult {
  std::string name;
  std::vector<PairResult> per_model;
  std::optional<double> mean_v;  // over defined pairs
  std::optional<double> sd_v;    // sample SD, needs >= 2 defined pairs
  int defined = 0;
  int rank = 0;
};

struct VerifiabilityReport {
  std::vector<ExplainerResult> explainers;  // best mean V first
  int n_instances = 0;
  int n_models = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

// For every (model, explainer): p and q over all rows, V = Spearman(p, q).
// Rows must all carry masks and labels. A pair with constant p or q gets an
// undefined V and a warning and is left out of the aggregate. Explainers are
// ranked by mean V, undefined last, input order on ties.
VerifiabilityReport VerifiabilityStudy(const std::vector<ModelPtr>& models,
                                       const LabeledDataset& data,
                                       const std::vector<NamedExplainer>& explainers,
                                       const StudyOptions& options = {});

nlohmann::json ToJson(const VerifiabilityReport& report);
// Header "explainer,mean_v,sd_v"; undefined values are empty fields.
void WriteCsv(std::ostream& out, const VerifiabilityReport& report);

// ---------------------------------------------------------------------------
// Agreement test.

struct GroupSummary {
  int n = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample SD (n - 1 denominator)

  static GroupSummary FromData(std::span<const double> values);
};

struct AgreementTestResult {
  GroupSummary a;
  GroupSummary b;
  double t = 0.0;
  double df = 0.0;
  double p_value = 0.0;  // one-sided, H1: mean a > mean b
  bool pooled = false;
};

// Welch's unequal-variance t with Welch-Satterthwaite df, or Student's pooled
// test when `pooled`. Throws InvalidArgument for n < 2 or when both groups
// have zero variance.
AgreementTestResult WelchUpperT(const GroupSummary& a, const GroupSummary& b,
                                bool pooled = false);
AgreementTestResult WelchUpperT(std::span<const double> a, std::span<const double> b,
                                bool pooled = false);

struct RatingHistogram {
  std::vector<int> counts;        // bin i covers [lo + i, lo + i + 1)
  std::vector<double> relative;   // counts / n
};

struct AgreementAnalysis {
  AgreementTestResult test;  // a = agree, b = disagree
  RatingHistogram agree;
  RatingHistogram disagree;
};

// decisions: (rating, agreed). Ratings outside [lo, hi] are rejected; the top
// bin is closed. Throws InvalidArgument("a group empty") when either group is
// empty.
AgreementAnalysis AnalyzeAgreement(
    const std::vector<std::pair<double, bool>>& decisions, double lo = 0.0,
    double hi = 10.0, bool pooled = false);

nlohmann::json ToJson(const AgreementTestResult& result);
nlohmann::json ToJson(const AgreementAnalysis& analysis);

}  // namespace xplain::verifiability

#endif  // XPLAIN_VERIFIABILITY_VERIFIABILITY_H_
