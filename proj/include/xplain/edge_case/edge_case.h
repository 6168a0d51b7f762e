#ifndef XPLAIN_EDGE_CASE_EDGE_CASE_H_
#define XPLAIN_EDGE_CASE_EDGE_CASE_H_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "xplain/core/dataset.h"
#include "xplain/core/distance.h"
#include "xplain/core/model.h"
#include "xplain/edge_case/risk.h"

namespace xplain::edge_case {

// Restricts edge cases to the neighbourhood of a query instance.
struct Locality {
  Instance query;
  double max_distance = 1.0;  // in (0, 1]
  bool require_prediction_flip = false;
};

// The conjunction C: Risk(x) > risk_threshold (strict), optionally
// f(x) != truth, every extra predicate, and the locality constraints.
struct EdgeCriterion {
  double risk_threshold = 0.0;
  bool require_misprediction = true;
  std::vector<FeaturePredicate> predicates;
  std::optional<Locality> locality;
  DistanceMetric metric;

  // Throws InvalidArgument for a non-finite threshold, max_distance outside
  // (0, 1] or a query that does not conform to the schema.
  void Validate(const FeatureSchema& schema) const;

  nlohmann::json ToJson(const FeatureSchema& schema) const;
  static EdgeCriterion FromJson(const FeatureSchema& schema,
                                const nlohmann::json& j);
};

struct EdgeCase {
  std::optional<std::size_t> row;  // dataset row; empty for synthetic cases
  Instance instance;
  int predicted = 0;
  int truth = 0;
  double risk = 0.0;
  std::optional<double> distance_to_query;
  bool synthetic = false;
  // Synthetic truth copied from the nearest labelled row, not an oracle.
  bool truth_from_neighbor = false;
};

struct RiskHistogram {
  std::vector<double> edges;  // bins + 1 entries; empty when there are no cases
  std::vector<int> counts;
};

struct FeatureStump {
  int feature = 0;
  double gain = 0.0;  // best single-split information gain, in bits
};

struct EdgeSummary {
  int count = 0;
  // confusion[truth][predicted], restricted to the edge cases.
  std::vector<std::vector<int>> confusion;
  RiskHistogram histogram;
  // Features ranked by how well one split separates edge cases from
  // correctly-predicted rows.
  std::vector<FeatureStump> top_features;
};

struct EdgeCaseSet {
  std::vector<EdgeCase> cases;
  EdgeSummary summary;
};

// Full conjunction C evaluated for one instance. `query_prediction` is f(x_opt)
// and is only read when the criterion asks for a prediction flip.
bool SatisfiesCriterion(const Model& model, const RiskFunction& risk,
                        const EdgeCriterion& criterion, const Instance& x,
                        int truth, int query_prediction);

struct SummaryOptions {
  int bins = 10;
  int top_k = 3;
};

// Exactly the rows of `data` satisfying the criterion, ordered by descending
// risk, then ascending distance to the query, then row index. An empty result
// is not an error.
EdgeCaseSet MineEdgeCases(const Model& model, const LabeledDataset& data,
                          const RiskFunction& risk,
                          const EdgeCriterion& criterion,
                          const SummaryOptions& summary = {});

// Ground truth for synthetic instances: a caller-supplied oracle, or the label
// of the nearest row of the dataset (cases are then flagged).
struct LabelSource {
  std::function<int(const Instance&)> oracle;
  bool allow_nearest_neighbor = false;
};

struct ConstructOptions {
  int budget = 1000;  // perturbation draws
  std::uint64_t seed = 42;
  LabelSource labels;
  SummaryOptions summary;
};

// Builds synthetic edge cases by resampling features of dataset rows (or of
// the locality query) within their domains. Every returned case satisfies the
// criterion under its assigned truth and is flagged synthetic. Duplicates are
// dropped. Deterministic for a fixed seed.
EdgeCaseSet ConstructEdgeCases(const Model& model, const LabeledDataset& data,
                               const RiskFunction& risk,
                               const EdgeCriterion& criterion,
                               const ConstructOptions& options);

// Histogram over [min risk, max risk] with equal-width bins (last bin closed),
// confusion counts, and stump ranking against `contrast` (non-edge rows).
EdgeSummary SummarizeEdgeCases(std::span<const EdgeCase> cases, int bins,
                               const FeatureSchema& schema,
                               std::span<const Instance> contrast,
                               int top_k = 3);

nlohmann::json ToJson(const FeatureSchema& schema, const EdgeCaseSet& set);
EdgeCaseSet EdgeCaseSetFromJson(const FeatureSchema& schema,
                                const nlohmann::json& j);
// One case per row: features, predicted, truth, risk, distance, synthetic.
void WriteCsv(const FeatureSchema& schema, const EdgeCaseSet& set,
              std::ostream& out);

}  // namespace xplain::edge_case

#endif  // XPLAIN_EDGE_CASE_EDGE_CASE_H_
