#ifndef XPLAIN_COUNTERFACTUAL_COUNTERFACTUAL_H_
#define XPLAIN_COUNTERFACTUAL_COUNTERFACTUAL_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "xplain/core/distance.h"
#include "xplain/core/model.h"

namespace xplain::counterfactual {

// Allowed values for a changed feature: [lo, hi] for numeric features, a
// category subset for categorical ones.
struct FeatureRange {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<int> categories;

  bool Contains(const Feature& feature, double value) const;
};

struct Query {
  Instance x;
  int target = 0;
  double epsilon = 1.0;      // distance(x, x_c) < epsilon
  FeatureSet unchangeable;   // must keep their value
  FeatureSet must_change;    // must all differ from x
  std::map<int, FeatureRange> ranges;
  int max_results = 10;      // 0 keeps every result
  std::optional<double> time_budget_ms;
  DistanceMetric metric;

  // Throws InvalidArgument unless the locked and forced sets are disjoint,
  // epsilon is in (0, 1] (or positive for non-Gower metrics), ranges lie in
  // their domains with lo <= hi, and x conforms to the schema.
  void Validate(const FeatureSchema& schema) const;

  // {instance, target_class, epsilon?, lock:[names], force_change:[names],
  //  ranges:{name: [lo, hi] | [categories]}, max_results?, time_budget_ms?}
  nlohmann::json ToJson(const FeatureSchema& schema) const;
  static Query FromJson(const FeatureSchema& schema, const nlohmann::json& j);
};

// Numeric features count as changed when |new - old| > 1e-9 * domain width.
bool ValueChanged(const Feature& feature, double before, double after);
FeatureSet ChangedFeatures(const FeatureSchema& schema, const Instance& a,
                           const Instance& b);

enum class Clause {
  kPrediction,    // f(x_c) != y_c
  kDistance,      // dist(x, x_c) >= epsilon
  kUnchangeable,  // a locked feature changed
  kMustChange,    // a forced feature did not change
  kRange,         // a changed feature left its range
};

std::string_view ToString(Clause clause);

struct Violation {
  Clause clause;
  int feature = -1;  // -1 for the prediction and distance clauses

  friend bool operator==(const Violation&, const Violation&) = default;
};

// Every violated clause, in clause order then feature order. Empty means the
// candidate satisfies the query.
std::vector<Violation> CheckConstraints(const Model& model, const Query& query,
                                        const Instance& candidate);

struct Change {
  int feature = 0;
  double from = 0.0;
  double to = 0.0;
};

struct Counterfactual {
  Instance instance;
  std::vector<Change> delta;  // ascending feature index
  double distance = 0.0;
  int sparsity = 0;
  int rank = 0;  // 1-based position in the result list
};

struct SearchStats {
  long long candidates_evaluated = 0;
  double wall_ms = 0.0;
  bool budget_exhausted = false;  // nothing found within the budget
  bool time_budget_hit = false;   // stopped early; results are partial
};

struct CounterfactualSet {
  std::vector<Counterfactual> results;
  Query query;
  SearchStats stats;
};

// Enumerates the Cartesian grid of the changeable features: grid_steps evenly
// spaced values over each numeric feature's effective range plus its current
// value, every allowed category for categorical features. Returns all
// satisfying candidates, sparsest first (then distance, then changed-feature
// list), truncated to max_results. Throws InvalidArgument when more than 8
// features are free or the grid exceeds 10^6 cells, and when the target equals
// the current prediction.
CounterfactualSet SearchExhaustive(const Model& model, const Query& query,
                                   int grid_steps);

inline constexpr int kMaxExhaustiveFreeFeatures = 8;
inline constexpr double kMaxExhaustiveCells = 1e6;

struct SamplingOptions {
  std::uint64_t seed = 42;
  int budget = 10000;  // candidate draws
  // When > 0, numeric proposals snap to the same grid SearchExhaustive uses
  // with this many steps.
  int snap_steps = 0;
};

// Anytime search: draws candidates in growing distance shells around x,
// mutating only changeable features within their ranges, greedily reverts
// changes that are not needed, and keeps every candidate that passes
// CheckConstraints. Honors query.time_budget_ms by stopping early.
CounterfactualSet SearchSampling(const Model& model, const Query& query,
                                 const SamplingOptions& options);

// Reorders by w_sparsity * |dA| / #features + w_distance * distance (stable)
// and rewrites ranks. Throws InvalidArgument for negative or all-zero weights.
CounterfactualSet RankResults(CounterfactualSet set, double w_sparsity,
                              double w_distance);

nlohmann::json ToJson(const FeatureSchema& schema, const CounterfactualSet& set);
CounterfactualSet CounterfactualSetFromJson(const FeatureSchema& schema,
                                            const nlohmann::json& j);

}  // namespace xplain::counterfactual

#endif  // XPLAIN_COUNTERFACTUAL_COUNTERFACTUAL_H_
