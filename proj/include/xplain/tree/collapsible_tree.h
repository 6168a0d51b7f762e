#ifndef XPLAIN_TREE_COLLAPSIBLE_TREE_H_
#define XPLAIN_TREE_COLLAPSIBLE_TREE_H_

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "xplain/core/decision_tree.h"
#include "xplain/core/distance.h"

namespace xplain::tree {

// Which part of a training row the semantic distance looks at.
enum class DistanceSpace { kInput, kOutput, kJoint };
enum class Linkage { kAverage, kMinimum, kMaximum };

DistanceSpace DistanceSpaceFromString(std::string_view name);  // x | y | xy
std::string_view ToString(DistanceSpace space);
Linkage LinkageFromString(std::string_view name);  // average | min | max
std::string_view ToString(Linkage linkage);

struct SemanticDistanceConfig {
  DistanceSpace space = DistanceSpace::kJoint;
  Linkage linkage = Linkage::kAverage;
  DistanceMetric metric;  // over the input features
  double lambda = 0.0;

  void Validate(const FeatureSchema& schema) const;
};

// Dense row-by-row semantic distances for one dataset. The joint space adds
// the label as one more categorical feature whose weight is the mean feature
// weight: (m * d_x + [y != y']) / (m + 1).
class InstanceDistances {
 public:
  InstanceDistances(const LabeledDataset& data,
                    const SemanticDistanceConfig& config);

  int size() const { return n_; }
  double operator()(int a, int b) const { return d_[a * n_ + b]; }

  // Linkage distance between two supporting sets.
  double Between(const std::vector<int>& a, const std::vector<int>& b,
                 Linkage linkage) const;

 private:
  int n_;
  std::vector<double> d_;
};

// Split penalty max(0, intra - inter): `intra` links row pairs that land in
// the same child, `inter` links pairs split across the two children.
class SemanticRegularizer : public SplitRegularizer {
 public:
  SemanticRegularizer(const InstanceDistances& distances, Linkage linkage)
      : distances_(distances), linkage_(linkage) {}

  std::vector<double> Penalties(std::span<const int> order,
                                std::span<const int> cuts) const override;

 private:
  const InstanceDistances& distances_;
  Linkage linkage_;
};

// Greedy induction with the semantic penalty weighted by config.lambda. With
// lambda 0 this is exactly GrowTree. The result carries supporting rows.
// Single-class data gives a root leaf. `seed` is accepted for interface
// symmetry; induction is deterministic.
DecisionTree InduceTree(const LabeledDataset& data, int max_depth, int min_leaf,
                        const SemanticDistanceConfig& config,
                        std::uint64_t seed = 42);

// Number of edges on the tree path between two nodes, i.e. the branches
// joining both to their lowest common ancestor.
int Relationship(const DecisionTree& tree, int a, int b);

struct OrderingViolation {
  int i = 0, j = 0, k = 0;
  double dist_ij = 0.0, dist_ik = 0.0;
};

struct OrderingReport {
  long long triples = 0;
  long long violations = 0;
  double fraction = 0.0;  // 0 when there are no triples
  std::vector<OrderingViolation> examples;  // first few, in scan order
};

inline constexpr double kOrderingTolerance = 1e-9;

// Scans ordered triples of distinct leaves (i, j, k) with R(i,j) < R(i,k) and
// counts those where dist(i,j) >= dist(i,k) + kOrderingTolerance. Node
// distances link the leaves' supporting rows, which must be attached.
OrderingReport CheckSemanticOrdering(const DecisionTree& tree,
                                     const InstanceDistances& distances,
                                     Linkage linkage, int max_examples = 10);

struct LambdaSweepResult {
  double lambda = 0.0;
  DecisionTree tree;
  double training_accuracy = 0.0;
  double violation_fraction = 0.0;
  double baseline_accuracy = 0.0;   // lambda = 0
  double baseline_fraction = 0.0;
};

inline const std::vector<double> kDefaultLambdas = {0.5, 0.2, 0.1, 0.05, 0.02,
                                                    0.01};

// Tries `lambdas` from the first entry on and keeps the first tree whose
// training accuracy is at most `max_accuracy_drop` below the lambda-0 tree and
// whose ordering violation fraction is no worse. If none qualifies, the last
// (smallest) lambda is kept.
LambdaSweepResult SweepLambda(const LabeledDataset& data, int max_depth,
                              int min_leaf, SemanticDistanceConfig config,
                              const std::vector<double>& lambdas = kDefaultLambdas,
                              double max_accuracy_drop = 0.01);

// ---------------------------------------------------------------------------
// Views.

struct SuperleafSummary {
  int node = 0;
  std::vector<std::pair<int, int>> cluster;  // (class, count), count desc
  std::string label;                         // e.g. "A|B"
  int majority = 0;
  double purity = 0.0;
  int leaf_count = 0;
  int subtree_depth = 0;  // edges from the node to its deepest leaf
  bool superleaf = false;  // false for true leaves
};

// A tree ready for interactive viewing. Immutable.
class CollapsibleTree {
 public:
  CollapsibleTree(std::string id, FeatureSchema schema, DecisionTree tree);

  const std::string& id() const { return id_; }
  const FeatureSchema& schema() const { return schema_; }
  const DecisionTree& tree() const { return tree_; }
  std::uint64_t Hash() const;  // of the serialized tree

  SuperleafSummary Summary(int node) const;

 private:
  std::string id_;
  FeatureSchema schema_;
  DecisionTree tree_;
};

// Expanded internal nodes; the root is always visible. Frontier = visible
// nodes that are not expanded.
struct CollapsedView {
  std::string tree_id;
  std::set<int> expanded;

  friend bool operator==(const CollapsedView&, const CollapsedView&) = default;
};

inline constexpr int kDefaultCollapseDepth = 2;

CollapsedView CollapseToDepth(const CollapsibleTree& tree, int depth);

// Visible frontier in breadth-first order.
std::vector<int> Frontier(const CollapsibleTree& tree, const CollapsedView& view);

// Throws Conflict("leaf has no subtree") for leaves, Conflict when the node is
// neither expanded nor on the frontier, NotFound for unknown ids.
CollapsedView ToggleNode(const CollapsibleTree& tree, const CollapsedView& view,
                         int node);

struct PredictionRange {
  int node = 0;
  SuperleafSummary summary;
};

PredictionRange RoutePrediction(const CollapsibleTree& tree,
                                const CollapsedView& view, const Instance& x);

// {tree_id, expanded:[ids]}
nlohmann::json ViewToJson(const CollapsedView& view);
// Validates ancestor closure against `tree`.
CollapsedView ViewFromJson(const CollapsibleTree& tree, const nlohmann::json& j);

nlohmann::json ToJson(const FeatureSchema& schema, const SuperleafSummary& s);
// View plus frontier summaries and split descriptions for rendering.
nlohmann::json RenderJson(const CollapsibleTree& tree, const CollapsedView& view);
// Indented text, superleafs marked with "⊕".
std::string RenderText(const CollapsibleTree& tree, const CollapsedView& view);

}  // namespace xplain::tree

#endif  // XPLAIN_TREE_COLLAPSIBLE_TREE_H_
