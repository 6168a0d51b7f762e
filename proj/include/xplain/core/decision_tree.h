#ifndef XPLAIN_CORE_DECISION_TREE_H_
#define XPLAIN_CORE_DECISION_TREE_H_

#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "xplain/core/dataset.h"

namespace xplain {

// Axis-aligned split. Numeric: value <= threshold goes left. Categorical:
// value in left_categories goes left.
struct Split {
  int feature = 0;
  bool numeric = true;
  double threshold = 0.0;
  std::vector<int> left_categories;

  bool GoesLeft(double value) const;
};

struct TreeNode {
  int id = 0;
  int depth = 0;
  int parent = -1;
  std::optional<Split> split;
  std::vector<int> children;  // {left, right} for internal nodes
  std::vector<int> histogram;  // label counts of the supporting instances
  int n_support = 0;
  // Row indices into the training data. Empty for trees restored from JSON
  // until AttachSupport is called.
  std::vector<int> support;

  bool is_leaf() const { return !split.has_value(); }
};

class DecisionTree {
 public:
  std::vector<TreeNode> nodes;
  int root = 0;

  const TreeNode& node(int id) const { return nodes.at(id); }
  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int num_leaves() const;
  int max_depth() const;

  // Leaf reached by `x`.
  int Route(const Instance& x) const;
  // Leaf-to-root path is not stored; this returns root-to-leaf node ids.
  std::vector<int> Path(const Instance& x) const;

  // Laplace-smoothed class frequencies of a node: (count+1)/(total+K).
  std::vector<double> NodeProba(int id) const;

  // Recomputes support lists by routing every row of `data`. Histograms and
  // n_support are left untouched.
  void AttachSupport(const LabeledDataset& data);

  // {format_version, nodes:[{id, depth, split?, children, histogram,
  // n_support}], root}
  nlohmann::json ToJson(const FeatureSchema& schema) const;
  static DecisionTree FromJson(const nlohmann::json& j,
                               const FeatureSchema& schema);
};

// Extra split-scoring term. For a node whose supporting rows are arranged in
// `order`, returns one penalty per cut position c, where the candidate split
// sends order[0..c) left and order[c..n) right.
class SplitRegularizer {
 public:
  virtual ~SplitRegularizer() = default;
  virtual std::vector<double> Penalties(std::span<const int> order,
                                        std::span<const int> cuts) const = 0;
};

struct GrowOptions {
  int max_depth = 4;
  int min_leaf = 1;
  // Split score = information gain - lambda * penalty. The regularizer is
  // ignored when lambda is 0 or it is null.
  double lambda = 0.0;
  const SplitRegularizer* regularizer = nullptr;
};

// Greedy top-down induction with entropy information gain. Stops at
// max_depth, on pure nodes, or when no split leaves min_leaf rows on both
// sides. Zero-gain splits may be taken while growing (XOR-like structure needs
// them); afterwards every subtree that reduces no training entropy is
// collapsed. Node ids are assigned breadth-first.
// Ties between candidates go to the lowest feature index, then the lowest
// threshold (or category index).
DecisionTree GrowTree(const LabeledDataset& data, const GrowOptions& options);

// Entropy (bits) of a label histogram.
double Entropy(std::span<const int> histogram);

}  // namespace xplain

#endif  // XPLAIN_CORE_DECISION_TREE_H_
