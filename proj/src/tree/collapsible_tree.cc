#include "xplain/tree/collapsible_tree.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <sstream>

#include "xplain/core/error.h"
#include "xplain/core/model.h"

namespace xplain::tree {

using nlohmann::json;

DistanceSpace DistanceSpaceFromString(std::string_view name) {
  if (name == "x") return DistanceSpace::kInput;
  if (name == "y") return DistanceSpace::kOutput;
  if (name == "xy") return DistanceSpace::kJoint;
  throw InvalidArgument("unknown distance space '" + std::string(name) +
                        "' (expected x, y or xy)");
}

std::string_view ToString(DistanceSpace space) {
  switch (space) {
    case DistanceSpace::kInput:
      return "x";
    case DistanceSpace::kOutput:
      return "y";
    case DistanceSpace::kJoint:
      return "xy";
  }
  return "xy";
}

Linkage LinkageFromString(std::string_view name) {
  if (name == "average") return Linkage::kAverage;
  if (name == "min" || name == "minimum") return Linkage::kMinimum;
  if (name == "max" || name == "maximum") return Linkage::kMaximum;
  throw InvalidArgument("unknown linkage '" + std::string(name) +
                        "' (expected average, min or max)");
}

std::string_view ToString(Linkage linkage) {
  switch (linkage) {
    case Linkage::kAverage:
      return "average";
    case Linkage::kMinimum:
      return "min";
    case Linkage::kMaximum:
      return "max";
  }
  return "average";
}

void SemanticDistanceConfig::Validate(const FeatureSchema& schema) const {
  metric.Validate(schema);
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw InvalidArgument("lambda must be finite and >= 0");
  }
}

InstanceDistances::InstanceDistances(const LabeledDataset& data,
                                     const SemanticDistanceConfig& config)
    : n_(static_cast<int>(data.size())),
      d_(static_cast<std::size_t>(n_) * n_, 0.0) {
  const double m = data.schema.num_features();
  for (int a = 0; a < n_; ++a) {
    for (int b = a + 1; b < n_; ++b) {
      const double dy = data.labels[a] == data.labels[b] ? 0.0 : 1.0;
      double d = dy;
      if (config.space != DistanceSpace::kOutput) {
        const double dx =
            config.metric(data.schema, data.instances[a], data.instances[b]);
        d = config.space == DistanceSpace::kInput ? dx : (m * dx + dy) / (m + 1);
      }
      d_[a * n_ + b] = d;
      d_[b * n_ + a] = d;
    }
  }
}

double InstanceDistances::Between(const std::vector<int>& a,
                                  const std::vector<int>& b,
                                  Linkage linkage) const {
  if (a.empty() || b.empty()) return 0.0;
  double sum = 0.0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int r : a) {
    for (int s : b) {
      const double d = (*this)(r, s);
      sum += d;
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  }
  switch (linkage) {
    case Linkage::kAverage:
      return sum / (static_cast<double>(a.size()) * b.size());
    case Linkage::kMinimum:
      return lo;
    case Linkage::kMaximum:
      return hi;
  }
  return 0.0;
}

namespace {

std::vector<double> AveragePenalties(const InstanceDistances& d,
                                     std::span<const int> order,
                                     std::span<const int> cuts) {
  const int n = static_cast<int>(order.size());
  double sum_left = 0.0, sum_right = 0.0, cross = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) sum_right += d(order[i], order[j]);
  }
  std::vector<double> out;
  out.reserve(cuts.size());
  int c = 0;
  for (int cut : cuts) {
    for (; c < cut; ++c) {
      const int o = order[c];
      double to_left = 0.0, to_right = 0.0;
      for (int i = 0; i < c; ++i) to_left += d(o, order[i]);
      for (int i = c + 1; i < n; ++i) to_right += d(o, order[i]);
      sum_left += to_left;
      sum_right -= to_right;
      cross += to_right - to_left;
    }
    const double pairs_left = 0.5 * cut * (cut - 1);
    const double pairs_right = 0.5 * (n - cut) * (n - cut - 1);
    const double pairs_within = pairs_left + pairs_right;
    const double intra =
        pairs_within > 0 ? (sum_left + sum_right) / pairs_within : 0.0;
    const double inter = cross / (static_cast<double>(cut) * (n - cut));
    out.push_back(std::max(0.0, intra - inter));
  }
  return out;
}

// Min or max linkage. Prefix and suffix aggregates give the intra term, a
// row-wise suffix sweep gives the cross term; O(n^2) overall.
std::vector<double> ExtremePenalties(const InstanceDistances& d,
                                     std::span<const int> order,
                                     std::span<const int> cuts, bool use_max) {
  const int n = static_cast<int>(order.size());
  const double none = use_max ? -std::numeric_limits<double>::infinity()
                              : std::numeric_limits<double>::infinity();
  auto pick = [use_max](double a, double b) {
    return use_max ? std::max(a, b) : std::min(a, b);
  };
  std::vector<double> prefix(n + 1, none), suffix(n + 1, none), cross(n + 1, none);
  for (int c = 1; c <= n; ++c) {
    prefix[c] = prefix[c - 1];
    for (int i = 0; i < c - 1; ++i) prefix[c] = pick(prefix[c], d(order[c - 1], order[i]));
  }
  for (int c = n - 1; c >= 0; --c) {
    suffix[c] = suffix[c + 1];
    for (int i = c + 1; i < n; ++i) suffix[c] = pick(suffix[c], d(order[c], order[i]));
  }
  for (int i = 0; i < n; ++i) {
    double running = none;
    for (int c = n - 1; c > i; --c) {
      running = pick(running, d(order[i], order[c]));
      cross[c] = pick(cross[c], running);
    }
  }
  std::vector<double> out;
  out.reserve(cuts.size());
  for (int cut : cuts) {
    double intra = pick(prefix[cut], suffix[cut]);
    if (!std::isfinite(intra)) intra = 0.0;
    out.push_back(std::max(0.0, intra - cross[cut]));
  }
  return out;
}

}  // namespace

std::vector<double> SemanticRegularizer::Penalties(
    std::span<const int> order, std::span<const int> cuts) const {
  switch (linkage_) {
    case Linkage::kAverage:
      return AveragePenalties(distances_, order, cuts);
    case Linkage::kMinimum:
      return ExtremePenalties(distances_, order, cuts, false);
    case Linkage::kMaximum:
      return ExtremePenalties(distances_, order, cuts, true);
  }
  return {};
}

DecisionTree InduceTree(const LabeledDataset& data, int max_depth, int min_leaf,
                        const SemanticDistanceConfig& config,
                        std::uint64_t /*seed*/) {
  config.Validate(data.schema);
  GrowOptions options;
  options.max_depth = max_depth;
  options.min_leaf = min_leaf;
  options.lambda = config.lambda;
  if (config.lambda == 0.0 || data.empty()) return GrowTree(data, options);
  const InstanceDistances distances(data, config);
  const SemanticRegularizer regularizer(distances, config.linkage);
  options.regularizer = &regularizer;
  return GrowTree(data, options);
}

int Relationship(const DecisionTree& tree, int a, int b) {
  int edges = 0;
  while (a != b) {
    if (tree.node(a).depth >= tree.node(b).depth) {
      a = tree.node(a).parent;
    } else {
      b = tree.node(b).parent;
    }
    ++edges;
  }
  return edges;
}

OrderingReport CheckSemanticOrdering(const DecisionTree& tree,
                                     const InstanceDistances& distances,
                                     Linkage linkage, int max_examples) {
  std::vector<int> leaves;
  for (const TreeNode& node : tree.nodes) {
    if (node.is_leaf()) leaves.push_back(node.id);
  }
  const int L = static_cast<int>(leaves.size());
  std::vector<std::vector<double>> dist(L, std::vector<double>(L, 0.0));
  std::vector<std::vector<int>> rel(L, std::vector<int>(L, 0));
  for (int a = 0; a < L; ++a) {
    for (int b = a + 1; b < L; ++b) {
      dist[a][b] = dist[b][a] = distances.Between(
          tree.node(leaves[a]).support, tree.node(leaves[b]).support, linkage);
      rel[a][b] = rel[b][a] = Relationship(tree, leaves[a], leaves[b]);
    }
  }
  OrderingReport report;
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < L; ++j) {
      if (j == i) continue;
      for (int k = 0; k < L; ++k) {
        if (k == i || k == j || !(rel[i][j] < rel[i][k])) continue;
        ++report.triples;
        if (dist[i][j] >= dist[i][k] + kOrderingTolerance) {
          ++report.violations;
          if (static_cast<int>(report.examples.size()) < max_examples) {
            report.examples.push_back(
                {leaves[i], leaves[j], leaves[k], dist[i][j], dist[i][k]});
          }
        }
      }
    }
  }
  if (report.triples > 0) {
    report.fraction = static_cast<double>(report.violations) / report.triples;
  }
  return report;
}

LambdaSweepResult SweepLambda(const LabeledDataset& data, int max_depth,
                              int min_leaf, SemanticDistanceConfig config,
                              const std::vector<double>& lambdas,
                              double max_accuracy_drop) {
  if (lambdas.empty()) throw InvalidArgument("lambda list is empty");
  const InstanceDistances distances(data, config);
  auto evaluate = [&](double lambda, LambdaSweepResult& out) {
    config.lambda = lambda;
    out.lambda = lambda;
    out.tree = InduceTree(data, max_depth, min_leaf, config);
    out.training_accuracy = Accuracy(CartModel(data.schema, out.tree), data);
    out.violation_fraction =
        CheckSemanticOrdering(out.tree, distances, config.linkage, 0).fraction;
  };
  LambdaSweepResult baseline;
  evaluate(0.0, baseline);
  LambdaSweepResult result;
  for (double lambda : lambdas) {
    if (!(lambda > 0.0)) throw InvalidArgument("sweep lambdas must be > 0");
    evaluate(lambda, result);
    if (result.training_accuracy >=
            baseline.training_accuracy - max_accuracy_drop - 1e-12 &&
        result.violation_fraction <= baseline.violation_fraction + 1e-12) {
      break;
    }
  }
  result.baseline_accuracy = baseline.training_accuracy;
  result.baseline_fraction = baseline.violation_fraction;
  return result;
}

// ---------------------------------------------------------------------------

CollapsibleTree::CollapsibleTree(std::string id, FeatureSchema schema,
                                 DecisionTree tree)
    : id_(std::move(id)), schema_(std::move(schema)), tree_(std::move(tree)) {
  if (tree_.nodes.empty()) throw InvalidArgument("tree has no nodes");
}

std::uint64_t CollapsibleTree::Hash() const {
  // FNV-1a, stable across platforms.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : tree_.ToJson(schema_).dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

SuperleafSummary CollapsibleTree::Summary(int id) const {
  const TreeNode& node = tree_.node(id);
  SuperleafSummary s;
  s.node = id;
  s.superleaf = !node.is_leaf();
  int total = 0;
  for (int c = 0; c < static_cast<int>(node.histogram.size()); ++c) {
    if (node.histogram[c] > 0) s.cluster.emplace_back(c, node.histogram[c]);
    total += node.histogram[c];
  }
  std::stable_sort(s.cluster.begin(), s.cluster.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (std::size_t i = 0; i < s.cluster.size(); ++i) {
    if (i) s.label += "|";
    s.label += schema_.ClassName(s.cluster[i].first);
  }
  if (!s.cluster.empty()) {
    s.majority = s.cluster.front().first;
    s.purity = static_cast<double>(s.cluster.front().second) / total;
  }
  // Leaf count and height of the subtree.
  std::function<void(int, int)> walk = [&](int n, int depth) {
    const TreeNode& t = tree_.node(n);
    s.subtree_depth = std::max(s.subtree_depth, depth);
    if (t.is_leaf()) {
      ++s.leaf_count;
      return;
    }
    for (int child : t.children) walk(child, depth + 1);
  };
  walk(id, 0);
  return s;
}

CollapsedView CollapseToDepth(const CollapsibleTree& tree, int depth) {
  if (depth < 0) throw InvalidArgument("collapse depth must be >= 0");
  CollapsedView view;
  view.tree_id = tree.id();
  for (const TreeNode& node : tree.tree().nodes) {
    if (!node.is_leaf() && node.depth < depth) view.expanded.insert(node.id);
  }
  return view;
}

std::vector<int> Frontier(const CollapsibleTree& tree, const CollapsedView& view) {
  std::vector<int> frontier;
  std::deque<int> queue = {tree.tree().root};
  while (!queue.empty()) {
    const int id = queue.front();
    queue.pop_front();
    if (view.expanded.count(id)) {
      for (int child : tree.tree().node(id).children) queue.push_back(child);
    } else {
      frontier.push_back(id);
    }
  }
  return frontier;
}

CollapsedView ToggleNode(const CollapsibleTree& tree, const CollapsedView& view,
                         int id) {
  const DecisionTree& t = tree.tree();
  if (id < 0 || id >= t.num_nodes()) {
    throw NotFound("unknown node " + std::to_string(id));
  }
  const TreeNode& node = t.node(id);
  if (node.is_leaf()) throw Conflict("leaf has no subtree");
  CollapsedView next = view;
  if (view.expanded.count(id)) {
    std::vector<int> stack = {id};
    while (!stack.empty()) {
      const int n = stack.back();
      stack.pop_back();
      next.expanded.erase(n);
      for (int child : t.node(n).children) stack.push_back(child);
    }
    return next;
  }
  if (node.parent >= 0 && !view.expanded.count(node.parent)) {
    throw Conflict("node " + std::to_string(id) + " is not on the frontier");
  }
  next.expanded.insert(id);
  return next;
}

PredictionRange RoutePrediction(const CollapsibleTree& tree,
                                const CollapsedView& view, const Instance& x) {
  tree.schema().CheckInstance(x);
  const DecisionTree& t = tree.tree();
  int id = t.root;
  while (view.expanded.count(id) && !t.node(id).is_leaf()) {
    const TreeNode& node = t.node(id);
    id = node.split->GoesLeft(x[node.split->feature]) ? node.children[0]
                                                      : node.children[1];
  }
  return {id, tree.Summary(id)};
}

json ViewToJson(const CollapsedView& view) {
  return {{"tree_id", view.tree_id},
          {"expanded", std::vector<int>(view.expanded.begin(), view.expanded.end())}};
}

CollapsedView ViewFromJson(const CollapsibleTree& tree, const json& j) {
  CollapsedView view;
  try {
    view.tree_id = j.at("tree_id").get<std::string>();
    for (const json& v : j.at("expanded")) view.expanded.insert(v.get<int>());
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed view: ") + e.what());
  }
  if (view.tree_id != tree.id()) {
    throw InvalidArgument("view belongs to tree '" + view.tree_id + "'");
  }
  const DecisionTree& t = tree.tree();
  for (int id : view.expanded) {
    if (id < 0 || id >= t.num_nodes() || t.node(id).is_leaf()) {
      throw InvalidArgument("expanded node " + std::to_string(id) +
                            " is not an internal node");
    }
    const int parent = t.node(id).parent;
    if (parent >= 0 && !view.expanded.count(parent)) {
      throw InvalidArgument("expanded set is not ancestor-closed at node " +
                            std::to_string(id));
    }
  }
  return view;
}

json ToJson(const FeatureSchema& schema, const SuperleafSummary& s) {
  json cluster = json::object();
  for (const auto& [c, count] : s.cluster) cluster[schema.ClassName(c)] = count;
  return {{"node", s.node},
          {"superleaf", s.superleaf},
          {"label", s.label},
          {"cluster", cluster},
          {"majority", schema.ClassName(s.majority)},
          {"purity", s.purity},
          {"leaf_count", s.leaf_count},
          {"subtree_depth", s.subtree_depth}};
}

namespace {

// Condition leading from `parent` to its child on side `left`.
std::string EdgeText(const FeatureSchema& schema, const Split& split, bool left) {
  const Feature& f = schema.feature(split.feature);
  std::ostringstream out;
  out << f.name;
  if (split.numeric) {
    out << (left ? " <= " : " > ") << schema.FormatValue(split.feature, split.threshold);
  } else {
    out << (left ? " in {" : " not in {");
    for (std::size_t i = 0; i < split.left_categories.size(); ++i) {
      if (i) out << ",";
      out << f.categories[split.left_categories[i]];
    }
    out << "}";
  }
  return out.str();
}

}  // namespace

json RenderJson(const CollapsibleTree& tree, const CollapsedView& view) {
  const FeatureSchema& schema = tree.schema();
  json frontier = json::array();
  for (int id : Frontier(tree, view)) {
    frontier.push_back(ToJson(schema, tree.Summary(id)));
  }
  json visible = json::array();
  std::deque<int> queue = {tree.tree().root};
  while (!queue.empty()) {
    const int id = queue.front();
    queue.pop_front();
    const TreeNode& node = tree.tree().node(id);
    json entry = {{"id", id},
                  {"depth", node.depth},
                  {"parent", node.parent},
                  {"n_support", node.n_support},
                  {"expanded", view.expanded.count(id) > 0},
                  {"leaf", node.is_leaf()}};
    if (node.parent >= 0) {
      const TreeNode& parent = tree.tree().node(node.parent);
      entry["condition"] =
          EdgeText(schema, *parent.split, parent.children[0] == id);
    }
    visible.push_back(entry);
    if (view.expanded.count(id)) {
      for (int child : node.children) queue.push_back(child);
    }
  }
  json j = ViewToJson(view);
  j["nodes"] = visible;
  j["frontier"] = frontier;
  return j;
}

std::string RenderText(const CollapsibleTree& tree, const CollapsedView& view) {
  const FeatureSchema& schema = tree.schema();
  const DecisionTree& t = tree.tree();
  std::ostringstream out;
  std::function<void(int, const std::string&)> emit = [&](int id,
                                                          const std::string& edge) {
    const TreeNode& node = t.node(id);
    out << std::string(2 * node.depth, ' ');
    if (!edge.empty()) out << edge << ": ";
    out << "[" << id << "] ";
    if (view.expanded.count(id)) {
      out << "n=" << node.n_support << "\n";
      for (int side = 0; side < 2; ++side) {
        emit(node.children[side], EdgeText(schema, *node.split, side == 0));
      }
      return;
    }
    const SuperleafSummary s = tree.Summary(id);
    out << (s.superleaf ? "⊕ " : "leaf ") << s.label << " {";
    for (std::size_t i = 0; i < s.cluster.size(); ++i) {
      if (i) out << ", ";
      out << schema.ClassName(s.cluster[i].first) << ":" << s.cluster[i].second;
    }
    out << "}";
    if (s.superleaf) {
      std::ostringstream purity;
      purity.precision(3);
      purity << s.purity;
      out << " purity=" << purity.str() << " leaves=" << s.leaf_count;
    }
    out << "\n";
  };
  emit(t.root, "");
  return out.str();
}

}  // namespace xplain::tree
