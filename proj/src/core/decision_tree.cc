#include "xplain/core/decision_tree.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "xplain/core/error.h"

namespace xplain {

using nlohmann::json;

namespace {

constexpr int kTreeFormatVersion = 1;
// Candidate splits need gain >= -kGainSlack; subtrees whose total entropy
// reduction (in bits times rows) is at most kPruneSlack are collapsed.
constexpr double kGainSlack = 1e-12;
constexpr double kPruneSlack = 1e-9;

double Entropy(const std::vector<int>& histogram, int total) {
  if (total <= 0) return 0.0;
  double h = 0.0;
  for (int c : histogram) {
    if (c <= 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log2(p);
  }
  return h;
}

struct Candidate {
  Split split;
  double score = 0.0;
  std::vector<int> left;
  std::vector<int> right;
};

class Grower {
 public:
  Grower(const LabeledDataset& data, const GrowOptions& options)
      : data_(data), options_(options), k_(data.schema.num_classes()) {}

  DecisionTree Grow() {
    DecisionTree tree;
    std::vector<int> all(data_.size());
    std::iota(all.begin(), all.end(), 0);
    tree.nodes.push_back(MakeNode(0, 0, -1, std::move(all)));
    std::deque<int> queue = {0};
    while (!queue.empty()) {
      const int id = queue.front();
      queue.pop_front();
      std::optional<Candidate> best = BestSplit(tree.nodes[id]);
      if (!best) continue;
      const int depth = tree.nodes[id].depth + 1;
      const int left_id = tree.num_nodes();
      tree.nodes.push_back(MakeNode(left_id, depth, id, std::move(best->left)));
      const int right_id = tree.num_nodes();
      tree.nodes.push_back(
          MakeNode(right_id, depth, id, std::move(best->right)));
      tree.nodes[id].split = std::move(best->split);
      tree.nodes[id].children = {left_id, right_id};
      queue.push_back(left_id);
      queue.push_back(right_id);
    }
    return Prune(std::move(tree));
  }

 private:
  TreeNode MakeNode(int id, int depth, int parent, std::vector<int> rows) {
    TreeNode node;
    node.id = id;
    node.depth = depth;
    node.parent = parent;
    node.histogram.assign(k_, 0);
    for (int r : rows) ++node.histogram[data_.labels[r]];
    node.n_support = static_cast<int>(rows.size());
    node.support = std::move(rows);
    return node;
  }

  bool Regularized() const {
    return options_.lambda != 0.0 && options_.regularizer != nullptr;
  }

  std::optional<Candidate> BestSplit(const TreeNode& node) const {
    const int n = node.n_support;
    if (node.depth >= options_.max_depth) return std::nullopt;
    if (n < 2 * options_.min_leaf) return std::nullopt;
    if (std::count_if(node.histogram.begin(), node.histogram.end(),
                      [](int c) { return c > 0; }) <= 1) {
      return std::nullopt;
    }
    const double parent_entropy = Entropy(node.histogram, n);

    std::optional<Candidate> best;
    auto consider = [&](Split split, double score,
                        const std::vector<int>& order, int cut) {
      if (best && !(score > best->score)) return;
      Candidate c;
      c.split = std::move(split);
      c.score = score;
      c.left.assign(order.begin(), order.begin() + cut);
      c.right.assign(order.begin() + cut, order.end());
      std::sort(c.left.begin(), c.left.end());
      std::sort(c.right.begin(), c.right.end());
      best = std::move(c);
    };

    for (int f = 0; f < data_.schema.num_features(); ++f) {
      const Feature& feature = data_.schema.feature(f);
      if (feature.numeric()) {
        std::vector<int> order = node.support;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
          return data_.instances[a][f] < data_.instances[b][f];
        });
        std::vector<int> cuts;
        std::vector<double> gains;
        std::vector<int> left(k_, 0);
        std::vector<int> right = node.histogram;
        for (int i = 1; i < n; ++i) {
          const int moved = data_.labels[order[i - 1]];
          ++left[moved];
          --right[moved];
          if (i < options_.min_leaf || n - i < options_.min_leaf) continue;
          if (!(data_.instances[order[i - 1]][f] <
                data_.instances[order[i]][f])) {
            continue;
          }
          const double gain = parent_entropy -
                              (static_cast<double>(i) / n) * Entropy(left, i) -
                              (static_cast<double>(n - i) / n) *
                                  Entropy(right, n - i);
          cuts.push_back(i);
          gains.push_back(gain);
        }
        if (cuts.empty()) continue;
        std::vector<double> penalties;
        if (Regularized()) {
          penalties = options_.regularizer->Penalties(order, cuts);
        }
        for (std::size_t c = 0; c < cuts.size(); ++c) {
          if (!(gains[c] >= -kGainSlack)) continue;
          double score = gains[c];
          if (Regularized()) score -= options_.lambda * penalties[c];
          Split split;
          split.feature = f;
          split.numeric = true;
          split.threshold = 0.5 * (data_.instances[order[cuts[c] - 1]][f] +
                                   data_.instances[order[cuts[c]]][f]);
          consider(std::move(split), score, order, cuts[c]);
        }
      } else {
        const int n_cat = static_cast<int>(feature.categories.size());
        for (int cat = 0; cat < n_cat; ++cat) {
          std::vector<int> order;
          std::vector<int> rest;
          std::vector<int> left(k_, 0);
          for (int r : node.support) {
            if (static_cast<int>(data_.instances[r][f]) == cat) {
              order.push_back(r);
              ++left[data_.labels[r]];
            } else {
              rest.push_back(r);
            }
          }
          const int cut = static_cast<int>(order.size());
          if (cut < options_.min_leaf || n - cut < options_.min_leaf) continue;
          std::vector<int> right(k_);
          for (int c = 0; c < k_; ++c) right[c] = node.histogram[c] - left[c];
          const double gain = parent_entropy -
                              (static_cast<double>(cut) / n) *
                                  Entropy(left, cut) -
                              (static_cast<double>(n - cut) / n) *
                                  Entropy(right, n - cut);
          if (!(gain >= -kGainSlack)) continue;
          order.insert(order.end(), rest.begin(), rest.end());
          double score = gain;
          if (Regularized()) {
            const std::vector<int> cuts = {cut};
            score -= options_.lambda *
                     options_.regularizer->Penalties(order, cuts)[0];
          }
          Split split;
          split.feature = f;
          split.numeric = false;
          split.left_categories = {cat};
          consider(std::move(split), score, order, cut);
        }
      }
    }
    return best;
  }

  // Collapses every internal node whose subtree reduces no entropy, then
  // renumbers the survivors breadth-first.
  static DecisionTree Prune(DecisionTree tree) {
    const int n = tree.num_nodes();
    std::vector<double> leaf_entropy(n, 0.0);
    for (int id = n - 1; id >= 0; --id) {
      TreeNode& node = tree.nodes[id];
      const double own = node.n_support * Entropy(node.histogram, node.n_support);
      if (node.is_leaf()) {
        leaf_entropy[id] = own;
        continue;
      }
      const double below =
          leaf_entropy[node.children[0]] + leaf_entropy[node.children[1]];
      if (own - below <= kPruneSlack) {
        node.split.reset();
        node.children.clear();
        leaf_entropy[id] = own;
      } else {
        leaf_entropy[id] = below;
      }
    }
    DecisionTree out;
    std::deque<std::pair<int, int>> queue = {{tree.root, -1}};
    while (!queue.empty()) {
      auto [old_id, parent] = queue.front();
      queue.pop_front();
      TreeNode node = std::move(tree.nodes[old_id]);
      node.id = out.num_nodes();
      node.parent = parent;
      const std::vector<int> old_children = std::move(node.children);
      node.children.clear();
      if (parent >= 0) out.nodes[parent].children.push_back(node.id);
      out.nodes.push_back(std::move(node));
      for (int c : old_children) queue.emplace_back(c, out.num_nodes() - 1);
    }
    return out;
  }

  const LabeledDataset& data_;
  const GrowOptions& options_;
  const int k_;
};

}  // namespace

bool Split::GoesLeft(double value) const {
  if (numeric) return value <= threshold;
  const int cat = static_cast<int>(value);
  return std::find(left_categories.begin(), left_categories.end(), cat) !=
         left_categories.end();
}

double Entropy(std::span<const int> histogram) {
  std::vector<int> h(histogram.begin(), histogram.end());
  return Entropy(h, std::accumulate(h.begin(), h.end(), 0));
}

int DecisionTree::num_leaves() const {
  return static_cast<int>(std::count_if(
      nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

int DecisionTree::max_depth() const {
  int depth = 0;
  for (const TreeNode& n : nodes) depth = std::max(depth, n.depth);
  return depth;
}

int DecisionTree::Route(const Instance& x) const { return Path(x).back(); }

std::vector<int> DecisionTree::Path(const Instance& x) const {
  std::vector<int> path = {root};
  while (!nodes[path.back()].is_leaf()) {
    const TreeNode& n = nodes[path.back()];
    path.push_back(n.split->GoesLeft(x.at(n.split->feature)) ? n.children[0]
                                                             : n.children[1]);
  }
  return path;
}

std::vector<double> DecisionTree::NodeProba(int id) const {
  const TreeNode& n = node(id);
  const int k = static_cast<int>(n.histogram.size());
  const double total = static_cast<double>(n.n_support + k);
  std::vector<double> proba(k);
  for (int c = 0; c < k; ++c) proba[c] = (n.histogram[c] + 1) / total;
  return proba;
}

void DecisionTree::AttachSupport(const LabeledDataset& data) {
  for (TreeNode& n : nodes) n.support.clear();
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (int id : Path(data.instances[r])) {
      nodes[id].support.push_back(static_cast<int>(r));
    }
  }
}

json DecisionTree::ToJson(const FeatureSchema& schema) const {
  json jnodes = json::array();
  for (const TreeNode& n : nodes) {
    json jn = {{"id", n.id},
               {"depth", n.depth},
               {"children", n.children},
               {"histogram", n.histogram},
               {"n_support", n.n_support}};
    if (n.split) {
      const Feature& f = schema.feature(n.split->feature);
      json js = {{"feature", f.name}};
      if (n.split->numeric) {
        js["threshold"] = n.split->threshold;
      } else {
        json cats = json::array();
        for (int c : n.split->left_categories) cats.push_back(f.categories[c]);
        js["left_categories"] = cats;
      }
      jn["split"] = js;
    }
    jnodes.push_back(std::move(jn));
  }
  return {{"format_version", kTreeFormatVersion},
          {"nodes", jnodes},
          {"root", root}};
}

DecisionTree DecisionTree::FromJson(const json& j,
                                    const FeatureSchema& schema) {
  try {
    if (j.at("format_version").get<int>() != kTreeFormatVersion) {
      throw InvalidArgument("unsupported tree format_version");
    }
    DecisionTree tree;
    tree.root = j.at("root").get<int>();
    for (const json& jn : j.at("nodes")) {
      TreeNode n;
      n.id = jn.at("id").get<int>();
      n.depth = jn.at("depth").get<int>();
      n.children = jn.at("children").get<std::vector<int>>();
      n.histogram = jn.at("histogram").get<std::vector<int>>();
      n.n_support = jn.at("n_support").get<int>();
      if (n.id != tree.num_nodes()) throw InvalidArgument("node ids must be dense");
      if (static_cast<int>(n.histogram.size()) != schema.num_classes()) {
        throw InvalidArgument("node histogram does not match class count");
      }
      if (jn.contains("split")) {
        const json& js = jn["split"];
        Split s;
        s.feature = schema.FeatureIndex(js.at("feature").get<std::string>());
        const Feature& f = schema.feature(s.feature);
        if (f.numeric()) {
          s.threshold = js.at("threshold").get<double>();
        } else {
          s.numeric = false;
          for (const json& c : js.at("left_categories")) {
            auto cat = f.FindCategory(c.get<std::string>());
            if (!cat) throw InvalidArgument("unknown category in split");
            s.left_categories.push_back(*cat);
          }
        }
        if (n.children.size() != 2) {
          throw InvalidArgument("internal node needs two children");
        }
        n.split = std::move(s);
      } else if (!n.children.empty()) {
        throw InvalidArgument("leaf node with children");
      }
      tree.nodes.push_back(std::move(n));
    }
    if (tree.root < 0 || tree.root >= tree.num_nodes()) {
      throw InvalidArgument("root out of range");
    }
    for (const TreeNode& n : tree.nodes) {
      for (int c : n.children) {
        if (c <= n.id || c >= tree.num_nodes()) {
          throw InvalidArgument("child ids must follow their parent");
        }
        tree.nodes[c].parent = n.id;
      }
    }
    return tree;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed tree: ") + e.what());
  }
}

DecisionTree GrowTree(const LabeledDataset& data, const GrowOptions& options) {
  if (data.empty()) throw InvalidArgument("cannot grow a tree on empty data");
  if (options.max_depth < 1) throw InvalidArgument("max_depth must be >= 1");
  if (options.min_leaf < 1) throw InvalidArgument("min_leaf must be >= 1");
  return Grower(data, options).Grow();
}

}  // namespace xplain
