#include "xplain/core/model.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "xplain/core/distance.h"
#include "xplain/core/error.h"

namespace xplain {

using nlohmann::json;

namespace {

constexpr int kModelFormatVersion = 1;

void Softmax(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

void CheckProba(const std::vector<double>& p, int num_classes) {
  if (static_cast<int>(p.size()) != num_classes) {
    throw InvalidArgument("probability row has wrong length");
  }
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) {
      throw InvalidArgument("probabilities must be finite and >= 0");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw InvalidArgument("probability row does not sum to 1");
  }
}

}  // namespace

ModelKind ModelKindFromString(std::string_view name) {
  if (name == "cart-tree" || name == "cart") return ModelKind::kCartTree;
  if (name == "logistic") return ModelKind::kLogistic;
  if (name == "external-table") return ModelKind::kExternalTable;
  throw InvalidArgument("unknown model kind '" + std::string(name) + "'");
}

std::string_view ToString(ModelKind kind) {
  switch (kind) {
    case ModelKind::kCartTree:
      return "cart-tree";
    case ModelKind::kLogistic:
      return "logistic";
    case ModelKind::kExternalTable:
      return "external-table";
  }
  return "cart-tree";
}

int ArgMax(const std::vector<double>& values) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<double> Model::PredictProba(const Instance& x) const {
  schema_.CheckInstance(x);
  return ProbaUnchecked(x);
}

int Model::Predict(const Instance& x) const { return ArgMax(PredictProba(x)); }

json Model::ToJson() const {
  return {{"format_version", kModelFormatVersion},
          {"kind", ToString(kind())},
          {"schema", schema_.ToJson()},
          {"parameters", Parameters()}};
}

// --- CART --------------------------------------------------------------------

CartModel::CartModel(FeatureSchema schema, DecisionTree tree)
    : Model(std::move(schema)), tree_(std::move(tree)) {
  if (tree_.nodes.empty()) throw InvalidArgument("empty tree");
}

std::vector<double> CartModel::ProbaUnchecked(const Instance& x) const {
  return tree_.NodeProba(tree_.Route(x));
}

json CartModel::Parameters() const { return tree_.ToJson(schema()); }

// --- Logistic ----------------------------------------------------------------

LogisticModel::LogisticModel(FeatureSchema schema,
                             std::vector<std::vector<double>> weights)
    : Model(std::move(schema)), weights_(std::move(weights)) {
  if (static_cast<int>(weights_.size()) != this->schema().num_classes()) {
    throw InvalidArgument("logistic weights: one row per class expected");
  }
  const std::size_t width = EncodedWidth(this->schema()) + 1;
  for (const auto& row : weights_) {
    if (row.size() != width) {
      throw InvalidArgument("logistic weights: wrong row width");
    }
    for (double w : row) {
      if (!std::isfinite(w)) throw InvalidArgument("non-finite weight");
    }
  }
}

int LogisticModel::EncodedWidth(const FeatureSchema& schema) {
  int width = 0;
  for (const Feature& f : schema.features()) {
    width += f.numeric() ? 1 : static_cast<int>(f.categories.size());
  }
  return width;
}

std::vector<double> LogisticModel::Encode(const FeatureSchema& schema,
                                          const Instance& x) {
  std::vector<double> z;
  z.reserve(EncodedWidth(schema));
  for (int i = 0; i < schema.num_features(); ++i) {
    const Feature& f = schema.feature(i);
    if (f.numeric()) {
      z.push_back(f.Width() > 0.0 ? (x[i] - f.lo) / f.Width() : 0.0);
    } else {
      for (std::size_t c = 0; c < f.categories.size(); ++c) {
        z.push_back(static_cast<std::size_t>(x[i]) == c ? 1.0 : 0.0);
      }
    }
  }
  return z;
}

std::vector<double> LogisticModel::ProbaUnchecked(const Instance& x) const {
  const std::vector<double> z = Encode(schema(), x);
  std::vector<double> logits(weights_.size());
  for (std::size_t c = 0; c < weights_.size(); ++c) {
    double s = weights_[c][0];
    for (std::size_t j = 0; j < z.size(); ++j) s += weights_[c][j + 1] * z[j];
    logits[c] = s;
  }
  Softmax(logits);
  return logits;
}

json LogisticModel::Parameters() const { return {{"weights", weights_}}; }

// --- Table -------------------------------------------------------------------

TableModel::TableModel(FeatureSchema schema, std::vector<Entry> entries)
    : Model(std::move(schema)), entries_(std::move(entries)) {
  if (entries_.empty()) throw InvalidArgument("empty probability table");
  for (const Entry& e : entries_) {
    this->schema().CheckInstance(e.first);
    CheckProba(e.second, this->schema().num_classes());
  }
}

std::vector<double> TableModel::ProbaUnchecked(const Instance& x) const {
  const DistanceMetric gower;
  std::size_t best = 0;
  double best_distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first == x) return entries_[i].second;
    const double d = gower(schema(), entries_[i].first, x);
    if (d < best_distance) {
      best_distance = d;
      best = i;
    }
  }
  return entries_[best].second;
}

json TableModel::Parameters() const {
  json rows = json::array();
  for (const Entry& e : entries_) {
    rows.push_back(
        {{"instance", InstanceToJson(schema(), e.first)}, {"proba", e.second}});
  }
  return {{"entries", rows}};
}

// --- Persistence -------------------------------------------------------------

ModelPtr ModelFromJson(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw InvalidArgument("unsupported model format_version");
    }
    FeatureSchema schema = FeatureSchema::FromJson(j.at("schema"));
    const json& params = j.at("parameters");
    switch (ModelKindFromString(j.at("kind").get<std::string>())) {
      case ModelKind::kCartTree: {
        DecisionTree tree = DecisionTree::FromJson(params, schema);
        return std::make_shared<CartModel>(std::move(schema), std::move(tree));
      }
      case ModelKind::kLogistic:
        return std::make_shared<LogisticModel>(
            std::move(schema),
            params.at("weights").get<std::vector<std::vector<double>>>());
      case ModelKind::kExternalTable: {
        std::vector<TableModel::Entry> entries;
        for (const json& row : params.at("entries")) {
          entries.emplace_back(InstanceFromJson(schema, row.at("instance")),
                               row.at("proba").get<std::vector<double>>());
        }
        return std::make_shared<TableModel>(std::move(schema),
                                            std::move(entries));
      }
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed model: ") + e.what());
  }
  throw InvalidArgument("malformed model");
}

// --- Training ----------------------------------------------------------------

double Accuracy(const Model& model, const LabeledDataset& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (model.Predict(data.instances[r]) == data.labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

ModelPtr TrainLogistic(const LabeledDataset& data,
                       const LogisticHyperparams& hp) {
  const FeatureSchema& schema = data.schema;
  const int k = schema.num_classes();
  const int width = LogisticModel::EncodedWidth(schema);
  std::vector<std::vector<double>> encoded;
  encoded.reserve(data.size());
  for (const Instance& x : data.instances) {
    encoded.push_back(LogisticModel::Encode(schema, x));
  }
  const double n = static_cast<double>(data.size());
  std::vector<std::vector<double>> w(k, std::vector<double>(width + 1, 0.0));
  std::vector<std::vector<double>> grad(k, std::vector<double>(width + 1));
  std::vector<double> logits(k);
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    for (auto& row : grad) std::fill(row.begin(), row.end(), 0.0);
    double loss = 0.0;
    for (std::size_t r = 0; r < data.size(); ++r) {
      const std::vector<double>& z = encoded[r];
      for (int c = 0; c < k; ++c) {
        double s = w[c][0];
        for (int j = 0; j < width; ++j) s += w[c][j + 1] * z[j];
        logits[c] = s;
      }
      Softmax(logits);
      loss -= std::log(std::max(logits[data.labels[r]], 1e-300));
      for (int c = 0; c < k; ++c) {
        const double err = logits[c] - (c == data.labels[r] ? 1.0 : 0.0);
        grad[c][0] += err;
        for (int j = 0; j < width; ++j) grad[c][j + 1] += err * z[j];
      }
    }
    loss /= n;
    for (int c = 0; c < k; ++c) {
      for (int j = 1; j <= width; ++j) loss += 0.5 * hp.l2 * w[c][j] * w[c][j];
    }
    if (!std::isfinite(loss)) throw FailedPrecondition("non-finite loss");
    for (int c = 0; c < k; ++c) {
      for (int j = 0; j <= width; ++j) {
        const double reg = j > 0 ? hp.l2 * w[c][j] : 0.0;
        w[c][j] -= hp.learning_rate * (grad[c][j] / n + reg);
      }
    }
  }
  return std::make_shared<LogisticModel>(schema, std::move(w));
}

}  // namespace

TrainedModel TrainModel(const LabeledDataset& data,
                        const TrainOptions& options) {
  data.Validate();
  const std::set<int> classes(data.labels.begin(), data.labels.end());
  if (classes.size() < 2) {
    throw FailedPrecondition("single-class or empty data");
  }
  ModelPtr model;
  switch (options.kind) {
    case ModelKind::kCartTree: {
      GrowOptions grow;
      grow.max_depth = options.tree.max_depth;
      grow.min_leaf = options.tree.min_leaf;
      model = std::make_shared<CartModel>(data.schema, GrowTree(data, grow));
      break;
    }
    case ModelKind::kLogistic: {
      const LogisticHyperparams& hp = options.logistic;
      if (!(hp.learning_rate > 0.0) || !std::isfinite(hp.learning_rate)) {
        throw InvalidArgument("learning rate must be > 0");
      }
      if (hp.epochs < 1) throw InvalidArgument("epochs must be >= 1");
      if (!(hp.l2 >= 0.0)) throw InvalidArgument("l2 must be >= 0");
      model = TrainLogistic(data, hp);
      break;
    }
    case ModelKind::kExternalTable:
      throw InvalidArgument("external-table models are supplied, not trained");
  }
  return {model, Accuracy(*model, data)};
}

}  // namespace xplain
