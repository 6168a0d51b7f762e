#ifndef XPLAIN_CORE_MODEL_H_
#define XPLAIN_CORE_MODEL_H_

#include <cstdint>
#include <memory>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "xplain/core/dataset.h"
#include "xplain/core/decision_tree.h"

namespace xplain {

enum class ModelKind { kCartTree, kLogistic, kExternalTable };

ModelKind ModelKindFromString(std::string_view name);
std::string_view ToString(ModelKind kind);

// The predictor f. Immutable once built; safe to share across threads.
class Model {
 public:
  explicit Model(FeatureSchema schema) : schema_(std::move(schema)) {}
  virtual ~Model() = default;

  virtual ModelKind kind() const = 0;
  const FeatureSchema& schema() const { return schema_; }

  // Probability per target class. Throws InvalidArgument on schema mismatch.
  std::vector<double> PredictProba(const Instance& x) const;
  // argmax of PredictProba, lowest class index on ties.
  int Predict(const Instance& x) const;

  // {format_version, kind, schema, parameters}
  nlohmann::json ToJson() const;

 protected:
  virtual std::vector<double> ProbaUnchecked(const Instance& x) const = 0;
  virtual nlohmann::json Parameters() const = 0;

 private:
  FeatureSchema schema_;
};

using ModelPtr = std::shared_ptr<const Model>;

int ArgMax(const std::vector<double>& values);

class CartModel : public Model {
 public:
  CartModel(FeatureSchema schema, DecisionTree tree);

  ModelKind kind() const override { return ModelKind::kCartTree; }
  const DecisionTree& tree() const { return tree_; }

 protected:
  std::vector<double> ProbaUnchecked(const Instance& x) const override;
  nlohmann::json Parameters() const override;

 private:
  DecisionTree tree_;
};

// Multinomial logistic regression over an encoding where numeric features are
// rescaled to [0, 1] by their domain and categorical features are one-hot.
class LogisticModel : public Model {
 public:
  // weights[c] holds the bias first, then one weight per encoded column.
  LogisticModel(FeatureSchema schema, std::vector<std::vector<double>> weights);

  ModelKind kind() const override { return ModelKind::kLogistic; }
  const std::vector<std::vector<double>>& weights() const { return weights_; }

  static int EncodedWidth(const FeatureSchema& schema);
  static std::vector<double> Encode(const FeatureSchema& schema,
                                    const Instance& x);

 protected:
  std::vector<double> ProbaUnchecked(const Instance& x) const override;
  nlohmann::json Parameters() const override;

 private:
  std::vector<std::vector<double>> weights_;
};

// A model given by an explicit input -> probability table. Inputs that are
// not in the table take the row of the nearest entry (Gower, lowest entry
// index on ties), so the model is total and piecewise constant.
class TableModel : public Model {
 public:
  using Entry = std::pair<Instance, std::vector<double>>;
  TableModel(FeatureSchema schema, std::vector<Entry> entries);

  ModelKind kind() const override { return ModelKind::kExternalTable; }
  const std::vector<Entry>& entries() const { return entries_; }

 protected:
  std::vector<double> ProbaUnchecked(const Instance& x) const override;
  nlohmann::json Parameters() const override;

 private:
  std::vector<Entry> entries_;
};

ModelPtr ModelFromJson(const nlohmann::json& j);

struct TreeHyperparams {
  int max_depth = 4;
  int min_leaf = 1;
};

struct LogisticHyperparams {
  double learning_rate = 0.5;
  int epochs = 500;
  double l2 = 0.0;
};

struct TrainOptions {
  ModelKind kind = ModelKind::kCartTree;
  TreeHyperparams tree;
  LogisticHyperparams logistic;
  std::uint64_t seed = 42;
};

struct TrainedModel {
  ModelPtr model;
  double training_accuracy = 0.0;
};

// Deterministic for fixed (data, options). Throws FailedPrecondition
// ("single-class or empty data") and FailedPrecondition on non-finite loss.
TrainedModel TrainModel(const LabeledDataset& data, const TrainOptions& options);

double Accuracy(const Model& model, const LabeledDataset& data);

}  // namespace xplain

#endif  // XPLAIN_CORE_MODEL_H_
