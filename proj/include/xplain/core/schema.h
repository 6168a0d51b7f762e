#ifndef XPLAIN_CORE_SCHEMA_H_
#define XPLAIN_CORE_SCHEMA_H_

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace xplain {

// Feature values aligned with the schema order. Categorical values are stored
// as the category index.
using Instance = std::vector<double>;

// A set of feature indices (schema positions).
using FeatureSet = std::set<int>;

enum class FeatureKind { kNumeric, kCategorical };

struct Feature {
  std::string name;
  FeatureKind kind = FeatureKind::kNumeric;
  // Numeric domain.
  double lo = 0.0;
  double hi = 0.0;
  // Categorical domain.
  std::vector<std::string> categories;

  bool numeric() const { return kind == FeatureKind::kNumeric; }
  // hi - lo for numeric features, 1 for categorical ones.
  double Width() const;
  bool InDomain(double value) const;
  std::optional<int> FindCategory(std::string_view name) const;
};

struct Target {
  std::string name;
  std::vector<std::string> classes;
};

// Ordered, typed feature space plus the target. The index of a feature is its
// identity everywhere else in the library.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  // Throws InvalidArgument when names repeat, a numeric domain is inverted or
  // a categorical domain (or the class list) is empty.
  FeatureSchema(std::vector<Feature> features, Target target,
                std::optional<std::string> mask_column = std::nullopt);

  const std::vector<Feature>& features() const { return features_; }
  const Feature& feature(int index) const { return features_.at(index); }
  int num_features() const { return static_cast<int>(features_.size()); }
  const Target& target() const { return target_; }
  int num_classes() const { return static_cast<int>(target_.classes.size()); }
  const std::optional<std::string>& mask_column() const { return mask_column_; }

  std::optional<int> FindFeature(std::string_view name) const;
  // Throws InvalidArgument.
  int FeatureIndex(std::string_view name) const;
  // Accepts a class name or a decimal class index. Throws InvalidArgument.
  int ClassIndex(std::string_view name) const;
  const std::string& ClassName(int index) const;

  // Throws InvalidArgument("schema mismatch ...") unless `x` has one finite,
  // in-domain value per feature.
  void CheckInstance(const Instance& x) const;

  // Parses a cell into the internal value of feature `index`.
  double ParseValue(int index, std::string_view text) const;
  std::string FormatValue(int index, double value) const;

  nlohmann::json ToJson() const;
  static FeatureSchema FromJson(const nlohmann::json& j);

  friend bool operator==(const FeatureSchema& a, const FeatureSchema& b);

 private:
  std::vector<Feature> features_;
  Target target_;
  std::optional<std::string> mask_column_;
};

// {"name": value, ...} with categories written by name.
nlohmann::json InstanceToJson(const FeatureSchema& schema, const Instance& x);
// Accepts the object form above, or an array in schema order. Categorical
// entries may be names or indices. The result is checked against the schema.
Instance InstanceFromJson(const FeatureSchema& schema, const nlohmann::json& j);

// Feature-name lists <-> index sets.
nlohmann::json FeatureSetToJson(const FeatureSchema& schema,
                                const FeatureSet& set);
FeatureSet FeatureSetFromJson(const FeatureSchema& schema,
                              const nlohmann::json& j);

}  // namespace xplain

#endif  // XPLAIN_CORE_SCHEMA_H_
