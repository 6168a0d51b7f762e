#include "xplain/core/schema.h"

#include <charconv>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "xplain/core/error.h"

namespace xplain {

using nlohmann::json;

double Feature::Width() const { return numeric() ? hi - lo : 1.0; }

bool Feature::InDomain(double value) const {
  if (!std::isfinite(value)) return false;
  if (numeric()) return value >= lo && value <= hi;
  return value >= 0 && value < static_cast<double>(categories.size()) &&
         value == std::floor(value);
}

std::optional<int> Feature::FindCategory(std::string_view name) const {
  for (int i = 0; i < static_cast<int>(categories.size()); ++i) {
    if (categories[i] == name) return i;
  }
  return std::nullopt;
}

FeatureSchema::FeatureSchema(std::vector<Feature> features, Target target,
                             std::optional<std::string> mask_column)
    : features_(std::move(features)),
      target_(std::move(target)),
      mask_column_(std::move(mask_column)) {
  std::unordered_set<std::string> names;
  for (const Feature& f : features_) {
    if (f.name.empty()) throw InvalidArgument("feature with empty name");
    if (!names.insert(f.name).second) {
      throw InvalidArgument("duplicate feature name '" + f.name + "'");
    }
    if (f.numeric()) {
      if (!std::isfinite(f.lo) || !std::isfinite(f.hi) || f.lo > f.hi) {
        throw InvalidArgument("invalid numeric domain for '" + f.name + "'");
      }
    } else if (f.categories.empty()) {
      throw InvalidArgument("empty categorical domain for '" + f.name + "'");
    }
  }
  if (target_.classes.empty()) throw InvalidArgument("empty class list");
  if (names.count(target_.name) > 0) {
    throw InvalidArgument("target name collides with a feature");
  }
}

std::optional<int> FeatureSchema::FindFeature(std::string_view name) const {
  for (int i = 0; i < num_features(); ++i) {
    if (features_[i].name == name) return i;
  }
  return std::nullopt;
}

int FeatureSchema::FeatureIndex(std::string_view name) const {
  if (auto i = FindFeature(name)) return *i;
  throw InvalidArgument("unknown feature '" + std::string(name) + "'");
}

int FeatureSchema::ClassIndex(std::string_view name) const {
  for (int i = 0; i < num_classes(); ++i) {
    if (target_.classes[i] == name) return i;
  }
  int index = -1;
  auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), index);
  if (ec == std::errc() && ptr == name.data() + name.size() && index >= 0 &&
      index < num_classes()) {
    return index;
  }
  throw InvalidArgument("unknown class '" + std::string(name) + "'");
}

const std::string& FeatureSchema::ClassName(int index) const {
  return target_.classes.at(index);
}

void FeatureSchema::CheckInstance(const Instance& x) const {
  if (static_cast<int>(x.size()) != num_features()) {
    throw InvalidArgument("schema mismatch: expected " +
                          std::to_string(num_features()) + " values, got " +
                          std::to_string(x.size()));
  }
  for (int i = 0; i < num_features(); ++i) {
    if (!features_[i].InDomain(x[i])) {
      throw InvalidArgument("schema mismatch: value of '" + features_[i].name +
                            "' out of domain");
    }
  }
}

double FeatureSchema::ParseValue(int index, std::string_view text) const {
  const Feature& f = feature(index);
  if (!f.numeric()) {
    if (auto c = f.FindCategory(text)) return *c;
    throw InvalidArgument("unknown category '" + std::string(text) +
                          "' for feature '" + f.name + "'");
  }
  std::string s(text);
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) {
    ++used;
  }
  if (s.empty() || used != s.size() || !std::isfinite(v)) {
    throw InvalidArgument("non-numeric value '" + s + "' for feature '" +
                          f.name + "'");
  }
  return v;
}

std::string FeatureSchema::FormatValue(int index, double value) const {
  const Feature& f = feature(index);
  if (!f.numeric()) return f.categories.at(static_cast<std::size_t>(value));
  std::ostringstream out;
  out.precision(17);
  out << value;
  return out.str();
}

json FeatureSchema::ToJson() const {
  json features = json::array();
  for (const Feature& f : features_) {
    json domain = f.numeric() ? json::array({f.lo, f.hi}) : json(f.categories);
    features.push_back({{"name", f.name},
                        {"kind", f.numeric() ? "numeric" : "categorical"},
                        {"domain", domain}});
  }
  json j = {{"features", features},
            {"target", {{"name", target_.name}, {"classes", target_.classes}}}};
  if (mask_column_) j["mask_column"] = *mask_column_;
  return j;
}

FeatureSchema FeatureSchema::FromJson(const json& j) {
  try {
    std::vector<Feature> features;
    for (const json& fj : j.at("features")) {
      Feature f;
      f.name = fj.at("name").get<std::string>();
      const std::string kind = fj.at("kind").get<std::string>();
      const json& domain = fj.at("domain");
      if (kind == "numeric") {
        if (!domain.is_array() || domain.size() != 2) {
          throw InvalidArgument("numeric domain of '" + f.name +
                                "' must be [lo, hi]");
        }
        f.lo = domain[0].get<double>();
        f.hi = domain[1].get<double>();
      } else if (kind == "categorical") {
        f.kind = FeatureKind::kCategorical;
        f.categories = domain.get<std::vector<std::string>>();
      } else {
        throw InvalidArgument("unknown feature kind '" + kind + "'");
      }
      features.push_back(std::move(f));
    }
    Target target;
    target.name = j.at("target").at("name").get<std::string>();
    for (const json& c : j.at("target").at("classes")) {
      target.classes.push_back(c.is_string() ? c.get<std::string>() : c.dump());
    }
    std::optional<std::string> mask;
    if (j.contains("mask_column") && !j["mask_column"].is_null()) {
      mask = j["mask_column"].get<std::string>();
    }
    return FeatureSchema(std::move(features), std::move(target), mask);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed schema: ") + e.what());
  }
}

bool operator==(const FeatureSchema& a, const FeatureSchema& b) {
  return a.ToJson() == b.ToJson();
}

json InstanceToJson(const FeatureSchema& schema, const Instance& x) {
  schema.CheckInstance(x);
  json j = json::object();
  for (int i = 0; i < schema.num_features(); ++i) {
    const Feature& f = schema.feature(i);
    if (f.numeric()) {
      j[f.name] = x[i];
    } else {
      j[f.name] = f.categories[static_cast<std::size_t>(x[i])];
    }
  }
  return j;
}

namespace {

double ValueFromJson(const Feature& f, const json& v) {
  if (f.numeric()) {
    if (!v.is_number()) {
      throw InvalidArgument("feature '" + f.name + "' expects a number");
    }
    return v.get<double>();
  }
  if (v.is_string()) {
    if (auto c = f.FindCategory(v.get<std::string>())) return *c;
    throw InvalidArgument("unknown category '" + v.get<std::string>() +
                          "' for feature '" + f.name + "'");
  }
  if (v.is_number_integer()) return v.get<double>();
  throw InvalidArgument("feature '" + f.name + "' expects a category");
}

}  // namespace

Instance InstanceFromJson(const FeatureSchema& schema, const json& j) {
  Instance x(schema.num_features());
  if (j.is_array()) {
    if (static_cast<int>(j.size()) != schema.num_features()) {
      throw InvalidArgument("schema mismatch: instance array has " +
                            std::to_string(j.size()) + " values");
    }
    for (int i = 0; i < schema.num_features(); ++i) {
      x[i] = ValueFromJson(schema.feature(i), j[i]);
    }
  } else if (j.is_object()) {
    for (const auto& [name, value] : j.items()) {
      if (!schema.FindFeature(name)) {
        throw InvalidArgument("unknown feature '" + name + "'");
      }
    }
    for (int i = 0; i < schema.num_features(); ++i) {
      const Feature& f = schema.feature(i);
      if (!j.contains(f.name)) {
        throw InvalidArgument("missing feature '" + f.name + "'");
      }
      x[i] = ValueFromJson(f, j[f.name]);
    }
  } else {
    throw InvalidArgument("instance must be an object or an array");
  }
  schema.CheckInstance(x);
  return x;
}

json FeatureSetToJson(const FeatureSchema& schema, const FeatureSet& set) {
  json j = json::array();
  for (int i : set) j.push_back(schema.feature(i).name);
  return j;
}

FeatureSet FeatureSetFromJson(const FeatureSchema& schema, const json& j) {
  if (!j.is_array()) throw InvalidArgument("feature list must be an array");
  FeatureSet set;
  for (const json& e : j) {
    if (e.is_string()) {
      set.insert(schema.FeatureIndex(e.get<std::string>()));
    } else if (e.is_number_integer() && e.get<int>() >= 0 &&
               e.get<int>() < schema.num_features()) {
      set.insert(e.get<int>());
    } else {
      throw InvalidArgument("invalid feature reference " + e.dump());
    }
  }
  return set;
}

}  // namespace xplain
