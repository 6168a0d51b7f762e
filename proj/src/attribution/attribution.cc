#include "xplain/attribution/attribution.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xplain/core/error.h"
#include "xplain/core/random.h"

namespace xplain::attribution {

using nlohmann::json;

ExplainerKind ExplainerKindFromString(std::string_view name) {
  if (name == "ablation" || name == "feature-ablation") {
    return ExplainerKind::kAblation;
  }
  if (name == "occlusion") return ExplainerKind::kOcclusion;
  if (name == "shapley" || name == "shapley-sampling") {
    return ExplainerKind::kShapleySampling;
  }
  if (name == "permutation" || name == "feature-permutation") {
    return ExplainerKind::kPermutation;
  }
  throw InvalidArgument("unknown explainer '" + std::string(name) + "'");
}

std::string_view ToString(ExplainerKind kind) {
  switch (kind) {
    case ExplainerKind::kAblation:
      return "feature-ablation";
    case ExplainerKind::kOcclusion:
      return "occlusion";
    case ExplainerKind::kShapleySampling:
      return "shapley-sampling";
    case ExplainerKind::kPermutation:
      return "feature-permutation";
  }
  return "feature-ablation";
}

void Explainer::Validate() const {
  if (group_size < 1) throw InvalidArgument("group_size must be >= 1");
  if (shapley_samples < 1) throw InvalidArgument("shapley_samples must be >= 1");
  if (permutation_repeats < 1) {
    throw InvalidArgument("permutation_repeats must be >= 1");
  }
  if (background_size < 1) throw InvalidArgument("background_size must be >= 1");
}

json Explainer::ToJson(const FeatureSchema& schema) const {
  json j = {{"kind", ToString(kind)},
            {"group_size", group_size},
            {"shapley_samples", shapley_samples},
            {"shapley_exact", shapley_exact},
            {"permutation_repeats", permutation_repeats},
            {"background_size", background_size}};
  if (baseline) j["baseline"] = InstanceToJson(schema, *baseline);
  return j;
}

Explainer Explainer::FromJson(const FeatureSchema& schema, const json& j) {
  Explainer e;
  try {
    if (j.is_string()) {
      e.kind = ExplainerKindFromString(j.get<std::string>());
      return e;
    }
    e.kind = ExplainerKindFromString(j.at("kind").get<std::string>());
    e.group_size = j.value("group_size", e.group_size);
    e.shapley_samples = j.value("shapley_samples", e.shapley_samples);
    e.shapley_exact = j.value("shapley_exact", e.shapley_exact);
    e.permutation_repeats = j.value("permutation_repeats", e.permutation_repeats);
    e.background_size = j.value("background_size", e.background_size);
    if (j.contains("baseline") && !j["baseline"].is_null()) {
      e.baseline = InstanceFromJson(schema, j["baseline"]);
    }
  } catch (const json::exception& ex) {
    throw InvalidArgument(std::string("malformed explainer: ") + ex.what());
  }
  e.Validate();
  return e;
}

Explainer BindBackground(Explainer explainer, const LabeledDataset& data,
                         std::uint64_t seed) {
  if (data.empty()) throw InvalidArgument("background data is empty");
  explainer.Validate();
  const FeatureSchema& schema = data.schema;
  const int m = schema.num_features();
  Instance baseline(m, 0.0);
  for (int f = 0; f < m; ++f) {
    const Feature& feature = schema.feature(f);
    if (feature.numeric()) {
      double sum = 0.0;
      for (const Instance& x : data.instances) sum += x[f];
      baseline[f] = sum / static_cast<double>(data.size());
    } else {
      std::vector<int> counts(feature.categories.size(), 0);
      for (const Instance& x : data.instances) ++counts[static_cast<int>(x[f])];
      baseline[f] = static_cast<double>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
  }
  explainer.baseline = std::move(baseline);

  std::vector<int> rows(data.size());
  std::iota(rows.begin(), rows.end(), 0);
  Rng rng(seed);
  Shuffle(rows, rng);
  rows.resize(std::min<std::size_t>(rows.size(), explainer.background_size));
  std::sort(rows.begin(), rows.end());
  explainer.background.clear();
  for (int r : rows) explainer.background.push_back(data.instances[r]);
  return explainer;
}

namespace {

const Instance& RequireBaseline(const Explainer& e, const FeatureSchema& schema) {
  if (!e.baseline) throw FailedPrecondition("baseline unavailable");
  schema.CheckInstance(*e.baseline);
  return *e.baseline;
}

std::vector<double> Ablation(const Explainer& e, const Model& model,
                             const Instance& x, int target) {
  const Instance& b = RequireBaseline(e, model.schema());
  const double full = model.PredictProba(x)[target];
  std::vector<double> out(x.size());
  for (std::size_t f = 0; f < x.size(); ++f) {
    Instance z = x;
    z[f] = b[f];
    out[f] = full - model.PredictProba(z)[target];
  }
  return out;
}

std::vector<double> Occlusion(const Explainer& e, const Model& model,
                              const Instance& x, int target) {
  const Instance& b = RequireBaseline(e, model.schema());
  const int m = static_cast<int>(x.size());
  const int g = std::min(e.group_size, m);
  const double full = model.PredictProba(x)[target];
  std::vector<double> sum(m, 0.0);
  std::vector<int> windows(m, 0);
  for (int start = 0; start + g <= m; ++start) {
    Instance z = x;
    for (int f = start; f < start + g; ++f) z[f] = b[f];
    const double drop = full - model.PredictProba(z)[target];
    for (int f = start; f < start + g; ++f) {
      sum[f] += drop;
      ++windows[f];
    }
  }
  for (int f = 0; f < m; ++f) sum[f] /= windows[f];
  return sum;
}

// Adds each feature's marginal contribution along `order` to `phi`.
void AccumulateOrder(const Model& model, const Instance& x, const Instance& b,
                     int target, const std::vector<int>& order,
                     std::vector<double>& phi) {
  Instance z = b;
  double prev = model.PredictProba(z)[target];
  for (int f : order) {
    z[f] = x[f];
    const double cur = model.PredictProba(z)[target];
    phi[f] += cur - prev;
    prev = cur;
  }
}

std::vector<double> Shapley(const Explainer& e, const Model& model,
                            const Instance& x, int target, std::uint64_t seed) {
  const Instance& b = RequireBaseline(e, model.schema());
  const int m = static_cast<int>(x.size());
  std::vector<double> phi(m, 0.0);
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  double count = 0.0;
  if (e.shapley_exact) {
    if (m > kMaxExactShapleyFeatures) {
      throw InvalidArgument("exact Shapley enumeration supports at most 8 features");
    }
    do {
      AccumulateOrder(model, x, b, target, order, phi);
      count += 1.0;
    } while (std::next_permutation(order.begin(), order.end()));
  } else {
    Rng rng(seed);
    for (int s = 0; s < e.shapley_samples; ++s) {
      Shuffle(order, rng);
      AccumulateOrder(model, x, b, target, order, phi);
      count += 1.0;
    }
  }
  for (double& v : phi) v /= count;
  return phi;
}

std::vector<double> Permutation(const Explainer& e, const Model& model,
                                const Instance& x, int target,
                                std::uint64_t seed) {
  if (e.background.empty()) throw FailedPrecondition("baseline unavailable");
  const double full = model.PredictProba(x)[target];
  Rng rng(seed);
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t f = 0; f < x.size(); ++f) {
    for (int r = 0; r < e.permutation_repeats; ++r) {
      Instance z = x;
      z[f] = e.background[UniformIndex(rng, e.background.size())][f];
      out[f] += full - model.PredictProba(z)[target];
    }
    out[f] /= e.permutation_repeats;
  }
  return out;
}

}  // namespace

AttributionMap Explain(const Explainer& explainer, const Model& model,
                       const Instance& x, std::optional<int> target,
                       std::uint64_t seed) {
  explainer.Validate();
  const FeatureSchema& schema = model.schema();
  schema.CheckInstance(x);
  AttributionMap map;
  map.instance = x;
  map.target = target ? *target : model.Predict(x);
  if (map.target < 0 || map.target >= schema.num_classes()) {
    throw InvalidArgument("target class out of range");
  }
  map.explainer = std::string(ToString(explainer.kind));
  map.seed = seed;
  switch (explainer.kind) {
    case ExplainerKind::kAblation:
      map.values = Ablation(explainer, model, x, map.target);
      break;
    case ExplainerKind::kOcclusion:
      map.values = Occlusion(explainer, model, x, map.target);
      break;
    case ExplainerKind::kShapleySampling:
      map.values = Shapley(explainer, model, x, map.target, seed);
      break;
    case ExplainerKind::kPermutation:
      map.values = Permutation(explainer, model, x, map.target, seed);
      break;
  }
  return map;
}

json ToJson(const FeatureSchema& schema, const AttributionMap& map) {
  json values = json::array();
  for (int f = 0; f < schema.num_features(); ++f) {
    values.push_back({{"feature", schema.feature(f).name}, {"score", map.values[f]}});
  }
  return {{"explainer", map.explainer},
          {"instance", InstanceToJson(schema, map.instance)},
          {"target", schema.ClassName(map.target)},
          {"seed", map.seed},
          {"values", values}};
}

AttributionMap AttributionMapFromJson(const FeatureSchema& schema, const json& j) {
  try {
    AttributionMap map;
    map.explainer = j.at("explainer").get<std::string>();
    map.instance = InstanceFromJson(schema, j.at("instance"));
    map.target = schema.ClassIndex(j.at("target").get<std::string>());
    map.seed = j.value("seed", std::uint64_t{0});
    map.values.assign(schema.num_features(), 0.0);
    std::vector<bool> seen(schema.num_features(), false);
    for (const json& v : j.at("values")) {
      const int f = schema.FeatureIndex(v.at("feature").get<std::string>());
      map.values[f] = v.at("score").get<double>();
      seen[f] = true;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw InvalidArgument("attribution map misses a feature");
    }
    return map;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed attribution map: ") + e.what());
  }
}

void WriteCsv(std::ostream& out, const FeatureSchema& schema,
              const std::vector<AttributionMap>& maps) {
  out << "explainer,target";
  for (const Feature& f : schema.features()) out << "," << CsvEscape(f.name);
  out << "\n";
  out.precision(17);
  for (const AttributionMap& map : maps) {
    out << CsvEscape(map.explainer) << "," << CsvEscape(schema.ClassName(map.target));
    for (double v : map.values) out << "," << v;
    out << "\n";
  }
}

}  // namespace xplain::attribution
