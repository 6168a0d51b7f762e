#include "xplain/counterfactual/counterfactual.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "xplain/core/error.h"
#include "xplain/core/random.h"

namespace xplain::counterfactual {

using nlohmann::json;

namespace {

constexpr double kChangeTolerance = 1e-9;

using Clock = std::chrono::steady_clock;

double ElapsedMs(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

bool FeatureRange::Contains(const Feature& feature, double value) const {
  if (feature.numeric()) return value >= lo && value <= hi;
  return std::find(categories.begin(), categories.end(),
                   static_cast<int>(value)) != categories.end();
}

bool ValueChanged(const Feature& feature, double before, double after) {
  if (!feature.numeric()) return before != after;
  const double width = feature.Width();
  if (width <= 0.0) return before != after;
  return std::abs(after - before) > kChangeTolerance * width;
}

FeatureSet ChangedFeatures(const FeatureSchema& schema, const Instance& a,
                           const Instance& b) {
  FeatureSet changed;
  for (int i = 0; i < schema.num_features(); ++i) {
    if (ValueChanged(schema.feature(i), a[i], b[i])) changed.insert(i);
  }
  return changed;
}

std::string_view ToString(Clause clause) {
  switch (clause) {
    case Clause::kPrediction:
      return "prediction";
    case Clause::kDistance:
      return "distance";
    case Clause::kUnchangeable:
      return "unchangeable";
    case Clause::kMustChange:
      return "must_change";
    case Clause::kRange:
      return "range";
  }
  return "prediction";
}

void Query::Validate(const FeatureSchema& schema) const {
  schema.CheckInstance(x);
  if (target < 0 || target >= schema.num_classes()) {
    throw InvalidArgument("target class out of range");
  }
  const bool gower = metric.kind == DistanceKind::kGower;
  if (!std::isfinite(epsilon) || !(epsilon > 0.0) || (gower && epsilon > 1.0)) {
    throw InvalidArgument("epsilon must be in (0, 1]");
  }
  metric.Validate(schema);
  for (int f : unchangeable) {
    if (f < 0 || f >= schema.num_features()) {
      throw InvalidArgument("locked feature out of range");
    }
    if (must_change.count(f)) {
      throw InvalidArgument("feature '" + schema.feature(f).name +
                            "' is both locked and forced to change");
    }
  }
  for (int f : must_change) {
    if (f < 0 || f >= schema.num_features()) {
      throw InvalidArgument("forced feature out of range");
    }
  }
  for (const auto& [f, range] : ranges) {
    if (f < 0 || f >= schema.num_features()) {
      throw InvalidArgument("range feature out of range");
    }
    const Feature& feature = schema.feature(f);
    if (feature.numeric()) {
      if (!(range.lo <= range.hi) || range.lo < feature.lo ||
          range.hi > feature.hi) {
        throw InvalidArgument("range of '" + feature.name +
                              "' must satisfy domain lo <= lo <= hi <= domain hi");
      }
    } else {
      if (range.categories.empty()) {
        throw InvalidArgument("empty category range for '" + feature.name + "'");
      }
      for (int c : range.categories) {
        if (c < 0 || c >= static_cast<int>(feature.categories.size())) {
          throw InvalidArgument("unknown category in range of '" +
                                feature.name + "'");
        }
      }
    }
  }
  if (max_results < 0) throw InvalidArgument("max_results must be >= 0");
  if (time_budget_ms && !(*time_budget_ms >= 0.0)) {
    throw InvalidArgument("time_budget_ms must be >= 0");
  }
}

json Query::ToJson(const FeatureSchema& schema) const {
  json jranges = json::object();
  for (const auto& [f, range] : ranges) {
    const Feature& feature = schema.feature(f);
    if (feature.numeric()) {
      jranges[feature.name] = {range.lo, range.hi};
    } else {
      json cats = json::array();
      for (int c : range.categories) cats.push_back(feature.categories[c]);
      jranges[feature.name] = cats;
    }
  }
  json j = {{"instance", InstanceToJson(schema, x)},
            {"target_class", schema.ClassName(target)},
            {"epsilon", epsilon},
            {"lock", FeatureSetToJson(schema, unchangeable)},
            {"force_change", FeatureSetToJson(schema, must_change)},
            {"ranges", jranges},
            {"max_results", max_results}};
  if (time_budget_ms) j["time_budget_ms"] = *time_budget_ms;
  return j;
}

Query Query::FromJson(const FeatureSchema& schema, const json& j) {
  try {
    Query q;
    q.x = InstanceFromJson(schema, j.at("instance"));
    const json& target = j.at("target_class");
    q.target = target.is_string() ? schema.ClassIndex(target.get<std::string>())
                                  : schema.ClassIndex(target.dump());
    q.epsilon = j.value("epsilon", 1.0);
    if (j.contains("lock")) q.unchangeable = FeatureSetFromJson(schema, j["lock"]);
    if (j.contains("force_change")) {
      q.must_change = FeatureSetFromJson(schema, j["force_change"]);
    }
    if (j.contains("ranges")) {
      for (const auto& [name, value] : j["ranges"].items()) {
        const int f = schema.FeatureIndex(name);
        const Feature& feature = schema.feature(f);
        FeatureRange range;
        if (!value.is_array()) throw InvalidArgument("range must be a list");
        if (feature.numeric()) {
          if (value.size() != 2) {
            throw InvalidArgument("numeric range of '" + name + "' needs [lo, hi]");
          }
          range.lo = value[0].get<double>();
          range.hi = value[1].get<double>();
        } else {
          for (const json& c : value) {
            auto cat = c.is_string() ? feature.FindCategory(c.get<std::string>())
                                     : std::optional<int>(c.get<int>());
            if (!cat) throw InvalidArgument("unknown category " + c.dump());
            range.categories.push_back(*cat);
          }
        }
        q.ranges[f] = std::move(range);
      }
    }
    q.max_results = j.value("max_results", 10);
    if (j.contains("time_budget_ms") && !j["time_budget_ms"].is_null()) {
      q.time_budget_ms = j["time_budget_ms"].get<double>();
    }
    if (j.contains("distance")) {
      q.metric.kind = DistanceKindFromString(j["distance"].get<std::string>());
    }
    q.Validate(schema);
    return q;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed counterfactual query: ") +
                          e.what());
  }
}

std::vector<Violation> CheckConstraints(const Model& model, const Query& query,
                                        const Instance& candidate) {
  const FeatureSchema& schema = model.schema();
  std::vector<Violation> violations;
  if (model.Predict(candidate) != query.target) {
    violations.push_back({Clause::kPrediction});
  }
  if (!(query.metric(schema, query.x, candidate) < query.epsilon)) {
    violations.push_back({Clause::kDistance});
  }
  const FeatureSet changed = ChangedFeatures(schema, query.x, candidate);
  for (int f : query.unchangeable) {
    if (changed.count(f)) violations.push_back({Clause::kUnchangeable, f});
  }
  for (int f : query.must_change) {
    if (!changed.count(f)) violations.push_back({Clause::kMustChange, f});
  }
  for (int f : changed) {
    auto it = query.ranges.find(f);
    if (it != query.ranges.end() &&
        !it->second.Contains(schema.feature(f), candidate[f])) {
      violations.push_back({Clause::kRange, f});
    }
  }
  return violations;
}

namespace {

Counterfactual MakeResult(const FeatureSchema& schema, const Query& query,
                          const Instance& candidate) {
  Counterfactual cf;
  cf.instance = candidate;
  for (int f : ChangedFeatures(schema, query.x, candidate)) {
    cf.delta.push_back({f, query.x[f], candidate[f]});
  }
  cf.sparsity = static_cast<int>(cf.delta.size());
  cf.distance = query.metric(schema, query.x, candidate);
  return cf;
}

std::vector<int> DeltaFeatures(const Counterfactual& cf) {
  std::vector<int> out;
  for (const Change& c : cf.delta) out.push_back(c.feature);
  return out;
}

// Sparsity, distance, changed-feature list, then values.
void SortAndTruncate(std::vector<Counterfactual>& results, int max_results) {
  std::sort(results.begin(), results.end(),
            [](const Counterfactual& a, const Counterfactual& b) {
              if (a.sparsity != b.sparsity) return a.sparsity < b.sparsity;
              if (a.distance != b.distance) return a.distance < b.distance;
              const auto da = DeltaFeatures(a);
              const auto db = DeltaFeatures(b);
              if (da != db) return da < db;
              return a.instance < b.instance;
            });
  if (max_results > 0 && static_cast<int>(results.size()) > max_results) {
    results.resize(max_results);
  }
  for (std::size_t i = 0; i < results.size(); ++i) {
    results[i].rank = static_cast<int>(i) + 1;
  }
}

void CheckTargetDiffers(const Model& model, const Query& query) {
  if (model.Predict(query.x) == query.target) {
    throw InvalidArgument("target equals current prediction");
  }
}

FeatureRange EffectiveRange(const Feature& feature, const Query& query, int f) {
  auto it = query.ranges.find(f);
  if (it != query.ranges.end()) return it->second;
  FeatureRange r;
  r.lo = feature.lo;
  r.hi = feature.hi;
  for (int c = 0; c < static_cast<int>(feature.categories.size()); ++c) {
    r.categories.push_back(c);
  }
  return r;
}

std::vector<double> GridPoints(const FeatureRange& range, int steps) {
  std::vector<double> points;
  if (steps == 1 || range.lo == range.hi) {
    points.push_back(range.lo == range.hi ? range.lo : 0.5 * (range.lo + range.hi));
    return points;
  }
  for (int s = 0; s < steps; ++s) {
    points.push_back(s == steps - 1
                         ? range.hi
                         : range.lo + (range.hi - range.lo) * s / (steps - 1));
  }
  return points;
}

// Values the grid engine tries for feature f.
std::vector<double> GridOptions(const FeatureSchema& schema, const Query& query,
                                int f, int steps) {
  const Feature& feature = schema.feature(f);
  if (query.unchangeable.count(f)) return {query.x[f]};
  const FeatureRange range = EffectiveRange(feature, query, f);
  std::vector<double> values;
  if (!query.must_change.count(f)) values.push_back(query.x[f]);
  if (feature.numeric()) {
    for (double v : GridPoints(range, steps)) values.push_back(v);
  } else {
    for (int c : range.categories) values.push_back(c);
  }
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return values;
}

}  // namespace

CounterfactualSet SearchExhaustive(const Model& model, const Query& query,
                                   int grid_steps) {
  const auto start = Clock::now();
  const FeatureSchema& schema = model.schema();
  query.Validate(schema);
  if (grid_steps < 1) throw InvalidArgument("grid_steps must be >= 1");
  CheckTargetDiffers(model, query);
  const int m = schema.num_features();
  const int free = m - static_cast<int>(query.unchangeable.size());
  if (free > kMaxExhaustiveFreeFeatures) {
    throw InvalidArgument(
        "grid too large: more than 8 free features, use the sampling engine");
  }
  std::vector<std::vector<double>> options(m);
  double cells = 1.0;
  for (int f = 0; f < m; ++f) {
    options[f] = GridOptions(schema, query, f, grid_steps);
    cells *= static_cast<double>(options[f].size());
  }
  if (cells > kMaxExhaustiveCells) {
    throw InvalidArgument(
        "grid too large: more than 10^6 cells, use the sampling engine");
  }

  CounterfactualSet set;
  set.query = query;
  std::vector<std::size_t> digit(m, 0);
  Instance candidate(m);
  while (true) {
    for (int f = 0; f < m; ++f) candidate[f] = options[f][digit[f]];
    ++set.stats.candidates_evaluated;
    if (CheckConstraints(model, query, candidate).empty()) {
      set.results.push_back(MakeResult(schema, query, candidate));
    }
    int f = 0;
    while (f < m && ++digit[f] == options[f].size()) digit[f++] = 0;
    if (f == m) break;
  }
  set.stats.budget_exhausted = set.results.empty();
  SortAndTruncate(set.results, query.max_results);
  set.stats.wall_ms = ElapsedMs(start);
  return set;
}

CounterfactualSet SearchSampling(const Model& model, const Query& query,
                                 const SamplingOptions& options) {
  const auto start = Clock::now();
  const FeatureSchema& schema = model.schema();
  query.Validate(schema);
  if (options.budget < 1) throw InvalidArgument("budget must be >= 1");
  if (options.snap_steps < 0) throw InvalidArgument("snap_steps must be >= 0");
  CheckTargetDiffers(model, query);
  const int m = schema.num_features();

  std::vector<FeatureRange> ranges(m);
  std::vector<std::vector<double>> snap(m);
  std::vector<int> optional;  // changeable but not forced
  for (int f = 0; f < m; ++f) {
    ranges[f] = EffectiveRange(schema.feature(f), query, f);
    if (options.snap_steps > 0 && schema.feature(f).numeric()) {
      snap[f] = GridPoints(ranges[f], options.snap_steps);
    }
    if (!query.unchangeable.count(f) && !query.must_change.count(f)) {
      optional.push_back(f);
    }
  }
  const std::vector<int> forced(query.must_change.begin(),
                                query.must_change.end());

  Rng rng(options.seed);
  CounterfactualSet set;
  set.query = query;
  std::set<Instance> seen;
  constexpr int kShells = 10;
  const int per_shell = std::max(1, options.budget / kShells);

  auto out_of_time = [&] {
    return query.time_budget_ms && ElapsedMs(start) >= *query.time_budget_ms;
  };

  // Proposes a new value for feature f within `radius` (fraction of width).
  auto propose = [&](int f, double radius, Instance& c) -> bool {
    const Feature& feature = schema.feature(f);
    const FeatureRange& range = ranges[f];
    if (!feature.numeric()) {
      std::vector<int> choices;
      for (int cat : range.categories) {
        if (cat != static_cast<int>(query.x[f])) choices.push_back(cat);
      }
      if (choices.empty()) return false;
      c[f] = choices[UniformIndex(rng, choices.size())];
      return true;
    }
    const double width = feature.Width();
    double v = std::clamp(query.x[f] + UniformReal(rng, -radius, radius) * width,
                          range.lo, range.hi);
    if (!snap[f].empty()) {
      v = *std::min_element(snap[f].begin(), snap[f].end(),
                            [&](double a, double b) {
                              return std::abs(a - v) < std::abs(b - v);
                            });
    }
    if (!ValueChanged(feature, query.x[f], v)) {
      v = snap[f].empty() ? UniformReal(rng, range.lo, range.hi)
                          : snap[f][UniformIndex(rng, snap[f].size())];
    }
    if (!ValueChanged(feature, query.x[f], v)) return false;
    c[f] = v;
    return true;
  };

  for (int draw = 0; draw < options.budget; ++draw) {
    if (out_of_time()) {
      set.stats.time_budget_hit = true;
      break;
    }
    const double radius =
        std::min(1.0, static_cast<double>(1 + draw / per_shell) / kShells);

    // Number of optional features to touch: 2^-j weighted, at least one
    // feature overall.
    int extra = 0;
    while (extra < static_cast<int>(optional.size()) && Bernoulli(rng, 0.5)) {
      ++extra;
    }
    if (forced.empty() && extra == 0) extra = optional.empty() ? 0 : 1;
    std::vector<int> pool = optional;
    Shuffle(pool, rng);
    pool.resize(std::min<std::size_t>(extra, pool.size()));

    Instance c = query.x;
    bool ok = true;
    for (int f : forced) ok = ok && propose(f, radius, c);
    std::vector<int> touched;
    for (int f : pool) {
      if (propose(f, radius, c)) touched.push_back(f);
    }
    if (!ok || (forced.empty() && touched.empty())) continue;

    ++set.stats.candidates_evaluated;
    if (model.Predict(c) != query.target) continue;

    // Greedy sparsification: revert every optional change that is not needed.
    Shuffle(touched, rng);
    for (int f : touched) {
      const double kept = c[f];
      c[f] = query.x[f];
      ++set.stats.candidates_evaluated;
      if (model.Predict(c) != query.target) c[f] = kept;
    }
    if (!seen.insert(c).second) continue;
    if (CheckConstraints(model, query, c).empty()) {
      set.results.push_back(MakeResult(schema, query, c));
    }
  }
  set.stats.budget_exhausted = set.results.empty();
  SortAndTruncate(set.results, query.max_results);
  set.stats.wall_ms = ElapsedMs(start);
  return set;
}

CounterfactualSet RankResults(CounterfactualSet set, double w_sparsity,
                              double w_distance) {
  if (!(w_sparsity >= 0.0) || !(w_distance >= 0.0) ||
      (w_sparsity == 0.0 && w_distance == 0.0)) {
    throw InvalidArgument("ranking weights must be >= 0 and not both 0");
  }
  const double m = static_cast<double>(set.query.x.size());
  auto score = [&](const Counterfactual& cf) {
    return w_sparsity * (cf.sparsity / m) + w_distance * cf.distance;
  };
  std::stable_sort(set.results.begin(), set.results.end(),
                   [&](const Counterfactual& a, const Counterfactual& b) {
                     return score(a) < score(b);
                   });
  for (std::size_t i = 0; i < set.results.size(); ++i) {
    set.results[i].rank = static_cast<int>(i) + 1;
  }
  return set;
}

json ToJson(const FeatureSchema& schema, const CounterfactualSet& set) {
  json results = json::array();
  for (const Counterfactual& cf : set.results) {
    json delta = json::array();
    for (const Change& c : cf.delta) {
      const Feature& f = schema.feature(c.feature);
      json from = f.numeric() ? json(c.from)
                              : json(f.categories[static_cast<int>(c.from)]);
      json to = f.numeric() ? json(c.to) : json(f.categories[static_cast<int>(c.to)]);
      delta.push_back({{"feature", f.name}, {"from", from}, {"to", to}});
    }
    results.push_back({{"rank", cf.rank},
                       {"instance", InstanceToJson(schema, cf.instance)},
                       {"delta", delta},
                       {"sparsity", cf.sparsity},
                       {"distance", cf.distance}});
  }
  return {{"results", results},
          {"query", set.query.ToJson(schema)},
          {"stats",
           {{"candidates_evaluated", set.stats.candidates_evaluated},
            {"wall_ms", set.stats.wall_ms},
            {"budget_exhausted", set.stats.budget_exhausted},
            {"time_budget_hit", set.stats.time_budget_hit}}}};
}

CounterfactualSet CounterfactualSetFromJson(const FeatureSchema& schema,
                                            const json& j) {
  try {
    CounterfactualSet set;
    set.query = Query::FromJson(schema, j.at("query"));
    for (const json& r : j.at("results")) {
      Counterfactual cf = MakeResult(schema, set.query,
                                     InstanceFromJson(schema, r.at("instance")));
      cf.rank = r.at("rank").get<int>();
      cf.distance = r.at("distance").get<double>();
      set.results.push_back(std::move(cf));
    }
    const json& s = j.at("stats");
    set.stats.candidates_evaluated = s.at("candidates_evaluated").get<long long>();
    set.stats.wall_ms = s.value("wall_ms", 0.0);
    set.stats.budget_exhausted = s.at("budget_exhausted").get<bool>();
    set.stats.time_budget_hit = s.at("time_budget_hit").get<bool>();
    return set;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed counterfactual set: ") +
                          e.what());
  }
}

}  // namespace xplain::counterfactual
