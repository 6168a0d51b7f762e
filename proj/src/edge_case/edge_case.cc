#include "xplain/edge_case/edge_case.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

#include "xplain/core/decision_tree.h"
#include "xplain/core/error.h"
#include "xplain/core/random.h"

namespace xplain::edge_case {

using nlohmann::json;

void EdgeCriterion::Validate(const FeatureSchema& schema) const {
  if (!std::isfinite(risk_threshold)) {
    throw InvalidArgument("risk threshold must be finite");
  }
  metric.Validate(schema);
  for (const FeaturePredicate& p : predicates) {
    if (p.feature < 0 || p.feature >= schema.num_features()) {
      throw InvalidArgument("predicate feature out of range");
    }
  }
  if (locality) {
    if (!(locality->max_distance > 0.0 && locality->max_distance <= 1.0)) {
      throw InvalidArgument("max_distance must be in (0, 1]");
    }
    schema.CheckInstance(locality->query);
  }
}

json EdgeCriterion::ToJson(const FeatureSchema& schema) const {
  json preds = json::array();
  for (const FeaturePredicate& p : predicates) preds.push_back(p.ToJson(schema));
  json j = {{"risk_threshold", risk_threshold},
            {"require_misprediction", require_misprediction},
            {"predicates", preds},
            {"distance", ToString(metric.kind)}};
  if (locality) {
    j["locality"] = {{"query", InstanceToJson(schema, locality->query)},
                     {"max_distance", locality->max_distance},
                     {"require_prediction_flip",
                      locality->require_prediction_flip}};
  }
  return j;
}

EdgeCriterion EdgeCriterion::FromJson(const FeatureSchema& schema,
                                      const json& j) {
  try {
    EdgeCriterion c;
    c.risk_threshold = j.at("risk_threshold").get<double>();
    c.require_misprediction = j.value("require_misprediction", true);
    if (j.contains("predicates")) {
      for (const json& p : j["predicates"]) {
        c.predicates.push_back(FeaturePredicate::FromJson(schema, p));
      }
    }
    if (j.contains("distance")) {
      c.metric.kind = DistanceKindFromString(j["distance"].get<std::string>());
    }
    if (j.contains("locality") && !j["locality"].is_null()) {
      const json& l = j["locality"];
      Locality loc;
      loc.query = InstanceFromJson(schema, l.at("query"));
      loc.max_distance = l.value("max_distance", 1.0);
      loc.require_prediction_flip = l.value("require_prediction_flip", false);
      c.locality = std::move(loc);
    }
    c.Validate(schema);
    return c;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed criterion: ") + e.what());
  }
}

bool SatisfiesCriterion(const Model& model, const RiskFunction& risk,
                        const EdgeCriterion& criterion, const Instance& x,
                        int truth, int query_prediction) {
  if (!(risk(x, truth) > criterion.risk_threshold)) return false;
  const int predicted = model.Predict(x);
  if (criterion.require_misprediction && predicted == truth) return false;
  for (const FeaturePredicate& p : criterion.predicates) {
    if (!p.Holds(x)) return false;
  }
  if (criterion.locality) {
    const Locality& loc = *criterion.locality;
    if (criterion.metric(model.schema(), loc.query, x) > loc.max_distance) {
      return false;
    }
    if (loc.require_prediction_flip && predicted == query_prediction) {
      return false;
    }
  }
  return true;
}

namespace {

// Orders cases by descending risk, ascending distance, then row index (or the
// instance values for synthetic cases).
void SortCases(std::vector<EdgeCase>& cases) {
  std::stable_sort(cases.begin(), cases.end(),
                   [](const EdgeCase& a, const EdgeCase& b) {
                     if (a.risk != b.risk) return a.risk > b.risk;
                     const double da = a.distance_to_query.value_or(0.0);
                     const double db = b.distance_to_query.value_or(0.0);
                     if (da != db) return da < db;
                     if (a.row && b.row) return *a.row < *b.row;
                     return a.instance < b.instance;
                   });
}

// Best information gain of a single split of `feature` separating positives
// from negatives.
double BestStumpGain(const Feature& feature,
                     const std::vector<std::pair<double, int>>& raw) {
  std::vector<std::pair<double, int>> rows = raw;  // (value, is_edge)
  const int n = static_cast<int>(rows.size());
  std::vector<int> total(2, 0);
  for (const auto& [v, y] : rows) ++total[y];
  const double parent = Entropy(total);
  double best = 0.0;
  auto gain = [&](const std::vector<int>& left) {
    const int nl = left[0] + left[1];
    const std::vector<int> right = {total[0] - left[0], total[1] - left[1]};
    const int nr = n - nl;
    return parent - (static_cast<double>(nl) / n) * Entropy(left) -
           (static_cast<double>(nr) / n) * Entropy(right);
  };
  if (feature.numeric()) {
    std::stable_sort(rows.begin(), rows.end());
    std::vector<int> left(2, 0);
    for (int i = 1; i < n; ++i) {
      ++left[rows[i - 1].second];
      if (rows[i - 1].first < rows[i].first) best = std::max(best, gain(left));
    }
  } else {
    for (std::size_t c = 0; c < feature.categories.size(); ++c) {
      std::vector<int> left(2, 0);
      for (const auto& [v, y] : rows) {
        if (static_cast<std::size_t>(v) == c) ++left[y];
      }
      if (left[0] + left[1] == 0 || left[0] + left[1] == n) continue;
      best = std::max(best, gain(left));
    }
  }
  return best;
}

}  // namespace

EdgeSummary SummarizeEdgeCases(std::span<const EdgeCase> cases, int bins,
                               const FeatureSchema& schema,
                               std::span<const Instance> contrast, int top_k) {
  if (bins < 1) throw InvalidArgument("bins must be >= 1");
  EdgeSummary s;
  const int k = schema.num_classes();
  s.count = static_cast<int>(cases.size());
  s.confusion.assign(k, std::vector<int>(k, 0));
  for (const EdgeCase& c : cases) ++s.confusion.at(c.truth).at(c.predicted);
  if (cases.empty()) return s;

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const EdgeCase& c : cases) {
    lo = std::min(lo, c.risk);
    hi = std::max(hi, c.risk);
  }
  s.histogram.edges.resize(bins + 1);
  for (int b = 0; b <= bins; ++b) {
    s.histogram.edges[b] = b == bins ? hi : lo + (hi - lo) * b / bins;
  }
  s.histogram.counts.assign(bins, 0);
  for (const EdgeCase& c : cases) {
    int b = hi > lo ? static_cast<int>(std::floor((c.risk - lo) / (hi - lo) * bins))
                    : 0;
    ++s.histogram.counts[std::clamp(b, 0, bins - 1)];
  }

  if (!contrast.empty()) {
    for (int f = 0; f < schema.num_features(); ++f) {
      std::vector<std::pair<double, int>> rows;
      for (const EdgeCase& c : cases) rows.emplace_back(c.instance[f], 1);
      for (const Instance& x : contrast) rows.emplace_back(x[f], 0);
      const double g = BestStumpGain(schema.feature(f), rows);
      if (g > 1e-12) s.top_features.push_back({f, g});
    }
    std::stable_sort(s.top_features.begin(), s.top_features.end(),
                     [](const FeatureStump& a, const FeatureStump& b) {
                       return a.gain > b.gain;
                     });
    if (static_cast<int>(s.top_features.size()) > top_k) {
      s.top_features.resize(std::max(top_k, 0));
    }
  }
  return s;
}

namespace {

int QueryPrediction(const Model& model, const EdgeCriterion& criterion) {
  return criterion.locality ? model.Predict(criterion.locality->query) : -1;
}

EdgeCase MakeCase(const Model& model, const RiskFunction& risk,
                  const EdgeCriterion& criterion, const Instance& x,
                  int truth) {
  EdgeCase c;
  c.instance = x;
  c.truth = truth;
  c.predicted = model.Predict(x);
  c.risk = risk(x, truth);
  if (criterion.locality) {
    c.distance_to_query =
        criterion.metric(model.schema(), criterion.locality->query, x);
  }
  return c;
}

std::vector<Instance> CorrectlyPredictedRows(const Model& model,
                                             const LabeledDataset& data,
                                             const std::set<std::size_t>& skip) {
  std::vector<Instance> out;
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (skip.count(r)) continue;
    if (model.Predict(data.instances[r]) == data.labels[r]) {
      out.push_back(data.instances[r]);
    }
  }
  return out;
}

}  // namespace

EdgeCaseSet MineEdgeCases(const Model& model, const LabeledDataset& data,
                          const RiskFunction& risk,
                          const EdgeCriterion& criterion,
                          const SummaryOptions& summary) {
  if (data.empty()) throw InvalidArgument("dataset is empty");
  criterion.Validate(data.schema);
  const int query_prediction = QueryPrediction(model, criterion);
  EdgeCaseSet set;
  std::set<std::size_t> rows;
  for (std::size_t r = 0; r < data.size(); ++r) {
    const Instance& x = data.instances[r];
    if (!SatisfiesCriterion(model, risk, criterion, x, data.labels[r],
                            query_prediction)) {
      continue;
    }
    EdgeCase c = MakeCase(model, risk, criterion, x, data.labels[r]);
    c.row = r;
    set.cases.push_back(std::move(c));
    rows.insert(r);
  }
  SortCases(set.cases);
  set.summary =
      SummarizeEdgeCases(set.cases, summary.bins, data.schema,
                         CorrectlyPredictedRows(model, data, rows), summary.top_k);
  return set;
}

EdgeCaseSet ConstructEdgeCases(const Model& model, const LabeledDataset& data,
                               const RiskFunction& risk,
                               const EdgeCriterion& criterion,
                               const ConstructOptions& options) {
  if (options.budget < 1) throw InvalidArgument("budget >= 1");
  const FeatureSchema& schema = model.schema();
  criterion.Validate(schema);
  const bool nearest = !options.labels.oracle &&
                       options.labels.allow_nearest_neighbor && !data.empty();
  if (!options.labels.oracle && !nearest) {
    throw FailedPrecondition("no labeling source available");
  }
  if (!criterion.locality && data.empty()) {
    throw InvalidArgument("construction needs dataset rows or a query");
  }
  const int m = schema.num_features();
  const int query_prediction = QueryPrediction(model, criterion);

  Rng rng(options.seed);
  std::set<Instance> seen;
  EdgeCaseSet set;
  for (int draw = 0; draw < options.budget; ++draw) {
    const Instance& base =
        criterion.locality ? criterion.locality->query
                           : data.instances[UniformIndex(rng, data.size())];
    Instance x = base;
    std::vector<int> features(m);
    for (int i = 0; i < m; ++i) features[i] = i;
    Shuffle(features, rng);
    const int changed = 1 + static_cast<int>(UniformIndex(rng, m));
    for (int j = 0; j < changed; ++j) {
      const Feature& f = schema.feature(features[j]);
      double& v = x[features[j]];
      if (!f.numeric()) {
        v = static_cast<double>(UniformIndex(rng, f.categories.size()));
      } else if (criterion.locality) {
        // Keep the Gower contribution of the changed features within budget.
        const double reach = criterion.locality->max_distance * m / changed *
                             f.Width();
        v = std::clamp(v + UniformReal(rng, -reach, reach), f.lo, f.hi);
      } else {
        v = UniformReal(rng, f.lo, f.hi);
      }
    }
    if (!seen.insert(x).second) continue;

    int truth = 0;
    bool from_neighbor = false;
    if (options.labels.oracle) {
      truth = options.labels.oracle(x);
      if (truth < 0 || truth >= schema.num_classes()) {
        throw InvalidArgument("labeling oracle returned an invalid class");
      }
    } else {
      const DistanceMetric gower;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < data.size(); ++r) {
        const double d = gower(schema, data.instances[r], x);
        if (d < best) {
          best = d;
          truth = data.labels[r];
        }
      }
      from_neighbor = true;
    }
    if (!SatisfiesCriterion(model, risk, criterion, x, truth,
                            query_prediction)) {
      continue;
    }
    EdgeCase c = MakeCase(model, risk, criterion, x, truth);
    c.synthetic = true;
    c.truth_from_neighbor = from_neighbor;
    set.cases.push_back(std::move(c));
  }
  SortCases(set.cases);
  set.summary = SummarizeEdgeCases(set.cases, options.summary.bins, schema,
                                   CorrectlyPredictedRows(model, data, {}),
                                   options.summary.top_k);
  return set;
}

json ToJson(const FeatureSchema& schema, const EdgeCaseSet& set) {
  json cases = json::array();
  for (const EdgeCase& c : set.cases) {
    json jc = {{"instance", InstanceToJson(schema, c.instance)},
               {"predicted", schema.ClassName(c.predicted)},
               {"truth", schema.ClassName(c.truth)},
               {"risk", c.risk},
               {"synthetic", c.synthetic},
               {"truth_from_neighbor", c.truth_from_neighbor}};
    jc["row"] = c.row ? json(*c.row) : json(nullptr);
    jc["distance_to_query"] =
        c.distance_to_query ? json(*c.distance_to_query) : json(nullptr);
    cases.push_back(std::move(jc));
  }
  json top = json::array();
  for (const FeatureStump& s : set.summary.top_features) {
    top.push_back({{"feature", schema.feature(s.feature).name}, {"gain", s.gain}});
  }
  return {{"cases", cases},
          {"summary",
           {{"count", set.summary.count},
            {"confusion", set.summary.confusion},
            {"histogram",
             {{"edges", set.summary.histogram.edges},
              {"counts", set.summary.histogram.counts}}},
            {"top_features", top}}}};
}

EdgeCaseSet EdgeCaseSetFromJson(const FeatureSchema& schema, const json& j) {
  try {
    EdgeCaseSet set;
    for (const json& jc : j.at("cases")) {
      EdgeCase c;
      c.instance = InstanceFromJson(schema, jc.at("instance"));
      c.predicted = schema.ClassIndex(jc.at("predicted").get<std::string>());
      c.truth = schema.ClassIndex(jc.at("truth").get<std::string>());
      c.risk = jc.at("risk").get<double>();
      c.synthetic = jc.value("synthetic", false);
      c.truth_from_neighbor = jc.value("truth_from_neighbor", false);
      if (jc.contains("row") && !jc["row"].is_null()) {
        c.row = jc["row"].get<std::size_t>();
      }
      if (jc.contains("distance_to_query") &&
          !jc["distance_to_query"].is_null()) {
        c.distance_to_query = jc["distance_to_query"].get<double>();
      }
      set.cases.push_back(std::move(c));
    }
    const json& s = j.at("summary");
    set.summary.count = s.at("count").get<int>();
    set.summary.confusion = s.at("confusion").get<std::vector<std::vector<int>>>();
    set.summary.histogram.edges =
        s.at("histogram").at("edges").get<std::vector<double>>();
    set.summary.histogram.counts =
        s.at("histogram").at("counts").get<std::vector<int>>();
    for (const json& t : s.at("top_features")) {
      set.summary.top_features.push_back(
          {schema.FeatureIndex(t.at("feature").get<std::string>()),
           t.at("gain").get<double>()});
    }
    return set;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed edge case set: ") + e.what());
  }
}

void WriteCsv(const FeatureSchema& schema, const EdgeCaseSet& set,
              std::ostream& out) {
  for (const Feature& f : schema.features()) out << CsvEscape(f.name) << ',';
  out << "predicted,truth,risk,distance_to_query,synthetic\n";
  for (const EdgeCase& c : set.cases) {
    for (int f = 0; f < schema.num_features(); ++f) {
      out << CsvEscape(schema.FormatValue(f, c.instance[f])) << ',';
    }
    out << CsvEscape(schema.ClassName(c.predicted)) << ','
        << CsvEscape(schema.ClassName(c.truth)) << ',' << c.risk << ',';
    if (c.distance_to_query) out << *c.distance_to_query;
    out << ',' << (c.synthetic ? "true" : "false") << '\n';
  }
}

}  // namespace xplain::edge_case
