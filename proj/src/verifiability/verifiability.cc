#include "xplain/verifiability/verifiability.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "xplain/core/error.h"

namespace xplain::verifiability {

using nlohmann::json;

PlausibilityScore Plausibility(std::span<const double> e, const FeatureSet& mask) {
  if (mask.empty()) throw InvalidArgument("mask empty");
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (!std::isfinite(e[i])) throw InvalidArgument("attribution is not finite");
    total += std::abs(e[i]);
  }
  for (int f : mask) {
    if (f < 0 || f >= static_cast<int>(e.size())) {
      throw InvalidArgument("mask index out of range");
    }
    inside += std::abs(e[f]);
  }
  if (total == 0.0) return {0.0, true};
  return {inside / total, false};
}

double Quality(const Model& model, const Instance& x, int truth) {
  const std::vector<double> proba = model.PredictProba(x);
  if (truth < 0 || truth >= static_cast<int>(proba.size())) {
    throw InvalidArgument("ground-truth class out of range");
  }
  return proba[truth];
}

std::vector<double> AverageRanks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double Spearman(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidArgument("vectors differ in length");
  if (p.size() < 3) throw InvalidArgument("need at least 3 pairs");
  const std::vector<double> rp = AverageRanks(p);
  const std::vector<double> rq = AverageRanks(q);
  const double n = static_cast<double>(p.size());
  const double mean = (n + 1.0) / 2.0;  // mean rank, ties included
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = rp[i] - mean;
    const double b = rq[i] - mean;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) throw InvalidArgument("constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

NamedExplainer Wrap(std::string name, attribution::Explainer explainer) {
  explainer.Validate();
  return {std::move(name), [explainer](const ExplainContext& c) {
            return attribution::Explain(explainer, c.model, c.x, c.target, c.seed)
                .values;
          }};
}

namespace {

// Per-call seed, distinct for every (model, explainer, row).
std::uint64_t MixSeed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                      std::uint64_t c) {
  std::uint64_t z = seed;
  for (std::uint64_t v : {a, b, c}) {
    z += 0x9e3779b97f4a7c15ull + v;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
  }
  return z;
}

}  // namespace

VerifiabilityReport VerifiabilityStudy(const std::vector<ModelPtr>& models,
                                       const LabeledDataset& data,
                                       const std::vector<NamedExplainer>& explainers,
                                       const StudyOptions& options) {
  if (models.empty()) throw InvalidArgument("no models given");
  if (explainers.empty()) throw InvalidArgument("no explainers given");
  if (data.size() < 3) throw InvalidArgument("need at least 3 instances");
  if (!data.masks || data.masks->size() != data.size()) {
    throw FailedPrecondition("every instance needs a relevance mask");
  }
  for (const ModelPtr& m : models) {
    if (!(m->schema() == data.schema)) {
      throw InvalidArgument("model schema does not match the data");
    }
  }
  VerifiabilityReport report;
  report.n_instances = static_cast<int>(data.size());
  report.n_models = static_cast<int>(models.size());
  report.seed = options.seed;
  for (std::size_t e = 0; e < explainers.size(); ++e) {
    ExplainerResult result;
    result.name = explainers[e].name;
    std::vector<double> vs;
    for (std::size_t m = 0; m < models.size(); ++m) {
      const Model& model = *models[m];
      PairResult pair;
      for (std::size_t r = 0; r < data.size(); ++r) {
        const Instance& x = data.instances[r];
        const int truth = data.labels[r];
        const ExplainContext ctx{model,
                                 x,
                                 model.Predict(x),
                                 truth,
                                 (*data.masks)[r],
                                 static_cast<int>(r),
                                 MixSeed(options.seed, e, m, r)};
        const std::vector<double> attribution = explainers[e].fn(ctx);
        if (attribution.size() != x.size()) {
          throw InvalidArgument("explainer '" + result.name +
                                "' returned the wrong number of values");
        }
        const PlausibilityScore p = Plausibility(attribution, (*data.masks)[r]);
        pair.degenerate_p += p.degenerate ? 1 : 0;
        pair.p.push_back(p.value);
        pair.q.push_back(Quality(model, x, truth));
      }
      try {
        pair.v = Spearman(pair.p, pair.q);
        vs.push_back(*pair.v);
      } catch (const Error&) {
        report.warnings.push_back("explainer '" + result.name + "' on model " +
                                  std::to_string(m) +
                                  ": constant p or q, V undefined");
      }
      result.per_model.push_back(std::move(pair));
    }
    result.defined = static_cast<int>(vs.size());
    if (!vs.empty()) {
      const double mean = std::accumulate(vs.begin(), vs.end(), 0.0) / vs.size();
      result.mean_v = mean;
      if (vs.size() >= 2) {
        double ss = 0.0;
        for (double v : vs) ss += (v - mean) * (v - mean);
        result.sd_v = std::sqrt(ss / (vs.size() - 1));
      }
    }
    report.explainers.push_back(std::move(result));
  }
  std::stable_sort(report.explainers.begin(), report.explainers.end(),
                   [](const ExplainerResult& a, const ExplainerResult& b) {
                     if (a.mean_v.has_value() != b.mean_v.has_value()) {
                       return a.mean_v.has_value();
                     }
                     return a.mean_v && *a.mean_v > *b.mean_v;
                   });
  for (std::size_t i = 0; i < report.explainers.size(); ++i) {
    report.explainers[i].rank = static_cast<int>(i) + 1;
  }
  return report;
}

namespace {

json Optional(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json ToJson(const VerifiabilityReport& report) {
  json explainers = json::array();
  for (const ExplainerResult& r : report.explainers) {
    json per_model = json::array();
    for (const PairResult& p : r.per_model) {
      per_model.push_back({{"v", Optional(p.v)},
                           {"p", p.p},
                           {"q", p.q},
                           {"degenerate_p", p.degenerate_p}});
    }
    explainers.push_back({{"name", r.name},
                          {"rank", r.rank},
                          {"mean_v", Optional(r.mean_v)},
                          {"sd_v", Optional(r.sd_v)},
                          {"defined", r.defined},
                          {"per_model", per_model}});
  }
  return {{"explainers", explainers},
          {"n_instances", report.n_instances},
          {"n_models", report.n_models},
          {"seed", report.seed},
          {"warnings", report.warnings}};
}

void WriteCsv(std::ostream& out, const VerifiabilityReport& report) {
  out << "explainer,mean_v,sd_v\n";
  out.precision(6);
  for (const ExplainerResult& r : report.explainers) {
    out << CsvEscape(r.name) << ",";
    if (r.mean_v) out << *r.mean_v;
    out << ",";
    if (r.sd_v) out << *r.sd_v;
    out << "\n";
  }
}

// ---------------------------------------------------------------------------

GroupSummary GroupSummary::FromData(std::span<const double> values) {
  GroupSummary s;
  s.n = static_cast<int>(values.size());
  if (s.n == 0) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.n;
  if (s.n >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / (s.n - 1));
  }
  return s;
}

AgreementTestResult WelchUpperT(const GroupSummary& a, const GroupSummary& b,
                                bool pooled) {
  if (a.n < 2 || b.n < 2) throw InvalidArgument("each group needs n >= 2");
  if (!(a.sd >= 0.0) || !(b.sd >= 0.0)) throw InvalidArgument("SD must be >= 0");
  if (a.sd == 0.0 && b.sd == 0.0) {
    throw InvalidArgument("zero variance in both groups");
  }
  AgreementTestResult r;
  r.a = a;
  r.b = b;
  r.pooled = pooled;
  const double va = a.sd * a.sd, vb = b.sd * b.sd;
  double se;
  if (pooled) {
    const double sp2 = ((a.n - 1) * va + (b.n - 1) * vb) / (a.n + b.n - 2);
    se = std::sqrt(sp2 * (1.0 / a.n + 1.0 / b.n));
    r.df = a.n + b.n - 2;
  } else {
    const double ea = va / a.n, eb = vb / b.n;
    se = std::sqrt(ea + eb);
    r.df = (ea + eb) * (ea + eb) /
           (ea * ea / (a.n - 1) + eb * eb / (b.n - 1));
  }
  r.t = (a.mean - b.mean) / se;
  const boost::math::students_t dist(r.df);
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

AgreementTestResult WelchUpperT(std::span<const double> a, std::span<const double> b,
                                bool pooled) {
  return WelchUpperT(GroupSummary::FromData(a), GroupSummary::FromData(b), pooled);
}

namespace {

RatingHistogram Histogram(const std::vector<double>& ratings, double lo, double hi) {
  const int bins = std::max(1, static_cast<int>(std::ceil(hi - lo)) + 1);
  RatingHistogram h;
  h.counts.assign(bins, 0);
  for (double r : ratings) {
    const int bin = std::min(bins - 1, static_cast<int>(std::floor(r - lo)));
    ++h.counts[bin];
  }
  for (int c : h.counts) h.relative.push_back(static_cast<double>(c) / ratings.size());
  return h;
}

}  // namespace

AgreementAnalysis AnalyzeAgreement(
    const std::vector<std::pair<double, bool>>& decisions, double lo, double hi,
    bool pooled) {
  if (!(lo < hi)) throw InvalidArgument("rating scale needs lo < hi");
  std::vector<double> agree, disagree;
  for (const auto& [rating, agreed] : decisions) {
    if (!(rating >= lo && rating <= hi)) {
      throw InvalidArgument("rating outside the scale");
    }
    (agreed ? agree : disagree).push_back(rating);
  }
  if (agree.empty() || disagree.empty()) throw InvalidArgument("a group empty");
  AgreementAnalysis out;
  out.test = WelchUpperT(agree, disagree, pooled);
  out.agree = Histogram(agree, lo, hi);
  out.disagree = Histogram(disagree, lo, hi);
  return out;
}

json ToJson(const AgreementTestResult& r) {
  auto group = [](const GroupSummary& g) {
    return json{{"n", g.n}, {"mean", g.mean}, {"sd", g.sd}};
  };
  return {{"a", group(r.a)},
          {"b", group(r.b)},
          {"t", r.t},
          {"df", r.df},
          {"p_value", r.p_value},
          {"test", r.pooled ? "student-pooled" : "welch"}};
}

json ToJson(const AgreementAnalysis& a) {
  return {{"test", ToJson(a.test)},
          {"agree", {{"counts", a.agree.counts}, {"relative", a.agree.relative}}},
          {"disagree",
           {{"counts", a.disagree.counts}, {"relative", a.disagree.relative}}}};
}

}  // namespace xplain::verifiability
