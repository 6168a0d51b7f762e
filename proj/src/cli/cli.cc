#include "xplain/cli/cli.h"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "xplain/attribution/attribution.h"
#include "xplain/core/error.h"
#include "xplain/core/model.h"
#include "xplain/counterfactual/counterfactual.h"
#include "xplain/edge_case/edge_case.h"
#include "xplain/service/service.h"
#include "xplain/synth/synth_bench.h"
#include "xplain/tree/collapsible_tree.h"
#include "xplain/verifiability/verifiability.h"

namespace xplain::cli {

using nlohmann::json;

namespace {

struct Global {
  std::uint64_t seed = 42;
  std::string format = "json";
  bool quiet = false;
  std::string output;
};

// Where results go: --output file or the caller's stream.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : out_(&fallback) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw InvalidArgument("cannot write " + path);
      out_ = file_.get();
    }
  }
  std::ostream& operator*() { return *out_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* out_;
};

json ReadJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument("malformed JSON in " + path + ": " + e.what());
  }
}

// Inline JSON, or "@path" for a file.
json ParseJsonArg(const std::string& text, const char* what) {
  if (!text.empty() && text[0] == '@') return ReadJsonFile(text.substr(1));
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed ") + what + ": " + e.what());
  }
}

ModelPtr LoadModel(const std::string& path) { return ModelFromJson(ReadJsonFile(path)); }

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void CheckFormat(const Global& g, std::initializer_list<const char*> allowed) {
  for (const char* f : allowed) {
    if (g.format == f) return;
  }
  throw InvalidArgument("--format " + g.format + " is not supported by this command");
}

std::string Num(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

// Instance from --instance (JSON) or --row (dataset row).
struct InstanceArgs {
  std::string instance;
  int row = -1;
  std::string data;
  std::string schema;
};

Instance ResolveInstance(const InstanceArgs& a, const FeatureSchema& schema,
                         const std::optional<LabeledDataset>& data) {
  if (!a.instance.empty()) return InstanceFromJson(schema, ParseJsonArg(a.instance, "instance"));
  if (a.row >= 0) {
    if (!data) throw InvalidArgument("--row needs --data and --schema");
    if (a.row >= static_cast<int>(data->size())) {
      throw InvalidArgument("--row " + std::to_string(a.row) + " outside the dataset");
    }
    return data->instances[a.row];
  }
  throw InvalidArgument("give --instance or --row");
}

std::optional<LabeledDataset> MaybeData(const std::string& data, const std::string& schema) {
  if (data.empty() && schema.empty()) return std::nullopt;
  if (data.empty() || schema.empty()) throw InvalidArgument("--data and --schema go together");
  return LoadDatasetFiles(data, schema);
}

// ---------------------------------------------------------------------------

struct GenArgs {
  synth::BenchmarkSpec spec;
  std::string spec_file;
  std::string out_dir = ".";
  std::string stem = "bench";
};

int Gen(const Global& g, GenArgs a, std::ostream& out) {
  CheckFormat(g, {"json", "pretty"});
  if (!a.spec_file.empty()) {
    const std::uint64_t seed = a.spec.seed;
    a.spec = synth::BenchmarkSpec::FromJson(ReadJsonFile(a.spec_file));
    a.spec.seed = seed;
  }
  const synth::Benchmark bench = synth::Generate(a.spec);
  const synth::BenchmarkFiles files = synth::WriteBenchmark(bench, a.out_dir, a.stem);
  const int rare = static_cast<int>(std::count(bench.rare.begin(), bench.rare.end(), true));
  if (g.format == "pretty") {
    out << "wrote " << files.csv.string() << " (" << bench.data.size() << " rows, " << rare
        << " rare)\n";
  } else {
    out << json{{"csv", files.csv.string()},
                {"schema", files.schema.string()},
                {"risk", files.risk.string()},
                {"rows", bench.data.size()},
                {"rare", rare},
                {"spec", a.spec.ToJson()}}
               .dump(2)
        << "\n";
  }
  return kExitOk;
}

struct TrainArgs {
  std::string data, schema, out_model;
  std::string kind = "cart";
  TrainOptions options;
};

int Train(const Global& g, TrainArgs a, std::ostream& out) {
  CheckFormat(g, {"json", "pretty"});
  const LabeledDataset data = LoadDatasetFiles(a.data, a.schema);
  a.options.kind = ModelKindFromString(a.kind);
  a.options.seed = g.seed;
  const TrainedModel trained = TrainModel(data, a.options);
  {
    std::ofstream file(a.out_model);
    if (!file) throw InvalidArgument("cannot write " + a.out_model);
    file << trained.model->ToJson().dump(2) << "\n";
  }
  if (g.format == "pretty") {
    out << ToString(trained.model->kind()) << " model written to " << a.out_model
        << ", training accuracy " << Num(trained.training_accuracy) << "\n";
  } else {
    out << json{{"model", a.out_model},
                {"kind", ToString(trained.model->kind())},
                {"training_accuracy", trained.training_accuracy}}
               .dump(2)
        << "\n";
  }
  return kExitOk;
}

struct PredictArgs {
  std::string model;
  InstanceArgs in;
  bool all_rows = false;
};

int Predict(const Global& g, const PredictArgs& a, std::ostream& out) {
  const ModelPtr model = LoadModel(a.model);
  const FeatureSchema& schema = model->schema();
  const auto data = MaybeData(a.in.data, a.in.schema);
  std::vector<Instance> xs;
  if (a.all_rows) {
    if (!data) throw InvalidArgument("--all-rows needs --data and --schema");
    xs = data->instances;
  } else {
    xs.push_back(ResolveInstance(a.in, schema, data));
  }
  if (g.format == "csv") {
    out << "class";
    for (const std::string& c : schema.target().classes) out << ",p_" << CsvEscape(c);
    out << "\n";
  }
  json rows = json::array();
  for (const Instance& x : xs) {
    const std::vector<double> p = model->PredictProba(x);
    const int c = ArgMax(p);
    if (g.format == "csv") {
      out << CsvEscape(schema.ClassName(c));
      for (double v : p) out << "," << Num(v);
      out << "\n";
    } else if (g.format == "pretty") {
      out << schema.ClassName(c) << " (p=" << Num(p[c]) << ")\n";
    } else {
      rows.push_back({{"class", schema.ClassName(c)}, {"class_index", c}, {"proba", p}});
    }
  }
  if (g.format == "json") out << (a.all_rows ? rows : rows[0]).dump(2) << "\n";
  return kExitOk;
}

struct CfArgs {
  std::string model;
  InstanceArgs in;
  std::string target;
  std::string lock, force;
  std::vector<std::string> ranges;
  double epsilon = 1.0;
  std::string engine = "sampling";
  int budget = 10000;
  int grid = 11;
  int max_results = 10;
  std::optional<double> time_budget_ms;
  std::string distance;
  bool timings = false;
};

// "name=lo:hi" for numeric features, "name=a|b" for categorical ones.
void AddRange(const FeatureSchema& schema, const std::string& spec, json& ranges) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw InvalidArgument("--range expects name=lo:hi or name=a|b");
  const std::string name = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);
  const Feature& f = schema.feature(schema.FeatureIndex(name));
  if (f.numeric()) {
    const auto colon = value.find(':');
    if (colon == std::string::npos) throw InvalidArgument("numeric --range expects lo:hi");
    try {
      ranges[name] = {std::stod(value.substr(0, colon)), std::stod(value.substr(colon + 1))};
    } catch (const std::exception&) {
      throw InvalidArgument("numeric --range expects lo:hi, got " + value);
    }
  } else {
    json cats = json::array();
    std::istringstream in(value);
    std::string c;
    while (std::getline(in, c, '|')) cats.push_back(c);
    ranges[name] = cats;
  }
}

int Cf(const Global& g, const CfArgs& a, std::ostream& out) {
  const ModelPtr model = LoadModel(a.model);
  const FeatureSchema& schema = model->schema();
  const auto data = MaybeData(a.in.data, a.in.schema);
  const Instance x = ResolveInstance(a.in, schema, data);
  json q = {{"instance", InstanceToJson(schema, x)},
            {"target_class", a.target},
            {"epsilon", a.epsilon},
            {"lock", SplitList(a.lock)},
            {"force_change", SplitList(a.force)},
            {"max_results", a.max_results}};
  json ranges = json::object();
  for (const std::string& r : a.ranges) AddRange(schema, r, ranges);
  q["ranges"] = ranges;
  if (a.time_budget_ms) q["time_budget_ms"] = *a.time_budget_ms;
  if (!a.distance.empty()) q["distance"] = a.distance;
  const counterfactual::Query query = counterfactual::Query::FromJson(schema, q);

  counterfactual::CounterfactualSet set;
  if (a.engine == "exhaustive") {
    set = counterfactual::SearchExhaustive(*model, query, a.grid);
  } else {
    counterfactual::SamplingOptions options;
    options.seed = g.seed;
    options.budget = a.budget;
    set = counterfactual::SearchSampling(*model, query, options);
  }

  if (g.format == "csv") {
    out << "rank,sparsity,distance";
    for (const Feature& f : schema.features()) out << "," << CsvEscape(f.name);
    out << "\n";
    for (const auto& cf : set.results) {
      out << cf.rank << "," << cf.sparsity << "," << Num(cf.distance);
      for (int i = 0; i < schema.num_features(); ++i) {
        out << "," << CsvEscape(schema.FormatValue(i, cf.instance[i]));
      }
      out << "\n";
    }
  } else if (g.format == "pretty") {
    if (set.results.empty()) out << "no counterfactual under these constraints\n";
    for (const auto& cf : set.results) {
      out << "#" << cf.rank << " sparsity=" << cf.sparsity << " distance=" << Num(cf.distance)
          << ":";
      for (const auto& c : cf.delta) {
        out << " " << schema.feature(c.feature).name << " " << schema.FormatValue(c.feature, c.from)
            << " -> " << schema.FormatValue(c.feature, c.to) << ";";
      }
      out << "\n";
    }
  } else {
    json j = counterfactual::ToJson(schema, set);
    if (!a.timings) j["stats"].erase("wall_ms");
    out << j.dump(2) << "\n";
  }
  return kExitOk;
}

struct EdgesArgs {
  std::string model, data, schema, risk;
  std::string criterion;
  double threshold = 0.0;
  bool allow_correct = false;
  std::string near;
  double radius = 1.0;
  std::string mode = "mine";
  int budget = 1000;
  int bins = 10;
};

int Edges(const Global& g, const EdgesArgs& a, std::ostream& out) {
  const ModelPtr model = LoadModel(a.model);
  const FeatureSchema& schema = model->schema();
  const LabeledDataset data = LoadDatasetFiles(a.data, a.schema);
  const edge_case::RiskFunction risk =
      edge_case::RiskFunction::FromJson(schema, ReadJsonFile(a.risk));
  json cj;
  if (!a.criterion.empty()) {
    cj = ParseJsonArg(a.criterion, "criterion");
  } else {
    cj = {{"risk_threshold", a.threshold}, {"require_misprediction", !a.allow_correct}};
    if (!a.near.empty()) {
      cj["locality"] = {{"query", ParseJsonArg(a.near, "--near instance")},
                        {"max_distance", a.radius}};
    }
  }
  const edge_case::EdgeCriterion criterion = edge_case::EdgeCriterion::FromJson(schema, cj);
  edge_case::SummaryOptions summary;
  summary.bins = a.bins;
  edge_case::EdgeCaseSet set;
  if (a.mode == "construct") {
    edge_case::ConstructOptions options;
    options.budget = a.budget;
    options.seed = g.seed;
    options.labels.allow_nearest_neighbor = true;
    options.summary = summary;
    set = edge_case::ConstructEdgeCases(*model, data, risk, criterion, options);
  } else {
    set = edge_case::MineEdgeCases(*model, data, risk, criterion, summary);
  }
  if (g.format == "csv") {
    edge_case::WriteCsv(schema, set, out);
  } else if (g.format == "pretty") {
    out << set.summary.count << " edge cases\n";
    for (const auto& c : set.cases) {
      out << (c.row ? "row " + std::to_string(*c.row) : std::string("synthetic"))
          << ": risk=" << Num(c.risk) << " predicted=" << schema.ClassName(c.predicted)
          << " truth=" << schema.ClassName(c.truth) << "\n";
    }
  } else {
    out << edge_case::ToJson(schema, set).dump(2) << "\n";
  }
  return kExitOk;
}

struct TreeArgs {
  std::string model, data, schema;
  int max_depth = 4;
  int min_leaf = 1;
  std::optional<double> lambda;
  bool sweep = false;
  std::string space = "xy";
  std::string linkage = "average";
  int depth = tree::kDefaultCollapseDepth;
  std::string expand;
};

int Tree(const Global& g, const TreeArgs& a, std::ostream& out) {
  const auto data = MaybeData(a.data, a.schema);
  tree::SemanticDistanceConfig cfg;
  cfg.space = tree::DistanceSpaceFromString(a.space);
  cfg.linkage = tree::LinkageFromString(a.linkage);
  DecisionTree t;
  FeatureSchema schema;
  json induction;
  if (!a.model.empty()) {
    const ModelPtr model = LoadModel(a.model);
    const auto* cart = dynamic_cast<const CartModel*>(model.get());
    if (!cart) throw FailedPrecondition("tree needs a cart-tree model");
    t = cart->tree();
    schema = model->schema();
    if (data) t.AttachSupport(*data);
  } else {
    if (!data) throw InvalidArgument("give --model or --data and --schema");
    schema = data->schema;
    if (a.sweep) {
      const tree::LambdaSweepResult r = tree::SweepLambda(*data, a.max_depth, a.min_leaf, cfg);
      t = r.tree;
      induction = {{"lambda", r.lambda},
                   {"training_accuracy", r.training_accuracy},
                   {"violation_fraction", r.violation_fraction},
                   {"baseline_accuracy", r.baseline_accuracy},
                   {"baseline_fraction", r.baseline_fraction}};
    } else {
      cfg.lambda = a.lambda.value_or(0.0);
      t = tree::InduceTree(*data, a.max_depth, a.min_leaf, cfg, g.seed);
      const CartModel model(schema, t);
      induction = {{"lambda", cfg.lambda}, {"training_accuracy", Accuracy(model, *data)}};
    }
    const tree::InstanceDistances distances(*data, cfg);
    const tree::OrderingReport report = tree::CheckSemanticOrdering(t, distances, cfg.linkage);
    induction["ordering"] = {{"triples", report.triples},
                             {"violations", report.violations},
                             {"fraction", report.fraction}};
  }
  const tree::CollapsibleTree ct("tree", schema, std::move(t));
  tree::CollapsedView view = tree::CollapseToDepth(ct, a.depth);
  for (const std::string& id : SplitList(a.expand)) {
    int node = 0;
    try {
      node = std::stoi(id);
    } catch (const std::exception&) {
      throw InvalidArgument("--expand expects node ids, got " + id);
    }
    view = tree::ToggleNode(ct, view, node);
  }
  if (g.format == "pretty") {
    out << tree::RenderText(ct, view);
  } else if (g.format == "csv") {
    out << "node,label,majority,purity,leaf_count,superleaf\n";
    for (int node : tree::Frontier(ct, view)) {
      const tree::SuperleafSummary s = ct.Summary(node);
      out << node << "," << CsvEscape(s.label) << "," << CsvEscape(schema.ClassName(s.majority))
          << "," << Num(s.purity) << "," << s.leaf_count << "," << (s.superleaf ? 1 : 0) << "\n";
    }
  } else {
    json j = {{"tree", ct.tree().ToJson(schema)},
              {"view", tree::ViewToJson(view)},
              {"render", tree::RenderJson(ct, view)}};
    if (!induction.is_null()) j["induction"] = induction;
    out << j.dump(2) << "\n";
  }
  return kExitOk;
}

struct AttributeArgs {
  std::string model;
  InstanceArgs in;
  std::string explainer = "ablation";
  std::string target;
  bool all_rows = false;
  std::string baseline;
};

int Attribute(const Global& g, const AttributeArgs& a, std::ostream& out) {
  const ModelPtr model = LoadModel(a.model);
  const FeatureSchema& schema = model->schema();
  const auto data = MaybeData(a.in.data, a.in.schema);
  attribution::Explainer e;
  e.kind = attribution::ExplainerKindFromString(a.explainer);
  if (data) e = attribution::BindBackground(std::move(e), *data, g.seed);
  if (!a.baseline.empty()) e.baseline = InstanceFromJson(schema, ParseJsonArg(a.baseline, "baseline"));
  std::optional<int> target;
  if (!a.target.empty()) target = schema.ClassIndex(a.target);

  std::vector<Instance> xs;
  if (a.all_rows) {
    if (!data) throw InvalidArgument("--all-rows needs --data and --schema");
    xs = data->instances;
  } else {
    xs.push_back(ResolveInstance(a.in, schema, data));
  }
  std::vector<attribution::AttributionMap> maps;
  for (const Instance& x : xs) maps.push_back(attribution::Explain(e, *model, x, target, g.seed));

  if (g.format == "csv") {
    attribution::WriteCsv(out, schema, maps);
  } else if (g.format == "pretty") {
    for (const auto& m : maps) {
      std::vector<int> order(schema.num_features());
      for (int i = 0; i < schema.num_features(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](int l, int r) {
        return std::abs(m.values[l]) > std::abs(m.values[r]);
      });
      out << m.explainer << " for class " << schema.ClassName(m.target) << ":\n";
      for (int i : order) out << "  " << schema.feature(i).name << " " << Num(m.values[i]) << "\n";
    }
  } else {
    json j = json::array();
    for (const auto& m : maps) j.push_back(attribution::ToJson(schema, m));
    out << (a.all_rows ? j : j[0]).dump(2) << "\n";
  }
  return kExitOk;
}

struct VerifyArgs {
  std::string models, data, schema;
  std::string explainers = "ablation,occlusion,shapley,permutation";
};

int Verify(const Global& g, const VerifyArgs& a, std::ostream& out) {
  std::vector<ModelPtr> models;
  for (const std::string& path : SplitList(a.models)) models.push_back(LoadModel(path));
  if (models.empty()) throw InvalidArgument("--models is empty");
  const LabeledDataset data = LoadDatasetFiles(a.data, a.schema);
  std::vector<verifiability::NamedExplainer> explainers;
  for (const std::string& name : SplitList(a.explainers)) {
    attribution::Explainer e;
    e.kind = attribution::ExplainerKindFromString(name);
    e = attribution::BindBackground(std::move(e), data, g.seed);
    explainers.push_back(verifiability::Wrap(std::string(attribution::ToString(e.kind)), e));
  }
  if (explainers.empty()) throw InvalidArgument("--explainers is empty");
  verifiability::StudyOptions options;
  options.seed = g.seed;
  const verifiability::VerifiabilityReport report =
      verifiability::VerifiabilityStudy(models, data, explainers, options);
  if (g.format == "csv") {
    verifiability::WriteCsv(out, report);
  } else if (g.format == "pretty") {
    out << "rank explainer mean_v sd_v (" << report.n_models << " models, " << report.n_instances
        << " instances)\n";
    for (const auto& r : report.explainers) {
      out << r.rank << " " << r.name << " " << (r.mean_v ? Num(*r.mean_v) : "undefined") << " "
          << (r.sd_v ? Num(*r.sd_v) : "-") << "\n";
    }
  } else {
    out << verifiability::ToJson(report).dump(2) << "\n";
  }
  return kExitOk;
}

struct ServeArgs {
  std::string config;
  std::optional<int> port;
  std::string host;
  std::string data_dir;
};

int Serve(const Global& g, const ServeArgs& a, std::ostream& err) {
  service::ServiceConfig config = service::LoadConfig(
      a.config.empty() ? std::nullopt : std::optional<std::filesystem::path>(a.config));
  if (a.port) config.port = *a.port;
  if (!a.host.empty()) config.host = a.host;
  if (!a.data_dir.empty()) config.data_dir = a.data_dir;
  service::Service svc(config);
  service::HttpServer server(svc);
  const int port = server.Bind(config.host, config.port);
  if (!g.quiet) err << "listening on " << config.host << ":" << port << std::endl;
  server.Run();
  return kExitOk;
}

}  // namespace

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Explanation toolkit for tabular prediction models", "xplain"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--format", g.format, "Output format")
      ->check(CLI::IsMember({"json", "csv", "pretty"}))
      ->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress progress messages");
  app.add_option("-o,--output", g.output, "Write results to this file instead of stdout");

  auto existing = [](CLI::Option* o) { return o->check(CLI::ExistingFile); };
  auto add_instance = [&](CLI::App* sub, InstanceArgs& in) {
    sub->add_option("--instance", in.instance, "Instance as JSON, or @file.json");
    sub->add_option("--row", in.row, "Use this 0-based dataset row as the instance");
    existing(sub->add_option("--data", in.data, "Dataset CSV"));
    existing(sub->add_option("--schema", in.schema, "Dataset schema JSON"));
  };

  GenArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "Generate a synthetic benchmark");
  gen_cmd->add_option("--n", gen.spec.n, "Rows")->capture_default_str();
  gen_cmd->add_option("--informative", gen.spec.informative)->capture_default_str();
  gen_cmd->add_option("--noise", gen.spec.noise)->capture_default_str();
  gen_cmd->add_option("--spurious", gen.spec.spurious)->capture_default_str();
  gen_cmd->add_option("--classes", gen.spec.classes)->capture_default_str();
  gen_cmd->add_option("--rare-fraction", gen.spec.rare_fraction)->capture_default_str();
  gen_cmd->add_option("--rare-risk", gen.spec.rare_risk)->capture_default_str();
  gen_cmd->add_option("--label-noise", gen.spec.label_noise)->capture_default_str();
  gen_cmd->add_option("--spurious-rate", gen.spec.spurious_rate)->capture_default_str();
  existing(gen_cmd->add_option("--spec", gen.spec_file, "Benchmark spec JSON"));
  gen_cmd->add_option("--out-dir", gen.out_dir, "Output directory")->capture_default_str();
  gen_cmd->add_option("--stem", gen.stem, "Output file stem")->capture_default_str();

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model");
  existing(train_cmd->add_option("--data", train.data, "Dataset CSV")->required());
  existing(train_cmd->add_option("--schema", train.schema, "Dataset schema JSON")->required());
  train_cmd->add_option("--out", train.out_model, "Model JSON to write")->required();
  train_cmd->add_option("--kind", train.kind, "cart or logistic")
      ->check(CLI::IsMember({"cart", "cart-tree", "logistic"}))
      ->capture_default_str();
  train_cmd->add_option("--max-depth", train.options.tree.max_depth)->capture_default_str();
  train_cmd->add_option("--min-leaf", train.options.tree.min_leaf)->capture_default_str();
  train_cmd->add_option("--epochs", train.options.logistic.epochs)->capture_default_str();
  train_cmd->add_option("--learning-rate", train.options.logistic.learning_rate)
      ->capture_default_str();
  train_cmd->add_option("--l2", train.options.logistic.l2)->capture_default_str();

  PredictArgs predict;
  CLI::App* predict_cmd = app.add_subcommand("predict", "Predict with a model");
  existing(predict_cmd->add_option("--model", predict.model, "Model JSON")->required());
  add_instance(predict_cmd, predict.in);
  predict_cmd->add_flag("--all-rows", predict.all_rows, "Predict every dataset row");

  CfArgs cf;
  CLI::App* cf_cmd = app.add_subcommand("cf", "Search counterfactuals");
  existing(cf_cmd->add_option("--model", cf.model, "Model JSON")->required());
  add_instance(cf_cmd, cf.in);
  cf_cmd->add_option("--target", cf.target, "Desired class (name or index)")->required();
  cf_cmd->add_option("--lock", cf.lock, "Comma-separated features that must not change");
  cf_cmd->add_option("--force", cf.force, "Comma-separated features that must change");
  cf_cmd->add_option("--range", cf.ranges, "name=lo:hi or name=a|b (repeatable)");
  cf_cmd->add_option("--epsilon", cf.epsilon, "Distance bound")->capture_default_str();
  cf_cmd->add_option("--engine", cf.engine)
      ->check(CLI::IsMember({"sampling", "exhaustive"}))
      ->capture_default_str();
  cf_cmd->add_option("--budget", cf.budget, "Sampling draws")->capture_default_str();
  cf_cmd->add_option("--grid", cf.grid, "Exhaustive grid steps")->capture_default_str();
  cf_cmd->add_option("--max-results", cf.max_results, "0 keeps all")->capture_default_str();
  cf_cmd->add_option("--time-budget-ms", cf.time_budget_ms, "Anytime stop");
  cf_cmd->add_option("--distance", cf.distance, "gower, l1 or l2");
  cf_cmd->add_flag("--timings", cf.timings, "Include wall-clock time in JSON output");

  EdgesArgs edges;
  CLI::App* edges_cmd = app.add_subcommand("edges", "Mine or construct edge cases");
  existing(edges_cmd->add_option("--model", edges.model, "Model JSON")->required());
  existing(edges_cmd->add_option("--data", edges.data, "Dataset CSV")->required());
  existing(edges_cmd->add_option("--schema", edges.schema, "Dataset schema JSON")->required());
  existing(edges_cmd->add_option("--risk", edges.risk, "Risk function JSON")->required());
  edges_cmd->add_option("--criterion", edges.criterion, "Criterion JSON or @file");
  edges_cmd->add_option("--threshold", edges.threshold, "Risk must exceed this")
      ->capture_default_str();
  edges_cmd->add_flag("--allow-correct", edges.allow_correct,
                      "Do not require a misprediction");
  edges_cmd->add_option("--near", edges.near, "Local mode: query instance JSON");
  edges_cmd->add_option("--radius", edges.radius, "Local mode: max distance")
      ->capture_default_str();
  edges_cmd->add_option("--mode", edges.mode)
      ->check(CLI::IsMember({"mine", "construct"}))
      ->capture_default_str();
  edges_cmd->add_option("--budget", edges.budget, "Construction draws")->capture_default_str();
  edges_cmd->add_option("--bins", edges.bins, "Risk histogram bins")->capture_default_str();

  TreeArgs tr;
  CLI::App* tree_cmd = app.add_subcommand("tree", "Induce and view a collapsible tree");
  existing(tree_cmd->add_option("--model", tr.model, "Existing cart-tree model JSON"));
  existing(tree_cmd->add_option("--data", tr.data, "Dataset CSV"));
  existing(tree_cmd->add_option("--schema", tr.schema, "Dataset schema JSON"));
  tree_cmd->add_option("--max-depth", tr.max_depth)->capture_default_str();
  tree_cmd->add_option("--min-leaf", tr.min_leaf)->capture_default_str();
  tree_cmd->add_option("--lambda", tr.lambda, "Semantic regularization weight");
  tree_cmd->add_flag("--sweep", tr.sweep, "Pick lambda by the default sweep");
  tree_cmd->add_option("--space", tr.space)
      ->check(CLI::IsMember({"x", "y", "xy"}))
      ->capture_default_str();
  tree_cmd->add_option("--linkage", tr.linkage)
      ->check(CLI::IsMember({"average", "min", "max"}))
      ->capture_default_str();
  tree_cmd->add_option("--depth", tr.depth, "Collapse below this depth")->capture_default_str();
  tree_cmd->add_option("--expand", tr.expand, "Comma-separated node ids to toggle");

  AttributeArgs attr;
  CLI::App* attr_cmd = app.add_subcommand("attribute", "Feature attributions");
  existing(attr_cmd->add_option("--model", attr.model, "Model JSON")->required());
  add_instance(attr_cmd, attr.in);
  attr_cmd->add_option("--explainer", attr.explainer,
                       "ablation, occlusion, shapley or permutation")
      ->capture_default_str();
  attr_cmd->add_option("--target", attr.target, "Class to explain (default: predicted)");
  attr_cmd->add_option("--baseline", attr.baseline, "Baseline instance JSON or @file");
  attr_cmd->add_flag("--all-rows", attr.all_rows, "Explain every dataset row");

  VerifyArgs verify;
  CLI::App* verify_cmd = app.add_subcommand("verify", "Verifiability study");
  verify_cmd->add_option("--models", verify.models, "Comma-separated model JSON files")
      ->required();
  existing(verify_cmd->add_option("--data", verify.data, "Dataset CSV with masks")->required());
  existing(verify_cmd->add_option("--schema", verify.schema, "Dataset schema JSON")->required());
  verify_cmd->add_option("--explainers", verify.explainers, "Comma-separated explainers")
      ->capture_default_str();

  ServeArgs serve;
  CLI::App* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  existing(serve_cmd->add_option("--config", serve.config, "Config JSON"));
  serve_cmd->add_option("--port", serve.port, "Port (0 picks a free one)");
  serve_cmd->add_option("--host", serve.host, "Bind address");
  serve_cmd->add_option("--data-dir", serve.data_dir, "Directory of models to serve");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (!verify.models.empty()) {
      for (const std::string& path : SplitList(verify.models)) {
        const std::string problem = CLI::ExistingFile(path);
        if (!problem.empty()) throw CLI::ValidationError("--models", problem);
      }
    }
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto parsed = app.get_subcommands();
    err << (parsed.empty() ? app.help() : parsed.front()->help());
    return kExitUsage;
  }

  try {
    if (*serve_cmd) return Serve(g, serve, err);
    Sink sink(g.output, out);
    std::ostream& o = *sink;
    if (*gen_cmd) {
      gen.spec.seed = g.seed;
      return Gen(g, gen, o);
    }
    if (*train_cmd) return Train(g, train, o);
    if (*predict_cmd) return Predict(g, predict, o);
    if (*cf_cmd) return Cf(g, cf, o);
    if (*edges_cmd) return Edges(g, edges, o);
    if (*tree_cmd) return Tree(g, tr, o);
    if (*attr_cmd) return Attribute(g, attr, o);
    if (*verify_cmd) return Verify(g, verify, o);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomainError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomainError;
  }
  return kExitUsage;
}

int Run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return Run(args, out, err);
}

}  // namespace xplain::cli
