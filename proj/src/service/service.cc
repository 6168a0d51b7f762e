#include "xplain/service/service.h"

#include <cstdio>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include "xplain/attribution/attribution.h"
#include "xplain/core/error.h"
#include "xplain/edge_case/edge_case.h"
#include "xplain/verifiability/verifiability.h"

namespace xplain::service {

using nlohmann::json;

namespace {

// Malformed payload; carries the offending top-level fields.
struct BadFields {
  std::vector<std::string> fields;
  std::string message;
};

void RequireFields(const json& body, std::initializer_list<const char*> names) {
  if (!body.is_object()) throw BadFields{{}, "body must be a JSON object"};
  BadFields bad{{}, "missing field"};
  for (const char* name : names) {
    if (!body.contains(name)) bad.fields.emplace_back(name);
  }
  if (!bad.fields.empty()) {
    if (bad.fields.size() > 1) bad.message += "s";
    throw bad;
  }
}

// Parses one payload field, attributing any parse error to it.
template <typename F>
auto ParseField(const json& body, const char* name, F parse) {
  RequireFields(body, {name});
  try {
    return parse(body.at(name));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kInvalidArgument) throw;
    throw BadFields{{name}, e.what()};
  } catch (const json::exception& e) {
    throw BadFields{{name}, e.what()};
  }
}

template <typename T>
T Optional(const json& body, const char* name, T fallback) {
  if (!body.contains(name) || body.at(name).is_null()) return fallback;
  try {
    return body.at(name).get<T>();
  } catch (const json::exception& e) {
    throw BadFields{{name}, e.what()};
  }
}

json ParseBody(const std::string& text) {
  if (text.empty()) return json::object();
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw BadFields{{}, std::string("malformed JSON: ") + e.what()};
  }
}

const char* CodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return "invalid_argument";
    case ErrorCode::kNotFound:
      return "not_found";
    case ErrorCode::kConflict:
      return "conflict";
    case ErrorCode::kFailedPrecondition:
      return "failed_precondition";
  }
  return "unknown";
}

int StatusOf(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return 400;
    case ErrorCode::kNotFound:
      return 404;
    case ErrorCode::kConflict:
      return 409;
    case ErrorCode::kFailedPrecondition:
      return 422;
  }
  return 500;
}

TrainOptions TrainOptionsFromJson(const json& j) {
  TrainOptions o;
  if (j.is_null()) return o;
  if (!j.is_object()) throw InvalidArgument("options must be an object");
  if (j.contains("kind")) o.kind = ModelKindFromString(j.at("kind").get<std::string>());
  if (o.kind == ModelKind::kExternalTable) {
    throw InvalidArgument("external-table models cannot be trained");
  }
  o.tree.max_depth = j.value("max_depth", o.tree.max_depth);
  o.tree.min_leaf = j.value("min_leaf", o.tree.min_leaf);
  o.logistic.learning_rate = j.value("learning_rate", o.logistic.learning_rate);
  o.logistic.epochs = j.value("epochs", o.logistic.epochs);
  o.logistic.l2 = j.value("l2", o.logistic.l2);
  o.seed = j.value("seed", o.seed);
  if (o.tree.max_depth < 0 || o.tree.min_leaf < 1 || o.logistic.epochs < 1) {
    throw InvalidArgument("invalid training options");
  }
  return o;
}

LabeledDataset DatasetFromStrings(const std::string& csv, const std::string& schema) {
  std::istringstream c(csv), s(schema);
  LabeledDataset data = LoadDataset(c, s);
  if (data.empty()) throw InvalidArgument("dataset has no rows");
  return data;
}

}  // namespace

void ServiceConfig::Validate() const {
  if (port < 0 || port > 65535) throw InvalidArgument("port outside [0, 65535]");
  if (session_ttl_s < 1) throw InvalidArgument("session_ttl_s must be >= 1");
  if (!data_dir.empty() && !std::filesystem::is_directory(data_dir)) {
    throw InvalidArgument("data_dir is not a readable directory: " + data_dir);
  }
}

ServiceConfig LoadConfig(const std::optional<std::filesystem::path>& file,
                         const std::function<const char*(const char*)>& getenv) {
  ServiceConfig c;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw InvalidArgument("cannot read config " + file->string());
    try {
      const json j = json::parse(in);
      c.host = j.value("host", c.host);
      c.port = j.value("port", c.port);
      c.data_dir = j.value("data_dir", c.data_dir);
      c.session_ttl_s = j.value("session_ttl_s", c.session_ttl_s);
    } catch (const json::exception& e) {
      throw InvalidArgument(std::string("malformed config: ") + e.what());
    }
  }
  auto env_int = [&](const char* name, int& out) {
    if (const char* v = getenv(name)) {
      try {
        std::size_t used = 0;
        out = std::stoi(v, &used);
        if (used != std::string(v).size()) throw std::invalid_argument(name);
      } catch (const std::exception&) {
        throw InvalidArgument(std::string(name) + " is not an integer");
      }
    }
  };
  if (const char* v = getenv("XPLAIN_HOST")) c.host = v;
  env_int("XPLAIN_PORT", c.port);
  if (const char* v = getenv("XPLAIN_DATA_DIR")) c.data_dir = v;
  env_int("XPLAIN_SESSION_TTL_S", c.session_ttl_s);
  c.Validate();
  return c;
}

Service::Service(ServiceConfig config, Clock clock)
    : config_(std::move(config)), clock_(std::move(clock)), token_state_(std::random_device{}()) {
  config_.Validate();
  if (!config_.data_dir.empty()) LoadDataDir(config_.data_dir);
}

std::string Service::NewToken() {
  std::lock_guard lock(token_mu_);
  // splitmix64 over a randomly seeded counter: unique and hard to guess.
  std::uint64_t z = (token_state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(z));
  return buf;
}

std::string Service::AddModel(ModelPtr model, std::optional<LabeledDataset> data,
                              std::optional<std::string> id) {
  if (!model) throw InvalidArgument("null model");
  if (data && !(data->schema == model->schema())) {
    throw InvalidArgument("dataset schema does not match the model");
  }
  auto stored = std::make_shared<StoredModel>();
  const std::string key = id ? *id : "m-" + NewToken();
  if (const auto* cart = dynamic_cast<const CartModel*>(model.get())) {
    DecisionTree t = cart->tree();
    if (data) t.AttachSupport(*data);
    stored->tree = std::make_shared<const tree::CollapsibleTree>(key, model->schema(),
                                                                 std::move(t));
  }
  stored->model = std::move(model);
  stored->data = std::move(data);
  std::unique_lock lock(models_mu_);
  if (models_.count(key)) throw Conflict("model id already registered: " + key);
  models_.emplace(key, std::move(stored));
  return key;
}

void Service::LoadDataDir(const std::filesystem::path& dir) {
  static const std::string kSuffix = ".model.json";
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() <= kSuffix.size() ||
        name.compare(name.size() - kSuffix.size(), kSuffix.size(), kSuffix) != 0) {
      continue;
    }
    const std::string stem = name.substr(0, name.size() - kSuffix.size());
    std::ifstream in(entry.path());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw InvalidArgument("malformed model file " + name + ": " + e.what());
    }
    ModelPtr model = ModelFromJson(j);
    std::optional<LabeledDataset> data;
    const auto csv = dir / (stem + ".csv");
    const auto schema = dir / (stem + ".schema.json");
    if (std::filesystem::exists(csv) && std::filesystem::exists(schema)) {
      data = LoadDatasetFiles(csv, schema);
    }
    AddModel(std::move(model), std::move(data), stem);
  }
}

std::size_t Service::session_count() const {
  std::lock_guard lock(sessions_mu_);
  return sessions_.size();
}

std::shared_ptr<const Service::StoredModel> Service::FindModel(const std::string& id) const {
  std::shared_lock lock(models_mu_);
  auto it = models_.find(id);
  if (it == models_.end()) throw NotFound("unknown model '" + id + "'");
  return it->second;
}

std::shared_ptr<Service::Session> Service::FindSession(const std::string& id) {
  const auto now = clock_();
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
  if (now >= it->second->expires) {
    sessions_.erase(it);
    throw NotFound("session expired '" + id + "'");
  }
  it->second->expires = now + std::chrono::seconds(config_.session_ttl_s);
  return it->second;
}

Response Service::Handle(const Request& request) {
  Response r;
  try {
    json data = Dispatch(request, r.status);
    r.body = {{"ok", true}, {"data", std::move(data)}};
  } catch (const BadFields& e) {
    r.status = 400;
    r.body = {{"ok", false},
              {"error", {{"code", "invalid_argument"}, {"message", e.message}, {"fields", e.fields}}}};
  } catch (const Error& e) {
    r.status = StatusOf(e.code());
    json err = {{"code", CodeName(e.code())}, {"message", e.what()}};
    if (e.code() == ErrorCode::kInvalidArgument) err["fields"] = json::array();
    r.body = {{"ok", false}, {"error", std::move(err)}};
  } catch (const json::exception& e) {
    r.status = 400;
    r.body = {{"ok", false},
              {"error", {{"code", "invalid_argument"}, {"message", e.what()}, {"fields", json::array()}}}};
  }
  return r;
}

json Service::Dispatch(const Request& req, int& status) {
  static const std::regex kModel(R"(^/models/([^/]+)/(predict|edge-cases|counterfactuals|attributions)$)");
  static const std::regex kSession(R"(^/sessions/([^/]+)/tree(/toggle|/route)?$)");
  status = 200;
  std::smatch m;
  const bool post = req.method == "POST";
  const bool get = req.method == "GET";

  if (req.path == "/models") {
    if (!post) throw NotFound("no route " + req.method + " " + req.path);
    return PostModel(req);
  }
  if (req.path == "/sessions") {
    if (!post) throw NotFound("no route " + req.method + " " + req.path);
    return CreateSession(ParseBody(req.body));
  }
  if (req.path == "/studies/verifiability") {
    if (!post) throw NotFound("no route " + req.method + " " + req.path);
    return Study(ParseBody(req.body));
  }
  if (std::regex_match(req.path, m, kModel) && post) {
    const std::string id = m[1];
    const std::string op = m[2];
    const json body = ParseBody(req.body);
    if (op == "predict") return Predict(id, body);
    if (op == "edge-cases") return EdgeCases(id, body);
    if (op == "counterfactuals") return Counterfactuals(id, body);
    return Attributions(id, body);
  }
  if (std::regex_match(req.path, m, kSession)) {
    const std::string id = m[1];
    const std::string op = m[2];
    if (op.empty() && get) return GetTree(id);
    if (op == "/toggle" && post) return Toggle(id, ParseBody(req.body));
    if (op == "/route" && post) return Route(id, ParseBody(req.body));
  }
  throw NotFound("no route " + req.method + " " + req.path);
}

json Service::PostModel(const Request& req) {
  // Multipart parts "csv", "schema" and optional "options", or the same
  // fields in a JSON body. A JSON body may instead carry a ready "model".
  json body;
  if (!req.files.empty()) {
    body = json::object();
    std::vector<std::string> missing;
    for (const char* name : {"csv", "schema"}) {
      if (!req.files.count(name)) missing.emplace_back(name);
    }
    if (!missing.empty()) throw BadFields{missing, "missing multipart part"};
    body["csv"] = req.files.at("csv");
    body["schema"] = ParseField(json{{"schema", req.files.at("schema")}}, "schema",
                                [](const json& v) { return json::parse(v.get<std::string>()); });
    if (req.files.count("options")) {
      body["options"] = ParseField(json{{"options", req.files.at("options")}}, "options",
                                   [](const json& v) { return json::parse(v.get<std::string>()); });
    }
  } else {
    body = ParseBody(req.body);
  }
  if (body.is_object() && body.contains("model")) {
    ModelPtr model = ParseField(body, "model", [](const json& v) { return ModelFromJson(v); });
    std::optional<LabeledDataset> data;
    if (body.contains("csv")) {
      data = ParseField(body, "csv", [&](const json& v) {
        return DatasetFromStrings(v.get<std::string>(), model->schema().ToJson().dump());
      });
    }
    const std::string id = AddModel(model, std::move(data));
    return {{"model_id", id}, {"kind", ToString(model->kind())}};
  }
  RequireFields(body, {"csv", "schema"});
  const FeatureSchema schema =
      ParseField(body, "schema", [](const json& v) { return FeatureSchema::FromJson(v); });
  LabeledDataset data = ParseField(body, "csv", [&](const json& v) {
    return DatasetFromStrings(v.get<std::string>(), schema.ToJson().dump());
  });
  const TrainOptions options = body.contains("options")
                                   ? ParseField(body, "options", TrainOptionsFromJson)
                                   : TrainOptions{};
  TrainedModel trained = TrainModel(data, options);
  const std::string id = AddModel(trained.model, std::move(data));
  return {{"model_id", id},
          {"kind", ToString(trained.model->kind())},
          {"training_accuracy", trained.training_accuracy}};
}

json Service::Predict(const std::string& id, const json& body) {
  const auto stored = FindModel(id);
  const FeatureSchema& schema = stored->model->schema();
  const Instance x =
      ParseField(body, "instance", [&](const json& v) { return InstanceFromJson(schema, v); });
  const std::vector<double> proba = stored->model->PredictProba(x);
  const int c = ArgMax(proba);
  return {{"class", schema.ClassName(c)}, {"class_index", c}, {"proba", proba}};
}

json Service::EdgeCases(const std::string& id, const json& body) {
  const auto stored = FindModel(id);
  const FeatureSchema& schema = stored->model->schema();
  RequireFields(body, {"risk", "criterion"});
  const edge_case::RiskFunction risk = ParseField(
      body, "risk", [&](const json& v) { return edge_case::RiskFunction::FromJson(schema, v); });
  const edge_case::EdgeCriterion criterion = ParseField(body, "criterion", [&](const json& v) {
    return edge_case::EdgeCriterion::FromJson(schema, v);
  });
  if (!stored->data) throw FailedPrecondition("model has no stored dataset to mine");
  const std::string mode = Optional<std::string>(body, "mode", "mine");
  if (mode == "mine") {
    return edge_case::ToJson(
        schema, edge_case::MineEdgeCases(*stored->model, *stored->data, risk, criterion));
  }
  if (mode == "construct") {
    edge_case::ConstructOptions options;
    options.budget = Optional<int>(body, "budget", options.budget);
    options.seed = Optional<std::uint64_t>(body, "seed", options.seed);
    options.labels.allow_nearest_neighbor = true;
    return edge_case::ToJson(schema, edge_case::ConstructEdgeCases(
                                         *stored->model, *stored->data, risk, criterion, options));
  }
  throw BadFields{{"mode"}, "mode must be 'mine' or 'construct'"};
}

json Service::Counterfactuals(const std::string& id, const json& body) {
  const auto stored = FindModel(id);
  const FeatureSchema& schema = stored->model->schema();
  if (!body.is_object()) throw BadFields{{}, "body must be a JSON object"};
  std::vector<std::string> missing;
  for (const char* name : {"instance", "target_class"}) {
    if (!body.contains(name)) missing.emplace_back(name);
  }
  if (!missing.empty()) throw BadFields{missing, "missing field"};
  counterfactual::Query query;
  try {
    query = counterfactual::Query::FromJson(schema, body);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kInvalidArgument) throw;
    // Attribute the error to whichever query field fails on its own.
    std::vector<std::string> fields;
    for (const char* name : {"instance", "target_class", "epsilon", "lock", "force_change",
                             "ranges", "max_results", "time_budget_ms", "distance"}) {
      if (!body.contains(name)) continue;
      json probe = {{"instance", body["instance"]}, {"target_class", body["target_class"]}};
      probe[name] = body[name];
      try {
        counterfactual::Query::FromJson(schema, probe);
      } catch (const std::exception&) {
        fields.emplace_back(name);
      }
    }
    if (fields.empty()) {
      // A cross-field clash such as a feature both locked and forced.
      for (const char* name : {"lock", "force_change", "ranges"}) {
        if (body.contains(name)) fields.emplace_back(name);
      }
    }
    throw BadFields{fields, e.what()};
  }
  const std::string engine = Optional<std::string>(body, "engine", "sampling");
  counterfactual::CounterfactualSet set;
  if (engine == "sampling") {
    counterfactual::SamplingOptions options;
    options.seed = Optional<std::uint64_t>(body, "seed", options.seed);
    options.budget = Optional<int>(body, "budget", options.budget);
    options.snap_steps = Optional<int>(body, "snap_steps", options.snap_steps);
    set = counterfactual::SearchSampling(*stored->model, query, options);
  } else if (engine == "exhaustive") {
    set = counterfactual::SearchExhaustive(*stored->model, query,
                                           Optional<int>(body, "grid_steps", 11));
  } else {
    throw BadFields{{"engine"}, "engine must be 'sampling' or 'exhaustive'"};
  }
  if (body.contains("rank")) {
    const json& w = body["rank"];
    set = ParseField(body, "rank", [&](const json&) {
      return counterfactual::RankResults(std::move(set), w.value("sparsity", 1.0),
                                         w.value("distance", 1.0));
    });
  }
  if (body.contains("session_id")) {
    auto session = FindSession(Optional<std::string>(body, "session_id", ""));
    std::lock_guard lock(session->mu);
    session->last_query = query;
  }
  return counterfactual::ToJson(schema, set);
}

json Service::Attributions(const std::string& id, const json& body) {
  const auto stored = FindModel(id);
  const FeatureSchema& schema = stored->model->schema();
  RequireFields(body, {"instance", "explainer"});
  const Instance x =
      ParseField(body, "instance", [&](const json& v) { return InstanceFromJson(schema, v); });
  attribution::Explainer explainer = ParseField(body, "explainer", [&](const json& v) {
    return attribution::Explainer::FromJson(schema, v);
  });
  const std::uint64_t seed = Optional<std::uint64_t>(body, "seed", 42);
  if (stored->data && (!explainer.baseline || explainer.background.empty())) {
    attribution::Explainer bound = attribution::BindBackground(explainer, *stored->data, seed);
    if (explainer.baseline) bound.baseline = explainer.baseline;
    explainer = std::move(bound);
  }
  std::optional<int> target;
  if (body.contains("target") && !body["target"].is_null()) {
    target = ParseField(body, "target", [&](const json& v) {
      return v.is_number_integer() ? v.get<int>() : schema.ClassIndex(v.get<std::string>());
    });
  }
  return attribution::ToJson(schema,
                             attribution::Explain(explainer, *stored->model, x, target, seed));
}

json Service::Study(const json& body) {
  RequireFields(body, {"model_ids", "explainers"});
  const auto ids = ParseField(body, "model_ids", [](const json& v) {
    auto ids = v.get<std::vector<std::string>>();
    if (ids.empty()) throw InvalidArgument("model_ids is empty");
    return ids;
  });
  std::vector<std::shared_ptr<const StoredModel>> stored;
  std::vector<ModelPtr> models;
  for (const std::string& id : ids) {
    stored.push_back(FindModel(id));
    models.push_back(stored.back()->model);
  }
  const FeatureSchema& schema = models.front()->schema();
  for (const ModelPtr& m : models) {
    if (!(m->schema() == schema)) throw InvalidArgument("models have different schemas");
  }
  std::optional<LabeledDataset> data;
  if (body.contains("data")) {
    data = ParseField(body, "data", [&](const json& v) {
      return DatasetFromStrings(v.at("csv").get<std::string>(), schema.ToJson().dump());
    });
  } else {
    for (const auto& s : stored) {
      if (s->data) {
        data = s->data;
        break;
      }
    }
  }
  if (!data) throw FailedPrecondition("no evaluation data: pass 'data' or register models with data");
  if (!data->masks) throw FailedPrecondition("evaluation data carries no relevance masks");
  verifiability::StudyOptions options;
  options.seed = Optional<std::uint64_t>(body, "seed", options.seed);
  const std::vector<verifiability::NamedExplainer> explainers =
      ParseField(body, "explainers", [&](const json& v) {
        if (!v.is_array() || v.empty()) throw InvalidArgument("explainers must be a non-empty list");
        std::vector<verifiability::NamedExplainer> out;
        for (const json& e : v) {
          attribution::Explainer ex = attribution::Explainer::FromJson(schema, e);
          ex = attribution::BindBackground(std::move(ex), *data, options.seed);
          out.push_back(verifiability::Wrap(std::string(attribution::ToString(ex.kind)), ex));
        }
        return out;
      });
  return verifiability::ToJson(verifiability::VerifiabilityStudy(models, *data, explainers, options));
}

json Service::SessionState(const Session& s) const {
  json summaries = json::array();
  for (int node : tree::Frontier(*s.tree, s.view)) {
    summaries.push_back(tree::ToJson(s.tree->schema(), s.tree->Summary(node)));
  }
  return {{"session_id", s.id},
          {"model_id", s.model_id},
          {"revision", s.revision},
          {"view", tree::ViewToJson(s.view)},
          {"render", tree::RenderJson(*s.tree, s.view)},
          {"summaries", std::move(summaries)}};
}

json Service::CreateSession(const json& body) {
  const std::string model_id = ParseField(body, "model_id", [](const json& v) {
    return v.get<std::string>();
  });
  const auto stored = FindModel(model_id);
  if (!stored->tree) throw FailedPrecondition("tree sessions need a cart-tree model");
  const int depth = Optional<int>(body, "depth", tree::kDefaultCollapseDepth);
  if (depth < 0) throw BadFields{{"depth"}, "depth must be >= 0"};

  auto session = std::make_shared<Session>();
  session->id = "s-" + NewToken();
  session->model_id = model_id;
  session->tree = stored->tree;
  session->view = tree::CollapseToDepth(*stored->tree, depth);
  session->created = clock_();
  session->expires = session->created + std::chrono::seconds(config_.session_ttl_s);
  json state = SessionState(*session);
  std::lock_guard lock(sessions_mu_);
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    it = session->created >= it->second->expires ? sessions_.erase(it) : std::next(it);
  }
  sessions_.emplace(session->id, session);
  return state;
}

json Service::GetTree(const std::string& id) {
  auto session = FindSession(id);
  std::lock_guard lock(session->mu);
  return SessionState(*session);
}

json Service::Toggle(const std::string& id, const json& body) {
  auto session = FindSession(id);
  const int node = ParseField(body, "node_id", [](const json& v) { return v.get<int>(); });
  std::optional<std::int64_t> revision;
  if (body.contains("revision")) {
    revision = ParseField(body, "revision", [](const json& v) { return v.get<std::int64_t>(); });
  }
  std::lock_guard lock(session->mu);
  if (revision && *revision != session->revision) {
    throw Conflict("stale revision " + std::to_string(*revision) + ", current is " +
                   std::to_string(session->revision));
  }
  session->view = tree::ToggleNode(*session->tree, session->view, node);
  ++session->revision;
  return SessionState(*session);
}

json Service::Route(const std::string& id, const json& body) {
  auto session = FindSession(id);
  const Instance x = ParseField(body, "instance", [&](const json& v) {
    return InstanceFromJson(session->tree->schema(), v);
  });
  std::lock_guard lock(session->mu);
  const tree::PredictionRange r = tree::RoutePrediction(*session->tree, session->view, x);
  return {{"node", r.node},
          {"revision", session->revision},
          {"summary", tree::ToJson(session->tree->schema(), r.summary)}};
}

}  // namespace xplain::service
