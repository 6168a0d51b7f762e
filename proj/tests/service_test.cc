#include "xplain/service/service.h"

#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "xplain/core/error.h"
#include "xplain/core/random.h"
#include "xplain/edge_case/edge_case.h"
#include "xplain/synth/synth_bench.h"

namespace xplain::service {
namespace {

using nlohmann::json;

struct Fixture {
  std::string csv;
  std::string schema;
  LabeledDataset data;
};

Fixture MakeFixture(std::uint64_t seed = 42, int n = 300) {
  synth::BenchmarkSpec spec;
  spec.n = n;
  spec.seed = seed;
  Fixture f;
  f.data = synth::Generate(spec).data;
  std::ostringstream out;
  WriteCsv(f.data, out);
  f.csv = out.str();
  f.schema = f.data.schema.ToJson().dump();
  return f;
}

Request Post(std::string path, const json& body) {
  return {"POST", std::move(path), body.dump(), {}};
}

Request Get(std::string path) { return {"GET", std::move(path), "", {}}; }

std::string Upload(Service& s, const Fixture& f, const json& options = nullptr) {
  Request r{"POST", "/models", "", {{"csv", f.csv}, {"schema", f.schema}}};
  if (!options.is_null()) r.files["options"] = options.dump();
  const Response res = s.Handle(r);
  EXPECT_EQ(res.status, 200) << res.body.dump();
  return res.body["data"]["model_id"];
}

// The first leaf on the current frontier, or -1.
int FrontierLeaf(const json& state) {
  for (const json& n : state["render"]["nodes"]) {
    if (n["leaf"].get<bool>()) return n["id"];
  }
  return -1;
}

std::vector<int> FrontierSuperleafs(const json& state) {
  std::vector<int> out;
  for (const json& n : state["render"]["nodes"]) {
    if (!n["leaf"].get<bool>() && !n["expanded"].get<bool>()) out.push_back(n["id"]);
  }
  return out;
}

TEST(ServiceTest, UploadTrainsAModel) {
  Service s({});
  const Fixture f = MakeFixture();
  Request r{"POST", "/models", "", {{"csv", f.csv}, {"schema", f.schema}}};
  const Response res = s.Handle(r);
  ASSERT_EQ(res.status, 200);
  EXPECT_TRUE(res.body["ok"].get<bool>());
  EXPECT_EQ(res.body["data"]["kind"], "cart-tree");
  EXPECT_GT(res.body["data"]["training_accuracy"].get<double>(), 0.8);

  const std::string logistic = Upload(s, f, {{"kind", "logistic"}});
  EXPECT_NE(logistic, res.body["data"]["model_id"]);
}

TEST(ServiceTest, MalformedUploadListsFields) {
  Service s({});
  const Fixture f = MakeFixture();
  Response res = s.Handle({"POST", "/models", "", {{"csv", f.csv}}});
  EXPECT_EQ(res.status, 400);
  EXPECT_FALSE(res.body["ok"].get<bool>());
  EXPECT_EQ(res.body["error"]["fields"], json::array({"schema"}));

  res = s.Handle({"POST", "/models", "", {{"csv", "inf0\n2\n"}, {"schema", f.schema}}});
  EXPECT_EQ(res.status, 400);
  EXPECT_EQ(res.body["error"]["fields"], json::array({"csv"}));

  res = s.Handle(Post("/models", json::object()));
  EXPECT_EQ(res.status, 400);
  EXPECT_EQ(res.body["error"]["fields"], json::array({"csv", "schema"}));

  res = s.Handle({"POST", "/models", "{not json", {}});
  EXPECT_EQ(res.status, 400);
}

TEST(ServiceTest, PredictAndErrors) {
  Service s({});
  const Fixture f = MakeFixture();
  const std::string id = Upload(s, f);
  Response res = s.Handle(Post("/models/" + id + "/predict",
                               {{"instance", InstanceToJson(f.data.schema, f.data.instances[0])}}));
  ASSERT_EQ(res.status, 200) << res.body.dump();
  EXPECT_EQ(res.body["data"]["proba"].size(), 2u);
  EXPECT_TRUE(res.body["data"]["class"].is_string());

  res = s.Handle(Post("/models/" + id + "/predict", {{"instance", {1, 2}}}));
  EXPECT_EQ(res.status, 400);
  EXPECT_EQ(res.body["error"]["fields"], json::array({"instance"}));

  res = s.Handle(Post("/models/nope/predict", {{"instance", {0, 0, 0, 0, 0}}}));
  EXPECT_EQ(res.status, 404);
  EXPECT_EQ(res.body["error"]["code"], "not_found");

  EXPECT_EQ(s.Handle(Get("/models/" + id + "/predict")).status, 404);
  EXPECT_EQ(s.Handle(Get("/elsewhere")).status, 404);
}

TEST(ServiceTest, CounterfactualRoundTripOverTheApi) {
  Service s({});
  const Fixture f = MakeFixture();
  for (const char* kind : {"cart", "logistic"}) {
    const std::string id = Upload(s, f, {{"kind", kind}});
    Rng rng(5);
    int checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const Instance& x = f.data.instances[UniformIndex(rng, f.data.size())];
      const json xj = InstanceToJson(f.data.schema, x);
      const json pred = s.Handle(Post("/models/" + id + "/predict", {{"instance", xj}})).body;
      const int current = pred["data"]["class_index"];
      const json query = {{"instance", xj},
                          {"target_class", 1 - current},
                          {"epsilon", 1.0},
                          {"lock", {"noise1"}},
                          {"seed", trial}};
      const Response res = s.Handle(Post("/models/" + id + "/counterfactuals", query));
      ASSERT_EQ(res.status, 200) << res.body.dump();
      for (const json& cf : res.body["data"]["results"]) {
        const json back = s.Handle(Post("/models/" + id + "/predict", {{"instance", cf["instance"]}})).body;
        EXPECT_EQ(back["data"]["class_index"].get<int>(), 1 - current);
        EXPECT_EQ(cf["instance"]["noise1"], xj["noise1"]);
        ++checked;
      }
    }
    EXPECT_GT(checked, 20) << kind;
  }
}

TEST(ServiceTest, CounterfactualInputErrors) {
  Service s({});
  const Fixture f = MakeFixture();
  const std::string id = Upload(s, f);
  const json x = InstanceToJson(f.data.schema, f.data.instances[0]);
  Response res = s.Handle(Post("/models/" + id + "/counterfactuals", {{"instance", x}}));
  EXPECT_EQ(res.status, 400);
  EXPECT_EQ(res.body["error"]["fields"], json::array({"target_class"}));

  res = s.Handle(Post("/models/" + id + "/counterfactuals",
                      {{"instance", x}, {"target_class", "c1"}, {"epsilon", -2}}));
  EXPECT_EQ(res.status, 400);
  EXPECT_EQ(res.body["error"]["fields"], json::array({"epsilon"}));

  res = s.Handle(Post("/models/" + id + "/counterfactuals",
                      {{"instance", x},
                       {"target_class", "c1"},
                       {"lock", {"inf0"}},
                       {"force_change", {"inf0"}}}));
  EXPECT_EQ(res.status, 400);
  EXPECT_EQ(res.body["error"]["fields"], json::array({"lock", "force_change"}));

  // Infeasible constraints are an empty result, not an error.
  const int current = s.Handle(Post("/models/" + id + "/predict", {{"instance", x}})).body
                          ["data"]["class_index"];
  res = s.Handle(Post("/models/" + id + "/counterfactuals",
                      {{"instance", x},
                       {"target_class", 1 - current},
                       {"lock", {"inf0", "inf1", "noise0", "noise1", "spur0"}}}));
  EXPECT_EQ(res.status, 200);
  EXPECT_TRUE(res.body["data"]["results"].empty());
}

TEST(ServiceTest, SessionLifecycle) {
  Service s({});
  const Fixture f = MakeFixture();
  const std::string id = Upload(s, f);
  Response res = s.Handle(Post("/sessions", {{"model_id", id}}));
  ASSERT_EQ(res.status, 200) << res.body.dump();
  const json created = res.body["data"];
  const std::string sid = created["session_id"];
  EXPECT_EQ(created["revision"], 0);
  // Default view: every internal node shallower than depth 2 is expanded.
  for (const json& n : created["render"]["nodes"]) {
    EXPECT_LE(n["depth"].get<int>(), 2);
  }
  EXPECT_EQ(created["summaries"].size(), created["render"]["frontier"].size());

  const json tree = s.Handle(Get("/sessions/" + sid + "/tree")).body["data"];
  EXPECT_EQ(tree["view"], created["view"]);

  const std::vector<int> closed = FrontierSuperleafs(tree);
  ASSERT_FALSE(closed.empty());
  res = s.Handle(Post("/sessions/" + sid + "/tree/toggle",
                      {{"node_id", closed[0]}, {"revision", 0}}));
  ASSERT_EQ(res.status, 200) << res.body.dump();
  EXPECT_EQ(res.body["data"]["revision"], 1);

  // Replaying the same request is stale, not applied twice.
  res = s.Handle(Post("/sessions/" + sid + "/tree/toggle",
                      {{"node_id", closed[0]}, {"revision", 0}}));
  EXPECT_EQ(res.status, 409);
  EXPECT_EQ(s.Handle(Get("/sessions/" + sid + "/tree")).body["data"]["revision"], 1);

  // Contract again: back to the initial view.
  res = s.Handle(Post("/sessions/" + sid + "/tree/toggle",
                      {{"node_id", closed[0]}, {"revision", 1}}));
  EXPECT_EQ(res.body["data"]["view"], created["view"]);

  const int leaf = FrontierLeaf(res.body["data"]);
  if (leaf >= 0) {
    res = s.Handle(Post("/sessions/" + sid + "/tree/toggle", {{"node_id", leaf}}));
    EXPECT_EQ(res.status, 409);
    EXPECT_EQ(res.body["error"]["message"], "leaf has no subtree");
  }
  EXPECT_EQ(s.Handle(Post("/sessions/" + sid + "/tree/toggle", {{"node_id", 100000}})).status,
            404);
  EXPECT_EQ(s.Handle(Post("/sessions/" + sid + "/tree/toggle", json::object())).status, 400);

  res = s.Handle(Post("/sessions/" + sid + "/tree/route",
                      {{"instance", InstanceToJson(f.data.schema, f.data.instances[3])}}));
  ASSERT_EQ(res.status, 200);
  const json frontier = s.Handle(Get("/sessions/" + sid + "/tree")).body["data"]["render"]["frontier"];
  bool on_frontier = false;
  for (const json& entry : frontier) on_frontier |= entry["node"] == res.body["data"]["node"];
  EXPECT_TRUE(on_frontier);

  EXPECT_EQ(s.Handle(Get("/sessions/unknown/tree")).status, 404);
  EXPECT_EQ(s.Handle(Post("/sessions", {{"model_id", "missing"}})).status, 404);
  const std::string logistic = Upload(s, f, {{"kind", "logistic"}});
  EXPECT_EQ(s.Handle(Post("/sessions", {{"model_id", logistic}})).status, 422);
}

TEST(ServiceTest, SessionsExpire) {
  auto now = std::chrono::steady_clock::time_point{};
  ServiceConfig config;
  config.session_ttl_s = 60;
  Service s(config, [&] { return now; });
  const std::string id = Upload(s, MakeFixture());
  const std::string sid = s.Handle(Post("/sessions", {{"model_id", id}})).body["data"]["session_id"];
  now += std::chrono::seconds(59);
  EXPECT_EQ(s.Handle(Get("/sessions/" + sid + "/tree")).status, 200);
  // Access slides the expiry forward.
  now += std::chrono::seconds(59);
  EXPECT_EQ(s.Handle(Get("/sessions/" + sid + "/tree")).status, 200);
  now += std::chrono::seconds(60);
  const Response res = s.Handle(Get("/sessions/" + sid + "/tree"));
  EXPECT_EQ(res.status, 404);
  EXPECT_EQ(s.session_count(), 0u);
}

TEST(ServiceTest, ConcurrentSessionsStayIsolated) {
  Service s({});
  const Fixture f = MakeFixture(3, 400);
  const std::string id = Upload(s, f);
  constexpr int kSessions = 6;
  constexpr int kSteps = 60;
  std::vector<std::string> sids;
  for (int i = 0; i < kSessions; ++i) {
    sids.push_back(s.Handle(Post("/sessions", {{"model_id", id}})).body["data"]["session_id"]);
  }
  // Each thread drives its own session; the final view must equal a
  // sequential replay of that thread's toggles on a fresh session.
  std::vector<std::vector<int>> applied(kSessions);
  std::vector<json> final_views(kSessions);
  std::vector<std::thread> threads;
  for (int t = 0; t < kSessions; ++t) {
    threads.emplace_back([&, t] {
      Rng rng(100 + t);
      json state = s.Handle(Get("/sessions/" + sids[t] + "/tree")).body["data"];
      for (int step = 0; step < kSteps; ++step) {
        std::vector<int> candidates;
        for (const json& n : state["render"]["nodes"]) {
          if (!n["leaf"].get<bool>()) candidates.push_back(n["id"]);
        }
        if (candidates.empty()) break;
        const int node = candidates[UniformIndex(rng, candidates.size())];
        const Response res = s.Handle(Post("/sessions/" + sids[t] + "/tree/toggle",
                                           {{"node_id", node}, {"revision", state["revision"]}}));
        ASSERT_EQ(res.status, 200) << res.body.dump();
        state = res.body["data"];
        applied[t].push_back(node);
      }
      final_views[t] = state["view"];
    });
  }
  for (auto& th : threads) th.join();
  for (int t = 0; t < kSessions; ++t) {
    const std::string fresh = s.Handle(Post("/sessions", {{"model_id", id}})).body["data"]["session_id"];
    json state;
    for (int node : applied[t]) {
      state = s.Handle(Post("/sessions/" + fresh + "/tree/toggle", {{"node_id", node}})).body["data"];
    }
    EXPECT_EQ(state["view"], final_views[t]) << "session " << t;
    EXPECT_EQ(state["revision"].get<int>(), static_cast<int>(applied[t].size()));
  }
}

TEST(ServiceTest, StaleRevisionRaceAppliesExactlyOnce) {
  Service s({});
  const std::string id = Upload(s, MakeFixture());
  const json created = s.Handle(Post("/sessions", {{"model_id", id}})).body["data"];
  const std::string sid = created["session_id"];
  const int node = FrontierSuperleafs(created).at(0);
  std::atomic<int> ok{0}, conflict{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      const Response r = s.Handle(Post("/sessions/" + sid + "/tree/toggle",
                                       {{"node_id", node}, {"revision", 0}}));
      (r.status == 200 ? ok : conflict)++;
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(ok.load(), 1);
  EXPECT_EQ(conflict.load(), 7);
}

TEST(ServiceTest, EdgeCasesMatchTheLibraryAndAreStateless) {
  Service s({});
  const Fixture f = MakeFixture();
  const std::string id = Upload(s, f);
  const json body = {{"risk", {{"kind", "class-table"}, {"risks", {{"c0", 1.0}, {"c1", 5.0}}}}},
                     {"criterion", {{"risk_threshold", 2.0}}}};
  const Response a = s.Handle(Post("/models/" + id + "/edge-cases", body));
  ASSERT_EQ(a.status, 200) << a.body.dump();
  const Response b = s.Handle(Post("/models/" + id + "/edge-cases", body));
  EXPECT_EQ(a.body, b.body);

  const auto model = TrainModel(f.data, {}).model;
  const auto risk = edge_case::RiskFunction::FromJson(f.data.schema, body["risk"]);
  const auto crit = edge_case::EdgeCriterion::FromJson(f.data.schema, body["criterion"]);
  EXPECT_EQ(a.body["data"], edge_case::ToJson(f.data.schema,
                                              edge_case::MineEdgeCases(*model, f.data, risk, crit)));

  const Response bad = s.Handle(Post("/models/" + id + "/edge-cases", {{"risk", body["risk"]}}));
  EXPECT_EQ(bad.status, 400);
  EXPECT_EQ(bad.body["error"]["fields"], json::array({"criterion"}));
}

TEST(ServiceTest, AttributionsAndStudy) {
  Service s({});
  const Fixture f = MakeFixture();
  const std::string a = Upload(s, f, {{"kind", "logistic"}});
  const std::string b = Upload(s, f, {{"kind", "cart"}, {"max_depth", 3}});
  Response res = s.Handle(Post("/models/" + a + "/attributions",
                               {{"instance", InstanceToJson(f.data.schema, f.data.instances[0])},
                                {"explainer", "ablation"}}));
  ASSERT_EQ(res.status, 200) << res.body.dump();
  EXPECT_EQ(res.body["data"]["explainer"], "feature-ablation");
  EXPECT_EQ(res.body["data"]["values"].size(), 5u);

  res = s.Handle(Post("/models/" + a + "/attributions",
                      {{"instance", InstanceToJson(f.data.schema, f.data.instances[0])},
                       {"explainer", "nonsense"}}));
  EXPECT_EQ(res.status, 400);
  EXPECT_EQ(res.body["error"]["fields"], json::array({"explainer"}));

  res = s.Handle(Post("/studies/verifiability",
                      {{"model_ids", {a, b}}, {"explainers", {"ablation", "permutation"}}}));
  ASSERT_EQ(res.status, 200) << res.body.dump();
  EXPECT_EQ(res.body["data"]["n_models"], 2);
  EXPECT_EQ(res.body["data"]["explainers"].size(), 2u);
  EXPECT_EQ(s.Handle(Post("/studies/verifiability",
                          {{"model_ids", {a, b}}, {"explainers", {"ablation", "permutation"}}}))
                .body,
            res.body);

  res = s.Handle(Post("/studies/verifiability", {{"model_ids", {a, "zzz"}}, {"explainers", {"ablation"}}}));
  EXPECT_EQ(res.status, 404);
}

TEST(ConfigTest, FileThenEnvironment) {
  const auto dir = std::filesystem::temp_directory_path() / "xplain_config_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "config.json";
  {
    std::ofstream out(path);
    out << R"({"port": 9000, "session_ttl_s": 10})";
  }
  std::map<std::string, std::string> env;
  auto getenv = [&](const char* name) -> const char* {
    auto it = env.find(name);
    return it == env.end() ? nullptr : it->second.c_str();
  };
  ServiceConfig c = LoadConfig(path, getenv);
  EXPECT_EQ(c.port, 9000);
  EXPECT_EQ(c.session_ttl_s, 10);
  env["XPLAIN_PORT"] = "9100";
  env["XPLAIN_DATA_DIR"] = dir.string();
  c = LoadConfig(path, getenv);
  EXPECT_EQ(c.port, 9100);
  EXPECT_EQ(c.data_dir, dir.string());
  env["XPLAIN_PORT"] = "90x";
  EXPECT_THROW(LoadConfig(path, getenv), Error);
  env["XPLAIN_PORT"] = "70000";
  EXPECT_THROW(LoadConfig(path, getenv), Error);
  env.clear();
  env["XPLAIN_DATA_DIR"] = (dir / "missing").string();
  EXPECT_THROW(LoadConfig(std::nullopt, getenv), Error);
  std::filesystem::remove_all(dir);
}

TEST(ConfigTest, DataDirModelsAreServed) {
  const auto dir = std::filesystem::temp_directory_path() / "xplain_data_dir_test";
  std::filesystem::create_directories(dir);
  const Fixture f = MakeFixture();
  {
    std::ofstream out(dir / "loan.model.json");
    out << TrainModel(f.data, {}).model->ToJson().dump();
  }
  ServiceConfig config;
  config.data_dir = dir.string();
  Service s(config);
  const Response res = s.Handle(Post("/models/loan/predict",
                                     {{"instance", InstanceToJson(f.data.schema, f.data.instances[0])}}));
  EXPECT_EQ(res.status, 200) << res.body.dump();
  EXPECT_EQ(s.Handle(Post("/sessions", {{"model_id", "loan"}})).status, 200);
  std::filesystem::remove_all(dir);
}

TEST(HttpTest, EndToEndOverASocket) {
  Service s({});
  HttpServer server(s);
  const int port = server.Bind("127.0.0.1", 0);
  std::thread runner([&] { server.Run(); });

  httplib::Client client("127.0.0.1", port);
  const Fixture f = MakeFixture();
  httplib::MultipartFormDataItems items = {
      {"csv", f.csv, "data.csv", "text/csv"},
      {"schema", f.schema, "schema.json", "application/json"},
  };
  auto res = client.Post("/models", items);
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  const std::string id = json::parse(res->body)["data"]["model_id"];

  const json x = InstanceToJson(f.data.schema, f.data.instances[0]);
  res = client.Post("/models/" + id + "/predict", json{{"instance", x}}.dump(), "application/json");
  ASSERT_TRUE(res);
  const int current = json::parse(res->body)["data"]["class_index"];

  // A time budget is honored end to end within 50 ms.
  const json query = {{"instance", x},
                      {"target_class", 1 - current},
                      {"budget", 100000000},
                      {"max_results", 0},
                      {"time_budget_ms", 20}};
  const auto start = std::chrono::steady_clock::now();
  res = client.Post("/models/" + id + "/counterfactuals", query.dump(), "application/json");
  const double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start).count();
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_TRUE(json::parse(res->body)["data"]["stats"]["time_budget_hit"].get<bool>());
  EXPECT_LT(ms, 20 + 50);

  res = client.Post("/sessions", json{{"model_id", id}}.dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  res = client.Get("/sessions/nope/tree");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
  EXPECT_FALSE(json::parse(res->body)["ok"].get<bool>());

  server.Stop();
  runner.join();
}

}  // namespace
}  // namespace xplain::service
