#ifndef XPLAIN_SERVICE_SERVICE_H_
#define XPLAIN_SERVICE_SERVICE_H_

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "xplain/core/dataset.h"
#include "xplain/core/model.h"
#include "xplain/counterfactual/counterfactual.h"
#include "xplain/tree/collapsible_tree.h"

namespace xplain::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  // Models (<id>.model.json, optional <id>.csv + <id>.schema.json) loaded at
  // startup. Empty means none.
  std::string data_dir;
  int session_ttl_s = 1800;

  void Validate() const;
};

// Reads {host?, port?, data_dir?, session_ttl_s?} from a JSON file when a
// path is given, then applies XPLAIN_HOST, XPLAIN_PORT, XPLAIN_DATA_DIR and
// XPLAIN_SESSION_TTL_S. `getenv` is injectable for tests.
ServiceConfig LoadConfig(
    const std::optional<std::filesystem::path>& file,
    const std::function<const char*(const char*)>& getenv = std::getenv);

// Transport-neutral request. `files` holds multipart parts by field name.
struct Request {
  std::string method;
  std::string path;
  std::string body;
  std::map<std::string, std::string> files;
};

struct Response {
  int status = 200;
  nlohmann::json body;  // {ok: true, data} or {ok: false, error}
};

// Status mapping: 400 malformed input (error.fields lists the offending
// payload fields), 404 unknown id or expired session, 409 leaf toggle or
// stale revision, 422 valid input the operation cannot serve.
class Service {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  explicit Service(ServiceConfig config, Clock clock = std::chrono::steady_clock::now);

  Response Handle(const Request& request);

  // Registers a model, optionally with the data it was trained on (needed by
  // edge cases, attribution backgrounds and studies). Returns its id.
  std::string AddModel(ModelPtr model, std::optional<LabeledDataset> data = std::nullopt,
                       std::optional<std::string> id = std::nullopt);
  void LoadDataDir(const std::filesystem::path& dir);

  const ServiceConfig& config() const { return config_; }
  std::size_t session_count() const;

 private:
  struct StoredModel {
    ModelPtr model;
    std::optional<LabeledDataset> data;
    std::shared_ptr<const tree::CollapsibleTree> tree;  // CART models only
  };

  struct Session {
    std::mutex mu;
    std::string id;
    std::string model_id;
    std::shared_ptr<const tree::CollapsibleTree> tree;
    tree::CollapsedView view;
    std::int64_t revision = 0;
    std::optional<counterfactual::Query> last_query;
    std::chrono::steady_clock::time_point created;
    std::chrono::steady_clock::time_point expires;
  };

  nlohmann::json Dispatch(const Request& request, int& status);

  nlohmann::json PostModel(const Request& request);
  nlohmann::json Predict(const std::string& id, const nlohmann::json& body);
  nlohmann::json EdgeCases(const std::string& id, const nlohmann::json& body);
  nlohmann::json Counterfactuals(const std::string& id, const nlohmann::json& body);
  nlohmann::json Attributions(const std::string& id, const nlohmann::json& body);
  nlohmann::json Study(const nlohmann::json& body);
  nlohmann::json CreateSession(const nlohmann::json& body);
  nlohmann::json GetTree(const std::string& id);
  nlohmann::json Toggle(const std::string& id, const nlohmann::json& body);
  nlohmann::json Route(const std::string& id, const nlohmann::json& body);

  std::shared_ptr<const StoredModel> FindModel(const std::string& id) const;
  std::shared_ptr<Session> FindSession(const std::string& id);
  nlohmann::json SessionState(const Session& session) const;
  std::string NewToken();

  ServiceConfig config_;
  Clock clock_;

  mutable std::shared_mutex models_mu_;
  std::map<std::string, std::shared_ptr<const StoredModel>> models_;

  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;

  std::mutex token_mu_;
  std::uint64_t token_state_;
};

// Binds the service to HTTP/1.1. Run() blocks; Stop() may be called from any
// thread.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  // Binds host:port (port 0 picks a free port) and returns the bound port.
  int Bind(const std::string& host, int port);
  void Run();
  void Stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace xplain::service

#endif  // XPLAIN_SERVICE_SERVICE_H_
