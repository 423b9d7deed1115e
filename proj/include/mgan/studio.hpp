#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mgan/checkpoint.hpp"
#include "mgan/study.hpp"

namespace mgan {

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

int http_status(ErrorCode code);
/// {"error": {"code", "message", "detail"}} with the mapped status.
ApiResponse error_response(ErrorCode code, const std::string& message, const std::string& detail = "");

struct StudioOptions {
  std::optional<StudyDataset> study;
  /// Directory served at "/" (the UI bundle); empty disables static hosting.
  std::filesystem::path static_dir;
};

/// Transport-independent JSON API over one loaded model. Every handler is
/// reachable through handle(), which the HTTP server and the tests share.
class Studio {
 public:
  Studio(ModelBundle bundle, StudioOptions options = {});

  ApiResponse handle(const std::string& method, const std::string& target, const std::string& body = "");

  const ModelBundle& bundle() const { return bundle_; }
  static nlohmann::json schema();

 private:
  struct Latent {
    LatentRecord record;
    std::vector<GlobalEdit> chain;
  };
  struct StudySession {
    std::string task;
    std::unique_ptr<BinarySession> binary;
    std::unique_ptr<DiscriminationSession> discrimination;
    std::mutex mutex;
  };

  nlohmann::json sample(const nlohmann::json& req);
  nlohmann::json components() const;
  nlohmann::json edit_global(const nlohmann::json& req);
  nlohmann::json clusters(const std::map<std::string, std::string>& query);
  nlohmann::json edit_local(const nlohmann::json& req);
  nlohmann::json study_session(const nlohmann::json& req);
  nlohmann::json study_next(const std::map<std::string, std::string>& query);
  nlohmann::json study_answer(const nlohmann::json& req);
  nlohmann::json study_report(const std::map<std::string, std::string>& query);
  ApiResponse image(const std::string& id) const;
  ApiResponse study_image(const std::string& id) const;
  ApiResponse static_file(const std::string& path) const;

  std::string store_image(const Tensor& image);
  std::string store_latent(Latent latent);
  Latent latent(const std::string& id) const;
  LatentW latent_w(const Latent& l) const;
  StudySession& session(const std::string& id);
  const StudyDataset& dataset() const;

  ModelBundle bundle_;
  StudioOptions options_;
  std::string checkpoint_id_;
  mutable std::mutex store_mutex_;
  std::map<std::string, std::string> images_;
  std::map<std::string, Latent> latents_;
  std::mutex session_mutex_;
  std::map<std::string, std::unique_ptr<StudySession>> sessions_;
  std::uint64_t session_counter_ = 0;
};

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// HTTP front end over a Studio. listen() blocks until stop() is called
/// from another thread.
class HttpServer {
 public:
  explicit HttpServer(Studio& studio);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  void listen();
  /// Returns once listen() is accepting connections.
  void wait_until_ready() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocks serving `studio` over HTTP until the process is stopped.
void serve(Studio& studio, const ServeOptions& options);

}  // namespace mgan
