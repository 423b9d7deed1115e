// Eigen first: a resolver header pulled in by httplib defines macros that clash with Eigen internals.
#include "mgan/studio.hpp"

#include "httplib.h"

namespace mgan {

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(Studio& studio) : impl_(std::make_unique<Impl>()) {
  auto forward = [&studio](const std::string& method) {
    return [&studio, method](const httplib::Request& req, httplib::Response& res) {
      std::string target = req.path;
      std::string query;
      for (const auto& [k, v] : req.params) query += (query.empty() ? "" : "&") + httplib::detail::encode_query_param(k) + "=" +
                                                      httplib::detail::encode_query_param(v);
      if (!query.empty()) target += "?" + query;
      const ApiResponse r = studio.handle(method, target, req.body);
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
  };
  impl_->server.Get(".*", forward("GET"));
  impl_->server.Post(".*", forward("POST"));
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

void HttpServer::stop() { impl_->server.stop(); }

void serve(Studio& studio, const ServeOptions& options) {
  HttpServer server(studio);
  server.bind(options.host, options.port);
  server.listen();
}

}  // namespace mgan
