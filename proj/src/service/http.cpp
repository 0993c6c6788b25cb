// Room for bursts of simultaneous annotators.
#define CPPHTTPLIB_LISTEN_BACKLOG 512
#include <httplib.h>

#include "guilt/common/error.hpp"
#include "guilt/service/service.hpp"

namespace guilt::service {

namespace {

constexpr const char* kJson = "application/json";

void reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void reject(httplib::Response& res, Rejection kind, const std::string& message) {
  reply(res, http_status(kind), Json{{"error", to_string(kind)}, {"message", message}});
}

// Runs a handler and turns typed rejections into JSON error replies.
template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const Rejected& e) {
    reject(res, e.kind, e.what());
  } catch (const Json::exception& e) {
    reject(res, Rejection::Schema, e.what());
  } catch (const std::exception& e) {
    reply(res, 500, Json{{"error", "internal"}, {"message", e.what()}});
  }
}

Json parse_body(const std::string& body) {
  if (body.empty()) return Json::object();
  try {
    return Json::parse(body);
  } catch (const Json::parse_error& e) {
    throw Rejected(Rejection::Schema, std::string("request body is not valid JSON: ") + e.what());
  }
}

}  // namespace

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(AnnotationService& service) : impl_(std::make_unique<Impl>()) {
  auto& s = impl_->server;
  s.Get("/health", [&service](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, service.health()); });
  });
  s.Post("/participants", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 201, Json{{"participant_id", service.register_participant(parse_body(req.body))}}); });
  });
  s.Post("/sessions", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const Json body = parse_body(req.body);
      if (!body.is_object() || !body.contains("participant_id") || !body.at("participant_id").is_string()) {
        throw Rejected(Rejection::Schema, "participant_id required");
      }
      reply(res, 200, service.assign_session(body.at("participant_id").get<std::string>()));
    });
  });
  s.Get(R"(/sessions/([A-Za-z0-9-]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, service.get_session(req.matches[1])); });
  });
  s.Get(R"(/sessions/([A-Za-z0-9-]+)/submission)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      res.status = 200;
      res.set_content(service.submission_body(req.matches[1]), kJson);
    });
  });
  s.Post(R"(/sessions/([A-Za-z0-9-]+)/submit)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 201, service.submit(req.matches[1], req.body)); });
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw InvalidInput("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace guilt::service
