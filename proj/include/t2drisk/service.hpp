#pragma once

// HTTP front end for the published model. Handlers are plain functions of
// the request so they can be exercised without a socket.

// Eigen must precede httplib: <resolv.h> defines a `_res` macro.
#include "t2drisk/risk_engine.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include "t2drisk/hash.hpp"

namespace t2drisk {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::string> cors_origin;  // e.g. the UI origin; unset disables CORS headers
  std::ostream* access_log = nullptr;      // method, path, status and size only
};

struct ServiceResponse {
  int status = 200;
  std::string body;
  std::string etag;
};

inline std::string error_body(int status, const std::string& message,
                              const std::map<std::string, std::string>& fields = {}) {
  nlohmann::json j = {{"error", {{"status", status}, {"message", message}}}};
  if (!fields.empty()) j["error"]["fields"] = fields;
  return j.dump();
}

class ScoringService {
 public:
  explicit ScoringService(PublishedModel model, ServiceOptions opts = {})
      : model_(std::move(model)), opts_(std::move(opts)) {
    model_body_ = to_json(model_).dump();
    etag_ = "\"" + sha256_hex(model_body_) + "\"";
  }

  const PublishedModel& model() const { return model_; }
  const std::string& etag() const { return etag_; }

  ServiceResponse health() const {
    return {200, nlohmann::json{{"status", "ok"}, {"model_version", model_.version}}.dump(), {}};
  }

  ServiceResponse model_info() const { return {200, model_body_, etag_}; }

  ServiceResponse score(std::string_view body) const {
    return guarded([&] {
      const auto record = record_from_json(parse(body));
      return render_score(model_, record).dump();
    });
  }

  ServiceResponse whatif(std::string_view body) const {
    return guarded([&] {
      const auto j = parse(body);
      if (!j.is_object()) throw FieldError("(body)", "expected a JSON object");
      std::map<std::string, std::string> problems;
      for (const auto& [key, _] : j.items())
        if (key != "base" && key != "modifications" && key != "override_non_modifiable")
          problems[key] = "unknown field";
      if (!j.contains("base")) problems["base"] = "missing";
      if (!j.contains("modifications")) problems["modifications"] = "missing";
      if (j.contains("override_non_modifiable") && !j["override_non_modifiable"].is_boolean())
        problems["override_non_modifiable"] = "expected boolean";
      if (!problems.empty()) throw FieldError(std::move(problems));
      const auto base = record_from_json(j["base"]);
      const auto mods = modifications_from_json(j["modifications"]);
      const bool allow = j.value("override_non_modifiable", false);
      return render_whatif(model_, base, mods, allow).dump();
    });
  }

  /// Registers the /v1 routes on `server`.
  void install(httplib::Server& server) const {
    auto json_post = [this](auto handler) {
      return [this, handler](const httplib::Request& req, httplib::Response& res) {
        const auto type = req.get_header_value("Content-Type");
        if (type.rfind("application/json", 0) != 0) {
          send(res, {415, error_body(415, "Content-Type must be application/json"), {}});
          return;
        }
        send(res, (this->*handler)(req.body));
      };
    };
    server.Post("/v1/score", json_post(&ScoringService::score));
    server.Post("/v1/whatif", json_post(&ScoringService::whatif));
    server.Get("/v1/model", [this](const httplib::Request& req, httplib::Response& res) {
      if (req.get_header_value("If-None-Match") == etag_) {
        res.status = 304;
        res.set_header("ETag", etag_);
        return;
      }
      send(res, model_info());
    });
    server.Get("/v1/health",
               [this](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    if (opts_.cors_origin) {
      server.Options(R"(/v1/.*)", [this](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", *opts_.cors_origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type, If-None-Match");
        res.status = 204;
      });
    }
    server.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
      if (opts_.cors_origin) {
        res.set_header("Access-Control-Allow-Origin", *opts_.cors_origin);
        res.set_header("Vary", "Origin");
      }
    });
    if (opts_.access_log) {
      server.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
        *opts_.access_log << nlohmann::json{{"method", req.method},
                                            {"path", req.path},
                                            {"status", res.status},
                                            {"bytes", res.body.size()}}
                                 .dump()
                          << std::endl;
      });
    }
  }

  /// Blocks until the server stops.
  bool listen(httplib::Server& server) const {
    install(server);
    return server.listen(opts_.host, opts_.port);
  }

 private:
  static nlohmann::json parse(std::string_view body) {
    try {
      return nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw FieldError("(body)", std::string("invalid JSON: ") + e.what());
    }
  }

  template <class F>
  static ServiceResponse guarded(F&& f) {
    try {
      return {200, f(), {}};
    } catch (const FieldError& e) {
      return {400, error_body(400, "invalid request", e.problems()), {}};
    } catch (const NotModifiableError& e) {
      return {409, error_body(409, e.what()), {}};
    } catch (const RangeError& e) {
      return {422, error_body(422, e.what()), {}};
    } catch (const UsageError& e) {
      return {400, error_body(400, e.what()), {}};
    } catch (const std::exception& e) {
      return {500, error_body(500, e.what()), {}};
    }
  }

  static void send(httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    if (!r.etag.empty()) res.set_header("ETag", r.etag);
    res.set_content(r.body, "application/json");
  }

  PublishedModel model_;
  ServiceOptions opts_;
  std::string model_body_;
  std::string etag_;
};

}  // namespace t2drisk
