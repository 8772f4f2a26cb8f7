#pragma once

// HTTP routes for the service facade. All payloads are JSON.

#include <functional>
#include <string>

#include "steer/service.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose `_res` macro breaks Eigen.
#include "httplib.h"

namespace steer::service {

namespace detail {

inline void reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

inline Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const Json::parse_error& e) {
    throw bad_request(std::string("request body is not valid JSON: ") + e.what());
  }
}

using Handler = std::function<Json(const httplib::Request&)>;

inline httplib::Server::Handler wrap(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      reply(res, 200, h(req));
    } catch (const ServiceError& e) {
      reply(res, e.status(), e.to_json());
    } catch (const std::invalid_argument& e) {
      reply(res, 400, Json{{"error", e.what()}, {"status", 400}});
    } catch (const std::out_of_range& e) {
      reply(res, 400, Json{{"error", e.what()}, {"status", 400}});
    } catch (const std::exception& e) {
      reply(res, 500, Json{{"error", e.what()}, {"status", 500}});
    }
  };
}

}  // namespace detail

inline void register_routes(httplib::Server& server, Service& service) {
  using detail::parse_body;
  using detail::wrap;
  server.Post("/api/session", wrap([&](const httplib::Request& r) { return service.create_session(parse_body(r)); }));
  server.Get("/api/session/:id",
             wrap([&](const httplib::Request& r) { return service.get_session(r.path_params.at("id")); }));
  server.Post("/api/session/:id/turn", wrap([&](const httplib::Request& r) {
                return service.post_turn(r.path_params.at("id"), parse_body(r));
              }));
  server.Post("/api/session/:id/choose", wrap([&](const httplib::Request& r) {
                return service.choose(r.path_params.at("id"), parse_body(r));
              }));
  server.Post("/api/generate", wrap([&](const httplib::Request& r) { return service.generate(parse_body(r)); }));
  server.Get("/api/cg/grid", wrap([&](const httplib::Request& r) {
               std::size_t topk = 3;
               if (r.has_param("topk")) {
                 try {
                   topk = std::stoul(r.get_param_value("topk"));
                 } catch (const std::exception&) {
                   throw bad_request("topk must be a positive integer");
                 }
               }
               return service.grid(topk);
             }));
  server.Post("/api/cg/posterior", wrap([&](const httplib::Request& r) { return service.posterior(parse_body(r)); }));
  server.Get("/api/personas", wrap([&](const httplib::Request&) { return service.personas(); }));
  server.Get("/api/health", wrap([](const httplib::Request&) { return Json{{"ok", true}}; }));
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      detail::reply(res, res.status, Json{{"error", "no such endpoint"}, {"status", res.status}});
    }
  });
}

}  // namespace steer::service
