// Copyright 2026 The autous Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <httplib.h>

#include "autous/app_service.hpp"
#include "autous/error.hpp"

namespace autous::service {
namespace {

using nlohmann::json;

constexpr const char* kJson = "application/json";

json ParseBody(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded()) throw ValidationError("request body is not valid JSON");
  return body;
}

std::size_t QueryNumber(const httplib::Request& req, const char* name, std::size_t fallback) {
  if (!req.has_param(name)) return fallback;
  const std::string value = req.get_param_value(name);
  try {
    std::size_t used = 0;
    long long n = std::stoll(value, &used);
    if (used != value.size() || n < 0) throw std::invalid_argument(value);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ValidationError(std::string("query parameter ") + name + " must be a non-negative integer");
  }
}

}  // namespace

int HttpStatusFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation:
    case ErrorKind::kConfig:
    case ErrorKind::kDecode: return 400;
    case ErrorKind::kNotFound: return 404;
    case ErrorKind::kConflict:
    case ErrorKind::kTransition: return 409;
    case ErrorKind::kMalformedOutput: return 422;
    case ErrorKind::kBackendUnavailable:
    case ErrorKind::kTimeout: return 502;
    case ErrorKind::kIo:
    case ErrorKind::kDivergence:
    case ErrorKind::kInternal: return 500;
  }
  return 500;
}

json ErrorBody(const std::string& code, const std::string& message, const std::string& detail) {
  return {{"code", code}, {"message", message}, {"detail", detail}};
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(std::shared_ptr<CaseService> service, HttpOptions options)
    : impl_(std::make_unique<Impl>()), service_(std::move(service)), options_(std::move(options)) {
  httplib::Server& srv = impl_->server;
  srv.set_payload_max_length(service_->options().max_upload_bytes + 4096);

  auto handle = [this](int ok_status, auto fn) {
    return [this, ok_status, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        if (!options_.token.empty() && req.get_header_value("Authorization") != "Bearer " + options_.token) {
          res.status = 401;
          res.set_content(ErrorBody("unauthorized", "missing or invalid bearer token").dump(), kJson);
          return;
        }
        json out = fn(req);
        res.status = ok_status;
        res.set_content(out.dump(), kJson);
      } catch (const Error& e) {
        res.status = HttpStatusFor(e.kind());
        res.set_content(ErrorBody(ErrorKindName(e.kind()), e.what(), e.detail()).dump(), kJson);
      } catch (const json::exception& e) {
        res.status = 400;
        res.set_content(ErrorBody("validation", std::string("malformed request field: ") + e.what()).dump(), kJson);
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(ErrorBody("internal", e.what()).dump(), kJson);
      }
    };
  };
  auto key = [](const httplib::Request& req) { return req.get_header_value("Idempotency-Key"); };
  const std::string id = "/api/cases/([0-9A-Za-z]+)";

  srv.Get("/api/health", handle(200, [this](const httplib::Request&) { return service_->Health(); }));
  srv.Get("/api/cases", handle(200, [this](const httplib::Request& req) {
            return service_->List(QueryNumber(req, "offset", 0), QueryNumber(req, "limit", 100));
          }));
  srv.Post("/api/cases", handle(201, [this, key](const httplib::Request& req) {
             return service_->CreateCase(ParseBody(req), key(req));
           }));
  srv.Get(id, handle(200, [this](const httplib::Request& req) { return service_->Get(req.matches[1]); }));
  srv.Post(id + "/video", handle(200, [this, key](const httplib::Request& req) {
             if (req.is_multipart_form_data()) {
               if (!req.has_file("file")) throw ValidationError("multipart upload needs a 'file' part");
               const httplib::MultipartFormData part = req.get_file_value("file");
               return service_->UploadVideo(req.matches[1], part.content, part.filename, key(req));
             }
             std::string filename = req.has_param("filename") ? req.get_param_value("filename")
                                                              : req.get_header_value("X-Filename");
             return service_->UploadVideo(req.matches[1], req.body, filename, key(req));
           }));
  srv.Post(id + "/context", handle(200, [this, key](const httplib::Request& req) {
             return service_->SetContext(req.matches[1], ParseBody(req), key(req));
           }));
  srv.Post(id + "/classify", handle(200, [this, key](const httplib::Request& req) {
             return service_->Classify(req.matches[1], key(req));
           }));
  srv.Post(id + "/report", handle(200, [this, key](const httplib::Request& req) {
             return service_->Report(req.matches[1], key(req));
           }));
  srv.Post(id + "/grades", handle(200, [this, key](const httplib::Request& req) {
             return service_->AddGrade(req.matches[1], ParseBody(req), key(req));
           }));
  srv.Post(id + "/score", handle(200, [this, key](const httplib::Request& req) {
             return service_->Score(req.matches[1], ParseBody(req), key(req));
           }));
  srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", options_.cors_origin);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, Idempotency-Key, Authorization, X-Filename");
  });
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    std::string code = res.status == 404   ? "not_found"
                       : res.status == 413 ? "payload_too_large"
                                           : "http_" + std::to_string(res.status);
    res.set_content(ErrorBody(code, httplib::status_message(res.status)).dump(), kJson);
  });
}

HttpServer::~HttpServer() { Stop(); }

int HttpServer::Bind() {
  httplib::Server& srv = impl_->server;
  if (options_.port == 0) {
    port_ = srv.bind_to_any_port(options_.host);
    if (port_ < 0) throw IoError("cannot bind " + options_.host);
  } else {
    if (!srv.bind_to_port(options_.host, options_.port)) {
      throw IoError("cannot bind " + options_.host + ":" + std::to_string(options_.port));
    }
    port_ = options_.port;
  }
  return port_;
}

int HttpServer::Start() {
  int port = Bind();
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void HttpServer::Run() {
  Bind();
  impl_->server.listen_after_bind();
}

void HttpServer::Stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace autous::service
