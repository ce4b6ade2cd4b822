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

// Case workflow service: video -> classification -> report -> grades ->
// score, persisted in a CaseStore, plus its HTTP front end.
//
//   created --classify--> classified --report--> reported --grade--> graded
//   graded --score--> scored
//
// Repeating classify, report or score on a case that already passed that step
// returns the stored result.

#pragma once

#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "autous/assessment.hpp"
#include "autous/case_store.hpp"
#include "autous/checkpoint.hpp"
#include "autous/ctu_net.hpp"
#include "autous/diagnosis_agent.hpp"

namespace autous::service {

enum class CaseStatus { kCreated, kClassified, kReported, kGraded, kScored };

const char* CaseStatusName(CaseStatus status);
CaseStatus ParseCaseStatus(const std::string& text);

enum class CaseAction { kUploadVideo, kSetContext, kClassify, kReport, kGrade, kScore };

const char* CaseActionName(CaseAction action);

/// Status after applying action. Throws TransitionError when the action is
/// not allowed in `from`. Never returns a status earlier than `from`.
CaseStatus ApplyAction(CaseStatus from, CaseAction action);

/// Blocks callers beyond `limit` concurrent holders.
class InflightLimiter {
 public:
  explicit InflightLimiter(int limit);

  class Slot {
   public:
    explicit Slot(InflightLimiter& owner);
    ~Slot();
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    InflightLimiter& owner_;
  };

  int limit() const { return limit_; }
  int in_flight() const;
  int peak() const;

 private:
  int limit_;
  int active_ = 0;
  int peak_ = 0;
  mutable std::mutex mu_;
  std::condition_variable cv_;
};

struct ServiceOptions {
  std::filesystem::path store_dir;
  /// Classifier checkpoint loaded once at startup; classify fails without one.
  std::string checkpoint_path;
  agent::LlmBackendSpec llm;
  int llm_inflight = 2;
  std::size_t max_upload_bytes = 64u << 20;
  int compact_every = 64;
  /// Attempts of the read-modify-conditional-write loop per request.
  int max_cas_attempts = 16;
};

/// Transport-independent request handlers. Bodies and results are JSON;
/// failures are thrown as autous::Error. idempotency_key may be empty.
class CaseService {
 public:
  /// backend defaults to MakeBackend(options.llm); model defaults to the
  /// checkpoint at options.checkpoint_path when set.
  explicit CaseService(ServiceOptions options, std::shared_ptr<agent::ChatBackend> backend = nullptr,
                       std::shared_ptr<const model::CtuNet<float>> model = nullptr,
                       std::vector<std::string> class_names = {});

  nlohmann::json CreateCase(const nlohmann::json& body, const std::string& idempotency_key = {});
  nlohmann::json UploadVideo(const std::string& id, const std::string& bytes, const std::string& filename,
                             const std::string& idempotency_key = {});
  nlohmann::json SetContext(const std::string& id, const nlohmann::json& body,
                            const std::string& idempotency_key = {});
  nlohmann::json Classify(const std::string& id, const std::string& idempotency_key = {});
  nlohmann::json Report(const std::string& id, const std::string& idempotency_key = {});
  nlohmann::json AddGrade(const std::string& id, const nlohmann::json& body,
                          const std::string& idempotency_key = {});
  /// body: {"reference_text": ...} or {"meteor": m} for a precomputed value.
  nlohmann::json Score(const std::string& id, const nlohmann::json& body, const std::string& idempotency_key = {});

  nlohmann::json Get(const std::string& id) const;
  nlohmann::json List(std::size_t offset = 0, std::size_t limit = 100) const;
  nlohmann::json Health() const;

  const ServiceOptions& options() const { return options_; }
  bool has_model() const { return model_ != nullptr; }
  const InflightLimiter& llm_limiter() const { return limiter_; }

 private:
  StoreRecord Load(const std::string& id) const;
  std::optional<nlohmann::json> Replay(const StoreRecord& rec, const std::string& key) const;
  template <typename Fn>
  nlohmann::json Mutate(const std::string& id, const std::string& key, Fn&& fn);

  ServiceOptions options_;
  CaseStore store_;
  UlidGenerator ids_;
  std::shared_ptr<agent::ChatBackend> backend_;
  std::shared_ptr<const model::CtuNet<float>> model_;
  std::vector<std::string> class_names_;
  InflightLimiter limiter_;
  std::mutex create_mu_;
};

/// HTTP status for an error kind (400, 404, 409, 422, 502, 500).
int HttpStatusFor(ErrorKind kind);

/// {code, message, detail}.
nlohmann::json ErrorBody(const std::string& code, const std::string& message, const std::string& detail = {});

struct HttpOptions {
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
  /// When set, requests must carry "Authorization: Bearer <token>".
  std::string token;
  std::string cors_origin = "*";
};

class HttpServer {
 public:
  HttpServer(std::shared_ptr<CaseService> service, HttpOptions options);
  ~HttpServer();

  /// Binds and serves on a background thread; returns the bound port.
  int Start();
  /// Binds and serves on the calling thread until Stop().
  void Run();
  void Stop();
  int port() const { return port_; }

 private:
  struct Impl;
  int Bind();

  std::unique_ptr<Impl> impl_;
  std::shared_ptr<CaseService> service_;
  HttpOptions options_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace autous::service
