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

#include "autous/app_service.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>

#include "autous/error.hpp"
#include "autous/media_io.hpp"
#include "autous/video_data.hpp"

namespace autous::service {
namespace {

using nlohmann::json;

std::string NowIso() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

CaseStatus StatusOf(const json& payload) { return ParseCaseStatus(payload.at("status").get<std::string>()); }

void SetStatus(json& payload, CaseStatus status) {
  payload["status"] = CaseStatusName(status);
  payload["timestamps"][CaseStatusName(status)] = NowIso();
}

std::string VideoExtension(const std::string& filename, const std::string& bytes) {
  std::string ext = std::filesystem::path(filename).extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (const char* known : {".npy", ".npz", ".mp4", ".avi", ".mov", ".mkv"}) {
    if (ext == known) return ext;
  }
  if (bytes.rfind("\x93NUMPY", 0) == 0) return ".npy";
  if (bytes.rfind("PK", 0) == 0) return ".npz";
  return ".mp4";
}

json ClassificationResponse(const json& payload) {
  json out = payload.at("opinion");
  out["case_id"] = payload["case_id"];
  out["status"] = payload["status"];
  out["probs"] = payload.at("probs");
  return out;
}

json ReportResponse(const json& payload) {
  json out = payload.at("report");
  out["case_id"] = payload["case_id"];
  out["status"] = payload["status"];
  return out;
}

json ScoreResponse(const json& payload) {
  json out = payload.at("score");
  out["case_id"] = payload["case_id"];
  out["status"] = payload["status"];
  return out;
}

json PublicView(const StoreRecord& rec) {
  json out = rec.payload;
  out.erase("idempotency");
  out.erase("create_key");
  out["revision"] = rec.revision;
  return out;
}

}  // namespace

const char* CaseStatusName(CaseStatus s) {
  switch (s) {
    case CaseStatus::kCreated: return "created";
    case CaseStatus::kClassified: return "classified";
    case CaseStatus::kReported: return "reported";
    case CaseStatus::kGraded: return "graded";
    case CaseStatus::kScored: return "scored";
  }
  return "created";
}

CaseStatus ParseCaseStatus(const std::string& text) {
  for (CaseStatus s : {CaseStatus::kCreated, CaseStatus::kClassified, CaseStatus::kReported, CaseStatus::kGraded,
                       CaseStatus::kScored}) {
    if (text == CaseStatusName(s)) return s;
  }
  throw DecodeError("unknown case status: " + text);
}

const char* CaseActionName(CaseAction a) {
  switch (a) {
    case CaseAction::kUploadVideo: return "video";
    case CaseAction::kSetContext: return "context";
    case CaseAction::kClassify: return "classify";
    case CaseAction::kReport: return "report";
    case CaseAction::kGrade: return "grade";
    case CaseAction::kScore: return "score";
  }
  return "unknown";
}

CaseStatus ApplyAction(CaseStatus from, CaseAction action) {
  auto illegal = [&](const std::string& why) -> CaseStatus {
    throw TransitionError(std::string(CaseActionName(action)) + " is not allowed in status " + CaseStatusName(from) +
                          ": " + why);
  };
  switch (action) {
    case CaseAction::kUploadVideo:
      if (from == CaseStatus::kCreated) return from;
      return illegal("the video is fixed once classified");
    case CaseAction::kSetContext:
      if (from == CaseStatus::kCreated || from == CaseStatus::kClassified) return from;
      return illegal("the context is fixed once a report exists");
    case CaseAction::kClassify:
      return from == CaseStatus::kCreated ? CaseStatus::kClassified : from;
    case CaseAction::kReport:
      if (from == CaseStatus::kCreated) return illegal("classify first");
      return from == CaseStatus::kClassified ? CaseStatus::kReported : from;
    case CaseAction::kGrade:
      if (from == CaseStatus::kReported || from == CaseStatus::kGraded) return CaseStatus::kGraded;
      if (from == CaseStatus::kScored) return illegal("grading closed when the case was scored");
      return illegal("a report is required before grading");
    case CaseAction::kScore:
      if (from == CaseStatus::kGraded || from == CaseStatus::kScored) return CaseStatus::kScored;
      return illegal("grades are required before scoring");
  }
  return from;
}

InflightLimiter::InflightLimiter(int limit) : limit_(limit < 1 ? 1 : limit) {}

InflightLimiter::Slot::Slot(InflightLimiter& owner) : owner_(owner) {
  std::unique_lock lock(owner_.mu_);
  owner_.cv_.wait(lock, [&] { return owner_.active_ < owner_.limit_; });
  ++owner_.active_;
  owner_.peak_ = std::max(owner_.peak_, owner_.active_);
}

InflightLimiter::Slot::~Slot() {
  {
    std::lock_guard lock(owner_.mu_);
    --owner_.active_;
  }
  owner_.cv_.notify_one();
}

int InflightLimiter::in_flight() const {
  std::lock_guard lock(mu_);
  return active_;
}

int InflightLimiter::peak() const {
  std::lock_guard lock(mu_);
  return peak_;
}

CaseService::CaseService(ServiceOptions options, std::shared_ptr<agent::ChatBackend> backend,
                         std::shared_ptr<const model::CtuNet<float>> model, std::vector<std::string> class_names)
    : options_(std::move(options)),
      store_(options_.store_dir, options_.compact_every),
      backend_(std::move(backend)),
      model_(std::move(model)),
      class_names_(std::move(class_names)),
      limiter_(options_.llm_inflight) {
  options_.llm.Validate();
  if (!backend_) backend_ = agent::MakeBackend(options_.llm);
  if (!model_ && !options_.checkpoint_path.empty()) {
    model::Checkpoint ckpt = model::LoadCheckpoint(options_.checkpoint_path);
    model_ = std::make_shared<const model::CtuNet<float>>(model::ModelFromCheckpoint<float>(ckpt));
    if (class_names_.empty() && ckpt.metadata.contains("class_names")) {
      class_names_ = ckpt.metadata["class_names"].get<std::vector<std::string>>();
    }
  }
  if (class_names_.empty()) class_names_ = data::DefaultClassNames();
  if (class_names_.size() != 5) throw ConfigError("the service expects 5 class names");
}

StoreRecord CaseService::Load(const std::string& id) const {
  if (!IsValidCaseId(id)) throw NotFoundError("case " + id + " not found");
  std::optional<StoreRecord> rec = store_.Get(id);
  if (!rec) throw NotFoundError("case " + id + " not found");
  return *rec;
}

std::optional<json> CaseService::Replay(const StoreRecord& rec, const std::string& key) const {
  if (key.empty()) return std::nullopt;
  const json& seen = rec.payload.value("idempotency", json::object());
  if (seen.contains(key)) return std::optional<json>(std::in_place, seen[key].at("response"));
  return std::nullopt;
}

// fn(payload) returns the new payload (nullopt: nothing to write) and the
// response. Retries on stale revisions.
template <typename Fn>
json CaseService::Mutate(const std::string& id, const std::string& key, Fn&& fn) {
  for (int attempt = 0; attempt < options_.max_cas_attempts; ++attempt) {
    StoreRecord rec = Load(id);
    if (auto replay = Replay(rec, key)) return *replay;
    auto [next, response] = fn(rec.payload);
    if (!next) return response;
    (*next)["updated_at"] = NowIso();
    if (!key.empty()) (*next)["idempotency"][key] = {{"response", response}};
    try {
      store_.PutConditional(id, rec.revision, std::move(*next));
      return response;
    } catch (const ConflictError&) {
      std::this_thread::sleep_for(std::chrono::microseconds(100 << std::min(attempt, 6)));
    }
  }
  throw ConflictError("case " + id + " is being modified concurrently; retry");
}

json CaseService::CreateCase(const json& body, const std::string& key) {
  agent::ClinicalContext ctx;
  if (body.is_object() && body.contains("context")) {
    ctx = agent::ClinicalContextFromJson(body["context"]);
  } else if (body.is_object()) {
    ctx = agent::ClinicalContextFromJson(body);
  } else if (!body.is_null()) {
    throw ValidationError("request body must be a JSON object");
  }
  std::lock_guard lock(create_mu_);
  if (!key.empty()) {
    for (const StoreRecord& rec : store_.List()) {
      if (rec.payload.value("create_key", std::string()) == key) {
        return {{"case_id", rec.id}, {"status", rec.payload["status"]}};
      }
    }
  }
  std::string id = ids_.Next();
  std::string now = NowIso();
  json payload = {{"case_id", id},
                  {"status", CaseStatusName(CaseStatus::kCreated)},
                  {"created_at", now},
                  {"updated_at", now},
                  {"timestamps", {{"created", now}}},
                  {"context", agent::ToJson(ctx)},
                  {"video", nullptr},
                  {"opinion", nullptr},
                  {"probs", nullptr},
                  {"prompt", nullptr},
                  {"report", nullptr},
                  {"grade_sheet", assess::ToJson(assess::GradeSheet{})},
                  {"reference_text", nullptr},
                  {"score", nullptr}};
  if (!key.empty()) payload["create_key"] = key;
  store_.Create(id, std::move(payload));
  return {{"case_id", id}, {"status", "created"}};
}

json CaseService::UploadVideo(const std::string& id, const std::string& bytes, const std::string& filename,
                              const std::string& key) {
  if (bytes.empty()) throw ValidationError("video body is empty");
  if (bytes.size() > options_.max_upload_bytes) {
    throw ValidationError("video exceeds the upload cap of " + std::to_string(options_.max_upload_bytes) + " bytes");
  }
  StoreRecord rec = Load(id);
  if (auto replay = Replay(rec, key)) return *replay;
  ApplyAction(StatusOf(rec.payload), CaseAction::kUploadVideo);
  std::string name = id + VideoExtension(filename, bytes);
  media::WriteFileAtomic(store_.blob_dir() / name, bytes);
  return Mutate(id, key, [&](const json& p) -> std::pair<std::optional<json>, json> {
    ApplyAction(StatusOf(p), CaseAction::kUploadVideo);
    json next = p;
    next["video"] = {{"ref", "blobs/" + name}, {"filename", filename}, {"bytes", bytes.size()}};
    return {next, {{"case_id", id}, {"status", p["status"]}, {"video", next["video"]}}};
  });
}

json CaseService::SetContext(const std::string& id, const json& body, const std::string& key) {
  agent::ClinicalContext ctx = agent::ClinicalContextFromJson(body.contains("context") ? body["context"] : body);
  return Mutate(id, key, [&](const json& p) -> std::pair<std::optional<json>, json> {
    ApplyAction(StatusOf(p), CaseAction::kSetContext);
    json next = p;
    next["context"] = agent::ToJson(ctx);
    return {next, {{"case_id", id}, {"status", p["status"]}, {"context", next["context"]}}};
  });
}

json CaseService::Classify(const std::string& id, const std::string& key) {
  StoreRecord rec = Load(id);
  if (auto replay = Replay(rec, key)) return *replay;
  CaseStatus status = StatusOf(rec.payload);
  ApplyAction(status, CaseAction::kClassify);
  if (status != CaseStatus::kCreated) return ClassificationResponse(rec.payload);
  if (rec.payload["video"].is_null()) {
    throw TransitionError("classify is not allowed in status created: no video uploaded");
  }
  if (!model_) throw BackendUnavailableError("no classifier checkpoint is loaded");

  const model::ModelConfig& cfg = model_->config();
  std::filesystem::path path = store_.dir() / rec.payload["video"]["ref"].get<std::string>();
  data::VideoSample sample =
      data::LoadVideoFile(path, {cfg.input.frames, cfg.input.height, cfg.input.width});
  sample = data::ConvertChannels(sample, cfg.input.channels);
  model::Prediction<float> pred =
      model_->Predict(model::MakeBatch<float>(std::span<const data::VideoSample>(&sample, 1)));
  std::vector<double> probs(pred.probs.data(), pred.probs.data() + pred.probs.size());
  agent::DiagnosisOpinion opinion = agent::OpinionFromProbs(probs, class_names_);

  return Mutate(id, key, [&](const json& p) -> std::pair<std::optional<json>, json> {
    CaseStatus now = StatusOf(p);
    if (now != CaseStatus::kCreated) return {std::nullopt, ClassificationResponse(p)};
    json next = p;
    next["opinion"] = agent::ToJson(opinion);
    next["probs"] = probs;
    SetStatus(next, ApplyAction(now, CaseAction::kClassify));
    return {next, ClassificationResponse(next)};
  });
}

json CaseService::Report(const std::string& id, const std::string& key) {
  StoreRecord rec = Load(id);
  if (auto replay = Replay(rec, key)) return *replay;
  CaseStatus status = StatusOf(rec.payload);
  ApplyAction(status, CaseAction::kReport);
  if (status != CaseStatus::kClassified) return ReportResponse(rec.payload);

  agent::ClinicalContext ctx = agent::ClinicalContextFromJson(rec.payload["context"]);
  ctx.Validate();
  agent::DiagnosisOpinion opinion = agent::DiagnosisOpinionFromJson(rec.payload["opinion"]);
  std::string prompt = agent::BuildPrompt(opinion, ctx);
  agent::DiagnosisReport report;
  {
    InflightLimiter::Slot slot(limiter_);
    report = agent::GenerateReport(prompt, *backend_, options_.llm);
  }
  return Mutate(id, key, [&](const json& p) -> std::pair<std::optional<json>, json> {
    CaseStatus now = StatusOf(p);
    if (now != CaseStatus::kClassified) {
      ApplyAction(now, CaseAction::kReport);
      return {std::nullopt, ReportResponse(p)};
    }
    json next = p;
    next["prompt"] = prompt;
    next["report"] = agent::ToJson(report);
    SetStatus(next, ApplyAction(now, CaseAction::kReport));
    return {next, ReportResponse(next)};
  });
}

json CaseService::AddGrade(const std::string& id, const json& body, const std::string& key) {
  assess::Grade grade = assess::GradeFromJson(body);
  return Mutate(id, key, [&](const json& p) -> std::pair<std::optional<json>, json> {
    CaseStatus now = StatusOf(p);
    CaseStatus after = ApplyAction(now, CaseAction::kGrade);
    assess::GradeSheet sheet = assess::GradeSheetFromJson(p["grade_sheet"]);
    sheet.Upsert(grade);
    json next = p;
    next["grade_sheet"] = assess::ToJson(sheet);
    if (after != now) SetStatus(next, after);
    return {next, {{"case_id", id}, {"status", next["status"]}, {"grade_sheet", next["grade_sheet"]}}};
  });
}

json CaseService::Score(const std::string& id, const json& body, const std::string& key) {
  if (!body.is_object()) throw ValidationError("request body must be a JSON object");
  bool has_ref = body.contains("reference_text") && !body["reference_text"].is_null();
  bool has_meteor = body.contains("meteor") && !body["meteor"].is_null();
  if (has_ref == has_meteor) throw ValidationError("give exactly one of reference_text or meteor");
  if (has_ref && !body["reference_text"].is_string()) throw ValidationError("reference_text must be a string");
  if (has_meteor && !body["meteor"].is_number()) throw ValidationError("meteor must be a number");

  return Mutate(id, key, [&](const json& p) -> std::pair<std::optional<json>, json> {
    CaseStatus now = StatusOf(p);
    CaseStatus after = ApplyAction(now, CaseAction::kScore);
    if (now == CaseStatus::kScored) return {std::nullopt, ScoreResponse(p)};
    std::vector<assess::Grade> grades = assess::GradeSheetFromJson(p["grade_sheet"]).grades;
    assess::ScoreResult result;
    json next = p;
    if (has_ref) {
      std::string reference = body["reference_text"].get<std::string>();
      result = assess::ScoreCase(agent::DiagnosisReportFromJson(p["report"]), reference, grades);
      next["reference_text"] = reference;
    } else {
      result = assess::ScoreWithMeteor(grades, body["meteor"].get<double>());
    }
    json score = assess::ToJson(result);
    next["grade_sheet"] = score["grade_sheet"];
    score.erase("grade_sheet");
    next["score"] = score;
    SetStatus(next, after);
    return {next, ScoreResponse(next)};
  });
}

json CaseService::Get(const std::string& id) const { return PublicView(Load(id)); }

json CaseService::List(std::size_t offset, std::size_t limit) const {
  std::vector<StoreRecord> all = store_.List();
  json cases = json::array();
  for (std::size_t i = offset; i < all.size() && i < offset + limit; ++i) {
    const json& p = all[i].payload;
    json row = {{"case_id", all[i].id},
                {"status", p["status"]},
                {"created_at", p["created_at"]},
                {"updated_at", p["updated_at"]},
                {"revision", all[i].revision},
                {"label", p["opinion"].is_null() ? json(nullptr) : p["opinion"]["label"]},
                {"final", p["score"].is_null() ? json(nullptr) : p["score"]["final"]},
                {"final_2dp", p["score"].is_null() ? json(nullptr) : p["score"]["final_2dp"]}};
    cases.push_back(std::move(row));
  }
  return {{"cases", cases}, {"total", all.size()}, {"offset", offset}, {"limit", limit}};
}

json CaseService::Health() const {
  return {{"status", "ok"},
          {"model_loaded", model_ != nullptr},
          {"llm_backend", agent::BackendKindName(options_.llm.kind)},
          {"llm_inflight_limit", limiter_.limit()},
          {"class_names", class_names_}};
}

}  // namespace autous::service
