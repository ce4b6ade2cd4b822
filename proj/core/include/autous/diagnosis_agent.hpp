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

// Classifier output -> diagnosis opinion -> prompt -> chat backend -> report.

#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace autous::agent {

struct ClinicalContext {
  std::string chief_complaint;
  std::string physical_exam;
  std::string additional_info;

  /// Throws ValidationError when the chief complaint is blank.
  void Validate() const;
};

nlohmann::json ToJson(const ClinicalContext& ctx);
ClinicalContext ClinicalContextFromJson(const nlohmann::json& j);

enum class GuidelineTag { kBiRads5th, kAcg2022, kIdsaAts2019 };

/// "BI-RADS-5th", "ACG-2022", "IDSA-ATS-2019".
const char* GuidelineTagName(GuidelineTag tag);
GuidelineTag ParseGuidelineTag(const std::string& text);

/// Guideline family of a class id in [0, 5). Throws ValidationError otherwise.
GuidelineTag GuidelineForClass(int class_id);

/// Clinical phrase placed in the prompt, e.g. "Malignant breast lesion".
const std::string& OpinionPhrase(int class_id);

struct DiagnosisOpinion {
  int class_id = 0;
  /// Class name as used by the dataset ("Malignant").
  std::string label_text;
  /// Clinical phrase for the prompt ("Malignant breast lesion").
  std::string phrase;
  double confidence = 0;
  GuidelineTag guideline = GuidelineTag::kBiRads5th;
  /// Every class sharing the top probability; size > 1 means a tie.
  std::vector<int> tied_classes;

  bool tie() const { return tied_classes.size() > 1; }
};

nlohmann::json ToJson(const DiagnosisOpinion& opinion);
DiagnosisOpinion DiagnosisOpinionFromJson(const nlohmann::json& j);

/// Argmax of probs (exact ties go to the lowest id). class_names defaults to
/// the five corpus classes.
DiagnosisOpinion OpinionFromProbs(std::span<const double> probs,
                                  const std::vector<std::string>& class_names = {});

/// Renders the fixed prompt template. Blank optional fields become
/// "None provided". The text ends with a single newline.
std::string BuildPrompt(const DiagnosisOpinion& opinion, const ClinicalContext& ctx);
std::string BuildPrompt(const std::string& model_result, const ClinicalContext& ctx);

struct ReportSections {
  std::string preliminary_diagnosis;
  std::string justification;
  std::string follow_up;
};

struct ParseOptions {
  /// Only accept bare "Header:" at the start of a line (no markup, bullets
  /// or missing colon).
  bool strict = false;
};

/// Splits a model response into the three sections by header name
/// (case-insensitive, any order). <think> blocks are dropped first. Throws
/// MalformedOutputError naming a missing, duplicated or empty section; the
/// raw text travels in detail().
ReportSections ParseReport(std::string_view raw, const ParseOptions& options = {});

/// "Preliminary Diagnosis: ...\n\nJustification: ...\n\nRecommended
/// Follow-Up Examinations: ...\n".
std::string RenderReport(const ReportSections& sections);

struct DiagnosisReport {
  std::string preliminary_diagnosis;
  std::string justification;
  std::string follow_up;
  std::string raw_response;
  std::string model_id;
  std::int64_t latency_ms = 0;
  int attempts = 0;
};

nlohmann::json ToJson(const DiagnosisReport& report);
DiagnosisReport DiagnosisReportFromJson(const nlohmann::json& j);

enum class BackendKind { kMock, kHttpChat };

const char* BackendKindName(BackendKind kind);
BackendKind ParseBackendKind(const std::string& text);

struct LlmBackendSpec {
  BackendKind kind = BackendKind::kMock;
  /// Full chat-completions URL, e.g. http://127.0.0.1:11434/v1/chat/completions.
  std::string endpoint_url;
  std::string api_token;
  std::string model_name = "deepseek-r1:7b";
  int timeout_ms = 120000;
  int max_retries = 2;
  int backoff_ms = 250;
  double temperature = 0;
  ParseOptions parse;

  void Validate() const;
  /// Fills endpoint_url / api_token from AUTOUS_LLM_ENDPOINT / AUTOUS_LLM_TOKEN
  /// when they are empty.
  void ApplyEnvironment();
};

nlohmann::json ToJson(const LlmBackendSpec& spec);
LlmBackendSpec LlmBackendSpecFromJson(const nlohmann::json& j);

/// One chat completion per call. Implementations throw TimeoutError when
/// the call exceeds timeout_ms and BackendUnavailableError on transport or
/// server failure.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string Complete(const std::string& prompt, const LlmBackendSpec& spec) = 0;
  virtual std::string model_id(const LlmBackendSpec& spec) const { return spec.model_name; }
};

/// Scripted backend. The reply is chosen by the opinion line of the prompt:
/// an entry in `replies` whose key occurs in that line wins, otherwise the
/// canned report for the matching class phrase is returned.
class MockBackend : public ChatBackend {
 public:
  struct Script {
    std::map<std::string, std::string> replies;
    /// Simulated generation time. Exceeding timeout_ms throws TimeoutError
    /// after waiting timeout_ms.
    int delay_ms = 0;
    /// The first n calls throw BackendUnavailableError.
    int fail_first = 0;
  };

  MockBackend() = default;
  explicit MockBackend(Script script) : script_(std::move(script)) {}

  std::string Complete(const std::string& prompt, const LlmBackendSpec& spec) override;
  std::string model_id(const LlmBackendSpec& spec) const override;

  int calls() const { return calls_.load(); }

 private:
  Script script_;
  std::atomic<int> calls_{0};
};

/// OpenAI-style chat-completions client (plain http only).
class HttpChatBackend : public ChatBackend {
 public:
  std::string Complete(const std::string& prompt, const LlmBackendSpec& spec) override;
};

std::unique_ptr<ChatBackend> MakeBackend(const LlmBackendSpec& spec);

/// Canned three-section reply used by the mock for a class id.
std::string CannedReport(int class_id);

/// Sends the prompt with up to max_retries retries. Timeouts, transport
/// failures and unparseable replies are retried after backoff_ms * 2^k.
/// Exhausted retries raise BackendUnavailableError, or MalformedOutputError
/// (carrying the last raw reply) when the final attempt returned text.
DiagnosisReport GenerateReport(const std::string& prompt, ChatBackend& backend,
                               const LlmBackendSpec& spec);

}  // namespace autous::agent
