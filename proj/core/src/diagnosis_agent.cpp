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

#include "autous/diagnosis_agent.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <optional>
#include <thread>

#include <httplib.h>

#include "autous/error.hpp"
#include "autous/video_data.hpp"

namespace autous::agent {
namespace {

constexpr std::array<const char*, 5> kPhrases = {
    "Benign breast lesion", "Malignant breast lesion", "Gallbladder disease",
    "COVID-19 pneumonia", "Bacterial pneumonia"};

constexpr const char* kOpinionLabel = "Ultrasound Imaging Diagnosis Opinion: ";
constexpr const char* kNoneProvided = "None provided";

bool IsBlank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string_view Trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string Lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string SlotValue(const std::string& value) {
  return IsBlank(value) ? std::string(kNoneProvided) : value;
}

enum Section { kPreliminary = 0, kJustification = 1, kFollowUp = 2 };

constexpr std::array<const char*, 3> kHeaders = {
    "Preliminary Diagnosis", "Justification", "Recommended Follow-Up Examinations"};

struct HeaderHit {
  Section section;
  std::size_t content_start;  // offset within the line
};

bool IsMarkup(char c) { return c == '*' || c == '_'; }

std::optional<HeaderHit> MatchHeader(std::string_view line, bool strict) {
  std::size_t p = 0;
  auto skip_ws = [&] {
    while (p < line.size() && (line[p] == ' ' || line[p] == '\t')) ++p;
  };
  auto skip_markup = [&] {
    while (p < line.size() && (IsMarkup(line[p]) || line[p] == ' ' || line[p] == '\t')) ++p;
  };
  if (!strict) {
    skip_ws();
    if (p + 1 < line.size() && (line[p] == '-' || line[p] == '*' || line[p] == '+') &&
        (line[p + 1] == ' ' || line[p + 1] == '\t')) {
      p += 2;
    } else if (line.substr(p, 3) == "\xE2\x80\xA2") {
      p += 3;
    } else if (p < line.size() && line[p] == '#') {
      while (p < line.size() && line[p] == '#') ++p;
    } else {
      std::size_t q = p;
      while (q < line.size() && std::isdigit(static_cast<unsigned char>(line[q]))) ++q;
      if (q > p && q < line.size() && (line[q] == '.' || line[q] == ')')) p = q + 1;
    }
    skip_markup();
  }
  std::string rest = Lower(line.substr(p));
  for (int s = 0; s < 3; ++s) {
    std::vector<std::string> names = {Lower(kHeaders[s])};
    if (!strict && s == kFollowUp) names.push_back("recommended follow up examinations");
    for (const std::string& name : names) {
      if (rest.compare(0, name.size(), name) != 0) continue;
      std::size_t q = p + name.size();
      if (strict) {
        if (q < line.size() && line[q] == ':') return HeaderHit{Section(s), q + 1};
        continue;
      }
      while (q < line.size() && (IsMarkup(line[q]) || line[q] == ' ' || line[q] == '\t')) ++q;
      if (q < line.size() && line[q] == ':') {
        ++q;
        while (q < line.size() && (IsMarkup(line[q]) || line[q] == ' ' || line[q] == '\t')) ++q;
        return HeaderHit{Section(s), q};
      }
      if (q == line.size()) return HeaderHit{Section(s), q};
    }
  }
  return std::nullopt;
}

std::string StripThink(std::string_view raw) {
  std::string text(raw);
  for (;;) {
    std::string low = Lower(text);
    std::size_t open = low.find("<think>");
    std::size_t close = low.find("</think>");
    if (close != std::string::npos && (open == std::string::npos || close < open)) {
      text.erase(0, close + 8);
      continue;
    }
    if (open == std::string::npos) break;
    if (close == std::string::npos) {
      text.erase(open);
      break;
    }
    text.erase(open, close + 8 - open);
  }
  return text;
}

struct ParsedUrl {
  std::string origin;  // scheme://host:port
  std::string path;
};

ParsedUrl ParseUrl(const std::string& url) {
  std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("invalid endpoint url: " + url);
  std::string scheme = Lower(url.substr(0, scheme_end));
  if (scheme != "http") {
    throw ConfigError("unsupported endpoint scheme '" + scheme + "' (only http is built in)");
  }
  std::size_t path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (out.origin.size() <= scheme_end + 3) throw ConfigError("invalid endpoint url: " + url);
  return out;
}

}  // namespace

void ClinicalContext::Validate() const {
  if (IsBlank(chief_complaint)) throw ValidationError("chief_complaint must not be empty");
}

nlohmann::json ToJson(const ClinicalContext& ctx) {
  return {{"chief_complaint", ctx.chief_complaint},
          {"physical_exam", ctx.physical_exam},
          {"additional_info", ctx.additional_info}};
}

ClinicalContext ClinicalContextFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("clinical context must be an object");
  ClinicalContext ctx;
  auto field = [&](const char* key, std::string& out) {
    if (!j.contains(key) || j[key].is_null()) return;
    if (!j[key].is_string()) throw ValidationError(std::string(key) + " must be a string");
    out = j[key].get<std::string>();
  };
  field("chief_complaint", ctx.chief_complaint);
  field("physical_exam", ctx.physical_exam);
  field("additional_info", ctx.additional_info);
  return ctx;
}

const char* GuidelineTagName(GuidelineTag tag) {
  switch (tag) {
    case GuidelineTag::kBiRads5th: return "BI-RADS-5th";
    case GuidelineTag::kAcg2022: return "ACG-2022";
    case GuidelineTag::kIdsaAts2019: return "IDSA-ATS-2019";
  }
  return "BI-RADS-5th";
}

GuidelineTag ParseGuidelineTag(const std::string& text) {
  for (GuidelineTag t : {GuidelineTag::kBiRads5th, GuidelineTag::kAcg2022, GuidelineTag::kIdsaAts2019}) {
    if (text == GuidelineTagName(t)) return t;
  }
  throw ValidationError("unknown guideline tag: " + text);
}

GuidelineTag GuidelineForClass(int class_id) {
  switch (class_id) {
    case 0:
    case 1: return GuidelineTag::kBiRads5th;
    case 2: return GuidelineTag::kAcg2022;
    case 3:
    case 4: return GuidelineTag::kIdsaAts2019;
    default: throw ValidationError("class id out of range: " + std::to_string(class_id));
  }
}

const std::string& OpinionPhrase(int class_id) {
  static const std::array<std::string, 5> phrases = {kPhrases[0], kPhrases[1], kPhrases[2], kPhrases[3],
                                                     kPhrases[4]};
  if (class_id < 0 || class_id >= 5) {
    throw ValidationError("class id out of range: " + std::to_string(class_id));
  }
  return phrases[static_cast<std::size_t>(class_id)];
}

nlohmann::json ToJson(const DiagnosisOpinion& o) {
  return {{"class_id", o.class_id},       {"label", o.label_text},
          {"phrase", o.phrase},           {"confidence", o.confidence},
          {"guideline", GuidelineTagName(o.guideline)}, {"tied_classes", o.tied_classes}};
}

DiagnosisOpinion DiagnosisOpinionFromJson(const nlohmann::json& j) {
  DiagnosisOpinion o;
  o.class_id = j.at("class_id").get<int>();
  o.label_text = j.at("label").get<std::string>();
  o.phrase = j.at("phrase").get<std::string>();
  o.confidence = j.at("confidence").get<double>();
  o.guideline = ParseGuidelineTag(j.at("guideline").get<std::string>());
  o.tied_classes = j.value("tied_classes", std::vector<int>{o.class_id});
  return o;
}

DiagnosisOpinion OpinionFromProbs(std::span<const double> probs, const std::vector<std::string>& class_names) {
  const std::vector<std::string>& names = class_names.empty() ? data::DefaultClassNames() : class_names;
  if (probs.size() != names.size() || probs.size() != 5) {
    throw ValidationError("expected 5 class probabilities, got " + std::to_string(probs.size()));
  }
  DiagnosisOpinion o;
  double best = probs[0];
  for (std::size_t c = 1; c < probs.size(); ++c) best = std::max(best, probs[c]);
  for (std::size_t c = 0; c < probs.size(); ++c) {
    if (probs[c] == best) o.tied_classes.push_back(static_cast<int>(c));
  }
  o.class_id = o.tied_classes.front();
  o.label_text = names[static_cast<std::size_t>(o.class_id)];
  o.phrase = OpinionPhrase(o.class_id);
  o.confidence = best;
  o.guideline = GuidelineForClass(o.class_id);
  return o;
}

std::string BuildPrompt(const std::string& model_result, const ClinicalContext& ctx) {
  std::string out;
  out += "You are a senior ultrasound imaging diagnostic expert. Based on the information below, "
         "determine the patient's possible condition and provide diagnostic recommendations.\n\n";
  out += "- " + std::string(kOpinionLabel) + SlotValue(model_result) + "\n";
  out += "- Chief Complaint: " + SlotValue(ctx.chief_complaint) + "\n";
  out += "- Physical Examination: " + SlotValue(ctx.physical_exam) + "\n";
  out += "- Additional Information: " + SlotValue(ctx.additional_info) + "\n\n";
  out += "Please reason according to international diagnostic guidelines and generate a medically "
         "standardized recommendation using professional terminology. The output format should be:\n\n";
  out += "- Preliminary Diagnosis:\n";
  out += "- Justification:\n";
  out += "- Recommended Follow-Up Examinations:\n";
  return out;
}

std::string BuildPrompt(const DiagnosisOpinion& opinion, const ClinicalContext& ctx) {
  return BuildPrompt(opinion.phrase, ctx);
}

ReportSections ParseReport(std::string_view raw, const ParseOptions& options) {
  std::string text = StripThink(raw);
  std::array<std::optional<std::string>, 3> found;
  int current = -1;
  std::string buffer;
  auto flush = [&] {
    if (current >= 0) found[static_cast<std::size_t>(current)] = std::string(Trim(buffer));
    buffer.clear();
  };

  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (auto hit = MatchHeader(line, options.strict)) {
      flush();
      current = hit->section;
      if (found[static_cast<std::size_t>(current)]) {
        throw MalformedOutputError(std::string("duplicate section header: ") + kHeaders[current],
                                   std::string(raw));
      }
      found[static_cast<std::size_t>(current)] = std::string();
      buffer = std::string(line.substr(hit->content_start));
    } else if (current >= 0) {
      buffer += '\n';
      buffer += line;
    }
    pos = end + 1;
  }
  flush();

  for (int s = 0; s < 3; ++s) {
    if (!found[static_cast<std::size_t>(s)]) {
      throw MalformedOutputError(std::string("missing section header: ") + kHeaders[s], std::string(raw));
    }
    if (found[static_cast<std::size_t>(s)]->empty()) {
      throw MalformedOutputError(std::string("empty section: ") + kHeaders[s], std::string(raw));
    }
  }
  return {*found[0], *found[1], *found[2]};
}

std::string RenderReport(const ReportSections& s) {
  return std::string(kHeaders[0]) + ": " + s.preliminary_diagnosis + "\n\n" + kHeaders[1] + ": " +
         s.justification + "\n\n" + kHeaders[2] + ": " + s.follow_up + "\n";
}

nlohmann::json ToJson(const DiagnosisReport& r) {
  return {{"preliminary_diagnosis", r.preliminary_diagnosis},
          {"justification", r.justification},
          {"follow_up", r.follow_up},
          {"raw_response", r.raw_response},
          {"model_id", r.model_id},
          {"latency_ms", r.latency_ms},
          {"attempts", r.attempts}};
}

DiagnosisReport DiagnosisReportFromJson(const nlohmann::json& j) {
  DiagnosisReport r;
  r.preliminary_diagnosis = j.at("preliminary_diagnosis").get<std::string>();
  r.justification = j.at("justification").get<std::string>();
  r.follow_up = j.at("follow_up").get<std::string>();
  r.raw_response = j.value("raw_response", std::string());
  r.model_id = j.value("model_id", std::string());
  r.latency_ms = j.value("latency_ms", std::int64_t{0});
  r.attempts = j.value("attempts", 0);
  return r;
}

const char* BackendKindName(BackendKind kind) {
  return kind == BackendKind::kMock ? "mock" : "http_chat";
}

BackendKind ParseBackendKind(const std::string& text) {
  if (text == "mock") return BackendKind::kMock;
  if (text == "http_chat" || text == "http") return BackendKind::kHttpChat;
  throw ConfigError("unknown backend kind: " + text + " (expected mock or http_chat)");
}

void LlmBackendSpec::Validate() const {
  if (timeout_ms <= 0) throw ConfigError("timeout_ms must be > 0");
  if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (backoff_ms < 0) throw ConfigError("backoff_ms must be >= 0");
  if (temperature < 0) throw ConfigError("temperature must be >= 0");
  if (kind == BackendKind::kHttpChat) {
    if (endpoint_url.empty()) throw ConfigError("http_chat backend needs an endpoint url (AUTOUS_LLM_ENDPOINT)");
    ParseUrl(endpoint_url);
  }
}

void LlmBackendSpec::ApplyEnvironment() {
  if (endpoint_url.empty()) {
    if (const char* v = std::getenv("AUTOUS_LLM_ENDPOINT")) endpoint_url = v;
  }
  if (api_token.empty()) {
    if (const char* v = std::getenv("AUTOUS_LLM_TOKEN")) api_token = v;
  }
}

nlohmann::json ToJson(const LlmBackendSpec& s) {
  return {{"kind", BackendKindName(s.kind)}, {"endpoint_url", s.endpoint_url},
          {"model_name", s.model_name},      {"timeout_ms", s.timeout_ms},
          {"max_retries", s.max_retries},    {"backoff_ms", s.backoff_ms},
          {"temperature", s.temperature},    {"strict_parse", s.parse.strict}};
}

LlmBackendSpec LlmBackendSpecFromJson(const nlohmann::json& j) {
  LlmBackendSpec s;
  s.kind = ParseBackendKind(j.value("kind", std::string("mock")));
  s.endpoint_url = j.value("endpoint_url", s.endpoint_url);
  s.model_name = j.value("model_name", s.model_name);
  s.timeout_ms = j.value("timeout_ms", s.timeout_ms);
  s.max_retries = j.value("max_retries", s.max_retries);
  s.backoff_ms = j.value("backoff_ms", s.backoff_ms);
  s.temperature = j.value("temperature", s.temperature);
  s.parse.strict = j.value("strict_parse", false);
  return s;
}

std::string CannedReport(int class_id) {
  static const std::array<ReportSections, 5> reports = {{
      {"Findings favour a benign breast lesion, most consistent with fibroadenoma (BI-RADS 3).",
       "Oval, circumscribed, parallel hypoechoic mass without posterior shadowing or internal "
       "vascularity on the ultrasound clip.",
       "1. Short-interval ultrasound follow-up in 6 months.\n2. Biopsy if the lesion grows or "
       "new suspicious features appear."},
      {"Findings are suspicious for a malignant breast lesion (BI-RADS 4C).",
       "Irregular hypoechoic mass with indistinct margins and non-parallel orientation on the "
       "ultrasound clip; the clinical mass supports the imaging impression.",
       "1. Ultrasound-guided core needle biopsy.\n2. Diagnostic mammography.\n3. Axillary lymph "
       "node assessment and multidisciplinary review."},
      {"Acute calculous cholecystitis is the leading consideration.",
       "Gallbladder wall thickening with calculi on ultrasound together with fever and right upper "
       "quadrant tenderness.",
       "1. Complete blood count, CRP and liver panel.\n2. Contrast CT or MRCP if complications are "
       "suspected.\n3. Surgical consultation."},
      {"Ultrasound pattern is compatible with COVID-19 pneumonia.",
       "Multiple confluent B-lines with an irregular pleural line and subpleural consolidations in "
       "several lung zones.",
       "1. SARS-CoV-2 RT-PCR.\n2. Pulse oximetry and chest CT if oxygenation worsens.\n3. Inflammatory "
       "markers."},
      {"Findings suggest bacterial community-acquired pneumonia.",
       "Lobar consolidation with dynamic air bronchograms and a small parapneumonic effusion on lung "
       "ultrasound.",
       "1. Sputum and blood cultures before antibiotics.\n2. Chest radiograph.\n3. Procalcitonin and "
       "severity scoring to guide empiric therapy."},
  }};
  if (class_id < 0 || class_id >= 5) {
    return RenderReport({"Indeterminate ultrasound findings.",
                         "The classifier opinion could not be mapped to a known category.",
                         "1. Repeat the ultrasound examination.\n2. Clinical correlation."});
  }
  return RenderReport(reports[static_cast<std::size_t>(class_id)]);
}

std::string MockBackend::Complete(const std::string& prompt, const LlmBackendSpec& spec) {
  int call = calls_.fetch_add(1);
  if (script_.delay_ms > 0) {
    int wait = std::min(script_.delay_ms, spec.timeout_ms);
    std::this_thread::sleep_for(std::chrono::milliseconds(wait));
    if (script_.delay_ms > spec.timeout_ms) {
      throw TimeoutError("mock backend timed out after " + std::to_string(spec.timeout_ms) + " ms");
    }
  }
  if (call < script_.fail_first) throw BackendUnavailableError("mock backend unavailable (scripted)");

  std::string opinion;
  if (std::size_t at = prompt.find(kOpinionLabel); at != std::string::npos) {
    std::size_t start = at + std::char_traits<char>::length(kOpinionLabel);
    opinion = prompt.substr(start, prompt.find('\n', start) - start);
  }
  for (const auto& [key, reply] : script_.replies) {
    if (opinion.find(key) != std::string::npos) return reply;
  }
  for (int c = 0; c < 5; ++c) {
    if (opinion == kPhrases[static_cast<std::size_t>(c)]) return CannedReport(c);
  }
  const auto& names = data::DefaultClassNames();
  for (int c = 0; c < 5; ++c) {
    if (opinion.find(names[static_cast<std::size_t>(c)]) != std::string::npos) return CannedReport(c);
  }
  return CannedReport(-1);
}

std::string MockBackend::model_id(const LlmBackendSpec& spec) const { return "mock:" + spec.model_name; }

std::string HttpChatBackend::Complete(const std::string& prompt, const LlmBackendSpec& spec) {
  ParsedUrl url = ParseUrl(spec.endpoint_url);
  httplib::Client client(url.origin);
  auto timeout = std::chrono::milliseconds(spec.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!spec.api_token.empty()) headers.emplace("Authorization", "Bearer " + spec.api_token);

  nlohmann::json body = {{"model", spec.model_name},
                         {"temperature", spec.temperature},
                         {"stream", false},
                         {"messages", {{{"role", "user"}, {"content", prompt}}}}};
  auto start = std::chrono::steady_clock::now();
  auto res = client.Post(url.path, headers, body.dump(), "application/json");
  if (!res) {
    auto elapsed = std::chrono::steady_clock::now() - start;
    auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout || (err == httplib::Error::Read && elapsed >= timeout)) {
      throw TimeoutError("chat backend timed out after " + std::to_string(spec.timeout_ms) + " ms");
    }
    throw BackendUnavailableError("chat backend request failed: " + httplib::to_string(err));
  }
  if (res->status < 200 || res->status >= 300) {
    throw BackendUnavailableError("chat backend returned HTTP " + std::to_string(res->status),
                                  res->body.substr(0, 2000));
  }
  nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded()) throw BackendUnavailableError("chat backend returned invalid JSON", res->body);
  if (reply.contains("choices") && reply["choices"].is_array() && !reply["choices"].empty()) {
    const auto& choice = reply["choices"][0];
    if (choice.contains("message") && choice["message"].contains("content") &&
        choice["message"]["content"].is_string()) {
      return choice["message"]["content"].get<std::string>();
    }
    if (choice.contains("text") && choice["text"].is_string()) return choice["text"].get<std::string>();
  }
  if (reply.contains("message") && reply["message"].contains("content")) {
    return reply["message"]["content"].get<std::string>();
  }
  throw BackendUnavailableError("chat backend reply has no completion text", res->body.substr(0, 2000));
}

std::unique_ptr<ChatBackend> MakeBackend(const LlmBackendSpec& spec) {
  spec.Validate();
  if (spec.kind == BackendKind::kMock) return std::make_unique<MockBackend>();
  return std::make_unique<HttpChatBackend>();
}

DiagnosisReport GenerateReport(const std::string& prompt, ChatBackend& backend, const LlmBackendSpec& spec) {
  spec.Validate();
  auto start = std::chrono::steady_clock::now();
  std::optional<std::string> malformed_raw;
  std::string last_error;
  const int attempts = spec.max_retries + 1;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0 && spec.backoff_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(std::int64_t{spec.backoff_ms} << (attempt - 1)));
    }
    std::string raw;
    try {
      raw = backend.Complete(prompt, spec);
    } catch (const TimeoutError& e) {
      last_error = e.what();
      malformed_raw.reset();
      continue;
    } catch (const BackendUnavailableError& e) {
      last_error = e.what();
      malformed_raw.reset();
      continue;
    }
    try {
      ReportSections sections = ParseReport(raw, spec.parse);
      DiagnosisReport report;
      report.preliminary_diagnosis = std::move(sections.preliminary_diagnosis);
      report.justification = std::move(sections.justification);
      report.follow_up = std::move(sections.follow_up);
      report.raw_response = std::move(raw);
      report.model_id = backend.model_id(spec);
      report.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - start).count();
      report.attempts = attempt + 1;
      return report;
    } catch (const MalformedOutputError& e) {
      last_error = e.what();
      malformed_raw = raw;
    }
  }
  std::string suffix = " after " + std::to_string(attempts) + " attempt" + (attempts == 1 ? "" : "s");
  if (malformed_raw) throw MalformedOutputError(last_error + suffix, *malformed_raw);
  throw BackendUnavailableError("chat backend unavailable" + suffix + ": " + last_error);
}

}  // namespace autous::agent
