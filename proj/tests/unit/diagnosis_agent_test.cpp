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

#include <gtest/gtest.h>
#include <httplib.h>

#include <chrono>
#include <random>
#include <set>
#include <thread>

#include "autous/error.hpp"
#include "test_support.hpp"

namespace autous::agent {
namespace {

using autous::testing::GoldenPath;
using autous::testing::ReadText;

ClinicalContext CaseOneContext() {
  nlohmann::json j = nlohmann::json::parse(ReadText(GoldenPath("case1_context.json")));
  return ClinicalContextFromJson(j);
}

TEST(Opinion, ArgmaxConfidenceAndGuideline) {
  std::vector<double> malignant = {0.1, 0.6, 0.1, 0.1, 0.1};
  DiagnosisOpinion o = OpinionFromProbs(malignant);
  EXPECT_EQ(o.class_id, 1);
  EXPECT_EQ(o.label_text, "Malignant");
  EXPECT_EQ(o.phrase, "Malignant breast lesion");
  EXPECT_DOUBLE_EQ(o.confidence, 0.6);
  EXPECT_EQ(o.guideline, GuidelineTag::kBiRads5th);
  EXPECT_FALSE(o.tie());

  std::vector<double> gall = {0.1, 0.1, 0.6, 0.1, 0.1};
  o = OpinionFromProbs(gall);
  EXPECT_EQ(o.label_text, "Gall.");
  EXPECT_EQ(std::string(GuidelineTagName(o.guideline)), "ACG-2022");
}

TEST(Opinion, TieGoesToLowestIdAndIsRecorded) {
  std::vector<double> probs = {0.1, 0.1, 0.1, 0.35, 0.35};
  DiagnosisOpinion o = OpinionFromProbs(probs);
  EXPECT_EQ(o.class_id, 3);
  EXPECT_TRUE(o.tie());
  EXPECT_EQ(o.tied_classes, (std::vector<int>{3, 4}));
}

TEST(Opinion, GuidelineMapIsTotalAndStable) {
  const GuidelineTag expected[5] = {GuidelineTag::kBiRads5th, GuidelineTag::kBiRads5th, GuidelineTag::kAcg2022,
                                    GuidelineTag::kIdsaAts2019, GuidelineTag::kIdsaAts2019};
  for (int c = 0; c < 5; ++c) {
    EXPECT_EQ(GuidelineForClass(c), expected[c]);
    EXPECT_EQ(GuidelineForClass(c), GuidelineForClass(c));
    EXPECT_EQ(ParseGuidelineTag(GuidelineTagName(expected[c])), expected[c]);
    EXPECT_FALSE(OpinionPhrase(c).empty());
  }
  EXPECT_THROW(GuidelineForClass(5), ValidationError);
  EXPECT_THROW(GuidelineForClass(-1), ValidationError);
}

TEST(Opinion, JsonRoundTrip) {
  std::vector<double> probs = {0.05, 0.05, 0.1, 0.7, 0.1};
  DiagnosisOpinion o = OpinionFromProbs(probs);
  EXPECT_EQ(ToJson(DiagnosisOpinionFromJson(ToJson(o))).dump(), ToJson(o).dump());
}

TEST(Prompt, CaseOneMatchesGoldenFile) {
  std::vector<double> probs = {0.05, 0.8, 0.05, 0.05, 0.05};
  std::string prompt = BuildPrompt(OpinionFromProbs(probs), CaseOneContext());
  EXPECT_EQ(prompt, ReadText(GoldenPath("case1_prompt.txt")));
}

TEST(Prompt, BlankFieldsRenderNoneProvided) {
  ClinicalContext ctx{"Fever for 3 days.", "", "  "};
  std::string prompt = BuildPrompt("Gallbladder disease", ctx);
  EXPECT_NE(prompt.find("- Physical Examination: None provided\n"), std::string::npos);
  EXPECT_NE(prompt.find("- Additional Information: None provided\n"), std::string::npos);
  EXPECT_EQ(prompt, BuildPrompt("Gallbladder disease", ctx));
}

TEST(Prompt, ChiefComplaintRequired) {
  EXPECT_THROW((ClinicalContext{"", "exam", ""}.Validate()), ValidationError);
  EXPECT_NO_THROW((ClinicalContext{"cough", "", ""}.Validate()));
}

TEST(PromptProperty, InjectiveOnSlotValues) {
  std::mt19937_64 rng(21);
  const std::string alphabet = "abc xyz.,-";
  auto word = [&] {
    std::string s(1 + rng() % 6, 'a');
    for (char& c : s) c = alphabet[rng() % alphabet.size()];
    return s;
  };
  std::set<std::string> prompts;
  std::set<std::vector<std::string>> inputs;
  for (int i = 0; i < 500; ++i) {
    std::vector<std::string> slots = {"r" + word(), "c" + word(), "p" + word(), "a" + word()};
    if (!inputs.insert(slots).second) continue;
    prompts.insert(BuildPrompt(slots[0], {slots[1], slots[2], slots[3]}));
  }
  EXPECT_EQ(prompts.size(), inputs.size());
}

TEST(ParseReport, CaseOneOutput) {
  ReportSections s = ParseReport(ReadText(GoldenPath("case1_report.txt")));
  EXPECT_EQ(s.preliminary_diagnosis.rfind("The findings are highly suggestive of invasive cancer", 0), 0u);
  EXPECT_FALSE(s.justification.empty());
  for (const char* item : {"1.Complete", "2.Multidisciplinary", "3.Prompt"}) {
    EXPECT_NE(s.follow_up.find(item), std::string::npos) << item;
  }
  EXPECT_EQ(s.follow_up.front(), '1');
}

TEST(ParseReport, ReorderedHeadersMapByName) {
  ReportSections s = ParseReport("Justification: J\nRecommended Follow-Up Examinations: F\nPreliminary Diagnosis: P\n");
  EXPECT_EQ(s.preliminary_diagnosis, "P");
  EXPECT_EQ(s.justification, "J");
  EXPECT_EQ(s.follow_up, "F");
}

TEST(ParseReport, ToleratesMarkupAndThinkBlocks) {
  std::string raw =
      "<think>\nThe preliminary diagnosis: maybe cyst. Justification: none\n</think>\n"
      "### **Preliminary Diagnosis:**\nAcute cholecystitis.\n\n"
      "- **justification**: Fever, tenderness and stones.\n"
      "**RECOMMENDED FOLLOW-UP EXAMINATIONS**\n1. CBC\n2. CT\n";
  ReportSections s = ParseReport(raw);
  EXPECT_EQ(s.preliminary_diagnosis, "Acute cholecystitis.");
  EXPECT_EQ(s.justification, "Fever, tenderness and stones.");
  EXPECT_EQ(s.follow_up, "1. CBC\n2. CT");
  EXPECT_THROW(ParseReport(raw, {.strict = true}), MalformedOutputError);
}

TEST(ParseReport, DuplicateAndMissingHeaders) {
  const std::string dup = "Preliminary Diagnosis: a\nJustification: b\nJustification: c\nRecommended Follow-Up Examinations: d";
  EXPECT_THROW(ParseReport(dup), MalformedOutputError);
  const std::string missing = "Preliminary Diagnosis: a\nRecommended Follow-Up Examinations: d\n";
  try {
    ParseReport(missing);
    FAIL();
  } catch (const MalformedOutputError& e) {
    EXPECT_NE(std::string(e.what()).find("Justification"), std::string::npos);
    EXPECT_EQ(e.detail(), missing);
  }
  EXPECT_THROW(ParseReport("Preliminary Diagnosis:\nJustification: b\nRecommended Follow-Up Examinations: d"),
               MalformedOutputError);
}

TEST(ParseReportProperty, RenderRoundTrip) {
  std::mt19937_64 rng(8);
  const std::vector<std::string> words = {"mass", "1.", "CT", "(BI-RADS 4B)", "fever,", "**bold**", "x:y", "\n"};
  auto text = [&] {
    std::string s = "w";
    for (int i = 0, n = 1 + int(rng() % 12); i < n; ++i) s += " " + words[rng() % words.size()];
    return s + " end";
  };
  for (int i = 0; i < 200; ++i) {
    ReportSections in{text(), text(), text()};
    ReportSections out = ParseReport(RenderReport(in));
    ASSERT_EQ(out.preliminary_diagnosis, in.preliminary_diagnosis);
    ASSERT_EQ(out.justification, in.justification);
    ASSERT_EQ(out.follow_up, in.follow_up);
  }
}

LlmBackendSpec FastSpec() {
  LlmBackendSpec spec;
  spec.timeout_ms = 1000;
  spec.max_retries = 2;
  spec.backoff_ms = 1;
  return spec;
}

TEST(GenerateReport, MockKeyedOnOpinion) {
  MockBackend mock;
  std::vector<double> probs = {0.05, 0.8, 0.05, 0.05, 0.05};
  std::string prompt = BuildPrompt(OpinionFromProbs(probs), CaseOneContext());
  DiagnosisReport r = GenerateReport(prompt, mock, FastSpec());
  EXPECT_NE(r.preliminary_diagnosis.find("malignant"), std::string::npos);
  EXPECT_FALSE(r.justification.empty());
  EXPECT_FALSE(r.follow_up.empty());
  EXPECT_EQ(r.model_id, "mock:deepseek-r1:7b");
  EXPECT_EQ(r.attempts, 1);
  EXPECT_EQ(r.raw_response, CannedReport(1));
}

TEST(GenerateReport, EveryClassHasACannedReport) {
  MockBackend mock;
  for (int c = 0; c < 5; ++c) {
    DiagnosisReport r = GenerateReport(BuildPrompt(OpinionPhrase(c), {"complaint", "", ""}), mock, FastSpec());
    EXPECT_EQ(r.raw_response, CannedReport(c));
  }
}

TEST(GenerateReport, MalformedReplyKeepsRawText) {
  const std::string bad = "Preliminary Diagnosis: x\nRecommended Follow-Up Examinations: y\n";
  MockBackend mock({{{"Malignant", bad}}, 0, 0});
  try {
    GenerateReport(BuildPrompt("Malignant breast lesion", {"c", "", ""}), mock, FastSpec());
    FAIL();
  } catch (const MalformedOutputError& e) {
    EXPECT_EQ(e.detail(), bad);
    EXPECT_NE(std::string(e.what()).find("Justification"), std::string::npos);
  }
  EXPECT_EQ(mock.calls(), 3);
}

TEST(GenerateReport, TimeoutIsRetriedThenUnavailable) {
  MockBackend mock({{}, 50, 0});
  LlmBackendSpec spec = FastSpec();
  spec.timeout_ms = 1;
  auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(GenerateReport(BuildPrompt("Gallbladder disease", {"c", "", ""}), mock, spec),
               BackendUnavailableError);
  auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
  EXPECT_EQ(mock.calls(), spec.max_retries + 1);
  // timeout * attempts + backoff (1 + 2 ms), with scheduling slack.
  EXPECT_LT(elapsed.count(), 1 * 3 + 3 + 200);
}

TEST(GenerateReport, TransientFailureRecovers) {
  MockBackend mock({{}, 0, 1});
  DiagnosisReport r = GenerateReport(BuildPrompt("COVID-19 pneumonia", {"c", "", ""}), mock, FastSpec());
  EXPECT_EQ(r.attempts, 2);
  EXPECT_EQ(mock.calls(), 2);
}

TEST(BackendSpec, Validation) {
  LlmBackendSpec spec;
  spec.timeout_ms = 0;
  EXPECT_THROW(spec.Validate(), ConfigError);
  spec = {};
  spec.max_retries = -1;
  EXPECT_THROW(spec.Validate(), ConfigError);
  spec = {};
  spec.kind = BackendKind::kHttpChat;
  EXPECT_THROW(spec.Validate(), ConfigError);
  spec.endpoint_url = "https://example.invalid/v1/chat/completions";
  EXPECT_THROW(spec.Validate(), ConfigError);
  spec.endpoint_url = "http://127.0.0.1:9/v1/chat/completions";
  EXPECT_NO_THROW(spec.Validate());
  EXPECT_EQ(ParseBackendKind("http_chat"), BackendKind::kHttpChat);
  EXPECT_THROW(ParseBackendKind("grpc"), ConfigError);
}

class FakeChatServer {
 public:
  explicit FakeChatServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/chat/completions", handler);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeChatServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST(HttpChatBackend, SendsOneUserMessageAndReadsFirstChoice) {
  nlohmann::json seen;
  std::string auth;
  FakeChatServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    auth = req.get_header_value("Authorization");
    nlohmann::json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", CannedReport(2)}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  LlmBackendSpec spec = FastSpec();
  spec.kind = BackendKind::kHttpChat;
  spec.endpoint_url = server.url();
  spec.api_token = "secret";
  HttpChatBackend backend;
  std::string prompt = BuildPrompt("Gallbladder disease", {"Fever", "", ""});
  DiagnosisReport r = GenerateReport(prompt, backend, spec);
  EXPECT_EQ(r.raw_response, CannedReport(2));
  EXPECT_EQ(seen["model"], "deepseek-r1:7b");
  EXPECT_EQ(seen["temperature"], 0.0);
  ASSERT_EQ(seen["messages"].size(), 1u);
  EXPECT_EQ(seen["messages"][0]["role"], "user");
  EXPECT_EQ(seen["messages"][0]["content"], prompt);
  EXPECT_EQ(auth, "Bearer secret");
}

TEST(HttpChatBackend, ServerErrorsAndTimeouts) {
  int hits = 0;
  FakeChatServer failing([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 500;
    res.set_content("boom", "text/plain");
  });
  LlmBackendSpec spec = FastSpec();
  spec.kind = BackendKind::kHttpChat;
  spec.endpoint_url = failing.url();
  HttpChatBackend backend;
  EXPECT_THROW(GenerateReport("prompt", backend, spec), BackendUnavailableError);
  EXPECT_EQ(hits, 3);

  FakeChatServer slow([&](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    res.set_content("{}", "application/json");
  });
  spec.endpoint_url = slow.url();
  spec.timeout_ms = 100;
  spec.max_retries = 0;
  EXPECT_THROW(backend.Complete("prompt", spec), TimeoutError);

  spec.endpoint_url = "http://127.0.0.1:1/v1/chat/completions";
  EXPECT_THROW(backend.Complete("prompt", spec), BackendUnavailableError);
}

}  // namespace
}  // namespace autous::agent
