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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any fails.

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autous/app_service.hpp"
#include "autous/assessment.hpp"
#include "autous/checkpoint.hpp"
#include "autous/ctu_net.hpp"
#include "autous/diagnosis_agent.hpp"
#include "autous/error.hpp"
#include "autous/gradient_check.hpp"
#include "autous/media_io.hpp"
#include "autous/nn.hpp"
#include "autous/rng.hpp"
#include "autous/train_eval.hpp"
#include "autous/video_data.hpp"

namespace {

using namespace autous;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

std::string Fmt(const char* format, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path Golden(const std::string& name) { return std::filesystem::path(AUTOUS_GOLDEN_DIR) / name; }

class ScratchDir {
 public:
  ScratchDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "autous-accept-XXXXXX").string();
    if (mkdtemp(tmpl.data()) == nullptr) throw IoError("mkdtemp failed");
    path_ = tmpl;
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

std::vector<assess::Grade> Grades(std::initializer_list<int> amateur, std::initializer_list<int> expert) {
  std::vector<assess::Grade> g;
  int n = 0;
  for (int s : amateur) g.push_back({"a" + std::to_string(++n), assess::Role::kAmateur, s});
  for (int s : expert) g.push_back({"e" + std::to_string(++n), assess::Role::kExpert, s});
  return g;
}

Outcome FinalScoreCriterion() {
  auto start = Clock::now();
  double a = assess::ScoreWithMeteor(Grades({4, 5, 2}, {4, 3}), 0.42).final_score;
  double b = assess::ScoreWithMeteor(Grades({4, 5, 3}, {4, 3}), 0.39).final_score;
  double t = Seconds(start);
  return {std::abs(a - 3.25) <= 0.005 && std::abs(b - 3.29) <= 0.005 && t < 1.0,
          Fmt("final %.4f and %.4f (expected 3.25, 3.29) in %.4fs", a, b, t)};
}

Outcome DatasetFilterCriterion() {
  data::FilterDecision d = data::EvaluateDatasetAcceptance(0.80, 5, 0.4);
  bool ok = d.accepted && std::abs(d.threshold - 0.3562) <= 1e-4;
  Rng rng(2024);
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    double acc = rng.Uniform();
    double better = rng.Uniform(acc, 1.0);
    int n = 1 + static_cast<int>(rng.Below(12));
    double theta = rng.Uniform(0.01, 1.0);
    bool lo = data::EvaluateDatasetAcceptance(acc, n, theta).accepted;
    bool hi = data::EvaluateDatasetAcceptance(better, n, theta).accepted;
    if (lo && !hi) ++violations;
  }
  return {ok && violations == 0,
          Fmt("threshold %.5f accepted=%g, %g monotonicity violations in 1000 draws", d.threshold, d.accepted,
              violations)};
}

Outcome TrainingCriterion() {
  ScratchDir tmp;
  data::VideoGeometry g{8, 32, 32};
  data::DatasetManifest m = data::WriteSyntheticDataset(tmp.path(), 40, 17, g);
  m = data::SplitTrainTest(m, 0.8, 7);
  data::WriteManifest(m, tmp.path() / "manifest.tsv");
  m = data::ReadManifest(tmp.path() / "manifest.tsv");
  train::TrainSpec spec;
  spec.epochs = 10;
  auto start = Clock::now();
  train::TrainResult res = train::Train(model::ModelConfig::Desk(), m, spec);
  double train_s = Seconds(start);
  double acc = train::Evaluate(res.checkpoint, m, data::Split::kTest).accuracy;

  std::vector<data::VideoSample> two = {data::SynthVideo(0, 1, {8, 16, 16}), data::SynthVideo(3, 2, {8, 16, 16})};
  train::TrainSpec small;
  small.epochs = 200;
  small.batch_size = 2;
  start = Clock::now();
  train::TrainResult over = train::Train(model::ModelConfig::Tiny(), two, small);
  double over_s = Seconds(start);
  double over_acc = train::Evaluate(model::ModelFromCheckpoint<float>(over.checkpoint), two).accuracy;
  return {acc >= 0.8 && train_s < 600 && over_acc == 1.0 && over_s < 60,
          Fmt("200-clip test accuracy %.3f after 10 epochs in %.1fs; ", acc, train_s) +
              Fmt("2-sample overfit accuracy %.3f in %.2fs", over_acc, over_s)};
}

Outcome GradientCheckCriterion() {
  Outcome out;
  for (model::Ablation ab : model::AllAblations()) {
    model::ModelConfig cfg = model::ModelConfig::Tiny();
    cfg.ablation = ab;
    model::CtuNet<double> net(cfg);
    Rng rng(11);
    Tensor<double> x({2, 8, 16, 16, 1});
    for (auto& v : x.values()) v = rng.Uniform();
    auto start = Clock::now();
    model::GradientCheckResult r = model::GradientCheck(net, x, model::CrossEntropyLoss({1, 4}));
    double t = Seconds(start);
    out.pass = out.pass && r.max_rel_err < 1e-4 && t < 30;
    out.detail += std::string(model::AblationName(ab)) + Fmt(" %.2e (%.1fs) ", r.max_rel_err, t);
  }
  return out;
}

Outcome InvariantsCriterion() {
  model::ModelConfig cfg = model::ModelConfig::Tiny();
  model::CtuNet<double> net(cfg);
  Rng rng(5);
  double worst_gate = 0, worst_row = 0;
  for (int i = 0; i < 1000; ++i) {
    Tensor<double> x({1, 8, 16, 16, 1});
    double scale = rng.Uniform();
    for (auto& v : x.values()) v = scale * rng.Uniform();
    model::ForwardResult<double> r = net.Forward(x, {});
    worst_gate = std::max(worst_gate, std::abs(r.features.alpha_s[0] + r.features.alpha_f[0] - 1.0));
    double sum = 0;
    for (double p : r.prediction.probs.values()) sum += p;
    worst_row = std::max(worst_row, std::abs(sum - 1.0));
  }
  double worst_interior = 0;
  for (int i = 0; i < 100; ++i) {
    std::size_t h = 3 + rng.Below(30), w = 3 + rng.Below(30);
    Tensor<double> y = nn::LaplacianForward(Tensor<double>({1, 1, h, w}, rng.Uniform(-10, 10)));
    for (std::size_t r = 1; r + 1 < h; ++r) {
      for (std::size_t c = 1; c + 1 < w; ++c) worst_interior = std::max(worst_interior, std::abs(y[r * w + c]));
    }
  }
  return {worst_gate <= 1e-6 && worst_row <= 1e-6 && worst_interior == 0.0,
          Fmt("max |gate sum - 1| %.1e, max |row sum - 1| %.1e, max interior Laplacian %.1e", worst_gate, worst_row,
              worst_interior)};
}

Outcome ShapesCheckpointCriterion() {
  model::ModelConfig cfg = model::ModelConfig::Desk();
  cfg.input.frames = 10;
  cfg.fast.temporal_stride = 5;
  cfg.fast.patch_size = 4;
  bool shapes = cfg.retained_frames() == 2 && cfg.tokens_per_frame() == 65;

  ScratchDir tmp;
  model::ModelConfig tiny = model::ModelConfig::Tiny();
  tiny.seed = 123;
  model::CtuNet<float> net(tiny);
  std::string path = (tmp.path() / "tiny.ckpt").string();
  model::SaveCheckpoint(model::MakeCheckpoint(net), path);
  model::CtuNet<float> back = model::ModelFromCheckpoint<float>(model::LoadCheckpoint(path));
  bool bitwise = back.params().size() == net.params().size();
  for (std::size_t i = 0; bitwise && i < net.params().size(); ++i) {
    const auto& a = net.params()[i].value.storage();
    const auto& b = back.params()[i].value.storage();
    bitwise = a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
  }
  Rng rng(9);
  Tensor<float> x({3, 8, 16, 16, 1});
  for (auto& v : x.values()) v = static_cast<float>(rng.Uniform());
  bool same_forward = net.Predict(x).probs.storage() == back.Predict(x).probs.storage();
  return {shapes && bitwise && same_forward,
          Fmt("retained frames %g, tokens per frame %g, ", cfg.retained_frames(), cfg.tokens_per_frame()) +
              "checkpoint bitwise=" + (bitwise ? "yes" : "no") + " forward identical=" + (same_forward ? "yes" : "no")};
}

Outcome MetricsCriterion() {
  Rng rng(31);
  double worst_auc = 0, worst_metric = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const int k = 5;
    const std::size_t n = 10 + rng.Below(50);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i < 5 ? static_cast<int>(i) : static_cast<int>(rng.Below(k));
    std::vector<double> probs(n * k);
    for (auto& p : probs) p = std::round(rng.Uniform() * 10) / 10 + 1e-9 * rng.Uniform();
    train::MetricsReport r = train::ComputeMetrics(labels, probs, k);
    std::vector<int> pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(std::max_element(probs.begin() + i * k, probs.begin() + (i + 1) * k) -
                                 (probs.begin() + i * k));
    }
    double correct = 0, rec = 0, prec = 0;
    for (std::size_t i = 0; i < n; ++i) correct += pred[i] == labels[i];
    for (int c = 0; c < k; ++c) {
      double tp = 0, actual = 0, predicted = 0, wins = 0, pairs = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += labels[i] == c && pred[i] == c;
        actual += labels[i] == c;
        predicted += pred[i] == c;
        for (std::size_t j = 0; j < n; ++j) {
          if (labels[i] != c || labels[j] == c) continue;
          double si = probs[i * k + c], sj = probs[j * k + c];
          wins += si > sj ? 1.0 : si == sj ? 0.5 : 0.0;
          pairs += 1;
        }
      }
      rec += actual > 0 ? tp / actual : 0;
      prec += predicted > 0 ? tp / predicted : 0;
      if (pairs > 0) {
        worst_auc = r.per_class_auc[c] ? std::max(worst_auc, std::abs(*r.per_class_auc[c] - wins / pairs)) : 1.0;
      }
    }
    worst_metric = std::max({worst_metric, std::abs(r.accuracy - correct / n), std::abs(r.macro_recall - rec / k),
                             std::abs(r.macro_precision - prec / k)});
  }
  return {worst_auc <= 1e-12 && worst_metric <= 1e-12,
          Fmt("50 instances: max AUC deviation %.1e, max metric deviation %.1e", worst_auc, worst_metric)};
}

Outcome MeteorCriterion() {
  const std::string ten = "alpha beta gamma delta epsilon zeta eta theta iota kappa";
  const std::string reversed = "kappa iota theta eta zeta epsilon delta gamma beta alpha";
  double same = assess::Meteor(ten, ten);
  double disjoint = assess::Meteor("one two three", "four five six");
  double rev = assess::Meteor(reversed, ten);
  return {std::abs(same - 0.9995) <= 1e-6 && disjoint == 0.0 && std::abs(rev - 0.5) <= 1e-6,
          Fmt("identical %.6f, disjoint %.6f, reversed %.6f", same, disjoint, rev)};
}

Outcome PromptCriterion() {
  json ctx = json::parse(ReadFile(Golden("case1_context.json")));
  std::vector<double> probs = {0.02, 0.9, 0.03, 0.03, 0.02};
  std::string prompt = agent::BuildPrompt(agent::OpinionFromProbs(probs), agent::ClinicalContextFromJson(ctx));
  bool identical = prompt == ReadFile(Golden("case1_prompt.txt"));
  agent::ReportSections s = agent::ParseReport(ReadFile(Golden("case1_report.txt")));
  bool sections = !s.preliminary_diagnosis.empty() && !s.justification.empty() && !s.follow_up.empty();
  return {identical && sections, std::string("prompt byte-identical=") + (identical ? "yes" : "no") +
                                     ", report sections non-empty=" + (sections ? "yes" : "no")};
}

std::string ClipBytes(int class_id) {
  data::VideoSample s = data::SynthVideo(class_id, 4, {8, 16, 16});
  std::vector<std::uint8_t> u8(s.frames.size());
  for (std::size_t i = 0; i < u8.size(); ++i) {
    u8[i] = static_cast<std::uint8_t>(std::lround(s.frames.data()[i] * 255.0f));
  }
  return media::EncodeNpyU8(u8, 8, 16, 16, 1);
}

Outcome ServiceCriterion() {
  ScratchDir tmp;
  std::string ckpt = (tmp.path() / "tiny.ckpt").string();
  model::SaveCheckpoint(model::MakeCheckpoint(model::CtuNet<float>(model::ModelConfig::Tiny())), ckpt);
  service::ServiceOptions opts;
  opts.store_dir = tmp.path() / "store";
  opts.checkpoint_path = ckpt;
  opts.llm.backoff_ms = 1;

  std::vector<std::string> failures;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) failures.push_back(what);
  };
  std::string id;
  double final_score = 0;
  {
    auto svc = std::make_shared<service::CaseService>(opts, std::make_shared<agent::MockBackend>());
    service::HttpServer server(svc, {"127.0.0.1", 0, "", "*"});
    httplib::Client cli("127.0.0.1", server.Start());
    auto post = [&](const std::string& path, const json& body) {
      auto res = cli.Post(path, body.dump(), "application/json");
      return res ? std::make_pair(res->status, json::parse(res->body, nullptr, false)) : std::make_pair(0, json());
    };
    auto created = post("/api/cases", {{"chief_complaint", "A mass in the left breast."}});
    expect(created.first == 201, "create");
    id = created.second.value("case_id", "");
    expect(post("/api/cases/" + id + "/report", json::object()).first == 409, "report before classify is 409");
    auto up = cli.Post("/api/cases/" + id + "/video?filename=clip.npy", ClipBytes(1), "application/octet-stream");
    expect(up && up->status == 200, "upload");
    expect(post("/api/cases/" + id + "/classify", json::object()).first == 200, "classify");
    auto rep = post("/api/cases/" + id + "/report", json::object());
    expect(rep.first == 200 && !rep.second.value("justification", "").empty(), "report");
    expect(post("/api/cases/" + id + "/score", {{"meteor", 0.42}}).first == 409, "score before grades is 409");
    for (auto [rater, role, s] : {std::tuple{"a1", "amateur", 4}, {"a2", "amateur", 5}, {"a3", "amateur", 2},
                                  {"e1", "expert", 4}, {"e2", "expert", 3}}) {
      expect(post("/api/cases/" + id + "/grades", {{"rater_id", rater}, {"role", role}, {"score", s}}).first == 200,
             "grade");
    }
    auto scored = post("/api/cases/" + id + "/score", {{"meteor", 0.42}});
    expect(scored.first == 200, "score");
    final_score = scored.second.value("final", 0.0);
    double formula = assess::FinalScore(11.0 / 3.0, 3.5, 0.42);
    expect(std::abs(final_score - formula) <= 1e-9, "server final equals formula");
    expect(post("/api/cases/" + id + "/grades", {{"rater_id", "late"}, {"role", "expert"}, {"score", 3}}).first == 409,
           "grade after score is 409");
    server.Stop();
  }
  {
    auto svc = std::make_shared<service::CaseService>(opts, std::make_shared<agent::MockBackend>());
    service::HttpServer server(svc, {"127.0.0.1", 0, "", "*"});
    httplib::Client cli("127.0.0.1", server.Start());
    auto res = cli.Get("/api/cases/" + id);
    json view = res ? json::parse(res->body, nullptr, false) : json();
    expect(res && res->status == 200 && view.value("status", "") == "scored" &&
               view["score"].value("final", 0.0) == final_score,
           "store survives restart");
    server.Stop();
  }
  std::string detail = Fmt("final %.4f", final_score);
  for (const auto& f : failures) detail += "; failed: " + f;
  if (failures.empty()) detail += "; full flow, 409s and restart ok";
  return {failures.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"final score formula", FinalScoreCriterion},
      {"dataset filter", DatasetFilterCriterion},
      {"training convergence", TrainingCriterion},
      {"gradient check", GradientCheckCriterion},
      {"gate and probability invariants", InvariantsCriterion},
      {"shapes and checkpoint round trip", ShapesCheckpointCriterion},
      {"metrics oracle", MetricsCriterion},
      {"meteor", MeteorCriterion},
      {"prompt and report parsing", PromptCriterion},
      {"service end to end", ServiceCriterion},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
