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

#include "autous/train_eval.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "autous/error.hpp"
#include "autous/rng.hpp"
#include "test_support.hpp"

namespace autous::train {
namespace {

using autous::testing::ReadText;
using autous::testing::TempDir;

std::vector<double> OneHotProbs(const std::vector<int>& predicted, int classes) {
  std::vector<double> probs(predicted.size() * classes, 0.0);
  for (std::size_t i = 0; i < predicted.size(); ++i) probs[i * classes + predicted[i]] = 1.0;
  return probs;
}

TEST(Metrics, Example) {
  std::vector<int> labels = {0, 0, 1, 1};
  std::vector<double> probs = OneHotProbs({0, 1, 1, 1}, 2);
  MetricsReport r = ComputeMetrics(labels, probs, 2);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
  EXPECT_DOUBLE_EQ(r.macro_recall, 0.75);
  EXPECT_NEAR(r.macro_precision, 0.8333, 1e-4);
  EXPECT_EQ(r.confusion[0][1], 1);
}

TEST(Auc, Examples) {
  const bool pos[] = {true, true, false, false};
  EXPECT_DOUBLE_EQ(AucOneVsRest(std::vector<double>{0.5, 0.5, 0.5, 0.5}, pos), 0.5);
  EXPECT_DOUBLE_EQ(AucOneVsRest(std::vector<double>{0.9, 0.8, 0.7, 0.1}, pos), 1.0);
  EXPECT_DOUBLE_EQ(AucOneVsRest(std::vector<double>{0.9, 0.4, 0.6, 0.1}, pos), 0.75);
}

TEST(Auc, UndefinedClassIsReported) {
  std::vector<int> labels = {0, 0, 1, 1};
  MetricsReport r = ComputeMetrics(labels, OneHotProbs({0, 0, 1, 1}, 3), 3);
  EXPECT_TRUE(r.per_class_auc[0].has_value());
  EXPECT_FALSE(r.per_class_auc[2].has_value());
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
}

double BruteAuc(const std::vector<double>& s, const std::vector<bool>& pos) {
  double wins = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!pos[i] || pos[j]) continue;
      ++pairs;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

TEST(MetricsProperty, MatchBruteForceOracle) {
  Rng rng(50);
  for (int instance = 0; instance < 50; ++instance) {
    const int k = 2 + static_cast<int>(rng.Below(4));
    const std::size_t n = 8 + rng.Below(40);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i < static_cast<std::size_t>(k) ? int(i) : int(rng.Below(k));
    std::vector<double> probs(n * k);
    for (auto& p : probs) p = std::round(rng.Uniform() * 20) / 20 + 1e-9 * rng.Uniform();
    MetricsReport r = ComputeMetrics(labels, probs, k);

    std::vector<int> pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      for (int c = 1; c < k; ++c) best = probs[i * k + c] > probs[i * k + best] ? c : best;
      pred[i] = best;
    }
    double correct = 0, recall = 0, precision = 0;
    for (std::size_t i = 0; i < n; ++i) correct += pred[i] == labels[i];
    for (int c = 0; c < k; ++c) {
      double tp = 0, actual = 0, predicted = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += labels[i] == c && pred[i] == c;
        actual += labels[i] == c;
        predicted += pred[i] == c;
      }
      recall += actual > 0 ? tp / actual : 0;
      precision += predicted > 0 ? tp / predicted : 0;
      std::vector<double> scores(n);
      std::vector<bool> pos(n);
      for (std::size_t i = 0; i < n; ++i) {
        scores[i] = probs[i * k + c];
        pos[i] = labels[i] == c;
      }
      if (actual > 0 && actual < double(n)) {
        ASSERT_TRUE(r.per_class_auc[c].has_value());
        EXPECT_NEAR(*r.per_class_auc[c], BruteAuc(scores, pos), 1e-12);
      }
    }
    EXPECT_NEAR(r.accuracy, correct / n, 1e-12);
    EXPECT_NEAR(r.macro_recall, recall / k, 1e-12);
    EXPECT_NEAR(r.macro_precision, precision / k, 1e-12);
  }
}

std::vector<data::VideoSample> TwoClips() {
  data::VideoGeometry g{8, 16, 16};
  return {data::SynthVideo(0, 1, g), data::SynthVideo(3, 2, g)};
}

TEST(Train, OverfitsTwoSamples) {
  std::vector<data::VideoSample> clips = TwoClips();
  TrainSpec spec;
  spec.epochs = 200;
  spec.batch_size = 2;
  TrainResult res = Train(model::ModelConfig::Tiny(), clips, spec);
  model::CtuNet<float> net = model::ModelFromCheckpoint<float>(res.checkpoint);
  EXPECT_DOUBLE_EQ(Evaluate(net, clips).accuracy, 1.0);
  EXPECT_LT(res.epoch_losses.back(), res.epoch_losses.front());
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  std::vector<data::VideoSample> clips = TwoClips();
  TrainSpec spec;
  spec.epochs = 2;
  spec.learning_rate = 0;
  model::ModelConfig cfg = model::ModelConfig::Tiny();
  TrainResult res = Train(cfg, clips, spec);
  model::CtuNet<float> init(cfg);
  model::CtuNet<float> trained = model::ModelFromCheckpoint<float>(res.checkpoint);
  for (std::size_t i = 0; i < init.params().size(); ++i) {
    if (!init.params()[i].trainable) continue;
    EXPECT_EQ(init.params()[i].value.storage(), trained.params()[i].value.storage()) << init.params()[i].name;
  }
}

TEST(Train, SameSeedSameLossCurve) {
  std::vector<data::VideoSample> clips = TwoClips();
  TrainSpec spec;
  spec.epochs = 3;
  spec.batch_size = 1;
  spec.seed = 5;
  TrainResult a = Train(model::ModelConfig::Tiny(), clips, spec);
  TrainResult b = Train(model::ModelConfig::Tiny(), clips, spec);
  EXPECT_EQ(a.step_losses, b.step_losses);
  EXPECT_EQ(a.step_losses.size(), 6u);
  spec.seed = 6;
  EXPECT_NE(Train(model::ModelConfig::Tiny(), clips, spec).step_losses, a.step_losses);
}

TEST(TrainSpec, ValidationAndJson) {
  TrainSpec spec;
  spec.batch_size = 0;
  EXPECT_THROW(spec.Validate(), ConfigError);
  spec = {};
  spec.optimizer = "sgd";
  EXPECT_THROW(spec.Validate(), ConfigError);
  spec = {};
  spec.learning_rate = 0.01;
  EXPECT_EQ(ToJson(TrainSpecFromJson(ToJson(spec))), ToJson(spec));
}

TEST(Report, EmitsTablesWithUndefinedAuc) {
  TempDir tmp;
  std::vector<int> labels = {0, 0, 1, 1};
  std::vector<NamedReport> reports = {
      {"full", ComputeMetrics(labels, OneHotProbs({0, 1, 1, 1}, 5), 5, data::DefaultClassNames())},
      {"no_slow", ComputeMetrics(labels, OneHotProbs({0, 0, 1, 1}, 5), 5, data::DefaultClassNames())}};
  EmitReport(reports, tmp.path());
  std::string metrics = ReadText(tmp / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "variant,accuracy,recall,precision");
  EXPECT_NE(metrics.find("full,75.00,"), std::string::npos);
  std::string auc = ReadText(tmp / "auc.csv");
  EXPECT_NE(auc.find("n/a"), std::string::npos);
  nlohmann::json radar = nlohmann::json::parse(ReadText(tmp / "radar.json"));
  EXPECT_EQ(radar["series"].size(), 2u);
  std::string svg = RenderRadarSvg(radar);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_EQ(LossCurveCsv(std::vector<double>{1.5, 0.5}).substr(0, 4), "step");
  EXPECT_EQ(FormatPercent(0.125), "12.50");
}

}  // namespace
}  // namespace autous::train
