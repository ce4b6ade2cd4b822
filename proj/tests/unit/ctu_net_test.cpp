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

#include "autous/ctu_net.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "autous/error.hpp"
#include "autous/nn.hpp"
#include "autous/rng.hpp"

namespace autous::model {
namespace {

template <typename S>
Tensor<S> RandomInput(const ModelConfig& cfg, std::size_t batch, Rng& rng) {
  Tensor<S> x({batch, static_cast<std::size_t>(cfg.input.frames), static_cast<std::size_t>(cfg.input.height),
               static_cast<std::size_t>(cfg.input.width), static_cast<std::size_t>(cfg.input.channels)});
  for (auto& v : x.values()) v = static_cast<S>(rng.Uniform());
  return x;
}

TEST(Shapes, DerivedCounts) {
  ModelConfig cfg = ModelConfig::Desk();
  cfg.input.frames = 10;
  cfg.fast.temporal_stride = 5;
  EXPECT_EQ(cfg.retained_frames(), 2);
  cfg.input.height = cfg.input.width = 32;
  cfg.fast.patch_size = 4;
  EXPECT_EQ(cfg.tokens_per_frame(), 65);
  ModelConfig full = ModelConfig::Full();
  EXPECT_EQ(full.input.frames, 16);
  EXPECT_EQ(full.input.height, 224);
  EXPECT_EQ(full.fast.temporal_stride, 5);
  EXPECT_NO_THROW(full.Validate());
}

TEST(Shapes, PathOutputs) {
  ModelConfig cfg = ModelConfig::Desk();
  CtuNet<float> net(cfg);
  Rng rng(1);
  Tensor<float> x = RandomInput<float>(cfg, 2, rng);
  EXPECT_EQ(net.SlowPathForward(x).shape(), (Shape{2, 16}));
  EXPECT_EQ(net.FastPathForward(x).shape(), (Shape{2, 16}));
  auto [gates, feats] = net.FrequencyPathForward(x);
  EXPECT_EQ(feats.shape(), (Shape{2, static_cast<std::size_t>(cfg.freq_feature_dim())}));
  EXPECT_EQ(gates.alpha_s.size(), 2u);
  EXPECT_EQ(net.Predict(x).probs.shape(), (Shape{2, 5}));
}

TEST(Shapes, BadInputIsRejected) {
  CtuNet<float> net(ModelConfig::Tiny());
  EXPECT_THROW(net.Predict(Tensor<float>({1, 8, 16, 16})), ValidationError);
  EXPECT_THROW(net.Predict(Tensor<float>({1, 8, 16, 15, 1})), ValidationError);
  ModelConfig bad = ModelConfig::Tiny();
  bad.input.height = 18;
  EXPECT_THROW(bad.Validate(), ConfigError);
}

TEST(Gates, SoftmaxExamples) {
  Tensor<double> g = nn::Softmax(Tensor<double>({2, 2}, {0.0, 0.0, std::log(3.0), 0.0}));
  EXPECT_NEAR(g[0], 0.5, 1e-15);
  EXPECT_NEAR(g[1], 0.5, 1e-15);
  EXPECT_NEAR(g[2], 0.75, 1e-15);
  EXPECT_NEAR(g[3], 0.25, 1e-15);
}

TEST(GatesProperty, GatePairsAndProbabilitiesSumToOne) {
  ModelConfig cfg = ModelConfig::Tiny();
  CtuNet<double> net(cfg);
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<double> x = RandomInput<double>(cfg, 3, rng);
    ForwardResult<double> r = net.Forward(x, {});
    for (std::size_t b = 0; b < 3; ++b) {
      ASSERT_NEAR(r.features.alpha_s[b] + r.features.alpha_f[b], 1.0, 1e-6);
      ASSERT_GE(r.features.alpha_s[b], 0.0);
      double sum = 0;
      for (std::size_t c = 0; c < 5; ++c) sum += r.prediction.probs[b * 5 + c];
      ASSERT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Ablation, FixedGates) {
  Rng rng(2);
  for (auto [ab, as] : {std::pair{Ablation::kNoSlow, 0.0}, {Ablation::kNoFast, 1.0}, {Ablation::kNoFreq, 0.5}}) {
    ModelConfig cfg = ModelConfig::Tiny();
    cfg.ablation = ab;
    CtuNet<double> net(cfg);
    ForwardResult<double> r = net.Forward(RandomInput<double>(cfg, 2, rng), {});
    EXPECT_DOUBLE_EQ(r.features.alpha_s[0], as) << AblationName(ab);
    EXPECT_DOUBLE_EQ(r.features.alpha_f[0], 1.0 - as) << AblationName(ab);
    EXPECT_THROW(net.FrequencyPathForward(RandomInput<double>(cfg, 1, rng)), ConfigError);
  }
  EXPECT_EQ(ParseAblation(AblationName(Ablation::kNoFreq)), Ablation::kNoFreq);
}

TEST(Fusion, WeightedSum) {
  Tensor<double> fused = Fuse(Tensor<double>({1, 2}, {4.0, 0.0}), Tensor<double>({1, 2}, {0.0, 4.0}),
                              Tensor<double>({1}, {0.75}), Tensor<double>({1}, {0.25}));
  EXPECT_DOUBLE_EQ(fused[0], 3.0);
  EXPECT_DOUBLE_EQ(fused[1], 1.0);
  EXPECT_THROW(Fuse(Tensor<double>({1, 2}), Tensor<double>({1, 2}), Tensor<double>({1}, {0.7}),
                    Tensor<double>({1}, {0.7})),
               InternalError);
}

TEST(Head, UniformAndPeaked) {
  Tensor<double> fused({1, 4}, {1.0, -2.0, 0.5, 3.0});
  Prediction<double> p = Classify(fused, Tensor<double>({5, 4}, 0.0), Tensor<double>({5}, 0.0));
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(p.probs[c], 0.2, 1e-15);
  p = Classify(fused, Tensor<double>({5, 4}, 0.0), Tensor<double>({5}, {10.0, 0.0, 0.0, 0.0, 0.0}));
  EXPECT_NEAR(p.probs[0], 0.99981, 1e-5);
}

TEST(CrossEntropy, GradientIsProbsMinusOneHot) {
  Prediction<double> p = Classify(Tensor<double>({2, 1}, {1.0, -1.0}), Tensor<double>({5, 1}, {1, 2, 3, 4, 5}),
                                  Tensor<double>({5}, 0.0));
  std::vector<int> labels = {0, 3};
  Tensor<double> d;
  double loss = CrossEntropy(p, labels, &d);
  EXPECT_NEAR(loss, -(std::log(p.probs[0]) + std::log(p.probs[8])) / 2, 1e-12);
  EXPECT_NEAR(d[0], (p.probs[0] - 1) / 2, 1e-15);
  EXPECT_NEAR(d[1], p.probs[1] / 2, 1e-15);
}

TEST(Spectrum, RfftMatchesBruteForceDft) {
  Rng rng(3);
  for (auto [h, w] : {std::pair{4, 4}, {5, 8}, {7, 6}}) {
    std::vector<double> plane(h * w);
    for (double& v : plane) v = rng.Uniform(-1, 1);
    std::vector<double> mag = RfftMagnitude(plane, h, w);
    ASSERT_EQ(mag.size(), static_cast<std::size_t>(h * (w / 2 + 1)));
    for (int u = 0; u < h; ++u) {
      for (int v = 0; v <= w / 2; ++v) {
        std::complex<double> acc = 0;
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            double angle = -2 * std::numbers::pi * (double(u * y) / h + double(v * x) / w);
            acc += plane[y * w + x] * std::polar(1.0, angle);
          }
        }
        EXPECT_NEAR(mag[u * (w / 2 + 1) + v], std::abs(acc) / std::sqrt(double(h * w)), 1e-12);
      }
    }
  }
}

TEST(Spectrum, ResizeIdentityAndConstant) {
  std::vector<double> plane = {1, 2, 3, 4, 5, 6};
  EXPECT_EQ(ResizeBilinear(plane, 2, 3, 2, 3), plane);
  std::vector<double> flat(12, 0.25);
  for (double v : ResizeBilinear(flat, 3, 4, 7, 5)) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Determinism, SameSeedSameParameters) {
  ModelConfig cfg = ModelConfig::Tiny();
  cfg.seed = 9;
  CtuNet<float> a(cfg), b(cfg);
  ASSERT_EQ(a.params().size(), b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].value.storage(), b.params()[i].value.storage());
  }
  cfg.seed = 10;
  CtuNet<float> c(cfg);
  EXPECT_NE(a.params()[0].value.storage(), c.params()[0].value.storage());
}

}  // namespace
}  // namespace autous::model
