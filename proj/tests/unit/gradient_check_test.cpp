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

#include "autous/gradient_check.hpp"

#include <gtest/gtest.h>

#include <ostream>

#include "autous/rng.hpp"

namespace autous::model {

void PrintTo(Ablation a, std::ostream* os) { *os << AblationName(a); }

namespace {

Tensor<double> TinyInput(const ModelConfig& cfg, std::size_t batch, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> x({batch, static_cast<std::size_t>(cfg.input.frames), static_cast<std::size_t>(cfg.input.height),
                    static_cast<std::size_t>(cfg.input.width), static_cast<std::size_t>(cfg.input.channels)});
  for (auto& v : x.values()) v = rng.Uniform();
  return x;
}

class GradientCheckVariant : public ::testing::TestWithParam<Ablation> {};

TEST_P(GradientCheckVariant, AnalyticMatchesNumeric) {
  ModelConfig cfg = ModelConfig::Tiny();
  cfg.ablation = GetParam();
  cfg.seed = 1;
  CtuNet<double> net(cfg);
  GradientCheckOptions opt;
  opt.num_samples = 96;
  GradientCheckResult r = GradientCheck(net, TinyInput(cfg, 2, 4), CrossEntropyLoss({1, 3}), opt);
  EXPECT_LT(r.max_rel_err, 1e-4) << r.worst_param << "[" << r.worst_index << "] analytic " << r.worst_analytic
                                 << " numeric " << r.worst_numeric;
  EXPECT_GE(r.checked, 96u);
}

INSTANTIATE_TEST_SUITE_P(AllVariants, GradientCheckVariant,
                         ::testing::Values(Ablation::kFull, Ablation::kNoSlow, Ablation::kNoFast, Ablation::kNoFreq),
                         [](const auto& info) { return std::string(AblationName(info.param)); });

TEST(GradientCheck, ConstantLossHasZeroGradient) {
  ModelConfig cfg = ModelConfig::Tiny();
  CtuNet<double> net(cfg);
  GradientCheckOptions opt;
  opt.num_samples = 32;
  GradientCheckResult r = GradientCheck(net, TinyInput(cfg, 1, 5), ConstantLoss(2.5), opt);
  EXPECT_EQ(r.max_rel_err, 0.0);
}

TEST(GradientCheck, TwoPointStencilIsAvailable) {
  ModelConfig cfg = ModelConfig::Tiny();
  cfg.ablation = Ablation::kNoSlow;
  CtuNet<double> net(cfg);
  GradientCheckOptions opt;
  opt.stencil_order = 2;
  opt.num_samples = 32;
  GradientCheckResult r = GradientCheck(net, TinyInput(cfg, 2, 6), CrossEntropyLoss({0, 2}), opt);
  EXPECT_LT(r.max_rel_err, 1e-3);
}

}  // namespace
}  // namespace autous::model
