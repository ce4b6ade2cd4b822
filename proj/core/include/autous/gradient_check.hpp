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


#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "autous/ctu_net.hpp"

namespace autous::model {

/// Scalar loss of a prediction. Fills dlogits with d(loss)/d(logits).
/// Returned in extended precision: a double loss near 1 is quantized to
/// 2.2e-16, which alone puts a floor of ~1e-12 under every central difference.
using LossFn = std::function<long double(const Prediction<double>& pred, Tensor<double>& dlogits)>;

LossFn CrossEntropyLoss(std::vector<int> labels);
LossFn ConstantLoss(double value = 1.0);

struct GradientCheckOptions {
  double epsilon = 1e-4;
  /// 2: (L(w+h) - L(w-h)) / 2h.  4: the five-point central stencil
  /// (-L(w+2h) + 8L(w+h) - 8L(w-h) + L(w-2h)) / 12h, error O(h^4).
  int stencil_order = 4;
  /// Scalars compared; every trainable tensor contributes at least one.
  std::size_t num_samples = 256;
  std::uint64_t seed = 0;
};

struct GradientCheckResult {
  double max_rel_err = 0;
  std::size_t checked = 0;
  /// Sampled scalars whose stencil crossed a ReLU or max-pool switch point
  /// even at the smallest step (1e-6); each was replaced by a new draw.
  std::size_t kinks_skipped = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
};

/// Compares backprop gradients with central differences. Relative error uses the denominator
/// max(|a|, |fd|, 1e-8). Batch norm runs on batch statistics, dropout off.
/// When a stencil changes the activation pattern the step is halved, down
/// to 1e-6; a scalar with no smooth step is redrawn.
GradientCheckResult GradientCheck(CtuNet<double>& model, const Tensor<double>& input, const LossFn& loss,
                                  const GradientCheckOptions& options = {});

/// Builds the model from config and checks it at its initialization.
GradientCheckResult GradientCheck(const ModelConfig& config, const LossFn& loss, const Tensor<double>& input,
                                  double epsilon);

}  // namespace autous::model
