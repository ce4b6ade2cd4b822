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

#include <algorithm>
#include <cmath>
#include <set>

#include "autous/error.hpp"
#include "autous/rng.hpp"

namespace autous::model {
namespace {

constexpr double kMinStep = 1e-6;

}  // namespace

LossFn CrossEntropyLoss(std::vector<int> labels) {
  return [labels = std::move(labels)](const Prediction<double>& pred, Tensor<double>& dlogits) -> long double {
    CrossEntropy(pred, labels, &dlogits);
    const std::size_t B = pred.logits.dim(0), C = pred.logits.dim(1);
    if (labels.size() != B) throw ValidationError("label count does not match batch size");
    long double total = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const double* z = pred.logits.data() + b * C;
      const long double zmax = *std::max_element(z, z + C);
      long double sum = 0;
      for (std::size_t c = 0; c < C; ++c) sum += std::exp(static_cast<long double>(z[c]) - zmax);
      total += std::log(sum) + zmax - static_cast<long double>(z[labels[b]]);
    }
    return total / static_cast<long double>(B);
  };
}

LossFn ConstantLoss(double value) {
  return [value](const Prediction<double>& pred, Tensor<double>& dlogits) -> long double {
    dlogits = Tensor<double>(pred.logits.shape());
    return value;
  };
}

GradientCheckResult GradientCheck(CtuNet<double>& model, const Tensor<double>& input, const LossFn& loss,
                                  const GradientCheckOptions& opt) {
  if (!(opt.epsilon >= 1e-6 && opt.epsilon <= 1e-3)) {
    throw ValidationError("gradient check epsilon must lie in [1e-6, 1e-3]");
  }
  if (opt.stencil_order != 2 && opt.stencil_order != 4) {
    throw ValidationError("gradient check stencil order must be 2 or 4");
  }
  auto& params = model.params();
  for (const auto& p : params.entries()) {
    for (double v : p.value.values()) {
      if (!std::isfinite(v)) throw ValidationError("parameter " + p.name + " is not finite");
    }
  }
  ForwardOptions fo;
  fo.training = true;
  bool kink = false;
  std::uint64_t base_pattern = 0;
  auto eval = [&]() {
    Tensor<double> unused;
    const auto r = model.Forward(input, fo, true);
    if (ActivationPattern(*r.trace) != base_pattern) kink = true;
    return loss(r.prediction, unused);
  };

  const auto fwd = model.Forward(input, fo, true);
  base_pattern = ActivationPattern(*fwd.trace);
  Tensor<double> dlogits;
  loss(fwd.prediction, dlogits);
  const Gradients<double> grads = model.Backward(*fwd.trace, dlogits);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double v : grads[i].values()) {
      if (!std::isfinite(v)) throw InternalError("non-finite gradient for parameter " + params[i].name);
    }
  }

  std::vector<std::size_t> trainable;
  std::size_t total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].trainable) {
      trainable.push_back(i);
      total += params[i].value.size();
    }
  }
  Rng rng(opt.seed);
  auto draw_in = [&](std::size_t i) { return std::make_pair(i, static_cast<std::size_t>(rng.Below(params[i].value.size()))); };
  auto draw_any = [&]() {
    std::size_t flat = rng.Below(total);
    for (std::size_t i : trainable) {
      if (flat < params[i].value.size()) return std::make_pair(i, flat);
      flat -= params[i].value.size();
    }
    return std::make_pair(trainable.back(), std::size_t{0});
  };
  const std::size_t want = std::min(std::max(opt.num_samples, trainable.size()), total);
  const std::size_t max_attempts = 20 * want;
  std::set<std::pair<std::size_t, std::size_t>> seen;

  GradientCheckResult res;
  auto check = [&](std::pair<std::size_t, std::size_t> pick) {
    if (!seen.insert(pick).second) return false;
    const auto [pi, k] = pick;
    double& w = params[pi].value[k];
    const double saved = w;
    kink = false;
    auto at = [&](double step) {
      w = saved + step;
      const long double l = eval();
      w = saved;
      return l;
    };
    double fd = 0;
    for (double h = opt.epsilon; h >= kMinStep; h *= 0.5) {
      kink = false;
      if (opt.stencil_order == 2) {
        fd = static_cast<double>((at(h) - at(-h)) / (2.0L * h));
      } else {
        fd = static_cast<double>((-at(2 * h) + 8.0L * at(h) - 8.0L * at(-h) + at(-2 * h)) / (12.0L * h));
      }
      if (!kink) break;
    }
    if (kink) {
      ++res.kinks_skipped;
      return false;
    }
    const double a = grads[pi][k];
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
    ++res.checked;
    if (rel > res.max_rel_err || res.checked == 1) {
      res.max_rel_err = rel;
      res.worst_param = params[pi].name;
      res.worst_index = k;
      res.worst_analytic = a;
      res.worst_numeric = fd;
    }
    return true;
  };

  std::size_t attempts = 0;
  for (std::size_t i : trainable) {
    while (!check(draw_in(i))) {
      if (++attempts > max_attempts) throw InternalError("gradient check could not find smooth samples in " + params[i].name);
    }
  }
  while (res.checked < want) {
    check(draw_any());
    if (++attempts > max_attempts) throw InternalError("gradient check could not find enough smooth samples");
  }
  return res;
}

GradientCheckResult GradientCheck(const ModelConfig& config, const LossFn& loss, const Tensor<double>& input,
                                  double epsilon) {
  CtuNet<double> model(config);
  GradientCheckOptions opt;
  opt.epsilon = epsilon;
  opt.seed = config.seed;
  return GradientCheck(model, input, loss, opt);
}

}  // namespace autous::model
