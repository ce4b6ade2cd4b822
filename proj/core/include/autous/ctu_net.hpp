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

// CTU-Net: a three-path video classifier.
//
//   slow path   3-D conv stem + residual blocks -> global pool -> linear -> F_s
//   fast path   strided frames -> patch tokens + cls -> divided space/time
//               attention layers -> mean of per-frame cls tokens -> F_f
//   freq path   |rfft2| per frame -> conv -> Laplacian -> pools -> mean over
//               time -> MLP -> softmax gates (alpha_s, alpha_f)
//
//   F_fused = alpha_s * F_s + alpha_f * F_f,  probs = softmax(W_c F_fused + b)
//
// A CtuNet is immutable during Forward/Backward; the trainer owns updates.

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "autous/model_config.hpp"
#include "autous/tensor.hpp"
#include "autous/video_data.hpp"

namespace autous::model {

template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  /// Buffers (batch-norm running statistics) are saved but never trained.
  bool trainable = true;
};

template <typename S>
class ParameterSet {
 public:
  std::size_t Add(std::string name, Tensor<S> value, bool trainable = true);
  std::size_t IndexOf(const std::string& name) const;
  bool Contains(const std::string& name) const;

  Parameter<S>& operator[](std::size_t i) { return entries_[i]; }
  const Parameter<S>& operator[](std::size_t i) const { return entries_[i]; }
  std::size_t size() const { return entries_.size(); }
  std::vector<Parameter<S>>& entries() { return entries_; }
  const std::vector<Parameter<S>>& entries() const { return entries_; }

  std::size_t TrainableScalarCount() const;

 private:
  std::vector<Parameter<S>> entries_;
};

template <typename S>
using Gradients = std::vector<Tensor<S>>;

template <typename S>
struct Prediction {
  Tensor<S> logits;  // [B, C]
  Tensor<S> probs;   // [B, C]
};

template <typename S>
struct PathFeatures {
  Tensor<S> slow;     // F_s [B, D]
  Tensor<S> fast;     // F_f [B, D]
  Tensor<S> alpha_s;  // [B]
  Tensor<S> alpha_f;  // [B]
  Tensor<S> fused;    // [B, D]
};

struct GateOutput {
  std::vector<double> alpha_s;
  std::vector<double> alpha_f;
};

struct ForwardOptions {
  /// Batch statistics in batch norm (otherwise running statistics).
  bool training = false;
  /// Apply dropout in the transformer MLP (only meaningful with training).
  bool dropout = false;
  std::uint64_t dropout_seed = 0;
};

template <typename S>
struct ForwardTrace;

template <typename S>
struct ForwardResult {
  Prediction<S> prediction;
  PathFeatures<S> features;
  std::shared_ptr<const ForwardTrace<S>> trace;  // set when requested
};

/// Stacks samples into a [B, T, H, W, C] batch.
template <typename S>
Tensor<S> MakeBatch(std::span<const data::VideoSample> samples);

template <typename S>
class CtuNet {
 public:
  /// Builds and initializes parameters from config.seed.
  explicit CtuNet(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ParameterSet<S>& params() { return params_; }
  const ParameterSet<S>& params() const { return params_; }

  /// Full composition. Set keep_trace to run Backward afterwards.
  ForwardResult<S> Forward(const Tensor<S>& x, const ForwardOptions& options, bool keep_trace = false) const;

  /// Inference convenience: running statistics, no dropout.
  Prediction<S> Predict(const Tensor<S>& x) const;

  /// Parameter gradients of sum(dlogits * logits), aligned with params().
  Gradients<S> Backward(const ForwardTrace<S>& trace, const Tensor<S>& dlogits) const;

  /// Moves batch-norm running statistics toward the batch statistics in trace.
  void UpdateRunningStats(const ForwardTrace<S>& trace, double momentum);

  // Individual paths, evaluated with the given options.
  Tensor<S> SlowPathForward(const Tensor<S>& x, const ForwardOptions& options = {}) const;
  Tensor<S> FastPathForward(const Tensor<S>& x, const ForwardOptions& options = {}) const;
  /// Gates plus the pooled spectral features F_freq [B, d_freq].
  std::pair<GateOutput, Tensor<S>> FrequencyPathForward(const Tensor<S>& x) const;

  Gradients<S> ZeroGradients() const;

 private:
  struct Index;
  void ValidateInput(const Tensor<S>& x) const;

  ModelConfig config_;
  ParameterSet<S> params_;
  std::shared_ptr<const Index> idx_;
};

/// F_fused = alpha_s * F_s + alpha_f * F_f per sample. Throws InternalError
/// if a gate pair deviates from summing to 1 by more than 1e-4.
template <typename S>
Tensor<S> Fuse(const Tensor<S>& slow, const Tensor<S>& fast, const Tensor<S>& alpha_s, const Tensor<S>& alpha_f);

/// logits = F_fused W^T + b, probs = row softmax.
template <typename S>
Prediction<S> Classify(const Tensor<S>& fused, const Tensor<S>& weight, const Tensor<S>& bias);

/// Hash of every piecewise-linear branch taken in a traced forward pass
/// (ReLU signs, max-pool winners). Equal hashes for two parameter values mean
/// the network is smooth between them.
template <typename S>
std::uint64_t ActivationPattern(const ForwardTrace<S>& trace);

/// Mean categorical cross-entropy of probs against labels. When dlogits is
/// given it receives d(loss)/d(logits) = (probs - onehot) / B.
template <typename S>
double CrossEntropy(const Prediction<S>& pred, std::span<const int> labels, Tensor<S>* dlogits = nullptr);

/// Magnitude of the orthonormal 2-D real FFT of one [H, W] plane: [H, W/2+1].
std::vector<double> RfftMagnitude(std::span<const double> plane, int height, int width);

/// Half-pixel bilinear resize of one plane.
std::vector<double> ResizeBilinear(std::span<const double> plane, int src_h, int src_w, int dst_h, int dst_w);

/// |rfft2| of every frame and channel of x [B, T, H, W, C], upsampled back to
/// [H, W]: returns [B * T, C, H, W].
template <typename S>
Tensor<S> MagnitudeSpectra(const Tensor<S>& x);

extern template class CtuNet<float>;
extern template class CtuNet<double>;

}  // namespace autous::model
