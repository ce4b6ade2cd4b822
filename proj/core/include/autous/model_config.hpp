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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace autous::model {

enum class Ablation { kFull, kNoSlow, kNoFast, kNoFreq };

const char* AblationName(Ablation a);
Ablation ParseAblation(const std::string& text);
const std::vector<Ablation>& AllAblations();

struct InputShape {
  int frames = 8;
  int height = 32;
  int width = 32;
  int channels = 1;
};

/// 3-D convolutional residual branch.
struct SlowConfig {
  int stem_channels = 8;
  /// Output channels of each residual block; size must equal num_blocks.
  std::vector<int> block_channels = {8, 8, 16, 16};
  int num_blocks = 4;
};

/// Strided divided space-time attention branch.
struct FastConfig {
  int temporal_stride = 5;
  int patch_size = 4;
  int embed_dim = 16;
  int num_layers = 1;
  int num_heads = 1;
  double mlp_ratio = 2.0;
  double dropout_rate = 0.1;
  /// Adds the input back around each attention (Z' = Z + Attn(Z)).
  bool attention_residual = false;
  /// Std of the truncated-normal init of patch, attention and MLP weights;
  /// 0 selects 1/sqrt(fan_in).
  double init_std = 0;
};

/// Spectral gating branch. d_freq = conv_channels * pool_grid^2.
struct FreqConfig {
  int conv_channels = 4;
  int gate_hidden_dim = 16;
  int pool_grid = 4;
};

struct ModelConfig {
  int num_classes = 5;
  InputShape input;
  SlowConfig slow;
  FastConfig fast;
  FreqConfig freq;
  Ablation ablation = Ablation::kFull;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the first violated constraint.
  void Validate() const;

  int embed_dim() const { return fast.embed_dim; }
  int retained_frames() const {
    return (input.frames + fast.temporal_stride - 1) / fast.temporal_stride;
  }
  int patches_per_frame() const {
    return (input.height / fast.patch_size) * (input.width / fast.patch_size);
  }
  int tokens_per_frame() const { return patches_per_frame() + 1; }
  int freq_feature_dim() const {
    return freq.conv_channels * freq.pool_grid * freq.pool_grid;
  }

  /// Smallest useful model: T=8, 16x16, p=4, D=8, L=1, N=1.
  static ModelConfig Tiny();
  /// Desk-scale model for the 32x32 synthetic corpus.
  static ModelConfig Desk();
  /// Hyperparameters at the published scale (224x224, N=4, stride 5).
  static ModelConfig Full();
};

nlohmann::json ToJson(const ModelConfig& config);
ModelConfig ModelConfigFromJson(const nlohmann::json& j);

}  // namespace autous::model
