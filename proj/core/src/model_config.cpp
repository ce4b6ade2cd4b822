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


#include "autous/model_config.hpp"

#include <cmath>

#include "autous/error.hpp"

namespace autous::model {

const char* AblationName(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNoSlow: return "no_slow";
    case Ablation::kNoFast: return "no_fast";
    case Ablation::kNoFreq: return "no_freq";
  }
  return "full";
}

Ablation ParseAblation(const std::string& text) {
  for (Ablation a : AllAblations()) {
    if (text == AblationName(a)) return a;
  }
  throw ConfigError("unknown ablation '" + text + "' (expected full, no_slow, no_fast or no_freq)");
}

const std::vector<Ablation>& AllAblations() {
  static const std::vector<Ablation> all = {Ablation::kFull, Ablation::kNoSlow, Ablation::kNoFast,
                                            Ablation::kNoFreq};
  return all;
}

namespace {

void Require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid model config: " + what);
}

}  // namespace

void ModelConfig::Validate() const {
  Require(num_classes >= 2, "num_classes must be >= 2");
  Require(input.frames >= 1, "input frames must be >= 1");
  Require(input.height >= 8 && input.width >= 8, "input height and width must be >= 8");
  Require(input.channels == 1 || input.channels == 3, "input channels must be 1 or 3");
  Require(slow.stem_channels >= 1, "slow.stem_channels must be >= 1");
  Require(slow.num_blocks >= 1, "slow.num_blocks (N) must be >= 1");
  Require(static_cast<int>(slow.block_channels.size()) == slow.num_blocks,
          "slow.block_channels must list one width per block (" + std::to_string(slow.num_blocks) + ")");
  for (int c : slow.block_channels) Require(c >= 1, "slow.block_channels entries must be >= 1");
  Require(fast.temporal_stride >= 1, "fast.temporal_stride (alpha) must be >= 1");
  Require(fast.patch_size >= 1, "fast.patch_size must be >= 1");
  Require(input.height % fast.patch_size == 0, "H mod p must be 0 (H=" + std::to_string(input.height) +
                                                   ", p=" + std::to_string(fast.patch_size) + ")");
  Require(input.width % fast.patch_size == 0, "W mod p must be 0 (W=" + std::to_string(input.width) +
                                                  ", p=" + std::to_string(fast.patch_size) + ")");
  Require(fast.embed_dim >= 1, "fast.embed_dim must be >= 1");
  Require(fast.num_layers >= 1, "fast.num_layers (L) must be >= 1");
  Require(fast.num_heads >= 1 && fast.embed_dim % fast.num_heads == 0,
          "fast.embed_dim must be divisible by fast.num_heads");
  Require(fast.mlp_ratio > 0 && std::isfinite(fast.mlp_ratio), "fast.mlp_ratio must be > 0");
  Require(std::lround(fast.mlp_ratio * fast.embed_dim) >= 1, "fast MLP hidden width must be >= 1");
  Require(fast.init_std >= 0, "fast.init_std must be >= 0");
  Require(fast.dropout_rate >= 0 && fast.dropout_rate < 1, "fast.dropout_rate must be in [0, 1)");
  Require(freq.conv_channels >= 1, "freq.conv_channels must be >= 1");
  Require(freq.gate_hidden_dim >= 1, "freq.gate_hidden_dim must be >= 1");
  Require(freq.pool_grid >= 1, "freq.pool_grid must be >= 1");
}

ModelConfig ModelConfig::Tiny() {
  ModelConfig c;
  c.input = {8, 16, 16, 1};
  c.slow.stem_channels = 4;
  c.slow.block_channels = {4};
  c.slow.num_blocks = 1;
  c.fast.embed_dim = 8;
  c.fast.num_layers = 1;
  c.fast.num_heads = 1;
  c.freq.conv_channels = 2;
  c.freq.gate_hidden_dim = 8;
  return c;
}

ModelConfig ModelConfig::Desk() { return ModelConfig{}; }

ModelConfig ModelConfig::Full() {
  ModelConfig c;
  c.input = {16, 224, 224, 3};
  c.slow.stem_channels = 64;
  c.slow.block_channels = {64, 128, 256, 512};
  c.slow.num_blocks = 4;
  c.fast.embed_dim = 384;
  c.fast.num_layers = 4;
  c.fast.num_heads = 6;
  c.fast.mlp_ratio = 4.0;
  c.freq.conv_channels = 8;
  c.freq.gate_hidden_dim = 64;
  return c;
}

nlohmann::json ToJson(const ModelConfig& c) {
  return {
      {"num_classes", c.num_classes},
      {"input", {{"frames", c.input.frames}, {"height", c.input.height}, {"width", c.input.width},
                 {"channels", c.input.channels}}},
      {"slow", {{"stem_channels", c.slow.stem_channels}, {"block_channels", c.slow.block_channels},
                {"num_blocks", c.slow.num_blocks}}},
      {"fast", {{"temporal_stride", c.fast.temporal_stride}, {"patch_size", c.fast.patch_size},
                {"embed_dim", c.fast.embed_dim}, {"num_layers", c.fast.num_layers},
                {"num_heads", c.fast.num_heads}, {"mlp_ratio", c.fast.mlp_ratio},
                {"dropout_rate", c.fast.dropout_rate}, {"attention_residual", c.fast.attention_residual},
                {"init_std", c.fast.init_std}}},
      {"freq", {{"conv_channels", c.freq.conv_channels}, {"gate_hidden_dim", c.freq.gate_hidden_dim},
                {"pool_grid", c.freq.pool_grid}}},
      {"ablation", AblationName(c.ablation)},
      {"seed", c.seed},
  };
}

ModelConfig ModelConfigFromJson(const nlohmann::json& j) {
  ModelConfig c;
  try {
    auto get = [](const nlohmann::json& obj, const char* key, auto& out) {
      if (obj.contains(key)) obj.at(key).get_to(out);
    };
    get(j, "num_classes", c.num_classes);
    if (j.contains("input")) {
      const auto& in = j.at("input");
      get(in, "frames", c.input.frames);
      get(in, "height", c.input.height);
      get(in, "width", c.input.width);
      get(in, "channels", c.input.channels);
    }
    if (j.contains("slow")) {
      const auto& s = j.at("slow");
      get(s, "stem_channels", c.slow.stem_channels);
      get(s, "block_channels", c.slow.block_channels);
      get(s, "num_blocks", c.slow.num_blocks);
    }
    if (j.contains("fast")) {
      const auto& f = j.at("fast");
      get(f, "temporal_stride", c.fast.temporal_stride);
      get(f, "patch_size", c.fast.patch_size);
      get(f, "embed_dim", c.fast.embed_dim);
      get(f, "num_layers", c.fast.num_layers);
      get(f, "num_heads", c.fast.num_heads);
      get(f, "mlp_ratio", c.fast.mlp_ratio);
      get(f, "dropout_rate", c.fast.dropout_rate);
      get(f, "attention_residual", c.fast.attention_residual);
      get(f, "init_std", c.fast.init_std);
    }
    if (j.contains("freq")) {
      const auto& q = j.at("freq");
      get(q, "conv_channels", c.freq.conv_channels);
      get(q, "gate_hidden_dim", c.freq.gate_hidden_dim);
      get(q, "pool_grid", c.freq.pool_grid);
    }
    if (j.contains("ablation")) c.ablation = ParseAblation(j.at("ablation").get<std::string>());
    get(j, "seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  c.Validate();
  return c;
}

}  // namespace autous::model
