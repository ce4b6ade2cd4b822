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


// Checkpoint container, little-endian throughout:
//
//   "AUTOUSCK"  u32 format_version
//   u32 n, n bytes   model config (JSON)
//   u32 n, n bytes   metadata (JSON object)
//   u32 count
//   count x { u32 n, name; u8 trainable; u32 rank; rank x u64 dim; f32 values }

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autous/ctu_net.hpp"

namespace autous::model {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  bool trainable = true;
  std::vector<float> values;
};

struct Checkpoint {
  ModelConfig config;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedArray> params;
  std::uint32_t format_version = kCheckpointFormatVersion;
};

template <typename S>
Checkpoint MakeCheckpoint(const CtuNet<S>& model, nlohmann::json metadata = nlohmann::json::object());

std::vector<std::uint8_t> EncodeCheckpoint(const Checkpoint& ckpt);
/// Throws DecodeError on a truncated or corrupt buffer and on a
/// format_version other than kCheckpointFormatVersion.
Checkpoint DecodeCheckpoint(const std::vector<std::uint8_t>& bytes);

void SaveCheckpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint LoadCheckpoint(const std::string& path);

/// Builds a model from the checkpoint's config and copies its parameters in.
/// The stored shape table must match the model's exactly.
template <typename S>
CtuNet<S> ModelFromCheckpoint(const Checkpoint& ckpt);

}  // namespace autous::model
