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
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace autous::media {

/// Decoded clip, [frames, height, width, channels], normalized to [0, 1] by
/// the container's maximum code value (255 for 8-bit, 65535 for 16-bit).
struct RawVideo {
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> values;
};

/// Supports .npy, .npz (stored or deflated members) and, when built with
/// OpenCV, common container formats (.mp4, .avi, .mov, .mkv).
RawVideo ReadVideo(const std::filesystem::path& path);

RawVideo DecodeNpy(std::string_view bytes);
RawVideo DecodeNpz(std::string_view bytes);

/// Serializes uint8 [T, H, W, C] data as an .npy payload.
std::string EncodeNpyU8(const std::vector<std::uint8_t>& values, int frames,
                        int height, int width, int channels);

/// Wraps one .npy payload into an uncompressed .npz archive.
std::string EncodeNpz(const std::string& member_name,
                      const std::string& npy_bytes);

bool OpenCvAvailable();

std::string ReadFileBytes(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames over `path`.
void WriteFileAtomic(const std::filesystem::path& path,
                     std::string_view bytes);

}  // namespace autous::media
