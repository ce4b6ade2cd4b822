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

// Dataset manifests, the source-dataset acceptance rule, category merging,
// stratified splitting, clip loading and the synthetic fixture generator.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "autous/tensor.hpp"

namespace autous::data {

/// Class names in id order for the five-category ultrasound corpus.
const std::vector<std::string>& DefaultClassNames();
inline constexpr int kDefaultNumClasses = 5;

enum class Split { kTrain, kTest, kUnassigned };

const char* SplitName(Split split);
Split ParseSplit(const std::string& text);

struct ManifestEntry {
  std::string id;
  std::string media_path;
  int class_id = 0;
  Split split = Split::kUnassigned;
  std::string source_dataset;
  int num_frames = 1;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::string source_name;
  std::vector<std::string> class_names;
  /// Directory that relative media paths resolve against. Not serialized.
  std::filesystem::path base_dir;

  /// Throws ValidationError on duplicate ids, bad class ids or empty paths.
  void Validate() const;

  std::vector<ManifestEntry> EntriesIn(Split split) const;
  std::vector<int> ClassCounts() const;
};

/// Reads `path` (tab-separated `id path class_id split source frames`) and the
/// `classes.txt` sidecar next to it. Lines starting with '#' are comments; a
/// `# source: <name>` comment sets source_name.
DatasetManifest ReadManifest(const std::filesystem::path& path);

/// Writes the manifest and its sidecar. Each file is written to a temporary
/// name and renamed into place.
void WriteManifest(const DatasetManifest& manifest,
                   const std::filesystem::path& path);

enum class LogBase { kNatural, kTwo, kTen };

LogBase ParseLogBase(const std::string& text);

struct FilterDecision {
  double accuracy = 0;
  int num_classes = 1;
  double theta = 0.4;
  double threshold = 1;
  bool accepted = false;
};

/// A candidate source dataset is kept when a baseline classifier reaches
/// accuracy >= 1 - theta * log(num_classes).
FilterDecision EvaluateDatasetAcceptance(double accuracy, int num_classes,
                                         double theta,
                                         LogBase base = LogBase::kNatural);

/// Relabels entries through `mapping` (old class id -> new class name). New
/// ids follow the first appearance of each target when walking old ids in
/// ascending order, so an identity mapping leaves the manifest unchanged.
DatasetManifest MergeCategories(const DatasetManifest& manifest,
                                const std::map<int, std::string>& mapping);

/// Stratified split: within each class round(train_fraction * n) entries go
/// to train, the rest to test. Deterministic for a fixed seed.
DatasetManifest SplitTrainTest(const DatasetManifest& manifest,
                               double train_fraction, std::uint64_t seed);

struct VideoGeometry {
  int frames = 8;
  int height = 32;
  int width = 32;
};

/// One clip as a [T, H, W, C] block with values in [0, 1].
struct VideoSample {
  Tensor<float> frames;
  int class_id = 0;
  std::string id;

  int num_frames() const { return static_cast<int>(frames.dim(0)); }
  int height() const { return static_cast<int>(frames.dim(1)); }
  int width() const { return static_cast<int>(frames.dim(2)); }
  int channels() const { return static_cast<int>(frames.dim(3)); }

  void Validate() const;
};

/// Frame indices used to resample an n-frame clip to `target` frames:
/// round(i * (n - 1) / (target - 1)).
std::vector<int> SampleFrameIndices(int source_frames, int target_frames);

/// Decodes the entry's media, samples frames uniformly and resizes each frame
/// bilinearly to the requested geometry. Channels pass through unchanged.
VideoSample LoadVideo(const ManifestEntry& entry, const VideoGeometry& geometry,
                      const std::filesystem::path& base_dir = {});

VideoSample LoadVideoFile(const std::filesystem::path& path,
                          const VideoGeometry& geometry);

/// Averages RGB to one channel or replicates gray to three.
VideoSample ConvertChannels(const VideoSample& sample, int channels);

/// Deterministic single-channel clip for class `class_id` in [0, 5). Each
/// class differs in blob position (spatial), blob drift (temporal) and stripe
/// frequency (spectral).
VideoSample SynthVideo(int class_id, std::uint64_t seed,
                       const VideoGeometry& geometry);

/// Writes `per_class` synthetic clips per class as .npy files plus a manifest
/// (`manifest.tsv`, `classes.txt`) under `dir`. Returns the manifest.
DatasetManifest WriteSyntheticDataset(const std::filesystem::path& dir,
                                      int per_class, std::uint64_t seed,
                                      const VideoGeometry& geometry);

}  // namespace autous::data
