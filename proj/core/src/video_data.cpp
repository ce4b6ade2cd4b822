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

#include "autous/video_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "autous/media_io.hpp"
#include "autous/rng.hpp"

namespace autous::data {
namespace {

std::vector<std::string> SplitTabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int ParseInt(const std::string& text, const std::string& what, int line_no) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("manifest line " + std::to_string(line_no) + ": bad " +
                          what + " '" + text + "'");
  }
}

// Half-pixel-centre bilinear resize of one [H, W, C] frame.
void ResizeFrame(const float* src, int sh, int sw, int channels, float* dst,
                 int dh, int dw) {
  const double sy = static_cast<double>(sh) / dh;
  const double sx = static_cast<double>(sw) / dw;
  for (int y = 0; y < dh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, sh - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, sw - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      for (int c = 0; c < channels; ++c) {
        auto at = [&](int yy, int xx) {
          return static_cast<double>(src[(static_cast<std::size_t>(yy) * sw + xx) * channels + c]);
        };
        const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                         wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
        dst[(static_cast<std::size_t>(y) * dw + x) * channels + c] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

VideoSample FromRaw(const media::RawVideo& raw, const VideoGeometry& g) {
  if (g.frames < 1) throw ValidationError("target frame count must be >= 1");
  if (g.height < 8 || g.width < 8) throw ValidationError("target height and width must be >= 8");
  if (raw.frames < 1) throw DecodeError("video has no frames");
  VideoSample sample;
  sample.frames = Tensor<float>({static_cast<std::size_t>(g.frames), static_cast<std::size_t>(g.height),
                                 static_cast<std::size_t>(g.width), static_cast<std::size_t>(raw.channels)});
  const auto indices = SampleFrameIndices(raw.frames, g.frames);
  const std::size_t src_frame = static_cast<std::size_t>(raw.height) * raw.width * raw.channels;
  const std::size_t dst_frame = static_cast<std::size_t>(g.height) * g.width * raw.channels;
  for (int t = 0; t < g.frames; ++t) {
    ResizeFrame(raw.values.data() + indices[t] * src_frame, raw.height, raw.width, raw.channels,
                sample.frames.data() + t * dst_frame, g.height, g.width);
  }
  return sample;
}

}  // namespace

const std::vector<std::string>& DefaultClassNames() {
  static const std::vector<std::string> names = {"Benign", "Malignant", "Gall.", "COVID", "Pneu."};
  return names;
}

const char* SplitName(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

Split ParseSplit(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "test") return Split::kTest;
  if (text == "unassigned") return Split::kUnassigned;
  throw ValidationError("unknown split tag '" + text + "'");
}

void DatasetManifest::Validate() const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.id).second) throw ValidationError("duplicate entry id '" + e.id + "'");
    if (e.media_path.empty()) throw ValidationError("entry '" + e.id + "' has an empty media path");
    if (e.class_id < 0 || e.class_id >= static_cast<int>(class_names.size())) {
      throw ValidationError("entry '" + e.id + "' has class id " + std::to_string(e.class_id) +
                            " outside [0, " + std::to_string(class_names.size()) + ")");
    }
    if (e.num_frames < 1) throw ValidationError("entry '" + e.id + "' has no frames");
  }
}

std::vector<ManifestEntry> DatasetManifest::EntriesIn(Split split) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e);
  }
  return out;
}

std::vector<int> DatasetManifest::ClassCounts() const {
  std::vector<int> counts(class_names.size(), 0);
  for (const auto& e : entries) {
    if (e.class_id >= 0 && e.class_id < static_cast<int>(counts.size())) ++counts[e.class_id];
  }
  return counts;
}

DatasetManifest ReadManifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest manifest;
  manifest.base_dir = path.parent_path();

  const auto classes_path = path.parent_path() / "classes.txt";
  if (std::filesystem::exists(classes_path)) {
    std::ifstream cls(classes_path);
    std::string name;
    while (std::getline(cls, name)) {
      name = Trim(name);
      if (!name.empty()) manifest.class_names.push_back(name);
    }
  } else {
    manifest.class_names = DefaultClassNames();
  }

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (Trim(line).empty()) continue;
    if (line[0] == '#') {
      const std::string body = Trim(line.substr(1));
      if (body.rfind("source:", 0) == 0) manifest.source_name = Trim(body.substr(7));
      continue;
    }
    const auto f = SplitTabs(line);
    if (manifest.entries.empty() && !f.empty() && Trim(f[0]) == "id") continue;
    if (f.size() != 6) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": expected 6 tab-separated fields, got " +
                            std::to_string(f.size()));
    }
    ManifestEntry e;
    e.id = f[0];
    e.media_path = f[1];
    e.class_id = ParseInt(f[2], "class_id", line_no);
    e.split = ParseSplit(f[3]);
    e.source_dataset = f[4];
    e.num_frames = ParseInt(f[5], "frames", line_no);
    manifest.entries.push_back(std::move(e));
  }
  manifest.Validate();
  return manifest;
}

void WriteManifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  manifest.Validate();
  std::ostringstream body;
  if (!manifest.source_name.empty()) body << "# source: " << manifest.source_name << "\n";
  for (const auto& e : manifest.entries) {
    body << e.id << '\t' << e.media_path << '\t' << e.class_id << '\t' << SplitName(e.split) << '\t'
         << e.source_dataset << '\t' << e.num_frames << '\n';
  }
  std::ostringstream classes;
  for (const auto& name : manifest.class_names) classes << name << '\n';
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  media::WriteFileAtomic(path.parent_path() / "classes.txt", classes.str());
  media::WriteFileAtomic(path, body.str());
}

LogBase ParseLogBase(const std::string& text) {
  if (text == "e" || text == "ln" || text == "natural") return LogBase::kNatural;
  if (text == "2" || text == "log2") return LogBase::kTwo;
  if (text == "10" || text == "log10") return LogBase::kTen;
  throw ValidationError("unknown log base '" + text + "'", "use ln, log2 or log10");
}

FilterDecision EvaluateDatasetAcceptance(double accuracy, int num_classes, double theta, LogBase base) {
  if (!std::isfinite(accuracy) || !std::isfinite(theta)) {
    throw ValidationError("accuracy and theta must be finite");
  }
  if (accuracy < 0.0 || accuracy > 1.0) throw ValidationError("accuracy must lie in [0, 1]");
  if (num_classes < 1) throw ValidationError("num_classes must be >= 1");
  if (theta <= 0.0) throw ValidationError("theta must be > 0");
  double log_c = std::log(static_cast<double>(num_classes));
  if (base == LogBase::kTwo) log_c /= std::numbers::ln2;
  if (base == LogBase::kTen) log_c /= std::numbers::ln10;
  FilterDecision d;
  d.accuracy = accuracy;
  d.num_classes = num_classes;
  d.theta = theta;
  d.threshold = 1.0 - theta * log_c;
  d.accepted = accuracy >= d.threshold;
  return d;
}

DatasetManifest MergeCategories(const DatasetManifest& manifest, const std::map<int, std::string>& mapping) {
  manifest.Validate();
  std::set<int> present;
  for (const auto& e : manifest.entries) present.insert(e.class_id);
  for (int cls : present) {
    if (!mapping.contains(cls)) {
      throw ValidationError("mapping does not cover class '" + manifest.class_names[cls] + "' (id " +
                            std::to_string(cls) + ")");
    }
  }
  DatasetManifest out = manifest;
  out.class_names.clear();
  std::map<int, int> new_id;
  for (int cls : present) {
    const std::string& target = mapping.at(cls);
    if (target.empty()) throw ValidationError("empty target name for class id " + std::to_string(cls));
    auto it = std::find(out.class_names.begin(), out.class_names.end(), target);
    if (it == out.class_names.end()) {
      out.class_names.push_back(target);
      new_id[cls] = static_cast<int>(out.class_names.size()) - 1;
    } else {
      new_id[cls] = static_cast<int>(it - out.class_names.begin());
    }
  }
  for (auto& e : out.entries) e.class_id = new_id.at(e.class_id);
  return out;
}

DatasetManifest SplitTrainTest(const DatasetManifest& manifest, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train_fraction must lie strictly between 0 and 1");
  }
  manifest.Validate();
  DatasetManifest out = manifest;
  std::vector<std::vector<std::size_t>> by_class(manifest.class_names.size());
  for (std::size_t i = 0; i < out.entries.size(); ++i) by_class[out.entries[i].class_id].push_back(i);
  Rng rng(seed);
  for (std::size_t cls = 0; cls < by_class.size(); ++cls) {
    auto& members = by_class[cls];
    if (members.empty()) continue;
    if (members.size() < 2) {
      throw ValidationError("class '" + manifest.class_names[cls] + "' has fewer than 2 entries; cannot stratify");
    }
    rng.Shuffle(members);
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < members.size(); ++k) {
      out.entries[members[k]].split = k < n_train ? Split::kTrain : Split::kTest;
    }
  }
  return out;
}

void VideoSample::Validate() const {
  if (frames.rank() != 4) throw ValidationError("video sample must be [T, H, W, C]");
  if (frames.dim(0) < 1) throw ValidationError("video sample needs T >= 1");
  if (frames.dim(1) < 8 || frames.dim(2) < 8) throw ValidationError("video sample needs H, W >= 8");
  if (frames.dim(3) != 1 && frames.dim(3) != 3) throw ValidationError("video sample needs 1 or 3 channels");
  for (float v : frames.values()) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw ValidationError("video sample values must be finite and within [0, 1]");
    }
  }
}

std::vector<int> SampleFrameIndices(int source_frames, int target_frames) {
  if (source_frames < 1) throw DecodeError("video has fewer than 1 frame");
  if (target_frames < 1) throw ValidationError("target frame count must be >= 1");
  std::vector<int> idx(target_frames, 0);
  if (target_frames == 1) return idx;
  for (int i = 0; i < target_frames; ++i) {
    idx[i] = static_cast<int>(std::lround(static_cast<double>(i) * (source_frames - 1) / (target_frames - 1)));
  }
  return idx;
}

VideoSample LoadVideoFile(const std::filesystem::path& path, const VideoGeometry& geometry) {
  return FromRaw(media::ReadVideo(path), geometry);
}

VideoSample LoadVideo(const ManifestEntry& entry, const VideoGeometry& geometry,
                      const std::filesystem::path& base_dir) {
  std::filesystem::path p(entry.media_path);
  if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
  VideoSample sample = LoadVideoFile(p, geometry);
  sample.class_id = entry.class_id;
  sample.id = entry.id;
  return sample;
}

VideoSample ConvertChannels(const VideoSample& sample, int channels) {
  if (sample.channels() == channels) return sample;
  if (channels != 1 && channels != 3) throw ValidationError("channels must be 1 or 3");
  VideoSample out;
  out.class_id = sample.class_id;
  out.id = sample.id;
  const auto& s = sample.frames.shape();
  out.frames = Tensor<float>({s[0], s[1], s[2], static_cast<std::size_t>(channels)});
  const std::size_t pixels = s[0] * s[1] * s[2];
  for (std::size_t p = 0; p < pixels; ++p) {
    if (channels == 1) {
      out.frames[p] = (sample.frames[3 * p] + sample.frames[3 * p + 1] + sample.frames[3 * p + 2]) / 3.0f;
    } else {
      for (int c = 0; c < 3; ++c) out.frames[3 * p + c] = sample.frames[p];
    }
  }
  return out;
}

VideoSample SynthVideo(int class_id, std::uint64_t seed, const VideoGeometry& g) {
  if (class_id < 0 || class_id >= kDefaultNumClasses) {
    throw ValidationError("synthetic class id must lie in [0, 5)");
  }
  if (g.frames < 1 || g.height < 8 || g.width < 8) throw ValidationError("synthetic geometry too small");

  struct ClassStyle {
    double cx, cy;    // blob start, fraction of width / height
    double vx, vy;    // blob drift, fraction per frame
    double stripes;   // stripe cycles across the frame width
  };
  static constexpr std::array<ClassStyle, kDefaultNumClasses> kStyles = {{
      {0.28, 0.28, 0.030, 0.000, 2.0},
      {0.72, 0.28, 0.000, 0.030, 4.0},
      {0.50, 0.50, 0.000, 0.000, 6.0},
      {0.28, 0.72, 0.000, -0.030, 8.0},
      {0.72, 0.72, -0.030, 0.000, 10.0},
  }};
  const ClassStyle& st = kStyles[class_id];
  Rng rng(MixSeed(seed, static_cast<std::uint64_t>(class_id) + 1));
  const double cx = st.cx + rng.Uniform(-0.06, 0.06);
  const double cy = st.cy + rng.Uniform(-0.06, 0.06);
  const double vx = st.vx + rng.Uniform(-0.004, 0.004);
  const double vy = st.vy + rng.Uniform(-0.004, 0.004);
  const double phase = rng.Uniform(0.0, 2.0 * std::numbers::pi);
  const double amplitude = rng.Uniform(0.40, 0.50);
  const double sigma = 0.09 * std::min(g.height, g.width);

  VideoSample sample;
  sample.class_id = class_id;
  sample.id = "synth-c" + std::to_string(class_id) + "-s" + std::to_string(seed);
  sample.frames = Tensor<float>({static_cast<std::size_t>(g.frames), static_cast<std::size_t>(g.height),
                                 static_cast<std::size_t>(g.width), 1});
  std::size_t k = 0;
  for (int t = 0; t < g.frames; ++t) {
    const double bx = (cx + vx * t) * g.width;
    const double by = (cy + vy * t) * g.height;
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        const double stripe = 0.12 * std::sin(2.0 * std::numbers::pi * st.stripes * x / g.width + phase);
        const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
        const double blob = amplitude * std::exp(-d2 / (2.0 * sigma * sigma));
        const double noise = rng.Uniform(-0.05, 0.05);
        sample.frames[k++] = static_cast<float>(std::clamp(0.3 + stripe + blob + noise, 0.0, 1.0));
      }
    }
  }
  return sample;
}

DatasetManifest WriteSyntheticDataset(const std::filesystem::path& dir, int per_class, std::uint64_t seed,
                                      const VideoGeometry& geometry) {
  if (per_class < 1) throw ValidationError("per_class must be >= 1");
  std::filesystem::create_directories(dir / "clips");
  DatasetManifest manifest;
  manifest.source_name = "synthetic";
  manifest.class_names = DefaultClassNames();
  manifest.base_dir = dir;
  for (int cls = 0; cls < kDefaultNumClasses; ++cls) {
    for (int i = 0; i < per_class; ++i) {
      const std::uint64_t clip_seed = MixSeed(seed, static_cast<std::uint64_t>(cls * 100003 + i));
      const VideoSample s = SynthVideo(cls, clip_seed, geometry);
      std::vector<std::uint8_t> bytes(s.frames.size());
      for (std::size_t j = 0; j < bytes.size(); ++j) {
        bytes[j] = static_cast<std::uint8_t>(std::lround(s.frames[j] * 255.0f));
      }
      std::string name = DefaultClassNames()[cls];
      std::transform(name.begin(), name.end(), name.begin(), ::tolower);
      name.erase(std::remove(name.begin(), name.end(), '.'), name.end());
      const std::string rel = "clips/" + name + "_" + std::to_string(i) + ".npy";
      media::WriteFileAtomic(dir / rel, media::EncodeNpyU8(bytes, geometry.frames, geometry.height,
                                                            geometry.width, 1));
      ManifestEntry e;
      e.id = name + "_" + std::to_string(i);
      e.media_path = rel;
      e.class_id = cls;
      e.split = Split::kUnassigned;
      e.source_dataset = "synthetic";
      e.num_frames = geometry.frames;
      manifest.entries.push_back(std::move(e));
    }
  }
  WriteManifest(manifest, dir / "manifest.tsv");
  return manifest;
}

}  // namespace autous::data
