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

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "autous/error.hpp"
#include "autous/media_io.hpp"
#include "autous/rng.hpp"
#include "test_support.hpp"

namespace autous::data {
namespace {

using autous::testing::TempDir;

TEST(DatasetFilter, Examples) {
  FilterDecision d = EvaluateDatasetAcceptance(0.80, 5, 0.4);
  EXPECT_NEAR(d.threshold, 0.35622, 1e-5);
  EXPECT_TRUE(d.accepted);
  d = EvaluateDatasetAcceptance(1.0, 1, 0.4);
  EXPECT_DOUBLE_EQ(d.threshold, 1.0);
  EXPECT_TRUE(d.accepted);
  EXPECT_FALSE(EvaluateDatasetAcceptance(0.30, 5, 0.4).accepted);
  EXPECT_NEAR(EvaluateDatasetAcceptance(0.5, 4, 0.4, LogBase::kTwo).threshold, 0.2, 1e-12);
  EXPECT_NEAR(EvaluateDatasetAcceptance(0.5, 10, 0.4, LogBase::kTen).threshold, 0.6, 1e-12);
}

TEST(DatasetFilter, RejectsBadInputs) {
  EXPECT_THROW(EvaluateDatasetAcceptance(1.2, 5, 0.4), ValidationError);
  EXPECT_THROW(EvaluateDatasetAcceptance(-0.1, 5, 0.4), ValidationError);
  EXPECT_THROW(EvaluateDatasetAcceptance(0.5, 0, 0.4), ValidationError);
  EXPECT_THROW(EvaluateDatasetAcceptance(0.5, 5, 0.0), ValidationError);
  EXPECT_THROW(EvaluateDatasetAcceptance(NAN, 5, 0.4), ValidationError);
  EXPECT_THROW(ParseLogBase("log3"), ValidationError);
  EXPECT_EQ(ParseLogBase("log2"), LogBase::kTwo);
  EXPECT_EQ(ParseLogBase("10"), LogBase::kTen);
}

TEST(DatasetFilterProperty, MonotoneInAccuracyAndTheta) {
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    double a = rng.Uniform();
    double b = rng.Uniform(a, 1.0);
    int n = 1 + static_cast<int>(rng.Below(10));
    double theta = rng.Uniform(0.01, 1.0);
    double theta2 = rng.Uniform(theta, 1.0);
    FilterDecision lo = EvaluateDatasetAcceptance(a, n, theta);
    FilterDecision hi = EvaluateDatasetAcceptance(b, n, theta);
    ASSERT_TRUE(!lo.accepted || hi.accepted);
    ASSERT_LE(EvaluateDatasetAcceptance(a, n, theta2).threshold, lo.threshold);
    ASSERT_TRUE(!lo.accepted || EvaluateDatasetAcceptance(a, n, theta2).accepted);
  }
}

DatasetManifest Synthetic(const std::vector<int>& counts) {
  DatasetManifest m;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    m.class_names.push_back("class" + std::to_string(c));
    for (int i = 0; i < counts[c]; ++i) {
      m.entries.push_back({"c" + std::to_string(c) + "_" + std::to_string(i), "clips/x.npy", static_cast<int>(c),
                           Split::kUnassigned, "src", 8});
    }
  }
  return m;
}

TEST(MergeCategories, NineSubtypesBecomeOne) {
  DatasetManifest m = Synthetic({30, 25, 25, 25, 25, 25, 25, 20, 20});
  std::map<int, std::string> mapping;
  for (int c = 0; c < 9; ++c) mapping[c] = "Gall.";
  DatasetManifest out = MergeCategories(m, mapping);
  ASSERT_EQ(out.class_names.size(), 1u);
  EXPECT_EQ(out.ClassCounts(), std::vector<int>{220});
}

TEST(MergeCategories, IdentityIsNoOpAndMissingClassIsNamed) {
  DatasetManifest m = Synthetic({3, 4, 5});
  DatasetManifest same = MergeCategories(m, {{0, "class0"}, {1, "class1"}, {2, "class2"}});
  EXPECT_EQ(same.class_names, m.class_names);
  for (std::size_t i = 0; i < m.entries.size(); ++i) EXPECT_EQ(same.entries[i].class_id, m.entries[i].class_id);
  try {
    MergeCategories(m, {{0, "a"}, {2, "b"}});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("class1"), std::string::npos);
  }
}

TEST(SplitTrainTest, StratifiedCountsAndDeterminism) {
  DatasetManifest m = Synthetic({100, 100, 100, 100, 95});
  DatasetManifest a = SplitTrainTest(m, 0.8, 7);
  EXPECT_EQ(a.EntriesIn(Split::kTrain).size(), 396u);
  EXPECT_EQ(a.EntriesIn(Split::kTest).size(), 99u);
  DatasetManifest again = SplitTrainTest(m, 0.8, 7);
  DatasetManifest other = SplitTrainTest(m, 0.8, 8);
  bool differs = false;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].split, again.entries[i].split);
    differs |= a.entries[i].split != other.entries[i].split;
  }
  EXPECT_TRUE(differs);
}

TEST(SplitTrainTest, TooSmallClassIsAnError) {
  EXPECT_THROW(SplitTrainTest(Synthetic({5, 1}), 0.8, 7), ValidationError);
  EXPECT_THROW(SplitTrainTest(Synthetic({5, 5}), 1.0, 7), ValidationError);
}

TEST(Manifest, RoundTripAndValidation) {
  TempDir tmp;
  DatasetManifest m = SplitTrainTest(Synthetic({3, 3}), 0.5, 1);
  m.source_name = "unit";
  WriteManifest(m, tmp / "manifest.tsv");
  DatasetManifest back = ReadManifest(tmp / "manifest.tsv");
  EXPECT_EQ(back.class_names, m.class_names);
  EXPECT_EQ(back.source_name, "unit");
  ASSERT_EQ(back.entries.size(), m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].id, m.entries[i].id);
    EXPECT_EQ(back.entries[i].split, m.entries[i].split);
  }
  autous::testing::WriteText(tmp / "with_header.tsv", "id\tpath\tclass_id\tsplit\tsource\tframes\n" +
                                                         autous::testing::ReadText(tmp / "manifest.tsv"));
  EXPECT_EQ(ReadManifest(tmp / "with_header.tsv").entries.size(), m.entries.size());
  m.entries.push_back(m.entries.front());
  EXPECT_THROW(m.Validate(), ValidationError);
  EXPECT_THROW(ReadManifest(tmp / "missing.tsv"), IoError);
}

TEST(SampleFrameIndices, UniformRounding) {
  std::vector<int> idx = SampleFrameIndices(50, 16);
  ASSERT_EQ(idx.size(), 16u);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(idx[i], static_cast<int>(std::lround(i * 49.0 / 15.0)));
  EXPECT_EQ(SampleFrameIndices(1, 4), (std::vector<int>{0, 0, 0, 0}));
  EXPECT_EQ(SampleFrameIndices(8, 1), std::vector<int>{0});
}

TEST(LoadVideoFile, NpyFramesAreSampledAndNormalized) {
  TempDir tmp;
  const int frames = 50, h = 8, w = 8;
  std::vector<std::uint8_t> u8(frames * h * w);
  for (int t = 0; t < frames; ++t) {
    for (int p = 0; p < h * w; ++p) u8[t * h * w + p] = static_cast<std::uint8_t>(t * 5);
  }
  autous::testing::WriteText(tmp / "clip.npy", media::EncodeNpyU8(u8, frames, h, w, 1));
  VideoSample s = LoadVideoFile(tmp / "clip.npy", {16, h, w});
  ASSERT_EQ(s.num_frames(), 16);
  std::vector<int> idx = SampleFrameIndices(frames, 16);
  for (int t = 0; t < 16; ++t) EXPECT_FLOAT_EQ(s.frames[t * h * w], idx[t] * 5 / 255.0f);

  autous::testing::WriteText(tmp / "clip.npz",
                             media::EncodeNpz("arr_0.npy", media::EncodeNpyU8(u8, frames, h, w, 1)));
  VideoSample z = LoadVideoFile(tmp / "clip.npz", {16, h, w});
  EXPECT_EQ(z.frames.storage(), s.frames.storage());
  autous::testing::WriteText(tmp / "bad.npy", "not a numpy file");
  EXPECT_THROW(LoadVideoFile(tmp / "bad.npy", {16, h, w}), DecodeError);
}

TEST(ConvertChannels, AverageAndReplicate) {
  VideoSample rgb;
  rgb.frames = Tensor<float>({1, 8, 8, 3}, 0.0f);
  for (std::size_t i = 0; i < rgb.frames.size(); i += 3) {
    rgb.frames[i] = 0.3f;
    rgb.frames[i + 1] = 0.6f;
    rgb.frames[i + 2] = 0.9f;
  }
  VideoSample gray = ConvertChannels(rgb, 1);
  EXPECT_EQ(gray.channels(), 1);
  EXPECT_NEAR(gray.frames[0], 0.6f, 1e-6);
  VideoSample back = ConvertChannels(gray, 3);
  EXPECT_EQ(back.channels(), 3);
  EXPECT_NEAR(back.frames[2], 0.6f, 1e-6);
}

TEST(SynthVideo, DeterministicAndClassDependent) {
  VideoGeometry g{8, 32, 32};
  VideoSample a = SynthVideo(2, 5, g);
  EXPECT_EQ(a.frames.storage(), SynthVideo(2, 5, g).frames.storage());
  EXPECT_NE(a.frames.storage(), SynthVideo(3, 5, g).frames.storage());
  EXPECT_NE(a.frames.storage(), SynthVideo(2, 6, g).frames.storage());
  EXPECT_NO_THROW(a.Validate());
  EXPECT_THROW(SynthVideo(5, 0, g), ValidationError);
}

TEST(SynthVideo, DatasetOnDisk) {
  TempDir tmp;
  DatasetManifest m = WriteSyntheticDataset(tmp.path(), 2, 1, {8, 16, 16});
  EXPECT_EQ(m.entries.size(), 10u);
  DatasetManifest back = ReadManifest(tmp / "manifest.tsv");
  VideoSample s = LoadVideo(back.entries[3], {8, 16, 16}, back.base_dir);
  EXPECT_EQ(s.class_id, back.entries[3].class_id);
  EXPECT_EQ(s.num_frames(), 8);
}

}  // namespace
}  // namespace autous::data
