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

#include "autous/checkpoint.hpp"

#include <gtest/gtest.h>

#include <cstring>

#include "autous/error.hpp"
#include "autous/rng.hpp"
#include "test_support.hpp"

namespace autous::model {
namespace {

using autous::testing::TempDir;

TEST(Checkpoint, BitwiseRoundTripAndIdenticalForward) {
  TempDir tmp;
  for (Ablation ab : AllAblations()) {
    ModelConfig cfg = ModelConfig::Tiny();
    cfg.ablation = ab;
    cfg.seed = 42;
    CtuNet<float> net(cfg);
    std::string path = (tmp / (std::string(AblationName(ab)) + ".ckpt")).string();
    SaveCheckpoint(MakeCheckpoint(net, {{"note", "unit"}}), path);
    Checkpoint loaded = LoadCheckpoint(path);
    EXPECT_EQ(loaded.metadata["note"], "unit");
    EXPECT_EQ(ToJson(loaded.config), ToJson(cfg));
    CtuNet<float> back = ModelFromCheckpoint<float>(loaded);
    ASSERT_EQ(back.params().size(), net.params().size());
    for (std::size_t i = 0; i < net.params().size(); ++i) {
      const auto& a = net.params()[i].value.storage();
      const auto& b = back.params()[i].value.storage();
      ASSERT_EQ(a.size(), b.size());
      EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0) << net.params()[i].name;
    }
    Rng rng(1);
    Tensor<float> x({2, 8, 16, 16, 1});
    for (auto& v : x.values()) v = static_cast<float>(rng.Uniform());
    EXPECT_EQ(net.Predict(x).logits.storage(), back.Predict(x).logits.storage());
  }
}

TEST(Checkpoint, EncodeIsDeterministic) {
  CtuNet<float> net(ModelConfig::Tiny());
  EXPECT_EQ(EncodeCheckpoint(MakeCheckpoint(net)), EncodeCheckpoint(MakeCheckpoint(net)));
}

TEST(Checkpoint, CorruptBuffersAreRejected) {
  CtuNet<float> net(ModelConfig::Tiny());
  std::vector<std::uint8_t> bytes = EncodeCheckpoint(MakeCheckpoint(net));
  EXPECT_THROW(DecodeCheckpoint({}), DecodeError);
  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + bytes.size() / 2);
  EXPECT_THROW(DecodeCheckpoint(truncated), DecodeError);
  std::vector<std::uint8_t> bad_magic = bytes;
  bad_magic[0] ^= 0xFF;
  EXPECT_THROW(DecodeCheckpoint(bad_magic), DecodeError);
  Checkpoint future = MakeCheckpoint(net);
  future.format_version = kCheckpointFormatVersion + 1;
  EXPECT_THROW(DecodeCheckpoint(EncodeCheckpoint(future)), DecodeError);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  Checkpoint ckpt = MakeCheckpoint(CtuNet<float>(ModelConfig::Tiny()));
  ckpt.params.back().values.pop_back();
  ckpt.params.back().shape.back() -= 1;
  EXPECT_ANY_THROW(ModelFromCheckpoint<float>(ckpt));
  TempDir tmp;
  EXPECT_THROW(LoadCheckpoint((tmp / "missing.ckpt").string()), IoError);
}

}  // namespace
}  // namespace autous::model
