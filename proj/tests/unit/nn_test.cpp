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

#include "autous/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "autous/rng.hpp"

namespace autous::nn {
namespace {

TEST(Attention, SingleTokenReturnsItsValue) {
  Tensor<double> q({1, 3}, {0.3, -1.0, 2.0});
  Tensor<double> k({1, 3}, {1.0, 0.5, -0.2});
  Tensor<double> v({1, 2}, {7.0, -3.0});
  Tensor<double> w;
  Tensor<double> out = Attention(q, k, v, &w);
  EXPECT_DOUBLE_EQ(out[0], 7.0);
  EXPECT_DOUBLE_EQ(out[1], -3.0);
  EXPECT_DOUBLE_EQ(w[0], 1.0);
}

TEST(Attention, IdenticalKeysSplitEvenly) {
  Tensor<double> q({1, 2}, {1.0, 2.0});
  Tensor<double> k({2, 2}, {0.5, 0.5, 0.5, 0.5});
  Tensor<double> v({2, 1}, {2.0, 4.0});
  Tensor<double> w;
  Tensor<double> out = Attention(q, k, v, &w);
  EXPECT_NEAR(w[0], 0.5, 1e-15);
  EXPECT_NEAR(w[1], 0.5, 1e-15);
  EXPECT_NEAR(out[0], 3.0, 1e-15);
}

TEST(Attention, ScaledDotProductExample) {
  Tensor<double> q({1, 2}, {1.0, 0.0});
  Tensor<double> eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor<double> w;
  Tensor<double> out = Attention(q, eye, eye, &w);
  const double expected = 1.0 / (1.0 + std::exp(-1.0 / std::sqrt(2.0)));
  EXPECT_NEAR(expected, 0.66976, 1e-5);
  EXPECT_NEAR(w[0], expected, 1e-15);
  EXPECT_NEAR(w[1], 1.0 - expected, 1e-15);
  EXPECT_NEAR(out[0], expected, 1e-15);
}

TEST(Laplacian, AllOnesThreeByThree) {
  Tensor<double> x({1, 1, 3, 3}, 1.0);
  Tensor<double> y = LaplacianForward(x);
  EXPECT_DOUBLE_EQ(y[4], 0.0);
  for (std::size_t corner : {0, 2, 6, 8}) EXPECT_DOUBLE_EQ(y[corner], 2.0);
  for (std::size_t edge : {1, 3, 5, 7}) EXPECT_DOUBLE_EQ(y[edge], 1.0);
}

TEST(LaplacianProperty, ConstantInteriorIsZeroAndAdjointHolds) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t h = 3 + rng.Below(8), w = 3 + rng.Below(8);
    double c = rng.Uniform(-5, 5);
    Tensor<double> y = LaplacianForward(Tensor<double>({1, 2, h, w}, c));
    for (std::size_t ch = 0; ch < 2; ++ch) {
      for (std::size_t i = 1; i + 1 < h; ++i) {
        for (std::size_t j = 1; j + 1 < w; ++j) ASSERT_EQ(y[(ch * h + i) * w + j], 0.0);
      }
    }
    Tensor<double> a({1, 1, h, w}), b({1, 1, h, w});
    for (auto& v : a.values()) v = rng.Uniform(-1, 1);
    for (auto& v : b.values()) v = rng.Uniform(-1, 1);
    Tensor<double> la = LaplacianForward(a), ltb = LaplacianBackward(b);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      lhs += la[i] * b[i];
      rhs += a[i] * ltb[i];
    }
    ASSERT_NEAR(lhs, rhs, 1e-10);
  }
}

TEST(SoftmaxProperty, RowsSumToOne) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t cols = 1 + rng.Below(8);
    Tensor<double> logits({3, cols});
    for (auto& v : logits.values()) v = rng.Uniform(-50, 50);
    Tensor<double> p = Softmax(logits);
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        ASSERT_GE(p[r * cols + c], 0.0);
        sum += p[r * cols + c];
      }
      ASSERT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Pooling, AdaptiveBinsCoverInput) {
  for (std::size_t n = 1; n < 20; ++n) {
    for (std::size_t m = 1; m <= 6; ++m) {
      auto first = AdaptiveBin(0, n, m);
      auto last = AdaptiveBin(m - 1, n, m);
      EXPECT_EQ(first.first, 0u);
      EXPECT_EQ(last.second, n);
      for (std::size_t b = 0; b < m; ++b) EXPECT_LT(AdaptiveBin(b, n, m).first, AdaptiveBin(b, n, m).second);
    }
  }
  Tensor<double> x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  Tensor<double> avg = AdaptiveAvgPool2dForward(x, 2);
  EXPECT_DOUBLE_EQ(avg[0], (0 + 1 + 4 + 5) / 4.0);
  std::vector<std::size_t> argmax;
  Tensor<double> mx = MaxPool2dForward(x, 2, &argmax);
  EXPECT_EQ(mx.storage(), (std::vector<double>{5, 7, 13, 15}));
}

TEST(Linear, ForwardExample) {
  Tensor<double> x({1, 2}, {1.0, 2.0});
  Tensor<double> w({2, 2}, {1.0, 0.0, 3.0, -1.0});
  Tensor<double> b({2}, {0.5, 0.0});
  Tensor<double> y = LinearForward(x, w, b);
  EXPECT_DOUBLE_EQ(y[0], 1.5);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
}

}  // namespace
}  // namespace autous::nn
