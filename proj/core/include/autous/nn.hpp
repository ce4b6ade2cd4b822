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

// Forward/backward pairs for the layers CTU-Net is built from. Layouts are
// channels-first: [B, C, T, H, W] for volumes, [N, C, H, W] for images,
// [rows, features] for token matrices. Backward functions accumulate into
// the parameter gradients they are handed and overwrite input gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "autous/tensor.hpp"

namespace autous::nn {

// ---------------------------------------------------------------------------
// 3-D convolution, stride 1, "same" zero padding (pad = k / 2), no bias.

template <typename S>
Tensor<S> Conv3dForward(const Tensor<S>& x, const Tensor<S>& w) {
  const std::size_t B = x.dim(0), Ci = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t Co = w.dim(0), K = w.dim(2);
  const long pad = static_cast<long>(K / 2);
  Tensor<S> y({B, Co, T, H, W});
  const std::size_t vol = T * H * W;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Co; ++co) {
      S* yo = y.data() + (b * Co + co) * vol;
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const S* xi = x.data() + (b * Ci + ci) * vol;
        for (std::size_t kt = 0; kt < K; ++kt) {
          for (std::size_t kh = 0; kh < K; ++kh) {
            for (std::size_t kw = 0; kw < K; ++kw) {
              const S wv = w[(((co * Ci + ci) * K + kt) * K + kh) * K + kw];
              const long dt = static_cast<long>(kt) - pad, dh = static_cast<long>(kh) - pad,
                         dw = static_cast<long>(kw) - pad;
              const long t0 = std::max(0L, -dt), t1 = std::min<long>(T, T - dt);
              const long h0 = std::max(0L, -dh), h1 = std::min<long>(H, H - dh);
              const long w0 = std::max(0L, -dw), w1 = std::min<long>(W, W - dw);
              for (long t = t0; t < t1; ++t) {
                for (long h = h0; h < h1; ++h) {
                  S* yr = yo + (t * H + h) * W;
                  const S* xr = xi + ((t + dt) * H + (h + dh)) * W + dw;
                  for (long c = w0; c < w1; ++c) yr[c] += wv * xr[c];
                }
              }
            }
          }
        }
      }
    }
  }
  return y;
}

/// dx may be null when the input gradient is not needed.
template <typename S>
void Conv3dBackward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy, Tensor<S>* dx,
                    Tensor<S>& dw) {
  const std::size_t B = x.dim(0), Ci = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t Co = w.dim(0), K = w.dim(2);
  const long pad = static_cast<long>(K / 2);
  const std::size_t vol = T * H * W;
  if (dx) *dx = Tensor<S>(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Co; ++co) {
      const S* go = dy.data() + (b * Co + co) * vol;
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const S* xi = x.data() + (b * Ci + ci) * vol;
        S* gi = dx ? dx->data() + (b * Ci + ci) * vol : nullptr;
        for (std::size_t kt = 0; kt < K; ++kt) {
          for (std::size_t kh = 0; kh < K; ++kh) {
            for (std::size_t kw = 0; kw < K; ++kw) {
              const std::size_t widx = (((co * Ci + ci) * K + kt) * K + kh) * K + kw;
              const S wv = w[widx];
              const long dt = static_cast<long>(kt) - pad, dh = static_cast<long>(kh) - pad,
                         dwo = static_cast<long>(kw) - pad;
              const long t0 = std::max(0L, -dt), t1 = std::min<long>(T, T - dt);
              const long h0 = std::max(0L, -dh), h1 = std::min<long>(H, H - dh);
              const long w0 = std::max(0L, -dwo), w1 = std::min<long>(W, W - dwo);
              S acc = 0;
              for (long t = t0; t < t1; ++t) {
                for (long h = h0; h < h1; ++h) {
                  const S* gr = go + (t * H + h) * W;
                  const long off = ((t + dt) * H + (h + dh)) * W + dwo;
                  const S* xr = xi + off;
                  for (long c = w0; c < w1; ++c) acc += gr[c] * xr[c];
                  if (gi) {
                    S* dr = gi + off;
                    for (long c = w0; c < w1; ++c) dr[c] += wv * gr[c];
                  }
                }
              }
              dw[widx] += acc;
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Batch normalization over axis 1 of [B, C, ...].

template <typename S>
struct BatchNormCache {
  Tensor<S> xhat;
  std::vector<S> inv_std;
  std::vector<S> batch_mean;
  std::vector<S> batch_var;  // biased
  std::size_t count = 0;     // elements per channel
};

/// With use_batch_stats the statistics come from x (training); otherwise the
/// running statistics are used (inference).
template <typename S>
Tensor<S> BatchNormForward(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                           const Tensor<S>& running_mean, const Tensor<S>& running_var,
                           bool use_batch_stats, S eps, BatchNormCache<S>* cache) {
  const std::size_t B = x.dim(0), C = x.dim(1);
  const std::size_t inner = x.size() / (B * C);
  const std::size_t n = B * inner;
  std::vector<S> mean(C), var(C), inv(C);
  for (std::size_t c = 0; c < C; ++c) {
    if (use_batch_stats) {
      S sum = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const S* p = x.data() + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) sum += p[i];
      }
      const S m = sum / static_cast<S>(n);
      S sq = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const S* p = x.data() + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) sq += (p[i] - m) * (p[i] - m);
      }
      mean[c] = m;
      var[c] = sq / static_cast<S>(n);
    } else {
      mean[c] = running_mean[c];
      var[c] = running_var[c];
    }
    inv[c] = S{1} / std::sqrt(var[c] + eps);
  }
  Tensor<S> y(x.shape());
  Tensor<S> xhat(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const S h = (x[base + i] - mean[c]) * inv[c];
        xhat[base + i] = h;
        y[base + i] = gamma[c] * h + beta[c];
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(var);
    cache->count = n;
  }
  return y;
}

/// Gradient for the batch-statistics path.
template <typename S>
Tensor<S> BatchNormBackward(const BatchNormCache<S>& cache, const Tensor<S>& gamma, const Tensor<S>& dy,
                            Tensor<S>& dgamma, Tensor<S>& dbeta) {
  const std::size_t B = dy.dim(0), C = dy.dim(1);
  const std::size_t inner = dy.size() / (B * C);
  const S n = static_cast<S>(cache.count);
  Tensor<S> dx(dy.shape());
  for (std::size_t c = 0; c < C; ++c) {
    S sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        sum_dy += dy[base + i];
        sum_dy_xhat += dy[base + i] * cache.xhat[base + i];
      }
    }
    dgamma[c] += sum_dy_xhat;
    dbeta[c] += sum_dy;
    const S k = gamma[c] * cache.inv_std[c] / n;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        dx[base + i] = k * (n * dy[base + i] - sum_dy - cache.xhat[base + i] * sum_dy_xhat);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Pointwise activations.

template <typename S>
void ReluInPlace(Tensor<S>& x) {
  for (auto& v : x.values()) v = v > S{0} ? v : S{0};
}

/// Uses the forward output: gradient passes where y > 0.
template <typename S>
Tensor<S> ReluBackward(const Tensor<S>& y, const Tensor<S>& dy) {
  Tensor<S> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > S{0} ? dy[i] : S{0};
  return dx;
}

template <typename S>
S Gelu(S x) {
  return S{0.5} * x * (S{1} + std::erf(x / std::numbers::sqrt2_v<S>));
}

template <typename S>
S GeluGrad(S x) {
  const S cdf = S{0.5} * (S{1} + std::erf(x / std::numbers::sqrt2_v<S>));
  const S pdf = std::exp(S{-0.5} * x * x) / std::sqrt(S{2} * std::numbers::pi_v<S>);
  return cdf + x * pdf;
}

// ---------------------------------------------------------------------------
// Pooling.

/// Non-overlapping max pooling over the trailing three axes of [B, C, T, H, W]
/// with window (kt, kh, kw), floor semantics. `argmax` receives flat input
/// indices for the backward pass.
template <typename S>
Tensor<S> MaxPool3dForward(const Tensor<S>& x, std::size_t kt, std::size_t kh, std::size_t kw,
                           std::vector<std::size_t>* argmax) {
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t To = T / kt, Ho = H / kh, Wo = W / kw;
  Tensor<S> y({B, C, To, Ho, Wo});
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const std::size_t base = bc * T * H * W;
    for (std::size_t t = 0; t < To; ++t) {
      for (std::size_t h = 0; h < Ho; ++h) {
        for (std::size_t w = 0; w < Wo; ++w, ++o) {
          S best = -std::numeric_limits<S>::infinity();
          std::size_t best_i = 0;
          for (std::size_t a = 0; a < kt; ++a) {
            for (std::size_t bb = 0; bb < kh; ++bb) {
              for (std::size_t c = 0; c < kw; ++c) {
                const std::size_t i = base + ((t * kt + a) * H + (h * kh + bb)) * W + (w * kw + c);
                if (x[i] > best) {
                  best = x[i];
                  best_i = i;
                }
              }
            }
          }
          y[o] = best;
          if (argmax) (*argmax)[o] = best_i;
        }
      }
    }
  }
  return y;
}

/// 2x2 (or k x k) max pooling over [N, C, H, W].
template <typename S>
Tensor<S> MaxPool2dForward(const Tensor<S>& x, std::size_t k, std::vector<std::size_t>* argmax) {
  Tensor<S> v = x;
  v.Reshape({x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)});
  Tensor<S> y = MaxPool3dForward(v, 1, k, k, argmax);
  y.Reshape({x.dim(0), x.dim(1), x.dim(2) / k, x.dim(3) / k});
  return y;
}

template <typename S>
Tensor<S> MaxPoolBackward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor<S>& dy) {
  Tensor<S> dx(input_shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
  return dx;
}

/// Mean over every axis after the first two: [B, C, ...] -> [B, C].
template <typename S>
Tensor<S> GlobalAvgPoolForward(const Tensor<S>& x) {
  const std::size_t B = x.dim(0), C = x.dim(1), inner = x.size() / (B * C);
  Tensor<S> y({B, C});
  for (std::size_t i = 0; i < B * C; ++i) {
    S s = 0;
    for (std::size_t j = 0; j < inner; ++j) s += x[i * inner + j];
    y[i] = s / static_cast<S>(inner);
  }
  return y;
}

template <typename S>
Tensor<S> GlobalAvgPoolBackward(const Shape& input_shape, const Tensor<S>& dy) {
  Tensor<S> dx(input_shape);
  const std::size_t inner = dx.size() / dy.size();
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const S g = dy[i] / static_cast<S>(inner);
    for (std::size_t j = 0; j < inner; ++j) dx[i * inner + j] = g;
  }
  return dx;
}

/// Bin b of an adaptive pool over length n into m bins spans
/// [floor(b*n/m), ceil((b+1)*n/m)).
inline std::pair<std::size_t, std::size_t> AdaptiveBin(std::size_t b, std::size_t n, std::size_t m) {
  return {(b * n) / m, ((b + 1) * n + m - 1) / m};
}

template <typename S>
Tensor<S> AdaptiveAvgPool2dForward(const Tensor<S>& x, std::size_t grid) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> y({N, C, grid, grid});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const S* src = x.data() + nc * H * W;
    for (std::size_t gy = 0; gy < grid; ++gy) {
      const auto [y0, y1] = AdaptiveBin(gy, H, grid);
      for (std::size_t gx = 0; gx < grid; ++gx) {
        const auto [x0, x1] = AdaptiveBin(gx, W, grid);
        S s = 0;
        for (std::size_t yy = y0; yy < y1; ++yy) {
          for (std::size_t xx = x0; xx < x1; ++xx) s += src[yy * W + xx];
        }
        y[(nc * grid + gy) * grid + gx] = s / static_cast<S>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return y;
}

template <typename S>
Tensor<S> AdaptiveAvgPool2dBackward(const Shape& input_shape, const Tensor<S>& dy, std::size_t grid) {
  Tensor<S> dx(input_shape);
  const std::size_t N = dx.dim(0), C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    S* dst = dx.data() + nc * H * W;
    for (std::size_t gy = 0; gy < grid; ++gy) {
      const auto [y0, y1] = AdaptiveBin(gy, H, grid);
      for (std::size_t gx = 0; gx < grid; ++gx) {
        const auto [x0, x1] = AdaptiveBin(gx, W, grid);
        const S g = dy[(nc * grid + gy) * grid + gx] / static_cast<S>((y1 - y0) * (x1 - x0));
        for (std::size_t yy = y0; yy < y1; ++yy) {
          for (std::size_t xx = x0; xx < x1; ++xx) dst[yy * W + xx] += g;
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Dense layers.

/// y = x * w^T + b for x [R, In], w [Out, In], b [Out] (b may be empty).
template <typename S>
Tensor<S> LinearForward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  const std::size_t R = x.dim(0), In = x.dim(1), Out = w.dim(0);
  Tensor<S> y({R, Out});
  for (std::size_t r = 0; r < R; ++r) {
    const S* xr = x.data() + r * In;
    for (std::size_t o = 0; o < Out; ++o) {
      const S* wr = w.data() + o * In;
      S acc = b.empty() ? S{0} : b[o];
      for (std::size_t i = 0; i < In; ++i) acc += xr[i] * wr[i];
      y[r * Out + o] = acc;
    }
  }
  return y;
}

template <typename S>
Tensor<S> LinearBackward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy, Tensor<S>& dw,
                         Tensor<S>* db) {
  const std::size_t R = x.dim(0), In = x.dim(1), Out = w.dim(0);
  Tensor<S> dx({R, In});
  for (std::size_t r = 0; r < R; ++r) {
    const S* xr = x.data() + r * In;
    S* dxr = dx.data() + r * In;
    for (std::size_t o = 0; o < Out; ++o) {
      const S g = dy[r * Out + o];
      if (g == S{0}) continue;
      const S* wr = w.data() + o * In;
      S* dwr = dw.data() + o * In;
      for (std::size_t i = 0; i < In; ++i) {
        dwr[i] += g * xr[i];
        dxr[i] += g * wr[i];
      }
      if (db) (*db)[o] += g;
    }
  }
  return dx;
}

/// 2-D convolution over [N, Ci, H, W] with weight [Co, Ci, K, K], bias [Co],
/// zero padding `pad`, stride `stride`.
template <typename S>
Tensor<S> Conv2dForward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, std::size_t stride,
                        std::size_t pad) {
  const std::size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), K = w.dim(2);
  const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  Tensor<S> y({N, Co, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Co; ++co) {
      S* yo = y.data() + (n * Co + co) * Ho * Wo;
      if (!b.empty()) std::fill(yo, yo + Ho * Wo, b[co]);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const S* xi = x.data() + (n * Ci + ci) * H * W;
        for (std::size_t kh = 0; kh < K; ++kh) {
          for (std::size_t kw = 0; kw < K; ++kw) {
            const S wv = w[((co * Ci + ci) * K + kh) * K + kw];
            for (std::size_t oh = 0; oh < Ho; ++oh) {
              const long ih = static_cast<long>(oh * stride + kh) - static_cast<long>(pad);
              if (ih < 0 || ih >= static_cast<long>(H)) continue;
              for (std::size_t ow = 0; ow < Wo; ++ow) {
                const long iw = static_cast<long>(ow * stride + kw) - static_cast<long>(pad);
                if (iw < 0 || iw >= static_cast<long>(W)) continue;
                yo[oh * Wo + ow] += wv * xi[ih * W + iw];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename S>
void Conv2dBackward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& dy, std::size_t stride,
                    std::size_t pad, Tensor<S>* dx, Tensor<S>& dw, Tensor<S>* db) {
  const std::size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), K = w.dim(2);
  const std::size_t Ho = dy.dim(2), Wo = dy.dim(3);
  if (dx) *dx = Tensor<S>(x.shape());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Co; ++co) {
      const S* go = dy.data() + (n * Co + co) * Ho * Wo;
      if (db) {
        S s = 0;
        for (std::size_t i = 0; i < Ho * Wo; ++i) s += go[i];
        (*db)[co] += s;
      }
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const S* xi = x.data() + (n * Ci + ci) * H * W;
        S* gi = dx ? dx->data() + (n * Ci + ci) * H * W : nullptr;
        for (std::size_t kh = 0; kh < K; ++kh) {
          for (std::size_t kw = 0; kw < K; ++kw) {
            const std::size_t widx = ((co * Ci + ci) * K + kh) * K + kw;
            const S wv = w[widx];
            S acc = 0;
            for (std::size_t oh = 0; oh < Ho; ++oh) {
              const long ih = static_cast<long>(oh * stride + kh) - static_cast<long>(pad);
              if (ih < 0 || ih >= static_cast<long>(H)) continue;
              for (std::size_t ow = 0; ow < Wo; ++ow) {
                const long iw = static_cast<long>(ow * stride + kw) - static_cast<long>(pad);
                if (iw < 0 || iw >= static_cast<long>(W)) continue;
                acc += go[oh * Wo + ow] * xi[ih * W + iw];
                if (gi) gi[ih * W + iw] += wv * go[oh * Wo + ow];
              }
            }
            dw[widx] += acc;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Fixed Laplacian high-pass [[0,-1,0],[-1,4,-1],[0,-1,0]], applied to each
// channel of [N, C, H, W] independently with zero padding.

template <typename S>
Tensor<S> LaplacianForward(const Tensor<S>& x) {
  const std::size_t H = x.dim(2), W = x.dim(3);
  const std::size_t planes = x.size() / (H * W);
  Tensor<S> y(x.shape());
  for (std::size_t p = 0; p < planes; ++p) {
    const S* src = x.data() + p * H * W;
    S* dst = y.data() + p * H * W;
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t c = 0; c < W; ++c) {
        // Sum of (center - neighbor); zero-padded neighbors contribute center.
        const S center = src[r * W + c];
        S v{0};
        int outside = 0;
        if (r > 0) v += center - src[(r - 1) * W + c]; else ++outside;
        if (r + 1 < H) v += center - src[(r + 1) * W + c]; else ++outside;
        if (c > 0) v += center - src[r * W + c - 1]; else ++outside;
        if (c + 1 < W) v += center - src[r * W + c + 1]; else ++outside;
        dst[r * W + c] = v + static_cast<S>(outside) * center;
      }
    }
  }
  return y;
}

/// The kernel is symmetric, so the adjoint is the same stencil.
template <typename S>
Tensor<S> LaplacianBackward(const Tensor<S>& dy) {
  return LaplacianForward(dy);
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis of [R, D].

template <typename S>
struct LayerNormCache {
  Tensor<S> xhat;
  std::vector<S> inv_std;
};

template <typename S>
Tensor<S> LayerNormForward(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps,
                           LayerNormCache<S>* cache) {
  const std::size_t R = x.dim(0), D = x.dim(1);
  Tensor<S> y(x.shape());
  Tensor<S> xhat(x.shape());
  std::vector<S> inv(R);
  for (std::size_t r = 0; r < R; ++r) {
    const S* xr = x.data() + r * D;
    S m = 0;
    for (std::size_t d = 0; d < D; ++d) m += xr[d];
    m /= static_cast<S>(D);
    S v = 0;
    for (std::size_t d = 0; d < D; ++d) v += (xr[d] - m) * (xr[d] - m);
    v /= static_cast<S>(D);
    inv[r] = S{1} / std::sqrt(v + eps);
    for (std::size_t d = 0; d < D; ++d) {
      const S h = (xr[d] - m) * inv[r];
      xhat[r * D + d] = h;
      y[r * D + d] = gamma[d] * h + beta[d];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

template <typename S>
Tensor<S> LayerNormBackward(const LayerNormCache<S>& cache, const Tensor<S>& gamma, const Tensor<S>& dy,
                            Tensor<S>& dgamma, Tensor<S>& dbeta) {
  const std::size_t R = dy.dim(0), D = dy.dim(1);
  Tensor<S> dx(dy.shape());
  std::vector<S> g(D);
  for (std::size_t r = 0; r < R; ++r) {
    S sum_g = 0, sum_gx = 0;
    for (std::size_t d = 0; d < D; ++d) {
      const std::size_t i = r * D + d;
      dgamma[d] += dy[i] * cache.xhat[i];
      dbeta[d] += dy[i];
      g[d] = dy[i] * gamma[d];
      sum_g += g[d];
      sum_gx += g[d] * cache.xhat[i];
    }
    const S k = cache.inv_std[r] / static_cast<S>(D);
    for (std::size_t d = 0; d < D; ++d) {
      const std::size_t i = r * D + d;
      dx[i] = k * (static_cast<S>(D) * g[d] - sum_g - cache.xhat[i] * sum_gx);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Softmax and scaled dot-product attention.

template <typename S>
void SoftmaxRowsInPlace(S* row, std::size_t n) {
  S mx = row[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
  S sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    row[i] = std::exp(row[i] - mx);
    sum += row[i];
  }
  for (std::size_t i = 0; i < n; ++i) row[i] /= sum;
}

/// Row-wise softmax of a [R, C] matrix.
template <typename S>
Tensor<S> Softmax(const Tensor<S>& logits) {
  Tensor<S> p = logits;
  const std::size_t R = p.dim(0), C = p.dim(1);
  for (std::size_t r = 0; r < R; ++r) SoftmaxRowsInPlace(p.data() + r * C, C);
  return p;
}

/// softmax(Q K^T / sqrt(d)) V for Q [n, d], K [m, d], V [m, dv]. When
/// `weights` is non-null it receives the [n, m] attention matrix.
template <typename S>
Tensor<S> Attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, Tensor<S>* weights = nullptr) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw ValidationError("attention expects matrices");
  const std::size_t n = q.dim(0), d = q.dim(1), m = k.dim(0), dv = v.dim(1);
  if (d == 0) throw ValidationError("attention inner dimension must be >= 1");
  if (k.dim(1) != d) throw ValidationError("query and key inner dimensions differ");
  if (v.dim(0) != m) throw ValidationError("key and value row counts differ");
  const S scale = S{1} / std::sqrt(static_cast<S>(d));
  Tensor<S> p({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      S s = 0;
      for (std::size_t c = 0; c < d; ++c) s += q[i * d + c] * k[j * d + c];
      p[i * m + j] = s * scale;
    }
    SoftmaxRowsInPlace(p.data() + i * m, m);
  }
  Tensor<S> out({n, dv});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const S a = p[i * m + j];
      for (std::size_t c = 0; c < dv; ++c) out[i * dv + c] += a * v[j * dv + c];
    }
  }
  if (weights) *weights = std::move(p);
  return out;
}

/// Projection weights for multi-head self-attention (no output projection;
/// head outputs are concatenated).
template <typename S>
struct AttentionWeights {
  const Tensor<S>* wq;
  const Tensor<S>* bq;
  const Tensor<S>* wk;
  const Tensor<S>* bk;
  const Tensor<S>* wv;
  const Tensor<S>* bv;
};

template <typename S>
struct AttentionGrads {
  Tensor<S>* wq;
  Tensor<S>* bq;
  Tensor<S>* wk;
  Tensor<S>* bk;
  Tensor<S>* wv;
  Tensor<S>* bv;
};

template <typename S>
struct SelfAttentionCache {
  Tensor<S> x;      // [S*n, D]
  Tensor<S> q, k, v;  // [S*n, D]
  Tensor<S> probs;  // [S, heads, n, n]
};

/// Self-attention applied independently to `seqs` sequences of length `len`
/// stored contiguously in x [seqs * len, D].
template <typename S>
Tensor<S> SelfAttentionForward(const Tensor<S>& x, std::size_t seqs, std::size_t len, std::size_t heads,
                               const AttentionWeights<S>& p, SelfAttentionCache<S>* cache) {
  const std::size_t D = x.dim(1), dh = D / heads;
  Tensor<S> q = LinearForward(x, *p.wq, *p.bq);
  Tensor<S> k = LinearForward(x, *p.wk, *p.bk);
  Tensor<S> v = LinearForward(x, *p.wv, *p.bv);
  const S scale = S{1} / std::sqrt(static_cast<S>(dh));
  Tensor<S> out({seqs * len, D});
  Tensor<S> probs({seqs, heads, len, len});
  for (std::size_t s = 0; s < seqs; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      S* P = probs.data() + ((s * heads + h) * len) * len;
      for (std::size_t i = 0; i < len; ++i) {
        const S* qi = q.data() + (s * len + i) * D + h * dh;
        for (std::size_t j = 0; j < len; ++j) {
          const S* kj = k.data() + (s * len + j) * D + h * dh;
          S acc = 0;
          for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
          P[i * len + j] = acc * scale;
        }
        SoftmaxRowsInPlace(P + i * len, len);
        S* oi = out.data() + (s * len + i) * D + h * dh;
        for (std::size_t j = 0; j < len; ++j) {
          const S a = P[i * len + j];
          const S* vj = v.data() + (s * len + j) * D + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += a * vj[c];
        }
      }
    }
  }
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
  }
  return out;
}

template <typename S>
Tensor<S> SelfAttentionBackward(const SelfAttentionCache<S>& c, std::size_t seqs, std::size_t len,
                                std::size_t heads, const AttentionWeights<S>& p, const Tensor<S>& dout,
                                const AttentionGrads<S>& g) {
  const std::size_t D = c.x.dim(1), dh = D / heads;
  const S scale = S{1} / std::sqrt(static_cast<S>(dh));
  Tensor<S> dq(c.q.shape()), dk(c.k.shape()), dv(c.v.shape());
  std::vector<S> dp(len);
  for (std::size_t s = 0; s < seqs; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      const S* P = c.probs.data() + ((s * heads + h) * len) * len;
      for (std::size_t i = 0; i < len; ++i) {
        const S* doi = dout.data() + (s * len + i) * D + h * dh;
        S dot = 0;
        for (std::size_t j = 0; j < len; ++j) {
          const S* vj = c.v.data() + (s * len + j) * D + h * dh;
          S* dvj = dv.data() + (s * len + j) * D + h * dh;
          const S a = P[i * len + j];
          S acc = 0;
          for (std::size_t e = 0; e < dh; ++e) {
            acc += doi[e] * vj[e];
            dvj[e] += a * doi[e];
          }
          dp[j] = acc;
          dot += acc * a;
        }
        const S* qi = c.q.data() + (s * len + i) * D + h * dh;
        S* dqi = dq.data() + (s * len + i) * D + h * dh;
        for (std::size_t j = 0; j < len; ++j) {
          const S ds = P[i * len + j] * (dp[j] - dot) * scale;
          if (ds == S{0}) continue;
          const S* kj = c.k.data() + (s * len + j) * D + h * dh;
          S* dkj = dk.data() + (s * len + j) * D + h * dh;
          for (std::size_t e = 0; e < dh; ++e) {
            dqi[e] += ds * kj[e];
            dkj[e] += ds * qi[e];
          }
        }
      }
    }
  }
  Tensor<S> dx = LinearBackward(c.x, *p.wq, dq, *g.wq, g.bq);
  const Tensor<S> dxk = LinearBackward(c.x, *p.wk, dk, *g.wk, g.bk);
  const Tensor<S> dxv = LinearBackward(c.x, *p.wv, dv, *g.wv, g.bv);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dxk[i] + dxv[i];
  return dx;
}

}  // namespace autous::nn
