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

#include "autous/ctu_net.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>

#include "autous/nn.hpp"
#include "autous/rng.hpp"

namespace autous::model {
namespace {

constexpr double kBatchNormEps = 1e-5;
constexpr double kLayerNormEps = 1e-5;

// FFTW planning is not thread-safe; executing an existing plan on new arrays is.
class RfftPlans {
 public:
  static RfftPlans& Instance() {
    static RfftPlans plans;
    return plans;
  }

  fftw_plan Get(int h, int w) {
    std::lock_guard<std::mutex> lock(mu_);
    auto key = std::make_pair(h, w);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    double* in = fftw_alloc_real(static_cast<std::size_t>(h) * w);
    fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(h) * (w / 2 + 1));
    fftw_plan plan = fftw_plan_dft_r2c_2d(h, w, in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mu_;
  std::map<std::pair<int, int>, fftw_plan> plans_;
};

template <typename S>
Tensor<S> HeNormal(Rng& rng, Shape shape, std::size_t fan_in) {
  Tensor<S> t(std::move(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<S>(rng.Normal() * sd);
  return t;
}

template <typename S>
Tensor<S> FanInNormal(Rng& rng, Shape shape, std::size_t fan_in) {
  Tensor<S> t(std::move(shape));
  const double sd = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<S>(rng.Normal() * sd);
  return t;
}

template <typename S>
Tensor<S> TruncNormal(Rng& rng, Shape shape, double sd = 0.02) {
  Tensor<S> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<S>(rng.TruncatedNormal(sd));
  return t;
}

// [B, T, H, W, C] -> [B, C, T, H, W]
template <typename S>
Tensor<S> ToChannelsFirst(const Tensor<S>& x) {
  const std::size_t B = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  Tensor<S> y({B, C, T, H, W});
  std::size_t i = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
          for (std::size_t c = 0; c < C; ++c, ++i) {
            y[(((b * C + c) * T + t) * H + h) * W + w] = x[i];
          }
        }
      }
    }
  }
  return y;
}

// [A, B, C, D] <-> [A, C, B, D] on a flat [A*B*C, D] matrix.
template <typename S>
Tensor<S> SwapMiddle(const Tensor<S>& x, std::size_t a, std::size_t b, std::size_t c) {
  const std::size_t d = x.dim(1);
  Tensor<S> y({a * b * c, d});
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      for (std::size_t k = 0; k < c; ++k) {
        const S* src = x.data() + ((i * b + j) * c + k) * d;
        S* dst = y.data() + ((i * c + k) * b + j) * d;
        std::copy(src, src + d, dst);
      }
    }
  }
  return y;
}

template <typename S>
void AddInPlace(Tensor<S>& a, const Tensor<S>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

std::size_t PoolWindow(std::size_t n) { return n >= 2 ? 2 : 1; }

}  // namespace

// ---------------------------------------------------------------------------

template <typename S>
std::size_t ParameterSet<S>::Add(std::string name, Tensor<S> value, bool trainable) {
  if (Contains(name)) throw InternalError("duplicate parameter " + name);
  entries_.push_back({std::move(name), std::move(value), trainable});
  return entries_.size() - 1;
}

template <typename S>
std::size_t ParameterSet<S>::IndexOf(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw NotFoundError("no parameter named " + name);
}

template <typename S>
bool ParameterSet<S>::Contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

template <typename S>
std::size_t ParameterSet<S>::TrainableScalarCount() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.value.size();
  }
  return n;
}

template <typename S>
Tensor<S> MakeBatch(std::span<const data::VideoSample> samples) {
  if (samples.empty()) throw ValidationError("cannot batch zero samples");
  const Shape& s0 = samples[0].frames.shape();
  Shape shape = {samples.size()};
  shape.insert(shape.end(), s0.begin(), s0.end());
  Tensor<S> x(shape);
  std::size_t off = 0;
  for (const auto& s : samples) {
    if (s.frames.shape() != s0) {
      throw ValidationError("batch samples differ in shape: " + ShapeToString(s.frames.shape()) + " vs " +
                            ShapeToString(s0));
    }
    for (float v : s.frames.values()) x[off++] = static_cast<S>(v);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Spectral helpers.

std::vector<double> RfftMagnitude(std::span<const double> plane, int height, int width) {
  const int wc = width / 2 + 1;
  double* in = fftw_alloc_real(static_cast<std::size_t>(height) * width);
  fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(height) * wc);
  std::copy(plane.begin(), plane.end(), in);
  fftw_execute_dft_r2c(RfftPlans::Instance().Get(height, width), in, out);
  const double norm = 1.0 / std::sqrt(static_cast<double>(height) * width);
  std::vector<double> mag(static_cast<std::size_t>(height) * wc);
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::hypot(out[i][0], out[i][1]) * norm;
  fftw_free(in);
  fftw_free(out);
  return mag;
}

std::vector<double> ResizeBilinear(std::span<const double> src, int sh, int sw, int dh, int dw) {
  std::vector<double> dst(static_cast<std::size_t>(dh) * dw);
  const double sy = static_cast<double>(sh) / dh;
  const double sx = static_cast<double>(sw) / dw;
  for (int y = 0; y < dh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, sh - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, sw - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      dst[static_cast<std::size_t>(y) * dw + x] =
          (1 - wy) * ((1 - wx) * src[y0 * sw + x0] + wx * src[y0 * sw + x1]) +
          wy * ((1 - wx) * src[y1 * sw + x0] + wx * src[y1 * sw + x1]);
    }
  }
  return dst;
}

template <typename S>
Tensor<S> MagnitudeSpectra(const Tensor<S>& x) {
  const std::size_t B = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  Tensor<S> m({B * T, C, H, W});
  std::vector<double> plane(H * W);
  for (std::size_t bt = 0; bt < B * T; ++bt) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t p = 0; p < H * W; ++p) plane[p] = static_cast<double>(x[(bt * H * W + p) * C + c]);
      const auto mag = RfftMagnitude(plane, static_cast<int>(H), static_cast<int>(W));
      const auto up = ResizeBilinear(mag, static_cast<int>(H), static_cast<int>(W / 2 + 1), static_cast<int>(H),
                                     static_cast<int>(W));
      S* dst = m.data() + (bt * C + c) * H * W;
      for (std::size_t p = 0; p < H * W; ++p) dst[p] = static_cast<S>(up[p]);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------

template <typename S>
struct CtuNet<S>::Index {
  struct BatchNorm {
    std::size_t gamma, beta, mean, var;
  };
  struct Block {
    std::size_t conv1;
    BatchNorm bn1;
    std::size_t conv2;
    BatchNorm bn2;
    long shortcut = -1;  // 1x1x1 projection when channel counts differ
  };
  struct Attn {
    std::size_t wq, bq, wk, bk, wv, bv;
  };
  struct Layer {
    Attn spatial, temporal;
    std::size_t ln_g, ln_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

  std::size_t stem_conv;
  BatchNorm stem_bn;
  std::vector<Block> blocks;
  std::size_t proj_w, proj_b;

  std::size_t patch_w, patch_b, cls, pos;
  std::vector<Layer> layers;

  std::size_t freq_conv_w, freq_conv_b, gate1_w, gate1_b, gate2_w, gate2_b;
  std::size_t head_w, head_b;
};

template <typename S>
struct ForwardTrace {
  ForwardOptions options;
  std::size_t batch = 0;

  // slow path
  struct BnStep {
    nn::BatchNormCache<S> cache;
    std::size_t param_mean = 0, param_var = 0;
  };
  struct SlowBlock {
    Tensor<S> input;
    Tensor<S> h1;  // after relu
    Tensor<S> out;  // after final relu
    BnStep bn1, bn2;
  };
  bool slow_active = false;
  Tensor<S> slow_in;    // [B, C, T, H, W]
  Tensor<S> stem_relu;  // relu output before pooling
  BnStep stem_bn;
  std::vector<std::size_t> stem_argmax;
  std::vector<SlowBlock> blocks;
  Tensor<S> slow_pooled;  // [B, C_last]
  Shape slow_last_shape;
  Tensor<S> slow_out;  // F_s

  // fast path
  struct FastLayer {
    nn::SelfAttentionCache<S> spatial, temporal;
    nn::LayerNormCache<S> ln;
    Tensor<S> ln_out, fc1_pre, fc1_act;
    std::vector<S> dropout_mask;  // empty when dropout is off
  };
  bool fast_active = false;
  Tensor<S> patches;  // [B*T'*Np, C*p*p]
  std::vector<FastLayer> layers;
  Tensor<S> fast_out;  // F_f

  // frequency path
  bool freq_active = false;
  Tensor<S> spectra;  // [B*T, C, H, W]
  Tensor<S> freq_conv_out;
  Tensor<S> freq_hp;
  std::vector<std::size_t> freq_argmax;
  Shape freq_pool_shape;
  Tensor<S> freq_features;  // [B, d_freq]
  Tensor<S> gate_pre, gate_act;
  Tensor<S> alpha_s, alpha_f;  // [B]

  Tensor<S> fused;
};

template <typename S>
CtuNet<S>::CtuNet(ModelConfig config) : config_(std::move(config)) {
  config_.Validate();
  auto idx = std::make_shared<Index>();
  Rng rng(config_.seed);
  const auto& in = config_.input;
  const std::size_t C = static_cast<std::size_t>(in.channels);
  const std::size_t D = static_cast<std::size_t>(config_.embed_dim());

  auto add_bn = [&](const std::string& prefix, std::size_t ch) {
    typename Index::BatchNorm bn;
    bn.gamma = params_.Add(prefix + ".gamma", Tensor<S>({ch}, S{1}));
    bn.beta = params_.Add(prefix + ".beta", Tensor<S>({ch}, S{0}));
    bn.mean = params_.Add(prefix + ".running_mean", Tensor<S>({ch}, S{0}), false);
    bn.var = params_.Add(prefix + ".running_var", Tensor<S>({ch}, S{1}), false);
    return bn;
  };

  // slow path
  const std::size_t stem = static_cast<std::size_t>(config_.slow.stem_channels);
  idx->stem_conv = params_.Add("slow.stem.conv.weight", HeNormal<S>(rng, {stem, C, 3, 3, 3}, C * 27));
  idx->stem_bn = add_bn("slow.stem.bn", stem);
  std::size_t ch = stem;
  for (int b = 0; b < config_.slow.num_blocks; ++b) {
    const std::size_t out = static_cast<std::size_t>(config_.slow.block_channels[b]);
    const std::string p = "slow.block" + std::to_string(b);
    typename Index::Block blk;
    blk.conv1 = params_.Add(p + ".conv1.weight", HeNormal<S>(rng, {out, ch, 3, 3, 3}, ch * 27));
    blk.bn1 = add_bn(p + ".bn1", out);
    blk.conv2 = params_.Add(p + ".conv2.weight", HeNormal<S>(rng, {out, out, 3, 3, 3}, out * 27));
    blk.bn2 = add_bn(p + ".bn2", out);
    if (out != ch) {
      blk.shortcut = static_cast<long>(params_.Add(p + ".shortcut.weight", HeNormal<S>(rng, {out, ch, 1, 1, 1}, ch)));
    }
    idx->blocks.push_back(blk);
    ch = out;
  }
  idx->proj_w = params_.Add("slow.proj.weight", FanInNormal<S>(rng, {D, ch}, ch));
  idx->proj_b = params_.Add("slow.proj.bias", Tensor<S>({D}, S{0}));

  // fast path
  const double init_std = config_.fast.init_std;
  auto dense_std = [&](std::size_t fan_in) {
    return init_std > 0 ? init_std : 1.0 / std::sqrt(static_cast<double>(fan_in));
  };
  const std::size_t p = static_cast<std::size_t>(config_.fast.patch_size);
  const std::size_t hidden = static_cast<std::size_t>(std::lround(config_.fast.mlp_ratio * static_cast<double>(D)));
  idx->patch_w = params_.Add("fast.patch.weight", TruncNormal<S>(rng, {D, C * p * p}, dense_std(C * p * p)));
  idx->patch_b = params_.Add("fast.patch.bias", Tensor<S>({D}, S{0}));
  idx->cls = params_.Add("fast.cls", TruncNormal<S>(rng, {D}));
  idx->pos = params_.Add("fast.pos", TruncNormal<S>(rng, {static_cast<std::size_t>(config_.tokens_per_frame()), D}));
  for (int l = 0; l < config_.fast.num_layers; ++l) {
    const std::string pre = "fast.layer" + std::to_string(l);
    typename Index::Layer layer;
    auto add_attn = [&](const std::string& name) {
      typename Index::Attn a;
      a.wq = params_.Add(name + ".q.weight", TruncNormal<S>(rng, {D, D}, dense_std(D)));
      a.bq = params_.Add(name + ".q.bias", Tensor<S>({D}, S{0}));
      a.wk = params_.Add(name + ".k.weight", TruncNormal<S>(rng, {D, D}, dense_std(D)));
      a.bk = params_.Add(name + ".k.bias", Tensor<S>({D}, S{0}));
      a.wv = params_.Add(name + ".v.weight", TruncNormal<S>(rng, {D, D}, dense_std(D)));
      a.bv = params_.Add(name + ".v.bias", Tensor<S>({D}, S{0}));
      return a;
    };
    layer.spatial = add_attn(pre + ".spatial");
    layer.temporal = add_attn(pre + ".temporal");
    layer.ln_g = params_.Add(pre + ".ln.gamma", Tensor<S>({D}, S{1}));
    layer.ln_b = params_.Add(pre + ".ln.beta", Tensor<S>({D}, S{0}));
    layer.fc1_w = params_.Add(pre + ".mlp.fc1.weight", TruncNormal<S>(rng, {hidden, D}, dense_std(D)));
    layer.fc1_b = params_.Add(pre + ".mlp.fc1.bias", Tensor<S>({hidden}, S{0}));
    layer.fc2_w = params_.Add(pre + ".mlp.fc2.weight", TruncNormal<S>(rng, {D, hidden}, dense_std(hidden)));
    layer.fc2_b = params_.Add(pre + ".mlp.fc2.bias", Tensor<S>({D}, S{0}));
    idx->layers.push_back(layer);
  }

  // frequency path
  const std::size_t K = static_cast<std::size_t>(config_.freq.conv_channels);
  const std::size_t dfreq = static_cast<std::size_t>(config_.freq_feature_dim());
  const std::size_t gh = static_cast<std::size_t>(config_.freq.gate_hidden_dim);
  idx->freq_conv_w = params_.Add("freq.conv.weight", HeNormal<S>(rng, {K, C, 3, 3}, C * 9));
  idx->freq_conv_b = params_.Add("freq.conv.bias", Tensor<S>({K}, S{0}));
  idx->gate1_w = params_.Add("freq.gate.fc1.weight", FanInNormal<S>(rng, {gh, dfreq}, dfreq));
  idx->gate1_b = params_.Add("freq.gate.fc1.bias", Tensor<S>({gh}, S{0}));
  idx->gate2_w = params_.Add("freq.gate.fc2.weight", FanInNormal<S>(rng, {2, gh}, gh));
  idx->gate2_b = params_.Add("freq.gate.fc2.bias", Tensor<S>({2}, S{0}));

  // head
  const std::size_t nc = static_cast<std::size_t>(config_.num_classes);
  idx->head_w = params_.Add("head.weight", TruncNormal<S>(rng, {nc, D}));
  idx->head_b = params_.Add("head.bias", Tensor<S>({nc}, S{0}));

  idx_ = std::move(idx);
}

template <typename S>
Gradients<S> CtuNet<S>::ZeroGradients() const {
  Gradients<S> g;
  g.reserve(params_.size());
  for (const auto& p : params_.entries()) g.emplace_back(p.value.shape());
  return g;
}

template <typename S>
void CtuNet<S>::ValidateInput(const Tensor<S>& x) const {
  static const char* kAxes[] = {"batch", "frames (T)", "height (H)", "width (W)", "channels (Cch)"};
  if (x.rank() != 5) throw ValidationError("input must be [B, T, H, W, Cch], got " + ShapeToString(x.shape()));
  const auto& in = config_.input;
  const std::size_t expect[] = {0, static_cast<std::size_t>(in.frames), static_cast<std::size_t>(in.height),
                                static_cast<std::size_t>(in.width), static_cast<std::size_t>(in.channels)};
  if (x.dim(0) < 1) throw ValidationError("input shape mismatch on axis batch: empty batch");
  for (std::size_t a = 1; a < 5; ++a) {
    if (x.dim(a) != expect[a]) {
      throw ValidationError("input shape mismatch on axis " + std::string(kAxes[a]) + ": expected " +
                            std::to_string(expect[a]) + ", got " + std::to_string(x.dim(a)));
    }
  }
}

template <typename S>
ForwardResult<S> CtuNet<S>::Forward(const Tensor<S>& x, const ForwardOptions& opt, bool keep_trace) const {
  ValidateInput(x);
  const Index& ix = *idx_;
  auto P = [&](std::size_t i) -> const Tensor<S>& { return params_[i].value; };
  auto tr = std::make_shared<ForwardTrace<S>>();
  tr->options = opt;
  const std::size_t B = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  tr->batch = B;
  const std::size_t D = static_cast<std::size_t>(config_.embed_dim());
  const Ablation ab = config_.ablation;
  const S eps_bn = static_cast<S>(kBatchNormEps);

  ForwardResult<S> result;

  auto bn = [&](const Tensor<S>& in, const typename Index::BatchNorm& b, typename ForwardTrace<S>::BnStep& step) {
    step.param_mean = b.mean;
    step.param_var = b.var;
    return nn::BatchNormForward(in, P(b.gamma), P(b.beta), P(b.mean), P(b.var), opt.training, eps_bn, &step.cache);
  };

  // ---- slow path
  if (ab != Ablation::kNoSlow) {
    tr->slow_active = true;
    tr->slow_in = ToChannelsFirst(x);
    Tensor<S> h = nn::Conv3dForward(tr->slow_in, P(ix.stem_conv));
    h = bn(h, ix.stem_bn, tr->stem_bn);
    nn::ReluInPlace(h);
    tr->stem_relu = h;
    h = nn::MaxPool3dForward(h, PoolWindow(T), PoolWindow(H), PoolWindow(W), &tr->stem_argmax);
    for (const auto& blk : ix.blocks) {
      typename ForwardTrace<S>::SlowBlock st;
      st.input = h;
      Tensor<S> a = nn::Conv3dForward(h, P(blk.conv1));
      a = bn(a, blk.bn1, st.bn1);
      nn::ReluInPlace(a);
      st.h1 = a;
      Tensor<S> c = nn::Conv3dForward(a, P(blk.conv2));
      c = bn(c, blk.bn2, st.bn2);
      if (blk.shortcut >= 0) {
        AddInPlace(c, nn::Conv3dForward(h, P(static_cast<std::size_t>(blk.shortcut))));
      } else {
        AddInPlace(c, h);
      }
      nn::ReluInPlace(c);
      st.out = c;
      h = c;
      tr->blocks.push_back(std::move(st));
    }
    tr->slow_last_shape = h.shape();
    tr->slow_pooled = nn::GlobalAvgPoolForward(h);
    tr->slow_out = nn::LinearForward(tr->slow_pooled, P(ix.proj_w), P(ix.proj_b));
  }

  // ---- fast path
  if (ab != Ablation::kNoFast) {
    tr->fast_active = true;
    const std::size_t stride = static_cast<std::size_t>(config_.fast.temporal_stride);
    const std::size_t Tp = (T + stride - 1) / stride;
    const std::size_t p = static_cast<std::size_t>(config_.fast.patch_size);
    const std::size_t gh = H / p, gw = W / p, Np = gh * gw, N1 = Np + 1;
    const std::size_t heads = static_cast<std::size_t>(config_.fast.num_heads);
    tr->patches = Tensor<S>({B * Tp * Np, C * p * p});
    std::size_t row = 0;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t tp = 0; tp < Tp; ++tp) {
        const std::size_t t = tp * stride;
        for (std::size_t i = 0; i < gh; ++i) {
          for (std::size_t j = 0; j < gw; ++j, ++row) {
            S* dst = tr->patches.data() + row * C * p * p;
            for (std::size_t c = 0; c < C; ++c) {
              for (std::size_t dy = 0; dy < p; ++dy) {
                for (std::size_t dx = 0; dx < p; ++dx) {
                  dst[(c * p + dy) * p + dx] = x[((((b * T + t) * H) + i * p + dy) * W + j * p + dx) * C + c];
                }
              }
            }
          }
        }
      }
    }
    const Tensor<S> emb = nn::LinearForward(tr->patches, P(ix.patch_w), P(ix.patch_b));
    Tensor<S> z({B * Tp * N1, D});
    const Tensor<S>& cls = P(ix.cls);
    const Tensor<S>& pos = P(ix.pos);
    for (std::size_t bt = 0; bt < B * Tp; ++bt) {
      for (std::size_t n = 0; n < N1; ++n) {
        S* zr = z.data() + (bt * N1 + n) * D;
        const S* src = n == 0 ? cls.data() : emb.data() + (bt * Np + n - 1) * D;
        for (std::size_t d = 0; d < D; ++d) zr[d] = src[d] + pos[n * D + d];
      }
    }
    const bool residual = config_.fast.attention_residual;
    Rng drop_rng(opt.dropout_seed);
    const double rate = config_.fast.dropout_rate;
    for (const auto& layer : ix.layers) {
      typename ForwardTrace<S>::FastLayer st;
      const nn::AttentionWeights<S> sw{&P(layer.spatial.wq), &P(layer.spatial.bq), &P(layer.spatial.wk),
                                       &P(layer.spatial.bk), &P(layer.spatial.wv), &P(layer.spatial.bv)};
      const nn::AttentionWeights<S> tw{&P(layer.temporal.wq), &P(layer.temporal.bq), &P(layer.temporal.wk),
                                       &P(layer.temporal.bk), &P(layer.temporal.wv), &P(layer.temporal.bv)};
      Tensor<S> zs = nn::SelfAttentionForward(z, B * Tp, N1, heads, sw, &st.spatial);
      if (residual) AddInPlace(zs, z);
      const Tensor<S> zt_in = SwapMiddle(zs, B, Tp, N1);
      Tensor<S> zt = nn::SelfAttentionForward(zt_in, B * N1, Tp, heads, tw, &st.temporal);
      if (residual) AddInPlace(zt, zt_in);
      Tensor<S> z2 = SwapMiddle(zt, B, N1, Tp);
      st.ln_out = nn::LayerNormForward(z2, P(layer.ln_g), P(layer.ln_b), static_cast<S>(kLayerNormEps), &st.ln);
      st.fc1_pre = nn::LinearForward(st.ln_out, P(layer.fc1_w), P(layer.fc1_b));
      st.fc1_act = st.fc1_pre;
      for (auto& v : st.fc1_act.values()) v = nn::Gelu(v);
      Tensor<S> m = nn::LinearForward(st.fc1_act, P(layer.fc2_w), P(layer.fc2_b));
      if (opt.training && opt.dropout && rate > 0.0) {
        st.dropout_mask.resize(m.size());
        const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
        for (std::size_t i = 0; i < m.size(); ++i) {
          st.dropout_mask[i] = drop_rng.Uniform() < rate ? S{0} : keep_scale;
          m[i] *= st.dropout_mask[i];
        }
      }
      AddInPlace(z2, m);
      z = std::move(z2);
      tr->layers.push_back(std::move(st));
    }
    tr->fast_out = Tensor<S>({B, D});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t tp = 0; tp < Tp; ++tp) {
        const S* zr = z.data() + ((b * Tp + tp) * N1) * D;
        for (std::size_t d = 0; d < D; ++d) tr->fast_out[b * D + d] += zr[d] / static_cast<S>(Tp);
      }
    }
  }

  // ---- frequency path and gates
  tr->alpha_s = Tensor<S>({B});
  tr->alpha_f = Tensor<S>({B});
  if (ab == Ablation::kFull) {
    tr->freq_active = true;
    const std::size_t K = static_cast<std::size_t>(config_.freq.conv_channels);
    const std::size_t grid = static_cast<std::size_t>(config_.freq.pool_grid);
    const std::size_t dfreq = K * grid * grid;
    tr->spectra = MagnitudeSpectra(x);
    tr->freq_conv_out = nn::Conv2dForward(tr->spectra, P(ix.freq_conv_w), P(ix.freq_conv_b), 1, 1);
    tr->freq_hp = nn::LaplacianForward(tr->freq_conv_out);
    Tensor<S> mp = nn::MaxPool2dForward(tr->freq_hp, 2, &tr->freq_argmax);
    tr->freq_pool_shape = mp.shape();
    Tensor<S> ap = nn::AdaptiveAvgPool2dForward(mp, grid);
    tr->freq_features = Tensor<S>({B, dfreq});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) {
        const S* src = ap.data() + (b * T + t) * dfreq;
        for (std::size_t d = 0; d < dfreq; ++d) tr->freq_features[b * dfreq + d] += src[d] / static_cast<S>(T);
      }
    }
    tr->gate_pre = nn::LinearForward(tr->freq_features, P(ix.gate1_w), P(ix.gate1_b));
    tr->gate_act = tr->gate_pre;
    for (auto& v : tr->gate_act.values()) v = nn::Gelu(v);
    Tensor<S> gl = nn::LinearForward(tr->gate_act, P(ix.gate2_w), P(ix.gate2_b));
    Tensor<S> gates = nn::Softmax(gl);
    for (std::size_t b = 0; b < B; ++b) {
      tr->alpha_s[b] = gates[b * 2];
      tr->alpha_f[b] = gates[b * 2 + 1];
    }
  } else {
    const S as = ab == Ablation::kNoSlow ? S{0} : ab == Ablation::kNoFast ? S{1} : S{0.5};
    for (std::size_t b = 0; b < B; ++b) {
      tr->alpha_s[b] = as;
      tr->alpha_f[b] = S{1} - as;
    }
  }

  // ---- fusion and head
  const Tensor<S> zeros({B, D});
  const Tensor<S>& fs = tr->slow_active ? tr->slow_out : zeros;
  const Tensor<S>& ff = tr->fast_active ? tr->fast_out : zeros;
  tr->fused = Fuse(fs, ff, tr->alpha_s, tr->alpha_f);
  result.prediction = Classify(tr->fused, P(ix.head_w), P(ix.head_b));

  result.features.slow = fs;
  result.features.fast = ff;
  result.features.alpha_s = tr->alpha_s;
  result.features.alpha_f = tr->alpha_f;
  result.features.fused = tr->fused;
  if (keep_trace) result.trace = std::move(tr);
  return result;
}

template <typename S>
Prediction<S> CtuNet<S>::Predict(const Tensor<S>& x) const {
  return Forward(x, ForwardOptions{}).prediction;
}

template <typename S>
Gradients<S> CtuNet<S>::Backward(const ForwardTrace<S>& tr, const Tensor<S>& dlogits) const {
  const Index& ix = *idx_;
  auto P = [&](std::size_t i) -> const Tensor<S>& { return params_[i].value; };
  Gradients<S> g = ZeroGradients();
  const std::size_t B = tr.batch;
  const std::size_t D = static_cast<std::size_t>(config_.embed_dim());
  const bool batch_stats = tr.options.training;

  // head
  Tensor<S> dfused = nn::LinearBackward(tr.fused, P(ix.head_w), dlogits, g[ix.head_w], &g[ix.head_b]);

  // fusion
  Tensor<S> dfs({B, D}), dff({B, D});
  Tensor<S> das({B}), daf({B});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t d = 0; d < D; ++d) {
      const S gd = dfused[b * D + d];
      dfs[b * D + d] = tr.alpha_s[b] * gd;
      dff[b * D + d] = tr.alpha_f[b] * gd;
      if (tr.slow_active) das[b] += gd * tr.slow_out[b * D + d];
      if (tr.fast_active) daf[b] += gd * tr.fast_out[b * D + d];
    }
  }

  auto bn_back = [&](const typename ForwardTrace<S>::BnStep& step, std::size_t gamma, std::size_t beta,
                     const Tensor<S>& dy) {
    if (!batch_stats) {
      // Running statistics are constants: y = gamma * (x - m) * inv + beta.
      Tensor<S> dx(dy.shape());
      const std::size_t Bn = dy.dim(0), Cn = dy.dim(1), inner = dy.size() / (Bn * Cn);
      for (std::size_t b = 0; b < Bn; ++b) {
        for (std::size_t c = 0; c < Cn; ++c) {
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t k = (b * Cn + c) * inner + i;
            g[gamma][c] += dy[k] * step.cache.xhat[k];
            g[beta][c] += dy[k];
            dx[k] = dy[k] * P(gamma)[c] * step.cache.inv_std[c];
          }
        }
      }
      return dx;
    }
    return nn::BatchNormBackward(step.cache, P(gamma), dy, g[gamma], g[beta]);
  };

  // ---- frequency path
  if (tr.freq_active) {
    const std::size_t T = static_cast<std::size_t>(config_.input.frames);
    const std::size_t K = static_cast<std::size_t>(config_.freq.conv_channels);
    const std::size_t grid = static_cast<std::size_t>(config_.freq.pool_grid);
    const std::size_t dfreq = K * grid * grid;
    Tensor<S> dgl({B, 2});
    for (std::size_t b = 0; b < B; ++b) {
      const S as = tr.alpha_s[b], af = tr.alpha_f[b];
      const S dot = as * das[b] + af * daf[b];
      dgl[b * 2] = as * (das[b] - dot);
      dgl[b * 2 + 1] = af * (daf[b] - dot);
    }
    Tensor<S> dact = nn::LinearBackward(tr.gate_act, P(ix.gate2_w), dgl, g[ix.gate2_w], &g[ix.gate2_b]);
    for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= nn::GeluGrad(tr.gate_pre[i]);
    Tensor<S> dfeat = nn::LinearBackward(tr.freq_features, P(ix.gate1_w), dact, g[ix.gate1_w], &g[ix.gate1_b]);
    Tensor<S> dap({B * T, K, grid, grid});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t d = 0; d < dfreq; ++d) dap[(b * T + t) * dfreq + d] = dfeat[b * dfreq + d] / static_cast<S>(T);
      }
    }
    Tensor<S> dmp = nn::AdaptiveAvgPool2dBackward(tr.freq_pool_shape, dap, grid);
    Tensor<S> dhp = nn::MaxPoolBackward(tr.freq_hp.shape(), tr.freq_argmax, dmp);
    Tensor<S> dconv = nn::LaplacianBackward(dhp);
    nn::Conv2dBackward(tr.spectra, P(ix.freq_conv_w), dconv, 1, 1, static_cast<Tensor<S>*>(nullptr), g[ix.freq_conv_w], &g[ix.freq_conv_b]);
  }

  // ---- fast path
  if (tr.fast_active) {
    const std::size_t T = static_cast<std::size_t>(config_.input.frames);
    const std::size_t stride = static_cast<std::size_t>(config_.fast.temporal_stride);
    const std::size_t Tp = (T + stride - 1) / stride;
    const std::size_t N1 = static_cast<std::size_t>(config_.tokens_per_frame());
    const std::size_t Np = N1 - 1;
    const std::size_t heads = static_cast<std::size_t>(config_.fast.num_heads);
    const bool residual = config_.fast.attention_residual;
    Tensor<S> dz({B * Tp * N1, D});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t tp = 0; tp < Tp; ++tp) {
        for (std::size_t d = 0; d < D; ++d) dz[((b * Tp + tp) * N1) * D + d] = dff[b * D + d] / static_cast<S>(Tp);
      }
    }
    for (std::size_t li = ix.layers.size(); li-- > 0;) {
      const auto& layer = ix.layers[li];
      const auto& st = tr.layers[li];
      // residual MLP branch
      Tensor<S> dm = dz;
      if (!st.dropout_mask.empty()) {
        for (std::size_t i = 0; i < dm.size(); ++i) dm[i] *= st.dropout_mask[i];
      }
      Tensor<S> dact = nn::LinearBackward(st.fc1_act, P(layer.fc2_w), dm, g[layer.fc2_w], &g[layer.fc2_b]);
      for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= nn::GeluGrad(st.fc1_pre[i]);
      Tensor<S> dln = nn::LinearBackward(st.ln_out, P(layer.fc1_w), dact, g[layer.fc1_w], &g[layer.fc1_b]);
      Tensor<S> dz2 = nn::LayerNormBackward(st.ln, P(layer.ln_g), dln, g[layer.ln_g], g[layer.ln_b]);
      AddInPlace(dz2, dz);
      // temporal attention
      const nn::AttentionWeights<S> tw{&P(layer.temporal.wq), &P(layer.temporal.bq), &P(layer.temporal.wk),
                                       &P(layer.temporal.bk), &P(layer.temporal.wv), &P(layer.temporal.bv)};
      const nn::AttentionGrads<S> tg{&g[layer.temporal.wq], &g[layer.temporal.bq], &g[layer.temporal.wk],
                                     &g[layer.temporal.bk], &g[layer.temporal.wv], &g[layer.temporal.bv]};
      const Tensor<S> dzt_out = SwapMiddle(dz2, B, Tp, N1);
      Tensor<S> dzt = nn::SelfAttentionBackward(st.temporal, B * N1, Tp, heads, tw, dzt_out, tg);
      if (residual) AddInPlace(dzt, dzt_out);
      // spatial attention
      const nn::AttentionWeights<S> sw{&P(layer.spatial.wq), &P(layer.spatial.bq), &P(layer.spatial.wk),
                                       &P(layer.spatial.bk), &P(layer.spatial.wv), &P(layer.spatial.bv)};
      const nn::AttentionGrads<S> sg{&g[layer.spatial.wq], &g[layer.spatial.bq], &g[layer.spatial.wk],
                                     &g[layer.spatial.bk], &g[layer.spatial.wv], &g[layer.spatial.bv]};
      const Tensor<S> dzs = SwapMiddle(dzt, B, N1, Tp);
      dz = nn::SelfAttentionBackward(st.spatial, B * Tp, N1, heads, sw, dzs, sg);
      if (residual) AddInPlace(dz, dzs);
    }
    Tensor<S> demb({B * Tp * Np, D});
    for (std::size_t bt = 0; bt < B * Tp; ++bt) {
      for (std::size_t n = 0; n < N1; ++n) {
        const S* gr = dz.data() + (bt * N1 + n) * D;
        for (std::size_t d = 0; d < D; ++d) {
          g[ix.pos][n * D + d] += gr[d];
          if (n == 0) {
            g[ix.cls][d] += gr[d];
          } else {
            demb[(bt * Np + n - 1) * D + d] = gr[d];
          }
        }
      }
    }
    nn::LinearBackward(tr.patches, P(ix.patch_w), demb, g[ix.patch_w], &g[ix.patch_b]);
  }

  // ---- slow path
  if (tr.slow_active) {
    Tensor<S> dpool = nn::LinearBackward(tr.slow_pooled, P(ix.proj_w), dfs, g[ix.proj_w], &g[ix.proj_b]);
    Tensor<S> dh = nn::GlobalAvgPoolBackward(tr.slow_last_shape, dpool);
    for (std::size_t bi = ix.blocks.size(); bi-- > 0;) {
      const auto& blk = ix.blocks[bi];
      const auto& st = tr.blocks[bi];
      Tensor<S> dsum = nn::ReluBackward(st.out, dh);
      Tensor<S> dc = bn_back(st.bn2, blk.bn2.gamma, blk.bn2.beta, dsum);
      Tensor<S> da;
      nn::Conv3dBackward(st.h1, P(blk.conv2), dc, &da, g[blk.conv2]);
      da = nn::ReluBackward(st.h1, da);
      Tensor<S> d1 = bn_back(st.bn1, blk.bn1.gamma, blk.bn1.beta, da);
      Tensor<S> din;
      nn::Conv3dBackward(st.input, P(blk.conv1), d1, &din, g[blk.conv1]);
      if (blk.shortcut >= 0) {
        Tensor<S> dsc;
        const auto sc = static_cast<std::size_t>(blk.shortcut);
        nn::Conv3dBackward(st.input, P(sc), dsum, &dsc, g[sc]);
        AddInPlace(din, dsc);
      } else {
        AddInPlace(din, dsum);
      }
      dh = std::move(din);
    }
    Tensor<S> drelu = nn::MaxPoolBackward(tr.stem_relu.shape(), tr.stem_argmax, dh);
    drelu = nn::ReluBackward(tr.stem_relu, drelu);
    Tensor<S> dstem = bn_back(tr.stem_bn, ix.stem_bn.gamma, ix.stem_bn.beta, drelu);
    nn::Conv3dBackward(tr.slow_in, P(ix.stem_conv), dstem, static_cast<Tensor<S>*>(nullptr), g[ix.stem_conv]);
  }
  return g;
}

template <typename S>
void CtuNet<S>::UpdateRunningStats(const ForwardTrace<S>& tr, double momentum) {
  if (!tr.options.training || !tr.slow_active) return;
  const S m = static_cast<S>(momentum);
  auto update = [&](const typename ForwardTrace<S>::BnStep& step) {
    auto& mean = params_[step.param_mean].value;
    auto& var = params_[step.param_var].value;
    const S n = static_cast<S>(step.cache.count);
    for (std::size_t c = 0; c < mean.size(); ++c) {
      const S unbiased = n > S{1} ? step.cache.batch_var[c] * n / (n - S{1}) : step.cache.batch_var[c];
      mean[c] = (S{1} - m) * mean[c] + m * step.cache.batch_mean[c];
      var[c] = (S{1} - m) * var[c] + m * unbiased;
    }
  };
  update(tr.stem_bn);
  for (const auto& b : tr.blocks) {
    update(b.bn1);
    update(b.bn2);
  }
}

template <typename S>
Tensor<S> CtuNet<S>::SlowPathForward(const Tensor<S>& x, const ForwardOptions& options) const {
  if (config_.ablation == Ablation::kNoSlow) throw ConfigError("slow path is ablated in this model");
  auto r = Forward(x, options, true);
  return r.trace->slow_out;
}

template <typename S>
Tensor<S> CtuNet<S>::FastPathForward(const Tensor<S>& x, const ForwardOptions& options) const {
  if (config_.ablation == Ablation::kNoFast) throw ConfigError("fast path is ablated in this model");
  auto r = Forward(x, options, true);
  return r.trace->fast_out;
}

template <typename S>
std::pair<GateOutput, Tensor<S>> CtuNet<S>::FrequencyPathForward(const Tensor<S>& x) const {
  if (config_.ablation != Ablation::kFull) throw ConfigError("frequency path runs only in the full model");
  auto r = Forward(x, ForwardOptions{}, true);
  GateOutput gates;
  for (std::size_t b = 0; b < r.trace->alpha_s.size(); ++b) {
    gates.alpha_s.push_back(static_cast<double>(r.trace->alpha_s[b]));
    gates.alpha_f.push_back(static_cast<double>(r.trace->alpha_f[b]));
  }
  return {gates, r.trace->freq_features};
}

template <typename S>
Tensor<S> Fuse(const Tensor<S>& slow, const Tensor<S>& fast, const Tensor<S>& alpha_s, const Tensor<S>& alpha_f) {
  if (slow.shape() != fast.shape() || slow.rank() != 2) {
    throw ValidationError("fuse expects F_s and F_f of equal [B, D] shape");
  }
  const std::size_t B = slow.dim(0), D = slow.dim(1);
  if (alpha_s.size() != B || alpha_f.size() != B) throw ValidationError("fuse expects one gate pair per sample");
  Tensor<S> out({B, D});
  for (std::size_t b = 0; b < B; ++b) {
    const double sum = static_cast<double>(alpha_s[b]) + static_cast<double>(alpha_f[b]);
    if (!(std::abs(sum - 1.0) <= 1e-4)) {
      throw InternalError("fusion gates for sample " + std::to_string(b) + " sum to " + std::to_string(sum));
    }
    for (std::size_t d = 0; d < D; ++d) {
      out[b * D + d] = alpha_s[b] * slow[b * D + d] + alpha_f[b] * fast[b * D + d];
    }
  }
  return out;
}

template <typename S>
Prediction<S> Classify(const Tensor<S>& fused, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (fused.rank() != 2 || weight.rank() != 2 || weight.dim(1) != fused.dim(1) || bias.size() != weight.dim(0)) {
    throw ValidationError("head dimensions do not match: features " + ShapeToString(fused.shape()) + ", weight " +
                          ShapeToString(weight.shape()) + ", bias " + ShapeToString(bias.shape()));
  }
  Prediction<S> p;
  p.logits = nn::LinearForward(fused, weight, bias);
  p.probs = nn::Softmax(p.logits);
  return p;
}

template <typename S>
std::uint64_t ActivationPattern(const ForwardTrace<S>& tr) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::uint64_t v) { h = (h ^ v) * 0x100000001b3ULL; };
  auto signs = [&](const Tensor<S>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) mix(t[i] > S{0} ? i * 2 + 1 : i * 2);
  };
  auto winners = [&](const std::vector<std::size_t>& a) {
    for (std::size_t v : a) mix(v);
  };
  signs(tr.stem_relu);
  winners(tr.stem_argmax);
  for (const auto& b : tr.blocks) {
    signs(b.h1);
    signs(b.out);
  }
  winners(tr.freq_argmax);
  return h;
}

template std::uint64_t ActivationPattern<float>(const ForwardTrace<float>&);
template std::uint64_t ActivationPattern<double>(const ForwardTrace<double>&);

template <typename S>
double CrossEntropy(const Prediction<S>& pred, std::span<const int> labels, Tensor<S>* dlogits) {
  const std::size_t B = pred.probs.dim(0), C = pred.probs.dim(1);
  if (labels.size() != B) throw ValidationError("label count does not match batch size");
  if (dlogits) *dlogits = Tensor<S>({B, C});
  double loss = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= C) {
      throw ValidationError("label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");
    }
    // log-softmax from the logits keeps the loss finite when a probability underflows
    const S* z = pred.logits.data() + b * C;
    const double zmax = *std::max_element(z, z + C);
    double sum = 0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(static_cast<double>(z[c]) - zmax);
    loss += std::log(sum) + zmax - static_cast<double>(z[y]);
    if (dlogits) {
      for (std::size_t c = 0; c < C; ++c) {
        (*dlogits)[b * C + c] =
            (pred.probs[b * C + c] - (static_cast<std::size_t>(y) == c ? S{1} : S{0})) / static_cast<S>(B);
      }
    }
  }
  return loss / static_cast<double>(B);
}

template double CrossEntropy<float>(const Prediction<float>&, std::span<const int>, Tensor<float>*);
template double CrossEntropy<double>(const Prediction<double>&, std::span<const int>, Tensor<double>*);
template class ParameterSet<float>;
template class ParameterSet<double>;
template class CtuNet<float>;
template class CtuNet<double>;
template Tensor<float> MakeBatch<float>(std::span<const data::VideoSample>);
template Tensor<double> MakeBatch<double>(std::span<const data::VideoSample>);
template Tensor<float> MagnitudeSpectra<float>(const Tensor<float>&);
template Tensor<double> MagnitudeSpectra<double>(const Tensor<double>&);
template Tensor<float> Fuse<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                   const Tensor<float>&);
template Tensor<double> Fuse<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                     const Tensor<double>&);
template Prediction<float> Classify<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Prediction<double> Classify<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);

}  // namespace autous::model
