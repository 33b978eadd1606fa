#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "accunet/ops.hpp"
#include "accunet/params.hpp"
#include "accunet/tape.hpp"

namespace accunet {

// ---------------------------------------------------------------------------
// Parameter structs
// ---------------------------------------------------------------------------

template <typename T>
struct SeParamsT {
  LinearParamsT<T> fc1;  // c -> c/r
  LinearParamsT<T> fc2;  // c/r -> c
};

// One conv -> batchnorm -> leaky-relu unit, optionally SE-recalibrated.
template <typename T>
struct ConvUnitT {
  ConvParamsT<T> conv;
  BatchNormStateT<T> bn;
  std::optional<SeParamsT<T>> se;
};

struct HancConfig {
  int c_in = 0;
  int c_out = 0;
  int k = 3;         // hierarchy levels, 1..4
  int inv_fctr = 3;  // inverted-bottleneck expansion

  int c_inv() const { return c_in * inv_fctr; }
  int aggregated_channels() const { return c_inv() * (2 * k - 1); }
  int required_multiple() const { return 1 << (k - 1); }

  void validate() const {
    if (c_in < 1 || c_out < 1 || inv_fctr < 1)
      throw ValueError("HancConfig: channels and inv_fctr must be >= 1");
    if (k < 1 || k > 4) throw ValueError("HancConfig: k must be in [1,4]");
  }
};

template <typename T>
struct HancParamsT {
  HancConfig cfg;
  ConvUnitT<T> expand;  // pointwise c_in -> c_inv
  ConvUnitT<T> dconv;   // depthwise 3x3 over c_inv
  ConvUnitT<T> reduce;  // pointwise c_inv*(2k-1) -> c_in, shortcut from input
  ConvUnitT<T> out;     // pointwise c_in -> c_out, SE here by default
};

template <typename T>
struct ResidualSkipParamsT {
  ConvUnitT<T> unit;  // 3x3 conv + BN, identity shortcut, SE on the output
};

struct MlfcConfig {
  std::array<int, 4> channels{};  // c_1..c_4, level 1 is highest resolution

  int c_tot() const { return channels[0] + channels[1] + channels[2] + channels[3]; }
};

template <typename T>
struct MlfcLevelParamsT {
  ConvUnitT<T> summarize;  // c_tot -> c_i
  ConvUnitT<T> merge;      // 2*c_i -> c_i, SE on the output
};

template <typename T>
using MlfcParamsT = std::array<MlfcLevelParamsT<T>, 4>;

// ---------------------------------------------------------------------------
// Builders (register tensors in a ParamStore under dotted names)
// ---------------------------------------------------------------------------

struct BlockHyper {
  double slope = 0.01;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  int se_ratio = 8;
  bool se_per_conv = false;
};

template <typename T>
ConvParamsT<T> make_conv_params(ParamStoreT<T>& ps, const std::string& prefix,
                                int c_in, int c_out, int k, int stride, int pad,
                                int groups, Rng& rng, double slope,
                                bool bias = true) {
  ConvParamsT<T> p;
  const int64_t fan_in = int64_t(c_in / groups) * k * k;
  p.weight = ps.add(prefix + ".weight",
                    kaiming_uniform<T>(Shape{c_out, c_in / groups, k, k}, fan_in,
                                       slope, rng));
  if (bias) p.bias = ps.add(prefix + ".bias", TensorT<T>::zeros(Shape{1, c_out, 1, 1}));
  p.stride = stride;
  p.padding = pad;
  p.groups = groups;
  return p;
}

template <typename T>
BatchNormStateT<T> make_bn_state(ParamStoreT<T>& ps, const std::string& prefix,
                                 int c, const BlockHyper& h) {
  BatchNormStateT<T> s;
  s.gamma = ps.add(prefix + ".gamma", TensorT<T>::full(Shape{1, c, 1, 1}, T(1)));
  s.beta = ps.add(prefix + ".beta", TensorT<T>::zeros(Shape{1, c, 1, 1}));
  s.running_mean =
      ps.add(prefix + ".running_mean", TensorT<T>::zeros(Shape{1, c, 1, 1}), false);
  s.running_var =
      ps.add(prefix + ".running_var", TensorT<T>::full(Shape{1, c, 1, 1}, T(1)), false);
  s.momentum = T(h.bn_momentum);
  s.eps = T(h.bn_eps);
  return s;
}

template <typename T>
SeParamsT<T> make_se_params(ParamStoreT<T>& ps, const std::string& prefix, int c,
                            const BlockHyper& h, Rng& rng) {
  const int reduced = std::max(1, c / h.se_ratio);
  SeParamsT<T> p;
  p.fc1.weight = ps.add(prefix + ".fc1.weight",
                        kaiming_uniform<T>(Shape{reduced, c, 1, 1}, c, h.slope, rng));
  p.fc1.bias = ps.add(prefix + ".fc1.bias", TensorT<T>::zeros(Shape{1, reduced, 1, 1}));
  p.fc2.weight = ps.add(prefix + ".fc2.weight",
                        kaiming_uniform<T>(Shape{c, reduced, 1, 1}, reduced, h.slope, rng));
  p.fc2.bias = ps.add(prefix + ".fc2.bias", TensorT<T>::zeros(Shape{1, c, 1, 1}));
  return p;
}

template <typename T>
ConvUnitT<T> make_conv_unit(ParamStoreT<T>& ps, const std::string& prefix, int c_in,
                            int c_out, int k, int stride, int pad, int groups,
                            const BlockHyper& h, Rng& rng, bool with_se) {
  ConvUnitT<T> u;
  u.conv = make_conv_params<T>(ps, prefix + ".conv", c_in, c_out, k, stride, pad,
                               groups, rng, h.slope);
  u.bn = make_bn_state<T>(ps, prefix + ".bn", c_out, h);
  if (with_se) u.se = make_se_params<T>(ps, prefix + ".se", c_out, h, rng);
  return u;
}

template <typename T>
HancParamsT<T> make_hanc_params(ParamStoreT<T>& ps, const std::string& prefix,
                                const HancConfig& cfg, const BlockHyper& h, Rng& rng) {
  cfg.validate();
  HancParamsT<T> p;
  p.cfg = cfg;
  const int ci = cfg.c_inv();
  p.expand = make_conv_unit<T>(ps, prefix + ".expand", cfg.c_in, ci, 1, 1, 0, 1, h,
                               rng, h.se_per_conv);
  p.dconv = make_conv_unit<T>(ps, prefix + ".dconv", ci, ci, 3, 1, 1, ci, h, rng,
                              h.se_per_conv);
  p.reduce = make_conv_unit<T>(ps, prefix + ".reduce", cfg.aggregated_channels(),
                               cfg.c_in, 1, 1, 0, 1, h, rng, h.se_per_conv);
  p.out = make_conv_unit<T>(ps, prefix + ".out", cfg.c_in, cfg.c_out, 1, 1, 0, 1, h,
                            rng, true);
  return p;
}

template <typename T>
ResidualSkipParamsT<T> make_residual_skip_params(ParamStoreT<T>& ps,
                                                 const std::string& prefix, int c,
                                                 const BlockHyper& h, Rng& rng) {
  ResidualSkipParamsT<T> p;
  p.unit = make_conv_unit<T>(ps, prefix, c, c, 3, 1, 1, 1, h, rng, true);
  return p;
}

template <typename T>
MlfcParamsT<T> make_mlfc_params(ParamStoreT<T>& ps, const std::string& prefix,
                                const MlfcConfig& cfg, const BlockHyper& h, Rng& rng) {
  MlfcParamsT<T> p;
  for (int i = 0; i < 4; ++i) {
    const std::string lvl = prefix + ".lvl" + std::to_string(i + 1);
    p[i].summarize = make_conv_unit<T>(ps, lvl + ".summarize", cfg.c_tot(),
                                       cfg.channels[i], 1, 1, 0, 1, h, rng,
                                       h.se_per_conv);
    p[i].merge = make_conv_unit<T>(ps, lvl + ".merge", 2 * cfg.channels[i],
                                   cfg.channels[i], 1, 1, 0, 1, h, rng, true);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward operations
// ---------------------------------------------------------------------------

// y = x * sigmoid(fc2(relu(fc1(gap(x))))) broadcast per channel.
template <typename T>
TensorT<T> se_recalibrate(const TensorT<T>& x, const SeParamsT<T>& p,
                          TapeT<T>* tape = nullptr) {
  if (x.shape.c != p.fc1.weight.shape.c)
    throw ShapeError("se_recalibrate: input has " + std::to_string(x.shape.c) +
                     " channels, fc1 expects " +
                     std::to_string(p.fc1.weight.shape.c));
  TensorT<T> squeezed = global_avg_pool(x, tape);
  TensorT<T> hidden = activation(linear(squeezed, p.fc1, tape), Activation::Relu,
                                 T(0), tape);
  TensorT<T> gate = activation(linear(hidden, p.fc2, tape), Activation::Sigmoid,
                               T(0), tape);
  return mul_channel(x, gate, tape);
}

// conv -> BN -> (+shortcut) -> leaky-relu -> (SE). The shortcut is added
// after normalization and before the activation.
template <typename T>
TensorT<T> conv_unit(const TensorT<T>& x, const ConvParamsT<T>& conv,
                     const BatchNormStateT<T>& bn, const SeParamsT<T>* se,
                     bool training, T slope = T(0.01), TapeT<T>* tape = nullptr,
                     const TensorT<T>* shortcut = nullptr) {
  TensorT<T> y = batchnorm2d(conv2d(x, conv, tape), bn, training, tape);
  if (shortcut) y = add(y, *shortcut, tape);
  y = activation(y, Activation::LeakyRelu, slope, tape);
  if (se) y = se_recalibrate(y, *se, tape);
  return y;
}

template <typename T>
TensorT<T> conv_unit(const TensorT<T>& x, const ConvUnitT<T>& u, bool training,
                     T slope = T(0.01), TapeT<T>* tape = nullptr,
                     const TensorT<T>* shortcut = nullptr) {
  return conv_unit(x, u.conv, u.bn, u.se ? &*u.se : nullptr, training, slope, tape,
                   shortcut);
}

// Concat of [x, mean-pooled 2..2^(k-1), max-pooled 2..2^(k-1)], every pooled
// map restored to the input resolution by nearest upsampling. Output has
// c*(2k-1) channels; k=1 returns the input unchanged.
template <typename T>
TensorT<T> hanc_aggregate(const TensorT<T>& x, int k, TapeT<T>* tape = nullptr,
                          ConcatStrategy strategy = ConcatStrategy::Prealloc) {
  if (k < 1 || k > 4) throw ValueError("hanc_aggregate: k must be in [1,4]");
  if (k == 1) return x;
  const int mult = 1 << (k - 1);
  if (x.shape.h % mult != 0 || x.shape.w % mult != 0)
    throw DivisibilityError("hanc_aggregate: k=" + std::to_string(k) +
                            " requires spatial dims divisible by " +
                            std::to_string(mult) + ", got (" +
                            std::to_string(x.shape.h) + "," +
                            std::to_string(x.shape.w) + ")");
  std::vector<TensorT<T>> parts;
  parts.reserve(size_t(2 * k - 1));
  parts.push_back(x);
  for (PoolKind kind : {PoolKind::Avg, PoolKind::Max})
    for (int level = 1; level < k; ++level) {
      const int s = 1 << level;
      TensorT<T> pooled = pool2d(x, kind, s, tape);
      parts.push_back(upsample(pooled, UpsampleMode::Nearest, x.shape.h, x.shape.w,
                               tape));
    }
  return concat_channels(parts, strategy, tape);
}

template <typename T>
TensorT<T> hanc_block(const TensorT<T>& x_in, const HancParamsT<T>& p, bool training,
                      T slope = T(0.01), TapeT<T>* tape = nullptr) {
  if (x_in.shape.c != p.cfg.c_in)
    throw ShapeError("hanc_block: input has " + std::to_string(x_in.shape.c) +
                     " channels, config expects " + std::to_string(p.cfg.c_in));
  TensorT<T> a = conv_unit(x_in, p.expand, training, slope, tape);
  TensorT<T> x1 = conv_unit(a, p.dconv, training, slope, tape);
  TensorT<T> x2 = hanc_aggregate(x1, p.cfg.k, tape);
  TensorT<T> x3 = conv_unit(x2, p.reduce, training, slope, tape, &x_in);
  return conv_unit(x3, p.out, training, slope, tape);
}

// leaky_relu(BN(conv3x3(x)) + x), then SE; channel-preserving.
template <typename T>
TensorT<T> residual_skip_block(const TensorT<T>& x, const ResidualSkipParamsT<T>& p,
                               bool training, T slope = T(0.01),
                               TapeT<T>* tape = nullptr) {
  return conv_unit(x, p.unit, training, slope, tape, &x);
}

namespace detail {

// Downsizing uses integer-factor average pooling, upsizing bilinear.
template <typename T>
TensorT<T> resize_to(const TensorT<T>& x, int th, int tw, TapeT<T>* tape) {
  if (x.shape.h == th && x.shape.w == tw) return x;
  if (x.shape.h > th) {
    if (x.shape.h % th != 0 || x.shape.w % tw != 0)
      throw DivisibilityError("mlfc resize: " + x.shape.str() +
                              " is not an integer multiple of target (" +
                              std::to_string(th) + "," + std::to_string(tw) + ")");
    return pool2d(x, PoolKind::Avg, x.shape.h / th, tape);
  }
  return upsample(x, UpsampleMode::Bilinear, th, tw, tape);
}

}  // namespace detail

// For each level i: resize all four maps to level-i size, concat in level
// order, summarize c_tot -> c_i, then merge concat(summary, x_i) back to c_i.
// All four outputs are computed from the original inputs.
template <typename T>
std::array<TensorT<T>, 4> mlfc_block(const std::array<TensorT<T>, 4>& xs,
                                     const MlfcConfig& cfg, const MlfcParamsT<T>& p,
                                     bool training, T slope = T(0.01),
                                     TapeT<T>* tape = nullptr) {
  for (int i = 0; i < 4; ++i)
    if (xs[i].shape.c != cfg.channels[i])
      throw ShapeError("mlfc_block: level " + std::to_string(i + 1) + " has " +
                       std::to_string(xs[i].shape.c) + " channels, schedule says " +
                       std::to_string(cfg.channels[i]));
  std::array<TensorT<T>, 4> out;
  for (int i = 0; i < 4; ++i) {
    std::vector<TensorT<T>> resized;
    resized.reserve(4);
    for (int j = 0; j < 4; ++j)
      resized.push_back(detail::resize_to(xs[j], xs[i].shape.h, xs[i].shape.w, tape));
    TensorT<T> stack = concat_channels(resized, ConcatStrategy::Prealloc, tape);
    TensorT<T> comb = conv_unit(stack, p[i].summarize, training, slope, tape);
    TensorT<T> merged = concat_channels<T>({comb, xs[i]}, ConcatStrategy::Prealloc, tape);
    out[i] = conv_unit(merged, p[i].merge, training, slope, tape);
  }
  return out;
}

}  // namespace accunet
