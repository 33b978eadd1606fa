#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <optional>
#include <vector>

#include "accunet/tape.hpp"
#include "accunet/tensor.hpp"

namespace accunet {

// ---------------------------------------------------------------------------
// Inner kernels. Reduction order is fixed (serial k-loop per output element),
// so results are bit-identical for any thread count.
// ---------------------------------------------------------------------------

// C[M,N] += A[M,K] * B[K,N], row-major.
template <typename T>
void gemm_acc(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    for (int64_t k = 0; k < K; ++k) {
      const T ak = a[k];
      const T* b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += ak * b[j];
    }
  }
}

// C[K,N] += A^T * B with A[M,K], B[M,N].
template <typename T>
void gemm_at_b(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
#pragma omp parallel for schedule(static)
  for (int64_t k = 0; k < K; ++k) {
    T* c = C + k * N;
    for (int64_t m = 0; m < M; ++m) {
      const T amk = A[m * K + k];
      const T* b = B + m * N;
      for (int64_t j = 0; j < N; ++j) c[j] += amk * b[j];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T, i.e. C[m,k] += sum_j A[m,j]*B[k,j].
template <typename T>
void gemm_a_bt(const T* A, const T* B, T* C, int64_t M, int64_t N, int64_t K) {
#pragma omp parallel for schedule(static)
  for (int64_t m = 0; m < M; ++m) {
    const T* a = A + m * N;
    for (int64_t k = 0; k < K; ++k) {
      const T* b = B + k * N;
      T acc = T(0);
      for (int64_t j = 0; j < N; ++j) acc += a[j] * b[j];
      C[m * K + k] += acc;
    }
  }
}

// ---------------------------------------------------------------------------
// Parameter structs
// ---------------------------------------------------------------------------

template <typename T>
struct ConvParamsT {
  TensorT<T> weight;                 // (c_out, c_in/groups, kh, kw)
  std::optional<TensorT<T>> bias;    // (1, c_out, 1, 1)
  int stride = 1;
  int padding = 0;
  int groups = 1;

  int c_out() const { return weight.shape.n; }
  int c_in_per_group() const { return weight.shape.c; }
  int kh() const { return weight.shape.h; }
  int kw() const { return weight.shape.w; }
};

template <typename T>
struct BatchNormStateT {
  TensorT<T> gamma;         // (1, c, 1, 1)
  TensorT<T> beta;          // (1, c, 1, 1)
  TensorT<T> running_mean;  // (1, c, 1, 1)
  TensorT<T> running_var;   // (1, c, 1, 1)
  T momentum = T(0.1);
  T eps = T(1e-5);

  int channels() const { return gamma.shape.c; }
};

template <typename T>
struct LinearParamsT {
  TensorT<T> weight;  // (c_out, c_in, 1, 1)
  TensorT<T> bias;    // (1, c_out, 1, 1)
};

enum class Activation { LeakyRelu, Relu, Sigmoid };
enum class PoolKind { Max, Avg };
enum class UpsampleMode { Nearest, Bilinear };
enum class ConcatStrategy { Naive, Prealloc };

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, T* col) {
  // col layout: [(ci*kh+ki)*kw+kj][oy*wo+ox]
  const int64_t plane = int64_t(ho) * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = col + ((int64_t(ci) * kh + ki) * kw + kj) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= h) {
            std::fill(dst + int64_t(oy) * wo, dst + int64_t(oy + 1) * wo, T(0));
            continue;
          }
          const T* src = x + (int64_t(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kj - pad;
            dst[int64_t(oy) * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* col, int c, int h, int w, int kh, int kw, int stride,
                int pad, int ho, int wo, T* x) {
  const int64_t plane = int64_t(ho) * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* src = col + ((int64_t(ci) * kh + ki) * kw + kj) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= h) continue;
          T* dst = x + (int64_t(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < w) dst[ix] += src[int64_t(oy) * wo + ox];
          }
        }
      }
    }
  }
}

template <typename T>
void add_bias(TensorT<T>& y, const TensorT<T>& bias) {
  const int64_t hw = y.shape.hw();
  T* out = y.ptr();
  const T* b = bias.ptr();
  for (int in = 0; in < y.shape.n; ++in)
    for (int ic = 0; ic < y.shape.c; ++ic) {
      T* p = out + (int64_t(in) * y.shape.c + ic) * hw;
      const T bv = b[ic];
      for (int64_t i = 0; i < hw; ++i) p[i] += bv;
    }
}

// Depthwise 3x3-style direct convolution, one channel per group.
template <typename T>
void depthwise_forward(const TensorT<T>& x, const ConvParamsT<T>& p, TensorT<T>& y,
                       int ho, int wo) {
  const int kh = p.kh(), kw = p.kw(), s = p.stride, pad = p.padding;
  const int h = x.shape.h, w = x.shape.w, c = x.shape.c;
  const int64_t planes = int64_t(x.shape.n) * c;
#pragma omp parallel for schedule(static)
  for (int64_t nc = 0; nc < planes; ++nc) {
    const int ci = int(nc % c);
    const T* in = x.ptr() + nc * x.shape.hw();
    const T* wt = p.weight.ptr() + int64_t(ci) * kh * kw;
    T* out = y.ptr() + nc * int64_t(ho) * wo;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        T acc = T(0);
        for (int ki = 0; ki < kh; ++ki) {
          const int iy = oy * s + ki - pad;
          if (iy < 0 || iy >= h) continue;
          for (int kj = 0; kj < kw; ++kj) {
            const int ix = ox * s + kj - pad;
            if (ix < 0 || ix >= w) continue;
            acc += wt[ki * kw + kj] * in[int64_t(iy) * w + ix];
          }
        }
        out[int64_t(oy) * wo + ox] = acc;
      }
  }
}

template <typename T>
void depthwise_backward(const TensorT<T>& x, const ConvParamsT<T>& p,
                        const TensorT<T>& gy, TensorT<T>& gx, TensorT<T>& gw) {
  const int kh = p.kh(), kw = p.kw(), s = p.stride, pad = p.padding;
  const int h = x.shape.h, w = x.shape.w, c = x.shape.c;
  const int ho = gy.shape.h, wo = gy.shape.w;
  // dX: each input plane owned by one iteration.
  const int64_t planes = int64_t(x.shape.n) * c;
#pragma omp parallel for schedule(static)
  for (int64_t nc = 0; nc < planes; ++nc) {
    const int ci = int(nc % c);
    const T* g = gy.ptr() + nc * int64_t(ho) * wo;
    const T* wt = p.weight.ptr() + int64_t(ci) * kh * kw;
    T* gxp = gx.ptr() + nc * x.shape.hw();
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const T gv = g[int64_t(oy) * wo + ox];
        for (int ki = 0; ki < kh; ++ki) {
          const int iy = oy * s + ki - pad;
          if (iy < 0 || iy >= h) continue;
          for (int kj = 0; kj < kw; ++kj) {
            const int ix = ox * s + kj - pad;
            if (ix < 0 || ix >= w) continue;
            gxp[int64_t(iy) * w + ix] += gv * wt[ki * kw + kj];
          }
        }
      }
  }
  // dW: one channel per iteration, summed over batch serially.
#pragma omp parallel for schedule(static)
  for (int64_t ci = 0; ci < c; ++ci) {
    T* gwp = gw.ptr() + ci * kh * kw;
    for (int in = 0; in < x.shape.n; ++in) {
      const T* xin = x.ptr() + (int64_t(in) * c + ci) * x.shape.hw();
      const T* g = gy.ptr() + (int64_t(in) * c + ci) * int64_t(ho) * wo;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const T gv = g[int64_t(oy) * wo + ox];
          for (int ki = 0; ki < kh; ++ki) {
            const int iy = oy * s + ki - pad;
            if (iy < 0 || iy >= h) continue;
            for (int kj = 0; kj < kw; ++kj) {
              const int ix = ox * s + kj - pad;
              if (ix < 0 || ix >= w) continue;
              gwp[ki * kw + kj] += gv * xin[int64_t(iy) * w + ix];
            }
          }
        }
    }
  }
}

template <typename T>
TensorT<T> bias_grad(const TensorT<T>& gy) {
  TensorT<T> gb(Shape{1, gy.shape.c, 1, 1});
  T* out = gb.ptr();
  const int64_t hw = gy.shape.hw();
  for (int in = 0; in < gy.shape.n; ++in)
    for (int ic = 0; ic < gy.shape.c; ++ic) {
      const T* p = gy.ptr() + (int64_t(in) * gy.shape.c + ic) * hw;
      T acc = T(0);
      for (int64_t i = 0; i < hw; ++i) acc += p[i];
      out[ic] += acc;
    }
  return gb;
}

}  // namespace detail

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const ConvParamsT<T>& p,
                  TapeT<T>* tape = nullptr) {
  const int g = p.groups;
  if (g < 1 || x.shape.c % g != 0 || p.c_out() % g != 0)
    throw ShapeError("conv2d: groups=" + std::to_string(g) +
                     " must divide c_in=" + std::to_string(x.shape.c) +
                     " and c_out=" + std::to_string(p.c_out()));
  if (p.c_in_per_group() != x.shape.c / g)
    throw ShapeError("conv2d: weight expects c_in/groups=" +
                     std::to_string(p.c_in_per_group()) + ", input has " +
                     std::to_string(x.shape.c / g));
  const int ho = (x.shape.h + 2 * p.padding - p.kh()) / p.stride + 1;
  const int wo = (x.shape.w + 2 * p.padding - p.kw()) / p.stride + 1;
  if (ho < 1 || wo < 1)
    throw ShapeError("conv2d: output dims would be " + std::to_string(ho) + "x" +
                     std::to_string(wo));

  TensorT<T> y(Shape{x.shape.n, p.c_out(), ho, wo});
  const bool pointwise = p.kh() == 1 && p.kw() == 1 && p.stride == 1 &&
                         p.padding == 0 && g == 1;
  const bool depthwise = g == x.shape.c && p.c_out() == x.shape.c &&
                         p.c_in_per_group() == 1;

  if (pointwise) {
    const int64_t hw = x.shape.hw();
    for (int in = 0; in < x.shape.n; ++in)
      gemm_acc(p.weight.ptr(), x.ptr() + in * x.shape.chw(),
               y.ptr() + in * y.shape.chw(), p.c_out(), x.shape.c, hw);
  } else if (depthwise) {
    detail::depthwise_forward(x, p, y, ho, wo);
  } else {
    const int cg = x.shape.c / g;
    const int cog = p.c_out() / g;
    const int64_t K = int64_t(cg) * p.kh() * p.kw();
    const int64_t N = int64_t(ho) * wo;
    std::vector<T> col(size_t(K * N));
    for (int in = 0; in < x.shape.n; ++in)
      for (int gi = 0; gi < g; ++gi) {
        detail::im2col(x.ptr() + in * x.shape.chw() + int64_t(gi) * cg * x.shape.hw(),
                       cg, x.shape.h, x.shape.w, p.kh(), p.kw(), p.stride,
                       p.padding, ho, wo, col.data());
        gemm_acc(p.weight.ptr() + int64_t(gi) * cog * K, col.data(),
                 y.ptr() + in * y.shape.chw() + int64_t(gi) * cog * N, cog, K, N);
      }
  }
  if (p.bias) detail::add_bias(y, *p.bias);
  check_finite(y, "conv2d");

  if (tape) {
    std::vector<int64_t> ins{x.id, p.weight.id};
    if (p.bias) ins.push_back(p.bias->id);
    tape->record(y, ins, "conv2d", [x, p, pointwise, depthwise, ho, wo](
                                       const TensorT<T>& gy, TapeT<T>& t) {
      TensorT<T> gx(x.shape);
      TensorT<T> gw(p.weight.shape);
      if (pointwise) {
        const int64_t hw = x.shape.hw();
        for (int in = 0; in < x.shape.n; ++in) {
          gemm_a_bt(gy.ptr() + in * gy.shape.chw(), x.ptr() + in * x.shape.chw(),
                    gw.ptr(), p.c_out(), hw, x.shape.c);
          gemm_at_b(p.weight.ptr(), gy.ptr() + in * gy.shape.chw(),
                    gx.ptr() + in * x.shape.chw(), p.c_out(), x.shape.c, hw);
        }
      } else if (depthwise) {
        detail::depthwise_backward(x, p, gy, gx, gw);
      } else {
        const int g = p.groups;
        const int cg = x.shape.c / g;
        const int cog = p.c_out() / g;
        const int64_t K = int64_t(cg) * p.kh() * p.kw();
        const int64_t N = int64_t(ho) * wo;
        std::vector<T> col(size_t(K * N));
        std::vector<T> gcol(size_t(K * N));
        for (int in = 0; in < x.shape.n; ++in)
          for (int gi = 0; gi < g; ++gi) {
            const T* xg = x.ptr() + in * x.shape.chw() + int64_t(gi) * cg * x.shape.hw();
            const T* gyg = gy.ptr() + in * gy.shape.chw() + int64_t(gi) * cog * N;
            detail::im2col(xg, cg, x.shape.h, x.shape.w, p.kh(), p.kw(), p.stride,
                           p.padding, ho, wo, col.data());
            gemm_a_bt(gyg, col.data(), gw.ptr() + int64_t(gi) * cog * K, cog, N, K);
            std::fill(gcol.begin(), gcol.end(), T(0));
            gemm_at_b(p.weight.ptr() + int64_t(gi) * cog * K, gyg, gcol.data(),
                      cog, K, N);
            detail::col2im_acc(gcol.data(), cg, x.shape.h, x.shape.w, p.kh(),
                               p.kw(), p.stride, p.padding, ho, wo,
                               gx.ptr() + in * x.shape.chw() +
                                   int64_t(gi) * cg * x.shape.hw());
          }
      }
      t.accumulate(x.id, gx);
      t.accumulate(p.weight.id, gw);
      if (p.bias) t.accumulate(p.bias->id, detail::bias_grad(gy));
    });
  }
  return y;
}

// Adjoint of a strided convolution; weight layout (c_out, c_in, kh, kw).
template <typename T>
TensorT<T> conv2d_transpose(const TensorT<T>& x, const ConvParamsT<T>& p,
                            TapeT<T>* tape = nullptr) {
  if (p.groups != 1) throw ShapeError("conv2d_transpose: groups must be 1");
  const int c_out = p.weight.shape.n, c_in = p.weight.shape.c;
  const int kh = p.kh(), kw = p.kw(), s = p.stride;
  if (x.shape.c != c_in)
    throw ShapeError("conv2d_transpose: input has " + std::to_string(x.shape.c) +
                     " channels, weight expects " + std::to_string(c_in));
  const int ho = (x.shape.h - 1) * s + kh;
  const int wo = (x.shape.w - 1) * s + kw;
  TensorT<T> y(Shape{x.shape.n, c_out, ho, wo});
  const int h = x.shape.h, w = x.shape.w;

  const int64_t planes = int64_t(x.shape.n) * c_out;
#pragma omp parallel for schedule(static)
  for (int64_t nco = 0; nco < planes; ++nco) {
    const int in = int(nco / c_out);
    const int co = int(nco % c_out);
    T* out = y.ptr() + nco * int64_t(ho) * wo;
    const T* wbase = p.weight.ptr() + int64_t(co) * c_in * kh * kw;
    for (int ci = 0; ci < c_in; ++ci) {
      const T* xin = x.ptr() + (int64_t(in) * c_in + ci) * x.shape.hw();
      const T* wt = wbase + int64_t(ci) * kh * kw;
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) {
          const T xv = xin[int64_t(iy) * w + ix];
          for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj)
              out[int64_t(iy * s + ki) * wo + (ix * s + kj)] += xv * wt[ki * kw + kj];
        }
    }
  }
  if (p.bias) detail::add_bias(y, *p.bias);
  check_finite(y, "conv2d_transpose");

  if (tape) {
    std::vector<int64_t> ins{x.id, p.weight.id};
    if (p.bias) ins.push_back(p.bias->id);
    tape->record(y, ins, "conv2d_transpose",
                 [x, p, c_out, c_in, kh, kw, s, ho, wo](const TensorT<T>& gy,
                                                        TapeT<T>& t) {
                   const int h = x.shape.h, w = x.shape.w;
                   TensorT<T> gx(x.shape);
                   TensorT<T> gw(p.weight.shape);
                   const int64_t planes = int64_t(x.shape.n) * c_in;
#pragma omp parallel for schedule(static)
                   for (int64_t nci = 0; nci < planes; ++nci) {
                     const int in = int(nci / c_in);
                     const int ci = int(nci % c_in);
                     T* gxp = gx.ptr() + nci * x.shape.hw();
                     for (int co = 0; co < c_out; ++co) {
                       const T* g = gy.ptr() + (int64_t(in) * c_out + co) *
                                                   int64_t(ho) * wo;
                       const T* wt = p.weight.ptr() +
                                     (int64_t(co) * c_in + ci) * kh * kw;
                       for (int iy = 0; iy < h; ++iy)
                         for (int ix = 0; ix < w; ++ix) {
                           T acc = T(0);
                           for (int ki = 0; ki < kh; ++ki)
                             for (int kj = 0; kj < kw; ++kj)
                               acc += g[int64_t(iy * s + ki) * wo + ix * s + kj] *
                                      wt[ki * kw + kj];
                           gxp[int64_t(iy) * w + ix] += acc;
                         }
                     }
                   }
#pragma omp parallel for schedule(static)
                   for (int64_t co = 0; co < c_out; ++co) {
                     for (int in = 0; in < x.shape.n; ++in) {
                       const T* g = gy.ptr() + (int64_t(in) * c_out + co) *
                                                   int64_t(ho) * wo;
                       for (int ci = 0; ci < c_in; ++ci) {
                         const T* xin = x.ptr() + (int64_t(in) * c_in + ci) *
                                                      x.shape.hw();
                         T* gwp = gw.ptr() + (co * int64_t(c_in) + ci) * kh * kw;
                         for (int iy = 0; iy < h; ++iy)
                           for (int ix = 0; ix < w; ++ix) {
                             const T xv = xin[int64_t(iy) * w + ix];
                             for (int ki = 0; ki < kh; ++ki)
                               for (int kj = 0; kj < kw; ++kj)
                                 gwp[ki * kw + kj] +=
                                     xv * g[int64_t(iy * s + ki) * wo + ix * s + kj];
                           }
                       }
                     }
                   }
                   t.accumulate(x.id, gx);
                   t.accumulate(p.weight.id, gw);
                   if (p.bias) t.accumulate(p.bias->id, detail::bias_grad(gy));
                 });
  }
  return y;
}

// ---------------------------------------------------------------------------
// pool2d (kernel == stride == s, exact divisibility required)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> pool2d(const TensorT<T>& x, PoolKind kind, int s,
                  TapeT<T>* tape = nullptr) {
  if (s < 1) throw ShapeError("pool2d: window must be >= 1");
  if (x.shape.h % s != 0 || x.shape.w % s != 0)
    throw DivisibilityError("pool2d: spatial dims (" + std::to_string(x.shape.h) +
                            "," + std::to_string(x.shape.w) +
                            ") must be divisible by " + std::to_string(s));
  const int ho = x.shape.h / s, wo = x.shape.w / s;
  TensorT<T> y(Shape{x.shape.n, x.shape.c, ho, wo});
  auto argmax = std::make_shared<std::vector<int32_t>>();
  if (kind == PoolKind::Max) argmax->resize(size_t(y.numel()));

  const int64_t planes = int64_t(x.shape.n) * x.shape.c;
  const T inv = T(1) / T(s * s);
#pragma omp parallel for schedule(static)
  for (int64_t nc = 0; nc < planes; ++nc) {
    const T* in = x.ptr() + nc * x.shape.hw();
    T* out = y.ptr() + nc * int64_t(ho) * wo;
    int32_t* am = kind == PoolKind::Max ? argmax->data() + nc * int64_t(ho) * wo
                                        : nullptr;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        if (kind == PoolKind::Avg) {
          T acc = T(0);
          for (int ky = 0; ky < s; ++ky)
            for (int kx = 0; kx < s; ++kx)
              acc += in[int64_t(oy * s + ky) * x.shape.w + ox * s + kx];
          out[int64_t(oy) * wo + ox] = acc * inv;
        } else {
          int32_t best = int32_t(int64_t(oy * s) * x.shape.w + ox * s);
          T bv = in[best];
          for (int ky = 0; ky < s; ++ky)
            for (int kx = 0; kx < s; ++kx) {
              const int32_t idx =
                  int32_t(int64_t(oy * s + ky) * x.shape.w + ox * s + kx);
              if (in[idx] > bv) {
                bv = in[idx];
                best = idx;
              }
            }
          out[int64_t(oy) * wo + ox] = bv;
          am[int64_t(oy) * wo + ox] = best;
        }
      }
  }
  check_finite(y, "pool2d");

  if (tape) {
    tape->record(y, {x.id}, "pool2d",
                 [x, kind, s, ho, wo, argmax, inv](const TensorT<T>& gy,
                                                   TapeT<T>& t) {
                   TensorT<T> gx(x.shape);
                   const int64_t planes = int64_t(x.shape.n) * x.shape.c;
#pragma omp parallel for schedule(static)
                   for (int64_t nc = 0; nc < planes; ++nc) {
                     const T* g = gy.ptr() + nc * int64_t(ho) * wo;
                     T* gp = gx.ptr() + nc * x.shape.hw();
                     if (kind == PoolKind::Max) {
                       const int32_t* am = argmax->data() + nc * int64_t(ho) * wo;
                       for (int64_t i = 0; i < int64_t(ho) * wo; ++i)
                         gp[am[i]] += g[i];
                     } else {
                       for (int oy = 0; oy < ho; ++oy)
                         for (int ox = 0; ox < wo; ++ox) {
                           const T gv = g[int64_t(oy) * wo + ox] * inv;
                           for (int ky = 0; ky < s; ++ky)
                             for (int kx = 0; kx < s; ++kx)
                               gp[int64_t(oy * s + ky) * x.shape.w + ox * s + kx] += gv;
                         }
                     }
                   }
                   t.accumulate(x.id, gx);
                 });
  }
  return y;
}

// ---------------------------------------------------------------------------
// upsample (nearest / bilinear, align-corners-false)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> upsample(const TensorT<T>& x, UpsampleMode mode, int th, int tw,
                    TapeT<T>* tape = nullptr) {
  if (th < 1 || tw < 1) throw ShapeError("upsample: target dims must be >= 1");
  TensorT<T> y(Shape{x.shape.n, x.shape.c, th, tw});
  const int h = x.shape.h, w = x.shape.w;
  const int64_t planes = int64_t(x.shape.n) * x.shape.c;

  if (mode == UpsampleMode::Nearest) {
#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < planes; ++nc) {
      const T* in = x.ptr() + nc * x.shape.hw();
      T* out = y.ptr() + nc * int64_t(th) * tw;
      for (int oy = 0; oy < th; ++oy) {
        const int iy = int(int64_t(oy) * h / th);
        for (int ox = 0; ox < tw; ++ox)
          out[int64_t(oy) * tw + ox] = in[int64_t(iy) * w + int(int64_t(ox) * w / tw)];
      }
    }
  } else {
    const double sy = double(h) / th, sx = double(w) / tw;
#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < planes; ++nc) {
      const T* in = x.ptr() + nc * x.shape.hw();
      T* out = y.ptr() + nc * int64_t(th) * tw;
      for (int oy = 0; oy < th; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        fy = std::max(0.0, std::min(fy, double(h - 1)));
        const int y0 = int(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const T wy = T(fy - y0);
        for (int ox = 0; ox < tw; ++ox) {
          double fx = (ox + 0.5) * sx - 0.5;
          fx = std::max(0.0, std::min(fx, double(w - 1)));
          const int x0 = int(fx);
          const int x1 = std::min(x0 + 1, w - 1);
          const T wx = T(fx - x0);
          const T v00 = in[int64_t(y0) * w + x0], v01 = in[int64_t(y0) * w + x1];
          const T v10 = in[int64_t(y1) * w + x0], v11 = in[int64_t(y1) * w + x1];
          out[int64_t(oy) * tw + ox] = (T(1) - wy) * ((T(1) - wx) * v00 + wx * v01) +
                                       wy * ((T(1) - wx) * v10 + wx * v11);
        }
      }
    }
  }
  check_finite(y, "upsample");

  if (tape) {
    tape->record(y, {x.id}, "upsample", [x, mode, th, tw](const TensorT<T>& gy,
                                                          TapeT<T>& t) {
      const int h = x.shape.h, w = x.shape.w;
      TensorT<T> gx(x.shape);
      const int64_t planes = int64_t(x.shape.n) * x.shape.c;
      if (mode == UpsampleMode::Nearest) {
#pragma omp parallel for schedule(static)
        for (int64_t nc = 0; nc < planes; ++nc) {
          const T* g = gy.ptr() + nc * int64_t(th) * tw;
          T* gp = gx.ptr() + nc * x.shape.hw();
          for (int oy = 0; oy < th; ++oy) {
            const int iy = int(int64_t(oy) * h / th);
            for (int ox = 0; ox < tw; ++ox)
              gp[int64_t(iy) * w + int(int64_t(ox) * w / tw)] += g[int64_t(oy) * tw + ox];
          }
        }
      } else {
        const double sy = double(h) / th, sx = double(w) / tw;
#pragma omp parallel for schedule(static)
        for (int64_t nc = 0; nc < planes; ++nc) {
          const T* g = gy.ptr() + nc * int64_t(th) * tw;
          T* gp = gx.ptr() + nc * x.shape.hw();
          for (int oy = 0; oy < th; ++oy) {
            double fy = (oy + 0.5) * sy - 0.5;
            fy = std::max(0.0, std::min(fy, double(h - 1)));
            const int y0 = int(fy);
            const int y1 = std::min(y0 + 1, h - 1);
            const T wy = T(fy - y0);
            for (int ox = 0; ox < tw; ++ox) {
              double fx = (ox + 0.5) * sx - 0.5;
              fx = std::max(0.0, std::min(fx, double(w - 1)));
              const int x0 = int(fx);
              const int x1 = std::min(x0 + 1, w - 1);
              const T wx = T(fx - x0);
              const T gv = g[int64_t(oy) * tw + ox];
              gp[int64_t(y0) * w + x0] += gv * (T(1) - wy) * (T(1) - wx);
              gp[int64_t(y0) * w + x1] += gv * (T(1) - wy) * wx;
              gp[int64_t(y1) * w + x0] += gv * wy * (T(1) - wx);
              gp[int64_t(y1) * w + x1] += gv * wy * wx;
            }
          }
        }
      }
      t.accumulate(x.id, gx);
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// batchnorm2d
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> batchnorm2d(const TensorT<T>& x, const BatchNormStateT<T>& s,
                       bool training, TapeT<T>* tape = nullptr) {
  const int c = x.shape.c;
  if (s.channels() != c)
    throw ShapeError("batchnorm2d: state has " + std::to_string(s.channels()) +
                     " channels, input has " + std::to_string(c));
  const int64_t reduce_n = int64_t(x.shape.n) * x.shape.hw();
  TensorT<T> y(x.shape);
  const int64_t hw = x.shape.hw();

  if (training) {
    if (reduce_n < 2)
      throw ValueError("batchnorm2d: degenerate batch, training mode needs "
                       "n*h*w >= 2 per channel, got " + std::to_string(reduce_n));
    auto xhat = std::make_shared<TensorT<T>>(x.shape);
    auto invstd = std::make_shared<std::vector<T>>(size_t(c));
#pragma omp parallel for schedule(static)
    for (int64_t ci = 0; ci < c; ++ci) {
      T mean = T(0);
      for (int in = 0; in < x.shape.n; ++in) {
        const T* p = x.ptr() + (int64_t(in) * c + ci) * hw;
        for (int64_t i = 0; i < hw; ++i) mean += p[i];
      }
      mean /= T(reduce_n);
      T var = T(0);
      for (int in = 0; in < x.shape.n; ++in) {
        const T* p = x.ptr() + (int64_t(in) * c + ci) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const T d = p[i] - mean;
          var += d * d;
        }
      }
      var /= T(reduce_n);
      const T istd = T(1) / std::sqrt(var + s.eps);
      (*invstd)[ci] = istd;
      const T gamma = s.gamma.ptr()[ci], beta = s.beta.ptr()[ci];
      for (int in = 0; in < x.shape.n; ++in) {
        const T* p = x.ptr() + (int64_t(in) * c + ci) * hw;
        T* xh = xhat->ptr() + (int64_t(in) * c + ci) * hw;
        T* out = y.ptr() + (int64_t(in) * c + ci) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          xh[i] = (p[i] - mean) * istd;
          out[i] = gamma * xh[i] + beta;
        }
      }
      // Running stats: unbiased variance, momentum update through the shared
      // buffer (state structs are handles, training is single-writer).
      const T unbiased = var * T(reduce_n) / T(reduce_n - 1);
      T* rm = s.running_mean.data->data();
      T* rv = s.running_var.data->data();
      rm[ci] = (T(1) - s.momentum) * rm[ci] + s.momentum * mean;
      rv[ci] = (T(1) - s.momentum) * rv[ci] + s.momentum * unbiased;
    }
    check_finite(y, "batchnorm2d");
    if (tape) {
      tape->record(y, {x.id, s.gamma.id, s.beta.id}, "batchnorm2d",
                   [x, s, xhat, invstd, reduce_n](const TensorT<T>& gy,
                                                  TapeT<T>& t) {
                     const int c = x.shape.c;
                     const int64_t hw = x.shape.hw();
                     TensorT<T> gx(x.shape);
                     TensorT<T> ggamma(s.gamma.shape);
                     TensorT<T> gbeta(s.beta.shape);
#pragma omp parallel for schedule(static)
                     for (int64_t ci = 0; ci < c; ++ci) {
                       T sum_g = T(0), sum_gx = T(0);
                       for (int in = 0; in < x.shape.n; ++in) {
                         const T* g = gy.ptr() + (int64_t(in) * c + ci) * hw;
                         const T* xh = xhat->ptr() + (int64_t(in) * c + ci) * hw;
                         for (int64_t i = 0; i < hw; ++i) {
                           sum_g += g[i];
                           sum_gx += g[i] * xh[i];
                         }
                       }
                       gbeta.ptr()[ci] = sum_g;
                       ggamma.ptr()[ci] = sum_gx;
                       const T gamma = s.gamma.ptr()[ci];
                       const T istd = (*invstd)[ci];
                       const T mg = sum_g / T(reduce_n);
                       const T mgx = sum_gx / T(reduce_n);
                       for (int in = 0; in < x.shape.n; ++in) {
                         const T* g = gy.ptr() + (int64_t(in) * c + ci) * hw;
                         const T* xh = xhat->ptr() + (int64_t(in) * c + ci) * hw;
                         T* gp = gx.ptr() + (int64_t(in) * c + ci) * hw;
                         for (int64_t i = 0; i < hw; ++i)
                           gp[i] = gamma * istd * (g[i] - mg - xh[i] * mgx);
                       }
                     }
                     t.accumulate(x.id, gx);
                     t.accumulate(s.gamma.id, ggamma);
                     t.accumulate(s.beta.id, gbeta);
                   });
    }
    return y;
  }

  // Inference: per-channel affine map from running statistics.
  for (int64_t ci = 0; ci < c; ++ci)
    if (s.running_var.ptr()[ci] <= T(0))
      throw NumericError("batchnorm2d: running_var must be strictly positive");
#pragma omp parallel for schedule(static)
  for (int64_t ci = 0; ci < c; ++ci) {
    const T rv = s.running_var.ptr()[ci];
    const T istd = T(1) / std::sqrt(rv + s.eps);
    const T gamma = s.gamma.ptr()[ci], beta = s.beta.ptr()[ci];
    const T mean = s.running_mean.ptr()[ci];
    for (int in = 0; in < x.shape.n; ++in) {
      const T* p = x.ptr() + (int64_t(in) * c + ci) * hw;
      T* out = y.ptr() + (int64_t(in) * c + ci) * hw;
      for (int64_t i = 0; i < hw; ++i) out[i] = gamma * (p[i] - mean) * istd + beta;
    }
  }
  check_finite(y, "batchnorm2d");
  if (tape) {
    tape->record(y, {x.id, s.gamma.id, s.beta.id}, "batchnorm2d-inf",
                 [x, s](const TensorT<T>& gy, TapeT<T>& t) {
                   const int c = x.shape.c;
                   const int64_t hw = x.shape.hw();
                   TensorT<T> gx(x.shape);
                   TensorT<T> ggamma(s.gamma.shape);
                   TensorT<T> gbeta(s.beta.shape);
#pragma omp parallel for schedule(static)
                   for (int64_t ci = 0; ci < c; ++ci) {
                     const T istd = T(1) / std::sqrt(s.running_var.ptr()[ci] + s.eps);
                     const T mean = s.running_mean.ptr()[ci];
                     const T gamma = s.gamma.ptr()[ci];
                     T sum_g = T(0), sum_gx = T(0);
                     for (int in = 0; in < x.shape.n; ++in) {
                       const T* g = gy.ptr() + (int64_t(in) * c + ci) * hw;
                       const T* p = x.ptr() + (int64_t(in) * c + ci) * hw;
                       T* gp = gx.ptr() + (int64_t(in) * c + ci) * hw;
                       for (int64_t i = 0; i < hw; ++i) {
                         sum_g += g[i];
                         sum_gx += g[i] * (p[i] - mean) * istd;
                         gp[i] = g[i] * gamma * istd;
                       }
                     }
                     gbeta.ptr()[ci] = sum_g;
                     ggamma.ptr()[ci] = sum_gx;
                   }
                   t.accumulate(x.id, gx);
                   t.accumulate(s.gamma.id, ggamma);
                   t.accumulate(s.beta.id, gbeta);
                 });
  }
  return y;
}

// ---------------------------------------------------------------------------
// elementwise activations
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> activation(const TensorT<T>& x, Activation kind, T slope = T(0.01),
                      TapeT<T>* tape = nullptr) {
  TensorT<T> y(x.shape);
  const T* in = x.ptr();
  T* out = y.ptr();
  const int64_t n = x.numel();
  switch (kind) {
    case Activation::LeakyRelu:
      for (int64_t i = 0; i < n; ++i) out[i] = in[i] >= T(0) ? in[i] : slope * in[i];
      break;
    case Activation::Relu:
      for (int64_t i = 0; i < n; ++i) out[i] = in[i] >= T(0) ? in[i] : T(0);
      break;
    case Activation::Sigmoid:
      for (int64_t i = 0; i < n; ++i) {
        const T v = in[i];
        out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                           : std::exp(v) / (T(1) + std::exp(v));
      }
      break;
  }
  check_finite(y, "activation");
  if (tape) {
    tape->record(y, {x.id}, "activation",
                 [x, y, kind, slope](const TensorT<T>& gy, TapeT<T>& t) {
                   TensorT<T> gx(x.shape);
                   const T* in = x.ptr();
                   const T* out = y.ptr();
                   const T* g = gy.ptr();
                   T* gp = gx.ptr();
                   const int64_t n = x.numel();
                   switch (kind) {
                     case Activation::LeakyRelu:
                       for (int64_t i = 0; i < n; ++i)
                         gp[i] = g[i] * (in[i] >= T(0) ? T(1) : slope);
                       break;
                     case Activation::Relu:
                       for (int64_t i = 0; i < n; ++i)
                         gp[i] = g[i] * (in[i] >= T(0) ? T(1) : T(0));
                       break;
                     case Activation::Sigmoid:
                       for (int64_t i = 0; i < n; ++i)
                         gp[i] = g[i] * out[i] * (T(1) - out[i]);
                       break;
                   }
                   t.accumulate(x.id, gx);
                 });
  }
  return y;
}

// ---------------------------------------------------------------------------
// concat / slice along channels
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void copy_into_channels(const TensorT<T>& src, TensorT<T>& dst, int c_offset) {
  const int64_t hw = src.shape.hw();
  for (int in = 0; in < src.shape.n; ++in)
    std::memcpy(dst.ptr() + (int64_t(in) * dst.shape.c + c_offset) * hw,
                src.ptr() + in * src.shape.chw(),
                size_t(src.shape.chw()) * sizeof(T));
}

}  // namespace detail

template <typename T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& xs,
                           ConcatStrategy strategy = ConcatStrategy::Prealloc,
                           TapeT<T>* tape = nullptr) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  int c_total = 0;
  for (const auto& x : xs) {
    if (x.shape.n != xs[0].shape.n || x.shape.h != xs[0].shape.h ||
        x.shape.w != xs[0].shape.w)
      throw ShapeError("concat_channels: spatial/batch mismatch " +
                       x.shape.str() + " vs " + xs[0].shape.str());
    c_total += x.shape.c;
  }

  TensorT<T> y;
  if (strategy == ConcatStrategy::Prealloc) {
    // Single pre-sized buffer, each input written exactly once.
    y = TensorT<T>(Shape{xs[0].shape.n, c_total, xs[0].shape.h, xs[0].shape.w});
    int off = 0;
    for (const auto& x : xs) {
      detail::copy_into_channels(x, y, off);
      off += x.shape.c;
    }
  } else {
    // Naive: repeated pairwise concatenation, re-copying the accumulated
    // prefix at every step (the pattern the prealloc path avoids).
    y = xs[0].clone();
    for (size_t i = 1; i < xs.size(); ++i) {
      TensorT<T> next(Shape{y.shape.n, y.shape.c + xs[i].shape.c, y.shape.h,
                            y.shape.w});
      detail::copy_into_channels(y, next, 0);
      detail::copy_into_channels(xs[i], next, y.shape.c);
      y = next;
    }
  }

  if (tape) {
    std::vector<int64_t> ids;
    for (const auto& x : xs) ids.push_back(x.id);
    tape->record(y, ids, "concat_channels",
                 [xs](const TensorT<T>& gy, TapeT<T>& t) {
                   const int64_t hw = gy.shape.hw();
                   int off = 0;
                   for (const auto& x : xs) {
                     TensorT<T> gx(x.shape);
                     for (int in = 0; in < x.shape.n; ++in)
                       std::memcpy(gx.ptr() + in * x.shape.chw(),
                                   gy.ptr() + (int64_t(in) * gy.shape.c + off) * hw,
                                   size_t(x.shape.chw()) * sizeof(T));
                     t.accumulate(x.id, gx);
                     off += x.shape.c;
                   }
                 });
  }
  return y;
}

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& x, int c0, int c1,
                          TapeT<T>* tape = nullptr) {
  if (c0 < 0 || c1 > x.shape.c || c0 >= c1)
    throw ShapeError("slice_channels: invalid range [" + std::to_string(c0) +
                     "," + std::to_string(c1) + ") for c=" +
                     std::to_string(x.shape.c));
  TensorT<T> y(Shape{x.shape.n, c1 - c0, x.shape.h, x.shape.w});
  const int64_t hw = x.shape.hw();
  for (int in = 0; in < x.shape.n; ++in)
    std::memcpy(y.ptr() + in * y.shape.chw(),
                x.ptr() + (int64_t(in) * x.shape.c + c0) * hw,
                size_t(y.shape.chw()) * sizeof(T));
  if (tape) {
    tape->record(y, {x.id}, "slice_channels",
                 [x, c0](const TensorT<T>& gy, TapeT<T>& t) {
                   TensorT<T> gx(x.shape);
                   const int64_t hw = x.shape.hw();
                   for (int in = 0; in < x.shape.n; ++in)
                     std::memcpy(gx.ptr() + (int64_t(in) * x.shape.c + c0) * hw,
                                 gy.ptr() + in * gy.shape.chw(),
                                 size_t(gy.shape.chw()) * sizeof(T));
                   t.accumulate(x.id, gx);
                 });
  }
  return y;
}

// ---------------------------------------------------------------------------
// global average pool / linear / channel gating
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x, TapeT<T>* tape = nullptr) {
  TensorT<T> y(Shape{x.shape.n, x.shape.c, 1, 1});
  const int64_t hw = x.shape.hw();
  const T inv = T(1) / T(hw);
  for (int in = 0; in < x.shape.n; ++in)
    for (int ic = 0; ic < x.shape.c; ++ic) {
      const T* p = x.ptr() + (int64_t(in) * x.shape.c + ic) * hw;
      T acc = T(0);
      for (int64_t i = 0; i < hw; ++i) acc += p[i];
      y.ptr()[int64_t(in) * x.shape.c + ic] = acc * inv;
    }
  check_finite(y, "global_avg_pool");
  if (tape) {
    tape->record(y, {x.id}, "global_avg_pool",
                 [x, inv](const TensorT<T>& gy, TapeT<T>& t) {
                   TensorT<T> gx(x.shape);
                   const int64_t hw = x.shape.hw();
                   for (int in = 0; in < x.shape.n; ++in)
                     for (int ic = 0; ic < x.shape.c; ++ic) {
                       const T gv = gy.ptr()[int64_t(in) * x.shape.c + ic] * inv;
                       T* gp = gx.ptr() + (int64_t(in) * x.shape.c + ic) * hw;
                       for (int64_t i = 0; i < hw; ++i) gp[i] = gv;
                     }
                   t.accumulate(x.id, gx);
                 });
  }
  return y;
}

// x: (n, c_in, 1, 1) -> (n, c_out, 1, 1)
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const LinearParamsT<T>& p,
                  TapeT<T>* tape = nullptr) {
  const int c_in = p.weight.shape.c, c_out = p.weight.shape.n;
  if (x.shape.c != c_in || x.shape.h != 1 || x.shape.w != 1)
    throw ShapeError("linear: expected (n," + std::to_string(c_in) +
                     ",1,1), got " + x.shape.str());
  TensorT<T> y(Shape{x.shape.n, c_out, 1, 1});
  for (int in = 0; in < x.shape.n; ++in) {
    const T* xv = x.ptr() + int64_t(in) * c_in;
    T* out = y.ptr() + int64_t(in) * c_out;
    for (int o = 0; o < c_out; ++o) {
      const T* wr = p.weight.ptr() + int64_t(o) * c_in;
      T acc = p.bias.ptr()[o];
      for (int i = 0; i < c_in; ++i) acc += wr[i] * xv[i];
      out[o] = acc;
    }
  }
  check_finite(y, "linear");
  if (tape) {
    tape->record(y, {x.id, p.weight.id, p.bias.id}, "linear",
                 [x, p, c_in, c_out](const TensorT<T>& gy, TapeT<T>& t) {
                   TensorT<T> gx(x.shape);
                   TensorT<T> gw(p.weight.shape);
                   TensorT<T> gb(p.bias.shape);
                   for (int in = 0; in < x.shape.n; ++in) {
                     const T* g = gy.ptr() + int64_t(in) * c_out;
                     const T* xv = x.ptr() + int64_t(in) * c_in;
                     T* gxp = gx.ptr() + int64_t(in) * c_in;
                     for (int o = 0; o < c_out; ++o) {
                       const T gv = g[o];
                       gb.ptr()[o] += gv;
                       const T* wr = p.weight.ptr() + int64_t(o) * c_in;
                       T* gwr = gw.ptr() + int64_t(o) * c_in;
                       for (int i = 0; i < c_in; ++i) {
                         gwr[i] += gv * xv[i];
                         gxp[i] += gv * wr[i];
                       }
                     }
                   }
                   t.accumulate(x.id, gx);
                   t.accumulate(p.weight.id, gw);
                   t.accumulate(p.bias.id, gb);
                 });
  }
  return y;
}

// y[n,c,h,w] = x[n,c,h,w] * gate[n,c,1,1]
template <typename T>
TensorT<T> mul_channel(const TensorT<T>& x, const TensorT<T>& gate,
                       TapeT<T>* tape = nullptr) {
  if (gate.shape.n != x.shape.n || gate.shape.c != x.shape.c ||
      gate.shape.h != 1 || gate.shape.w != 1)
    throw ShapeError("mul_channel: gate must be (n,c,1,1), got " +
                     gate.shape.str() + " for x " + x.shape.str());
  TensorT<T> y(x.shape);
  const int64_t hw = x.shape.hw();
  for (int in = 0; in < x.shape.n; ++in)
    for (int ic = 0; ic < x.shape.c; ++ic) {
      const T gv = gate.ptr()[int64_t(in) * x.shape.c + ic];
      const T* p = x.ptr() + (int64_t(in) * x.shape.c + ic) * hw;
      T* out = y.ptr() + (int64_t(in) * x.shape.c + ic) * hw;
      for (int64_t i = 0; i < hw; ++i) out[i] = p[i] * gv;
    }
  check_finite(y, "mul_channel");
  if (tape) {
    tape->record(y, {x.id, gate.id}, "mul_channel",
                 [x, gate](const TensorT<T>& gy, TapeT<T>& t) {
                   TensorT<T> gx(x.shape);
                   TensorT<T> gg(gate.shape);
                   const int64_t hw = x.shape.hw();
                   for (int in = 0; in < x.shape.n; ++in)
                     for (int ic = 0; ic < x.shape.c; ++ic) {
                       const int64_t base = (int64_t(in) * x.shape.c + ic) * hw;
                       const T gv = gate.ptr()[int64_t(in) * x.shape.c + ic];
                       T acc = T(0);
                       for (int64_t i = 0; i < hw; ++i) {
                         gx.ptr()[base + i] = gy.ptr()[base + i] * gv;
                         acc += gy.ptr()[base + i] * x.ptr()[base + i];
                       }
                       gg.ptr()[int64_t(in) * x.shape.c + ic] = acc;
                     }
                   t.accumulate(x.id, gx);
                   t.accumulate(gate.id, gg);
                 });
  }
  return y;
}

// ---------------------------------------------------------------------------
// elementwise arithmetic and reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b, TapeT<T>* tape = nullptr) {
  if (a.shape != b.shape)
    throw ShapeError("add: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
  TensorT<T> y(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* out = y.ptr();
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] + pb[i];
  check_finite(y, "add");
  if (tape) {
    tape->record(y, {a.id, b.id}, "add", [a, b](const TensorT<T>& gy, TapeT<T>& t) {
      t.accumulate(a.id, gy);
      t.accumulate(b.id, gy);
    });
  }
  return y;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b, TapeT<T>* tape = nullptr) {
  if (a.shape != b.shape)
    throw ShapeError("mul: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
  TensorT<T> y(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) y.ptr()[i] = a.ptr()[i] * b.ptr()[i];
  check_finite(y, "mul");
  if (tape) {
    tape->record(y, {a.id, b.id}, "mul", [a, b](const TensorT<T>& gy, TapeT<T>& t) {
      TensorT<T> ga(a.shape), gb(b.shape);
      for (int64_t i = 0; i < a.numel(); ++i) {
        ga.ptr()[i] = gy.ptr()[i] * b.ptr()[i];
        gb.ptr()[i] = gy.ptr()[i] * a.ptr()[i];
      }
      t.accumulate(a.id, ga);
      t.accumulate(b.id, gb);
    });
  }
  return y;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T alpha, TapeT<T>* tape = nullptr) {
  TensorT<T> y(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) y.ptr()[i] = x.ptr()[i] * alpha;
  check_finite(y, "scale");
  if (tape) {
    tape->record(y, {x.id}, "scale", [x, alpha](const TensorT<T>& gy, TapeT<T>& t) {
      TensorT<T> gx(x.shape);
      for (int64_t i = 0; i < x.numel(); ++i) gx.ptr()[i] = gy.ptr()[i] * alpha;
      t.accumulate(x.id, gx);
    });
  }
  return y;
}

template <typename T>
TensorT<T> sum(const TensorT<T>& x, TapeT<T>* tape = nullptr) {
  TensorT<T> y(Shape{1, 1, 1, 1});
  T acc = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.ptr()[i];
  y.ptr()[0] = acc;
  check_finite(y, "sum");
  if (tape) {
    tape->record(y, {x.id}, "sum", [x](const TensorT<T>& gy, TapeT<T>& t) {
      t.accumulate(x.id, TensorT<T>::full(x.shape, gy.ptr()[0]));
    });
  }
  return y;
}

}  // namespace accunet
