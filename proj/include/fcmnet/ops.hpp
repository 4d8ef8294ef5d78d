#pragma once

// The convolution family and the elementwise/reduction ops everything else is
// wired from. Every op takes an optional tape; pass nullptr for a pure
// forward evaluation. Semantics: cross-correlation (no kernel flip), zero
// padding, restriction within groups. All loops run in a fixed order so
// results are reproducible bit for bit.

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "fcmnet/tape.hpp"
#include "fcmnet/tensor.hpp"

namespace fcmnet {

// Test fixture: when nonzero, conv2d backward perturbs the first weight
// gradient by this amount. Used to prove the gradient checker catches a
// corrupted backward; never set outside verification runs.
namespace faults {
inline double conv2d_backward_perturb = 0.0;
}

struct ConvSpec {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kh = 1, kw = 1;
  int64_t sh = 1, sw = 1;
  int64_t ph = 0, pw = 0;
  int64_t groups = 1;
  bool has_bias = false;

  void validate() const {
    if (in_channels < 1 || out_channels < 1) {
      throw ConfigError("ConvSpec: channel counts must be positive, got in=" + std::to_string(in_channels) +
                        " out=" + std::to_string(out_channels));
    }
    if (kh < 1 || kw < 1 || sh < 1 || sw < 1 || ph < 0 || pw < 0) {
      throw ConfigError("ConvSpec: invalid kernel/stride/padding");
    }
    if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0) {
      throw ConfigError("ConvSpec: groups=" + std::to_string(groups) + " must divide in_channels=" +
                        std::to_string(in_channels) + " and out_channels=" + std::to_string(out_channels));
    }
  }

  bool is_depthwise() const { return groups == in_channels && in_channels == out_channels; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && groups == 1; }

  Shape4 weight_shape() const { return Shape4{out_channels, in_channels / groups, kh, kw}; }

  int64_t weight_count() const { return out_channels * (in_channels / groups) * kh * kw; }
  int64_t param_count() const { return weight_count() + (has_bias ? out_channels : 0); }

  Shape4 out_shape(const Shape4& in) const {
    if (in.c != in_channels) {
      throw ShapeError("conv2d: input channel count " + std::to_string(in.c) + " does not match spec.in_channels " +
                       std::to_string(in_channels));
    }
    const int64_t oh = (in.h + 2 * ph - kh) / sh + 1;
    const int64_t ow = (in.w + 2 * pw - kw) / sw + 1;
    if (in.h + 2 * ph < kh || in.w + 2 * pw < kw || oh < 1 || ow < 1) {
      throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                       " does not fit padded input " + in.str());
    }
    return Shape4{in.n, out_channels, oh, ow};
  }

  static ConvSpec standard(int64_t cin, int64_t cout, int64_t k, int64_t stride = 1, int64_t pad = -1) {
    ConvSpec s;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kh = s.kw = k;
    s.sh = s.sw = stride;
    s.ph = s.pw = (pad < 0 ? k / 2 : pad);
    return s;
  }
  static ConvSpec depthwise(int64_t c, int64_t k, int64_t stride = 1) {
    ConvSpec s = standard(c, c, k, stride);
    s.groups = c;
    return s;
  }
  static ConvSpec pointwise(int64_t cin, int64_t cout) { return standard(cin, cout, 1, 1, 0); }
  static ConvSpec grouped(int64_t cin, int64_t cout, int64_t k, int64_t stride, int64_t groups) {
    ConvSpec s = standard(cin, cout, k, stride);
    s.groups = groups;
    return s;
  }
};

namespace detail {

// Patch matrix for one (sample, group): K = (cin/g)*kh*kw rows, one column
// per output position. Zero padding is materialized here.
template <class T>
void im2col(const Tensor4<T>& x, const ConvSpec& sp, int64_t n, int64_t g, const Shape4& os, std::vector<T>& cols) {
  const int64_t cig = sp.in_channels / sp.groups;
  const int64_t positions = os.h * os.w;
  for (int64_t ic = 0; ic < cig; ++ic) {
    const int64_t xc = g * cig + ic;
    for (int64_t r = 0; r < sp.kh; ++r) {
      for (int64_t s = 0; s < sp.kw; ++s) {
        const int64_t k = (ic * sp.kh + r) * sp.kw + s;
        T* col = cols.data() + k * positions;
        for (int64_t ho = 0; ho < os.h; ++ho) {
          const int64_t ih = ho * sp.sh - sp.ph + r;
          const bool row_ok = ih >= 0 && ih < x.shape.h;
          for (int64_t wo = 0; wo < os.w; ++wo) {
            const int64_t iw = wo * sp.sw - sp.pw + s;
            col[ho * os.w + wo] = (row_ok && iw >= 0 && iw < x.shape.w) ? x.at(n, xc, ih, iw) : T(0);
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Grouped 2-D cross-correlation. weights: (out_channels, in_channels/groups, kh, kw);
/// bias: (1, out_channels, 1, 1), present iff spec.has_bias.
template <class T>
TensorPtr<T> conv2d(Tape<T>* tape, const TensorPtr<T>& x, const ConvSpec& spec, const TensorPtr<T>& weight,
                    const TensorPtr<T>& bias = nullptr) {
  spec.validate();
  if (weight->shape != spec.weight_shape()) {
    throw ShapeError("conv2d: weight shape " + weight->shape.str() + " does not match expected " +
                     spec.weight_shape().str());
  }
  if (spec.has_bias != static_cast<bool>(bias)) {
    throw ConfigError(std::string("conv2d: bias ") + (bias ? "given" : "missing") + " but spec.has_bias is " +
                      (spec.has_bias ? "true" : "false"));
  }
  if (bias && bias->shape != Shape4{1, spec.out_channels, 1, 1}) {
    throw ShapeError("conv2d: bias shape " + bias->shape.str() + " must be [1," + std::to_string(spec.out_channels) +
                     ",1,1]");
  }
  const Shape4 os = spec.out_shape(x->shape);
  auto out = make_tensor<T>(os);

  const int64_t cig = spec.in_channels / spec.groups;
  const int64_t cog = spec.out_channels / spec.groups;
  const int64_t K = cig * spec.kh * spec.kw;
  const int64_t positions = os.h * os.w;
  std::vector<T> cols(static_cast<size_t>(K * positions));

  for (int64_t n = 0; n < os.n; ++n) {
    for (int64_t g = 0; g < spec.groups; ++g) {
      detail::im2col(*x, spec, n, g, os, cols);
      for (int64_t oc = 0; oc < cog; ++oc) {
        const int64_t oc_full = g * cog + oc;
        const T* wrow = weight->data.data() + oc_full * K;
        T* orow = out->data.data() + out->offset(n, oc_full, 0, 0);
        for (int64_t k = 0; k < K; ++k) {
          const T wv = wrow[k];
          const T* col = cols.data() + k * positions;
          for (int64_t p = 0; p < positions; ++p) orow[p] += wv * col[p];
        }
        if (bias) {
          const T bv = bias->data[static_cast<size_t>(oc_full)];
          for (int64_t p = 0; p < positions; ++p) orow[p] += bv;
        }
      }
    }
  }

  if (tape) {
    ConvSpec sp = spec;
    tape->record(out, [x, weight, bias, out, sp]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      weight->ensure_grad();
      if (bias) bias->ensure_grad();
      const Shape4& os = out->shape;
      const int64_t cig = sp.in_channels / sp.groups;
      const int64_t cog = sp.out_channels / sp.groups;
      for (int64_t n = 0; n < os.n; ++n) {
        for (int64_t g = 0; g < sp.groups; ++g) {
          for (int64_t oc = 0; oc < cog; ++oc) {
            const int64_t oc_full = g * cog + oc;
            for (int64_t ho = 0; ho < os.h; ++ho) {
              for (int64_t wo = 0; wo < os.w; ++wo) {
                const T go = out->grad[static_cast<size_t>(out->offset(n, oc_full, ho, wo))];
                if (go == T(0)) continue;
                if (bias) bias->grad[static_cast<size_t>(oc_full)] += go;
                for (int64_t ic = 0; ic < cig; ++ic) {
                  const int64_t xc = g * cig + ic;
                  for (int64_t r = 0; r < sp.kh; ++r) {
                    const int64_t ih = ho * sp.sh - sp.ph + r;
                    if (ih < 0 || ih >= x->shape.h) continue;
                    for (int64_t s = 0; s < sp.kw; ++s) {
                      const int64_t iw = wo * sp.sw - sp.pw + s;
                      if (iw < 0 || iw >= x->shape.w) continue;
                      const int64_t widx = ((oc_full * cig + ic) * sp.kh + r) * sp.kw + s;
                      weight->grad[static_cast<size_t>(widx)] += go * x->at(n, xc, ih, iw);
                      x->grad[static_cast<size_t>(x->offset(n, xc, ih, iw))] +=
                          go * weight->data[static_cast<size_t>(widx)];
                    }
                  }
                }
              }
            }
          }
        }
      }
      if (faults::conv2d_backward_perturb != 0.0 && !weight->grad.empty()) {
        weight->grad[0] += static_cast<T>(faults::conv2d_backward_perturb);
      }
    });
  }
  return out;
}

enum class BnMode { Train, Inference };

// Per-channel scale/shift plus running statistics. gamma/beta are learnable
// (1,C,1,1) tensors; running stats are plain state.
template <class T>
struct BnParams {
  TensorPtr<T> gamma, beta;
  TensorPtr<T> running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.03);

  int64_t channels() const { return gamma ? gamma->shape.c : 0; }

  void validate() const {
    if (!gamma || !beta || !running_mean || !running_var) throw ConfigError("BnParams: missing tensors");
    const int64_t c = gamma->shape.c;
    const Shape4 want{1, c, 1, 1};
    if (gamma->shape != want || beta->shape != want || running_mean->shape != want || running_var->shape != want) {
      throw ConfigError("BnParams: all per-channel vectors must be shaped [1," + std::to_string(c) + ",1,1]");
    }
    for (T v : running_var->data) {
      if (v < T(0)) throw ConfigError("BnParams: running variance must be >= 0");
    }
    if (!(eps > T(0))) throw ConfigError("BnParams: eps must be > 0");
  }

  static BnParams identity(int64_t c, T eps = T(1e-5)) {
    BnParams p;
    p.gamma = make_tensor<T>(Shape4{1, c, 1, 1}, T(1));
    p.beta = make_tensor<T>(Shape4{1, c, 1, 1}, T(0));
    p.running_mean = make_tensor<T>(Shape4{1, c, 1, 1}, T(0));
    p.running_var = make_tensor<T>(Shape4{1, c, 1, 1}, T(1));
    p.eps = eps;
    return p;
  }

  // Inference mode becomes an exact identity: var = 1 - eps so the
  // normalizer 1/sqrt(var + eps) is exactly 1.
  static BnParams exact_identity(int64_t c, T eps = T(1e-5)) {
    BnParams p = identity(c, eps);
    for (auto& v : p.running_var->data) v = T(1) - eps;
    return p;
  }
};

/// Train mode normalizes by batch statistics (optionally folding them into the
/// running stats); inference mode normalizes by the running stats.
template <class T>
TensorPtr<T> batch_norm(Tape<T>* tape, const TensorPtr<T>& x, BnParams<T>& p, BnMode mode,
                        bool update_running = false) {
  p.validate();
  const int64_t C = p.channels();
  if (x->shape.c != C) {
    throw ConfigError("batch_norm: input has " + std::to_string(x->shape.c) + " channels, params have " +
                      std::to_string(C));
  }
  const Shape4 s = x->shape;
  const int64_t m = s.n * s.h * s.w;  // elements per channel
  auto out = make_tensor<T>(s);

  auto gamma = p.gamma;
  auto beta = p.beta;

  if (mode == BnMode::Train) {
    std::vector<T> mean(static_cast<size_t>(C), T(0));
    std::vector<T> inv_std(static_cast<size_t>(C), T(0));
    for (int64_t c = 0; c < C; ++c) {
      T sum = T(0);
      for (int64_t n = 0; n < s.n; ++n) {
        const T* px = x->data.data() + x->offset(n, c, 0, 0);
        for (int64_t i = 0; i < s.h * s.w; ++i) sum += px[i];
      }
      const T mu = sum / static_cast<T>(m);
      T var = T(0);
      for (int64_t n = 0; n < s.n; ++n) {
        const T* px = x->data.data() + x->offset(n, c, 0, 0);
        for (int64_t i = 0; i < s.h * s.w; ++i) {
          const T d = px[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);
      mean[static_cast<size_t>(c)] = mu;
      inv_std[static_cast<size_t>(c)] = T(1) / std::sqrt(var + p.eps);
      if (update_running) {
        // biased variance normalizes, the unbiased estimate feeds the
        // running average (matches common framework behavior)
        const T unbiased = m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
        p.running_mean->data[static_cast<size_t>(c)] =
            (T(1) - p.momentum) * p.running_mean->data[static_cast<size_t>(c)] + p.momentum * mu;
        p.running_var->data[static_cast<size_t>(c)] =
            (T(1) - p.momentum) * p.running_var->data[static_cast<size_t>(c)] + p.momentum * unbiased;
      }
      const T g = gamma->data[static_cast<size_t>(c)];
      const T b = beta->data[static_cast<size_t>(c)];
      for (int64_t n = 0; n < s.n; ++n) {
        const T* px = x->data.data() + x->offset(n, c, 0, 0);
        T* py = out->data.data() + out->offset(n, c, 0, 0);
        for (int64_t i = 0; i < s.h * s.w; ++i) {
          py[i] = g * (px[i] - mu) * inv_std[static_cast<size_t>(c)] + b;
        }
      }
    }
    if (tape) {
      tape->record(out, [x, out, gamma, beta, mean, inv_std, m]() {
        if (!out->has_grad()) return;
        x->ensure_grad();
        gamma->ensure_grad();
        beta->ensure_grad();
        const Shape4& s = x->shape;
        for (int64_t c = 0; c < s.c; ++c) {
          const T mu = mean[static_cast<size_t>(c)];
          const T istd = inv_std[static_cast<size_t>(c)];
          const T gm = gamma->data[static_cast<size_t>(c)];
          T sum_gy = T(0), sum_gy_xhat = T(0);
          for (int64_t n = 0; n < s.n; ++n) {
            const T* px = x->data.data() + x->offset(n, c, 0, 0);
            const T* pg = out->grad.data() + out->offset(n, c, 0, 0);
            for (int64_t i = 0; i < s.h * s.w; ++i) {
              const T xhat = (px[i] - mu) * istd;
              sum_gy += pg[i];
              sum_gy_xhat += pg[i] * xhat;
            }
          }
          gamma->grad[static_cast<size_t>(c)] += sum_gy_xhat;
          beta->grad[static_cast<size_t>(c)] += sum_gy;
          const T inv_m = T(1) / static_cast<T>(m);
          for (int64_t n = 0; n < s.n; ++n) {
            const T* px = x->data.data() + x->offset(n, c, 0, 0);
            const T* pg = out->grad.data() + out->offset(n, c, 0, 0);
            T* pdx = x->grad.data() + x->offset(n, c, 0, 0);
            for (int64_t i = 0; i < s.h * s.w; ++i) {
              const T xhat = (px[i] - mu) * istd;
              pdx[i] += gm * istd * (pg[i] - sum_gy * inv_m - xhat * sum_gy_xhat * inv_m);
            }
          }
        }
      });
    }
  } else {
    std::vector<T> scale(static_cast<size_t>(C)), shift(static_cast<size_t>(C)), rinv(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c) {
      rinv[static_cast<size_t>(c)] = T(1) / std::sqrt(p.running_var->data[static_cast<size_t>(c)] + p.eps);
      scale[static_cast<size_t>(c)] = gamma->data[static_cast<size_t>(c)] * rinv[static_cast<size_t>(c)];
      shift[static_cast<size_t>(c)] = beta->data[static_cast<size_t>(c)] -
                                      scale[static_cast<size_t>(c)] * p.running_mean->data[static_cast<size_t>(c)];
    }
    for (int64_t n = 0; n < s.n; ++n) {
      for (int64_t c = 0; c < C; ++c) {
        const T* px = x->data.data() + x->offset(n, c, 0, 0);
        T* py = out->data.data() + out->offset(n, c, 0, 0);
        for (int64_t i = 0; i < s.h * s.w; ++i) py[i] = scale[static_cast<size_t>(c)] * px[i] + shift[static_cast<size_t>(c)];
      }
    }
    if (tape) {
      auto rmean = p.running_mean;
      tape->record(out, [x, out, gamma, beta, rmean, rinv]() {
        if (!out->has_grad()) return;
        x->ensure_grad();
        gamma->ensure_grad();
        beta->ensure_grad();
        const Shape4& s = x->shape;
        for (int64_t c = 0; c < s.c; ++c) {
          const T ri = rinv[static_cast<size_t>(c)];
          const T gm = gamma->data[static_cast<size_t>(c)];
          const T mu = rmean->data[static_cast<size_t>(c)];
          T sum_gy = T(0), sum_gy_xhat = T(0);
          for (int64_t n = 0; n < s.n; ++n) {
            const T* px = x->data.data() + x->offset(n, c, 0, 0);
            const T* pg = out->grad.data() + out->offset(n, c, 0, 0);
            T* pdx = x->grad.data() + x->offset(n, c, 0, 0);
            for (int64_t i = 0; i < s.h * s.w; ++i) {
              sum_gy += pg[i];
              sum_gy_xhat += pg[i] * (px[i] - mu) * ri;
              pdx[i] += pg[i] * gm * ri;
            }
          }
          gamma->grad[static_cast<size_t>(c)] += sum_gy_xhat;
          beta->grad[static_cast<size_t>(c)] += sum_gy;
        }
      });
    }
  }
  return out;
}

namespace detail {

// Clamped into the open interval so sigmoid(v) is strictly inside (0,1) for
// every finite v even where the exact value rounds to 0 or 1 in fp.
template <class T>
T sigmoid_scalar(T v) {
  T s = T(1) / (T(1) + std::exp(-v));
  const T hi = T(1) - std::numeric_limits<T>::epsilon();
  const T lo = std::numeric_limits<T>::min();
  if (s > hi) s = hi;
  if (s < lo) s = lo;
  return s;
}

}  // namespace detail

template <class T>
TensorPtr<T> sigmoid(Tape<T>* tape, const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = detail::sigmoid_scalar(x->data[i]);
  if (tape) {
    tape->record(out, [x, out]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (size_t i = 0; i < x->data.size(); ++i) {
        const T s = out->data[i];
        x->grad[i] += out->grad[i] * s * (T(1) - s);
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> silu(Tape<T>* tape, const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = x->data[i] * detail::sigmoid_scalar(x->data[i]);
  if (tape) {
    tape->record(out, [x, out]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (size_t i = 0; i < x->data.size(); ++i) {
        const T s = detail::sigmoid_scalar(x->data[i]);
        x->grad[i] += out->grad[i] * s * (T(1) + x->data[i] * (T(1) - s));
      }
    });
  }
  return out;
}

/// Spatial mean per channel -> (n, c, 1, 1).
template <class T>
TensorPtr<T> global_avg_pool(Tape<T>* tape, const TensorPtr<T>& x) {
  const Shape4 s = x->shape;
  auto out = make_tensor<T>(Shape4{s.n, s.c, 1, 1});
  const T inv = T(1) / static_cast<T>(s.h * s.w);
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T* px = x->data.data() + x->offset(n, c, 0, 0);
      T sum = T(0);
      for (int64_t i = 0; i < s.h * s.w; ++i) sum += px[i];
      out->at(n, c, 0, 0) = sum * inv;
    }
  }
  if (tape) {
    tape->record(out, [x, out, inv]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      const Shape4& s = x->shape;
      for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t c = 0; c < s.c; ++c) {
          const T g = out->grad[static_cast<size_t>(out->offset(n, c, 0, 0))] * inv;
          T* pdx = x->grad.data() + x->offset(n, c, 0, 0);
          for (int64_t i = 0; i < s.h * s.w; ++i) pdx[i] += g;
        }
      }
    });
  }
  return out;
}

inline int64_t split_lead_channels(int64_t channels, double ratio) {
  return static_cast<int64_t>(std::llround(ratio * static_cast<double>(channels)));
}

/// Partition channels: leading round(ratio*c) channels to part one, the rest
/// to part two. Concatenating the parts reproduces the input exactly.
template <class T>
std::pair<TensorPtr<T>, TensorPtr<T>> split_channels(Tape<T>* tape, const TensorPtr<T>& x, double ratio) {
  const Shape4 s = x->shape;
  const int64_t c1 = split_lead_channels(s.c, ratio);
  if (c1 < 1 || s.c - c1 < 1) {
    throw ConfigError("split_channels: alpha=" + std::to_string(ratio) + " on " + std::to_string(s.c) +
                      " channels leaves an empty part");
  }
  auto a = make_tensor<T>(Shape4{s.n, c1, s.h, s.w});
  auto b = make_tensor<T>(Shape4{s.n, s.c - c1, s.h, s.w});
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const T* px = x->data.data() + x->offset(n, c, 0, 0);
      T* py = c < c1 ? a->data.data() + a->offset(n, c, 0, 0) : b->data.data() + b->offset(n, c - c1, 0, 0);
      for (int64_t i = 0; i < s.h * s.w; ++i) py[i] = px[i];
    }
  }
  if (tape) {
    tape->record(a, [x, a]() {
      if (!a->has_grad()) return;
      x->ensure_grad();
      const Shape4& s = a->shape;
      for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c) {
          const T* pg = a->grad.data() + a->offset(n, c, 0, 0);
          T* pdx = x->grad.data() + x->offset(n, c, 0, 0);
          for (int64_t i = 0; i < s.h * s.w; ++i) pdx[i] += pg[i];
        }
    });
    tape->record(b, [x, b, c1]() {
      if (!b->has_grad()) return;
      x->ensure_grad();
      const Shape4& s = b->shape;
      for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c) {
          const T* pg = b->grad.data() + b->offset(n, c, 0, 0);
          T* pdx = x->grad.data() + x->offset(n, c1 + c, 0, 0);
          for (int64_t i = 0; i < s.h * s.w; ++i) pdx[i] += pg[i];
        }
    });
  }
  return {a, b};
}

template <class T>
TensorPtr<T> concat_channels(Tape<T>* tape, const std::vector<TensorPtr<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: empty input list");
  const Shape4 first = xs[0]->shape;
  int64_t total_c = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const Shape4& s = xs[i]->shape;
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: input " + std::to_string(i) + " shape " + s.str() +
                       " does not match leading shape " + first.str() + " in n/h/w");
    }
    total_c += s.c;
  }
  auto out = make_tensor<T>(Shape4{first.n, total_c, first.h, first.w});
  int64_t base = 0;
  for (const auto& x : xs) {
    const Shape4& s = x->shape;
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t c = 0; c < s.c; ++c) {
        const T* px = x->data.data() + x->offset(n, c, 0, 0);
        T* py = out->data.data() + out->offset(n, base + c, 0, 0);
        for (int64_t i = 0; i < s.h * s.w; ++i) py[i] = px[i];
      }
    base += s.c;
  }
  if (tape) {
    auto inputs = xs;
    tape->record(out, [inputs, out]() {
      if (!out->has_grad()) return;
      int64_t base = 0;
      for (const auto& x : inputs) {
        x->ensure_grad();
        const Shape4& s = x->shape;
        for (int64_t n = 0; n < s.n; ++n)
          for (int64_t c = 0; c < s.c; ++c) {
            const T* pg = out->grad.data() + out->offset(n, base + c, 0, 0);
            T* pdx = x->grad.data() + x->offset(n, c, 0, 0);
            for (int64_t i = 0; i < s.h * s.w; ++i) pdx[i] += pg[i];
          }
        base += s.c;
      }
    });
  }
  return out;
}

namespace detail {

template <class T>
void check_same_shape(const TensorPtr<T>& x, const TensorPtr<T>& y, const char* who) {
  if (x->shape != y->shape) {
    throw ShapeError(std::string(who) + ": shapes " + x->shape.str() + " and " + y->shape.str() + " differ");
  }
}

}  // namespace detail

template <class T>
TensorPtr<T> eltwise_add(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& y) {
  detail::check_same_shape(x, y, "eltwise_add");
  auto out = make_tensor<T>(x->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = x->data[i] + y->data[i];
  if (tape) {
    tape->record(out, [x, y, out]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      y->ensure_grad();
      for (size_t i = 0; i < out->data.size(); ++i) {
        x->grad[i] += out->grad[i];
        y->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> eltwise_sub(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& y) {
  detail::check_same_shape(x, y, "eltwise_sub");
  auto out = make_tensor<T>(x->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = x->data[i] - y->data[i];
  if (tape) {
    tape->record(out, [x, y, out]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      y->ensure_grad();
      for (size_t i = 0; i < out->data.size(); ++i) {
        x->grad[i] += out->grad[i];
        y->grad[i] -= out->grad[i];
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> eltwise_mul(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& y) {
  detail::check_same_shape(x, y, "eltwise_mul");
  auto out = make_tensor<T>(x->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = x->data[i] * y->data[i];
  if (tape) {
    tape->record(out, [x, y, out]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      y->ensure_grad();
      for (size_t i = 0; i < out->data.size(); ++i) {
        x->grad[i] += out->grad[i] * y->data[i];
        y->grad[i] += out->grad[i] * x->data[i];
      }
    });
  }
  return out;
}

/// Broadcast multiply: w shaped (n|1, c, 1, 1) applies per-channel weights,
/// (n|1, 1, h, w) applies per-position weights.
template <class T>
TensorPtr<T> eltwise_mul_broadcast(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w) {
  const Shape4 xs = x->shape;
  const Shape4 ws = w->shape;
  const bool batch_ok = ws.n == xs.n || ws.n == 1;
  const bool channel_form = batch_ok && ws.c == xs.c && ws.h == 1 && ws.w == 1;
  const bool spatial_form = batch_ok && ws.c == 1 && ws.h == xs.h && ws.w == xs.w;
  if (!channel_form && !spatial_form) {
    throw ShapeError("eltwise_mul_broadcast: weight shape " + ws.str() + " is not broadcastable against " + xs.str());
  }
  auto out = make_tensor<T>(xs);
  for (int64_t n = 0; n < xs.n; ++n) {
    const int64_t wn = ws.n == 1 ? 0 : n;
    for (int64_t c = 0; c < xs.c; ++c) {
      const T* px = x->data.data() + x->offset(n, c, 0, 0);
      T* py = out->data.data() + out->offset(n, c, 0, 0);
      if (channel_form) {
        const T wv = w->at(wn, c, 0, 0);
        for (int64_t i = 0; i < xs.h * xs.w; ++i) py[i] = px[i] * wv;
      } else {
        const T* pw = w->data.data() + w->offset(wn, 0, 0, 0);
        for (int64_t i = 0; i < xs.h * xs.w; ++i) py[i] = px[i] * pw[i];
      }
    }
  }
  if (tape) {
    tape->record(out, [x, w, out, channel_form]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      w->ensure_grad();
      const Shape4& xs = x->shape;
      const Shape4& ws = w->shape;
      for (int64_t n = 0; n < xs.n; ++n) {
        const int64_t wn = ws.n == 1 ? 0 : n;
        for (int64_t c = 0; c < xs.c; ++c) {
          const T* px = x->data.data() + x->offset(n, c, 0, 0);
          const T* pg = out->grad.data() + out->offset(n, c, 0, 0);
          T* pdx = x->grad.data() + x->offset(n, c, 0, 0);
          if (channel_form) {
            const T wv = w->at(wn, c, 0, 0);
            T acc = T(0);
            for (int64_t i = 0; i < xs.h * xs.w; ++i) {
              pdx[i] += pg[i] * wv;
              acc += pg[i] * px[i];
            }
            w->grad[static_cast<size_t>(w->offset(wn, c, 0, 0))] += acc;
          } else {
            const T* pw = w->data.data() + w->offset(wn, 0, 0, 0);
            T* pdw = w->grad.data() + w->offset(wn, 0, 0, 0);
            for (int64_t i = 0; i < xs.h * xs.w; ++i) {
              pdx[i] += pg[i] * pw[i];
              pdw[i] += pg[i] * px[i];
            }
          }
        }
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> reduce_sum(Tape<T>* tape, const TensorPtr<T>& x) {
  T sum = T(0);
  for (T v : x->data) sum += v;
  auto out = make_scalar<T>(sum);
  if (tape) {
    tape->record(out, [x, out]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      const T g = out->grad[0];
      for (auto& v : x->grad) v += g;
    });
  }
  return out;
}

template <class T>
TensorPtr<T> reduce_mean(Tape<T>* tape, const TensorPtr<T>& x) {
  T sum = T(0);
  for (T v : x->data) sum += v;
  const T inv = T(1) / static_cast<T>(x->numel());
  auto out = make_scalar<T>(sum * inv);
  if (tape) {
    tape->record(out, [x, out, inv]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      const T g = out->grad[0] * inv;
      for (auto& v : x->grad) v += g;
    });
  }
  return out;
}

template <class T>
TensorPtr<T> scale(Tape<T>* tape, const TensorPtr<T>& x, T factor) {
  auto out = make_tensor<T>(x->shape);
  for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = x->data[i] * factor;
  if (tape) {
    tape->record(out, [x, out, factor]() {
      if (!out->has_grad()) return;
      x->ensure_grad();
      for (size_t i = 0; i < x->data.size(); ++i) x->grad[i] += out->grad[i] * factor;
    });
  }
  return out;
}

}  // namespace fcmnet
