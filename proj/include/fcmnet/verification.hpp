#pragma once

// Independent oracles: a direct-loop convolution with no code shared with the
// im2col path, central-difference gradient checking, an impulse-response
// receptive-field probe, and a straight-line recomputation of the FCM block.

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fcmnet/accounting.hpp"
#include "fcmnet/backbone.hpp"

namespace fcmnet {

/// Direct 7-nested-loop cross-correlation with explicit zero-padding reads.
template <class T>
TensorPtr<T> naive_conv2d(const TensorPtr<T>& x, const ConvSpec& spec, const TensorPtr<T>& weight,
                          const TensorPtr<T>& bias = nullptr) {
  spec.validate();
  if (weight->shape != spec.weight_shape()) {
    throw ShapeError("naive_conv2d: weight shape " + weight->shape.str() + " does not match expected " +
                     spec.weight_shape().str());
  }
  if (spec.has_bias != static_cast<bool>(bias)) throw ConfigError("naive_conv2d: bias presence mismatch");
  const Shape4 os = spec.out_shape(x->shape);
  auto out = make_tensor<T>(os);
  const int64_t cig = spec.in_channels / spec.groups;
  const int64_t cog = spec.out_channels / spec.groups;
  for (int64_t n = 0; n < os.n; ++n) {
    for (int64_t oc = 0; oc < spec.out_channels; ++oc) {
      const int64_t g = oc / cog;
      for (int64_t ho = 0; ho < os.h; ++ho) {
        for (int64_t wo = 0; wo < os.w; ++wo) {
          T acc = bias ? bias->data[static_cast<size_t>(oc)] : T(0);
          for (int64_t ic = 0; ic < cig; ++ic) {
            for (int64_t r = 0; r < spec.kh; ++r) {
              for (int64_t s = 0; s < spec.kw; ++s) {
                const int64_t ih = ho * spec.sh - spec.ph + r;
                const int64_t iw = wo * spec.sw - spec.pw + s;
                if (ih < 0 || ih >= x->shape.h || iw < 0 || iw >= x->shape.w) continue;
                acc += x->at(n, g * cig + ic, ih, iw) * weight->at(oc, ic, r, s);
              }
            }
          }
          out->at(n, oc, ho, wo) = acc;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-5;
  // 0 checks every coordinate; otherwise a deterministic sample per tensor
  int64_t max_coords_per_tensor = 0;
  uint64_t sample_seed = 7;
};

template <class T>
struct GradCheckResult {
  bool ok = true;
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::string message;

  std::string summary() const {
    std::ostringstream os;
    if (!message.empty()) os << message << "; ";
    os << "max rel err " << max_rel_err;
    if (!worst_param.empty()) {
      os << " at " << worst_param << "[" << worst_index << "] (analytic " << analytic << ", numeric " << numeric
         << ")";
    }
    return os.str();
  }
};

// Central differences per coordinate against the tape gradient. f must be
// deterministic and must build its computation from the given leaves; it
// receives a tape on the analytic pass and nullptr on the perturbed passes.
template <class T>
GradCheckResult<T> gradcheck(const std::function<TensorPtr<T>(Tape<T>*)>& f,
                             const std::vector<std::pair<std::string, TensorPtr<T>>>& leaves,
                             const GradCheckOptions& opt = {}) {
  GradCheckResult<T> result;
  for (auto& [name, leaf] : leaves) {
    leaf->ensure_grad();
    leaf->zero_grad();
  }
  Tape<T> tape;
  auto root = f(&tape);
  if (!root || root->shape != Shape4{1, 1, 1, 1}) throw UsageError("gradcheck: f must produce a scalar");
  if (!std::isfinite(static_cast<double>(root->data[0]))) {
    result.ok = false;
    result.message = "non-finite loss value";
    return result;
  }
  tape.backward(root);

  std::vector<std::vector<T>> analytic;
  for (auto& [name, leaf] : leaves) analytic.push_back(leaf->grad);

  const T h = static_cast<T>(opt.step);
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& [name, leaf] = leaves[li];
    std::vector<int64_t> coords;
    const int64_t n = leaf->numel();
    if (opt.max_coords_per_tensor > 0 && n > opt.max_coords_per_tensor) {
      Rng rng(mix_seed(opt.sample_seed, li));
      std::vector<int64_t> all(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
      for (int64_t i = 0; i < opt.max_coords_per_tensor; ++i) {
        const int64_t j = i + rng.index(n - i);
        std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
        coords.push_back(all[static_cast<size_t>(i)]);
      }
    } else {
      for (int64_t i = 0; i < n; ++i) coords.push_back(i);
    }
    for (int64_t idx : coords) {
      const T saved = leaf->data[static_cast<size_t>(idx)];
      leaf->data[static_cast<size_t>(idx)] = saved + h;
      const double plus = static_cast<double>(f(nullptr)->data[0]);
      leaf->data[static_cast<size_t>(idx)] = saved - h;
      const double minus = static_cast<double>(f(nullptr)->data[0]);
      leaf->data[static_cast<size_t>(idx)] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        result.ok = false;
        result.message = "non-finite value while perturbing " + name;
        return result;
      }
      const double numeric = (plus - minus) / (2.0 * static_cast<double>(h));
      const double exact = static_cast<double>(analytic[li][static_cast<size_t>(idx)]);
      const double denom = std::max({std::fabs(numeric), std::fabs(exact), 1e-8});
      const double rel = std::fabs(numeric - exact) / denom;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = name;
        result.worst_index = idx;
        result.analytic = exact;
        result.numeric = numeric;
      }
    }
  }
  result.ok = result.max_rel_err < opt.tolerance;
  return result;
}

// ---------------------------------------------------------------------------
// Receptive-field probe

struct RfProbeResult {
  int64_t height = 0;
  int64_t width = 0;
};

// Feeds a centered impulse through a linear map and measures the bounding box
// of responses above 1e-12. The map must be linear: zero input must give zero
// output and doubling the impulse must double the response.
template <class T>
RfProbeResult receptive_field_probe(const std::function<TensorPtr<T>(const TensorPtr<T>&)>& block,
                                    Shape4 input_shape) {
  const double support_tol = 1e-12;
  auto zero = make_tensor<T>(input_shape);
  auto zero_out = block(zero);
  for (T v : zero_out->data) {
    if (std::fabs(static_cast<double>(v)) > support_tol) {
      throw UsageError("receptive_field_probe: block is not linear (zero input gives nonzero output)");
    }
  }
  auto impulse = make_tensor<T>(input_shape);
  const int64_t ch = input_shape.h / 2;
  const int64_t cw = input_shape.w / 2;
  for (int64_t c = 0; c < input_shape.c; ++c) impulse->at(0, c, ch, cw) = T(1);
  auto response = block(impulse);

  auto doubled = make_tensor<T>(input_shape);
  for (int64_t c = 0; c < input_shape.c; ++c) doubled->at(0, c, ch, cw) = T(2);
  auto response2 = block(doubled);
  double scale_err = 0.0, scale_ref = 0.0;
  for (size_t i = 0; i < response->data.size(); ++i) {
    scale_err = std::max(scale_err, std::fabs(static_cast<double>(response2->data[i] - T(2) * response->data[i])));
    scale_ref = std::max(scale_ref, std::fabs(static_cast<double>(response->data[i])));
  }
  if (scale_err > 1e-9 * std::max(scale_ref, 1.0)) {
    throw UsageError("receptive_field_probe: block is not linear (homogeneity check failed)");
  }

  const Shape4 os = response->shape;
  int64_t rmin = os.h, rmax = -1, cmin = os.w, cmax = -1;
  for (int64_t c = 0; c < os.c; ++c) {
    for (int64_t h = 0; h < os.h; ++h) {
      for (int64_t w = 0; w < os.w; ++w) {
        if (std::fabs(static_cast<double>(response->at(0, c, h, w))) > support_tol) {
          rmin = std::min(rmin, h);
          rmax = std::max(rmax, h);
          cmin = std::min(cmin, w);
          cmax = std::max(cmax, w);
        }
      }
    }
  }
  RfProbeResult r;
  r.height = rmax >= rmin ? rmax - rmin + 1 : 0;
  r.width = cmax >= cmin ? cmax - cmin + 1 : 0;
  return r;
}

/// Closed-form stride-1 receptive field of a kernel stack: 1 + sum(k_i - 1).
inline int64_t stacked_receptive_field(const std::vector<int64_t>& kernels) {
  int64_t rf = 1;
  for (int64_t k : kernels) rf += k - 1;
  return rf;
}

// ---------------------------------------------------------------------------
// Straight-line FCM recomputation (no block abstraction)

template <class T>
TensorPtr<T> fcm_forward_reference(const TensorPtr<T>& x, const FcmConfig& cfg, FcmParams<T>& p, BnMode mode) {
  auto [x1, x2] = split_channels<T>(nullptr, x, cfg.alpha);

  auto xc = conv2d<T>(nullptr, x1, p.branch3x3.spec, p.branch3x3.weight);
  xc = batch_norm<T>(nullptr, xc, p.branch3x3.bn, mode);
  xc = silu<T>(nullptr, xc);

  auto xs = conv2d<T>(nullptr, x2, p.branch_pw.spec, p.branch_pw.weight);
  xs = batch_norm<T>(nullptr, xs, p.branch_pw.bn, mode);
  xs = silu<T>(nullptr, xs);

  TensorPtr<T> w1, w2;
  if (cfg.enable_channel_mapping) {
    auto d = conv2d<T>(nullptr, xc, ConvSpec::depthwise(cfg.channels, 3), p.channel_dw_weight);
    w1 = sigmoid<T>(nullptr, global_avg_pool<T>(nullptr, d));
  }
  if (cfg.enable_spatial_mapping) {
    auto a = conv2d<T>(nullptr, xs, ConvSpec::pointwise(cfg.channels, 1), p.spatial_weight);
    w2 = sigmoid<T>(nullptr, batch_norm<T>(nullptr, a, p.spatial_bn, mode));
  }
  auto left = w2 ? eltwise_mul_broadcast<T>(nullptr, xc, w2) : xc;
  auto right = w1 ? eltwise_mul_broadcast<T>(nullptr, xs, w1) : xs;
  return eltwise_add<T>(nullptr, left, right);
}

// Quadratic readout used by the check suites. The gain is a constant chosen
// from the unperturbed output so the loss magnitude stays near 1e-4; that
// keeps the finite-difference noise floor (~eps*|f|/2h) below
// tolerance*guard even for coordinates whose true gradient is exactly zero.
template <class T>
T readout_gain(const TensorPtr<T>& base_output) {
  double q = 0;
  for (T v : base_output->data) q += static_cast<double>(v) * static_cast<double>(v);
  q /= static_cast<double>(base_output->numel());
  return static_cast<T>(1e-4 / (1.0 + q));
}

template <class T>
TensorPtr<T> gradcheck_readout(Tape<T>* tape, const TensorPtr<T>& y, T gain) {
  return scale(tape, reduce_mean(tape, eltwise_mul(tape, y, y)), gain);
}

// ---------------------------------------------------------------------------
// Named check suites (shared by the CLI verifier and the acceptance runner)

struct NamedCheck {
  std::string name;
  bool ok = false;
  double err = 0.0;
  std::string detail;
};

namespace detail {

inline double max_abs_diff(const Tensor4<double>& a, const Tensor4<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace detail

// Randomized oracle matrix: optimized conv2d against the naive loops, plus
// GAP and broadcast-multiply against explicit summation/expansion.
inline std::vector<NamedCheck> conv_oracle_matrix(uint64_t seed) {
  std::vector<NamedCheck> checks;
  Rng rng(seed);
  const int64_t batches[] = {1, 2};
  const int64_t channels[] = {1, 3, 8};
  const int64_t sizes[] = {5, 8, 13};
  const int64_t kernels[] = {1, 3, 5};
  const int64_t strides[] = {1, 2};

  NamedCheck conv_check;
  conv_check.name = "conv2d vs naive_conv2d oracle";
  conv_check.ok = true;
  int64_t cases = 0;
  for (int64_t n : batches) {
    for (int64_t c : channels) {
      for (int64_t hw : sizes) {
        for (int64_t k : kernels) {
          if (k > hw) continue;
          for (int64_t s : strides) {
            for (int64_t g : {int64_t(1), c}) {
              for (int64_t pad : {int64_t(0), k / 2}) {
                if (c % g != 0) continue;
                const int64_t cout = (g == 1) ? c + 1 : c;  // grouped case needs cout % g == 0
                ConvSpec spec = ConvSpec::grouped(c, cout, k, s, g);
                spec.ph = spec.pw = pad;
                spec.has_bias = (cases % 3 == 0);
                auto x = make_tensor<double>(Shape4{n, c, hw, hw});
                uniform_fill(*x, -1.0, 1.0, rng);
                auto w = make_tensor<double>(spec.weight_shape());
                uniform_fill(*w, -1.0, 1.0, rng);
                TensorPtr<double> b;
                if (spec.has_bias) {
                  b = make_tensor<double>(Shape4{1, cout, 1, 1});
                  uniform_fill(*b, -1.0, 1.0, rng);
                }
                auto fast = conv2d<double>(nullptr, x, spec, w, b);
                auto slow = naive_conv2d<double>(x, spec, w, b);
                const double err = detail::max_abs_diff(*fast, *slow);
                ++cases;
                if (err > conv_check.err) conv_check.err = err;
                if (err > 1e-12) {
                  conv_check.ok = false;
                  conv_check.detail = "case n=" + std::to_string(n) + " c=" + std::to_string(c) + " hw=" +
                                      std::to_string(hw) + " k=" + std::to_string(k) + " s=" + std::to_string(s) +
                                      " g=" + std::to_string(g);
                }
              }
            }
          }
        }
      }
    }
  }
  conv_check.detail = std::to_string(cases) + " cases, max abs err " + std::to_string(conv_check.err) +
                      (conv_check.detail.empty() ? "" : ("; first failure " + conv_check.detail));
  checks.push_back(conv_check);

  NamedCheck gap_check;
  gap_check.name = "global_avg_pool vs naive summation";
  gap_check.ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    auto x = make_tensor<double>(Shape4{2, 3, 7, 9});
    uniform_fill(*x, -1.0, 1.0, rng);
    auto fast = global_avg_pool<double>(nullptr, x);
    for (int64_t n = 0; n < 2; ++n) {
      for (int64_t c = 0; c < 3; ++c) {
        double sum = 0.0;
        for (int64_t h = 0; h < 7; ++h)
          for (int64_t w = 0; w < 9; ++w) sum += x->at(n, c, h, w);
        const double err = std::fabs(fast->at(n, c, 0, 0) - sum / 63.0);
        gap_check.err = std::max(gap_check.err, err);
        if (err > 1e-12) gap_check.ok = false;
      }
    }
  }
  checks.push_back(gap_check);

  NamedCheck bc_check;
  bc_check.name = "broadcast multiply vs explicit expansion";
  bc_check.ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    auto x = make_tensor<double>(Shape4{2, 4, 5, 6});
    uniform_fill(*x, -1.0, 1.0, rng);
    const bool channel_form = trial % 2 == 0;
    auto w = make_tensor<double>(channel_form ? Shape4{trial % 4 == 0 ? 2 : 1, 4, 1, 1}
                                              : Shape4{trial % 4 == 1 ? 2 : 1, 1, 5, 6});
    uniform_fill(*w, -1.0, 1.0, rng);
    auto fast = eltwise_mul_broadcast<double>(nullptr, x, w);
    auto expanded = make_tensor<double>(x->shape);
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t c = 0; c < 4; ++c)
        for (int64_t h = 0; h < 5; ++h)
          for (int64_t ww = 0; ww < 6; ++ww) {
            const int64_t wn = w->shape.n == 1 ? 0 : n;
            expanded->at(n, c, h, ww) = channel_form ? w->at(wn, c, 0, 0) : w->at(wn, 0, h, ww);
          }
    auto slow = eltwise_mul<double>(nullptr, x, expanded);
    const double err = detail::max_abs_diff(*fast, *slow);
    bc_check.err = std::max(bc_check.err, err);
    if (err > 1e-15) bc_check.ok = false;
  }
  checks.push_back(bc_check);
  return checks;
}

// Gradient checks for every differentiable op in isolation.
inline std::vector<NamedCheck> op_gradcheck_suite(uint64_t seed) {
  std::vector<NamedCheck> checks;
  Rng rng(seed);
  auto run = [&checks](const std::string& name, const GradCheckResult<double>& r) {
    NamedCheck c;
    c.name = "gradcheck: " + name;
    c.ok = r.ok;
    c.err = r.max_rel_err;
    c.detail = r.summary();
    checks.push_back(c);
  };

  {
    auto x = make_tensor<double>(Shape4{2, 4, 5, 5});
    uniform_fill(*x, -1.0, 1.0, rng);
    ConvSpec spec = ConvSpec::standard(4, 3, 3, 2, 1);
    spec.has_bias = true;
    auto w = make_tensor<double>(spec.weight_shape());
    uniform_fill(*w, -1.0, 1.0, rng);
    auto b = make_tensor<double>(Shape4{1, 3, 1, 1});
    uniform_fill(*b, -1.0, 1.0, rng);
    const double gain = readout_gain(conv2d<double>(nullptr, x, spec, w, b));
    run("conv2d (stride 2, bias)", gradcheck<double>(
        [&](Tape<double>* t) { return gradcheck_readout(t, conv2d(t, x, spec, w, b), gain); },
        {{"x", x}, {"w", w}, {"b", b}}));
  }
  {
    auto x = make_tensor<double>(Shape4{1, 4, 4, 4});
    uniform_fill(*x, -1.0, 1.0, rng);
    const ConvSpec spec = ConvSpec::depthwise(4, 3);
    auto w = make_tensor<double>(spec.weight_shape());
    uniform_fill(*w, -1.0, 1.0, rng);
    const double gain = readout_gain(conv2d<double>(nullptr, x, spec, w));
    run("conv2d (depthwise)", gradcheck<double>(
        [&](Tape<double>* t) { return gradcheck_readout(t, conv2d(t, x, spec, w), gain); }, {{"x", x}, {"w", w}}));
  }
  {
    auto x = make_tensor<double>(Shape4{2, 3, 4, 4});
    uniform_fill(*x, -1.0, 1.0, rng);
    auto bn = BnParams<double>::identity(3);
    uniform_fill(*bn.gamma, 0.5, 1.5, rng);
    uniform_fill(*bn.beta, -0.5, 0.5, rng);
    const double gain_t = readout_gain(batch_norm<double>(nullptr, x, bn, BnMode::Train));
    run("batch_norm (train)", gradcheck<double>(
        [&](Tape<double>* t) { return gradcheck_readout(t, batch_norm(t, x, bn, BnMode::Train), gain_t); },
        {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}}));
    const double gain_i = readout_gain(batch_norm<double>(nullptr, x, bn, BnMode::Inference));
    run("batch_norm (inference)", gradcheck<double>(
        [&](Tape<double>* t) { return gradcheck_readout(t, batch_norm(t, x, bn, BnMode::Inference), gain_i); },
        {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}}));
  }
  {
    auto x = make_tensor<double>(Shape4{1, 2, 3, 3});
    uniform_fill(*x, -2.0, 2.0, rng);
    const double gs = readout_gain(sigmoid<double>(nullptr, x));
    run("sigmoid", gradcheck<double>(
        [&](Tape<double>* t) { return gradcheck_readout(t, sigmoid(t, x), gs); }, {{"x", x}}));
    const double gz = readout_gain(silu<double>(nullptr, x));
    run("silu", gradcheck<double>(
        [&](Tape<double>* t) { return gradcheck_readout(t, silu(t, x), gz); }, {{"x", x}}));
    const double gg = readout_gain(global_avg_pool<double>(nullptr, x));
    run("global_avg_pool", gradcheck<double>(
        [&](Tape<double>* t) { return gradcheck_readout(t, global_avg_pool(t, x), gg); },
        {{"x", x}}));
  }
  {
    auto x = make_tensor<double>(Shape4{1, 6, 3, 3});
    uniform_fill(*x, -1.0, 1.0, rng);
    const double gain = readout_gain(x);
    run("split_channels + concat_channels", gradcheck<double>(
        [&](Tape<double>* t) {
          auto [a, b] = split_channels(t, x, 0.5);
          return gradcheck_readout(t, concat_channels(t, {b, a}), gain);
        },
        {{"x", x}}));
  }
  {
    auto x = make_tensor<double>(Shape4{2, 3, 4, 4});
    auto wc = make_tensor<double>(Shape4{1, 3, 1, 1});
    auto ws = make_tensor<double>(Shape4{2, 1, 4, 4});
    uniform_fill(*x, -1.0, 1.0, rng);
    uniform_fill(*wc, -1.0, 1.0, rng);
    uniform_fill(*ws, -1.0, 1.0, rng);
    const double gc = readout_gain(eltwise_mul_broadcast<double>(nullptr, x, wc));
    run("eltwise_mul_broadcast (channel)", gradcheck<double>(
        [&](Tape<double>* t) { return gradcheck_readout(t, eltwise_mul_broadcast(t, x, wc), gc); },
        {{"x", x}, {"w", wc}}));
    const double gsp = readout_gain(eltwise_mul_broadcast<double>(nullptr, x, ws));
    run("eltwise_mul_broadcast (spatial)", gradcheck<double>(
        [&](Tape<double>* t) { return gradcheck_readout(t, eltwise_mul_broadcast(t, x, ws), gsp); },
        {{"x", x}, {"w", ws}}));
  }
  {
    auto x = make_tensor<double>(Shape4{1, 2, 2, 2});
    auto y = make_tensor<double>(Shape4{1, 2, 2, 2});
    uniform_fill(*x, -1.0, 1.0, rng);
    uniform_fill(*y, -1.0, 1.0, rng);
    run("eltwise add/sub/mul + reductions", gradcheck<double>(
        [&](Tape<double>* t) {
          auto a = eltwise_add(t, x, y);
          auto s = eltwise_sub(t, x, y);
          auto m = eltwise_mul(t, a, s);
          return eltwise_add(t, reduce_mean(t, m), scale(t, reduce_sum(t, m), 0.25));
        },
        {{"x", x}, {"y", y}}));
  }
  return checks;
}

// Gradient checks for the assembled blocks.
inline std::vector<NamedCheck> block_gradcheck_suite(uint64_t seed) {
  std::vector<NamedCheck> checks;
  auto run = [&checks](const std::string& name, const GradCheckResult<double>& r) {
    NamedCheck c;
    c.name = "gradcheck: " + name;
    c.ok = r.ok;
    c.err = r.max_rel_err;
    c.detail = r.summary();
    checks.push_back(c);
  };

  {
    Rng rng(mix_seed(seed, 1));
    FcmConfig cfg;
    cfg.channels = 8;
    cfg.alpha = 0.5;
    auto params = make_fcm_params<double>(cfg, rng);
    auto x = make_tensor<double>(Shape4{1, 8, 6, 6});
    uniform_fill(*x, -1.0, 1.0, rng);
    std::vector<std::pair<std::string, TensorPtr<double>>> leaves{{"x", x}};
    visit_fcm(cfg, params, "fcm", [&](const std::string& n, const TensorPtr<double>& t) { leaves.emplace_back(n, t); });
    const double gain = readout_gain(fcm_forward<double>(nullptr, x, cfg, params, BnMode::Train));
    run("fcm_forward (C=8, alpha=0.5)", gradcheck<double>(
        [&](Tape<double>* t) { return gradcheck_readout(t, fcm_forward(t, x, cfg, params, BnMode::Train), gain); },
        leaves));
  }
  {
    Rng rng(mix_seed(seed, 2));
    MkpConfig cfg;
    cfg.channels = 4;
    cfg.kernel_sizes = {3, 5, 7};
    auto params = make_mkp_params<double>(cfg, rng);
    auto x = make_tensor<double>(Shape4{1, 4, 9, 9});
    uniform_fill(*x, -1.0, 1.0, rng);
    std::vector<std::pair<std::string, TensorPtr<double>>> leaves{{"x", x}};
    visit_mkp(cfg, params, "mkp", [&](const std::string& n, const TensorPtr<double>& t) { leaves.emplace_back(n, t); });
    const double gain = readout_gain(mkp_forward<double>(nullptr, x, cfg, params));
    run("mkp_forward (3,5,7)", gradcheck<double>(
        [&](Tape<double>* t) { return gradcheck_readout(t, mkp_forward(t, x, cfg, params), gain); }, leaves));
  }
  {
    Rng rng(mix_seed(seed, 3));
    DownsampleSpec spec;
    spec.in_channels = 4;
    auto params = make_downsample_params<double>(spec, rng);
    auto x = make_tensor<double>(Shape4{2, 4, 6, 6});
    uniform_fill(*x, -1.0, 1.0, rng);
    std::vector<std::pair<std::string, TensorPtr<double>>> leaves{{"x", x}};
    visit_downsample(params, "down",
                     [&](const std::string& n, const TensorPtr<double>& t) { leaves.emplace_back(n, t); });
    const double gain = readout_gain(decoupled_downsample_forward<double>(nullptr, x, spec, params, BnMode::Train));
    run("decoupled_downsample_forward", gradcheck<double>(
        [&](Tape<double>* t) {
          return gradcheck_readout(t, decoupled_downsample_forward(t, x, spec, params, BnMode::Train), gain);
        },
        leaves));
  }
  return checks;
}

// End-to-end gradient check on the tiny backbone (channels 4/8/8/8, four
// 3x16x16 samples; the deepest maps are 1x1 so a batch of four keeps every
// batch-norm nondegenerate). Coordinates are deterministically subsampled.
inline NamedCheck backbone_gradcheck(uint64_t seed, int64_t coords_per_tensor = 24) {
  Rng rng(mix_seed(seed, 4));
  auto model = build_backbone<double>(tiny_test_config(), seed);
  auto x = make_tensor<double>(Shape4{4, 3, 16, 16});
  uniform_fill(*x, -1.0, 1.0, rng);
  std::vector<std::pair<std::string, TensorPtr<double>>> leaves{{"input", x}};
  visit_backbone_params<double>(model, [&](const std::string& n, const TensorPtr<double>& t) {
    leaves.emplace_back(n, t);
  });
  GradCheckOptions opt;
  opt.max_coords_per_tensor = coords_per_tensor;
  auto readout = [&](Tape<double>* t, double gain) {
    auto exports = backbone_forward(t, model, x, BnMode::Train);
    TensorPtr<double> loss;
    for (auto& e : exports) {
      auto part = reduce_mean(t, eltwise_mul(t, e.map, e.map));
      loss = loss ? eltwise_add(t, loss, part) : part;
    }
    return scale(t, loss, gain);
  };
  const double base = readout(nullptr, 1.0)->data[0];
  const double gain = 1e-4 / (1.0 + base);
  auto result = gradcheck<double>([&](Tape<double>* t) { return readout(t, gain); }, leaves, opt);
  NamedCheck c;
  c.name = "gradcheck: end-to-end tiny backbone";
  c.ok = result.ok;
  c.err = result.max_rel_err;
  c.detail = result.summary();
  return c;
}

}  // namespace fcmnet
