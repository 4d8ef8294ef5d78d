#pragma once

// The composable blocks: the conv-BN-SiLU cell, the feature complementary
// mapping block (FCM), the multi-kernel perception unit (MKP) and the
// decoupled downsample. Blocks are plain parameter structs plus free forward
// functions so ablation variants can recombine them freely.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fcmnet/ops.hpp"
#include "fcmnet/rng.hpp"

namespace fcmnet {

enum class Activation { Silu, None };

template <class T>
struct ConvBnActParams {
  ConvSpec spec;
  TensorPtr<T> weight;
  TensorPtr<T> bias;  // usually null: convs feeding BN carry no bias
  BnParams<T> bn;
  Activation act = Activation::Silu;
};

template <class T>
ConvBnActParams<T> make_conv_bn_act(const ConvSpec& spec, Rng& rng) {
  spec.validate();
  ConvBnActParams<T> p;
  p.spec = spec;
  p.weight = make_tensor<T>(spec.weight_shape());
  const int64_t fan_in = (spec.in_channels / spec.groups) * spec.kh * spec.kw;
  kaiming_uniform_fill(*p.weight, fan_in, rng);
  if (spec.has_bias) p.bias = make_tensor<T>(Shape4{1, spec.out_channels, 1, 1});
  p.bn = BnParams<T>::identity(spec.out_channels);
  return p;
}

template <class T>
TensorPtr<T> conv_bn_act(Tape<T>* tape, const TensorPtr<T>& x, ConvBnActParams<T>& p, BnMode mode,
                         bool update_running = false) {
  auto y = conv2d(tape, x, p.spec, p.weight, p.bias);
  y = batch_norm(tape, y, p.bn, mode, update_running);
  if (p.act == Activation::Silu) y = silu(tape, y);
  return y;
}

// ---------------------------------------------------------------------------
// FCM

struct FcmConfig {
  int64_t channels = 0;
  double alpha = 0.5;
  bool enable_channel_mapping = true;
  bool enable_spatial_mapping = true;

  int64_t lead_channels() const { return split_lead_channels(channels, alpha); }
  int64_t rest_channels() const { return channels - lead_channels(); }

  void validate() const {
    if (channels < 2) throw ConfigError("FcmConfig: channels must be >= 2, got " + std::to_string(channels));
    const int64_t lead = lead_channels();
    if (lead < 1 || channels - lead < 1) {
      throw ConfigError("FcmConfig: alpha=" + std::to_string(alpha) + " on " + std::to_string(channels) +
                        " channels leaves an empty split part");
    }
  }
};

// Parameters of one FCM block. The interaction sub-layers exist only while
// the corresponding mapping is enabled, so disabled variants genuinely carry
// fewer parameters.
template <class T>
struct FcmParams {
  ConvBnActParams<T> branch3x3;  // lead -> C, 3x3 s1 p1
  ConvBnActParams<T> branch_pw;  // rest -> C, 1x1
  TensorPtr<T> channel_dw_weight;  // (C,1,3,3) depthwise, null when channel mapping off
  TensorPtr<T> spatial_weight;     // (1,C,1,1) -> one channel, null when spatial mapping off
  BnParams<T> spatial_bn;          // single channel
};

template <class T>
FcmParams<T> make_fcm_params(const FcmConfig& cfg, Rng& rng) {
  cfg.validate();
  FcmParams<T> p;
  p.branch3x3 = make_conv_bn_act<T>(ConvSpec::standard(cfg.lead_channels(), cfg.channels, 3), rng);
  p.branch_pw = make_conv_bn_act<T>(ConvSpec::pointwise(cfg.rest_channels(), cfg.channels), rng);
  if (cfg.enable_channel_mapping) {
    const ConvSpec dw = ConvSpec::depthwise(cfg.channels, 3);
    p.channel_dw_weight = make_tensor<T>(dw.weight_shape());
    kaiming_uniform_fill(*p.channel_dw_weight, dw.kh * dw.kw, rng);
  }
  if (cfg.enable_spatial_mapping) {
    const ConvSpec sp = ConvSpec::pointwise(cfg.channels, 1);
    p.spatial_weight = make_tensor<T>(sp.weight_shape());
    kaiming_uniform_fill(*p.spatial_weight, cfg.channels, rng);
    p.spatial_bn = BnParams<T>::identity(1);
  }
  return p;
}

template <class T>
struct FcmDetail {
  TensorPtr<T> out;
  TensorPtr<T> xc, xs;      // branch outputs
  TensorPtr<T> w1, w2;      // channel / spatial weights, null when disabled
};

// Split by alpha, transform each part, then cross-apply the channel weights
// w1 = sigmoid(GAP(dw3x3(xc))) onto xs and the spatial weights
// w2 = sigmoid(BN(1x1(xs))) onto xc, merging by elementwise addition.
template <class T>
FcmDetail<T> fcm_forward_detail(Tape<T>* tape, const TensorPtr<T>& x, const FcmConfig& cfg, FcmParams<T>& p,
                                BnMode mode, bool update_running = false) {
  cfg.validate();
  if (x->shape.c != cfg.channels) {
    throw ConfigError("fcm_forward: input has " + std::to_string(x->shape.c) + " channels, config expects " +
                      std::to_string(cfg.channels));
  }
  FcmDetail<T> d;
  auto [x1, x2] = split_channels(tape, x, cfg.alpha);
  d.xc = conv_bn_act(tape, x1, p.branch3x3, mode, update_running);
  d.xs = conv_bn_act(tape, x2, p.branch_pw, mode, update_running);

  if (cfg.enable_channel_mapping) {
    auto interacted = conv2d(tape, d.xc, ConvSpec::depthwise(cfg.channels, 3), p.channel_dw_weight);
    d.w1 = sigmoid(tape, global_avg_pool(tape, interacted));
  }
  if (cfg.enable_spatial_mapping) {
    auto aggregated = conv2d(tape, d.xs, ConvSpec::pointwise(cfg.channels, 1), p.spatial_weight);
    d.w2 = sigmoid(tape, batch_norm(tape, aggregated, p.spatial_bn, mode, update_running));
  }

  auto left = d.w2 ? eltwise_mul_broadcast(tape, d.xc, d.w2) : d.xc;
  auto right = d.w1 ? eltwise_mul_broadcast(tape, d.xs, d.w1) : d.xs;
  d.out = eltwise_add(tape, left, right);
  return d;
}

template <class T>
TensorPtr<T> fcm_forward(Tape<T>* tape, const TensorPtr<T>& x, const FcmConfig& cfg, FcmParams<T>& p, BnMode mode,
                         bool update_running = false) {
  return fcm_forward_detail(tape, x, cfg, p, mode, update_running).out;
}

// ---------------------------------------------------------------------------
// MKP

struct MkpConfig {
  int64_t channels = 0;
  std::vector<int64_t> kernel_sizes{3, 5, 7};
  Activation activation = Activation::Silu;

  void validate() const {
    if (channels < 1) throw ConfigError("MkpConfig: channels must be positive");
    if (kernel_sizes.empty()) throw ConfigError("MkpConfig: kernel size list must be nonempty");
    for (int64_t k : kernel_sizes) {
      if (k < 3 || k % 2 == 0) {
        throw ConfigError("MkpConfig: kernel sizes must be odd and >= 3, got " + std::to_string(k));
      }
    }
  }
};

template <class T>
struct MkpParams {
  std::vector<TensorPtr<T>> depthwise;  // one per kernel size
  std::vector<TensorPtr<T>> pointwise;  // one between each pair of stages
};

template <class T>
MkpParams<T> make_mkp_params(const MkpConfig& cfg, Rng& rng) {
  cfg.validate();
  MkpParams<T> p;
  for (size_t i = 0; i < cfg.kernel_sizes.size(); ++i) {
    const ConvSpec dw = ConvSpec::depthwise(cfg.channels, cfg.kernel_sizes[i]);
    auto w = make_tensor<T>(dw.weight_shape());
    kaiming_uniform_fill(*w, dw.kh * dw.kw, rng);
    p.depthwise.push_back(w);
    if (i + 1 < cfg.kernel_sizes.size()) {
      const ConvSpec pw = ConvSpec::pointwise(cfg.channels, cfg.channels);
      auto wp = make_tensor<T>(pw.weight_shape());
      kaiming_uniform_fill(*wp, cfg.channels, rng);
      p.pointwise.push_back(wp);
    }
  }
  return p;
}

// Alternating depthwise(k_i) / pointwise chain, stride 1 and same-padding
// throughout: spatial size and channel count are both preserved. This unit
// stands in for the final downsample without itself downsampling.
template <class T>
TensorPtr<T> mkp_forward(Tape<T>* tape, const TensorPtr<T>& x, const MkpConfig& cfg, MkpParams<T>& p) {
  cfg.validate();
  if (x->shape.c != cfg.channels) {
    throw ConfigError("mkp_forward: input has " + std::to_string(x->shape.c) + " channels, config expects " +
                      std::to_string(cfg.channels));
  }
  auto y = conv2d(tape, x, ConvSpec::depthwise(cfg.channels, cfg.kernel_sizes[0]), p.depthwise[0]);
  for (size_t i = 1; i < cfg.kernel_sizes.size(); ++i) {
    y = conv2d(tape, y, ConvSpec::pointwise(cfg.channels, cfg.channels), p.pointwise[i - 1]);
    if (cfg.activation == Activation::Silu) y = silu(tape, y);
    y = conv2d(tape, y, ConvSpec::depthwise(cfg.channels, cfg.kernel_sizes[i]), p.depthwise[i]);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Decoupled downsample

// 3x3 grouped conv for spatial downsampling, then a pointwise conv for
// channel expansion. Kernel 3x3 and stride 2 are fixed.
struct DownsampleSpec {
  int64_t in_channels = 0;
  int64_t out_channels = 0;  // 0 -> 2 * in_channels
  int64_t groups = 0;        // 0 -> in_channels (depthwise)

  int64_t resolved_out() const { return out_channels > 0 ? out_channels : 2 * in_channels; }
  int64_t resolved_groups() const { return groups > 0 ? groups : in_channels; }

  void validate() const {
    if (in_channels < 1) throw ConfigError("DownsampleSpec: in_channels must be positive");
    if (in_channels % resolved_groups() != 0) {
      throw ConfigError("DownsampleSpec: groups=" + std::to_string(resolved_groups()) +
                        " must divide in_channels=" + std::to_string(in_channels));
    }
  }
};

template <class T>
struct DownsampleParams {
  ConvBnActParams<T> spatial;  // 3x3 grouped, stride 2, C1 -> C1
  ConvBnActParams<T> expand;   // 1x1, C1 -> C2
};

template <class T>
DownsampleParams<T> make_downsample_params(const DownsampleSpec& spec, Rng& rng) {
  spec.validate();
  DownsampleParams<T> p;
  p.spatial = make_conv_bn_act<T>(
      ConvSpec::grouped(spec.in_channels, spec.in_channels, 3, 2, spec.resolved_groups()), rng);
  p.expand = make_conv_bn_act<T>(ConvSpec::pointwise(spec.in_channels, spec.resolved_out()), rng);
  return p;
}

template <class T>
TensorPtr<T> decoupled_downsample_forward(Tape<T>* tape, const TensorPtr<T>& x, const DownsampleSpec& spec,
                                          DownsampleParams<T>& p, BnMode mode, bool update_running = false) {
  spec.validate();
  if (x->shape.c != spec.in_channels) {
    throw ConfigError("decoupled_downsample: input has " + std::to_string(x->shape.c) +
                      " channels, spec expects " + std::to_string(spec.in_channels));
  }
  auto y = conv_bn_act(tape, x, p.spatial, mode, update_running);
  return conv_bn_act(tape, y, p.expand, mode, update_running);
}

// Baseline fused downsample: one 3x3 stride-2 cell, C1 -> C2.
template <class T>
ConvBnActParams<T> make_fused_downsample(int64_t c1, int64_t c2, Rng& rng) {
  return make_conv_bn_act<T>(ConvSpec::standard(c1, c2, 3, 2), rng);
}

// ---------------------------------------------------------------------------
// Parameter visiting and layer walking

template <class T>
using ParamFn = std::function<void(const std::string&, const TensorPtr<T>&)>;

template <class T, class F>
void visit_bn(BnParams<T>& bn, const std::string& prefix, F&& fn, bool include_state) {
  fn(prefix + ".gamma", bn.gamma);
  fn(prefix + ".beta", bn.beta);
  if (include_state) {
    fn(prefix + ".running_mean", bn.running_mean);
    fn(prefix + ".running_var", bn.running_var);
  }
}

template <class T, class F>
void visit_conv_bn_act(ConvBnActParams<T>& p, const std::string& prefix, F&& fn, bool include_state = false) {
  fn(prefix + ".conv.weight", p.weight);
  if (p.bias) fn(prefix + ".conv.bias", p.bias);
  visit_bn(p.bn, prefix + ".bn", fn, include_state);
}

template <class T, class F>
void visit_fcm(const FcmConfig& cfg, FcmParams<T>& p, const std::string& prefix, F&& fn,
               bool include_state = false) {
  visit_conv_bn_act(p.branch3x3, prefix + ".branch3x3", fn, include_state);
  visit_conv_bn_act(p.branch_pw, prefix + ".branch_pw", fn, include_state);
  if (cfg.enable_channel_mapping) fn(prefix + ".channel_dw.weight", p.channel_dw_weight);
  if (cfg.enable_spatial_mapping) {
    fn(prefix + ".spatial.weight", p.spatial_weight);
    visit_bn(p.spatial_bn, prefix + ".spatial.bn", fn, include_state);
  }
}

template <class T, class F>
void visit_mkp(const MkpConfig& cfg, MkpParams<T>& p, const std::string& prefix, F&& fn) {
  (void)cfg;
  for (size_t i = 0; i < p.depthwise.size(); ++i) fn(prefix + ".dw" + std::to_string(i) + ".weight", p.depthwise[i]);
  for (size_t i = 0; i < p.pointwise.size(); ++i) fn(prefix + ".pw" + std::to_string(i) + ".weight", p.pointwise[i]);
}

template <class T, class F>
void visit_downsample(DownsampleParams<T>& p, const std::string& prefix, F&& fn, bool include_state = false) {
  visit_conv_bn_act(p.spatial, prefix + ".spatial", fn, include_state);
  visit_conv_bn_act(p.expand, prefix + ".expand", fn, include_state);
}

// One parameterized layer as seen by the accounting walk.
struct LayerDesc {
  std::string name;
  enum class Kind { Conv, BatchNorm } kind = Kind::Conv;
  ConvSpec conv{};           // valid for Kind::Conv
  int64_t bn_channels = 0;   // valid for Kind::BatchNorm
  int64_t constructed_params = 0;
  Shape4 out{};
};

using LayerFn = std::function<void(const LayerDesc&)>;

template <class T>
Shape4 walk_conv_bn_act(const ConvBnActParams<T>& p, const std::string& prefix, Shape4 in, const LayerFn& fn) {
  LayerDesc conv;
  conv.name = prefix + ".conv";
  conv.kind = LayerDesc::Kind::Conv;
  conv.conv = p.spec;
  conv.constructed_params = p.weight->numel() + (p.bias ? p.bias->numel() : 0);
  conv.out = p.spec.out_shape(in);
  fn(conv);

  LayerDesc bn;
  bn.name = prefix + ".bn";
  bn.kind = LayerDesc::Kind::BatchNorm;
  bn.bn_channels = p.bn.channels();
  bn.constructed_params = p.bn.gamma->numel() + p.bn.beta->numel();
  bn.out = conv.out;
  fn(bn);
  return conv.out;
}

template <class T>
Shape4 walk_fcm(const FcmConfig& cfg, const FcmParams<T>& p, const std::string& prefix, Shape4 in, const LayerFn& fn) {
  const Shape4 lead{in.n, cfg.lead_channels(), in.h, in.w};
  const Shape4 rest{in.n, cfg.rest_channels(), in.h, in.w};
  const Shape4 full = walk_conv_bn_act(p.branch3x3, prefix + ".branch3x3", lead, fn);
  walk_conv_bn_act(p.branch_pw, prefix + ".branch_pw", rest, fn);
  if (cfg.enable_channel_mapping) {
    LayerDesc dw;
    dw.name = prefix + ".channel_dw";
    dw.kind = LayerDesc::Kind::Conv;
    dw.conv = ConvSpec::depthwise(cfg.channels, 3);
    dw.constructed_params = p.channel_dw_weight->numel();
    dw.out = dw.conv.out_shape(full);
    fn(dw);
  }
  if (cfg.enable_spatial_mapping) {
    LayerDesc sp;
    sp.name = prefix + ".spatial";
    sp.kind = LayerDesc::Kind::Conv;
    sp.conv = ConvSpec::pointwise(cfg.channels, 1);
    sp.constructed_params = p.spatial_weight->numel();
    sp.out = sp.conv.out_shape(full);
    fn(sp);

    LayerDesc bn;
    bn.name = prefix + ".spatial.bn";
    bn.kind = LayerDesc::Kind::BatchNorm;
    bn.bn_channels = 1;
    bn.constructed_params = p.spatial_bn.gamma->numel() + p.spatial_bn.beta->numel();
    bn.out = sp.out;
    fn(bn);
  }
  return in;  // FCM preserves shape
}

template <class T>
Shape4 walk_mkp(const MkpConfig& cfg, const MkpParams<T>& p, const std::string& prefix, Shape4 in, const LayerFn& fn) {
  Shape4 cur = in;
  for (size_t i = 0; i < cfg.kernel_sizes.size(); ++i) {
    if (i > 0) {
      LayerDesc pw;
      pw.name = prefix + ".pw" + std::to_string(i - 1);
      pw.kind = LayerDesc::Kind::Conv;
      pw.conv = ConvSpec::pointwise(cfg.channels, cfg.channels);
      pw.constructed_params = p.pointwise[i - 1]->numel();
      pw.out = pw.conv.out_shape(cur);
      fn(pw);
      cur = pw.out;
    }
    LayerDesc dw;
    dw.name = prefix + ".dw" + std::to_string(i);
    dw.kind = LayerDesc::Kind::Conv;
    dw.conv = ConvSpec::depthwise(cfg.channels, cfg.kernel_sizes[i]);
    dw.constructed_params = p.depthwise[i]->numel();
    dw.out = dw.conv.out_shape(cur);
    fn(dw);
    cur = dw.out;
  }
  return cur;
}

template <class T>
Shape4 walk_downsample(const DownsampleParams<T>& p, const std::string& prefix, Shape4 in, const LayerFn& fn) {
  Shape4 mid = walk_conv_bn_act(p.spatial, prefix + ".spatial", in, fn);
  return walk_conv_bn_act(p.expand, prefix + ".expand", mid, fn);
}

}  // namespace fcmnet
