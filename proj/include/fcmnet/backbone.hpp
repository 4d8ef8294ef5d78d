#pragma once

// Backbone topology: stem -> stages, each stage a downsample (fused or
// decoupled) followed by FCM blocks; the final stage swaps its downsample
// for an MKP unit, so its output keeps the previous stride and the deepest
// stride export disappears. Every ablation variant is just a config edit.

#include <string>
#include <variant>
#include <vector>

#include "fcmnet/blocks.hpp"

namespace fcmnet {

enum class DownsampleKind { StandardFused, Decoupled };

struct StageConfig {
  int64_t out_channels = 0;
  int64_t num_fcm_blocks = 1;
  double alpha = 0.5;
  DownsampleKind downsample = DownsampleKind::Decoupled;
  bool is_final = false;
};

struct BackboneConfig {
  int64_t in_channels = 3;
  int64_t stem_channels = 8;
  std::vector<StageConfig> stages;
  std::vector<int64_t> mkp_kernels{3, 5, 7};
  Activation mkp_activation = Activation::Silu;
  bool use_fcm = true;
  bool use_mkp = true;
  // 1-based stage indices to export; empty selects every stage whose stride
  // is not immediately repeated by the next stage (head-removal rule).
  std::vector<int64_t> export_stages;

  // Channels actually produced by stage i: the MKP-terminated final stage is
  // channel-preserving, so it inherits the previous width.
  int64_t effective_channels(size_t i) const {
    const StageConfig& st = stages.at(i);
    if (st.is_final && use_mkp) return i == 0 ? stem_channels : stages[i - 1].out_channels;
    return st.out_channels;
  }

  // Cumulative stride of stage i's output relative to the input (stem is 2).
  int64_t stage_stride(size_t i) const {
    int64_t s = 2;
    for (size_t j = 0; j <= i; ++j) {
      if (!(stages[j].is_final && use_mkp)) s *= 2;
    }
    return s;
  }

  std::vector<int64_t> resolved_exports() const {
    if (!export_stages.empty()) return export_stages;
    std::vector<int64_t> out;
    for (size_t i = 0; i < stages.size(); ++i) {
      if (i + 1 < stages.size() && stage_stride(i + 1) == stage_stride(i)) continue;
      out.push_back(static_cast<int64_t>(i) + 1);
    }
    return out;
  }

  int64_t required_divisor() const {
    int64_t d = 2;
    for (size_t i = 0; i < stages.size(); ++i) d = std::max(d, stage_stride(i));
    return d;
  }

  void validate() const {
    if (in_channels < 1) throw ConfigError("in_channels: must be positive");
    if (stem_channels < 1) throw ConfigError("stem.out_channels: must be positive");
    if (stages.empty()) throw ConfigError("stage: at least one stage is required");
    int finals = 0;
    for (size_t i = 0; i < stages.size(); ++i) {
      const StageConfig& st = stages[i];
      const std::string where = "stage[" + std::to_string(i + 1) + "].";
      if (st.out_channels < 1) throw ConfigError(where + "out_channels: must be positive");
      if (i > 0 && st.out_channels < stages[i - 1].out_channels) {
        throw ConfigError(where + "out_channels: stage channel counts must be nondecreasing (" +
                          std::to_string(st.out_channels) + " after " + std::to_string(stages[i - 1].out_channels) +
                          ")");
      }
      if (st.num_fcm_blocks < 0) throw ConfigError(where + "num_fcm_blocks: must be >= 0");
      if (st.is_final) {
        ++finals;
        if (i + 1 != stages.size()) throw ConfigError(where + "is_final: only the last stage may be final");
      }
      if (use_fcm && st.num_fcm_blocks > 0) {
        const int64_t c = effective_channels(i);
        const int64_t lead = split_lead_channels(c, st.alpha);
        if (lead < 1 || c - lead < 1) {
          throw ConfigError(where + "alpha: split ratio " + std::to_string(st.alpha) + " on " + std::to_string(c) +
                            " channels leaves an empty part");
        }
      }
    }
    if (finals != 1) throw ConfigError("stage: exactly one stage must set is_final (the last)");
    MkpConfig probe;
    probe.channels = 1;
    probe.kernel_sizes = mkp_kernels;
    probe.activation = mkp_activation;
    try {
      probe.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("mkp_kernels: ") + e.what());
    }
    if (!export_stages.empty()) {
      int64_t prev = 0;
      for (int64_t e : export_stages) {
        if (e < 1 || e > static_cast<int64_t>(stages.size())) {
          throw ConfigError("export_stages: index " + std::to_string(e) + " out of range 1.." +
                            std::to_string(stages.size()));
        }
        if (e <= prev) throw ConfigError("export_stages: indices must be strictly increasing");
        prev = e;
      }
    }
  }
};

// Toy-scale default: channels 16/32/64/128, one FCM per stage, split ratios
// (0.75, 0.75, 0.25, 0.25), MKP kernels (3,5,7), decoupled downsamples.
inline BackboneConfig default_toy_config() {
  BackboneConfig cfg;
  cfg.in_channels = 3;
  cfg.stem_channels = 8;
  const int64_t chans[4] = {16, 32, 64, 128};
  const double alphas[4] = {0.75, 0.75, 0.25, 0.25};
  for (int i = 0; i < 4; ++i) {
    StageConfig st;
    st.out_channels = chans[i];
    st.alpha = alphas[i];
    st.num_fcm_blocks = 1;
    st.downsample = DownsampleKind::Decoupled;
    st.is_final = (i == 3);
    cfg.stages.push_back(st);
  }
  return cfg;
}

// Smallest config that still exercises every code path; used by the
// end-to-end gradient check.
inline BackboneConfig tiny_test_config() {
  BackboneConfig cfg = default_toy_config();
  const int64_t chans[4] = {4, 8, 8, 8};
  for (int i = 0; i < 4; ++i) cfg.stages[static_cast<size_t>(i)].out_channels = chans[i];
  cfg.stem_channels = 2;
  return cfg;
}

// Ablation grid: rr toggles decoupled downsampling, fcm swaps FCM blocks for
// plain 3x3 cells of the same channel plan, mkp toggles replacing the final
// downsample.
inline BackboneConfig ablation_variant(BackboneConfig cfg, bool rr, bool fcm, bool mkp) {
  for (auto& st : cfg.stages) st.downsample = rr ? DownsampleKind::Decoupled : DownsampleKind::StandardFused;
  cfg.use_fcm = fcm;
  cfg.use_mkp = mkp;
  return cfg;
}

inline double width_preset_multiplier(const std::string& preset) {
  if (preset == "n") return 0.25;
  if (preset == "s") return 0.5;
  if (preset == "m") return 0.75;
  if (preset == "l") return 1.0;
  if (preset == "x") return 1.25;
  throw ConfigError("width preset must be one of n/s/m/l/x, got '" + preset + "'");
}

// Channel-multiplier preset; counts round to multiples of 4 so every split
// ratio stays valid.
inline void apply_width_multiplier(BackboneConfig& cfg, double mult) {
  if (mult <= 0) throw ConfigError("width multiplier must be positive");
  auto scaled = [mult](int64_t c) {
    const int64_t v = static_cast<int64_t>(std::llround(static_cast<double>(c) * mult / 4.0)) * 4;
    return std::max<int64_t>(4, v);
  };
  cfg.stem_channels = std::max<int64_t>(2, scaled(cfg.stem_channels) / 2 * 2);
  for (auto& st : cfg.stages) st.out_channels = scaled(st.out_channels);
  // rounding can break monotonicity at tiny widths; repair upward
  for (size_t i = 1; i < cfg.stages.size(); ++i) {
    cfg.stages[i].out_channels = std::max(cfg.stages[i].out_channels, cfg.stages[i - 1].out_channels);
  }
}

// ---------------------------------------------------------------------------
// Built model

template <class T>
struct FcmBlock {
  FcmConfig cfg;
  FcmParams<T> params;
};

template <class T>
struct MkpStage {
  MkpConfig cfg;
  MkpParams<T> params;
};

template <class T>
struct Stage {
  // exactly one front op: fused downsample cell, decoupled downsample, or MKP
  std::variant<ConvBnActParams<T>, DownsampleParams<T>, MkpStage<T>> front;
  DownsampleSpec down_spec;  // meaningful when front is DownsampleParams
  std::vector<std::variant<FcmBlock<T>, ConvBnActParams<T>>> blocks;
};

template <class T>
struct Backbone {
  BackboneConfig cfg;
  uint64_t seed = 0;
  ConvBnActParams<T> stem;
  std::vector<Stage<T>> stages;
};

template <class T>
Backbone<T> build_backbone(const BackboneConfig& cfg, uint64_t seed) {
  cfg.validate();
  Backbone<T> model;
  model.cfg = cfg;
  model.seed = seed;
  Rng rng(mix_seed(seed, 0));
  model.stem = make_conv_bn_act<T>(ConvSpec::standard(cfg.in_channels, cfg.stem_channels, 3, 2), rng);
  int64_t in_ch = cfg.stem_channels;
  for (size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageConfig& st = cfg.stages[i];
    Stage<T> stage;
    int64_t out_ch;
    if (st.is_final && cfg.use_mkp) {
      MkpStage<T> mkp;
      mkp.cfg.channels = in_ch;
      mkp.cfg.kernel_sizes = cfg.mkp_kernels;
      mkp.cfg.activation = cfg.mkp_activation;
      mkp.params = make_mkp_params<T>(mkp.cfg, rng);
      stage.front = std::move(mkp);
      out_ch = in_ch;
    } else if (st.downsample == DownsampleKind::Decoupled) {
      DownsampleSpec spec;
      spec.in_channels = in_ch;
      spec.out_channels = st.out_channels;
      stage.down_spec = spec;
      stage.front = make_downsample_params<T>(spec, rng);
      out_ch = st.out_channels;
    } else {
      stage.front = make_fused_downsample<T>(in_ch, st.out_channels, rng);
      out_ch = st.out_channels;
    }
    for (int64_t b = 0; b < st.num_fcm_blocks; ++b) {
      if (cfg.use_fcm) {
        FcmBlock<T> blk;
        blk.cfg.channels = out_ch;
        blk.cfg.alpha = st.alpha;
        blk.params = make_fcm_params<T>(blk.cfg, rng);
        stage.blocks.emplace_back(std::move(blk));
      } else {
        stage.blocks.emplace_back(make_conv_bn_act<T>(ConvSpec::standard(out_ch, out_ch, 3), rng));
      }
    }
    model.stages.push_back(std::move(stage));
    in_ch = out_ch;
  }
  return model;
}

template <class T>
struct ExportMap {
  int64_t stage_index = 0;  // 1-based
  int64_t stride = 0;
  TensorPtr<T> map;
};

template <class T>
std::vector<ExportMap<T>> backbone_forward(Tape<T>* tape, Backbone<T>& model, const TensorPtr<T>& x, BnMode mode,
                                           bool update_running = false) {
  const BackboneConfig& cfg = model.cfg;
  if (x->shape.c != cfg.in_channels) {
    throw ShapeError("backbone_forward: input has " + std::to_string(x->shape.c) + " channels, config expects " +
                     std::to_string(cfg.in_channels));
  }
  const int64_t div = cfg.required_divisor();
  if (x->shape.h % div != 0 || x->shape.w % div != 0) {
    throw ShapeError("backbone_forward: input " + std::to_string(x->shape.h) + "x" + std::to_string(x->shape.w) +
                     " must be divisible by " + std::to_string(div) + " (deepest stage stride)");
  }

  auto y = conv_bn_act(tape, x, model.stem, mode, update_running);
  std::vector<TensorPtr<T>> stage_outputs;
  for (size_t i = 0; i < model.stages.size(); ++i) {
    Stage<T>& stage = model.stages[i];
    y = std::visit(
        [&](auto& front) -> TensorPtr<T> {
          using F = std::decay_t<decltype(front)>;
          if constexpr (std::is_same_v<F, ConvBnActParams<T>>) {
            return conv_bn_act(tape, y, front, mode, update_running);
          } else if constexpr (std::is_same_v<F, DownsampleParams<T>>) {
            return decoupled_downsample_forward(tape, y, stage.down_spec, front, mode, update_running);
          } else {
            return mkp_forward(tape, y, front.cfg, front.params);
          }
        },
        stage.front);
    for (auto& blk : stage.blocks) {
      y = std::visit(
          [&](auto& b) -> TensorPtr<T> {
            using B = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<B, FcmBlock<T>>) {
              return fcm_forward(tape, y, b.cfg, b.params, mode, update_running);
            } else {
              return conv_bn_act(tape, y, b, mode, update_running);
            }
          },
          blk);
    }
    stage_outputs.push_back(y);
  }

  std::vector<ExportMap<T>> exports;
  for (int64_t idx : cfg.resolved_exports()) {
    ExportMap<T> e;
    e.stage_index = idx;
    e.stride = cfg.stage_stride(static_cast<size_t>(idx - 1));
    e.map = stage_outputs[static_cast<size_t>(idx - 1)];
    exports.push_back(e);
  }
  return exports;
}

template <class T, class F>
void visit_backbone_params(Backbone<T>& model, F&& fn, bool include_state = false) {
  visit_conv_bn_act(model.stem, "stem", fn, include_state);
  for (size_t i = 0; i < model.stages.size(); ++i) {
    const std::string prefix = "stage" + std::to_string(i + 1);
    std::visit(
        [&](auto& front) {
          using Front = std::decay_t<decltype(front)>;
          if constexpr (std::is_same_v<Front, ConvBnActParams<T>>) {
            visit_conv_bn_act(front, prefix + ".down", fn, include_state);
          } else if constexpr (std::is_same_v<Front, DownsampleParams<T>>) {
            visit_downsample(front, prefix + ".down", fn, include_state);
          } else {
            visit_mkp(front.cfg, front.params, prefix + ".mkp", fn);
          }
        },
        model.stages[i].front);
    for (size_t b = 0; b < model.stages[i].blocks.size(); ++b) {
      const std::string bp = prefix + ".block" + std::to_string(b);
      std::visit(
          [&](auto& blk) {
            using B = std::decay_t<decltype(blk)>;
            if constexpr (std::is_same_v<B, FcmBlock<T>>) {
              visit_fcm(blk.cfg, blk.params, bp + ".fcm", fn, include_state);
            } else {
              visit_conv_bn_act(blk, bp + ".conv3x3", fn, include_state);
            }
          },
          model.stages[i].blocks[b]);
    }
  }
}

template <class T>
Shape4 walk_backbone(const Backbone<T>& model, Shape4 in, const LayerFn& fn) {
  Shape4 cur = walk_conv_bn_act(model.stem, "stem", in, fn);
  for (size_t i = 0; i < model.stages.size(); ++i) {
    const std::string prefix = "stage" + std::to_string(i + 1);
    cur = std::visit(
        [&](const auto& front) -> Shape4 {
          using F = std::decay_t<decltype(front)>;
          if constexpr (std::is_same_v<F, ConvBnActParams<T>>) {
            return walk_conv_bn_act(front, prefix + ".down", cur, fn);
          } else if constexpr (std::is_same_v<F, DownsampleParams<T>>) {
            return walk_downsample(front, prefix + ".down", cur, fn);
          } else {
            return walk_mkp(front.cfg, front.params, prefix + ".mkp", cur, fn);
          }
        },
        model.stages[i].front);
    for (size_t b = 0; b < model.stages[i].blocks.size(); ++b) {
      const std::string bp = prefix + ".block" + std::to_string(b);
      cur = std::visit(
          [&](const auto& blk) -> Shape4 {
            using B = std::decay_t<decltype(blk)>;
            if constexpr (std::is_same_v<B, FcmBlock<T>>) {
              return walk_fcm(blk.cfg, blk.params, bp + ".fcm", cur, fn);
            } else {
              return walk_conv_bn_act(blk, bp + ".conv3x3", cur, fn);
            }
          },
          model.stages[i].blocks[b]);
    }
  }
  return cur;
}

}  // namespace fcmnet
