// fcmnet command line: describe/audit models, run forward passes, dump
// activations, run the verification suites and the training demo.
//
// Exit codes: 0 success, 1 verification failure, 2 input/config error,
// 3 audit failure, 4 numeric divergence.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fcmnet/fcmnet.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailure = 1;
constexpr int kExitInputError = 2;
constexpr int kExitAuditFailure = 3;
constexpr int kExitDivergence = 4;

struct AblationFlags {
  bool no_rr = false;
  bool no_fcm = false;
  bool no_mkp = false;
  bool baseline = false;

  bool any() const { return no_rr || no_fcm || no_mkp || baseline; }
  fcmnet::BackboneConfig apply(const fcmnet::BackboneConfig& cfg) const {
    if (!any()) return cfg;
    const bool rr = !(no_rr || baseline);
    const bool fcm = !(no_fcm || baseline);
    const bool mkp = !(no_mkp || baseline);
    return fcmnet::ablation_variant(cfg, rr, fcm, mkp);
  }
};

void add_ablation_flags(CLI::App* cmd, AblationFlags& flags) {
  cmd->add_flag("--no-rr", flags.no_rr, "use standard fused downsamples instead of decoupled ones");
  cmd->add_flag("--no-fcm", flags.no_fcm, "replace FCM blocks with plain 3x3 cells");
  cmd->add_flag("--no-mkp", flags.no_mkp, "keep a downsample in the final stage instead of MKP");
  cmd->add_flag("--baseline", flags.baseline, "shorthand for --no-rr --no-fcm --no-mkp");
}

fcmnet::BackboneConfig load_config(const std::string& path, const AblationFlags& flags, const std::string& width) {
  fcmnet::BackboneConfig cfg = fcmnet::load_config_file(path);
  cfg = flags.apply(cfg);
  if (!width.empty()) {
    fcmnet::apply_width_multiplier(cfg, fcmnet::width_preset_multiplier(width));
    cfg.validate();
  }
  return cfg;
}

int run_describe(const std::string& config_path, const AblationFlags& flags, const std::string& width,
                 int64_t image_size, bool as_json, bool compare_rr) {
  auto cfg = load_config(config_path, flags, width);
  auto model = fcmnet::build_backbone<double>(cfg, 0);
  const fcmnet::Shape4 input{1, cfg.in_channels, image_size, image_size};
  fcmnet::CountReport report = fcmnet::audit_model(model, input);
  if (compare_rr) report.comparison = fcmnet::rr_comparison_rows(cfg);
  if (as_json) {
    std::cout << fcmnet::report_to_json(report).dump(2) << "\n";
  } else {
    std::cout << fcmnet::format_report(report);
    std::cout << "\nexports:";
    for (int64_t idx : cfg.resolved_exports()) {
      std::cout << " stage" << idx << "(stride " << cfg.stage_stride(static_cast<size_t>(idx - 1)) << ")";
    }
    std::cout << "\n";
  }
  return kExitOk;
}

std::vector<std::pair<std::string, fcmnet::TensorPtr<double>>> model_state(fcmnet::Backbone<double>& model) {
  std::vector<std::pair<std::string, fcmnet::TensorPtr<double>>> state;
  fcmnet::visit_backbone_params<double>(
      model, [&](const std::string& n, const fcmnet::TensorPtr<double>& t) { state.emplace_back(n, t); },
      /*include_state=*/true);
  return state;
}

int run_forward(const std::string& config_path, const AblationFlags& flags, const std::string& width,
                const std::string& input_path, const std::vector<int64_t>& random_dims, uint64_t seed,
                const std::string& outdir, bool pgm, const std::string& load_params, const std::string& save_params) {
  auto cfg = load_config(config_path, flags, width);
  auto model = fcmnet::build_backbone<double>(cfg, seed);
  std::filesystem::create_directories(outdir);
  if (!load_params.empty()) fcmnet::load_archive<double>(load_params, model_state(model));
  if (!save_params.empty()) {
    const auto parent = std::filesystem::path(save_params).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    fcmnet::save_archive<double>(save_params, model_state(model));
  }

  fcmnet::TensorPtr<double> x;
  if (!input_path.empty()) {
    x = fcmnet::read_tensor_file<double>(input_path);
  } else if (random_dims.size() == 4) {
    fcmnet::Rng rng(fcmnet::mix_seed(seed, 1));
    x = fcmnet::make_tensor<double>(
        fcmnet::Shape4{random_dims[0], random_dims[1], random_dims[2], random_dims[3]});
    fcmnet::uniform_fill(*x, -1.0, 1.0, rng);
  } else {
    std::cerr << "forward: provide --input FILE or --random N C H W\n";
    return kExitInputError;
  }

  auto exports = fcmnet::backbone_forward<double>(nullptr, model, x, fcmnet::BnMode::Inference);
  for (auto& e : exports) {
    const std::string base = outdir + "/stride" + std::to_string(e.stride);
    fcmnet::write_tensor_file(base + ".tensor", *e.map);
    if (pgm) fcmnet::write_pgm_file(base + ".pgm", *e.map);
    std::cout << "stage" << e.stage_index << " stride " << e.stride << " shape " << e.map->shape.str() << " -> "
              << base << ".tensor\n";
  }
  return kExitOk;
}

int run_verify(const std::string& scope, uint64_t seed, const std::string& inject_fault) {
  if (!inject_fault.empty()) {
    if (inject_fault == "conv2d-backward") {
      fcmnet::faults::conv2d_backward_perturb = 1e-3;
    } else {
      std::cerr << "unknown fault '" << inject_fault << "' (supported: conv2d-backward)\n";
      return kExitInputError;
    }
  }
  std::vector<fcmnet::NamedCheck> checks;
  if (scope == "ops") {
    auto oracle = fcmnet::conv_oracle_matrix(seed);
    checks.insert(checks.end(), oracle.begin(), oracle.end());
    auto grads = fcmnet::op_gradcheck_suite(seed);
    checks.insert(checks.end(), grads.begin(), grads.end());
  } else if (scope == "blocks") {
    checks = fcmnet::block_gradcheck_suite(seed);
    // straight-line FCM agreement and the receptive-field probes
    fcmnet::Rng rng(fcmnet::mix_seed(seed, 11));
    fcmnet::FcmConfig fcfg;
    fcfg.channels = 16;
    fcfg.alpha = 0.75;
    auto fparams = fcmnet::make_fcm_params<double>(fcfg, rng);
    auto x = fcmnet::make_tensor<double>(fcmnet::Shape4{2, 16, 8, 8});
    fcmnet::uniform_fill(*x, -1.0, 1.0, rng);
    auto blocked = fcmnet::fcm_forward<double>(nullptr, x, fcfg, fparams, fcmnet::BnMode::Train);
    auto straight = fcmnet::fcm_forward_reference<double>(x, fcfg, fparams, fcmnet::BnMode::Train);
    double err = 0;
    for (size_t i = 0; i < blocked->data.size(); ++i) {
      err = std::max(err, std::fabs(blocked->data[i] - straight->data[i]));
    }
    checks.push_back({"fcm straight-line recomputation", err < 1e-12, err, "max abs err " + std::to_string(err)});

    for (std::vector<int64_t> kernels : {std::vector<int64_t>{3, 5, 7}, std::vector<int64_t>{3, 3, 3}}) {
      fcmnet::MkpConfig mcfg;
      mcfg.channels = 4;
      mcfg.kernel_sizes = kernels;
      mcfg.activation = fcmnet::Activation::None;
      auto mparams = fcmnet::make_mkp_params<double>(mcfg, rng);
      auto probe = fcmnet::receptive_field_probe<double>(
          [&](const fcmnet::TensorPtr<double>& in) {
            return fcmnet::mkp_forward<double>(nullptr, in, mcfg, mparams);
          },
          fcmnet::Shape4{1, 4, 33, 33});
      const int64_t want = fcmnet::stacked_receptive_field(kernels);
      std::string kname = "(";
      for (size_t i = 0; i < kernels.size(); ++i) kname += (i ? "," : "") + std::to_string(kernels[i]);
      kname += ")";
      checks.push_back({"mkp receptive field " + kname, probe.width == want && probe.height == want,
                        std::fabs(static_cast<double>(probe.width - want)),
                        "probe " + std::to_string(probe.height) + "x" + std::to_string(probe.width) + ", expected " +
                            std::to_string(want)});
    }
  } else if (scope == "model") {
    checks.push_back(fcmnet::backbone_gradcheck(seed));
    for (int rr = 0; rr < 2; ++rr) {
      for (int fcm = 0; fcm < 2; ++fcm) {
        for (int mkp = 0; mkp < 2; ++mkp) {
          auto cfg = fcmnet::ablation_variant(fcmnet::default_toy_config(), rr, fcm, mkp);
          std::string name = std::string("audit rr=") + (rr ? "1" : "0") + " fcm=" + (fcm ? "1" : "0") +
                             " mkp=" + (mkp ? "1" : "0");
          try {
            auto model = fcmnet::build_backbone<double>(cfg, seed);
            auto report = fcmnet::audit_model(model, fcmnet::Shape4{1, 3, 64, 64});
            checks.push_back({name, true, 0.0, std::to_string(report.total_params) + " params"});
          } catch (const fcmnet::AuditError& e) {
            checks.push_back({name, false, 0.0, e.what()});
          }
        }
      }
    }
  } else {
    std::cerr << "unknown scope '" << scope << "' (expected ops|blocks|model)\n";
    return kExitInputError;
  }

  bool all_ok = true;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& c : checks) {
    std::cout << (c.ok ? "[pass] " : "[FAIL] ") << c.name << ": " << c.detail << "\n";
    if (!c.ok) all_ok = false;
    if (c.err > worst) {
      worst = c.err;
      worst_name = c.name;
    }
  }
  std::cout << (all_ok ? "verify: all checks passed" : "verify: FAILURES above") << " (worst error " << worst << " in '"
            << worst_name << "')\n";
  return all_ok ? kExitOk : kExitVerifyFailure;
}

int run_train_demo(const std::string& config_path, const AblationFlags& flags, const std::string& width,
                   int64_t steps, double lr, uint64_t seed, const std::string& csv_path,
                   const std::string& precision, const std::string& save_params) {
  auto cfg = load_config(config_path, flags, width);
  fcmnet::TrainTask task;

  std::vector<double> losses;
  bool diverged = false;
  int64_t diverged_step = -1;
  if (precision == "f32") {
    auto model = fcmnet::build_backbone<float>(cfg, seed);
    auto result = fcmnet::train_demo<float>(model, task, steps, static_cast<float>(lr), seed);
    losses.assign(result.losses.begin(), result.losses.end());
    diverged = result.diverged;
    diverged_step = result.diverged_step;
  } else if (precision == "f64") {
    auto model = fcmnet::build_backbone<double>(cfg, seed);
    auto result = fcmnet::train_demo<double>(model, task, steps, lr, seed);
    losses = result.losses;
    diverged = result.diverged;
    diverged_step = result.diverged_step;
    if (!diverged && !save_params.empty()) {
      const auto parent = std::filesystem::path(save_params).parent_path();
      if (!parent.empty()) std::filesystem::create_directories(parent);
      fcmnet::save_archive<double>(save_params, model_state(model));
    }
  } else {
    std::cerr << "precision must be f32 or f64\n";
    return kExitInputError;
  }

  const std::string csv = fcmnet::losses_to_csv(losses);
  if (!csv_path.empty()) fcmnet::write_text_file(csv_path, csv);
  for (size_t i = 0; i < losses.size(); ++i) {
    std::cout << "step " << i << " loss " << losses[i] << "\n";
  }
  if (diverged) {
    std::cerr << "train-demo: loss diverged (non-finite) at step " << diverged_step << "\n";
    return kExitDivergence;
  }
  if (!losses.empty()) {
    std::cout << "final/initial loss ratio: " << losses.back() / losses.front() << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fcmnet: toy-scale CNN backbone lab with exact accounting and verification oracles"};
  app.require_subcommand(1);

  // describe
  auto* describe = app.add_subcommand("describe", "print the layer table and parameter/MAC totals");
  std::string d_config;
  std::string d_width;
  int64_t d_image = 256;
  bool d_json = false, d_compare = false;
  AblationFlags d_flags;
  describe->add_option("-c,--config", d_config, "backbone config (TOML)")->required();
  describe->add_option("--image-size", d_image, "square input size used for MAC counts");
  describe->add_option("--width", d_width, "width preset n/s/m/l/x");
  describe->add_flag("--json", d_json, "emit the report as JSON");
  describe->add_flag("--compare-rr", d_compare, "add fused-vs-decoupled downsample comparison rows");
  add_ablation_flags(describe, d_flags);

  // forward
  auto* forward = app.add_subcommand("forward", "run a forward pass and dump the exported maps");
  std::string f_config, f_input, f_outdir = "out", f_load, f_save, f_width;
  std::vector<int64_t> f_random;
  uint64_t f_seed = 0;
  bool f_pgm = false;
  AblationFlags f_flags;
  forward->add_option("-c,--config", f_config, "backbone config (TOML)")->required();
  forward->add_option("--input", f_input, "input tensor dump file");
  forward->add_option("--random", f_random, "random input dims: N C H W")->expected(4);
  forward->add_option("--seed", f_seed, "seed for parameters and random input");
  forward->add_option("-o,--outdir", f_outdir, "output directory for dumps");
  forward->add_option("--load-params", f_load, "load parameters from archive prefix");
  forward->add_option("--save-params", f_save, "save parameters to archive prefix");
  forward->add_option("--width", f_width, "width preset n/s/m/l/x");
  forward->add_flag("--pgm", f_pgm, "also write channel-mean PGM images");
  add_ablation_flags(forward, f_flags);

  // verify
  auto* verify = app.add_subcommand("verify", "run verification suites");
  std::string v_scope = "ops", v_fault;
  uint64_t v_seed = 20240801;
  verify->add_option("--scope", v_scope, "ops|blocks|model")->required();
  verify->add_option("--seed", v_seed, "seed for randomized cases");
  verify->add_option("--inject-fault", v_fault, "test fixture: corrupt a backward pass (conv2d-backward)");

  // train-demo
  auto* train = app.add_subcommand("train-demo", "run the SGD convergence smoke test");
  std::string t_config, t_csv, t_precision = "f64", t_save, t_width;
  int64_t t_steps = 200;
  double t_lr = 0.01;
  uint64_t t_seed = 1;
  AblationFlags t_flags;
  train->add_option("-c,--config", t_config, "backbone config (TOML)")->required();
  train->add_option("--steps", t_steps, "SGD steps");
  train->add_option("--lr", t_lr, "learning rate");
  train->add_option("--seed", t_seed, "seed for parameters and data");
  train->add_option("--csv", t_csv, "write the loss curve as CSV");
  train->add_option("--precision", t_precision, "f32 or f64");
  train->add_option("--save-params", t_save, "save trained parameters to archive prefix");
  train->add_option("--width", t_width, "width preset n/s/m/l/x");
  add_ablation_flags(train, t_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitInputError;
  }

  try {
    if (*describe) return run_describe(d_config, d_flags, d_width, d_image, d_json, d_compare);
    if (*forward) return run_forward(f_config, f_flags, f_width, f_input, f_random, f_seed, f_outdir, f_pgm, f_load,
                                     f_save);
    if (*verify) return run_verify(v_scope, v_seed, v_fault);
    if (*train) return run_train_demo(t_config, t_flags, t_width, t_steps, t_lr, t_seed, t_csv, t_precision, t_save);
  } catch (const fcmnet::ParseError& e) {
    std::cerr << "config parse error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const fcmnet::AuditError& e) {
    std::cerr << "audit failure: " << e.what() << "\n";
    return kExitAuditFailure;
  } catch (const fcmnet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const fcmnet::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const fcmnet::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const fcmnet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInputError;
  }
  return kExitOk;
}
