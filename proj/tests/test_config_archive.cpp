#include <catch2/catch.hpp>

#include <cstdio>

#include "fcmnet/archive.hpp"
#include "fcmnet/backbone.hpp"
#include "fcmnet/config.hpp"

using namespace fcmnet;

#ifndef FCMNET_CONFIG_DIR
#define FCMNET_CONFIG_DIR "configs"
#endif

namespace {

const char* kMinimalConfig = R"(
[[stage]]
out_channels = 8

[[stage]]
out_channels = 16
)";

}  // namespace

TEST_CASE("default.toml matches the built-in default config") {
  auto file_cfg = load_config_file(std::string(FCMNET_CONFIG_DIR) + "/default.toml");
  auto code_cfg = default_toy_config();
  REQUIRE(file_cfg.in_channels == code_cfg.in_channels);
  REQUIRE(file_cfg.stem_channels == code_cfg.stem_channels);
  REQUIRE(file_cfg.stages.size() == code_cfg.stages.size());
  for (size_t i = 0; i < code_cfg.stages.size(); ++i) {
    REQUIRE(file_cfg.stages[i].out_channels == code_cfg.stages[i].out_channels);
    REQUIRE(file_cfg.stages[i].alpha == code_cfg.stages[i].alpha);
    REQUIRE(file_cfg.stages[i].num_fcm_blocks == code_cfg.stages[i].num_fcm_blocks);
    REQUIRE((file_cfg.stages[i].downsample == code_cfg.stages[i].downsample));
    REQUIRE(file_cfg.stages[i].is_final == code_cfg.stages[i].is_final);
  }
  REQUIRE(file_cfg.mkp_kernels == code_cfg.mkp_kernels);
  REQUIRE(file_cfg.use_fcm);
  REQUIRE(file_cfg.use_mkp);
}

TEST_CASE("minimal config fills in defaults") {
  auto cfg = load_config_text(kMinimalConfig);
  REQUIRE(cfg.in_channels == 3);
  REQUIRE(cfg.stem_channels == 4);  // half the first stage width
  REQUIRE(cfg.stages.size() == 2);
  REQUIRE(cfg.stages[0].alpha == 0.5);
  REQUIRE(cfg.stages[0].num_fcm_blocks == 1);
  REQUIRE((cfg.stages[0].downsample == DownsampleKind::Decoupled));
  REQUIRE_FALSE(cfg.stages[0].is_final);
  REQUIRE(cfg.stages[1].is_final);  // last stage defaults to final
  REQUIRE(cfg.mkp_kernels == std::vector<int64_t>{3, 5, 7});
}

TEST_CASE("four-stage configs default to the (0.75,0.75,0.25,0.25) split plan") {
  auto cfg = load_config_text(R"(
[[stage]]
out_channels = 8
[[stage]]
out_channels = 8
[[stage]]
out_channels = 8
[[stage]]
out_channels = 8
)");
  REQUIRE(cfg.stages[0].alpha == 0.75);
  REQUIRE(cfg.stages[3].alpha == 0.25);
}

TEST_CASE("unknown keys are rejected by name") {
  REQUIRE_THROWS_WITH(load_config_text("wat = 1\n[[stage]]\nout_channels = 8\n"),
                      Catch::Matchers::Contains("unknown key 'wat'"));
  REQUIRE_THROWS_WITH(load_config_text("[[stage]]\nout_channels = 8\nbogus = 2\n"),
                      Catch::Matchers::Contains("stage[1].bogus"));
  REQUIRE_THROWS_WITH(load_config_text("[mystery]\nx = 1\n[[stage]]\nout_channels = 8\n"),
                      Catch::Matchers::Contains("[mystery]"));
  REQUIRE_THROWS_WITH(load_config_text("[[things]]\nx = 1\n[[stage]]\nout_channels = 8\n"),
                      Catch::Matchers::Contains("things"));
  REQUIRE_THROWS_WITH(load_config_text("[stem]\nout_channels = 4\nextra = 1\n[[stage]]\nout_channels = 8\n"),
                      Catch::Matchers::Contains("stem.extra"));
}

TEST_CASE("invalid split ratios are named in the error") {
  const std::string text = R"(
alpha = [0.99]
[[stage]]
out_channels = 8
)";
  REQUIRE_THROWS_WITH(load_config_text(text), Catch::Matchers::Contains("alpha"));
}

TEST_CASE("alpha vector length must match the stage count") {
  REQUIRE_THROWS_WITH(load_config_text("alpha = [0.5, 0.5]\n[[stage]]\nout_channels = 8\n"),
                      Catch::Matchers::Contains("alpha"));
}

TEST_CASE("parse errors carry line and column") {
  try {
    load_config_text("[[stage]]\nout_channels == 8\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    REQUIRE(e.line == 2);
    REQUIRE(e.col >= 1);
  }
  REQUIRE_THROWS_AS(load_config_text("[[stage]]\nout_channels = \"eight\"\n"), ConfigError);
  REQUIRE_THROWS_AS(load_config_text("[[stage]]\nout_channels = 8\nout_channels = 9\n"), ParseError);
  REQUIRE_THROWS_AS(load_config_text("key_only\n"), ParseError);
  REQUIRE_THROWS_AS(load_config_text("arr = [1, 2\n"), ParseError);
}

TEST_CASE("toml value forms: comments, strings, bools, negatives, arrays") {
  auto doc = minitoml::parse(R"(
# full-line comment
count = -3            # trailing comment
ratio = 2.5e-1
label = "a # not-comment \"quoted\""
flag = false
items = [1, 2, 3]
empty = []
)");
  REQUIRE(doc.root.kv.at("count").i == -3);
  REQUIRE(doc.root.kv.at("ratio").f == Approx(0.25));
  REQUIRE(doc.root.kv.at("label").s == "a # not-comment \"quoted\"");
  REQUIRE(doc.root.kv.at("flag").b == false);
  REQUIRE(doc.root.kv.at("items").arr.size() == 3);
  REQUIRE(doc.root.kv.at("empty").arr.empty());
}

TEST_CASE("downsample kind and activation spellings are validated") {
  REQUIRE_THROWS_WITH(load_config_text("[[stage]]\nout_channels = 8\ndownsample = \"fancy\"\n"),
                      Catch::Matchers::Contains("downsample"));
  REQUIRE_THROWS_WITH(load_config_text("mkp_activation = \"tanh\"\n[[stage]]\nout_channels = 8\n"),
                      Catch::Matchers::Contains("mkp_activation"));
  auto cfg = load_config_text("mkp_activation = \"none\"\n[[stage]]\nout_channels = 8\n");
  REQUIRE((cfg.mkp_activation == Activation::None));
}

TEST_CASE("is_final placement is validated") {
  REQUIRE_THROWS_WITH(load_config_text(R"(
[[stage]]
out_channels = 8
is_final = true
[[stage]]
out_channels = 16
)"),
                      Catch::Matchers::Contains("is_final"));
}

TEST_CASE("parameter archive round trip is bitwise and deterministic") {
  auto cfg = tiny_test_config();
  auto model = build_backbone<double>(cfg, 77);
  std::vector<std::pair<std::string, TensorPtr<double>>> state;
  visit_backbone_params<double>(model, [&](const std::string& n, const TensorPtr<double>& t) { state.emplace_back(n, t); },
                                /*include_state=*/true);

  const std::string prefix = "test_archive_tmp";
  save_archive(prefix, state);

  auto other = build_backbone<double>(cfg, 12345);  // different init
  std::vector<std::pair<std::string, TensorPtr<double>>> other_state;
  visit_backbone_params<double>(other,
                                [&](const std::string& n, const TensorPtr<double>& t) { other_state.emplace_back(n, t); },
                                /*include_state=*/true);
  load_archive(prefix, other_state);
  for (size_t i = 0; i < state.size(); ++i) {
    REQUIRE(other_state[i].first == state[i].first);
    REQUIRE(other_state[i].second->data == state[i].second->data);
  }

  // identical state twice -> identical bytes
  save_archive(prefix + "_b", state);
  REQUIRE(read_text_file(prefix + ".bin") == read_text_file(prefix + "_b.bin"));
  REQUIRE(read_text_file(prefix + ".json").find("tensor-archive-v1") != std::string::npos);

  SECTION("missing names and shape mismatches are IO errors") {
    auto bogus = make_tensor<double>(Shape4{1, 1, 1, 1});
    REQUIRE_THROWS_AS(load_archive<double>(prefix, {{"no.such.tensor", bogus}}), IoError);
    auto wrong_shape = make_tensor<double>(Shape4{1, 2, 3, 4});
    REQUIRE_THROWS_AS(load_archive<double>(prefix, {{state[0].first, wrong_shape}}), IoError);
  }

  for (const char* suffix : {".json", ".bin", "_b.json", "_b.bin"}) {
    std::remove((prefix + suffix).c_str());
  }
}

TEST_CASE("loading an archive reproduces the exact forward pass") {
  auto cfg = tiny_test_config();
  auto m1 = build_backbone<double>(cfg, 9);
  std::vector<std::pair<std::string, TensorPtr<double>>> s1;
  visit_backbone_params<double>(m1, [&](const std::string& n, const TensorPtr<double>& t) { s1.emplace_back(n, t); },
                                true);
  save_archive("test_archive_fwd", s1);

  auto m2 = build_backbone<double>(cfg, 1000);
  std::vector<std::pair<std::string, TensorPtr<double>>> s2;
  visit_backbone_params<double>(m2, [&](const std::string& n, const TensorPtr<double>& t) { s2.emplace_back(n, t); },
                                true);
  load_archive("test_archive_fwd", s2);

  auto x = make_tensor<double>(Shape4{1, 3, 32, 32});
  Rng rng(70);
  uniform_fill(*x, -1.0, 1.0, rng);
  auto e1 = backbone_forward<double>(nullptr, m1, x, BnMode::Inference);
  auto e2 = backbone_forward<double>(nullptr, m2, x, BnMode::Inference);
  for (size_t i = 0; i < e1.size(); ++i) REQUIRE(e1[i].map->data == e2[i].map->data);

  std::remove("test_archive_fwd.json");
  std::remove("test_archive_fwd.bin");
}
