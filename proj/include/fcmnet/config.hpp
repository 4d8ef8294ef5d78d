#pragma once

// TOML <-> BackboneConfig binding. The file mirrors the config field for
// field; any key the binder does not consume is rejected by name.

#include <deque>
#include <string>
#include <vector>

#include "fcmnet/backbone.hpp"
#include "fcmnet/io.hpp"
#include "fcmnet/toml.hpp"

namespace fcmnet {

namespace detail {

class TableReader {
 public:
  TableReader(minitoml::Table table, std::string where) : t_(std::move(table)), where_(std::move(where)) {}

  const minitoml::Value* take(const std::string& key) {
    auto it = t_.kv.find(key);
    if (it == t_.kv.end()) return nullptr;
    taken_.push_back(it->second);
    t_.kv.erase(it);
    return &taken_.back();
  }

  int64_t take_int(const std::string& key, int64_t fallback) {
    const auto* v = take(key);
    if (!v) return fallback;
    if (v->type != minitoml::Value::Type::Int) {
      throw ConfigError(where_ + key + ": expected integer, got " + v->type_name() + " (line " +
                        std::to_string(v->line) + ")");
    }
    return v->i;
  }

  bool take_bool(const std::string& key, bool fallback) {
    const auto* v = take(key);
    if (!v) return fallback;
    if (v->type != minitoml::Value::Type::Bool) {
      throw ConfigError(where_ + key + ": expected boolean, got " + v->type_name() + " (line " +
                        std::to_string(v->line) + ")");
    }
    return v->b;
  }

  std::string take_string(const std::string& key, const std::string& fallback) {
    const auto* v = take(key);
    if (!v) return fallback;
    if (v->type != minitoml::Value::Type::String) {
      throw ConfigError(where_ + key + ": expected string, got " + v->type_name() + " (line " +
                        std::to_string(v->line) + ")");
    }
    return v->s;
  }

  // array of numbers; nullptr result means the key was absent
  bool take_number_array(const std::string& key, std::vector<double>& out) {
    const auto* v = take(key);
    if (!v) return false;
    if (v->type != minitoml::Value::Type::Array) {
      throw ConfigError(where_ + key + ": expected array, got " + v->type_name() + " (line " +
                        std::to_string(v->line) + ")");
    }
    out.clear();
    for (size_t i = 0; i < v->arr.size(); ++i) {
      const auto& e = v->arr[i];
      if (e.type == minitoml::Value::Type::Int) {
        out.push_back(static_cast<double>(e.i));
      } else if (e.type == minitoml::Value::Type::Float) {
        out.push_back(e.f);
      } else {
        throw ConfigError(where_ + key + "[" + std::to_string(i) + "]: expected number, got " + e.type_name() +
                          " (line " + std::to_string(e.line) + ")");
      }
    }
    return true;
  }

  void finish() const {
    if (!t_.kv.empty()) {
      const auto& [key, v] = *t_.kv.begin();
      throw ConfigError("unknown key '" + where_ + key + "' (line " + std::to_string(v.line) + ")");
    }
  }

 private:
  minitoml::Table t_;
  std::string where_;
  std::deque<minitoml::Value> taken_;  // deque: handed-out pointers stay valid
};

}  // namespace detail

inline BackboneConfig backbone_config_from_toml(const minitoml::Document& doc) {
  BackboneConfig cfg;
  cfg.stages.clear();

  detail::TableReader root(doc.root, "");
  cfg.in_channels = root.take_int("in_channels", 3);
  cfg.use_fcm = root.take_bool("use_fcm", true);
  cfg.use_mkp = root.take_bool("use_mkp", true);

  std::vector<double> alpha;
  const bool have_alpha = root.take_number_array("alpha", alpha);

  std::vector<double> kernels;
  if (root.take_number_array("mkp_kernels", kernels)) {
    cfg.mkp_kernels.clear();
    for (double k : kernels) cfg.mkp_kernels.push_back(static_cast<int64_t>(k));
  }
  const std::string act = root.take_string("mkp_activation", "silu");
  if (act == "silu") {
    cfg.mkp_activation = Activation::Silu;
  } else if (act == "none") {
    cfg.mkp_activation = Activation::None;
  } else {
    throw ConfigError("mkp_activation: must be \"silu\" or \"none\", got \"" + act + "\"");
  }

  std::vector<double> exports;
  if (root.take_number_array("export_stages", exports)) {
    for (double e : exports) cfg.export_stages.push_back(static_cast<int64_t>(e));
  }
  root.finish();

  for (const auto& [name, table] : doc.tables) {
    if (name != "stem") throw ConfigError("unknown table [" + name + "] (line " + std::to_string(table.line) + ")");
  }
  cfg.stem_channels = 0;
  if (auto it = doc.tables.find("stem"); it != doc.tables.end()) {
    detail::TableReader stem(it->second, "stem.");
    cfg.stem_channels = stem.take_int("out_channels", 0);
    stem.finish();
  }

  for (const auto& name : doc.table_array_order) {
    if (name != "stage") {
      throw ConfigError("unknown table array [[" + name + "]] (line " +
                        std::to_string(doc.table_arrays.at(name).front().line) + ")");
    }
  }
  auto stage_tables = doc.table_arrays.find("stage");
  if (stage_tables == doc.table_arrays.end() || stage_tables->second.empty()) {
    throw ConfigError("stage: at least one [[stage]] table is required");
  }
  const size_t n_stages = stage_tables->second.size();
  for (size_t i = 0; i < n_stages; ++i) {
    detail::TableReader st(stage_tables->second[i], "stage[" + std::to_string(i + 1) + "].");
    StageConfig sc;
    sc.out_channels = st.take_int("out_channels", 0);
    sc.num_fcm_blocks = st.take_int("num_fcm_blocks", 1);
    const std::string kind = st.take_string("downsample", "decoupled");
    if (kind == "decoupled") {
      sc.downsample = DownsampleKind::Decoupled;
    } else if (kind == "standard_fused") {
      sc.downsample = DownsampleKind::StandardFused;
    } else {
      throw ConfigError("stage[" + std::to_string(i + 1) +
                        "].downsample: must be \"decoupled\" or \"standard_fused\", got \"" + kind + "\"");
    }
    sc.is_final = st.take_bool("is_final", i + 1 == n_stages);
    st.finish();
    cfg.stages.push_back(sc);
  }

  if (have_alpha) {
    if (alpha.size() != cfg.stages.size()) {
      throw ConfigError("alpha: vector length " + std::to_string(alpha.size()) + " must equal stage count " +
                        std::to_string(cfg.stages.size()));
    }
    for (size_t i = 0; i < alpha.size(); ++i) cfg.stages[i].alpha = alpha[i];
  } else if (cfg.stages.size() == 4) {
    const double defaults[4] = {0.75, 0.75, 0.25, 0.25};
    for (size_t i = 0; i < 4; ++i) cfg.stages[i].alpha = defaults[i];
  } else {
    for (auto& st : cfg.stages) st.alpha = 0.5;
  }

  if (cfg.stem_channels == 0) cfg.stem_channels = std::max<int64_t>(2, cfg.stages.front().out_channels / 2);

  cfg.validate();
  return cfg;
}

inline BackboneConfig load_config_text(const std::string& text) {
  return backbone_config_from_toml(minitoml::parse(text));
}

inline BackboneConfig load_config_file(const std::string& path) { return load_config_text(read_text_file(path)); }

}  // namespace fcmnet
