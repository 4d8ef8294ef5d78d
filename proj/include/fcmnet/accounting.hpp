#pragma once

// Exact parameter and multiply-accumulate accounting. Every entry's count is
// computed twice: from the layer's closed form and from the element count of
// its constructed tensors; any disagreement is an audit failure naming the
// layer. FLOPs are reported both as MACs and as 2x MACs since reporting
// conventions differ.

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fcmnet/backbone.hpp"

namespace fcmnet {

/// Fused stride-2 3x3 downsample weight count: k*k*C1*C2 (bias excluded).
inline int64_t count_params_standard(int64_t c1, int64_t c2, int64_t k) {
  if (c1 < 1 || c2 < 1 || k < 1) throw ConfigError("count_params_standard: arguments must be positive");
  return k * k * c1 * c2;
}

/// Decoupled downsample weight count: 3x3 grouped spatial conv plus 1x1
/// expansion, 9*C1*(C1/g) + C1*C2 (bias excluded).
inline int64_t count_params_decoupled(int64_t c1, int64_t c2, int64_t g) {
  if (c1 < 1 || c2 < 1 || g < 1) throw ConfigError("count_params_decoupled: arguments must be positive");
  if (c1 % g != 0) {
    throw ConfigError("count_params_decoupled: groups=" + std::to_string(g) + " must divide C1=" + std::to_string(c1));
  }
  return 9 * c1 * (c1 / g) + c1 * c2;
}

struct CountEntry {
  std::string name;
  std::string kind;  // "conv" | "bn"
  int64_t params = 0;
  int64_t macs = 0;
  Shape4 out{};
};

struct ComparisonRow {
  std::string name;
  int64_t standard_params = 0;
  int64_t decoupled_params = 0;
};

struct CountReport {
  std::vector<CountEntry> entries;
  int64_t total_params = 0;
  int64_t total_macs = 0;
  std::vector<ComparisonRow> comparison;

  int64_t total_flops_2x() const { return 2 * total_macs; }
};

namespace detail {

inline int64_t layer_closed_form_params(const LayerDesc& d) {
  return d.kind == LayerDesc::Kind::Conv ? d.conv.param_count() : 2 * d.bn_channels;
}

// MACs = parameters applied per output position x positions x batch.
inline int64_t layer_macs(const LayerDesc& d) {
  const int64_t per_position = layer_closed_form_params(d);
  return per_position * d.out.h * d.out.w * d.out.n;
}

}  // namespace detail

inline CountReport audit_layers(const std::vector<LayerDesc>& layers) {
  CountReport report;
  for (const LayerDesc& d : layers) {
    const int64_t closed = detail::layer_closed_form_params(d);
    if (closed != d.constructed_params) {
      throw AuditError("audit: layer '" + d.name + "' closed-form parameter count " + std::to_string(closed) +
                       " != constructed element count " + std::to_string(d.constructed_params));
    }
    CountEntry e;
    e.name = d.name;
    e.kind = d.kind == LayerDesc::Kind::Conv ? "conv" : "bn";
    e.params = closed;
    e.macs = detail::layer_macs(d);
    e.out = d.out;
    report.entries.push_back(e);
    report.total_params += e.params;
    report.total_macs += e.macs;
  }
  return report;
}

template <class T>
std::vector<LayerDesc> collect_layers(const Backbone<T>& model, Shape4 input) {
  std::vector<LayerDesc> layers;
  walk_backbone(model, input, [&](const LayerDesc& d) { layers.push_back(d); });
  return layers;
}

template <class T>
CountReport audit_model(const Backbone<T>& model, Shape4 input) {
  return audit_layers(collect_layers(model, input));
}

// Closed-form fused-vs-decoupled rows for every downsampling position of the
// config (the final MKP stage has none).
inline std::vector<ComparisonRow> rr_comparison_rows(const BackboneConfig& cfg) {
  std::vector<ComparisonRow> rows;
  int64_t in_ch = cfg.stem_channels;
  for (size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageConfig& st = cfg.stages[i];
    if (!(st.is_final && cfg.use_mkp)) {
      ComparisonRow row;
      row.name = "stage" + std::to_string(i + 1) + ".down";
      row.standard_params = count_params_standard(in_ch, st.out_channels, 3);
      row.decoupled_params = count_params_decoupled(in_ch, st.out_channels, in_ch);
      rows.push_back(row);
    }
    in_ch = cfg.effective_channels(i);
  }
  return rows;
}

inline std::string format_report(const CountReport& report) {
  size_t name_w = 5;
  for (const auto& e : report.entries) name_w = std::max(name_w, e.name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w + 2)) << "layer" << std::setw(6) << "type" << std::right
     << std::setw(12) << "params" << std::setw(16) << "macs"
     << "  output\n";
  for (const auto& e : report.entries) {
    os << std::left << std::setw(static_cast<int>(name_w + 2)) << e.name << std::setw(6) << e.kind << std::right
       << std::setw(12) << e.params << std::setw(16) << e.macs << "  " << e.out.str() << "\n";
  }
  os << std::left << std::setw(static_cast<int>(name_w + 2)) << "total" << std::setw(6) << "" << std::right
     << std::setw(12) << report.total_params << std::setw(16) << report.total_macs << "\n";
  os << "flops: " << report.total_macs << " (as MACs), " << report.total_flops_2x() << " (as 2*MACs)\n";
  if (!report.comparison.empty()) {
    os << "\ndownsample        standard(fused)   decoupled\n";
    int64_t std_total = 0, dec_total = 0;
    for (const auto& row : report.comparison) {
      os << std::left << std::setw(18) << row.name << std::right << std::setw(15) << row.standard_params
         << std::setw(12) << row.decoupled_params << "\n";
      std_total += row.standard_params;
      dec_total += row.decoupled_params;
    }
    os << std::left << std::setw(18) << "total" << std::right << std::setw(15) << std_total << std::setw(12)
       << dec_total << "\n";
  }
  return os.str();
}

inline nlohmann::json report_to_json(const CountReport& report) {
  nlohmann::json j;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : report.entries) {
    j["entries"].push_back({{"name", e.name},
                            {"kind", e.kind},
                            {"params", e.params},
                            {"macs", e.macs},
                            {"out_shape", {e.out.n, e.out.c, e.out.h, e.out.w}}});
  }
  j["totals"] = {{"params", report.total_params}, {"macs", report.total_macs}, {"flops_2x", report.total_flops_2x()}};
  if (!report.comparison.empty()) {
    j["comparison"] = nlohmann::json::array();
    for (const auto& row : report.comparison) {
      j["comparison"].push_back(
          {{"name", row.name}, {"standard_params", row.standard_params}, {"decoupled_params", row.decoupled_params}});
    }
  }
  return j;
}

inline CountReport report_from_json(const nlohmann::json& j) {
  CountReport report;
  for (const auto& e : j.at("entries")) {
    CountEntry entry;
    entry.name = e.at("name").get<std::string>();
    entry.kind = e.at("kind").get<std::string>();
    entry.params = e.at("params").get<int64_t>();
    entry.macs = e.at("macs").get<int64_t>();
    const auto& s = e.at("out_shape");
    entry.out = Shape4{s.at(0).get<int64_t>(), s.at(1).get<int64_t>(), s.at(2).get<int64_t>(), s.at(3).get<int64_t>()};
    report.entries.push_back(entry);
  }
  report.total_params = j.at("totals").at("params").get<int64_t>();
  report.total_macs = j.at("totals").at("macs").get<int64_t>();
  if (j.contains("comparison")) {
    for (const auto& r : j.at("comparison")) {
      ComparisonRow row;
      row.name = r.at("name").get<std::string>();
      row.standard_params = r.at("standard_params").get<int64_t>();
      row.decoupled_params = r.at("decoupled_params").get<int64_t>();
      report.comparison.push_back(row);
    }
  }
  return report;
}

}  // namespace fcmnet
