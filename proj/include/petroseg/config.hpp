#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "petroseg/c457.hpp"
#include "petroseg/colorseg.hpp"
#include "petroseg/net/train.hpp"
#include "petroseg/raster.hpp"

namespace petroseg {

/// Lower-case phase name used in config keys (aggregate, paste, void).
inline std::string phase_key_name(PhaseLabel l) {
  std::string s(label_name(l));
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s == "agg" ? "aggregate" : s;
}

/// All tunables of the command-line tool.
struct ToolConfig {
  double pitch_um = kDefaultPitchUm;
  int grid_rows = 100;
  int grid_cols = 100;
  AreaFilterSpec filter;
  std::vector<ColorRule> rules = default_color_rules();
  net::TrainConfig train;
  int predict_tile = 256;
  int predict_overlap = 32;
  double traverse_spacing_um = 6000.0;
  bool traverse_include_border = true;
  int serve_port = 8080;
  std::string out_dir = ".";

  void validate() const {
    if (!(pitch_um > 0.0)) throw config_error("pitch_um must be > 0");
    if (grid_rows < 1 || grid_cols < 1) throw config_error("grid.rows and grid.cols must be >= 1");
    for (const auto& [phase, area] : filter.min_area_um2) {
      const std::string key = "filter." + phase_key_name(phase) + "_min_um2";
      if (!(area >= 0.0)) throw config_error(key + " must be >= 0");
      if (phase == filter.target) throw config_error(key + " is set but the phase is also filter.target");
    }
    if (filter.connectivity != 4 && filter.connectivity != 8) {
      throw config_error("filter.connectivity must be 4 or 8");
    }
    validate_rules(rules);
    train.validate();
    if (predict_tile < net::kMinCrop) {
      throw config_error("predict.tile must be >= " + std::to_string(net::kMinCrop));
    }
    if (predict_overlap < 0 || predict_tile <= 2 * predict_overlap) {
      throw config_error("predict.overlap must be >= 0 and predict.tile > 2 * predict.overlap");
    }
    if (!(traverse_spacing_um > 0.0)) throw config_error("traverse.spacing_um must be > 0");
    if (serve_port < 0 || serve_port > 65535) throw config_error("serve.port must be in [0, 65535]");
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_real(std::string_view key, std::string_view text) {
  double v = 0.0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc{} || r.ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw config_error(std::string(key) + ": expected a number, got '" + std::string(text) + "'");
  }
  return v;
}

template <class Int>
Int parse_integer(std::string_view key, std::string_view text) {
  Int v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc{} || r.ptr != text.data() + text.size()) {
    throw config_error(std::string(key) + ": expected an integer, got '" + std::string(text) + "'");
  }
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw config_error(std::string(key) + ": expected true or false, got '" + std::string(text) + "'");
}

inline std::pair<double, double> parse_range(std::string_view key, std::string_view text) {
  const auto comma = text.find(',');
  if (comma == std::string_view::npos) {
    throw config_error(std::string(key) + ": expected 'min, max', got '" + std::string(text) + "'");
  }
  return {parse_real(key, trim(text.substr(0, comma))), parse_real(key, trim(text.substr(comma + 1)))};
}


struct KeyDef {
  std::string name;
  std::function<std::string(const ToolConfig&)> get;
  std::function<void(ToolConfig&, std::string_view)> set;
};

inline std::function<void(ToolConfig&, std::string_view)> set_area(PhaseLabel phase, std::string key) {
  return [phase, key](ToolConfig& c, std::string_view v) {
    const double a = parse_real(key, v);
    if (a == 0.0) {
      c.filter.min_area_um2.erase(phase);
    } else {
      c.filter.min_area_um2[phase] = a;
    }
  };
}

inline std::function<std::string(const ToolConfig&)> get_area(PhaseLabel phase) {
  return [phase](const ToolConfig& c) {
    const auto it = c.filter.min_area_um2.find(phase);
    return format_number(it == c.filter.min_area_um2.end() ? 0.0 : it->second);
  };
}

#define PETROSEG_KEY_REAL(NAME, FIELD)                                    \
  KeyDef{NAME, [](const ToolConfig& c) { return format_number(c.FIELD); }, \
         [](ToolConfig& c, std::string_view v) { c.FIELD = parse_real(NAME, v); }}
#define PETROSEG_KEY_INT(NAME, FIELD)                                         \
  KeyDef{NAME, [](const ToolConfig& c) { return std::to_string(c.FIELD); }, \
         [](ToolConfig& c, std::string_view v) { c.FIELD = parse_integer<decltype(c.FIELD)>(NAME, v); }}

inline const std::vector<KeyDef>& scalar_keys() {
  static const std::vector<KeyDef> keys = {
      PETROSEG_KEY_REAL("pitch_um", pitch_um),
      PETROSEG_KEY_INT("grid.rows", grid_rows),
      PETROSEG_KEY_INT("grid.cols", grid_cols),
      KeyDef{"filter.aggregate_min_um2", get_area(PhaseLabel::Aggregate),
             set_area(PhaseLabel::Aggregate, "filter.aggregate_min_um2")},
      KeyDef{"filter.paste_min_um2", get_area(PhaseLabel::Paste),
             set_area(PhaseLabel::Paste, "filter.paste_min_um2")},
      KeyDef{"filter.void_min_um2", get_area(PhaseLabel::Void), set_area(PhaseLabel::Void, "filter.void_min_um2")},
      KeyDef{"filter.target", [](const ToolConfig& c) { return phase_key_name(c.filter.target); },
             [](ToolConfig& c, std::string_view v) {
               const auto l = parse_label(std::string(v));
               if (!l || *l == PhaseLabel::Unlabeled) {
                 throw config_error("filter.target: unknown phase '" + std::string(v) + "'");
               }
               c.filter.target = *l;
             }},
      PETROSEG_KEY_INT("filter.connectivity", filter.connectivity),
      PETROSEG_KEY_INT("train.iterations", train.iterations),
      PETROSEG_KEY_INT("train.batch", train.batch),
      PETROSEG_KEY_INT("train.crop", train.crop),
      PETROSEG_KEY_REAL("train.lr", train.learning_rate),
      PETROSEG_KEY_REAL("train.momentum", train.momentum),
      PETROSEG_KEY_REAL("train.ce_weight", train.weights.cross_entropy),
      PETROSEG_KEY_REAL("train.lovasz_weight", train.weights.lovasz),
      PETROSEG_KEY_INT("train.seed", train.seed),
      PETROSEG_KEY_INT("train.snapshot_period", train.snapshot_period),
      PETROSEG_KEY_INT("train.snapshot_crops", train.snapshot_crops),
      PETROSEG_KEY_INT("train.base_channels", train.base_channels),
      PETROSEG_KEY_REAL("train.scale_min", train.jitter.min_scale),
      PETROSEG_KEY_REAL("train.scale_max", train.jitter.max_scale),
      PETROSEG_KEY_INT("predict.tile", predict_tile),
      PETROSEG_KEY_INT("predict.overlap", predict_overlap),
      PETROSEG_KEY_REAL("traverse.spacing_um", traverse_spacing_um),
      KeyDef{"traverse.include_border",
             [](const ToolConfig& c) { return std::string(c.traverse_include_border ? "true" : "false"); },
             [](ToolConfig& c, std::string_view v) {
               c.traverse_include_border = parse_bool("traverse.include_border", v);
             }},
      PETROSEG_KEY_INT("serve.port", serve_port),
      KeyDef{"io.out_dir", [](const ToolConfig& c) { return c.out_dir; },
             [](ToolConfig& c, std::string_view v) {
               if (v.empty()) throw config_error("io.out_dir must not be empty");
               c.out_dir = std::string(v);
             }},
  };
  return keys;
}

#undef PETROSEG_KEY_REAL
#undef PETROSEG_KEY_INT

inline constexpr const char* kRuleFields[] = {"hue", "sat", "val", "priority"};

}  // namespace detail

/// Parses `key = value` lines. `#` starts a comment. If any `rule.*` key is
/// present the rule set is replaced by the rules given, and each listed
/// phase must define hue, sat and priority (val defaults to 0, 1).
inline ToolConfig parse_config(std::string_view text, const std::string& source = "config") {
  ToolConfig cfg;
  std::map<std::string, std::string> seen;
  std::map<std::string, std::map<std::string, std::string>> rule_fields;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw config_error(where + ": expected 'key = value'");
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string value(detail::trim(line.substr(eq + 1)));
    if (key.empty()) throw config_error(where + ": empty key");
    if (!seen.emplace(key, value).second) throw config_error(where + ": duplicate key '" + key + "'");
    if (key.rfind("rule.", 0) == 0) {
      const auto dot = key.find('.', 5);
      const std::string phase = dot == std::string::npos ? "" : key.substr(5, dot - 5);
      const std::string field = dot == std::string::npos ? "" : key.substr(dot + 1);
      const auto l = parse_label(phase);
      const bool known_field = std::find(std::begin(detail::kRuleFields), std::end(detail::kRuleFields),
                                         field) != std::end(detail::kRuleFields);
      if (!l || *l == PhaseLabel::Unlabeled || !known_field) {
        throw config_error(where + ": unknown key '" + key + "'");
      }
      rule_fields[phase_key_name(*l)][field] = value;
      continue;
    }
    const auto& keys = detail::scalar_keys();
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& k) { return k.name == key; });
    if (it == keys.end()) throw config_error(where + ": unknown key '" + key + "'");
    it->set(cfg, value);
  }
  if (!rule_fields.empty()) {
    cfg.rules.clear();
    for (const auto& [phase, fields] : rule_fields) {
      const std::string prefix = "rule." + phase + ".";
      for (const char* req : {"hue", "sat", "priority"}) {
        if (!fields.count(req)) {
          throw config_error(source + ": missing key '" + prefix + req + "' for the " + phase + " rule");
        }
      }
      ColorRule r;
      r.phase = *parse_label(phase);
      const auto [h0, h1] = detail::parse_range(prefix + "hue", fields.at("hue"));
      r.hue = {h0, h1};
      const auto [s0, s1] = detail::parse_range(prefix + "sat", fields.at("sat"));
      r.sat = {s0, s1};
      if (fields.count("val")) {
        const auto [v0, v1] = detail::parse_range(prefix + "val", fields.at("val"));
        r.val = {v0, v1};
      }
      r.priority = detail::parse_integer<int>(prefix + "priority", fields.at("priority"));
      cfg.rules.push_back(r);
    }
    std::sort(cfg.rules.begin(), cfg.rules.end(), [](const ColorRule& a, const ColorRule& b) {
      return a.priority < b.priority;
    });
  }
  cfg.validate();
  return cfg;
}

inline ToolConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw config_error("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path.string());
}

/// Renders every key; `parse_config(config_text(c))` reproduces `c`.
inline std::string config_text(const ToolConfig& cfg) {
  std::string out;
  for (const auto& k : detail::scalar_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  for (const auto& r : cfg.rules) {
    const std::string prefix = "rule." + phase_key_name(r.phase) + ".";
    out += prefix + "hue = " + detail::format_number(r.hue.min) + ", " + detail::format_number(r.hue.max) + "\n";
    out += prefix + "sat = " + detail::format_number(r.sat.min) + ", " + detail::format_number(r.sat.max) + "\n";
    out += prefix + "val = " + detail::format_number(r.val.min) + ", " + detail::format_number(r.val.max) + "\n";
    out += prefix + "priority = " + std::to_string(r.priority) + "\n";
  }
  return out;
}

}  // namespace petroseg
