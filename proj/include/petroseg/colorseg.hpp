#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "petroseg/raster.hpp"

namespace petroseg {

struct Hsv {
  double h = 0.0;  // degrees in [0, 360)
  double s = 0.0;  // [0, 1]
  double v = 0.0;  // [0, 1]
};

/// Hexcone conversion. Achromatic pixels get hue 0 and saturation 0.
inline Hsv to_hsv(Rgb c) {
  const double r = c.r / 255.0, g = c.g / 255.0, b = c.b / 255.0;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  Hsv out;
  out.v = mx;
  if (delta <= 0.0) return out;
  out.s = mx > 0.0 ? delta / mx : 0.0;
  double h;
  if (mx == r) {
    h = 60.0 * std::fmod((g - b) / delta, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / delta + 2.0);
  } else {
    h = 60.0 * ((r - g) / delta + 4.0);
  }
  if (h < 0.0) h += 360.0;
  if (h >= 360.0) h -= 360.0;
  out.h = h;
  return out;
}

struct Interval {
  double min = 0.0;
  double max = 1.0;

  bool contains(double x) const { return x >= min && x <= max; }
  bool overlaps(const Interval& o) const { return min <= o.max && o.min <= max; }
};

/// Hue interval in degrees. `min > max` denotes a range wrapping through 0°.
struct HueInterval {
  double min = 0.0;
  double max = 360.0;

  bool wraps() const { return min > max; }
  bool contains(double h) const {
    return wraps() ? (h >= min || h <= max) : (h >= min && h <= max);
  }
  bool overlaps(const HueInterval& o) const {
    auto pieces = [](const HueInterval& hi) {
      std::vector<Interval> out;
      if (hi.wraps()) {
        out.push_back({hi.min, 360.0});
        out.push_back({0.0, hi.max});
      } else {
        out.push_back({hi.min, hi.max});
      }
      return out;
    };
    for (const auto& a : pieces(*this)) {
      for (const auto& b : pieces(o)) {
        if (a.overlaps(b)) return true;
      }
    }
    return false;
  }
};

struct ColorRule {
  PhaseLabel phase = PhaseLabel::Paste;
  HueInterval hue;
  Interval sat;
  Interval val;
  int priority = 0;

  bool matches(const Hsv& c) const {
    return hue.contains(c.h) && sat.contains(c.s) && val.contains(c.v);
  }
};

/// Defaults tuned on the synthetic phantom; real scans need recalibration.
inline std::vector<ColorRule> default_color_rules() {
  return {
      ColorRule{PhaseLabel::Void, {20.0, 45.0}, {0.3, 1.0}, {0.0, 1.0}, 1},
      ColorRule{PhaseLabel::Paste, {300.0, 350.0}, {0.15, 1.0}, {0.0, 1.0}, 2},
  };
}

inline void validate_rules(const std::vector<ColorRule>& rules) {
  if (rules.empty()) throw config_error("color rule list is empty");
  for (const auto& r : rules) {
    if (r.phase == PhaseLabel::Unlabeled) {
      throw config_error("color rule cannot target UNLABELED");
    }
    if (r.sat.min > r.sat.max || r.val.min > r.val.max) {
      throw config_error("color rule for " + std::string(label_name(r.phase)) +
                         " has min > max in sat/val");
    }
    if (r.hue.min < 0.0 || r.hue.min > 360.0 || r.hue.max < 0.0 || r.hue.max > 360.0) {
      throw config_error("color rule for " + std::string(label_name(r.phase)) +
                         " has hue outside [0, 360]");
    }
  }
  for (std::size_t i = 0; i < rules.size(); ++i) {
    for (std::size_t j = i + 1; j < rules.size(); ++j) {
      const auto& a = rules[i];
      const auto& b = rules[j];
      if (a.priority == b.priority && a.hue.overlaps(b.hue) &&
          a.sat.overlaps(b.sat) && a.val.overlaps(b.val)) {
        throw config_error("color rules for " + std::string(label_name(a.phase)) +
                           " and " + std::string(label_name(b.phase)) +
                           " share priority " + std::to_string(a.priority) +
                           " and overlap");
      }
    }
  }
}

inline PhaseLabel classify_color(Rgb c, const std::vector<ColorRule>& sorted_rules) {
  const Hsv hsv = to_hsv(c);
  for (const auto& r : sorted_rules) {
    if (r.matches(hsv)) return r.phase;
  }
  return PhaseLabel::Aggregate;
}

/// Per-pixel rule classification; unmatched pixels fall back to Aggregate.
inline PhaseMask segment_by_color(const Scan& scan, std::vector<ColorRule> rules) {
  validate_rules(rules);
  std::stable_sort(rules.begin(), rules.end(),
                   [](const ColorRule& a, const ColorRule& b) { return a.priority < b.priority; });
  std::vector<PhaseLabel> labels(scan.pixels().size());
  std::transform(scan.pixels().begin(), scan.pixels().end(), labels.begin(),
                 [&](Rgb c) { return classify_color(c, rules); });
  return PhaseMask(scan.width(), scan.height(), scan.pitch(), std::move(labels));
}

struct Component {
  PhaseLabel phase = PhaseLabel::Void;
  std::size_t pixel_count = 0;
  double area_um2 = 0.0;
  Rect bounds;
  int seed_x = 0;
  int seed_y = 0;
};

namespace detail {

// Labels every component of `phase`; returns component ids per pixel (-1 for
// other phases) and the component descriptors in row-major seed order.
inline std::vector<Component> label_components(const PhaseMask& mask, PhaseLabel phase,
                                               int connectivity, std::vector<int>* ids_out) {
  if (connectivity != 4 && connectivity != 8) {
    throw config_error("connectivity must be 4 or 8, got " + std::to_string(connectivity));
  }
  const int w = mask.width(), h = mask.height();
  const auto labels = mask.labels();
  std::vector<int> ids(labels.size(), -1);
  std::vector<Component> comps;
  std::vector<int> stack;
  const double px_area = mask.pitch() * mask.pitch();
  static constexpr int dx8[] = {1, -1, 0, 0, 1, 1, -1, -1};
  static constexpr int dy8[] = {0, 0, 1, -1, 1, -1, 1, -1};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (labels[i] != phase || ids[i] >= 0) continue;
      const int id = static_cast<int>(comps.size());
      Component c;
      c.phase = phase;
      c.seed_x = x;
      c.seed_y = y;
      int x0 = x, x1 = x, y0 = y, y1 = y;
      ids[i] = id;
      stack.push_back(static_cast<int>(i));
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int px = p % w, py = p / w;
        ++c.pixel_count;
        x0 = std::min(x0, px);
        x1 = std::max(x1, px);
        y0 = std::min(y0, py);
        y1 = std::max(y1, py);
        for (int k = 0; k < connectivity; ++k) {
          const int nx = px + dx8[k], ny = py + dy8[k];
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
          if (labels[ni] == phase && ids[ni] < 0) {
            ids[ni] = id;
            stack.push_back(static_cast<int>(ni));
          }
        }
      }
      c.bounds = {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
      c.area_um2 = static_cast<double>(c.pixel_count) * px_area;
      comps.push_back(c);
    }
  }
  if (ids_out) *ids_out = std::move(ids);
  return comps;
}

}  // namespace detail

inline std::vector<Component> connected_components(const PhaseMask& mask, PhaseLabel phase,
                                                   int connectivity = 8) {
  return detail::label_components(mask, phase, connectivity, nullptr);
}

struct AreaFilterSpec {
  /// Minimum component area per phase; phases without an entry are untouched.
  std::map<PhaseLabel, double> min_area_um2 = {{PhaseLabel::Aggregate, 10000.0},
                                               {PhaseLabel::Void, 100.0}};
  PhaseLabel target = PhaseLabel::Paste;
  int connectivity = 8;
};

/// Relabels components strictly smaller than their phase's threshold. All
/// components are measured on the input mask.
inline PhaseMask filter_small_components(const PhaseMask& mask, const AreaFilterSpec& spec = {}) {
  for (const auto& [phase, area] : spec.min_area_um2) {
    if (area < 0.0) throw config_error("area thresholds must be non-negative");
    if (phase == spec.target) {
      throw config_error("area filter target equals filtered phase " +
                         std::string(label_name(phase)));
    }
  }
  std::vector<PhaseLabel> out(mask.labels().begin(), mask.labels().end());
  for (const auto& [phase, min_area] : spec.min_area_um2) {
    std::vector<int> ids;
    auto comps = detail::label_components(mask, phase, spec.connectivity, &ids);
    std::vector<char> drop(comps.size(), 0);
    bool any = false;
    for (std::size_t k = 0; k < comps.size(); ++k) {
      if (comps[k].area_um2 < min_area) {
        drop[k] = 1;
        any = true;
      }
    }
    if (!any) continue;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] >= 0 && drop[ids[i]]) out[i] = spec.target;
    }
  }
  return PhaseMask(mask.width(), mask.height(), mask.pitch(), std::move(out));
}

}  // namespace petroseg
