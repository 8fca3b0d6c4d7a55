#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "petroseg/colorseg.hpp"
#include "petroseg/raster.hpp"

namespace petroseg {

enum class PhantomStyle {
  Treated,  // pink paste, orange voids, gray aggregate (colour-rule baseline)
  Raw,      // untreated surface: textured aggregate, plain paste, orange voids
};

struct PhantomSpec {
  int width = 2000;
  int height = 2000;
  double pitch_um = kDefaultPitchUm;
  double air_fraction = 0.10;
  double paste_fraction = 0.30;
  double void_radius_min_px = 6.0;
  double void_radius_max_px = 30.0;
  double aggregate_feature_px = 160.0;  // coarse length scale of aggregate blobs
  PhantomStyle style = PhantomStyle::Treated;
  bool plant_specks = true;
  std::uint64_t seed = 7;
  std::string id = "phantom";
};

struct Phantom {
  Scan scan;
  PhaseMask truth;
  PhaseFractions fractions;  // exact, from the truth map
  std::vector<std::pair<int, int>> planted_void;       // 3-px void
  std::vector<std::pair<int, int>> planted_aggregate;  // 356-px aggregate speck
};

namespace detail {

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

/// Multi-octave bilinear value noise in roughly [0, 1].
inline std::vector<double> value_noise(int w, int h, double cell, int octaves, std::mt19937_64& rng) {
  std::vector<double> field(static_cast<std::size_t>(w) * h, 0.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double amp = 1.0, norm = 0.0;
  for (int o = 0; o < octaves; ++o) {
    const double c = std::max(2.0, cell / std::pow(2.0, o));
    const int gw = static_cast<int>(std::ceil(w / c)) + 2;
    const int gh = static_cast<int>(std::ceil(h / c)) + 2;
    std::vector<double> grid(static_cast<std::size_t>(gw) * gh);
    for (auto& g : grid) g = u(rng);
    for (int y = 0; y < h; ++y) {
      const double fy = y / c;
      const int iy = static_cast<int>(fy);
      const double ty = smoothstep(fy - iy);
      for (int x = 0; x < w; ++x) {
        const double fx = x / c;
        const int ix = static_cast<int>(fx);
        const double tx = smoothstep(fx - ix);
        auto g = [&](int gx, int gy) { return grid[static_cast<std::size_t>(gy) * gw + gx]; };
        const double v = (1 - ty) * ((1 - tx) * g(ix, iy) + tx * g(ix + 1, iy)) +
                         ty * ((1 - tx) * g(ix, iy + 1) + tx * g(ix + 1, iy + 1));
        field[static_cast<std::size_t>(y) * w + x] += amp * v;
      }
    }
    norm += amp;
    amp *= 0.5;
  }
  for (auto& v : field) v /= norm;
  return field;
}

inline std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

inline bool window_is(const std::vector<PhaseLabel>& m, int w, int x0, int y0, int size, PhaseLabel l) {
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0; x < x0 + size; ++x)
      if (m[static_cast<std::size_t>(y) * w + x] != l) return false;
  return true;
}

}  // namespace detail

/// Synthetic section with known phase geometry: thresholded value-noise
/// aggregate, disc-shaped voids packed into the paste, optional planted
/// specks that straddle the default area-filter thresholds.
inline Phantom make_phantom(const PhantomSpec& spec) {
  if (spec.width < 32 || spec.height < 32) throw input_error("phantom must be at least 32x32 px");
  if (!(spec.air_fraction > 0 && spec.paste_fraction > 0 &&
        spec.air_fraction + spec.paste_fraction < 1.0)) {
    throw config_error("phantom fractions must be positive and sum below 1");
  }
  const int W = spec.width, H = spec.height;
  const std::size_t N = static_cast<std::size_t>(W) * H;
  std::mt19937_64 rng(spec.seed);

  // Aggregate: top quantile of a smooth noise field.
  auto field = detail::value_noise(W, H, spec.aggregate_feature_px, 3, rng);
  std::vector<double> sorted(field);
  const double agg_target = 1.0 - spec.air_fraction - spec.paste_fraction;
  const std::size_t q = static_cast<std::size_t>(std::floor((1.0 - agg_target) * (N - 1)));
  std::nth_element(sorted.begin(), sorted.begin() + q, sorted.end());
  const double threshold = sorted[q];
  std::vector<PhaseLabel> labels(N);
  for (std::size_t i = 0; i < N; ++i) {
    labels[i] = field[i] > threshold ? PhaseLabel::Aggregate : PhaseLabel::Paste;
  }
  {
    // Drop aggregate fragments the default area filter would remove anyway.
    PhaseMask tmp(W, H, spec.pitch_um, labels);
    AreaFilterSpec f;
    f.min_area_um2 = {{PhaseLabel::Aggregate, 1.5 * 10000.0}};
    const PhaseMask cleaned = filter_small_components(tmp, f);
    labels.assign(cleaned.labels().begin(), cleaned.labels().end());
  }

  // Voids: non-overlapping discs fully inside paste, 2 px clearance.
  const auto void_target = static_cast<std::size_t>(std::llround(spec.air_fraction * N));
  std::size_t void_px = 0;
  std::uniform_real_distribution<double> ux(0.0, W - 1.0), uy(0.0, H - 1.0);
  std::uniform_real_distribution<double> ur(spec.void_radius_min_px, spec.void_radius_max_px);
  for (int attempt = 0; attempt < 400000 && void_px < void_target; ++attempt) {
    double r = ur(rng);
    const double remaining = static_cast<double>(void_target - void_px);
    if (M_PI * r * r > remaining) r = std::max(1.0, std::sqrt(remaining / M_PI));
    const double cx = ux(rng), cy = uy(rng);
    const int x0 = static_cast<int>(std::floor(cx - r - 2)), x1 = static_cast<int>(std::ceil(cx + r + 2));
    const int y0 = static_cast<int>(std::floor(cy - r - 2)), y1 = static_cast<int>(std::ceil(cy + r + 2));
    if (x0 < 0 || y0 < 0 || x1 >= W || y1 >= H) continue;
    bool ok = true;
    const double rr = (r + 2) * (r + 2);
    for (int y = y0; y <= y1 && ok; ++y)
      for (int x = x0; x <= x1 && ok; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        if (d2 <= rr && labels[static_cast<std::size_t>(y) * W + x] != PhaseLabel::Paste) ok = false;
      }
    if (!ok) continue;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        if (d2 <= r * r) {
          labels[static_cast<std::size_t>(y) * W + x] = PhaseLabel::Void;
          ++void_px;
        }
      }
  }

  Phantom ph{Scan(spec.id, 1, 1, spec.pitch_um, {Rgb{}}),
             PhaseMask(1, 1, spec.pitch_um, {PhaseLabel::Paste}),
             {},
             {},
             {}};

  if (spec.plant_specks) {
    // Scan deterministic candidate windows for clear paste.
    auto find_paste_window = [&](int size, int skip_x, int skip_y) -> std::optional<std::pair<int, int>> {
      for (int y = 4; y + size + 4 < H; y += 3)
        for (int x = 4; x + size + 4 < W; x += 3) {
          if (std::abs(x - skip_x) < 40 && std::abs(y - skip_y) < 40) continue;
          if (detail::window_is(labels, W, x, y, size, PhaseLabel::Paste)) return std::make_pair(x, y);
        }
      return std::nullopt;
    };
    if (auto at = find_paste_window(27, -1000, -1000)) {
      // 19x19 square minus five pixels: 356 px.
      const int ox = at->first + 4, oy = at->second + 4;
      for (int y = 0; y < 19; ++y)
        for (int x = 0; x < 19; ++x) {
          const bool removed = (y == 0 && x < 3) || (y == 18 && x > 16);
          if (removed) continue;
          labels[static_cast<std::size_t>(oy + y) * W + ox + x] = PhaseLabel::Aggregate;
          ph.planted_aggregate.emplace_back(ox + x, oy + y);
        }
      if (auto v = find_paste_window(7, ox, oy)) {
        const int vx = v->first + 3, vy = v->second + 3;
        for (auto [dx, dy] : {std::pair{0, 0}, std::pair{1, 0}, std::pair{0, 1}}) {
          labels[static_cast<std::size_t>(vy + dy) * W + vx + dx] = PhaseLabel::Void;
          ph.planted_void.emplace_back(vx + dx, vy + dy);
        }
      }
    }
  }

  // Render colours.
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Rgb> px(N);
  auto tone = detail::value_noise(W, H, 24.0, 3, rng);
  auto grain = detail::value_noise(W, H, 6.0, 2, rng);
  for (std::size_t i = 0; i < N; ++i) {
    const double t = tone[i] - 0.5, g = grain[i] - 0.5;
    double r, gg, b;
    switch (labels[i]) {
      case PhaseLabel::Aggregate:
        if (spec.style == PhantomStyle::Treated) {
          const double v = 175.0 + 50.0 * t;
          r = v + 4.0 * noise(rng);
          gg = v + 4.0 * noise(rng);
          b = v + 4.0 * noise(rng);
        } else {
          const double v = 120.0 + 90.0 * t + 50.0 * g;
          r = v + 8.0 + 6.0 * noise(rng);
          gg = v + 2.0 + 6.0 * noise(rng);
          b = v - 6.0 + 6.0 * noise(rng);
        }
        break;
      case PhaseLabel::Paste:
        if (spec.style == PhantomStyle::Treated) {
          r = 225.0 + 10.0 * t + 4.0 * noise(rng);
          gg = 120.0 + 10.0 * t + 4.0 * noise(rng);
          b = 190.0 + 10.0 * t + 4.0 * noise(rng);
        } else {
          r = 186.0 + 8.0 * t + 4.0 * noise(rng);
          gg = 180.0 + 8.0 * t + 4.0 * noise(rng);
          b = 168.0 + 8.0 * t + 4.0 * noise(rng);
        }
        break;
      default:
        r = 240.0 + 6.0 * t + 4.0 * noise(rng);
        gg = 150.0 + 6.0 * t + 4.0 * noise(rng);
        b = 45.0 + 6.0 * t + 4.0 * noise(rng);
        break;
    }
    px[i] = {detail::clamp_byte(r), detail::clamp_byte(gg), detail::clamp_byte(b)};
  }

  ph.scan = Scan(spec.id, W, H, spec.pitch_um, std::move(px));
  ph.truth = PhaseMask(W, H, spec.pitch_um, std::move(labels));
  ph.fractions = phase_fractions(ph.truth);
  return ph;
}

}  // namespace petroseg
