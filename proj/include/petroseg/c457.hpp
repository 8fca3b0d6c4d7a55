#pragma once

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "petroseg/raster.hpp"

namespace petroseg::c457 {

/// Paste-air ratio at which the Powers spacing-factor formula switches branch.
inline constexpr double kPowersRatioThreshold = 4.342;

struct GridPoint {
  int row = 0;
  int col = 0;
  int x = 0;
  int y = 0;
};

/// Orthogonal point-count grid with cell-centre placement.
struct GridSpec {
  int rows = 100;
  int cols = 100;
  int width = 0;   // host raster, px
  int height = 0;  // host raster, px
  std::vector<GridPoint> points;  // row-major

  std::size_t size() const { return points.size(); }
  const GridPoint& point(int row, int col) const {
    return points[static_cast<std::size_t>(row) * cols + col];
  }
};

inline GridSpec make_grid(int width, int height, int rows = 100, int cols = 100) {
  if (rows < 1 || cols < 1) {
    throw config_error("grid must have at least one row and column");
  }
  if (width < cols || height < rows) {
    throw input_error("raster " + std::to_string(width) + "x" + std::to_string(height) +
                      " is too small for a " + std::to_string(rows) + "x" +
                      std::to_string(cols) + " grid");
  }
  GridSpec g;
  g.rows = rows;
  g.cols = cols;
  g.width = width;
  g.height = height;
  g.points.reserve(static_cast<std::size_t>(rows) * cols);
  // nearest pixel, exact halves round down
  auto nearest = [](double v) { return static_cast<int>(std::ceil(v - 0.5)); };
  for (int i = 0; i < rows; ++i) {
    const int y = nearest((i + 0.5) * height / rows);
    for (int j = 0; j < cols; ++j) {
      g.points.push_back({i, j, nearest((j + 0.5) * width / cols), y});
    }
  }
  return g;
}

struct PointCountResult {
  std::size_t aggregate = 0;
  std::size_t paste = 0;
  std::size_t air = 0;
  std::size_t total = 0;
};

inline PointCountResult point_count(const PhaseMask& mask, const GridSpec& grid) {
  if (grid.width != mask.width() || grid.height != mask.height()) {
    throw input_error("grid was built for a different raster size");
  }
  PointCountResult r;
  std::vector<std::string> bad;
  for (const auto& p : grid.points) {
    switch (mask.at(p.x, p.y)) {
      case PhaseLabel::Aggregate:
        ++r.aggregate;
        break;
      case PhaseLabel::Paste:
        ++r.paste;
        break;
      case PhaseLabel::Void:
        ++r.air;
        break;
      case PhaseLabel::Unlabeled:
        if (bad.size() < 10) {
          bad.push_back("(" + std::to_string(p.row) + "," + std::to_string(p.col) + ")");
        } else if (bad.size() == 10) {
          bad.push_back("...");
        }
        break;
    }
  }
  if (!bad.empty()) {
    std::string list;
    for (const auto& b : bad) list += (list.empty() ? "" : " ") + b;
    throw input_error("grid points land on UNLABELED pixels: " + list);
  }
  r.total = r.aggregate + r.paste + r.air;
  return r;
}

/// Horizontal traverse lines spaced `spacing_um` apart, first line at half spacing.
struct TraverseSpec {
  double spacing_um = 6000.0;
  bool include_border_chords = true;
  std::vector<int> line_y;
  double total_length_mm = 0.0;
};

inline TraverseSpec make_traverse(const PhaseMask& mask, double spacing_um = 6000.0,
                                  bool include_border_chords = true) {
  if (!(spacing_um > 0.0)) throw config_error("traverse spacing must be positive");
  TraverseSpec t;
  t.spacing_um = spacing_um;
  t.include_border_chords = include_border_chords;
  const double spacing_px = spacing_um / mask.pitch();
  for (int k = 0;; ++k) {
    const double y = (k + 0.5) * spacing_px;
    const int row = static_cast<int>(std::floor(y));
    if (row >= mask.height()) break;
    t.line_y.push_back(row);
  }
  if (t.line_y.empty()) t.line_y.push_back(mask.height() / 2);
  t.total_length_mm = static_cast<double>(t.line_y.size()) * mask.width() * mask.pitch() / 1000.0;
  return t;
}

struct ChordSet {
  std::vector<std::vector<double>> chords_um;  // per traverse line
  std::size_t count = 0;                        // N
  double air_length_mm = 0.0;                   // T_a
};

/// Maximal horizontal void runs along each traverse line.
inline ChordSet extract_chords(const PhaseMask& mask, const TraverseSpec& traverse) {
  ChordSet out;
  double air_px = 0.0;
  for (int y : traverse.line_y) {
    if (y < 0 || y >= mask.height()) {
      throw input_error("traverse line y=" + std::to_string(y) + " outside raster");
    }
    std::vector<double> line;
    int x = 0;
    const int w = mask.width();
    while (x < w) {
      if (mask.at(x, y) != PhaseLabel::Void) {
        ++x;
        continue;
      }
      const int start = x;
      while (x < w && mask.at(x, y) == PhaseLabel::Void) ++x;
      const bool touches_border = start == 0 || x == w;
      if (touches_border && !traverse.include_border_chords) continue;
      const int run = x - start;
      line.push_back(run * mask.pitch());
      air_px += run;
    }
    out.count += line.size();
    out.chords_um.push_back(std::move(line));
  }
  out.air_length_mm = air_px * mask.pitch() / 1000.0;
  return out;
}

struct AirVoidReport {
  double air_pct = 0.0;
  double paste_pct = 0.0;
  double aggregate_pct = 0.0;
  std::optional<double> void_frequency;   // n, 1/mm
  std::optional<double> specific_surface; // alpha, 1/mm
  std::optional<double> mean_chord_mm;    // l-bar
  std::optional<double> spacing_factor_mm;
  PointCountResult points;
  std::size_t chord_count = 0;
  double air_length_mm = 0.0;
  double traverse_length_mm = 0.0;
};

/// Powers spacing factor in mm; air and paste as volume fractions.
inline double powers_spacing_factor(double paste, double air, double specific_surface) {
  const double ratio = paste / air;
  if (ratio <= kPowersRatioThreshold) return paste / (air * specific_surface);
  return (3.0 / specific_surface) * (1.4 * std::cbrt(1.0 + ratio) - 1.0);
}

/// From fractions: A, P and void frequency n [1/mm].
inline AirVoidReport air_void_parameters_from_fractions(double air, double paste,
                                                        double void_frequency) {
  AirVoidReport r;
  r.air_pct = 100.0 * air;
  r.paste_pct = 100.0 * paste;
  r.aggregate_pct = 100.0 - r.air_pct - r.paste_pct;
  r.void_frequency = void_frequency;
  if (air > 0.0 && void_frequency > 0.0) {
    const double alpha = 4.0 * void_frequency / air;
    r.specific_surface = alpha;
    r.mean_chord_mm = air / void_frequency;
    r.spacing_factor_mm = powers_spacing_factor(paste, air, alpha);
  }
  return r;
}

inline AirVoidReport air_void_parameters(const PointCountResult& pc, const ChordSet& chords,
                                         double traverse_length_mm) {
  if (pc.total == 0) throw input_error("point count has no points");
  if (!(traverse_length_mm > 0.0)) throw input_error("traverse length must be positive");
  const double total = static_cast<double>(pc.total);
  const double air = pc.air / total;
  const double paste = pc.paste / total;
  const double n = static_cast<double>(chords.count) / traverse_length_mm;
  AirVoidReport r = air_void_parameters_from_fractions(air, paste, n);
  r.aggregate_pct = 100.0 * pc.aggregate / total;
  r.points = pc;
  r.chord_count = chords.count;
  r.air_length_mm = chords.air_length_mm;
  r.traverse_length_mm = traverse_length_mm;
  return r;
}

inline const char* kReportCsvHeader =
    "label,A_pct,P_pct,agg_pct,n_per_mm,alpha_per_mm,chord_mm,Lbar_mm";

namespace detail {

inline std::string full_precision(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string optional_field(const std::optional<double>& v) {
  return v ? full_precision(*v) : std::string();
}

inline std::string fixed(const std::optional<double>& v, int digits) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << *v;
  return os.str();
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

using LabeledReport = std::pair<std::string, AirVoidReport>;

/// Machine-readable export; undefined fields are empty.
inline std::string report_csv(const std::vector<LabeledReport>& reports) {
  std::string out = std::string(kReportCsvHeader) + "\n";
  for (const auto& [label, r] : reports) {
    out += label + "," + detail::full_precision(r.air_pct) + "," +
           detail::full_precision(r.paste_pct) + "," +
           detail::full_precision(r.aggregate_pct) + "," +
           detail::optional_field(r.void_frequency) + "," +
           detail::optional_field(r.specific_surface) + "," +
           detail::optional_field(r.mean_chord_mm) + "," +
           detail::optional_field(r.spacing_factor_mm) + "\n";
  }
  return out;
}

/// Parses `report_csv` output back into labelled reports (derived fields only).
inline std::vector<LabeledReport> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || detail::split(line, ',') != detail::split(kReportCsvHeader, ',')) {
    throw input_error("report CSV header mismatch");
  }
  std::vector<LabeledReport> out;
  auto num = [](const std::string& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = detail::split(line, ',');
    if (f.size() != 8) throw input_error("report CSV row has " + std::to_string(f.size()) + " fields");
    AirVoidReport r;
    r.air_pct = std::stod(f[1]);
    r.paste_pct = std::stod(f[2]);
    r.aggregate_pct = std::stod(f[3]);
    r.void_frequency = num(f[4]);
    r.specific_surface = num(f[5]);
    r.mean_chord_mm = num(f[6]);
    r.spacing_factor_mm = num(f[7]);
    out.emplace_back(f[0], r);
  }
  return out;
}

/// Aligned comparison table: one row per report, A [%], P [%], L [mm].
inline std::string report_table(const std::vector<LabeledReport>& reports) {
  if (reports.empty()) throw input_error("report table needs at least one report");
  std::size_t label_w = 6;
  for (const auto& [label, r] : reports) label_w = std::max(label_w, label.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(label_w)) << "Sample" << std::right
     << std::setw(8) << "A [%]" << std::setw(8) << "P [%]" << std::setw(10) << "L [mm]" << "\n";
  for (const auto& [label, r] : reports) {
    os << std::left << std::setw(static_cast<int>(label_w)) << label << std::right
       << std::setw(8) << detail::fixed(r.air_pct, 1) << std::setw(8)
       << detail::fixed(r.paste_pct, 1) << std::setw(10)
       << detail::fixed(r.spacing_factor_mm, 3) << "\n";
  }
  return os.str();
}

}  // namespace petroseg::c457
