#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "petroseg/c457.hpp"
#include "petroseg/raster.hpp"

namespace petroseg::eval {

using c457::GridSpec;

struct AnnotationEntry {
  int row = 0;
  int col = 0;
  int x = 0;
  int y = 0;
  PhaseLabel label = PhaseLabel::Unlabeled;

  friend bool operator==(const AnnotationEntry&, const AnnotationEntry&) = default;
};

/// Point-count ground truth for one scan, entries in grid (row-major) order.
struct GridAnnotation {
  std::string scan_id;
  GridSpec grid;
  std::vector<AnnotationEntry> entries;

  static GridAnnotation blank(std::string scan_id, const GridSpec& grid) {
    GridAnnotation a;
    a.scan_id = std::move(scan_id);
    a.grid = grid;
    a.entries.reserve(grid.size());
    for (const auto& p : grid.points) {
      a.entries.push_back({p.row, p.col, p.x, p.y, PhaseLabel::Unlabeled});
    }
    return a;
  }

  std::size_t labeled_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.label != PhaseLabel::Unlabeled;
    return n;
  }
  double completeness() const {
    return entries.empty() ? 0.0 : static_cast<double>(labeled_count()) / entries.size();
  }
  bool complete() const {
    return entries.size() == grid.size() && labeled_count() == entries.size();
  }
  std::optional<std::size_t> first_unlabeled() const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].label == PhaseLabel::Unlabeled) return i;
    }
    return std::nullopt;
  }
};

/// Strict spelling: AGG, PASTE, VOID or UNLABELED.
inline std::optional<PhaseLabel> parse_annotation_label(std::string_view text) {
  for (PhaseLabel l : {PhaseLabel::Aggregate, PhaseLabel::Paste, PhaseLabel::Void,
                       PhaseLabel::Unlabeled}) {
    if (text == label_name(l)) return l;
  }
  return std::nullopt;
}

inline constexpr const char* kAnnotationHeader = "row\tcol\tx_px\ty_px\tlabel";

inline std::string annotation_tsv(const GridAnnotation& a) {
  std::ostringstream os;
  os << kAnnotationHeader << "\n";
  for (const auto& e : a.entries) {
    os << e.row << '\t' << e.col << '\t' << e.x << '\t' << e.y << '\t' << label_name(e.label)
       << "\n";
  }
  return os.str();
}

/// Parses an annotation TSV; coordinates must match `grid` exactly. Missing
/// trailing rows are allowed (partial files) and come back Unlabeled.
inline GridAnnotation parse_annotation_tsv(const std::string& text, std::string scan_id,
                                           const GridSpec& grid) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw input_error("annotation file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kAnnotationHeader) {
    throw input_error("annotation header must be '" + std::string(kAnnotationHeader) + "'");
  }
  GridAnnotation a = GridAnnotation::blank(std::move(scan_id), grid);
  std::size_t index = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = c457::detail::split(line, '\t');
    if (fields.size() != 5) {
      throw input_error("annotation line " + std::to_string(line_no) + ": expected 5 fields");
    }
    if (index >= a.entries.size()) {
      throw input_error("annotation line " + std::to_string(line_no) +
                        ": more entries than grid points");
    }
    AnnotationEntry e;
    try {
      e.row = std::stoi(fields[0]);
      e.col = std::stoi(fields[1]);
      e.x = std::stoi(fields[2]);
      e.y = std::stoi(fields[3]);
    } catch (const std::exception&) {
      throw input_error("annotation line " + std::to_string(line_no) + ": non-integer coordinate");
    }
    auto label = parse_annotation_label(fields[4]);
    if (!label) {
      throw input_error("annotation line " + std::to_string(line_no) + ": unknown label '" +
                        fields[4] + "'");
    }
    e.label = *label;
    const auto& expect = a.entries[index];
    if (e.row != expect.row || e.col != expect.col || e.x != expect.x || e.y != expect.y) {
      throw input_error("annotation line " + std::to_string(line_no) +
                        ": coordinates do not match grid point " + std::to_string(index));
    }
    a.entries[index++] = e;
  }
  return a;
}

inline GridAnnotation load_annotation(const std::filesystem::path& path, const GridSpec& grid) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open annotation file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_annotation_tsv(ss.str(), path.stem().string(), grid);
}

inline void save_annotation(const GridAnnotation& a, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write annotation file '" + path.string() + "'");
  out << annotation_tsv(a);
  if (!out) throw input_error("failed writing annotation file '" + path.string() + "'");
}

inline std::vector<PhaseLabel> sample_mask_at_grid(const PhaseMask& mask, const GridSpec& grid) {
  if (grid.width != mask.width() || grid.height != mask.height()) {
    throw input_error("grid does not fit the mask");
  }
  std::vector<PhaseLabel> out;
  out.reserve(grid.size());
  for (const auto& p : grid.points) out.push_back(mask.at(p.x, p.y));
  return out;
}

/// Ground truth rows x predicted columns, order (Agg, Paste, Void).
struct ConfusionMatrix3 {
  std::array<std::array<std::size_t, 3>, 3> counts{};

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& r : counts)
      for (auto c : r) n += c;
    return n;
  }
  std::size_t row_sum(int c) const { return counts[c][0] + counts[c][1] + counts[c][2]; }
  std::size_t col_sum(int c) const { return counts[0][c] + counts[1][c] + counts[2][c]; }

  ConfusionMatrix3 transposed() const {
    ConfusionMatrix3 t;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) t.counts[i][j] = counts[j][i];
    return t;
  }

  friend bool operator==(const ConfusionMatrix3&, const ConfusionMatrix3&) = default;
};

inline ConfusionMatrix3 confusion(std::span<const PhaseLabel> truth,
                                  std::span<const PhaseLabel> predicted) {
  if (truth.size() != predicted.size()) {
    throw input_error("truth has " + std::to_string(truth.size()) + " points but prediction has " +
                      std::to_string(predicted.size()));
  }
  ConfusionMatrix3 m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == PhaseLabel::Unlabeled || predicted[i] == PhaseLabel::Unlabeled) {
      throw input_error(std::string(truth[i] == PhaseLabel::Unlabeled ? "truth" : "prediction") +
                        " is UNLABELED at point " + std::to_string(i));
    }
    m.counts[phase_index(truth[i])][phase_index(predicted[i])]++;
  }
  return m;
}

inline ConfusionMatrix3 confusion(const GridAnnotation& truth,
                                  std::span<const PhaseLabel> predicted) {
  if (!truth.complete()) {
    std::string missing;
    std::size_t shown = 0, n = 0;
    for (std::size_t i = 0; i < truth.entries.size(); ++i) {
      if (truth.entries[i].label != PhaseLabel::Unlabeled) continue;
      ++n;
      if (shown < 10) {
        missing += (shown ? " " : "") + std::to_string(i);
        ++shown;
      }
    }
    throw input_error("annotation is incomplete: " + std::to_string(n) +
                      " unlabeled points (first: " + missing + ")");
  }
  std::vector<PhaseLabel> labels;
  labels.reserve(truth.entries.size());
  for (const auto& e : truth.entries) labels.push_back(e.label);
  return confusion(labels, predicted);
}

/// Class IoU; nullopt when the class is absent from both truth and prediction.
inline std::optional<double> iou(const ConfusionMatrix3& m, PhaseLabel cls) {
  const int c = phase_index(cls);
  const std::size_t tp = m.counts[c][c];
  const std::size_t denom = m.row_sum(c) + m.col_sum(c) - tp;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(denom);
}

inline double miou(const ConfusionMatrix3& m) {
  double sum = 0.0;
  for (PhaseLabel cls : kPhases) {
    auto v = iou(m, cls);
    if (!v) {
      throw input_error("IoU undefined for class " + std::string(label_name(cls)) +
                        " (absent from truth and prediction)");
    }
    sum += *v;
  }
  return sum / kNumPhases;
}

struct AccuracyReport {
  std::array<std::optional<double>, 3> class_iou{};
  std::optional<double> mean_iou;
  ConfusionMatrix3 matrix;
};

inline AccuracyReport accuracy_report(const ConfusionMatrix3& m) {
  AccuracyReport r;
  r.matrix = m;
  bool all = true;
  for (PhaseLabel cls : kPhases) {
    r.class_iou[phase_index(cls)] = iou(m, cls);
    all = all && r.class_iou[phase_index(cls)].has_value();
  }
  if (all) r.mean_iou = miou(m);
  return r;
}

inline AccuracyReport accuracy_report(const GridAnnotation& truth, const PhaseMask& mask) {
  return accuracy_report(confusion(truth, sample_mask_at_grid(mask, truth.grid)));
}

inline std::string format_accuracy(const AccuracyReport& r) {
  auto f = [](const std::optional<double>& v) {
    if (!v) return std::string("undefined");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", *v);
    return std::string(buf);
  };
  std::ostringstream os;
  os << "truth\\pred\tAGG\tPASTE\tVOID\tIoU\n";
  for (PhaseLabel cls : kPhases) {
    const int c = phase_index(cls);
    os << label_name(cls) << '\t' << r.matrix.counts[c][0] << '\t' << r.matrix.counts[c][1]
       << '\t' << r.matrix.counts[c][2] << '\t' << f(r.class_iou[c]) << "\n";
  }
  os << "mIoU\t" << f(r.mean_iou) << "\n";
  return os.str();
}

}  // namespace petroseg::eval
