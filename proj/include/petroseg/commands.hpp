#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "petroseg/c457.hpp"
#include "petroseg/colorseg.hpp"
#include "petroseg/config.hpp"
#include "petroseg/eval.hpp"
#include "petroseg/image_io.hpp"
#include "petroseg/net/checkpoint.hpp"
#include "petroseg/net/train.hpp"
#include "petroseg/phantom.hpp"
#include "petroseg/raster.hpp"

namespace petroseg::cmd {

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw input_error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw input_error("failed writing '" + path.string() + "'");
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw input_error("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw input_error("cannot create directory '" + dir.string() + "': " + ec.message());
}

/// Path with the mask suffix: `a/b.png` -> `a/b.palette.png`.
inline fs::path sibling(const fs::path& path, const std::string& suffix) {
  return path.parent_path() / (path.stem().string() + suffix);
}

struct IngestSummary {
  std::string id;
  int width = 0;
  int height = 0;
  double pitch_um = 0.0;
  std::optional<PhaseFractions> fractions;
};

inline std::string format_summary(const IngestSummary& s) {
  std::ostringstream os;
  os << "id " << s.id << "\n"
     << "size_px " << s.width << " x " << s.height << "\n"
     << "pitch_um " << s.pitch_um << "\n"
     << "size_mm " << s.width * s.pitch_um / 1000.0 << " x " << s.height * s.pitch_um / 1000.0 << "\n";
  if (s.fractions) {
    os << "aggregate " << s.fractions->aggregate << "\n"
       << "paste " << s.fractions->paste << "\n"
       << "air " << s.fractions->air << "\n";
  }
  return os.str();
}

/// Validates a scan (and optional co-registered mask).
inline IngestSummary cmd_ingest(const fs::path& scan_path, const std::optional<fs::path>& mask_path,
                                const ToolConfig& cfg, bool palette_mask = false) {
  const Scan scan = load_scan(scan_path, cfg.pitch_um);
  IngestSummary s{scan.id(), scan.width(), scan.height(), scan.pitch(), std::nullopt};
  if (mask_path) {
    const PhaseMask mask = palette_mask ? load_palette_mask(*mask_path, cfg.pitch_um)
                                        : load_mask(*mask_path, cfg.pitch_um);
    if (mask.width() != scan.width() || mask.height() != scan.height()) {
      throw input_error("mask '" + mask_path->string() + "' is " + std::to_string(mask.width()) + "x" +
                        std::to_string(mask.height()) + " but scan is " + std::to_string(scan.width()) +
                        "x" + std::to_string(scan.height()));
    }
    s.fractions = phase_fractions(mask);
  }
  return s;
}

/// Colour rules then area filter. Writes the indexed mask and, if asked,
/// its palette render next to it.
inline PhaseMask cmd_color_seg(const fs::path& scan_path, const fs::path& out_mask, const ToolConfig& cfg,
                               bool render = true) {
  const Scan scan = load_scan(scan_path, cfg.pitch_um);
  const PhaseMask raw = segment_by_color(scan, cfg.rules);
  const PhaseMask mask = filter_small_components(raw, cfg.filter);
  save_mask(mask, out_mask, MaskMode::Indexed);
  if (render) save_mask(mask, sibling(out_mask, ".palette.png"), MaskMode::Palette);
  return mask;
}

/// Pairs `<id>.png|.tif|.tiff` with `<id>.mask.png` in `dir`, sorted by id.
inline std::vector<net::TrainingPair> load_dataset(const fs::path& dir, double pitch_um) {
  if (!fs::is_directory(dir)) throw input_error("dataset '" + dir.string() + "' is not a directory");
  std::vector<fs::path> scans;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path p = entry.path();
    const std::string name = p.filename().string();
    if (name.find(".mask.") != std::string::npos || name.find(".palette.") != std::string::npos) continue;
    const std::string ext = detail::lower_extension(p);
    if (ext == ".png" || ext == ".tif" || ext == ".tiff") scans.push_back(p);
  }
  std::sort(scans.begin(), scans.end());
  std::vector<net::TrainingPair> pairs;
  for (const auto& s : scans) {
    const fs::path m = s.parent_path() / (s.stem().string() + ".mask.png");
    if (!fs::exists(m)) throw input_error("scan '" + s.string() + "' has no mask '" + m.string() + "'");
    Scan scan = load_scan(s, pitch_um);
    PhaseMask mask = load_mask(m, pitch_um);
    if (scan.width() != mask.width() || scan.height() != mask.height()) {
      throw input_error("pair '" + scan.id() + "': scan is " + std::to_string(scan.width()) + "x" +
                        std::to_string(scan.height()) + " but mask is " + std::to_string(mask.width()) +
                        "x" + std::to_string(mask.height()));
    }
    pairs.push_back({scan.id(), std::move(scan), std::move(mask)});
  }
  if (pairs.empty()) throw input_error("dataset '" + dir.string() + "' holds no scan/mask pairs");
  return pairs;
}

struct TrainOutputs {
  fs::path checkpoint;
  fs::path loss_csv;
  fs::path miou_csv;
  net::TrainTrace trace;
};

/// Trains on a dataset directory; writes the checkpoint plus `loss.csv` and
/// `miou.csv` beside it.
inline TrainOutputs cmd_train(const fs::path& dataset, const fs::path& checkpoint, const ToolConfig& cfg,
                              std::ostream* log = nullptr) {
  const auto pairs = load_dataset(dataset, cfg.pitch_um);
  if (log) *log << "training on " << pairs.size() << " pair(s), " << cfg.train.iterations << " iterations\n";
  const auto t0 = std::chrono::steady_clock::now();
  auto result = net::train(pairs, cfg.train);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!checkpoint.parent_path().empty()) ensure_dir(checkpoint.parent_path());
  TrainOutputs out{checkpoint, checkpoint.parent_path() / "loss.csv", checkpoint.parent_path() / "miou.csv", {}};
  net::save_checkpoint(result.net, checkpoint);
  write_text(out.loss_csv, net::loss_csv(result.trace));
  write_text(out.miou_csv, net::miou_csv(result.trace));
  if (log) {
    *log << "final loss " << result.trace.steps.back().loss << ", held-in mIoU "
         << result.trace.final_miou() << ", " << secs << " s\n";
  }
  out.trace = std::move(result.trace);
  return out;
}

/// Tiled inference with a saved model; logs wall time.
inline PhaseMask cmd_predict(const fs::path& checkpoint, const fs::path& scan_path, const fs::path& out_mask,
                             const ToolConfig& cfg, std::ostream* log = nullptr, bool render = true) {
  const auto model = net::load_checkpoint(checkpoint);
  const Scan scan = load_scan(scan_path, cfg.pitch_um);
  const auto t0 = std::chrono::steady_clock::now();
  const PhaseMask mask = net::predict_tiled(model, scan, cfg.predict_tile, cfg.predict_overlap);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_mask(mask, out_mask, MaskMode::Indexed);
  if (render) save_mask(mask, sibling(out_mask, ".palette.png"), MaskMode::Palette);
  if (log) {
    *log << "predicted " << scan.width() << "x" << scan.height() << " px in " << secs << " s\n";
  }
  return mask;
}

/// Point count plus linear traverse on a mask.
inline c457::AirVoidReport c457_report(const PhaseMask& mask, const ToolConfig& cfg) {
  const auto grid = c457::make_grid(mask.width(), mask.height(), cfg.grid_rows, cfg.grid_cols);
  const auto pc = c457::point_count(mask, grid);
  const auto trav = c457::make_traverse(mask, cfg.traverse_spacing_um, cfg.traverse_include_border);
  const auto chords = c457::extract_chords(mask, trav);
  return c457::air_void_parameters(pc, chords, trav.total_length_mm);
}

/// Writes `<out>` (CSV) and returns the labelled report.
inline c457::LabeledReport cmd_c457(const fs::path& mask_path, const std::optional<fs::path>& out_csv,
                                    const ToolConfig& cfg, std::string label = {}) {
  const PhaseMask mask = load_mask(mask_path, cfg.pitch_um);
  if (label.empty()) label = mask_path.stem().string();
  c457::LabeledReport r{label, c457_report(mask, cfg)};
  if (out_csv) write_text(*out_csv, c457::report_csv({r}));
  return r;
}

inline eval::AccuracyReport cmd_evaluate(const fs::path& annotation, const fs::path& mask_path,
                                         const ToolConfig& cfg) {
  const PhaseMask mask = load_mask(mask_path, cfg.pitch_um);
  const auto grid = c457::make_grid(mask.width(), mask.height(), cfg.grid_rows, cfg.grid_cols);
  const auto truth = eval::load_annotation(annotation, grid);
  return eval::accuracy_report(truth, mask);
}

/// Concatenates report CSVs into one comparison table.
inline std::string cmd_report(const std::vector<fs::path>& csvs) {
  std::vector<c457::LabeledReport> all;
  for (const auto& p : csvs) {
    auto rows = c457::parse_report_csv(read_text(p));
    all.insert(all.end(), rows.begin(), rows.end());
  }
  return c457::report_table(all);
}

struct PhantomFiles {
  fs::path scan;
  fs::path mask;
  Phantom phantom;
};

/// Writes `<id>.png`, `<id>.mask.png` and `<id>.truth.csv`.
inline PhantomFiles cmd_phantom(const fs::path& out_dir, const PhantomSpec& spec) {
  ensure_dir(out_dir);
  PhantomFiles f{out_dir / (spec.id + ".png"), out_dir / (spec.id + ".mask.png"), make_phantom(spec)};
  const Phantom& ph = f.phantom;
  save_scan(ph.scan, f.scan);
  save_mask(ph.truth, f.mask, MaskMode::Indexed);
  std::ostringstream os;
  os << "aggregate,paste,air\n"
     << c457::detail::full_precision(ph.fractions.aggregate) << ","
     << c457::detail::full_precision(ph.fractions.paste) << ","
     << c457::detail::full_precision(ph.fractions.air) << "\n";
  write_text(out_dir / (spec.id + ".truth.csv"), os.str());
  return f;
}

}  // namespace petroseg::cmd
