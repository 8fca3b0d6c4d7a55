#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "petroseg/error.hpp"

namespace petroseg {

/// Default scanner pitch in micrometres per pixel.
inline constexpr double kDefaultPitchUm = 5.3;

enum class PhaseLabel : std::uint8_t {
  Aggregate = 0,
  Paste = 1,
  Void = 2,
  Unlabeled = 255,
};

inline constexpr int kNumPhases = 3;
inline constexpr std::array<PhaseLabel, kNumPhases> kPhases = {
    PhaseLabel::Aggregate, PhaseLabel::Paste, PhaseLabel::Void};

inline constexpr bool is_valid_label_code(std::uint8_t code) {
  return code <= 2 || code == 255;
}

inline constexpr int phase_index(PhaseLabel label) {
  return static_cast<int>(label);
}

inline constexpr PhaseLabel phase_from_index(int index) {
  return static_cast<PhaseLabel>(index);
}

inline std::string_view label_name(PhaseLabel label) {
  switch (label) {
    case PhaseLabel::Aggregate:
      return "AGG";
    case PhaseLabel::Paste:
      return "PASTE";
    case PhaseLabel::Void:
      return "VOID";
    case PhaseLabel::Unlabeled:
      return "UNLABELED";
  }
  return "UNLABELED";
}

/// Accepts the annotation spellings (AGG, PASTE, VOID, UNLABELED) and the
/// long phase names used in config keys (aggregate, paste, void).
inline std::optional<PhaseLabel> parse_label(std::string_view text) {
  std::string lower;
  for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "agg" || lower == "aggregate") return PhaseLabel::Aggregate;
  if (lower == "paste") return PhaseLabel::Paste;
  if (lower == "void") return PhaseLabel::Void;
  if (lower == "unlabeled") return PhaseLabel::Unlabeled;
  return std::nullopt;
}

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Fixed render colours for palette masks.
inline constexpr Rgb palette_color(PhaseLabel label) {
  switch (label) {
    case PhaseLabel::Aggregate:
      return {128, 0, 128};
    case PhaseLabel::Paste:
      return {0, 170, 0};
    case PhaseLabel::Void:
      return {255, 255, 0};
    case PhaseLabel::Unlabeled:
      return {0, 0, 0};
  }
  return {0, 0, 0};
}

inline std::optional<PhaseLabel> label_from_palette(Rgb c) {
  for (PhaseLabel l : {PhaseLabel::Aggregate, PhaseLabel::Paste,
                       PhaseLabel::Void, PhaseLabel::Unlabeled}) {
    if (palette_color(l) == c) return l;
  }
  return std::nullopt;
}

struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  friend bool operator==(const Rect&, const Rect&) = default;
};

inline bool rect_inside(const Rect& r, int width, int height) {
  return r.w > 0 && r.h > 0 && r.x >= 0 && r.y >= 0 &&
         static_cast<long long>(r.x) + r.w <= width &&
         static_cast<long long>(r.y) + r.h <= height;
}

namespace detail {

inline void check_geometry(int width, int height, double pitch,
                           std::size_t count) {
  if (width <= 0 || height <= 0) {
    throw input_error("raster dimensions must be positive, got " +
                      std::to_string(width) + "x" + std::to_string(height));
  }
  if (!(pitch > 0.0)) {
    throw input_error("pixel pitch must be positive, got " +
                      std::to_string(pitch));
  }
  if (count != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw input_error("pixel buffer size does not match " +
                      std::to_string(width) + "x" + std::to_string(height));
  }
}

}  // namespace detail

/// RGB scan with an isotropic physical pixel pitch (µm/px).
class Scan {
 public:
  Scan(std::string id, int width, int height, double pitch_um,
       std::vector<Rgb> pixels)
      : id_(std::move(id)),
        width_(width),
        height_(height),
        pitch_(pitch_um),
        pixels_(std::move(pixels)) {
    detail::check_geometry(width_, height_, pitch_, pixels_.size());
  }

  const std::string& id() const { return id_; }
  int width() const { return width_; }
  int height() const { return height_; }
  double pitch() const { return pitch_; }
  std::span<const Rgb> pixels() const { return pixels_; }
  const Rgb& at(int x, int y) const {
    return pixels_[static_cast<std::size_t>(y) * width_ + x];
  }

  double width_mm() const { return width_ * pitch_ / 1000.0; }
  double height_mm() const { return height_ * pitch_ / 1000.0; }

 private:
  std::string id_;
  int width_;
  int height_;
  double pitch_;
  std::vector<Rgb> pixels_;
};

/// Per-pixel phase labels sharing a scan's geometry.
class PhaseMask {
 public:
  PhaseMask(int width, int height, double pitch_um,
            std::vector<PhaseLabel> labels)
      : width_(width), height_(height), pitch_(pitch_um), labels_(std::move(labels)) {
    detail::check_geometry(width_, height_, pitch_, labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      auto code = static_cast<std::uint8_t>(labels_[i]);
      if (!is_valid_label_code(code)) {
        throw input_error("invalid phase code " + std::to_string(code) +
                          " at (" + std::to_string(i % width_) + ", " +
                          std::to_string(i / width_) + ")");
      }
    }
  }

  static PhaseMask filled(int width, int height, double pitch_um,
                          PhaseLabel label) {
    return PhaseMask(width, height, pitch_um,
                     std::vector<PhaseLabel>(
                         static_cast<std::size_t>(width) * height, label));
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double pitch() const { return pitch_; }
  std::span<const PhaseLabel> labels() const { return labels_; }
  PhaseLabel at(int x, int y) const {
    return labels_[static_cast<std::size_t>(y) * width_ + x];
  }

  friend bool operator==(const PhaseMask&, const PhaseMask&) = default;

 private:
  int width_;
  int height_;
  double pitch_;
  std::vector<PhaseLabel> labels_;
};

namespace detail {

template <class T>
std::vector<T> crop_buffer(std::span<const T> src, int width, int height,
                           const Rect& r) {
  if (!rect_inside(r, width, height)) {
    throw input_error("crop rect (" + std::to_string(r.x) + ", " +
                      std::to_string(r.y) + ", " + std::to_string(r.w) + ", " +
                      std::to_string(r.h) + ") is outside the " +
                      std::to_string(width) + "x" + std::to_string(height) +
                      " raster");
  }
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(r.w) * r.h);
  for (int y = r.y; y < r.y + r.h; ++y) {
    auto row = src.subspan(static_cast<std::size_t>(y) * width + r.x, r.w);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

}  // namespace detail

inline Scan crop(const Scan& scan, const Rect& r) {
  return Scan(scan.id(), r.w, r.h, scan.pitch(),
              detail::crop_buffer(scan.pixels(), scan.width(), scan.height(), r));
}

inline PhaseMask crop(const PhaseMask& mask, const Rect& r) {
  return PhaseMask(r.w, r.h, mask.pitch(),
                   detail::crop_buffer(mask.labels(), mask.width(),
                                       mask.height(), r));
}

struct PhaseFractions {
  double aggregate = 0.0;
  double paste = 0.0;
  double air = 0.0;

  double operator[](PhaseLabel l) const {
    switch (l) {
      case PhaseLabel::Aggregate:
        return aggregate;
      case PhaseLabel::Paste:
        return paste;
      case PhaseLabel::Void:
        return air;
      default:
        return 0.0;
    }
  }
};

/// Label histogram over {Aggregate, Paste, Void, Unlabeled}.
inline std::array<std::size_t, 4> label_histogram(std::span<const PhaseLabel> labels) {
  std::array<std::size_t, 4> counts{};
  for (PhaseLabel l : labels) {
    counts[l == PhaseLabel::Unlabeled ? 3 : phase_index(l)]++;
  }
  return counts;
}

/// Fractions over labelled pixels; Unlabeled pixels are excluded.
inline PhaseFractions phase_fractions(const PhaseMask& mask) {
  auto counts = label_histogram(mask.labels());
  const std::size_t labeled = counts[0] + counts[1] + counts[2];
  if (labeled == 0) throw input_error("mask has no labeled pixels");
  const double n = static_cast<double>(labeled);
  return {counts[0] / n, counts[1] / n, counts[2] / n};
}

}  // namespace petroseg
