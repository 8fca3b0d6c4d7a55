#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "petroseg/net/segnet.hpp"
#include "petroseg/raster.hpp"

namespace petroseg::net {

/// A co-registered scan and label mask used for training.
struct TrainingPair {
  std::string id;
  Scan scan;
  PhaseMask mask;
};

/// Square training crop: planar RGB in [0, 255] plus per-pixel labels.
struct Sample {
  int size = 0;
  std::vector<float> rgb;  // 3 x size x size
  std::vector<PhaseLabel> labels;

  friend bool operator==(const Sample&, const Sample&) = default;
};

using Batch = std::vector<Sample>;

inline void check_pairs(const std::vector<TrainingPair>& pairs) {
  if (pairs.empty()) throw input_error("training set is empty");
  for (const auto& p : pairs) {
    if (p.scan.width() != p.mask.width() || p.scan.height() != p.mask.height()) {
      throw input_error("pair '" + p.id + "': scan is " + std::to_string(p.scan.width()) + "x" +
                        std::to_string(p.scan.height()) + " but mask is " +
                        std::to_string(p.mask.width()) + "x" + std::to_string(p.mask.height()));
    }
  }
}

inline Sample extract_sample(const TrainingPair& pair, int x0, int y0, int size) {
  Sample s;
  s.size = size;
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  s.rgb.resize(3 * plane);
  s.labels.resize(plane);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const std::size_t o = static_cast<std::size_t>(y) * size + x;
      const Rgb c = pair.scan.at(x0 + x, y0 + y);
      s.rgb[o] = c.r;
      s.rgb[plane + o] = c.g;
      s.rgb[2 * plane + o] = c.b;
      s.labels[o] = pair.mask.at(x0 + x, y0 + y);
    }
  }
  return s;
}

/// Draws `n` co-located crops; pair and offset are uniform.
template <class Rng>
Batch sample_crops(const std::vector<TrainingPair>& pairs, int n, int crop, Rng& rng,
                   std::vector<std::size_t>* chosen_pairs = nullptr) {
  check_pairs(pairs);
  if (crop < 1) throw config_error("crop size must be positive");
  for (const auto& p : pairs) {
    if (p.scan.width() < crop || p.scan.height() < crop) {
      throw input_error("crop " + std::to_string(crop) + " px exceeds training image '" + p.id +
                        "' (" + std::to_string(p.scan.width()) + "x" +
                        std::to_string(p.scan.height()) + ")");
    }
  }
  Batch batch;
  batch.reserve(n);
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  for (int k = 0; k < n; ++k) {
    const std::size_t pi = pick(rng);
    const auto& p = pairs[pi];
    std::uniform_int_distribution<int> ox(0, p.scan.width() - crop);
    std::uniform_int_distribution<int> oy(0, p.scan.height() - crop);
    const int x0 = ox(rng);
    const int y0 = oy(rng);
    batch.push_back(extract_sample(p, x0, y0, crop));
    if (chosen_pairs) chosen_pairs->push_back(pi);
  }
  return batch;
}

struct JitterParams {
  bool flip_horizontal = false;
  bool flip_vertical = false;
  int quarter_turns = 0;  // 0..3
  double scale = 1.0;

  bool is_identity() const {
    return !flip_horizontal && !flip_vertical && quarter_turns == 0 && scale == 1.0;
  }
};

struct JitterRanges {
  double min_scale = 0.75;
  double max_scale = 1.25;
};

template <class Rng>
JitterParams draw_jitter(Rng& rng, const JitterRanges& ranges = {}) {
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> turns(0, 3);
  std::uniform_real_distribution<double> scale(ranges.min_scale, ranges.max_scale);
  JitterParams p;
  p.flip_horizontal = coin(rng);
  p.flip_vertical = coin(rng);
  p.quarter_turns = turns(rng);
  p.scale = scale(rng);
  return p;
}

/// Flip, rotate, then scale about the crop centre, keeping the crop size.
/// Images are resampled bilinearly, labels by nearest neighbour; pixels that
/// fall outside the source become black / Unlabeled.
inline Sample apply_jitter(const Sample& in, const JitterParams& p) {
  if (p.is_identity()) return in;
  const int S = in.size;
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  Sample out;
  out.size = S;
  out.rgb.assign(3 * plane, 0.0f);
  out.labels.assign(plane, PhaseLabel::Unlabeled);
  const double c = (S - 1) / 2.0;
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      double a = (x - c) / p.scale;
      double b = (y - c) / p.scale;
      double sa = a, sb = b;
      switch (p.quarter_turns & 3) {
        case 1:
          sa = b;
          sb = -a;
          break;
        case 2:
          sa = -a;
          sb = -b;
          break;
        case 3:
          sa = -b;
          sb = a;
          break;
        default:
          break;
      }
      if (p.flip_horizontal) sa = -sa;
      if (p.flip_vertical) sb = -sb;
      const double u = sa + c, v = sb + c;
      const double nu = std::floor(u + 0.5), nv = std::floor(v + 0.5);
      if (nu < 0 || nv < 0 || nu > S - 1 || nv > S - 1) continue;
      const std::size_t o = static_cast<std::size_t>(y) * S + x;
      out.labels[o] = in.labels[static_cast<std::size_t>(nv) * S + static_cast<std::size_t>(nu)];
      const double uc = std::clamp(u, 0.0, S - 1.0), vc = std::clamp(v, 0.0, S - 1.0);
      const int x0 = static_cast<int>(std::floor(uc)), y0 = static_cast<int>(std::floor(vc));
      const int x1 = std::min(x0 + 1, S - 1), y1 = std::min(y0 + 1, S - 1);
      const double fx = uc - x0, fy = vc - y0;
      for (int ch = 0; ch < 3; ++ch) {
        const float* src = in.rgb.data() + ch * plane;
        auto at = [&](int xx, int yy) {
          return static_cast<double>(src[static_cast<std::size_t>(yy) * S + xx]);
        };
        double val = at(x0, y0);
        if (fx != 0.0 || fy != 0.0) {
          val = (1 - fy) * ((1 - fx) * at(x0, y0) + fx * at(x1, y0)) +
                fy * ((1 - fx) * at(x0, y1) + fx * at(x1, y1));
        }
        out.rgb[ch * plane + o] = static_cast<float>(val);
      }
    }
  }
  return out;
}

template <class Rng>
Batch jitter(const Batch& batch, Rng& rng, const JitterRanges& ranges = {}) {
  Batch out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(apply_jitter(s, draw_jitter(rng, ranges)));
  return out;
}

/// Converts samples into a normalised (batch, 3, S, S) tensor.
template <class T>
Tensor<T> batch_images(const Batch& batch) {
  if (batch.empty()) throw input_error("empty batch");
  const int S = batch.front().size;
  Tensor<T> t({static_cast<int>(batch.size()), kImageChannels, S, S});
  std::size_t o = 0;
  for (const auto& s : batch) {
    if (s.size != S) throw input_error("batch samples differ in size");
    for (float v : s.rgb) t[o++] = normalize_channel<T>(v);
  }
  return t;
}

inline std::vector<PhaseLabel> batch_labels(const Batch& batch) {
  std::vector<PhaseLabel> out;
  for (const auto& s : batch) out.insert(out.end(), s.labels.begin(), s.labels.end());
  return out;
}

}  // namespace petroseg::net
