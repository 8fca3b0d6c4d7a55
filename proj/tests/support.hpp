#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "petroseg/raster.hpp"

namespace testsupport {

namespace fs = std::filesystem;

/// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("petroseg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline petroseg::PhaseMask random_mask(int w, int h, std::uint64_t seed, double pitch = 5.3,
                                       bool with_unlabeled = false) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, with_unlabeled ? 3 : 2);
  std::vector<petroseg::PhaseLabel> labels(static_cast<std::size_t>(w) * h);
  for (auto& l : labels) {
    const int k = d(rng);
    l = k == 3 ? petroseg::PhaseLabel::Unlabeled : petroseg::phase_from_index(k);
  }
  return petroseg::PhaseMask(w, h, pitch, std::move(labels));
}

/// Blobby mask: thresholded sums of random discs, so components are large.
inline petroseg::PhaseMask blob_mask(int w, int h, std::uint64_t seed, int discs = 12) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0, w), uy(0, h), ur(2, std::min(w, h) / 4.0);
  std::uniform_int_distribution<int> phase(0, 2);
  std::vector<petroseg::PhaseLabel> labels(static_cast<std::size_t>(w) * h, petroseg::PhaseLabel::Paste);
  for (int k = 0; k < discs; ++k) {
    const double cx = ux(rng), cy = uy(rng), r = ur(rng);
    const auto l = petroseg::phase_from_index(phase(rng));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) labels[static_cast<std::size_t>(y) * w + x] = l;
  }
  return petroseg::PhaseMask(w, h, 5.3, std::move(labels));
}

}  // namespace testsupport
