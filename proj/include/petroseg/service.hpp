#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "petroseg/eval.hpp"
#include "petroseg/image_io.hpp"
#include "petroseg/raster.hpp"

namespace petroseg::service {

using eval::GridAnnotation;

namespace detail {

inline void write_all(int fd, const std::string& data, const std::string& what) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw input_error("write failed for '" + what + "': " + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

}  // namespace detail

/// Writes `data` to a sibling temp file, fsyncs it, renames it over `path`
/// and fsyncs the directory.
inline void atomic_write(const std::filesystem::path& path, const std::string& data) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw input_error("cannot create '" + tmp.string() + "': " + std::strerror(errno));
  try {
    detail::write_all(fd, data, tmp.string());
    if (::fsync(fd) != 0) throw input_error("fsync failed for '" + tmp.string() + "'");
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    throw input_error("cannot rename '" + tmp.string() + "': " + std::strerror(errno));
  }
  auto dir = path.parent_path();
  if (dir.empty()) dir = ".";
  const int dfd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
}

/// Exclusive advisory lock on `<annotation>.lock`, held for the lifetime of
/// the object.
class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& target) : path_(target.string() + ".lock") {
    fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw input_error("cannot open lock file '" + path_.string() + "': " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw input_error("annotation file '" + target.string() + "' is locked by another writer");
    }
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;
  ~FileLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

/// Persistent annotation state with a single serialized writer. Every
/// mutation reaches disk before it returns.
class AnnotationStore {
 public:
  AnnotationStore(const std::filesystem::path& path, const std::string& scan_id, const c457::GridSpec& grid)
      : path_(path), lock_(path) {
    if (std::filesystem::exists(path)) {
      annotation_ = eval::load_annotation(path, grid);
      annotation_.scan_id = scan_id;
    } else {
      annotation_ = GridAnnotation::blank(scan_id, grid);
      atomic_write(path_, eval::annotation_tsv(annotation_));
    }
  }

  struct Progress {
    std::size_t labeled = 0;
    std::size_t total = 0;
    std::optional<std::size_t> next_index;
    bool complete() const { return labeled == total; }
  };

  Progress progress() const {
    std::shared_lock lk(mutex_);
    return progress_locked();
  }

  GridAnnotation snapshot() const {
    std::shared_lock lk(mutex_);
    return annotation_;
  }

  Progress set_label(std::size_t index, PhaseLabel label) {
    if (label == PhaseLabel::Unlabeled) throw input_error("label must be AGG, PASTE or VOID");
    std::unique_lock lk(mutex_);
    if (index >= annotation_.entries.size()) {
      throw input_error("point index " + std::to_string(index) + " out of range [0, " +
                        std::to_string(annotation_.entries.size()) + ")");
    }
    const PhaseLabel previous = annotation_.entries[index].label;
    annotation_.entries[index].label = label;
    try {
      atomic_write(path_, eval::annotation_tsv(annotation_));
    } catch (...) {
      annotation_.entries[index].label = previous;
      throw;
    }
    history_.push_back({index, previous});
    return progress_locked();
  }

  /// Reverts the most recent label write of this session.
  std::optional<std::size_t> undo(Progress* progress = nullptr) {
    std::unique_lock lk(mutex_);
    if (history_.empty()) {
      if (progress) *progress = progress_locked();
      return std::nullopt;
    }
    const auto [index, previous] = history_.back();
    const PhaseLabel current = annotation_.entries[index].label;
    annotation_.entries[index].label = previous;
    try {
      atomic_write(path_, eval::annotation_tsv(annotation_));
    } catch (...) {
      annotation_.entries[index].label = current;
      throw;
    }
    history_.pop_back();
    if (progress) *progress = progress_locked();
    return index;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  Progress progress_locked() const {
    return {annotation_.labeled_count(), annotation_.entries.size(), annotation_.first_unlabeled()};
  }

  struct Edit {
    std::size_t index;
    PhaseLabel previous;
  };

  std::filesystem::path path_;
  FileLock lock_;
  mutable std::shared_mutex mutex_;
  GridAnnotation annotation_;
  std::vector<Edit> history_;
};

/// Square crop of side 2*half+1 centred on (cx, cy); pixels outside the scan
/// are black. Each pixel is replicated `zoom` times in both directions.
inline std::vector<std::uint8_t> tile_pixels(const Scan& scan, int cx, int cy, int half, int zoom) {
  const int side = 2 * half + 1;
  const int out = side * zoom;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(out) * out * 3, 0);
  for (int ty = 0; ty < side; ++ty) {
    const int sy = cy - half + ty;
    if (sy < 0 || sy >= scan.height()) continue;
    for (int tx = 0; tx < side; ++tx) {
      const int sx = cx - half + tx;
      if (sx < 0 || sx >= scan.width()) continue;
      const Rgb c = scan.at(sx, sy);
      for (int dy = 0; dy < zoom; ++dy) {
        std::uint8_t* row = px.data() + (static_cast<std::size_t>(ty * zoom + dy) * out + tx * zoom) * 3;
        for (int dx = 0; dx < zoom; ++dx) {
          row[3 * dx] = c.r;
          row[3 * dx + 1] = c.g;
          row[3 * dx + 2] = c.b;
        }
      }
    }
  }
  return px;
}

inline constexpr int kMaxTileSide = 4096;
inline constexpr int kMaxZoom = 16;

/// HTTP front end for one scan and its annotation file.
class AnnotationService {
 public:
  AnnotationService(Scan scan, const std::filesystem::path& annotation_path, int rows = 100, int cols = 100)
      : scan_(std::move(scan)),
        grid_(c457::make_grid(scan_.width(), scan_.height(), rows, cols)),
        store_(annotation_path, scan_.id(), grid_) {
    routes();
  }

  /// Serves files from `dir` under `/` (for the browser UI).
  void mount_static(const std::filesystem::path& dir) {
    if (!server_.set_mount_point("/", dir.string())) {
      throw input_error("cannot serve static files from '" + dir.string() + "'");
    }
  }

  /// Binds to `port` (0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
      if (port_ < 0) throw input_error("cannot bind to " + host);
    } else {
      if (!server_.bind_to_port(host, port)) {
        throw input_error("cannot bind to " + host + ":" + std::to_string(port) + " (port busy?)");
      }
      port_ = port;
    }
    return port_;
  }

  /// Blocks until `stop()`.
  void listen() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }
  int port() const { return port_; }
  AnnotationStore& store() { return store_; }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"ok", false}, {"error", message}});
  }

  static nlohmann::json progress_json(const AnnotationStore::Progress& p) {
    nlohmann::json j;
    j["labeled"] = p.labeled;
    j["total"] = p.total;
    j["next_index"] = p.next_index ? nlohmann::json(*p.next_index) : nlohmann::json(nullptr);
    j["status"] = p.complete() ? "complete" : "in_progress";
    return j;
  }

  static std::optional<int> int_param(const httplib::Request& req, const char* name) {
    if (!req.has_param(name)) return std::nullopt;
    const std::string v = req.get_param_value(name);
    int out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) return std::nullopt;
    return out;
  }

  void routes() {
    server_.Get("/api/session", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json j = progress_json(store_.progress());
      j["scan_id"] = scan_.id();
      j["width"] = scan_.width();
      j["height"] = scan_.height();
      j["pitch_um"] = scan_.pitch();
      j["grid"] = {{"rows", grid_.rows}, {"cols", grid_.cols}};
      send_json(res, 200, j);
    });

    server_.Get("/api/tile", [this](const httplib::Request& req, httplib::Response& res) {
      const auto cx = int_param(req, "cx"), cy = int_param(req, "cy");
      const auto half = int_param(req, "half").value_or(req.has_param("half") ? -1 : 250);
      const auto zoom = int_param(req, "zoom").value_or(req.has_param("zoom") ? 0 : 1);
      if (!cx || !cy) return send_error(res, 400, "cx and cy are required integers");
      if (*cx < 0 || *cy < 0 || *cx >= scan_.width() || *cy >= scan_.height()) {
        return send_error(res, 400, "centre lies outside the scan");
      }
      if (half < 0 || zoom < 1 || zoom > kMaxZoom) {
        return send_error(res, 400, "half must be >= 0 and zoom in [1, " + std::to_string(kMaxZoom) + "]");
      }
      if ((2 * static_cast<long>(half) + 1) * zoom > kMaxTileSide) {
        return send_error(res, 400, "tile larger than " + std::to_string(kMaxTileSide) + " px");
      }
      const int side = (2 * half + 1) * zoom;
      const auto px = tile_pixels(scan_, *cx, *cy, half, zoom);
      const auto png = encode_png(side, side, 3, px.data());
      res.status = 200;
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    });

    server_.Get("/api/annotations", [this](const httplib::Request&, httplib::Response& res) {
      const auto a = store_.snapshot();
      nlohmann::json entries = nlohmann::json::array();
      for (std::size_t i = 0; i < a.entries.size(); ++i) {
        const auto& e = a.entries[i];
        entries.push_back({{"index", i},
                           {"row", e.row},
                           {"col", e.col},
                           {"x", e.x},
                           {"y", e.y},
                           {"label", std::string(label_name(e.label))}});
      }
      send_json(res, 200, {{"scan_id", a.scan_id}, {"entries", entries}});
    });

    server_.Put(R"(/api/annotations/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::size_t index = 0;
      const std::string s = req.matches[1];
      const auto r = std::from_chars(s.data(), s.data() + s.size(), index);
      if (r.ec != std::errc{}) return send_error(res, 400, "bad point index");
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const std::exception&) {
        return send_error(res, 400, "body must be JSON");
      }
      if (!body.is_object() || !body.contains("label") || !body["label"].is_string()) {
        return send_error(res, 400, "body must be {\"label\": \"AGG\"|\"PASTE\"|\"VOID\"}");
      }
      const auto label = eval::parse_annotation_label(body["label"].get<std::string>());
      if (!label || *label == PhaseLabel::Unlabeled) {
        return send_error(res, 400, "label must be AGG, PASTE or VOID");
      }
      if (index >= grid_.size()) return send_error(res, 404, "point index out of range");
      try {
        nlohmann::json j = progress_json(store_.set_label(index, *label));
        j["ok"] = true;
        send_json(res, 200, j);
      } catch (const Error& e) {
        send_error(res, 500, e.what());
      }
    });

    server_.Post("/api/undo", [this](const httplib::Request&, httplib::Response& res) {
      try {
        AnnotationStore::Progress p;
        const auto index = store_.undo(&p);
        nlohmann::json j = progress_json(p);
        j["ok"] = index.has_value();
        j["index"] = index ? nlohmann::json(*index) : nlohmann::json(nullptr);
        send_json(res, index ? 200 : 409, j);
      } catch (const Error& e) {
        send_error(res, 500, e.what());
      }
    });
  }

  Scan scan_;
  c457::GridSpec grid_;
  AnnotationStore store_;
  httplib::Server server_;
  int port_ = -1;
};

}  // namespace petroseg::service
