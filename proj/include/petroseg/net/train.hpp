#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "petroseg/eval.hpp"
#include "petroseg/net/augment.hpp"
#include "petroseg/net/loss.hpp"
#include "petroseg/net/segnet.hpp"

namespace petroseg::net {

/// Smallest crop the default two-stage network accepts.
inline constexpr int kMinCrop = 16;

struct TrainConfig {
  int iterations = 2000;
  int batch = 4;
  int crop = 128;
  double learning_rate = 0.05;
  double momentum = 0.9;
  LossWeights weights;
  std::uint64_t seed = 1;
  int snapshot_period = 100;
  int snapshot_crops = 8;
  int base_channels = 8;
  JitterRanges jitter;

  void validate() const {
    if (iterations < 1) throw config_error("train.iterations must be >= 1");
    if (batch < 1) throw config_error("train.batch must be >= 1");
    if (crop < kMinCrop) {
      throw config_error("train.crop must be >= " + std::to_string(kMinCrop) + " px");
    }
    if (!(learning_rate >= 0.0)) throw config_error("train.lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw config_error("train.momentum must be in [0, 1)");
    if (weights.cross_entropy < 0.0 || weights.lovasz < 0.0 ||
        (weights.cross_entropy == 0.0 && weights.lovasz == 0.0)) {
      throw config_error("loss weights must be >= 0 and not both 0");
    }
    if (snapshot_period < 1) throw config_error("train.snapshot_period must be >= 1");
    if (snapshot_crops < 1) throw config_error("train.snapshot_crops must be >= 1");
    if (base_channels < 1) throw config_error("train.base_channels must be >= 1");
    if (!(jitter.min_scale > 0.0 && jitter.min_scale <= jitter.max_scale)) {
      throw config_error("jitter scale range is invalid");
    }
  }
};

struct TraceEntry {
  int iteration = 0;
  double loss = 0.0;
  double cross_entropy = 0.0;
  double lovasz = 0.0;
};

struct SnapshotEntry {
  int iteration = 0;
  double miou = 0.0;
};

struct TrainTrace {
  std::vector<TraceEntry> steps;
  std::vector<SnapshotEntry> snapshots;

  double final_miou() const { return snapshots.empty() ? 0.0 : snapshots.back().miou; }
};

template <class T>
struct LossAndGradient {
  LossValue loss;
  std::vector<ConvParams<T>> grads;
};

/// Buffers reused across training steps.
template <class T>
struct TrainWorkspace {
  std::vector<ForwardCache<T>> caches;
  BackwardWorkspace<T> backward;
};

/// Exact reverse-mode gradient of the combined loss over a batch.
template <class T>
LossAndGradient<T> loss_and_gradient(const SegNet<T>& net, const Batch& batch,
                                     const LossWeights& weights, TrainWorkspace<T>& ws) {
  const Tensor<T> images = batch_images<T>(batch);
  const auto labels = batch_labels(batch);
  const int B = images.dim(0), H = images.dim(2), W = images.dim(3);
  const Eigen::Index hw = static_cast<Eigen::Index>(H) * W;
  auto& caches = ws.caches;
  if (caches.size() < static_cast<std::size_t>(B)) caches.resize(B);
  Matrix<T> probs(kClasses, B * hw);
  for (int n = 0; n < B; ++n) {
    const auto& scores = forward_image(net, image_feature(images, n), caches[n], true);
    probs.middleCols(n * hw, hw) = softmax(scores.data);
  }
  LossAndGradient<T> out;
  Matrix<T> grad_probs = Matrix<T>::Zero(kClasses, B * hw);
  out.loss = combined_loss(probs, labels, weights, &grad_probs);
  out.grads = net.zeros_like();
  for (int n = 0; n < B; ++n) {
    const Matrix<T> dz = softmax_backward<T>(probs.middleCols(n * hw, hw), grad_probs.middleCols(n * hw, hw));
    backward_image(net, caches[n], dz, out.grads, ws.backward);
  }
  return out;
}

template <class T>
LossAndGradient<T> loss_and_gradient(const SegNet<T>& net, const Batch& batch,
                                     const LossWeights& weights) {
  TrainWorkspace<T> ws;
  return loss_and_gradient(net, batch, weights, ws);
}

/// SGD momentum buffers plus scratch space carried between steps.
template <class T>
struct SgdState {
  std::vector<ConvParams<T>> velocity;
  TrainWorkspace<T> workspace;
};

/// One SGD-with-momentum step: v <- mu v - lr g; theta <- theta + v.
template <class T>
LossValue backward_and_step(SegNet<T>& net, SgdState<T>& state, const Batch& batch,
                            const TrainConfig& config) {
  auto lg = loss_and_gradient(net, batch, config.weights, state.workspace);
  const auto& nodes = net.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].op != OpKind::Conv) continue;
    if (!lg.grads[i].weight.allFinite() || !lg.grads[i].bias.allFinite()) {
      throw internal_error("non-finite gradient in layer " + std::to_string(i) + " (" +
                           op_name(nodes[i].op) + " " + std::to_string(nodes[i].in_channels) +
                           "->" + std::to_string(nodes[i].out_channels) + ")");
    }
  }
  if (state.velocity.size() != nodes.size()) state.velocity = net.zeros_like();
  const T mu = static_cast<T>(config.momentum);
  const T lr = static_cast<T>(config.learning_rate);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].op != OpKind::Conv) continue;
    auto& v = state.velocity[i];
    auto& p = net.params(static_cast<int>(i));
    v.weight = mu * v.weight - lr * lg.grads[i].weight;
    v.bias = mu * v.bias - lr * lg.grads[i].bias;
    p.weight += v.weight;
    p.bias += v.bias;
  }
  return lg.loss;
}

/// Argmax over classes; ties go to the lowest class code.
template <class T>
std::vector<PhaseLabel> argmax_labels(const Matrix<T>& probs) {
  std::vector<PhaseLabel> out(static_cast<std::size_t>(probs.cols()));
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    int best = 0;
    for (int c = 1; c < kClasses; ++c) {
      if (probs(c, j) > probs(best, j)) best = c;
    }
    out[static_cast<std::size_t>(j)] = phase_from_index(best);
  }
  return out;
}

/// mIoU over labelled pixels; classes absent from both sides are skipped.
inline double pixel_miou(std::span<const PhaseLabel> truth, std::span<const PhaseLabel> pred) {
  eval::ConfusionMatrix3 m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == PhaseLabel::Unlabeled || pred[i] == PhaseLabel::Unlabeled) continue;
    m.counts[phase_index(truth[i])][phase_index(pred[i])]++;
  }
  double sum = 0.0;
  int defined = 0;
  for (PhaseLabel c : kPhases) {
    if (auto v = eval::iou(m, c)) {
      sum += *v;
      ++defined;
    }
  }
  return defined ? sum / defined : 0.0;
}

template <class T>
double batch_miou(const SegNet<T>& net, const Batch& batch) {
  const Tensor<T> probs = forward(net, batch_images<T>(batch));
  const auto pred = argmax_labels(flatten_probs(probs));
  const auto truth = batch_labels(batch);
  return pixel_miou(truth, pred);
}

struct TrainResult {
  SegNet<float> net;
  TrainTrace trace;
};

inline std::uint64_t init_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ull + 1; }
inline std::uint64_t snapshot_seed(std::uint64_t seed) { return seed * 0xBF58476D1CE4E5B9ull + 2; }

/// sample -> jitter -> forward -> loss -> backward -> SGD, with periodic
/// mIoU snapshots on a fixed, unjittered crop set drawn from the training data.
inline TrainResult train(const std::vector<TrainingPair>& pairs, const TrainConfig& config) {
  config.validate();
  check_pairs(pairs);
  TrainResult result{SegNet<float>::initialized(default_architecture(config.base_channels),
                                                init_seed(config.seed)),
                     {}};
  std::mt19937_64 snap_rng(snapshot_seed(config.seed));
  const Batch held_in = sample_crops(pairs, config.snapshot_crops, config.crop, snap_rng);
  std::mt19937_64 rng(config.seed);
  SgdState<float> sgd;
  result.trace.steps.reserve(config.iterations);
  for (int it = 1; it <= config.iterations; ++it) {
    Batch batch = sample_crops(pairs, config.batch, config.crop, rng);
    batch = jitter(batch, rng, config.jitter);
    const LossValue v = backward_and_step(result.net, sgd, batch, config);
    result.trace.steps.push_back({it, v.total, v.cross_entropy, v.lovasz});
    if (it % config.snapshot_period == 0 || it == config.iterations) {
      result.trace.snapshots.push_back({it, batch_miou(result.net, held_in)});
    }
  }
  return result;
}

/// Tiled inference: class probabilities are averaged where tiles overlap,
/// then argmax'd. A raster smaller than the tile is zero-padded to one tile.
template <class T>
PhaseMask predict_tiled(const SegNet<T>& net, const Scan& scan, int tile = 256, int overlap = 32) {
  if (tile < 1 || overlap < 0 || tile <= 2 * overlap) {
    throw config_error("predict tile must exceed twice the overlap");
  }
  const int W = scan.width(), H = scan.height();
  auto starts = [&](int extent) {
    std::vector<int> s;
    if (extent <= tile) {
      s.push_back(0);
      return s;
    }
    const int step = tile - overlap;
    for (int p = 0;; p += step) {
      if (p + tile >= extent) {
        s.push_back(extent - tile);
        break;
      }
      s.push_back(p);
    }
    return s;
  };
  const auto xs = starts(W), ys = starts(H);
  std::vector<double> acc(static_cast<std::size_t>(kClasses) * W * H, 0.0);
  ForwardCache<T> cache;
  for (int y0 : ys) {
    for (int x0 : xs) {
      FeatureMap<T> img(kImageChannels, tile, tile);
      img.data.setZero();
      const int vw = std::min(tile, W - x0), vh = std::min(tile, H - y0);
      for (int y = 0; y < vh; ++y) {
        for (int x = 0; x < vw; ++x) {
          const Rgb c = scan.at(x0 + x, y0 + y);
          const Eigen::Index o = static_cast<Eigen::Index>(y) * tile + x;
          img.data(0, o) = normalize_channel<T>(c.r);
          img.data(1, o) = normalize_channel<T>(c.g);
          img.data(2, o) = normalize_channel<T>(c.b);
        }
      }
      const auto& scores = forward_image(net, std::move(img), cache, false);
      const Matrix<T> p = softmax(scores.data);
      for (int y = 0; y < vh; ++y) {
        for (int x = 0; x < vw; ++x) {
          const Eigen::Index o = static_cast<Eigen::Index>(y) * tile + x;
          const std::size_t d = static_cast<std::size_t>(y0 + y) * W + (x0 + x);
          for (int c = 0; c < kClasses; ++c) {
            acc[static_cast<std::size_t>(c) * W * H + d] += static_cast<double>(p(c, o));
          }
        }
      }
    }
  }
  // Averaging divides every class by the same coverage count, so the argmax
  // of the summed probabilities is the argmax of their mean.
  std::vector<PhaseLabel> labels(static_cast<std::size_t>(W) * H);
  const std::size_t plane = static_cast<std::size_t>(W) * H;
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    for (int c = 1; c < kClasses; ++c) {
      if (acc[c * plane + i] > acc[best * plane + i]) best = c;
    }
    labels[i] = phase_from_index(best);
  }
  return PhaseMask(W, H, scan.pitch(), std::move(labels));
}

/// Whole-image inference without tiling.
template <class T>
PhaseMask predict_full(const SegNet<T>& net, const Scan& scan) {
  FeatureMap<T> img(kImageChannels, scan.height(), scan.width());
  for (std::size_t i = 0; i < scan.pixels().size(); ++i) {
    const Rgb c = scan.pixels()[i];
    img.data(0, i) = normalize_channel<T>(c.r);
    img.data(1, i) = normalize_channel<T>(c.g);
    img.data(2, i) = normalize_channel<T>(c.b);
  }
  ForwardCache<T> cache;
  const auto& scores = forward_image(net, std::move(img), cache, false);
  auto labels = argmax_labels(softmax(scores.data));
  return PhaseMask(scan.width(), scan.height(), scan.pitch(), std::move(labels));
}

/// Replaces the labels of the selected pairs with the model's own
/// predictions, then trains a fresh model on the edited set.
inline TrainResult retrain_with_predictions(std::vector<TrainingPair> pairs,
                                            const std::set<std::string>& replace,
                                            const SegNet<float>& net, const TrainConfig& config,
                                            int tile = 256, int overlap = 32) {
  for (const auto& id : replace) {
    auto it = std::find_if(pairs.begin(), pairs.end(), [&](const TrainingPair& p) { return p.id == id; });
    if (it == pairs.end()) throw input_error("unknown training pair id '" + id + "'");
  }
  for (auto& p : pairs) {
    if (replace.count(p.id)) p.mask = predict_tiled(net, p.scan, tile, overlap);
  }
  return train(pairs, config);
}

inline std::string loss_csv(const TrainTrace& trace) {
  std::ostringstream os;
  os.precision(9);
  os << "iter,loss,ce,lovasz\n";
  for (const auto& e : trace.steps) {
    os << e.iteration << ',' << e.loss << ',' << e.cross_entropy << ',' << e.lovasz << '\n';
  }
  return os.str();
}

inline std::string miou_csv(const TrainTrace& trace) {
  std::ostringstream os;
  os.precision(9);
  os << "iter,miou\n";
  for (const auto& e : trace.snapshots) os << e.iteration << ',' << e.miou << '\n';
  return os.str();
}

/// Non-overlapping block means of the combined loss.
inline std::vector<double> block_means(const TrainTrace& trace, int width) {
  std::vector<double> out;
  for (std::size_t start = 0; start + width <= trace.steps.size(); start += width) {
    double s = 0.0;
    for (int k = 0; k < width; ++k) s += trace.steps[start + k].loss;
    out.push_back(s / width);
  }
  return out;
}

}  // namespace petroseg::net
