#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "petroseg/net/tensor.hpp"

namespace petroseg::net {

inline constexpr int kClasses = 3;
inline constexpr int kImageChannels = 3;

enum class OpKind : std::uint32_t {
  Input = 0,
  Conv = 1,
  Relu = 2,
  Add = 3,
  Upsample = 4,  // nearest-neighbour 2x, cropped to the size of node `other`
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Input:
      return "input";
    case OpKind::Conv:
      return "conv";
    case OpKind::Relu:
      return "relu";
    case OpKind::Add:
      return "add";
    case OpKind::Upsample:
      return "upsample";
  }
  return "?";
}

/// One node of the feed-forward graph. Inputs always reference earlier nodes.
struct NodeSpec {
  OpKind op = OpKind::Input;
  int input = -1;
  int other = -1;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int dilation = 1;

  friend bool operator==(const NodeSpec&, const NodeSpec&) = default;
};

template <class T>
struct ConvParams {
  Matrix<T> weight;  // out x (in * k * k)
  Vector<T> bias;    // out
};

/// Residual encoder-decoder with two stride-2 stages. `base` is the width of
/// the full-resolution stage; deeper stages use 2x and 4x.
inline std::vector<NodeSpec> default_architecture(int base = 8) {
  std::vector<NodeSpec> g;
  auto input = [&] {
    g.push_back({OpKind::Input, -1, -1, 0, kImageChannels});
    return 0;
  };
  auto conv = [&](int in, int cin, int cout, int k = 3, int stride = 1, int dilation = 1) {
    g.push_back({OpKind::Conv, in, -1, cin, cout, k, stride, dilation});
    return static_cast<int>(g.size()) - 1;
  };
  auto relu = [&](int in) {
    g.push_back({OpKind::Relu, in});
    return static_cast<int>(g.size()) - 1;
  };
  auto add = [&](int a, int b) {
    g.push_back({OpKind::Add, a, b});
    return static_cast<int>(g.size()) - 1;
  };
  auto up = [&](int in, int like) {
    g.push_back({OpKind::Upsample, in, like});
    return static_cast<int>(g.size()) - 1;
  };
  const int b1 = base, b2 = 2 * base, b4 = 4 * base;
  int x = input();
  const int skip1 = relu(conv(x, kImageChannels, b1));
  const int r0 = relu(conv(skip1, b1, b2, 3, 2));
  x = relu(conv(r0, b2, b2));
  const int skip2 = relu(add(conv(x, b2, b2), r0));
  const int r1 = relu(conv(skip2, b2, b4, 3, 2));
  x = relu(conv(r1, b4, b4, 3, 1, 2));
  x = relu(add(conv(x, b4, b4, 3, 1, 2), r1));
  x = relu(conv(x, b4, b2));
  x = add(up(x, skip2), skip2);
  x = relu(conv(x, b2, b1));
  x = add(up(x, skip1), skip1);
  x = relu(conv(x, b1, b1));
  conv(x, b1, kClasses, 1);
  return g;
}

template <class T>
class SegNet {
 public:
  SegNet() = default;

  /// Builds the graph with zeroed parameters.
  explicit SegNet(std::vector<NodeSpec> nodes) : nodes_(std::move(nodes)) {
    validate();
    params_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& n = nodes_[i];
      if (n.op != OpKind::Conv) continue;
      params_[i].weight = Matrix<T>::Zero(n.out_channels, n.in_channels * n.kernel * n.kernel);
      params_[i].bias = Vector<T>::Zero(n.out_channels);
    }
  }

  /// He-normal weights, zero biases. The final head uses unit-gain scaling.
  static SegNet initialized(std::vector<NodeSpec> nodes, std::uint64_t seed) {
    SegNet net(std::move(nodes));
    std::mt19937_64 rng(seed);
    const int head = net.output_node();
    for (std::size_t i = 0; i < net.nodes_.size(); ++i) {
      const auto& n = net.nodes_[i];
      if (n.op != OpKind::Conv) continue;
      const double fan_in = static_cast<double>(n.in_channels) * n.kernel * n.kernel;
      const double gain = static_cast<int>(i) == head ? 1.0 : 2.0;
      std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
      auto& w = net.params_[i].weight;
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<T>(dist(rng));
    }
    return net;
  }

  const std::vector<NodeSpec>& nodes() const { return nodes_; }
  int output_node() const { return static_cast<int>(nodes_.size()) - 1; }

  ConvParams<T>& params(int node) { return params_.at(node); }
  const ConvParams<T>& params(int node) const { return params_.at(node); }
  const std::vector<ConvParams<T>>& all_params() const { return params_; }
  std::vector<ConvParams<T>>& all_params() { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.weight.size() + p.bias.size();
    return n;
  }

  /// Flat parameter view in node order: each conv's weights then biases.
  T& parameter(std::size_t index) { return *locate(params_, index); }
  const T& parameter(std::size_t index) const {
    return *locate(const_cast<std::vector<ConvParams<T>>&>(params_), index);
  }

  /// Zero-valued parameter store with the same layout (used for gradients
  /// and momentum buffers).
  std::vector<ConvParams<T>> zeros_like() const {
    std::vector<ConvParams<T>> z(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      z[i].weight = Matrix<T>::Zero(params_[i].weight.rows(), params_[i].weight.cols());
      z[i].bias = Vector<T>::Zero(params_[i].bias.size());
    }
    return z;
  }

  template <class U>
  SegNet<U> cast() const {
    SegNet<U> out(nodes_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.all_params()[i].weight = params_[i].weight.template cast<U>();
      out.all_params()[i].bias = params_[i].bias.template cast<U>();
    }
    return out;
  }

  friend bool operator==(const SegNet& a, const SegNet& b) {
    if (a.nodes_ != b.nodes_) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      if (a.params_[i].weight != b.params_[i].weight || a.params_[i].bias != b.params_[i].bias) {
        return false;
      }
    }
    return true;
  }

 private:
  static T* locate(std::vector<ConvParams<T>>& params, std::size_t index) {
    for (auto& p : params) {
      const auto nw = static_cast<std::size_t>(p.weight.size());
      if (index < nw) return p.weight.data() + index;
      index -= nw;
      const auto nb = static_cast<std::size_t>(p.bias.size());
      if (index < nb) return p.bias.data() + index;
      index -= nb;
    }
    throw internal_error("parameter index out of range");
  }

  void validate() {
    if (nodes_.empty() || nodes_[0].op != OpKind::Input) {
      throw input_error("network graph must start with an input node");
    }
    std::vector<int> channels(nodes_.size(), 0);
    channels[0] = kImageChannels;
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
      auto& n = nodes_[i];
      const std::string where = "node " + std::to_string(i) + " (" + op_name(n.op) + ")";
      if (n.input < 0 || n.input >= static_cast<int>(i)) {
        throw input_error(where + ": input must reference an earlier node");
      }
      const int cin = channels[n.input];
      switch (n.op) {
        case OpKind::Conv:
          if (n.in_channels != cin || n.out_channels < 1 || n.kernel < 1 || n.kernel % 2 == 0 ||
              n.stride < 1 || n.dilation < 1) {
            throw input_error(where + ": invalid convolution geometry");
          }
          channels[i] = n.out_channels;
          break;
        case OpKind::Relu:
          channels[i] = cin;
          break;
        case OpKind::Add:
        case OpKind::Upsample:
          if (n.other < 0 || n.other >= static_cast<int>(i)) {
            throw input_error(where + ": second operand must reference an earlier node");
          }
          if (n.op == OpKind::Add && channels[n.other] != cin) {
            throw input_error(where + ": channel mismatch");
          }
          channels[i] = cin;
          break;
        case OpKind::Input:
          throw input_error(where + ": only node 0 may be an input");
      }
    }
    if (channels.back() != kClasses) {
      throw input_error("network head must produce " + std::to_string(kClasses) + " channels");
    }
  }

  std::vector<NodeSpec> nodes_;
  std::vector<ConvParams<T>> params_;
};

namespace detail {

inline int conv_out_size(int in, int k, int stride, int dilation) {
  const int pad = dilation * (k - 1) / 2;
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

template <class T>
void im2col(const FeatureMap<T>& in, int k, int stride, int dilation, int out_h, int out_w,
            Matrix<T>& col) {
  const int pad = dilation * (k - 1) / 2;
  const int H = in.height, W = in.width;
  col.resize(static_cast<Eigen::Index>(in.channels) * k * k, static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < in.channels; ++c) {
    const T* src = in.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        const int dy = ky * dilation - pad, dx = kx * dilation - pad;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + dy;
          T* drow = dst + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= H) {
            std::fill(drow, drow + out_w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * W;
          if (stride == 1) {
            const int lo = std::clamp(-dx, 0, out_w);
            const int hi = std::clamp(W - dx, lo, out_w);
            std::fill(drow, drow + lo, T(0));
            std::copy(srow + lo + dx, srow + hi + dx, drow + lo);
            std::fill(drow + hi, drow + out_w, T(0));
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride + dx;
              drow[ox] = (ix >= 0 && ix < W) ? srow[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const Matrix<T>& col, int k, int stride, int dilation, int out_h, int out_w,
                FeatureMap<T>& grad_in) {
  const int pad = dilation * (k - 1) / 2;
  const int H = grad_in.height, W = grad_in.width;
  for (int c = 0; c < grad_in.channels; ++c) {
    T* dst = grad_in.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        const int dy = ky * dilation - pad, dx = kx * dilation - pad;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + dy;
          if (iy < 0 || iy >= H) continue;
          const T* srow = src + static_cast<std::size_t>(oy) * out_w;
          T* drow = dst + static_cast<std::size_t>(iy) * W;
          if (stride == 1) {
            const int lo = std::clamp(-dx, 0, out_w);
            const int hi = std::clamp(W - dx, lo, out_w);
            for (int ox = lo; ox < hi; ++ox) drow[ox + dx] += srow[ox];
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride + dx;
              if (ix >= 0 && ix < W) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Per-image forward activations (and im2col buffers when kept for backward).
template <class T>
struct ForwardCache {
  std::vector<FeatureMap<T>> values;
  std::vector<Matrix<T>> cols;
};

/// Runs the graph on one image (channels x H*W). Returns class scores.
template <class T>
const FeatureMap<T>& forward_image(const SegNet<T>& net, FeatureMap<T> input,
                                   ForwardCache<T>& cache, bool keep_for_backward) {
  const auto& nodes = net.nodes();
  if (input.channels != kImageChannels) {
    throw input_error("network expects " + std::to_string(kImageChannels) +
                      " input channels, got " + std::to_string(input.channels));
  }
  cache.values.resize(nodes.size());
  cache.cols.resize(nodes.size());
  cache.values[0] = std::move(input);
  Matrix<T> scratch;
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    const FeatureMap<T>& in = cache.values[n.input];
    FeatureMap<T>& out = cache.values[i];
    switch (n.op) {
      case OpKind::Conv: {
        const int oh = detail::conv_out_size(in.height, n.kernel, n.stride, n.dilation);
        const int ow = detail::conv_out_size(in.width, n.kernel, n.stride, n.dilation);
        Matrix<T>& col = keep_for_backward ? cache.cols[i] : scratch;
        detail::im2col(in, n.kernel, n.stride, n.dilation, oh, ow, col);
        const auto& p = net.params(static_cast<int>(i));
        out.channels = n.out_channels;
        out.height = oh;
        out.width = ow;
        out.data.resize(n.out_channels, static_cast<Eigen::Index>(oh) * ow);
        out.data.noalias() = p.weight * col;
        out.data.colwise() += p.bias;
        break;
      }
      case OpKind::Relu:
        out.channels = in.channels;
        out.height = in.height;
        out.width = in.width;
        out.data = in.data.cwiseMax(T(0));
        break;
      case OpKind::Add: {
        const FeatureMap<T>& b = cache.values[n.other];
        if (b.height != in.height || b.width != in.width) {
          throw input_error("add node " + std::to_string(i) + ": spatial size mismatch");
        }
        out.channels = in.channels;
        out.height = in.height;
        out.width = in.width;
        out.data = in.data + b.data;
        break;
      }
      case OpKind::Upsample: {
        const FeatureMap<T>& like = cache.values[n.other];
        out.channels = in.channels;
        out.height = like.height;
        out.width = like.width;
        out.data.resize(in.channels, static_cast<Eigen::Index>(like.height) * like.width);
        for (int c = 0; c < in.channels; ++c) {
          const T* src = in.data.row(c).data();
          T* dst = out.data.row(c).data();
          for (int y = 0; y < like.height; ++y) {
            const int sy = std::min(y / 2, in.height - 1);
            for (int x = 0; x < like.width; ++x) {
              dst[static_cast<std::size_t>(y) * like.width + x] =
                  src[static_cast<std::size_t>(sy) * in.width + std::min(x / 2, in.width - 1)];
            }
          }
        }
        break;
      }
      case OpKind::Input:
        break;
    }
    if (!keep_for_backward) {
      // Activations no later node reads can be released early.
      for (std::size_t j = 1; j < i; ++j) {
        bool needed = false;
        for (std::size_t k2 = i + 1; k2 < nodes.size() && !needed; ++k2) {
          needed = nodes[k2].input == static_cast<int>(j) || nodes[k2].other == static_cast<int>(j);
        }
        if (!needed && cache.values[j].data.size() > 0) cache.values[j].data.resize(0, 0);
      }
    }
  }
  return cache.values.back();
}

/// Reusable per-node gradient buffers for `backward_image`.
template <class T>
struct BackwardWorkspace {
  std::vector<FeatureMap<T>> grads;
  std::vector<char> active;
  Matrix<T> dcol;
};

/// Reverse pass for one image. `grad_scores` is dL/dscores; parameter
/// gradients are accumulated into `grads`.
template <class T>
void backward_image(const SegNet<T>& net, const ForwardCache<T>& cache,
                    const Matrix<T>& grad_scores, std::vector<ConvParams<T>>& grads,
                    BackwardWorkspace<T>& ws) {
  const auto& nodes = net.nodes();
  auto& g = ws.grads;
  g.resize(nodes.size());
  ws.active.assign(nodes.size(), 0);
  auto ensure = [&](int idx) -> FeatureMap<T>& {
    FeatureMap<T>& fm = g[idx];
    if (!ws.active[idx]) {
      const auto& v = cache.values[idx];
      fm.channels = v.channels;
      fm.height = v.height;
      fm.width = v.width;
      fm.data.resize(v.channels, static_cast<Eigen::Index>(v.height) * v.width);
      fm.data.setZero();
      ws.active[idx] = 1;
    }
    return fm;
  };
  ensure(static_cast<int>(nodes.size()) - 1).data = grad_scores;
  Matrix<T>& dcol = ws.dcol;
  for (int i = static_cast<int>(nodes.size()) - 1; i >= 1; --i) {
    if (!ws.active[i]) continue;
    const auto& n = nodes[i];
    const Matrix<T>& gi = g[i].data;
    switch (n.op) {
      case OpKind::Conv: {
        const auto& p = net.params(i);
        const Matrix<T>& col = cache.cols[i];
        grads[i].weight.noalias() += gi * col.transpose();
        grads[i].bias += gi.rowwise().sum();
        if (n.input == 0) break;  // no gradient needed w.r.t. the image
        dcol.noalias() = p.weight.transpose() * gi;
        detail::col2im_add(dcol, n.kernel, n.stride, n.dilation, g[i].height, g[i].width,
                           ensure(n.input));
        break;
      }
      case OpKind::Relu: {
        const Matrix<T>& out = cache.values[i].data;
        ensure(n.input).data.array() += (out.array() > T(0)).select(gi.array(), T(0));
        break;
      }
      case OpKind::Add:
        ensure(n.input).data += gi;
        ensure(n.other).data += gi;
        break;
      case OpKind::Upsample: {
        FeatureMap<T>& gin = ensure(n.input);
        const int w = g[i].width;
        for (int c = 0; c < gin.channels; ++c) {
          const T* src = gi.row(c).data();
          T* dst = gin.data.row(c).data();
          for (int y = 0; y < g[i].height; ++y) {
            const int sy = std::min(y / 2, gin.height - 1);
            for (int x = 0; x < w; ++x) {
              dst[static_cast<std::size_t>(sy) * gin.width + std::min(x / 2, gin.width - 1)] +=
                  src[static_cast<std::size_t>(y) * w + x];
            }
          }
        }
        break;
      }
      case OpKind::Input:
        break;
    }
  }
}

template <class T>
void backward_image(const SegNet<T>& net, const ForwardCache<T>& cache,
                    const Matrix<T>& grad_scores, std::vector<ConvParams<T>>& grads) {
  BackwardWorkspace<T> ws;
  backward_image(net, cache, grad_scores, grads, ws);
}

/// Maps 8-bit channel values into the network's input range.
template <class T>
inline T normalize_channel(double v) {
  return static_cast<T>((v - 127.5) / 64.0);
}

/// Per-pixel softmax over the class rows of `scores`.
template <class T>
Matrix<T> softmax(const Matrix<T>& scores) {
  Matrix<T> p(scores.rows(), scores.cols());
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    T mx = scores(0, j);
    for (Eigen::Index c = 1; c < scores.rows(); ++c) mx = std::max(mx, scores(c, j));
    T sum = 0;
    for (Eigen::Index c = 0; c < scores.rows(); ++c) {
      p(c, j) = std::exp(scores(c, j) - mx);
      sum += p(c, j);
    }
    for (Eigen::Index c = 0; c < scores.rows(); ++c) p(c, j) /= sum;
  }
  return p;
}

/// Backpropagates dL/dp through the softmax: dz = p * (dp - sum_k p_k dp_k).
template <class T>
Matrix<T> softmax_backward(const Matrix<T>& probs, const Matrix<T>& grad_probs) {
  Matrix<T> dz(probs.rows(), probs.cols());
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    T dot = 0;
    for (Eigen::Index c = 0; c < probs.rows(); ++c) dot += probs(c, j) * grad_probs(c, j);
    for (Eigen::Index c = 0; c < probs.rows(); ++c) {
      dz(c, j) = probs(c, j) * (grad_probs(c, j) - dot);
    }
  }
  return dz;
}

template <class T>
FeatureMap<T> image_feature(const Tensor<T>& images, int n) {
  const int H = images.dim(2), W = images.dim(3);
  FeatureMap<T> fm(kImageChannels, H, W);
  const T* src = images.data() + static_cast<std::size_t>(n) * kImageChannels * H * W;
  std::copy(src, src + static_cast<std::size_t>(kImageChannels) * H * W, fm.data.data());
  return fm;
}

/// Class probabilities for a (batch, 3, H, W) image tensor.
template <class T>
Tensor<T> forward(const SegNet<T>& net, const Tensor<T>& images) {
  if (images.rank() != 4 || images.dim(1) != kImageChannels) {
    throw input_error("forward expects a (batch, 3, H, W) tensor");
  }
  const int B = images.dim(0), H = images.dim(2), W = images.dim(3);
  Tensor<T> probs({B, kClasses, H, W});
  ForwardCache<T> cache;
  for (int n = 0; n < B; ++n) {
    const auto& scores = forward_image(net, image_feature(images, n), cache, false);
    if (scores.height != H || scores.width != W) {
      throw internal_error("network output size differs from input size");
    }
    Matrix<T> p = softmax(scores.data);
    std::copy(p.data(), p.data() + p.size(),
              probs.data() + static_cast<std::size_t>(n) * kClasses * H * W);
  }
  return probs;
}

}  // namespace petroseg::net
