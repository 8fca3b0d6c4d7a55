#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "petroseg/net/segnet.hpp"
#include "petroseg/raster.hpp"

namespace petroseg::net {

inline constexpr double kProbabilityClamp = 1e-12;

struct LossWeights {
  double cross_entropy = 0.5;
  double lovasz = 0.5;
};

struct LossValue {
  double total = 0.0;
  double cross_entropy = 0.0;
  double lovasz = 0.0;
};

namespace detail {

inline std::size_t count_labeled(std::span<const PhaseLabel> labels) {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](PhaseLabel l) { return l != PhaseLabel::Unlabeled; }));
}

template <class T>
void check_loss_inputs(const Matrix<T>& probs, std::span<const PhaseLabel> labels) {
  if (probs.rows() != kClasses || static_cast<std::size_t>(probs.cols()) != labels.size()) {
    throw input_error("probability map and labels disagree in shape");
  }
  if (count_labeled(labels) == 0) throw input_error("loss needs at least one labeled pixel");
}

}  // namespace detail

/// Mean negative log-likelihood of the true class over labelled pixels.
/// `probs` is classes x pixels. Gradient w.r.t. probs is added into `grad`.
template <class T>
double cross_entropy(const Matrix<T>& probs, std::span<const PhaseLabel> labels,
                     Matrix<T>* grad = nullptr, double scale = 1.0) {
  detail::check_loss_inputs(probs, labels);
  const double n = static_cast<double>(detail::count_labeled(labels));
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == PhaseLabel::Unlabeled) continue;
    const int c = phase_index(labels[i]);
    const double p = static_cast<double>(probs(c, static_cast<Eigen::Index>(i)));
    const double pc = std::max(p, kProbabilityClamp);
    sum -= std::log(pc);
    if (grad && p > kProbabilityClamp) {
      (*grad)(c, static_cast<Eigen::Index>(i)) += static_cast<T>(-scale / (n * p));
    }
  }
  return sum / n;
}

/// Running Jaccard loss 1 - |gt minus first k+1| / |gt union first k+1| for
/// truth indicators sorted by descending error.
inline std::vector<double> lovasz_jaccard(const std::vector<char>& truth_sorted) {
  const std::size_t n = truth_sorted.size();
  double gts = 0.0;
  for (char t : truth_sorted) gts += t;
  std::vector<double> jac(n);
  double cum_truth = 0.0, cum_false = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    cum_truth += truth_sorted[k];
    cum_false += 1 - truth_sorted[k];
    jac[k] = 1.0 - (gts - cum_truth) / (gts + cum_false);
  }
  return jac;
}

/// Gradient of the Lovász extension of the Jaccard loss with respect to the
/// sorted errors, given truth indicators in the same (descending-error) order.
inline std::vector<double> lovasz_grad(const std::vector<char>& truth_sorted) {
  auto g = lovasz_jaccard(truth_sorted);
  for (std::size_t k = g.size(); k-- > 1;) g[k] -= g[k - 1];
  return g;
}

/// Lovász-Softmax loss for one class; returns the loss and adds its gradient
/// w.r.t. probs(cls, :) (scaled) into `grad`.
template <class T>
double lovasz_class(const Matrix<T>& probs, std::span<const PhaseLabel> labels, int cls,
                    Matrix<T>* grad, double scale) {
  std::vector<std::size_t> pix;
  pix.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != PhaseLabel::Unlabeled) pix.push_back(i);
  }
  std::vector<double> err(pix.size());
  std::vector<char> fg(pix.size());
  for (std::size_t k = 0; k < pix.size(); ++k) {
    const double p = static_cast<double>(probs(cls, static_cast<Eigen::Index>(pix[k])));
    fg[k] = phase_index(labels[pix[k]]) == cls;
    err[k] = fg[k] ? 1.0 - p : p;
  }
  std::vector<std::size_t> order(pix.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
  std::vector<char> fg_sorted(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) fg_sorted[k] = fg[order[k]];
  const auto jac = lovasz_jaccard(fg_sorted);
  // Summation by parts of sum err_k * (J_k - J_{k-1}); exact at vertices.
  double loss = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double next = k + 1 < order.size() ? err[order[k + 1]] : 0.0;
    loss += (err[order[k]] - next) * jac[k];
  }
  for (std::size_t k = 0; grad && k < order.size(); ++k) {
    const std::size_t j = order[k];
    const double g = k == 0 ? jac[0] : jac[k] - jac[k - 1];
    const double dm_dp = fg[j] ? -1.0 : 1.0;
    (*grad)(cls, static_cast<Eigen::Index>(pix[j])) += static_cast<T>(scale * g * dm_dp);
  }
  return loss;
}

/// Mean Lovász-Softmax loss over the classes present among labelled pixels.
template <class T>
double lovasz_softmax(const Matrix<T>& probs, std::span<const PhaseLabel> labels,
                      Matrix<T>* grad = nullptr, double scale = 1.0) {
  detail::check_loss_inputs(probs, labels);
  const auto hist = label_histogram(labels);
  std::vector<int> present;
  for (int c = 0; c < kClasses; ++c) {
    if (hist[c] > 0) present.push_back(c);
  }
  double total = 0.0;
  const double per_class = scale / static_cast<double>(present.size());
  for (int c : present) total += lovasz_class(probs, labels, c, grad, per_class);
  return total / static_cast<double>(present.size());
}

template <class T>
LossValue combined_loss(const Matrix<T>& probs, std::span<const PhaseLabel> labels,
                        const LossWeights& w, Matrix<T>* grad = nullptr) {
  LossValue v;
  if (w.cross_entropy != 0.0) {
    v.cross_entropy = cross_entropy(probs, labels, grad, w.cross_entropy);
  }
  if (w.lovasz != 0.0) {
    v.lovasz = lovasz_softmax(probs, labels, grad, w.lovasz);
  }
  v.total = w.cross_entropy * v.cross_entropy + w.lovasz * v.lovasz;
  return v;
}

/// Flattens a (batch, 3, H, W) probability tensor into classes x pixels,
/// pixel order matching row-major (batch, y, x) label order.
template <class T>
Matrix<T> flatten_probs(const Tensor<T>& probs) {
  const int B = probs.dim(0), H = probs.dim(2), W = probs.dim(3);
  const Eigen::Index hw = static_cast<Eigen::Index>(H) * W;
  Matrix<T> out(kClasses, B * hw);
  for (int n = 0; n < B; ++n) {
    for (int c = 0; c < kClasses; ++c) {
      const T* src = probs.data() + (static_cast<std::size_t>(n) * kClasses + c) * hw;
      std::copy(src, src + hw, out.row(c).data() + n * hw);
    }
  }
  return out;
}

template <class T>
double cross_entropy(const Tensor<T>& probs, std::span<const PhaseLabel> labels) {
  return cross_entropy(flatten_probs(probs), labels);
}

template <class T>
double lovasz_softmax(const Tensor<T>& probs, std::span<const PhaseLabel> labels) {
  return lovasz_softmax(flatten_probs(probs), labels);
}

template <class T>
LossValue combined_loss(const Tensor<T>& probs, std::span<const PhaseLabel> labels,
                        const LossWeights& w = {}) {
  return combined_loss(flatten_probs(probs), labels, w);
}

}  // namespace petroseg::net
