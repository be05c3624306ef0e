#pragma once

// Multinomial linear probe (softmax regression) trained by deterministic
// full-batch gradient descent.
//   loss(W, b) = mean_i CE(softmax(x_i·W + b), y_i) + l2·‖W‖²

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <vector>

#include "vqlc/error.hpp"
#include "vqlc/tensor.hpp"

namespace vqlc {

struct ProbeConfig {
  std::size_t epochs = 500;
  double lr = 0.1;
  double l2 = 1e-4;

  void validate() const {
    detail::require(epochs >= 1, "probe: epochs must be >= 1");
    detail::require(lr > 0.0, "probe: lr must be > 0");
    detail::require(l2 >= 0.0, "probe: l2 must be >= 0");
  }
};

struct ProbeModel {
  Tensor2 weight;  // d×C
  Tensor2 bias;    // 1×C

  std::size_t classes() const noexcept { return weight.cols(); }

  Tensor2 logits(const Tensor2& x) const {
    detail::require(x.cols() == weight.rows(), "probe: input width " + std::to_string(x.cols()) +
                                                   " does not match probe dim " + std::to_string(weight.rows()));
    Tensor2 z = matmul(x, weight);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto r = z.row(i);
      for (std::size_t c = 0; c < r.size(); ++c) r[c] += bias[c];
    }
    return z;
  }

  /// Arg-max class per row; smallest class on ties.
  std::vector<std::size_t> predict(const Tensor2& x) const {
    const Tensor2 z = logits(x);
    std::vector<std::size_t> out(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const auto r = z.row(i);
      out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
  }
};

inline double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  detail::require(predicted.size() == truth.size(), "accuracy: length mismatch");
  detail::require(!truth.empty(), "accuracy: no samples");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

inline double probe_accuracy(const ProbeModel& p, const Tensor2& x, std::span<const std::size_t> labels) {
  return accuracy(p.predict(x), labels);
}

struct ProbeGrads {
  double loss = 0.0;
  Tensor2 dweight;
  Tensor2 dbias;
};

/// Loss and its gradient with respect to weight and bias.
inline ProbeGrads probe_loss_grad(const ProbeModel& p, const Tensor2& x, std::span<const std::size_t> labels,
                                  double l2) {
  detail::require(x.rows() == labels.size(), "probe: row/label count mismatch");
  const std::size_t n = x.rows(), c = p.classes();
  Tensor2 z = p.logits(x);
  double ce = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto r = z.row(i);
    detail::require(labels[i] < c, "probe: label " + std::to_string(labels[i]) + " out of range");
    const double m = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double& v : r) {
      v = std::exp(v - m);
      s += v;
    }
    for (double& v : r) v /= s;
    ce -= std::log(std::max(r[labels[i]], 1e-300));
    r[labels[i]] -= 1.0;  // softmax − onehot
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  z *= inv_n;
  ProbeGrads g;
  g.dweight = matmul_tn(x, z);
  g.dbias = Tensor2(1, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) g.dbias[k] += z(i, k);
  }
  double reg = 0.0;
  for (std::size_t i = 0; i < p.weight.size(); ++i) {
    reg += p.weight[i] * p.weight[i];
    g.dweight[i] += 2.0 * l2 * p.weight[i];
  }
  g.loss = ce * inv_n + l2 * reg;
  return g;
}

/// Zero-initialized, so the result depends only on the inputs.
inline ProbeModel train_probe(const Tensor2& x, std::span<const std::size_t> labels, const ProbeConfig& cfg = {}) {
  cfg.validate();
  detail::require(x.rows() == labels.size(), "probe: row/label count mismatch");
  detail::require(x.rows() >= 1, "probe: no samples");
  const std::set<std::size_t> distinct(labels.begin(), labels.end());
  detail::require(distinct.size() >= 2, "probe: need at least 2 classes, got " + std::to_string(distinct.size()));
  const std::size_t c = *distinct.rbegin() + 1;
  ProbeModel p{Tensor2(x.cols(), c), Tensor2(1, c)};
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const ProbeGrads g = probe_loss_grad(p, x, labels, cfg.l2);
    for (std::size_t i = 0; i < p.weight.size(); ++i) p.weight[i] -= cfg.lr * g.dweight[i];
    for (std::size_t k = 0; k < c; ++k) p.bias[k] -= cfg.lr * g.dbias[k];
  }
  return p;
}

}  // namespace vqlc
