#pragma once

// Dense kernels with hand-written backward passes, plus an Adam optimizer.
// Reductions accumulate sequentially in index order so results are bitwise
// reproducible.

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vqlc/error.hpp"
#include "vqlc/tensor.hpp"

namespace vqlc::nn {

// ---------------------------------------------------------------------------
// Linear: y = x·W + b

inline Tensor2 linear_fwd(const Tensor2& x, const Tensor2& weight, const Tensor2& bias) {
  detail::require(x.cols() == weight.rows(), "linear: input width " + std::to_string(x.cols()) +
                                                 " does not match weight " + weight.shape_str());
  detail::require(bias.rows() == 1 && bias.cols() == weight.cols(),
                  "linear: bias " + bias.shape_str() + " does not match weight " + weight.shape_str());
  Tensor2 y = matmul(x, weight);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
  return y;
}

struct LinearGrads {
  Tensor2 dx;
  Tensor2 dweight;
  Tensor2 dbias;
};

inline LinearGrads linear_bwd(const Tensor2& x, const Tensor2& weight, const Tensor2& dy) {
  detail::require(dy.rows() == x.rows() && dy.cols() == weight.cols(), "linear_bwd: upstream shape mismatch");
  LinearGrads g;
  g.dx = matmul_nt(dy, weight);
  g.dweight = matmul_tn(x, dy);
  g.dbias = Tensor2(1, dy.cols());
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    for (std::size_t j = 0; j < dy.cols(); ++j) g.dbias[j] += dy(i, j);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Layer normalization over each row.

struct LayerNormCache {
  Tensor2 xhat;
  std::vector<double> inv_std;
};

inline Tensor2 layernorm_fwd(const Tensor2& x, const Tensor2& gain, const Tensor2& shift, double eps,
                             LayerNormCache* cache = nullptr) {
  detail::require(eps > 0.0, "layernorm: eps must be positive");
  detail::require(gain.size() == x.cols() && shift.size() == x.cols(), "layernorm: affine width mismatch");
  const std::size_t n = x.cols();
  Tensor2 xhat(x.rows(), n);
  std::vector<double> inv_std(x.rows());
  Tensor2 y(x.rows(), n);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (r[j] - mean) * is;
      xhat(i, j) = h;
      y(i, j) = h * gain[j] + shift[j];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

struct LayerNormGrads {
  Tensor2 dx;
  Tensor2 dgain;
  Tensor2 dshift;
};

inline LayerNormGrads layernorm_bwd(const Tensor2& dy, const LayerNormCache& cache, const Tensor2& gain) {
  const std::size_t n = dy.cols();
  LayerNormGrads g{Tensor2(dy.rows(), n), Tensor2(1, n), Tensor2(1, n)};
  std::vector<double> dxhat(n);
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    double mean_d = 0.0, mean_dx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = dy(i, j);
      const double h = cache.xhat(i, j);
      g.dgain[j] += d * h;
      g.dshift[j] += d;
      dxhat[j] = d * gain[j];
      mean_d += dxhat[j];
      mean_dx += dxhat[j] * h;
    }
    mean_d /= static_cast<double>(n);
    mean_dx /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
      g.dx(i, j) = cache.inv_std[i] * (dxhat[j] - mean_d - cache.xhat(i, j) * mean_dx);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// GELU (exact, erf form).

inline double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_grad(double x) noexcept {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

inline Tensor2 gelu_fwd(const Tensor2& x) {
  Tensor2 y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  return y;
}

inline Tensor2 gelu_bwd(const Tensor2& x, const Tensor2& dy) {
  Tensor2 dx(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * gelu_grad(x[i]);
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head self-attention without masking.

struct MhaParams {
  Tensor2 wq, wk, wv, wo;  // d×d
  Tensor2 bq, bk, bv, bo;  // 1×d

  static MhaParams zeros(std::size_t d) {
    return {Tensor2(d, d), Tensor2(d, d), Tensor2(d, d), Tensor2(d, d),
            Tensor2(1, d), Tensor2(1, d), Tensor2(1, d), Tensor2(1, d)};
  }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("wq", self.wq);
    f("wk", self.wk);
    f("wv", self.wv);
    f("wo", self.wo);
    f("bq", self.bq);
    f("bk", self.bk);
    f("bv", self.bv);
    f("bo", self.bo);
  }
};

struct MhaCache {
  Tensor2 x, q, k, v, ctx;
  std::vector<Tensor2> probs;  // one T×T matrix per head
  std::size_t heads = 0;
};

inline Tensor2 mha_fwd(const Tensor2& x, std::size_t heads, const MhaParams& p, MhaCache* cache = nullptr) {
  const std::size_t t = x.rows(), d = x.cols();
  detail::require(heads >= 1 && d % heads == 0,
                  "mha: width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor2 q = linear_fwd(x, p.wq, p.bq);
  Tensor2 k = linear_fwd(x, p.wk, p.bk);
  Tensor2 v = linear_fwd(x, p.wv, p.bv);
  Tensor2 ctx(t, d);
  std::vector<Tensor2> probs;
  probs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    Tensor2 pr(t, t);
    for (std::size_t i = 0; i < t; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < t; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q(i, off + c) * k(j, off + c);
        s *= scale;
        pr(i, j) = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        pr(i, j) = std::exp(pr(i, j) - mx);
        z += pr(i, j);
      }
      for (std::size_t j = 0; j < t; ++j) pr(i, j) /= z;
      for (std::size_t j = 0; j < t; ++j) {
        const double w = pr(i, j);
        for (std::size_t c = 0; c < dh; ++c) ctx(i, off + c) += w * v(j, off + c);
      }
    }
    probs.push_back(std::move(pr));
  }
  Tensor2 out = linear_fwd(ctx, p.wo, p.bo);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->ctx = std::move(ctx);
    cache->probs = std::move(probs);
    cache->heads = heads;
  }
  return out;
}

struct MhaGrads {
  Tensor2 dx;
  MhaParams dparams;
};

inline MhaGrads mha_bwd(const Tensor2& dout, const MhaCache& c, const MhaParams& p) {
  const std::size_t t = c.x.rows(), d = c.x.cols(), heads = c.heads, dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  MhaGrads g;
  auto out_g = linear_bwd(c.ctx, p.wo, dout);
  g.dparams.wo = std::move(out_g.dweight);
  g.dparams.bo = std::move(out_g.dbias);
  const Tensor2& dctx = out_g.dx;
  Tensor2 dq(t, d), dk(t, d), dv(t, d);
  Tensor2 dp(t, t);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    const Tensor2& pr = c.probs[h];
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < t; ++j) {
        double s = 0.0;
        for (std::size_t cc = 0; cc < dh; ++cc) s += dctx(i, off + cc) * c.v(j, off + cc);
        dp(i, j) = s;
        const double w = pr(i, j);
        for (std::size_t cc = 0; cc < dh; ++cc) dv(j, off + cc) += w * dctx(i, off + cc);
      }
    }
    for (std::size_t i = 0; i < t; ++i) {
      double rs = 0.0;
      for (std::size_t j = 0; j < t; ++j) rs += dp(i, j) * pr(i, j);
      for (std::size_t j = 0; j < t; ++j) {
        const double ds = pr(i, j) * (dp(i, j) - rs) * scale;
        if (ds == 0.0) continue;
        for (std::size_t cc = 0; cc < dh; ++cc) {
          dq(i, off + cc) += ds * c.k(j, off + cc);
          dk(j, off + cc) += ds * c.q(i, off + cc);
        }
      }
    }
  }
  auto qg = linear_bwd(c.x, p.wq, dq);
  auto kg = linear_bwd(c.x, p.wk, dk);
  auto vg = linear_bwd(c.x, p.wv, dv);
  g.dparams.wq = std::move(qg.dweight);
  g.dparams.bq = std::move(qg.dbias);
  g.dparams.wk = std::move(kg.dweight);
  g.dparams.bk = std::move(kg.dbias);
  g.dparams.wv = std::move(vg.dweight);
  g.dparams.bv = std::move(vg.dbias);
  g.dx = std::move(qg.dx);
  g.dx += kg.dx;
  g.dx += vg.dx;
  return g;
}

// ---------------------------------------------------------------------------
// Mean squared error.

inline double mse(const Tensor2& a, const Tensor2& b) {
  detail::require(a.same_shape(b), "mse: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  detail::require(a.size() > 0, "mse: empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// Gradient of mse(a, b) with respect to a.
inline Tensor2 mse_bwd(const Tensor2& a, const Tensor2& b) {
  detail::require(a.same_shape(b), "mse_bwd: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor2 g(a.rows(), a.cols());
  const double k = 2.0 / static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = k * (a[i] - b[i]);
  return g;
}

// ---------------------------------------------------------------------------
// Adam optimizer state.

struct ParamRef {
  std::string name;
  Tensor2* value;
  const Tensor2* grad;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Optimizer state keyed by parameter name. Only parameters passed to
/// adam_step ever get a slot here.
class ParamStore {
 public:
  struct Slot {
    Tensor2 m;
    Tensor2 v;
    bool frozen = false;
  };

  void freeze(const std::string& name, bool frozen = true) { slots_[name].frozen = frozen; }
  bool contains(const std::string& name) const { return slots_.count(name) != 0; }
  const std::map<std::string, Slot>& slots() const noexcept { return slots_; }
  std::map<std::string, Slot>& slots() noexcept { return slots_; }
  std::int64_t step() const noexcept { return step_; }
  void set_step(std::int64_t s) noexcept { step_ = s; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : slots_) out.push_back(k);
    return out;
  }

  friend void adam_step(ParamStore& store, std::span<const ParamRef> params, const AdamConfig& cfg);

 private:
  std::map<std::string, Slot> slots_;
  std::int64_t step_ = 0;
};

inline void adam_step(ParamStore& store, std::span<const ParamRef> params, const AdamConfig& cfg) {
  ++store.step_;
  const double t = static_cast<double>(store.step_);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (const ParamRef& p : params) {
    detail::require(p.value && p.grad && p.value->same_shape(*p.grad),
                    "adam_step: gradient shape does not match parameter '" + p.name + "'");
    auto& slot = store.slots_[p.name];
    if (slot.m.empty() && !p.value->empty()) {
      slot.m = Tensor2(p.value->rows(), p.value->cols());
      slot.v = Tensor2(p.value->rows(), p.value->cols());
    }
    detail::require(slot.m.same_shape(*p.value), "adam_step: optimizer state shape changed for '" + p.name + "'");
    if (slot.frozen) continue;
    Tensor2& w = *p.value;
    const Tensor2& g = *p.grad;
    for (std::size_t i = 0; i < w.size(); ++i) {
      slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g[i];
      slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = slot.m[i] / c1;
      const double vhat = slot.v[i] / c2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace vqlc::nn
