#pragma once

// Adaptive residual encoder:
//   h̃   = LN(h·W + b)
//   z_e = (1 − α)·h + α·h̃,   α = 0.5·sigmoid(alpha_raw) ∈ (0, 0.5)

#include <algorithm>
#include <cmath>

#include "vqlc/nn.hpp"
#include "vqlc/rng.hpp"
#include "vqlc/tensor.hpp"

namespace vqlc {

inline constexpr double kEncoderLnEps = 1e-5;

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

/// alpha_raw is read through a clamp to ±30 so α stays strictly inside
/// (0, 0.5) in double precision; outside the clamp its gradient is zero.
inline constexpr double kAlphaRawBound = 30.0;

struct EncoderParams {
  Tensor2 weight;     // d×d
  Tensor2 bias;       // 1×d
  Tensor2 ln_gain;    // 1×d
  Tensor2 ln_shift;   // 1×d
  Tensor2 alpha_raw;  // 1×1

  std::size_t dim() const noexcept { return weight.rows(); }
  double alpha_raw_clamped() const noexcept { return std::clamp(alpha_raw[0], -kAlphaRawBound, kAlphaRawBound); }
  double alpha() const noexcept { return 0.5 * sigmoid(alpha_raw_clamped()); }

  /// Unconstrained parameter giving the requested α; α must lie in (0, 0.5).
  static double alpha_raw_for(double alpha) {
    detail::require(alpha > 0.0 && alpha < 0.5, "encoder: alpha must lie in (0, 0.5)");
    const double s = 2.0 * alpha;
    return std::log(s / (1.0 - s));
  }

  static EncoderParams zeros(std::size_t d) {
    return {Tensor2(d, d), Tensor2(1, d), Tensor2(1, d), Tensor2(1, d), Tensor2(1, 1)};
  }

  /// Identity plus N(0, 0.01²) noise, zero bias, unit LN gain, α = 0.25.
  static EncoderParams init(std::size_t d, Rng& rng) {
    EncoderParams p = zeros(d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) p.weight(i, j) = (i == j ? 1.0 : 0.0) + normal(rng, 0.0, 0.01);
    }
    p.ln_gain.fill(1.0);
    return p;
  }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("weight", self.weight);
    f("bias", self.bias);
    f("ln_gain", self.ln_gain);
    f("ln_shift", self.ln_shift);
    f("alpha_raw", self.alpha_raw);
  }
};

struct EncoderCache {
  Tensor2 h;
  Tensor2 htilde;
  nn::LayerNormCache ln;
};

inline Tensor2 encode(const Tensor2& h, const EncoderParams& p, EncoderCache* cache = nullptr) {
  detail::require(h.cols() == p.dim(), "encode: input width " + std::to_string(h.cols()) +
                                           " does not match encoder dim " + std::to_string(p.dim()));
  const Tensor2 pre = nn::linear_fwd(h, p.weight, p.bias);
  nn::LayerNormCache ln;
  Tensor2 htilde = nn::layernorm_fwd(pre, p.ln_gain, p.ln_shift, kEncoderLnEps, cache ? &ln : nullptr);
  const double a = p.alpha();
  Tensor2 out(h.rows(), h.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - a) * h[i] + a * htilde[i];
  if (cache) {
    cache->h = h;
    cache->htilde = std::move(htilde);
    cache->ln = std::move(ln);
  }
  return out;
}

struct EncoderGrads {
  Tensor2 dh;
  EncoderParams dparams;
};

inline EncoderGrads encode_bwd(const Tensor2& dout, const EncoderCache& cache, const EncoderParams& p) {
  detail::require(dout.same_shape(cache.h), "encode_bwd: upstream shape mismatch");
  const double a = p.alpha();
  double dalpha = 0.0;
  Tensor2 dhtilde(dout.rows(), dout.cols());
  for (std::size_t i = 0; i < dout.size(); ++i) {
    dalpha += dout[i] * (cache.htilde[i] - cache.h[i]);
    dhtilde[i] = a * dout[i];
  }
  auto lg = nn::layernorm_bwd(dhtilde, cache.ln, p.ln_gain);
  auto lin = nn::linear_bwd(cache.h, p.weight, lg.dx);
  EncoderGrads g;
  g.dh = std::move(lin.dx);
  for (std::size_t i = 0; i < dout.size(); ++i) g.dh[i] += (1.0 - a) * dout[i];
  const double s = sigmoid(p.alpha_raw_clamped());
  const bool inside = std::abs(p.alpha_raw[0]) < kAlphaRawBound;
  g.dparams.weight = std::move(lin.dweight);
  g.dparams.bias = std::move(lin.dbias);
  g.dparams.ln_gain = std::move(lg.dgain);
  g.dparams.ln_shift = std::move(lg.dshift);
  g.dparams.alpha_raw = Tensor2(1, 1, inside ? dalpha * 0.5 * s * (1.0 - s) : 0.0);
  return g;
}

}  // namespace vqlc
