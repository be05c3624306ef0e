#pragma once

// Reconstruction decoder: z̃ = z_q·W_down (+ sinusoidal positions), a stack of
// pre-norm transformer encoder blocks, then ẑ = H̃·W_up.

#include <cmath>
#include <string>
#include <vector>

#include "vqlc/nn.hpp"
#include "vqlc/rng.hpp"
#include "vqlc/tensor.hpp"

namespace vqlc {

inline constexpr double kDecoderLnEps = 1e-5;

struct DecoderConfig {
  std::size_t dim = 0;        // d
  std::size_t model_dim = 0;  // d'
  std::size_t heads = 0;
  std::size_t ff_dim = 0;
  std::size_t layers = 4;
  bool positional = true;

  /// Fills unset fields: d' = d/2, heads = 8 when d' >= 64 else 2, ff = 4d'.
  static DecoderConfig defaults_for(std::size_t dim, std::size_t model_dim = 0) {
    DecoderConfig c;
    c.dim = dim;
    c.model_dim = model_dim ? model_dim : std::max<std::size_t>(1, dim / 2);
    c.heads = c.model_dim >= 64 ? 8 : 2;
    if (c.model_dim % c.heads != 0) c.heads = 1;
    c.ff_dim = 4 * c.model_dim;
    return c;
  }

  void validate() const {
    detail::require(dim >= 1 && model_dim >= 1, "decoder: dimensions must be >= 1");
    detail::require(model_dim <= dim, "decoder: d' must not exceed d");
    detail::require(heads >= 1 && model_dim % heads == 0, "decoder: d'=" + std::to_string(model_dim) +
                                                              " is not divisible by heads=" + std::to_string(heads));
    detail::require(ff_dim >= 1 && layers >= 1, "decoder: ff width and layer count must be >= 1");
  }
};

struct DecoderBlock {
  Tensor2 ln1_gain, ln1_shift;
  nn::MhaParams attn;
  Tensor2 ln2_gain, ln2_shift;
  Tensor2 ff_w1, ff_b1, ff_w2, ff_b2;

  static DecoderBlock zeros(std::size_t dm, std::size_t ff) {
    return {Tensor2(1, dm), Tensor2(1, dm), nn::MhaParams::zeros(dm), Tensor2(1, dm), Tensor2(1, dm),
            Tensor2(dm, ff), Tensor2(1, ff), Tensor2(ff, dm),         Tensor2(1, dm)};
  }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("ln1_gain", self.ln1_gain);
    f("ln1_shift", self.ln1_shift);
    nn::MhaParams::visit(self.attn, [&](const char* n, auto& t) { f(std::string("attn/") + n, t); });
    f("ln2_gain", self.ln2_gain);
    f("ln2_shift", self.ln2_shift);
    f("ff_w1", self.ff_w1);
    f("ff_b1", self.ff_b1);
    f("ff_w2", self.ff_w2);
    f("ff_b2", self.ff_b2);
  }
};

struct DecoderParams {
  DecoderConfig config;
  Tensor2 w_down;  // d×d'
  std::vector<DecoderBlock> blocks;
  Tensor2 w_up;  // d'×d

  static DecoderParams zeros(const DecoderConfig& c) {
    DecoderParams p;
    p.config = c;
    p.w_down = Tensor2(c.dim, c.model_dim);
    p.w_up = Tensor2(c.model_dim, c.dim);
    for (std::size_t i = 0; i < c.layers; ++i) p.blocks.push_back(DecoderBlock::zeros(c.model_dim, c.ff_dim));
    return p;
  }

  /// Gaussian weights with variance 1/fan_in, zero biases, unit LN gains.
  static DecoderParams init(const DecoderConfig& c, Rng& rng) {
    c.validate();
    DecoderParams p = zeros(c);
    const auto fill = [&](Tensor2& t) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(t.rows()));
      for (double& v : t.flat()) v = normal(rng, 0.0, sd);
    };
    fill(p.w_down);
    for (auto& b : p.blocks) {
      b.ln1_gain.fill(1.0);
      b.ln2_gain.fill(1.0);
      fill(b.attn.wq);
      fill(b.attn.wk);
      fill(b.attn.wv);
      fill(b.attn.wo);
      fill(b.ff_w1);
      fill(b.ff_w2);
    }
    fill(p.w_up);
    return p;
  }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("w_down"), self.w_down);
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      const std::string prefix = "blocks/" + std::to_string(i) + "/";
      DecoderBlock::visit(self.blocks[i], [&](const std::string& n, auto& t) { f(prefix + n, t); });
    }
    f(std::string("w_up"), self.w_up);
  }
};

inline Tensor2 sinusoidal_positions(std::size_t t, std::size_t dm) {
  Tensor2 pe(t, dm);
  for (std::size_t pos = 0; pos < t; ++pos) {
    for (std::size_t i = 0; i < dm; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dm));
      const double a = static_cast<double>(pos) * freq;
      pe(pos, i) = (i % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  }
  return pe;
}

struct DecoderBlockCache {
  nn::LayerNormCache ln1, ln2;
  Tensor2 a;     // LN1(x_in)
  nn::MhaCache attn;
  Tensor2 b;     // LN2(x_mid)
  Tensor2 hpre;  // b·W1 + b1
  Tensor2 hact;  // GELU(hpre)
};

struct DecoderCache {
  Tensor2 zq;
  Tensor2 top;  // output of the last block
  std::vector<DecoderBlockCache> blocks;
};

inline Tensor2 decode(const Tensor2& zq, const DecoderParams& p, DecoderCache* cache = nullptr) {
  const auto& c = p.config;
  detail::require(zq.cols() == c.dim, "decode: input width " + std::to_string(zq.cols()) +
                                          " does not match decoder dim " + std::to_string(c.dim));
  Tensor2 x = matmul(zq, p.w_down);
  if (c.positional) x += sinusoidal_positions(zq.rows(), c.model_dim);
  if (cache) {
    cache->zq = zq;
    cache->blocks.assign(p.blocks.size(), {});
  }
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    const auto& b = p.blocks[l];
    DecoderBlockCache local;
    DecoderBlockCache& bc = cache ? cache->blocks[l] : local;
    bc.a = nn::layernorm_fwd(x, b.ln1_gain, b.ln1_shift, kDecoderLnEps, &bc.ln1);
    x += nn::mha_fwd(bc.a, c.heads, b.attn, &bc.attn);
    bc.b = nn::layernorm_fwd(x, b.ln2_gain, b.ln2_shift, kDecoderLnEps, &bc.ln2);
    bc.hpre = nn::linear_fwd(bc.b, b.ff_w1, b.ff_b1);
    bc.hact = nn::gelu_fwd(bc.hpre);
    x += nn::linear_fwd(bc.hact, b.ff_w2, b.ff_b2);
  }
  Tensor2 out = matmul(x, p.w_up);
  if (cache) cache->top = std::move(x);
  return out;
}

struct DecoderGrads {
  Tensor2 dzq;
  DecoderParams dparams;
};

inline DecoderGrads decode_bwd(const Tensor2& dout, const DecoderCache& cache, const DecoderParams& p) {
  detail::require(dout.rows() == cache.zq.rows() && dout.cols() == p.config.dim, "decode_bwd: upstream shape mismatch");
  DecoderGrads g;
  g.dparams = DecoderParams::zeros(p.config);
  g.dparams.w_up = matmul_tn(cache.top, dout);
  Tensor2 dx = matmul_nt(dout, p.w_up);
  for (std::size_t li = p.blocks.size(); li-- > 0;) {
    const auto& b = p.blocks[li];
    const auto& bc = cache.blocks[li];
    auto& gb = g.dparams.blocks[li];
    // x_out = x_mid + FF(LN2(x_mid))
    auto f2 = nn::linear_bwd(bc.hact, b.ff_w2, dx);
    gb.ff_w2 = std::move(f2.dweight);
    gb.ff_b2 = std::move(f2.dbias);
    const Tensor2 dhpre = nn::gelu_bwd(bc.hpre, f2.dx);
    auto f1 = nn::linear_bwd(bc.b, b.ff_w1, dhpre);
    gb.ff_w1 = std::move(f1.dweight);
    gb.ff_b1 = std::move(f1.dbias);
    auto l2 = nn::layernorm_bwd(f1.dx, bc.ln2, b.ln2_gain);
    gb.ln2_gain = std::move(l2.dgain);
    gb.ln2_shift = std::move(l2.dshift);
    dx += l2.dx;
    // x_mid = x_in + MHA(LN1(x_in))
    auto at = nn::mha_bwd(dx, bc.attn, b.attn);
    gb.attn = std::move(at.dparams);
    auto l1 = nn::layernorm_bwd(at.dx, bc.ln1, b.ln1_gain);
    gb.ln1_gain = std::move(l1.dgain);
    gb.ln1_shift = std::move(l1.dshift);
    dx += l1.dx;
  }
  g.dparams.w_down = matmul_tn(cache.zq, dx);
  g.dzq = matmul_nt(dx, p.w_down);
  return g;
}

}  // namespace vqlc
