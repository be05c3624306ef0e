#pragma once

// End-to-end VQLC training: L = L_rec + β·L_commit with
//   L_rec    = mse(decode(z_q), sg[z_e])
//   L_commit = mse(z_e, sg[z_q])
// The decoder consumes z_e + sg[z_q − z_e] (straight-through), so the
// reconstruction gradient reaching the decoder input is copied onto z_e.
// The codebook only moves through ema_update.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqlc/assigner.hpp"
#include "vqlc/checkpoint.hpp"
#include "vqlc/dataset.hpp"
#include "vqlc/decoder.hpp"
#include "vqlc/encoder.hpp"
#include "vqlc/nn.hpp"
#include "vqlc/quantizer.hpp"

namespace vqlc {

enum class CodebookInit { kmeans, random };

struct TrainConfig {
  double beta = 0.25;
  double decay = 0.999;
  std::size_t codebook_size = 400;
  std::size_t top_k = 5;
  double temperature = 1.0;
  double lr = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_sentences = 16;
  std::size_t model_dim = 0;  // d'; 0 → d/2
  std::size_t heads = 0;      // 0 → 8 if d' >= 64 else 2
  std::size_t layers = 4;
  bool positional = true;
  std::uint64_t seed = 0;
  std::size_t kmeans_iters = 50;
  std::size_t kmeans_restarts = 10;
  CodebookInit init = CodebookInit::kmeans;
  double val_fraction = 0.1;
  std::optional<double> fixed_alpha;  // pins α (frozen) when set
  FilterPolicy filter;

  void validate() const {
    detail::require(std::isfinite(beta) && beta >= 0.0, "train: beta must be >= 0");
    detail::require(decay >= 0.0 && decay <= 1.0, "train: lambda (EMA decay) must lie in [0, 1]");
    detail::require(codebook_size >= 1, "train: codebook size must be >= 1");
    detail::require(top_k >= 1 && top_k <= codebook_size, "train: top-k must lie in [1, codebook size]");
    detail::require(temperature > 0.0, "train: temperature must be > 0");
    detail::require(lr > 0.0, "train: lr must be > 0");
    detail::require(batch_sentences >= 1, "train: batch size must be >= 1");
    detail::require(layers >= 1, "train: decoder layer count must be >= 1");
    detail::require(kmeans_iters >= 1 && kmeans_restarts >= 1, "train: kmeans iters and restarts must be >= 1");
    detail::require(val_fraction >= 0.0 && val_fraction < 1.0, "train: val fraction must lie in [0, 1)");
    if (fixed_alpha) EncoderParams::alpha_raw_for(*fixed_alpha);
    filter.validate();
  }

  DecoderConfig decoder_config(std::size_t dim) const {
    DecoderConfig c = DecoderConfig::defaults_for(dim, model_dim);
    if (heads) c.heads = heads;
    c.layers = layers;
    c.positional = positional;
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"beta", beta},
                        {"lambda", decay},
                        {"codebook_size", codebook_size},
                        {"top_k", top_k},
                        {"temperature", temperature},
                        {"lr", lr},
                        {"epochs", epochs},
                        {"batch_sentences", batch_sentences},
                        {"dprime", model_dim},
                        {"heads", heads},
                        {"layers", layers},
                        {"positional", positional},
                        {"seed", seed},
                        {"kmeans_iters", kmeans_iters},
                        {"kmeans_restarts", kmeans_restarts},
                        {"init", init == CodebookInit::kmeans ? "kmeans" : "random"},
                        {"val_fraction", val_fraction},
                        {"filter",
                         {{"min_token_frequency", filter.min_token_frequency},
                          {"max_occurrences_per_token", filter.max_occurrences_per_token},
                          {"keep_all_special", filter.keep_all_special},
                          {"seed", filter.seed}}}};
    j["fixed_alpha"] = fixed_alpha ? nlohmann::json(*fixed_alpha) : nlohmann::json(nullptr);
    return j;
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.beta = j.value("beta", c.beta);
    c.decay = j.value("lambda", c.decay);
    c.codebook_size = j.value("codebook_size", c.codebook_size);
    c.top_k = j.value("top_k", c.top_k);
    c.temperature = j.value("temperature", c.temperature);
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_sentences = j.value("batch_sentences", c.batch_sentences);
    c.model_dim = j.value("dprime", c.model_dim);
    c.heads = j.value("heads", c.heads);
    c.layers = j.value("layers", c.layers);
    c.positional = j.value("positional", c.positional);
    c.seed = j.value("seed", c.seed);
    c.kmeans_iters = j.value("kmeans_iters", c.kmeans_iters);
    c.kmeans_restarts = j.value("kmeans_restarts", c.kmeans_restarts);
    c.init = j.value("init", std::string("kmeans")) == "random" ? CodebookInit::random : CodebookInit::kmeans;
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    if (j.contains("fixed_alpha") && !j["fixed_alpha"].is_null()) c.fixed_alpha = j["fixed_alpha"].get<double>();
    if (j.contains("filter")) {
      const auto& f = j["filter"];
      c.filter.min_token_frequency = f.value("min_token_frequency", c.filter.min_token_frequency);
      c.filter.max_occurrences_per_token = f.value("max_occurrences_per_token", c.filter.max_occurrences_per_token);
      c.filter.keep_all_special = f.value("keep_all_special", c.filter.keep_all_special);
      c.filter.seed = f.value("seed", c.filter.seed);
    }
    return c;
  }
};

struct VqlcModel {
  EncoderParams encoder;
  Codebook codebook;
  DecoderParams decoder;
  TrainConfig config;
  std::size_t trained_epochs = 0;

  std::size_t dim() const noexcept { return encoder.dim(); }

  Tensor2 encode(const Tensor2& h) const { return vqlc::encode(h, encoder); }

  /// Inference-time concept index for each row of raw representations.
  std::vector<std::size_t> assign(const Tensor2& h) const { return assign_inference(encode(h), codebook); }

  const Tensor2& concept_vectors() const noexcept { return codebook.vectors; }
  std::string method() const { return "vqlc"; }

  TensorBlob to_blob() const {
    TensorBlob blob;
    EncoderParams::visit(encoder, [&](const auto& n, const Tensor2& t) { blob.put(std::string("encoder/") + n, t); });
    codebook.save_to(blob, "quantizer/");
    DecoderParams::visit(decoder, [&](const auto& n, const Tensor2& t) { blob.put("decoder/" + n, t); });
    const auto& dc = decoder.config;
    blob.meta() = {{"kind", "vqlc-model"},
                   {"config", config.to_json()},
                   {"trained_epochs", trained_epochs},
                   {"decoder",
                    {{"dim", dc.dim},
                     {"model_dim", dc.model_dim},
                     {"heads", dc.heads},
                     {"ff_dim", dc.ff_dim},
                     {"layers", dc.layers},
                     {"positional", dc.positional}}}};
    return blob;
  }

  static VqlcModel from_blob(const TensorBlob& blob) {
    detail::require(blob.meta().value("kind", std::string{}) == "vqlc-model", "checkpoint: not a VQLC model");
    VqlcModel m;
    m.config = TrainConfig::from_json(blob.meta().at("config"));
    m.trained_epochs = blob.meta().value("trained_epochs", std::size_t{0});
    EncoderParams::visit(m.encoder, [&](const auto& n, Tensor2& t) { t = blob.get(std::string("encoder/") + n); });
    m.codebook = Codebook::load_from(blob, "quantizer/");
    const auto& dj = blob.meta().at("decoder");
    DecoderConfig dc;
    dc.dim = dj.at("dim");
    dc.model_dim = dj.at("model_dim");
    dc.heads = dj.at("heads");
    dc.ff_dim = dj.at("ff_dim");
    dc.layers = dj.at("layers");
    dc.positional = dj.at("positional");
    dc.validate();
    m.decoder = DecoderParams::zeros(dc);
    DecoderParams::visit(m.decoder, [&](const auto& n, Tensor2& t) {
      const Tensor2& src = blob.get("decoder/" + n);
      detail::require(src.same_shape(t), "checkpoint: shape mismatch for decoder/" + n);
      t = src;
    });
    detail::require(m.encoder.weight.rows() == m.codebook.dim() && m.codebook.dim() == dc.dim,
                    "checkpoint: inconsistent dimensions across encoder, codebook and decoder");
    return m;
  }

  void save(const std::filesystem::path& path) const { to_blob().save(path); }
  static VqlcModel load(const std::filesystem::path& path) { return from_blob(TensorBlob::load(path)); }
};

static_assert(Assigner<VqlcModel>);

struct StepMetrics {
  double rec_loss = 0.0;
  double commit_loss = 0.0;
  double total_loss = 0.0;
  std::size_t tokens = 0;
  std::vector<std::size_t> codes;  // sampled code per token, batch order
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double rec_loss = 0.0;
  double commit_loss = 0.0;
  double total_loss = 0.0;
  double perplexity = 0.0;
  std::size_t active_codes = 0;
  double alpha = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},         {"rec_loss", rec_loss},     {"commit_loss", commit_loss},
            {"total_loss", total_loss}, {"perplexity", perplexity}, {"active_codes", active_codes},
            {"alpha", alpha}};
  }
};

/// Gradients from one batch, before any parameter or codebook change.
struct BatchGradients {
  EncoderParams encoder;
  DecoderParams decoder;
  Tensor2 encoder_out;  // z_e of all batch tokens, stacked
  std::vector<Tensor2> decoder_input_grads;  // ∂L_rec/∂(decoder input), per sentence
  std::vector<Tensor2> encoder_out_grads;    // ∂L/∂z_e, per sentence
  StepMetrics metrics;
};

namespace detail {

inline void add_into(Tensor2& acc, const Tensor2& g) {
  if (acc.empty()) {
    acc = g;
  } else {
    acc += g;
  }
}

}  // namespace detail

/// Forward/backward over a batch of sentence matrices with the given code
/// assignments per sentence.
inline BatchGradients batch_gradients(const VqlcModel& model, std::span<const Tensor2> batch,
                                      std::span<const std::vector<std::size_t>> codes) {
  detail::require(!batch.empty(), "train_step: empty batch");
  const double beta = model.config.beta;
  const std::size_t d = model.dim();
  std::size_t total_tokens = 0;
  for (const auto& h : batch) total_tokens += h.rows();
  detail::require(total_tokens > 0, "train_step: batch has no tokens");
  const double count = static_cast<double>(total_tokens * d);

  BatchGradients out;
  out.encoder = EncoderParams::zeros(d);
  out.decoder = DecoderParams::zeros(model.decoder.config);
  out.encoder_out = Tensor2(total_tokens, d);
  double rec_sum = 0.0, commit_sum = 0.0;
  std::size_t row = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Tensor2& h = batch[s];
    EncoderCache ecache;
    const Tensor2 ze = vqlc::encode(h, model.encoder, &ecache);
    const Tensor2 zq = gather_rows(model.codebook.vectors, codes[s]);
    DecoderCache dcache;
    const Tensor2 zhat = decode(zq, model.decoder, &dcache);
    Tensor2 dzhat(zhat.rows(), zhat.cols());
    Tensor2 dcommit(ze.rows(), ze.cols());
    for (std::size_t i = 0; i < ze.size(); ++i) {
      const double r = zhat[i] - ze[i];
      const double c = ze[i] - zq[i];
      rec_sum += r * r;
      commit_sum += c * c;
      dzhat[i] = 2.0 * r / count;
      dcommit[i] = beta * 2.0 * c / count;
    }
    auto dg = decode_bwd(dzhat, dcache, model.decoder);
    {
      std::vector<Tensor2*> acc_list, grad_list;
      DecoderParams::visit(out.decoder, [&](const auto&, Tensor2& t) { acc_list.push_back(&t); });
      DecoderParams::visit(dg.dparams, [&](const auto&, Tensor2& t) { grad_list.push_back(&t); });
      for (std::size_t i = 0; i < acc_list.size(); ++i) *acc_list[i] += *grad_list[i];
    }
    // Straight-through: the decoder-input gradient lands on z_e unchanged.
    Tensor2 dze = dg.dzq;
    dze += dcommit;
    auto eg = encode_bwd(dze, ecache, model.encoder);
    {
      std::vector<Tensor2*> acc_list, grad_list;
      EncoderParams::visit(out.encoder, [&](const auto&, Tensor2& t) { acc_list.push_back(&t); });
      EncoderParams::visit(eg.dparams, [&](const auto&, Tensor2& t) { grad_list.push_back(&t); });
      for (std::size_t i = 0; i < acc_list.size(); ++i) *acc_list[i] += *grad_list[i];
    }
    for (std::size_t i = 0; i < ze.rows(); ++i, ++row) {
      const auto src = ze.row(i);
      std::copy(src.begin(), src.end(), out.encoder_out.row(row).begin());
    }
    out.decoder_input_grads.push_back(std::move(dg.dzq));
    out.encoder_out_grads.push_back(std::move(dze));
    out.metrics.codes.insert(out.metrics.codes.end(), codes[s].begin(), codes[s].end());
  }
  out.metrics.tokens = total_tokens;
  out.metrics.rec_loss = rec_sum / count;
  out.metrics.commit_loss = commit_sum / count;
  out.metrics.total_loss = out.metrics.rec_loss + beta * out.metrics.commit_loss;
  return out;
}

/// Adam state for encoder + decoder parameters (never the codebook).
inline nn::ParamStore make_param_store(const VqlcModel& model) {
  nn::ParamStore store;
  if (model.config.fixed_alpha) store.freeze("encoder/alpha_raw");
  return store;
}

inline std::vector<nn::ParamRef> param_refs(VqlcModel& model, BatchGradients& g) {
  std::vector<nn::ParamRef> refs;
  std::vector<Tensor2*> gr;
  EncoderParams::visit(g.encoder, [&](const auto&, Tensor2& t) { gr.push_back(&t); });
  std::size_t i = 0;
  EncoderParams::visit(model.encoder, [&](const auto& n, Tensor2& t) {
    refs.push_back({std::string("encoder/") + n, &t, gr[i++]});
  });
  gr.clear();
  i = 0;
  DecoderParams::visit(g.decoder, [&](const auto&, Tensor2& t) { gr.push_back(&t); });
  DecoderParams::visit(model.decoder, [&](const auto& n, Tensor2& t) { refs.push_back({"decoder/" + n, &t, gr[i++]}); });
  return refs;
}

/// One optimizer step on encoder + decoder and one EMA update of the codebook.
inline StepMetrics train_step(VqlcModel& model, nn::ParamStore& store, std::span<const Tensor2> batch, Rng& rng) {
  const SamplerConfig sampler{model.config.top_k, model.config.temperature, 0};
  std::vector<std::vector<std::size_t>> codes;
  codes.reserve(batch.size());
  for (const auto& h : batch) codes.push_back(sample_codes_train(model.encode(h), model.codebook, sampler, rng));
  BatchGradients g = batch_gradients(model, batch, codes);
  if (!std::isfinite(g.metrics.total_loss)) {
    std::ostringstream msg;
    msg << "non-finite loss: rec=" << g.metrics.rec_loss << " commit=" << g.metrics.commit_loss
        << " alpha=" << model.encoder.alpha() << " tokens=" << g.metrics.tokens;
    throw RuntimeError(msg.str());
  }
  const auto refs = param_refs(model, g);
  nn::adam_step(store, refs, nn::AdamConfig{model.config.lr});
  ema_update(model.codebook, g.encoder_out, g.metrics.codes);
  return std::move(g.metrics);
}

// ---------------------------------------------------------------------------
// fit

struct FitResult {
  VqlcModel model;
  std::vector<EpochMetrics> log;  // entry 0 is the pre-training evaluation
  std::vector<std::size_t> train_sentences;
  std::vector<std::size_t> val_sentences;
  std::vector<std::size_t> pool;
};

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded sentence holdout. Sentences without tokens are dropped.
inline DataSplit split_sentences(const ActivationDataset& ds, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < ds.sentences.size(); ++s) {
    if (!ds.sentence_rows(s).empty()) idx.push_back(s);
  }
  Rng rng = make_rng(seed, "split");
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(idx.size())));
  DataSplit sp;
  sp.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  sp.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(sp.val.begin(), sp.val.end());
  std::sort(sp.train.begin(), sp.train.end());
  return sp;
}

/// Model with initialized encoder/decoder and a codebook built from the
/// encoder outputs of the filtered pool.
inline VqlcModel init_model(const ActivationDataset& ds, const TrainConfig& cfg, std::span<const std::size_t> pool) {
  cfg.validate();
  const std::size_t d = ds.dim();
  VqlcModel m;
  m.config = cfg;
  Rng enc_rng = make_rng(cfg.seed, "init-encoder");
  m.encoder = EncoderParams::init(d, enc_rng);
  if (cfg.fixed_alpha) m.encoder.alpha_raw[0] = EncoderParams::alpha_raw_for(*cfg.fixed_alpha);
  Rng dec_rng = make_rng(cfg.seed, "init-decoder");
  m.decoder = DecoderParams::init(cfg.decoder_config(d), dec_rng);
  detail::require(pool.size() >= cfg.codebook_size, "train: filtered pool has " + std::to_string(pool.size()) +
                                                         " tokens, fewer than codebook size " +
                                                         std::to_string(cfg.codebook_size));
  const Tensor2 pooled = m.encode(gather_rows(ds.representations, pool));
  m.codebook = cfg.init == CodebookInit::kmeans
                   ? kmeans_init(pooled, cfg.codebook_size, cfg.kmeans_iters, substream_seed(cfg.seed, "kmeans"),
                                 cfg.decay, cfg.kmeans_restarts)
                   : random_init(pooled, cfg.codebook_size, substream_seed(cfg.seed, "random-init"), cfg.decay);
  return m;
}

/// Codebook usage under inference assignment over the given sentences.
inline UsageStats sentence_usage(const VqlcModel& model, const ActivationDataset& ds,
                                 std::span<const std::size_t> sentences) {
  std::vector<std::size_t> rows;
  for (std::size_t s : sentences) {
    const auto r = ds.sentence_rows(s);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return usage_stats(model.assign(gather_rows(ds.representations, rows)), model.codebook.size());
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

inline FitResult fit(const ActivationDataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  FitResult res;
  DataSplit split = split_sentences(ds, cfg.val_fraction, cfg.seed);
  detail::require(!split.train.empty(), "train: dataset has no non-empty sentences");
  res.train_sentences = split.train;
  res.val_sentences = split.val.empty() ? split.train : split.val;

  std::vector<std::size_t> train_rows;
  for (std::size_t s : split.train) {
    const auto r = ds.sentence_rows(s);
    train_rows.insert(train_rows.end(), r.begin(), r.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  res.pool = filter_pool(ds, cfg.filter, train_rows);
  res.model = init_model(ds, cfg, res.pool);
  VqlcModel& model = res.model;

  std::vector<Tensor2> sentence_reps(ds.sentences.size());
  for (std::size_t s : split.train) sentence_reps[s] = ds.sentence_matrix(s);

  const auto record = [&](EpochMetrics m) {
    const UsageStats u = sentence_usage(model, ds, res.val_sentences);
    m.perplexity = u.perplexity;
    m.active_codes = u.active_codes;
    m.alpha = model.encoder.alpha();
    res.log.push_back(m);
    if (on_epoch) on_epoch(m);
  };

  // Epoch 0: losses of the untrained model under training-mode assignment.
  {
    Rng eval_rng = make_rng(cfg.seed, "baseline-eval");
    const SamplerConfig sampler{cfg.top_k, cfg.temperature, 0};
    double rec = 0.0, commit = 0.0, weight = 0.0;
    for (std::size_t b = 0; b < split.train.size(); b += cfg.batch_sentences) {
      std::vector<Tensor2> batch;
      std::vector<std::vector<std::size_t>> codes;
      for (std::size_t i = b; i < std::min(b + cfg.batch_sentences, split.train.size()); ++i) {
        batch.push_back(sentence_reps[split.train[i]]);
        codes.push_back(sample_codes_train(model.encode(batch.back()), model.codebook, sampler, eval_rng));
      }
      const auto g = batch_gradients(model, batch, codes);
      rec += g.metrics.rec_loss * static_cast<double>(g.metrics.tokens);
      commit += g.metrics.commit_loss * static_cast<double>(g.metrics.tokens);
      weight += static_cast<double>(g.metrics.tokens);
    }
    EpochMetrics m;
    m.rec_loss = rec / weight;
    m.commit_loss = commit / weight;
    m.total_loss = m.rec_loss + cfg.beta * m.commit_loss;
    record(m);
  }

  nn::ParamStore store = make_param_store(model);
  Rng sample_rng = make_rng(cfg.seed, "sampling");
  Rng shuffle_rng = make_rng(cfg.seed, "shuffle");
  std::vector<std::size_t> order = split.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double rec = 0.0, commit = 0.0, weight = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_sentences) {
      std::vector<Tensor2> batch;
      for (std::size_t i = b; i < std::min(b + cfg.batch_sentences, order.size()); ++i) {
        batch.push_back(sentence_reps[order[i]]);
      }
      const StepMetrics sm = train_step(model, store, batch, sample_rng);
      rec += sm.rec_loss * static_cast<double>(sm.tokens);
      commit += sm.commit_loss * static_cast<double>(sm.tokens);
      weight += static_cast<double>(sm.tokens);
    }
    ++model.trained_epochs;
    EpochMetrics m;
    m.epoch = epoch;
    m.rec_loss = rec / weight;
    m.commit_loss = commit / weight;
    m.total_loss = m.rec_loss + cfg.beta * m.commit_loss;
    record(m);
  }
  return res;
}

}  // namespace vqlc
