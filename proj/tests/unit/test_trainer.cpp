#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "vqlc/trainer.hpp"

using namespace vqlc;
using oracle::random_tensor;

namespace {

TrainConfig small_config(std::uint64_t seed = 0) {
  TrainConfig c;
  c.codebook_size = 4;
  c.top_k = 2;
  c.model_dim = 4;
  c.heads = 2;
  c.layers = 1;
  c.epochs = 2;
  c.batch_sentences = 4;
  c.kmeans_restarts = 1;
  c.kmeans_iters = 20;
  c.lr = 1e-2;
  c.seed = seed;
  c.filter.min_token_frequency = 1;
  return c;
}

const ActivationDataset& small_data() {
  static const ActivationDataset ds = synthesize_dataset(240, 6, 3, 1, {6, 4, 0.1});
  return ds;
}

VqlcModel small_model(const TrainConfig& c = small_config()) {
  const auto& ds = small_data();
  return init_model(ds, c, filter_pool(ds, c.filter));
}

std::vector<Tensor2> first_batch(std::size_t n = 4) {
  std::vector<Tensor2> b;
  for (std::size_t s = 0; s < n; ++s) b.push_back(small_data().sentence_matrix(s));
  return b;
}

std::vector<std::vector<std::size_t>> inference_codes(const VqlcModel& m, const std::vector<Tensor2>& batch) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& h : batch) out.push_back(m.assign(h));
  return out;
}

bool same_tensor(const Tensor2& a, const Tensor2& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

std::filesystem::path tmp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

// ---------------------------------------------------------------------------
// Objective contract

TEST(Objective, TotalIsRecPlusQuarterCommitEveryStep) {
  VqlcModel m = small_model();
  EXPECT_EQ(m.config.beta, 0.25);
  nn::ParamStore store = make_param_store(m);
  Rng rng(3);
  const auto& ds = small_data();
  for (std::size_t s = 0; s + 4 <= ds.sentences.size(); s += 4) {
    std::vector<Tensor2> batch;
    for (std::size_t i = s; i < s + 4; ++i) batch.push_back(ds.sentence_matrix(i));
    const StepMetrics sm = train_step(m, store, batch, rng);
    EXPECT_NEAR(sm.total_loss, sm.rec_loss + 0.25 * sm.commit_loss, 1e-9);
    EXPECT_GT(sm.commit_loss, 0.0);
  }
}

TEST(Objective, EpochLogSatisfiesDecomposition) {
  const FitResult r = fit(small_data(), small_config());
  ASSERT_EQ(r.log.size(), 3u);
  for (const auto& e : r.log) EXPECT_NEAR(e.total_loss, e.rec_loss + 0.25 * e.commit_loss, 1e-9);
}

TEST(Objective, LossesMatchDirectEvaluation) {
  const VqlcModel m = small_model();
  const auto batch = first_batch(1);
  const auto codes = inference_codes(m, batch);
  const BatchGradients g = batch_gradients(m, batch, codes);
  const Tensor2 ze = m.encode(batch[0]);
  const Tensor2 zq = gather_rows(m.codebook.vectors, codes[0]);
  const Tensor2 zhat = decode(zq, m.decoder);
  EXPECT_NEAR(g.metrics.rec_loss, nn::mse(zhat, ze), 1e-12);
  EXPECT_NEAR(g.metrics.commit_loss, nn::mse(ze, zq), 1e-12);
  // The target is z_e, not the raw input.
  EXPECT_GT(std::abs(g.metrics.rec_loss - nn::mse(zhat, batch[0])), 1e-6);
}

TEST(Objective, CommitVanishesWhenCodesEqualEncoderOutputs) {
  VqlcModel m = small_model();
  const Tensor2 h = small_data().sentence_matrix(0);
  const Tensor2 ze = m.encode(h);
  m.codebook = codebook_from_centroids(ze, std::vector<std::size_t>(ze.rows(), 1), 0.999);
  std::vector<std::size_t> ident(ze.rows());
  for (std::size_t i = 0; i < ident.size(); ++i) ident[i] = i;
  const std::vector<Tensor2> batch = {h};
  const std::vector<std::vector<std::size_t>> codes = {ident};
  const BatchGradients g = batch_gradients(m, batch, codes);
  EXPECT_EQ(g.metrics.commit_loss, 0.0);
  EXPECT_EQ(g.metrics.total_loss, g.metrics.rec_loss);
}

TEST(Objective, BetaZeroGivesPureReconstructionGradients) {
  TrainConfig c = small_config();
  c.beta = 0.0;
  const VqlcModel m0 = small_model(c);
  VqlcModel m1 = m0;
  m1.config.beta = 0.25;
  const auto batch = first_batch(2);
  const auto codes = inference_codes(m0, batch);
  BatchGradients g0 = batch_gradients(m0, batch, codes);
  BatchGradients g1 = batch_gradients(m1, batch, codes);

  // Decoder never sees the commitment term.
  std::vector<const Tensor2*> d1;
  DecoderParams::visit(g1.decoder, [&](const auto&, Tensor2& t) { d1.push_back(&t); });
  std::size_t i = 0;
  DecoderParams::visit(g0.decoder, [&](const auto& n, Tensor2& t) { EXPECT_TRUE(same_tensor(t, *d1[i++])) << n; });

  // Encoder gradients at β=0 come from the reconstruction path alone.
  EncoderParams rec_only = EncoderParams::zeros(m0.dim());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    EncoderCache cache;
    (void)encode(batch[s], m0.encoder, &cache);
    auto eg = encode_bwd(g0.decoder_input_grads[s], cache, m0.encoder);
    std::vector<const Tensor2*> src;
    EncoderParams::visit(eg.dparams, [&](const char*, Tensor2& t) { src.push_back(&t); });
    std::size_t k = 0;
    EncoderParams::visit(rec_only, [&](const char*, Tensor2& t) { t += *src[k++]; });
  }
  std::vector<const Tensor2*> want;
  EncoderParams::visit(rec_only, [&](const char*, Tensor2& t) { want.push_back(&t); });
  i = 0;
  EncoderParams::visit(g0.encoder, [&](const char* n, Tensor2& t) {
    EXPECT_LE(oracle::rel_error(t, *want[i++], 1e-12), 1e-9) << n;
  });
  i = 0;
  bool any_differs = false;
  std::vector<const Tensor2*> e1;
  EncoderParams::visit(g1.encoder, [&](const char*, Tensor2& t) { e1.push_back(&t); });
  EncoderParams::visit(g0.encoder, [&](const char*, Tensor2& t) { any_differs |= !same_tensor(t, *e1[i++]); });
  EXPECT_TRUE(any_differs);
}

TEST(Objective, DecoderGradientsMatchFiniteDifferences) {
  VqlcModel m = small_model();
  const auto batch = first_batch(2);
  const auto codes = inference_codes(m, batch);
  BatchGradients g = batch_gradients(m, batch, codes);
  const auto loss = [&] { return batch_gradients(m, batch, codes).metrics.total_loss; };
  std::vector<const Tensor2*> grads;
  DecoderParams::visit(g.decoder, [&](const auto&, Tensor2& t) { grads.push_back(&t); });
  std::size_t i = 0;
  DecoderParams::visit(m.decoder, [&](const std::string& n, Tensor2& t) {
    const Tensor2& a = *grads[i++];
    if (n.ends_with("attn/bk")) return;
    EXPECT_LT(oracle::grad_check(loss, t, a), 1e-4) << n;
  });
}

TEST(StraightThrough, EncoderOutputGradientEqualsDecoderInputGradient) {
  // Two tokens of width four.
  TrainConfig c = small_config();
  c.beta = 0.0;
  const ActivationDataset ds = synthesize_dataset(64, 4, 2, 5, {2, 4, 0.1});
  VqlcModel m = init_model(ds, c, filter_pool(ds, c.filter));
  const std::vector<Tensor2> batch = {ds.sentence_matrix(0)};
  ASSERT_EQ(batch[0].rows(), 2u);
  const auto codes = inference_codes(m, batch);
  const BatchGradients g = batch_gradients(m, batch, codes);

  // ∂L_rec/∂(decoder input) by central differences, target held fixed.
  const Tensor2 target = m.encode(batch[0]);
  Tensor2 input = gather_rows(m.codebook.vectors, codes[0]);
  const auto rec = [&] { return nn::mse(decode(input, m.decoder), target); };
  const Tensor2 numeric = oracle::numeric_grad(rec, input);
  EXPECT_LT(oracle::rel_error(g.decoder_input_grads[0], numeric), 1e-4);
  for (std::size_t i = 0; i < numeric.size(); ++i) EXPECT_EQ(g.encoder_out_grads[0][i], g.decoder_input_grads[0][i]);
}

TEST(StraightThrough, CommitGradientIsAddedOnEncoderSide) {
  const VqlcModel m = small_model();
  const auto batch = first_batch(1);
  const auto codes = inference_codes(m, batch);
  const BatchGradients g = batch_gradients(m, batch, codes);
  const Tensor2 ze = m.encode(batch[0]);
  const Tensor2 zq = gather_rows(m.codebook.vectors, codes[0]);
  const double count = static_cast<double>(ze.size());
  for (std::size_t i = 0; i < ze.size(); ++i) {
    const double commit = 0.25 * 2.0 * (ze[i] - zq[i]) / count;
    EXPECT_NEAR(g.encoder_out_grads[0][i], g.decoder_input_grads[0][i] + commit, 1e-15);
  }
}

// ---------------------------------------------------------------------------
// Stop-gradient on the codebook

TEST(StopGradient, CodebookNeverEntersOptimizer) {
  VqlcModel m = small_model();
  nn::ParamStore store = make_param_store(m);
  auto batch = first_batch();
  BatchGradients g = batch_gradients(m, batch, inference_codes(m, batch));
  const auto refs = param_refs(m, g);
  for (const auto& r : refs) {
    EXPECT_NE(r.value, &m.codebook.vectors);
    EXPECT_NE(r.value, &m.codebook.ema_sums);
    EXPECT_EQ(r.name.rfind("quantizer/", 0), std::string::npos) << r.name;
  }
  const Codebook before = m.codebook;
  nn::adam_step(store, refs, nn::AdamConfig{0.1});
  EXPECT_TRUE(same_tensor(m.codebook.vectors, before.vectors));
  EXPECT_TRUE(same_tensor(m.codebook.ema_sums, before.ema_sums));
  EXPECT_EQ(m.codebook.ema_counts, before.ema_counts);
  for (const auto& n : store.names()) EXPECT_EQ(n.rfind("quantizer/", 0), std::string::npos) << n;
}

TEST(StopGradient, TrainStepMovesCodebookOnlyThroughEma) {
  VqlcModel m = small_model();
  nn::ParamStore store = make_param_store(m);
  const auto batch = first_batch();
  Rng rng(9), replay(9);
  // Replay the sampling to learn which codes and encoder outputs the step uses.
  std::vector<std::vector<std::size_t>> codes;
  const SamplerConfig sc{m.config.top_k, m.config.temperature, 0};
  Tensor2 ze(0, m.dim());
  std::vector<std::size_t> flat;
  std::vector<Tensor2> zs;
  for (const auto& h : batch) {
    zs.push_back(m.encode(h));
    codes.push_back(sample_codes_train(zs.back(), m.codebook, sc, replay));
    flat.insert(flat.end(), codes.back().begin(), codes.back().end());
  }
  Tensor2 stacked(flat.size(), m.dim());
  std::size_t row = 0;
  for (const auto& z : zs) {
    for (std::size_t i = 0; i < z.rows(); ++i, ++row) {
      for (std::size_t j = 0; j < z.cols(); ++j) stacked(row, j) = z(i, j);
    }
  }
  Codebook expect = m.codebook;
  ema_update(expect, stacked, flat);
  (void)train_step(m, store, batch, rng);
  EXPECT_TRUE(same_tensor(m.codebook.vectors, expect.vectors));
  EXPECT_EQ(m.codebook.ema_counts, expect.ema_counts);
}

TEST(Trainer, FixedAlphaIsPinned) {
  TrainConfig c = small_config();
  c.fixed_alpha = 0.1;
  const FitResult r = fit(small_data(), c);
  EXPECT_NEAR(r.model.encoder.alpha(), 0.1, 1e-15);
  for (const auto& e : r.log) EXPECT_NEAR(e.alpha, 0.1, 1e-15);
}

TEST(Trainer, NonFiniteLossAborts) {
  VqlcModel m = small_model();
  nn::ParamStore store = make_param_store(m);
  m.decoder.w_up[0] = std::numeric_limits<double>::infinity();
  Rng rng(0);
  const auto batch = first_batch(1);
  EXPECT_THROW(train_step(m, store, batch, rng), RuntimeError);
}

// ---------------------------------------------------------------------------
// fit

TEST(Fit, ZeroEpochsReturnsInitializedModel) {
  TrainConfig c = small_config();
  c.epochs = 0;
  const FitResult r = fit(small_data(), c);
  EXPECT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.model.trained_epochs, 0u);
  const VqlcModel fresh = init_model(small_data(), c, r.pool);
  EXPECT_EQ(r.model.to_blob().serialize(), fresh.to_blob().serialize());
  EXPECT_EQ(r.model.assign(small_data().sentence_matrix(0)).size(), small_data().sentence_matrix(0).rows());
}

TEST(Fit, SameSeedGivesIdenticalLogsAndCheckpoints) {
  const FitResult a = fit(small_data(), small_config(4));
  const FitResult b = fit(small_data(), small_config(4));
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].to_json().dump(), b.log[i].to_json().dump());
  EXPECT_EQ(a.model.to_blob().serialize(), b.model.to_blob().serialize());
  const FitResult c = fit(small_data(), small_config(5));
  EXPECT_NE(a.model.to_blob().serialize(), c.model.to_blob().serialize());
}

TEST(Fit, ReconstructionImprovesOnClusteredData) {
  const ActivationDataset ds = synthesize_dataset(1200, 16, 10, 0);
  TrainConfig c;
  c.codebook_size = 10;
  c.epochs = 30;
  c.lr = 3e-3;
  c.layers = 2;
  c.kmeans_restarts = 3;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    c.seed = seed;
    const FitResult r = fit(ds, c);
    EXPECT_LT(r.log.back().rec_loss, 0.25 * r.log.front().rec_loss) << "seed " << seed;
  }
}

TEST(Fit, SplitIsSeededAndDisjoint) {
  const auto& ds = small_data();
  const DataSplit a = split_sentences(ds, 0.1, 3), b = split_sentences(ds, 0.1, 3);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.val.size(), ds.sentences.size() / 10);
  std::vector<std::size_t> all = a.train;
  all.insert(all.end(), a.val.begin(), a.val.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(std::adjacent_find(all.begin(), all.end()), all.end());
  EXPECT_EQ(all.size(), ds.sentences.size());
}

TEST(Fit, PoolSmallerThanCodebookIsAnError) {
  TrainConfig c = small_config();
  c.codebook_size = 100;
  c.top_k = 2;
  c.filter.min_token_frequency = 1000;
  EXPECT_THROW(fit(small_data(), c), ValidationError);
}

// ---------------------------------------------------------------------------
// Config and checkpoints

TEST(Config, DefaultsMatchPublishedHyperparameters) {
  const TrainConfig c;
  EXPECT_EQ(c.beta, 0.25);
  EXPECT_EQ(c.decay, 0.999);
  EXPECT_EQ(c.codebook_size, 400u);
  EXPECT_EQ(c.top_k, 5u);
  EXPECT_EQ(c.temperature, 1.0);
}

TEST(Config, JsonRoundTrip) {
  TrainConfig c = small_config(17);
  c.beta = 0.5;
  c.init = CodebookInit::random;
  c.positional = false;
  c.fixed_alpha = 0.3;
  c.filter.max_occurrences_per_token = 7;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(TrainConfig::from_json(TrainConfig().to_json()).to_json(), TrainConfig().to_json());
}

TEST(Config, ValidationErrors) {
  const auto rejects = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ValidationError);
  };
  rejects([](TrainConfig& c) { c.beta = -1.0; });
  rejects([](TrainConfig& c) { c.decay = 1.5; });
  rejects([](TrainConfig& c) { c.top_k = 401; });
  rejects([](TrainConfig& c) { c.temperature = 0.0; });
  rejects([](TrainConfig& c) { c.lr = 0.0; });
  rejects([](TrainConfig& c) { c.batch_sentences = 0; });
  rejects([](TrainConfig& c) { c.fixed_alpha = 0.6; });
  rejects([](TrainConfig& c) { c.val_fraction = 1.0; });
  EXPECT_NO_THROW(TrainConfig().validate());
}

TEST(Checkpoint, SaveLoadIsBitExact) {
  const FitResult r = fit(small_data(), small_config());
  const auto path = tmp("vqlc_trainer_ckpt.bin");
  r.model.save(path);
  const VqlcModel back = VqlcModel::load(path);
  EXPECT_EQ(back.to_blob().serialize(), r.model.to_blob().serialize());
  EXPECT_EQ(back.trained_epochs, 2u);
  const Tensor2 h = small_data().sentence_matrix(3);
  EXPECT_EQ(back.assign(h), r.model.assign(h));
}

TEST(Checkpoint, WrongKindIsRejected) {
  TensorBlob blob = small_model().to_blob();
  blob.meta()["kind"] = "something-else";
  EXPECT_THROW(VqlcModel::from_blob(blob), ValidationError);
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  const auto path = tmp("vqlc_trainer_trunc.bin");
  small_model().save(path);
  std::string bytes = detail::read_file_bytes(path);
  bytes.resize(bytes.size() - 3);
  detail::write_file_bytes(path, bytes);
  EXPECT_THROW(VqlcModel::load(path), ValidationError);
}
