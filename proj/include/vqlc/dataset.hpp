#pragma once

// Canonical activation dataset: a directory holding
//   meta.json        {"version":1,"model","layer","dim","num_tokens","num_sentences","dtype":"f32le"}
//   sentences.jsonl  {"id","text","label"?,"salient_index"?}
//   tokens.jsonl     {"sentence_id","position","token","is_special"}; line order == row order
//   reps.bin         row-major float32 little-endian, num_tokens×dim values, no header

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqlc/checkpoint.hpp"
#include "vqlc/error.hpp"
#include "vqlc/rng.hpp"
#include "vqlc/tensor.hpp"

namespace vqlc {

struct DatasetMeta {
  int version = 1;
  std::string model;
  int layer = 0;
  std::size_t dim = 0;
  std::size_t num_tokens = 0;
  std::size_t num_sentences = 0;
  std::string dtype = "f32le";
};

struct SentenceRecord {
  std::int64_t id = 0;
  std::string text;
  std::optional<std::int64_t> label;
  std::optional<std::size_t> salient_index;
};

struct TokenOccurrence {
  std::int64_t sentence_id = 0;
  std::size_t position = 0;
  std::string token;
  bool is_special = false;
};

class ActivationDataset {
 public:
  DatasetMeta meta;
  std::vector<SentenceRecord> sentences;
  std::vector<TokenOccurrence> occurrences;
  Tensor2 representations;  // num_tokens × dim

  /// Checks every invariant and builds the sentence → rows index. Throws
  /// ValidationError naming the offending file and row.
  void validate_and_index();

  std::size_t dim() const noexcept { return meta.dim; }
  std::size_t num_tokens() const noexcept { return occurrences.size(); }

  /// Index into `sentences` for a sentence id.
  std::size_t sentence_index(std::int64_t id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw ValidationError("unknown sentence id " + std::to_string(id));
    return it->second;
  }

  bool has_sentence(std::int64_t id) const { return by_id_.count(id) != 0; }

  /// Representation row indices of a sentence, ordered by position.
  std::span<const std::size_t> sentence_rows(std::size_t sentence_idx) const { return rows_[sentence_idx]; }

  /// T×d matrix of a sentence's representations in position order.
  Tensor2 sentence_matrix(std::size_t sentence_idx) const {
    return gather_rows(representations, sentence_rows(sentence_idx));
  }

 private:
  std::unordered_map<std::int64_t, std::size_t> by_id_;
  std::vector<std::vector<std::size_t>> rows_;
};

inline void ActivationDataset::validate_and_index() {
  const std::string sfile = "sentences.jsonl", tfile = "tokens.jsonl", rfile = "reps.bin";
  detail::require(meta.dim > 0, "meta.json: dim must be positive");
  detail::require(meta.num_tokens == occurrences.size(),
                  "meta.json: num_tokens=" + std::to_string(meta.num_tokens) + " but " + tfile + " has " +
                      std::to_string(occurrences.size()) + " rows");
  detail::require(meta.num_sentences == sentences.size(),
                  "meta.json: num_sentences=" + std::to_string(meta.num_sentences) + " but " + sfile + " has " +
                      std::to_string(sentences.size()) + " rows");
  detail::require(representations.rows() == occurrences.size(),
                  rfile + ": " + std::to_string(representations.rows()) + " rows but " + tfile + " has " +
                      std::to_string(occurrences.size()));
  detail::require(representations.cols() == meta.dim, rfile + ": width " + std::to_string(representations.cols()) +
                                                          " does not match meta dim " + std::to_string(meta.dim));

  by_id_.clear();
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (!by_id_.emplace(sentences[i].id, i).second) {
      throw ValidationError(sfile + " row " + std::to_string(i) + ": duplicate sentence id " +
                            std::to_string(sentences[i].id));
    }
  }

  std::vector<std::map<std::size_t, std::size_t>> by_pos(sentences.size());
  for (std::size_t r = 0; r < occurrences.size(); ++r) {
    const auto& occ = occurrences[r];
    auto it = by_id_.find(occ.sentence_id);
    if (it == by_id_.end()) {
      throw ValidationError(tfile + " row " + std::to_string(r) + ": sentence_id " + std::to_string(occ.sentence_id) +
                            " not present in " + sfile);
    }
    if (!by_pos[it->second].emplace(occ.position, r).second) {
      throw ValidationError(tfile + " row " + std::to_string(r) + ": duplicate (sentence_id, position) (" +
                            std::to_string(occ.sentence_id) + ", " + std::to_string(occ.position) + ")");
    }
  }

  rows_.assign(sentences.size(), {});
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    std::size_t expect = 0;
    for (const auto& [pos, row] : by_pos[s]) {
      if (pos != expect) {
        throw ValidationError(tfile + " row " + std::to_string(row) + ": positions of sentence " +
                              std::to_string(sentences[s].id) + " are not contiguous from 0 (found " +
                              std::to_string(pos) + ", expected " + std::to_string(expect) + ")");
      }
      rows_[s].push_back(row);
      ++expect;
    }
    if (sentences[s].salient_index && *sentences[s].salient_index >= rows_[s].size()) {
      throw ValidationError(sfile + " row " + std::to_string(s) + ": salient_index " +
                            std::to_string(*sentences[s].salient_index) + " >= token count " +
                            std::to_string(rows_[s].size()));
    }
  }

  for (std::size_t r = 0; r < representations.rows(); ++r) {
    for (double v : representations.row(r)) {
      if (!std::isfinite(v)) throw ValidationError(rfile + " row " + std::to_string(r) + ": non-finite value");
    }
  }
}

// ---------------------------------------------------------------------------
// I/O

namespace detail {

template <class F>
void for_each_jsonl(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing file " + path.string());
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      f(row, j);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.filename().string() + " row " + std::to_string(row) + ": " + e.what());
    }
    ++row;
  }
}

}  // namespace detail

inline ActivationDataset load_dataset(const std::filesystem::path& dir) {
  ActivationDataset ds;
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path)) throw ValidationError("missing file " + meta_path.string());
  try {
    const auto j = nlohmann::json::parse(detail::read_file_bytes(meta_path));
    ds.meta.version = j.at("version").get<int>();
    ds.meta.model = j.value("model", std::string{});
    ds.meta.layer = j.value("layer", 0);
    ds.meta.dim = j.at("dim").get<std::size_t>();
    ds.meta.num_tokens = j.at("num_tokens").get<std::size_t>();
    ds.meta.num_sentences = j.at("num_sentences").get<std::size_t>();
    ds.meta.dtype = j.value("dtype", std::string{"f32le"});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("meta.json: ") + e.what());
  }
  detail::require(ds.meta.version == 1, "meta.json: unsupported version " + std::to_string(ds.meta.version));
  detail::require(ds.meta.dtype == "f32le", "meta.json: unsupported dtype '" + ds.meta.dtype + "'");

  detail::for_each_jsonl(dir / "sentences.jsonl", [&](std::size_t, const nlohmann::json& j) {
    SentenceRecord s;
    s.id = j.at("id").get<std::int64_t>();
    s.text = j.value("text", std::string{});
    if (j.contains("label") && !j["label"].is_null()) s.label = j["label"].get<std::int64_t>();
    if (j.contains("salient_index") && !j["salient_index"].is_null()) {
      s.salient_index = j["salient_index"].get<std::size_t>();
    }
    ds.sentences.push_back(std::move(s));
  });
  detail::for_each_jsonl(dir / "tokens.jsonl", [&](std::size_t, const nlohmann::json& j) {
    TokenOccurrence t;
    t.sentence_id = j.at("sentence_id").get<std::int64_t>();
    t.position = j.at("position").get<std::size_t>();
    t.token = j.at("token").get<std::string>();
    t.is_special = j.value("is_special", false);
    ds.occurrences.push_back(std::move(t));
  });

  const auto reps_path = dir / "reps.bin";
  if (!std::filesystem::exists(reps_path)) throw ValidationError("missing file " + reps_path.string());
  const std::string bytes = detail::read_file_bytes(reps_path);
  const std::size_t expect = ds.meta.num_tokens * ds.meta.dim * 4;
  if (bytes.size() != expect) {
    throw ValidationError("reps.bin: size mismatch, expected " + std::to_string(expect) + " bytes (" +
                          std::to_string(ds.meta.num_tokens) + "x" + std::to_string(ds.meta.dim) +
                          " float32), found " + std::to_string(bytes.size()));
  }
  ds.representations = Tensor2(ds.meta.num_tokens, ds.meta.dim);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < ds.representations.size(); ++i) {
    const std::uint32_t u = static_cast<std::uint32_t>(p[4 * i]) | (static_cast<std::uint32_t>(p[4 * i + 1]) << 8) |
                            (static_cast<std::uint32_t>(p[4 * i + 2]) << 16) |
                            (static_cast<std::uint32_t>(p[4 * i + 3]) << 24);
    ds.representations[i] = static_cast<double>(std::bit_cast<float>(u));
  }
  ds.validate_and_index();
  return ds;
}

inline void write_dataset(const ActivationDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta = {{"version", ds.meta.version},
                         {"model", ds.meta.model},
                         {"layer", ds.meta.layer},
                         {"dim", ds.meta.dim},
                         {"num_tokens", ds.occurrences.size()},
                         {"num_sentences", ds.sentences.size()},
                         {"dtype", "f32le"}};
  detail::write_file_bytes(dir / "meta.json", meta.dump(2) + "\n");

  std::string sl;
  for (const auto& s : ds.sentences) {
    nlohmann::json j = {{"id", s.id}, {"text", s.text}};
    if (s.label) j["label"] = *s.label;
    if (s.salient_index) j["salient_index"] = *s.salient_index;
    sl += j.dump() + "\n";
  }
  detail::write_file_bytes(dir / "sentences.jsonl", sl);

  std::string tl;
  for (const auto& t : ds.occurrences) {
    nlohmann::json j = {
        {"sentence_id", t.sentence_id}, {"position", t.position}, {"token", t.token}, {"is_special", t.is_special}};
    tl += j.dump() + "\n";
  }
  detail::write_file_bytes(dir / "tokens.jsonl", tl);

  std::string bin;
  bin.reserve(ds.representations.size() * 4);
  for (double v : ds.representations.flat()) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) bin.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
  }
  detail::write_file_bytes(dir / "reps.bin", bin);
}

// ---------------------------------------------------------------------------
// Token filtering

struct FilterPolicy {
  std::size_t min_token_frequency = 5;
  std::size_t max_occurrences_per_token = 20;
  bool keep_all_special = true;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(min_token_frequency >= 1, "filter: min_token_frequency must be >= 1");
    detail::require(max_occurrences_per_token >= 1, "filter: max_occurrences_per_token must be >= 1");
  }
};

/// Filters a candidate subset of occurrence rows. Token types below the
/// frequency threshold are dropped, frequent types are subsampled to the cap,
/// special tokens are kept whole. Returns ascending row indices.
inline std::vector<std::size_t> filter_pool(const ActivationDataset& ds, const FilterPolicy& policy,
                                            std::span<const std::size_t> candidates) {
  policy.validate();
  std::vector<std::size_t> out;
  std::map<std::string, std::vector<std::size_t>> by_token;
  for (std::size_t r : candidates) {
    const auto& occ = ds.occurrences.at(r);
    if (occ.is_special && policy.keep_all_special) {
      out.push_back(r);
    } else {
      by_token[occ.token].push_back(r);
    }
  }
  Rng rng = make_rng(policy.seed, "filter");
  for (auto& [token, rows] : by_token) {
    if (rows.size() < policy.min_token_frequency) continue;
    if (rows.size() > policy.max_occurrences_per_token) {
      // Partial Fisher-Yates: the first `cap` slots become a uniform sample.
      for (std::size_t i = 0; i < policy.max_occurrences_per_token; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, rows.size() - 1);
        std::swap(rows[i], rows[pick(rng)]);
      }
      rows.resize(policy.max_occurrences_per_token);
    }
    out.insert(out.end(), rows.begin(), rows.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::size_t> filter_pool(const ActivationDataset& ds, const FilterPolicy& policy) {
  std::vector<std::size_t> all(ds.occurrences.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return filter_pool(ds, policy, all);
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthOptions {
  std::size_t sentence_length = 8;
  std::size_t vocab_per_cluster = 20;
  double sigma = 0.1;
};

/// Tokens drawn from `n_clusters` isotropic Gaussians with unit-norm centers.
/// Each sentence belongs to one cluster (stored as its label); position 0 is a
/// special "[CLS]" token. Values are rounded to float32 so the in-memory
/// dataset equals what write_dataset stores.
inline ActivationDataset synthesize_dataset(std::size_t n_tokens, std::size_t dim, std::size_t n_clusters,
                                            std::uint64_t seed, const SynthOptions& opt = {}) {
  detail::require(n_tokens >= 1 && dim >= 1 && n_clusters >= 1, "synthesize: all sizes must be >= 1");
  detail::require(opt.sentence_length >= 1 && opt.vocab_per_cluster >= 1, "synthesize: bad options");
  Rng center_rng = make_rng(seed, "synth-centers");
  Tensor2 centers(n_clusters, dim);
  for (std::size_t c = 0; c < n_clusters; ++c) {
    auto row = centers.row(c);
    double nrm = 0.0;
    while (nrm == 0.0) {
      for (double& v : row) v = normal(center_rng);
      nrm = norm(row);
    }
    for (double& v : row) v /= nrm;
  }

  Rng rng = make_rng(seed, "synth-tokens");
  ActivationDataset ds;
  ds.meta.model = "synthetic";
  ds.meta.dim = dim;
  ds.representations = Tensor2(n_tokens, dim);
  std::uniform_int_distribution<std::size_t> pick_cluster(0, n_clusters - 1);
  std::uniform_int_distribution<std::size_t> pick_word(0, opt.vocab_per_cluster - 1);
  std::size_t row = 0;
  std::int64_t sid = 0;
  while (row < n_tokens) {
    const std::size_t cluster = pick_cluster(rng);
    const std::size_t len = std::min(opt.sentence_length, n_tokens - row);
    SentenceRecord s;
    s.id = sid;
    s.label = static_cast<std::int64_t>(cluster);
    for (std::size_t pos = 0; pos < len; ++pos, ++row) {
      TokenOccurrence occ;
      occ.sentence_id = sid;
      occ.position = pos;
      occ.is_special = pos == 0;
      occ.token = occ.is_special ? "[CLS]" : "c" + std::to_string(cluster) + "_w" + std::to_string(pick_word(rng));
      if (pos) s.text += ' ';
      s.text += occ.token;
      auto r = ds.representations.row(row);
      const auto c = centers.row(cluster);
      for (std::size_t j = 0; j < dim; ++j) {
        r[j] = static_cast<double>(static_cast<float>(c[j] + normal(rng, 0.0, opt.sigma)));
      }
      ds.occurrences.push_back(std::move(occ));
    }
    ds.sentences.push_back(std::move(s));
    ++sid;
  }
  ds.meta.num_tokens = ds.occurrences.size();
  ds.meta.num_sentences = ds.sentences.size();
  ds.validate_and_index();
  return ds;
}

/// Ground-truth cluster per token row of a synthetic dataset (the owning
/// sentence's label).
inline std::vector<std::size_t> token_labels(const ActivationDataset& ds) {
  std::vector<std::size_t> out(ds.occurrences.size());
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto& s = ds.sentences[ds.sentence_index(ds.occurrences[r].sentence_id)];
    out[r] = s.label ? static_cast<std::size_t>(*s.label) : 0;
  }
  return out;
}

}  // namespace vqlc
