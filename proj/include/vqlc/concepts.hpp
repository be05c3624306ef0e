#pragma once

// Latent concepts: pooled occurrences grouped by assigned concept id, their
// renderings, and per-sentence explanations.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqlc/assigner.hpp"
#include "vqlc/dataset.hpp"
#include "vqlc/error.hpp"
#include "vqlc/rng.hpp"
#include "vqlc/tensor.hpp"

namespace vqlc {

inline constexpr std::size_t kSampleSentences = 5;
inline constexpr std::size_t kReportTokens = 100;
inline constexpr std::size_t kJudgeTokens = 10;

struct TokenCount {
  std::string token;
  std::size_t count = 0;

  friend bool operator==(const TokenCount&, const TokenCount&) = default;
};

struct SampleSentence {
  std::int64_t sentence_id = 0;
  std::string text;
  std::optional<std::int64_t> label;
  std::string token;  // the sampled member occurrence
  std::size_t position = 0;

  friend bool operator==(const SampleSentence&, const SampleSentence&) = default;
};

struct Concept {
  std::size_t id = 0;
  std::size_t size = 0;
  std::vector<TokenCount> tokens;  // descending count, ties by token text
  double special_fraction = 0.0;
  std::vector<SampleSentence> sample_sentences;
  std::vector<double> vector;
  std::vector<std::size_t> members;  // dataset rows, ascending

  bool special_dominated() const noexcept { return special_fraction > 0.5; }
};

inline void sort_token_counts(std::vector<TokenCount>& v) {
  std::sort(v.begin(), v.end(), [](const TokenCount& a, const TokenCount& b) {
    return a.count != b.count ? a.count > b.count : a.token < b.token;
  });
}

/// Groups the pooled rows by the assigner's concept id. Codes with no member
/// are omitted; the result is ordered by concept id.
template <Assigner A>
std::vector<Concept> extract_concepts(const A& assigner, const ActivationDataset& ds, std::span<const std::size_t> pool,
                                      std::uint64_t seed = 0) {
  const std::vector<std::size_t> codes = assigner.assign(gather_rows(ds.representations, pool));
  const Tensor2& vectors = assigner.concept_vectors();
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < pool.size(); ++i) groups[codes[i]].push_back(pool[i]);

  std::vector<Concept> out;
  out.reserve(groups.size());
  for (auto& [id, rows] : groups) {
    Concept c;
    c.id = id;
    c.size = rows.size();
    std::sort(rows.begin(), rows.end());
    std::map<std::string, std::size_t> freq;
    std::size_t special = 0;
    for (std::size_t r : rows) {
      const auto& occ = ds.occurrences[r];
      ++freq[occ.token];
      special += occ.is_special ? 1 : 0;
    }
    for (auto& [tok, n] : freq) c.tokens.push_back({tok, n});
    sort_token_counts(c.tokens);
    c.special_fraction = static_cast<double>(special) / static_cast<double>(rows.size());
    if (id < vectors.rows()) {
      const auto v = vectors.row(id);
      c.vector.assign(v.begin(), v.end());
    }
    // Seeded sample of member occurrences, shown through their sentences.
    std::vector<std::size_t> picks = rows;
    Rng rng = make_rng(seed, "concept-samples/" + std::to_string(id));
    const std::size_t n = std::min(kSampleSentences, picks.size());
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, picks.size() - 1);
      std::swap(picks[i], picks[pick(rng)]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto& occ = ds.occurrences[picks[i]];
      const auto& s = ds.sentences[ds.sentence_index(occ.sentence_id)];
      c.sample_sentences.push_back({s.id, s.text, s.label, occ.token, occ.position});
    }
    c.members = std::move(rows);
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Salient token

enum class ModelFamily { encoder_based, decoder_only };

inline ModelFamily parse_model_family(const std::string& s) {
  if (s == "encoder" || s == "encoder-based") return ModelFamily::encoder_based;
  if (s == "decoder" || s == "decoder-only") return ModelFamily::decoder_only;
  throw ValidationError("unknown model family '" + s + "' (expected encoder-based or decoder-only)");
}

inline std::string to_string(ModelFamily f) {
  return f == ModelFamily::encoder_based ? "encoder-based" : "decoder-only";
}

/// Position of the token whose concept explains the sentence. An externally
/// supplied salient_index wins; otherwise the last token (decoder-only) or
/// the first special token (encoder-based).
inline std::size_t salient_position(const ActivationDataset& ds, std::size_t sentence_idx, ModelFamily family) {
  const auto rows = ds.sentence_rows(sentence_idx);
  const auto& s = ds.sentences[sentence_idx];
  detail::require(!rows.empty(), "salient token: sentence " + std::to_string(s.id) + " has no tokens");
  if (s.salient_index) return *s.salient_index;
  if (family == ModelFamily::decoder_only) return rows.size() - 1;
  for (std::size_t p = 0; p < rows.size(); ++p) {
    if (ds.occurrences[rows[p]].is_special) return p;
  }
  throw ValidationError("salient token: encoder-based sentence " + std::to_string(s.id) + " has no special token");
}

// ---------------------------------------------------------------------------
// Rendering

enum class RenderMode { report, judge };

struct Rendering {
  enum class Kind { tokens, sentences };
  Kind kind = Kind::tokens;
  std::vector<TokenCount> tokens;
  std::vector<SampleSentence> sentences;

  nlohmann::json to_json() const {
    nlohmann::json j;
    if (kind == Kind::tokens) {
      j["kind"] = "tokens";
      j["tokens"] = nlohmann::json::array();
      for (const auto& t : tokens) j["tokens"].push_back({{"token", t.token}, {"count", t.count}});
    } else {
      j["kind"] = "sentences";
      j["sentences"] = nlohmann::json::array();
      for (const auto& s : sentences) j["sentences"].push_back(s.text);
    }
    return j;
  }

  /// Plain text as placed in judge prompts.
  std::string to_text() const {
    std::string out;
    if (kind == Kind::tokens) {
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ", ";
        out += tokens[i].token;
      }
    } else {
      for (std::size_t i = 0; i < sentences.size(); ++i) {
        if (i) out += "\n";
        out += "- " + sentences[i].text;
      }
    }
    return out;
  }
};

inline Rendering render_concept(const Concept& c, RenderMode mode) {
  Rendering r;
  if (c.special_dominated()) {
    r.kind = Rendering::Kind::sentences;
    r.sentences.assign(c.sample_sentences.begin(),
                       c.sample_sentences.begin() +
                           static_cast<std::ptrdiff_t>(std::min(kSampleSentences, c.sample_sentences.size())));
    return r;
  }
  const std::size_t n = std::min(mode == RenderMode::report ? kReportTokens : kJudgeTokens, c.tokens.size());
  r.tokens.assign(c.tokens.begin(), c.tokens.begin() + static_cast<std::ptrdiff_t>(n));
  return r;
}

// ---------------------------------------------------------------------------
// Explanations

struct Explanation {
  std::int64_t sentence_id = 0;
  std::string text;
  std::optional<std::int64_t> ground_truth;
  std::optional<std::int64_t> prediction;
  std::string salient_token;
  std::size_t salient_position = 0;
  std::size_t concept_id = 0;
  std::string method;
  Rendering rendering;

  nlohmann::json to_json() const {
    const auto opt = [](const std::optional<std::int64_t>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"sentence_id", sentence_id},
            {"sentence", text},
            {"ground_truth", opt(ground_truth)},
            {"prediction", opt(prediction)},
            {"salient_token", {{"token", salient_token}, {"position", salient_position}}},
            {"concept_id", concept_id},
            {"method", method},
            {"concept", rendering.to_json()}};
  }
};

inline const Concept* find_concept(std::span<const Concept> concepts, std::size_t id) {
  const auto it = std::lower_bound(concepts.begin(), concepts.end(), id,
                                   [](const Concept& c, std::size_t v) { return c.id < v; });
  return it != concepts.end() && it->id == id ? &*it : nullptr;
}

/// Explains one sentence by the concept of its salient token. A concept that
/// received no pooled member renders as an empty token list.
template <Assigner A>
Explanation explain(const A& assigner, const ActivationDataset& ds, std::span<const Concept> concepts,
                    std::int64_t sentence_id, std::optional<std::int64_t> prediction, ModelFamily family,
                    RenderMode mode = RenderMode::report) {
  detail::require(ds.has_sentence(sentence_id), "explain: unknown sentence id " + std::to_string(sentence_id));
  const std::size_t si = ds.sentence_index(sentence_id);
  const auto rows = ds.sentence_rows(si);
  detail::require(!rows.empty(), "explain: sentence " + std::to_string(sentence_id) + " has no representations");
  const std::size_t pos = salient_position(ds, si, family);
  const std::size_t row = rows[pos];
  const std::size_t idx[] = {row};
  const std::vector<std::size_t> code = assigner.assign(gather_rows(ds.representations, idx));

  Explanation e;
  const auto& s = ds.sentences[si];
  e.sentence_id = s.id;
  e.text = s.text;
  e.ground_truth = s.label;
  e.prediction = prediction;
  e.salient_token = ds.occurrences[row].token;
  e.salient_position = pos;
  e.concept_id = code.at(0);
  e.method = assigner.method();
  if (const Concept* c = find_concept(concepts, e.concept_id)) e.rendering = render_concept(*c, mode);
  return e;
}

// ---------------------------------------------------------------------------
// Export

inline nlohmann::json concept_to_json(const Concept& c) {
  nlohmann::json top = nlohmann::json::array();
  const std::size_t n = std::min(kReportTokens, c.tokens.size());
  for (std::size_t i = 0; i < n; ++i) top.push_back({{"token", c.tokens[i].token}, {"count", c.tokens[i].count}});
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : c.sample_sentences) {
    samples.push_back({{"sentence_id", s.sentence_id},
                       {"text", s.text},
                       {"label", s.label ? nlohmann::json(*s.label) : nlohmann::json(nullptr)},
                       {"token", s.token},
                       {"position", s.position}});
  }
  return {{"concept_id", c.id},
          {"size", c.size},
          {"special_fraction", c.special_fraction},
          {"top_tokens", std::move(top)},
          {"sample_sentences", std::move(samples)}};
}

inline std::string concepts_to_jsonl(std::span<const Concept> concepts) {
  std::string out;
  for (const auto& c : concepts) out += concept_to_json(c).dump() + "\n";
  return out;
}

}  // namespace vqlc
