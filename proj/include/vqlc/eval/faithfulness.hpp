#pragma once

// Concept ablation by orthogonal projection and the probe accuracy drop it
// causes on salient-token representations.

#include <cmath>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqlc/assigner.hpp"
#include "vqlc/concepts.hpp"
#include "vqlc/dataset.hpp"
#include "vqlc/error.hpp"
#include "vqlc/eval/probe.hpp"
#include "vqlc/tensor.hpp"

namespace vqlc {

/// h − (h·v / ‖v‖²)·v
inline std::vector<double> ablate_concept(std::span<const double> h, std::span<const double> v) {
  detail::require(h.size() == v.size(), "ablate: dimension mismatch");
  const double vv = dot(v, v);
  detail::require(vv > 0.0, "ablate: zero concept vector");
  const double s = dot(h, v) / vv;
  std::vector<double> out(h.begin(), h.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= s * v[i];
  return out;
}

struct FaithfulnessResult {
  double acc_original = 0.0;
  double acc_perturbed = 0.0;
  double accuracy_drop = 0.0;  // percentage points
  std::size_t sentences = 0;

  nlohmann::json to_json() const {
    return {{"acc_original", acc_original},
            {"acc_perturbed", acc_perturbed},
            {"accuracy_drop", accuracy_drop},
            {"sentences", sentences}};
  }
};

/// Salient-token representation per sentence (rows ordered like `sentences`)
/// and the sentence labels.
struct SalientSet {
  Tensor2 reps;
  std::vector<std::size_t> labels;
  std::vector<std::int64_t> sentence_ids;
};

inline SalientSet salient_representations(const ActivationDataset& ds, ModelFamily family) {
  SalientSet out;
  std::vector<std::size_t> rows;
  for (std::size_t s = 0; s < ds.sentences.size(); ++s) {
    const auto r = ds.sentence_rows(s);
    if (r.empty()) continue;
    const auto& rec = ds.sentences[s];
    detail::require(rec.label.has_value() && *rec.label >= 0,
                    "faithfulness: sentence " + std::to_string(rec.id) + " has no non-negative label");
    rows.push_back(r[salient_position(ds, s, family)]);
    out.labels.push_back(static_cast<std::size_t>(*rec.label));
    out.sentence_ids.push_back(rec.id);
  }
  out.reps = gather_rows(ds.representations, rows);
  return out;
}

/// Accuracy before/after removing each row's own concept direction.
/// `concept_of_row[i]` indexes rows of `concept_vectors`.
inline FaithfulnessResult faithfulness(const ProbeModel& probe, const Tensor2& reps, std::span<const std::size_t> labels,
                                       const Tensor2& concept_vectors, std::span<const std::size_t> concept_of_row) {
  detail::require(reps.rows() > 0, "faithfulness: no sentences");
  detail::require(labels.size() == reps.rows() && concept_of_row.size() == reps.rows(),
                  "faithfulness: row count mismatch");
  Tensor2 ablated(reps.rows(), reps.cols());
  for (std::size_t i = 0; i < reps.rows(); ++i) {
    const auto a = ablate_concept(reps.row(i), concept_vectors.row(concept_of_row[i]));
    std::copy(a.begin(), a.end(), ablated.row(i).begin());
  }
  FaithfulnessResult r;
  r.sentences = reps.rows();
  r.acc_original = probe_accuracy(probe, reps, labels);
  r.acc_perturbed = probe_accuracy(probe, ablated, labels);
  r.accuracy_drop = (r.acc_original - r.acc_perturbed) * 100.0;
  return r;
}

template <Assigner A>
FaithfulnessResult faithfulness(const ProbeModel& probe, const ActivationDataset& ds, const A& assigner,
                                ModelFamily family) {
  const SalientSet s = salient_representations(ds, family);
  detail::require(s.reps.rows() > 0, "faithfulness: no sentences");
  const std::vector<std::size_t> codes = assigner.assign(s.reps);
  return faithfulness(probe, s.reps, s.labels, assigner.concept_vectors(), codes);
}

}  // namespace vqlc
