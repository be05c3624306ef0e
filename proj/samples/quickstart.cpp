// Train on a synthetic activation set, list the discovered concepts and
// explain one sentence.

#include <iostream>

#include "vqlc/vqlc.hpp"

int main() {
  using namespace vqlc;

  const ActivationDataset ds = synthesize_dataset(2000, 16, 5, 0);

  TrainConfig cfg;
  cfg.codebook_size = 5;
  cfg.epochs = 10;
  const FitResult fit_result = fit(ds, cfg);
  const EpochMetrics& last = fit_result.log.back();
  std::cout << "epoch " << last.epoch << " rec " << last.rec_loss << " perplexity " << last.perplexity
            << " active " << last.active_codes << "\n";

  const double ari = adjusted_rand_index(fit_result.model.assign(ds.representations), token_labels(ds));
  std::cout << "ARI against planted clusters: " << ari << "\n";

  const std::vector<Concept> concepts = extract_concepts(fit_result.model, ds, fit_result.pool);
  for (const Concept& c : concepts) {
    std::cout << "concept " << c.id << " (" << c.size << " tokens):";
    for (std::size_t i = 0; i < std::min<std::size_t>(5, c.tokens.size()); ++i) std::cout << " " << c.tokens[i].token;
    std::cout << "\n";
  }

  const Explanation e =
      explain(fit_result.model, ds, concepts, ds.sentences.front().id, std::nullopt, ModelFamily::encoder_based);
  std::cout << e.to_json().dump(2) << "\n";
}
