#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocn/autodiff.hpp"
#include "ocn/infer.hpp"
#include "ocn/matrix.hpp"
#include "ocn/model.hpp"
#include "ocn/priors.hpp"

namespace ocn {

/// Forward every image through the trained model and keep the top-k scored
/// (pair, verb) detections per image, unmasked. Masking, if wanted, happens
/// at evaluation time so the same dump serves both protocols.
inline std::vector<DumpRecord> predict_dataset(ModelParams& params, const ModelConfig& cfg,
                                               const std::vector<Matrix>& features,
                                               const std::vector<std::string>& image_ids,
                                               const Matrix& embeddings, const Matrix& s_hat,
                                               std::size_t dump_k) {
  if (features.size() != image_ids.size())
    throw std::invalid_argument("predict_dataset: " + std::to_string(features.size()) +
                                " feature blocks vs " + std::to_string(image_ids.size()) +
                                " image ids");
  std::vector<DumpRecord> records;
  for (std::size_t i = 0; i < features.size(); ++i) {
    Tape tape;
    Binder binder(tape);
    BoundModel m = bind_model(binder, params);
    Var p_tilde;
    if (cfg.use_vsm) p_tilde = embed_verbs(m, cfg, tape, embeddings);
    QueryOutputs out = forward_image(m, cfg, tape, features[i], p_tilde, s_hat);
    const std::vector<ScoredTriplet> scored =
        compose_scores(out.boxes.value(), out.obj_logits.value(), out.verb_logits.value());
    for (const RankedPrediction& r : top_k(scored, dump_k)) {
      const ScoredTriplet& t = scored[r.triplet_index];
      records.push_back({image_ids[i], t.human, t.object, t.object_class, r.verb, r.score});
    }
  }
  return records;
}

}  // namespace ocn
