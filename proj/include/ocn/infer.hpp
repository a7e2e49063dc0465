#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocn/matrix.hpp"
#include "ocn/priors.hpp"
#include "ocn/setmatch.hpp"

namespace ocn {

struct ScoredTriplet {
  Box human;
  Box object;
  std::size_t object_class = 0;  // never background
  double object_score = 0.0;     // max non-background class probability
  std::vector<double> verb_scores;
};

/// Compose per-query scores: object probabilities by softmax, object score =
/// best non-background probability, verb scores = object score x verb
/// sigmoid. Background-argmax queries keep their best real class; the low
/// object score suppresses them in ranking.
inline std::vector<ScoredTriplet> compose_scores(const Matrix& boxes_cs,
                                                 const Matrix& obj_logits,
                                                 const Matrix& verb_logits) {
  const std::size_t n_q = boxes_cs.rows();
  if (boxes_cs.cols() != 8)
    throw std::invalid_argument("compose_scores: boxes must be N_q x 8, got " +
                                boxes_cs.shape_str());
  if (obj_logits.rows() != n_q || verb_logits.rows() != n_q)
    throw std::invalid_argument("compose_scores: row counts disagree");
  if (obj_logits.cols() < 2)
    throw std::invalid_argument("compose_scores: need at least one real object class");
  const std::size_t background = obj_logits.cols() - 1;
  std::vector<ScoredTriplet> out;
  out.reserve(n_q);
  for (std::size_t q = 0; q < n_q; ++q) {
    const std::vector<double> prob = detail::softmax_row_values(obj_logits, q);
    std::size_t best = 0;
    for (std::size_t c = 1; c < background; ++c)
      if (prob[c] > prob[best]) best = c;
    ScoredTriplet t;
    t.human = cxcywh_to_xyxy(boxes_cs(q, 0), boxes_cs(q, 1), boxes_cs(q, 2), boxes_cs(q, 3));
    t.object = cxcywh_to_xyxy(boxes_cs(q, 4), boxes_cs(q, 5), boxes_cs(q, 6), boxes_cs(q, 7));
    t.object_class = best;
    t.object_score = prob[best];
    t.verb_scores.resize(verb_logits.cols());
    for (std::size_t v = 0; v < verb_logits.cols(); ++v)
      t.verb_scores[v] = prob[best] * detail::stable_sigmoid(verb_logits(q, v));
    out.push_back(std::move(t));
  }
  return out;
}

/// Zero verb scores of (object, verb) pairs absent from training.
inline std::vector<ScoredTriplet> apply_mask(std::vector<ScoredTriplet> triplets,
                                             const Matrix& mask) {
  for (ScoredTriplet& t : triplets) {
    if (t.object_class >= mask.rows())
      throw std::out_of_range("apply_mask: object class " + std::to_string(t.object_class) +
                              " out of range for " + mask.shape_str());
    if (t.verb_scores.size() != mask.cols())
      throw std::invalid_argument("apply_mask: verb count mismatch with " + mask.shape_str());
    for (std::size_t v = 0; v < t.verb_scores.size(); ++v)
      if (mask(t.object_class, v) == 0.0) t.verb_scores[v] = 0.0;
  }
  return triplets;
}

struct RankedPrediction {
  std::size_t triplet_index = 0;  // into the ScoredTriplet list
  std::size_t verb = 0;
  double score = 0.0;
};

/// Flatten (triplet, verb) pairs with nonzero score, sort by score
/// descending (ties: triplet index, then verb index ascending), keep K.
inline std::vector<RankedPrediction> top_k(const std::vector<ScoredTriplet>& triplets,
                                           std::size_t k) {
  if (k < 1) throw std::invalid_argument("top_k: K must be >= 1");
  std::vector<RankedPrediction> flat;
  for (std::size_t i = 0; i < triplets.size(); ++i)
    for (std::size_t v = 0; v < triplets[i].verb_scores.size(); ++v)
      if (triplets[i].verb_scores[v] > 0.0) flat.push_back({i, v, triplets[i].verb_scores[v]});
  std::sort(flat.begin(), flat.end(), [](const RankedPrediction& a, const RankedPrediction& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.triplet_index != b.triplet_index) return a.triplet_index < b.triplet_index;
    return a.verb < b.verb;
  });
  if (flat.size() > k) flat.resize(k);
  return flat;
}

// ---------------------------------------------------------------------------
// Prediction dump
// ---------------------------------------------------------------------------

/// One retained (triplet, verb) detection:
///   image-id hx1 hy1 hx2 hy2 ox1 oy1 ox2 oy2 object-name verb-name score
struct DumpRecord {
  std::string image_id;
  Box human;
  Box object;
  std::size_t object_class = 0;
  std::size_t verb = 0;
  double score = 0.0;
};

inline void write_predictions(const std::string& path, const std::vector<DumpRecord>& records,
                              const Vocabulary& vocab) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.precision(17);
  for (const DumpRecord& r : records) {
    f << r.image_id << " " << r.human.x1 << " " << r.human.y1 << " " << r.human.x2 << " "
      << r.human.y2 << " " << r.object.x1 << " " << r.object.y1 << " " << r.object.x2 << " "
      << r.object.y2 << " " << vocab.object_name(r.object_class) << " "
      << vocab.verb_name(r.verb) << " " << r.score << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::vector<DumpRecord> read_predictions(const std::string& path,
                                                const Vocabulary& vocab) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<DumpRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    DumpRecord r;
    std::string object_name, verb_name;
    if (!(ss >> r.image_id >> r.human.x1 >> r.human.y1 >> r.human.x2 >> r.human.y2 >>
          r.object.x1 >> r.object.y1 >> r.object.x2 >> r.object.y2 >> object_name >>
          verb_name >> r.score))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected image-id, 8 box reals, object, verb, score");
    try {
      r.object_class = vocab.object_id(object_name);
      r.verb = vocab.verb_id(verb_name);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (r.object_class == vocab.background_index())
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": prediction with background object");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ocn
