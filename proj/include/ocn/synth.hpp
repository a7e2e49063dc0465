#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocn/io.hpp"
#include "ocn/matrix.hpp"
#include "ocn/priors.hpp"
#include "ocn/rng.hpp"

namespace ocn {

struct SynthConfig {
  std::size_t n_verbs = 10;
  std::size_t n_objects = 5;
  std::size_t n_queries = 20;
  std::size_t d = 32;    // visual feature width
  std::size_t d_p = 16;  // pseudo word-embedding width
  std::size_t images = 400;
  double noise = 0.1;
  double verb_gain = 1.0;         // scale of the verb prototype in query features
  double box_gain = 1.0;          // scale of the box projection in query features
  std::uint64_t seed = 7;         // structure: prototypes, planted tables, embeddings
  std::uint64_t sample_seed = 1;  // draws: triplets, boxes, feature noise
  double p_co = 0.35;             // chance a triplet carries a second verb
  std::size_t min_triplets = 1;
  std::size_t max_triplets = 3;
  double object_skew = 1.0;  // object weight proportional to 1/(i+1)^skew
  Matrix planted_s;          // optional N_o x N_p row-stochastic target
  Matrix planted_c;          // optional N_p x N_p symmetric pair weights, zero diagonal
};

struct SynthDataset {
  Vocabulary vocab;
  AnnotationSet anns;
  std::vector<Matrix> features;  // one N_q x D matrix per image, aligned with anns.images
  Matrix embeddings;             // N_p x D_p, unit rows, co-occurring verbs pulled together
  Matrix planted_s;              // (N_o+1) x N_p: what empirical S converges to
  Matrix planted_c;              // N_p x N_p: what empirical C converges to
  Matrix joint;                  // symmetric verb-pair joint actually sampled from
};

namespace detail {

inline Box sample_box(Rng& rng) {
  const double x1 = rng.uniform(0.0, 0.6);
  const double y1 = rng.uniform(0.0, 0.6);
  return Box{x1, y1, x1 + rng.uniform(0.1, 0.35), y1 + rng.uniform(0.1, 0.35)};
}

}  // namespace detail

/// Deterministic synthetic HOI data. Triplet verbs come from a two-part
/// mixture: with probability p_co an ordered pair drawn from the symmetric
/// joint (giving co-occurrence structure that the conditional verb table
/// inherits), otherwise a single verb from a per-object distribution
/// compensated so the empirical object-verb conditional converges exactly
/// to the reported planted_s. Query features are object + verb prototypes
/// plus a box projection and Gaussian noise; unused queries carry a
/// background prototype.
inline SynthDataset gen_dataset(const SynthConfig& cfg) {
  if (cfg.n_verbs < 2 || cfg.n_objects < 1)
    throw std::invalid_argument("gen_dataset: need at least 2 verbs and 1 object");
  if (cfg.max_triplets < cfg.min_triplets || cfg.min_triplets < 1)
    throw std::invalid_argument("gen_dataset: bad triplet range");
  if (cfg.max_triplets > cfg.n_queries)
    throw std::invalid_argument("gen_dataset: max triplets " +
                                std::to_string(cfg.max_triplets) + " exceeds " +
                                std::to_string(cfg.n_queries) + " queries");
  if (cfg.p_co < 0.0 || cfg.p_co >= 1.0)
    throw std::invalid_argument("gen_dataset: p_co must be in [0, 1)");
  const std::size_t n_p = cfg.n_verbs, n_o = cfg.n_objects;

  Rng structure(cfg.seed);

  std::vector<std::string> verb_names, object_names;
  for (std::size_t v = 0; v < n_p; ++v) verb_names.push_back("verb" + std::to_string(v));
  for (std::size_t o = 0; o < n_o; ++o) object_names.push_back("object" + std::to_string(o));
  Vocabulary vocab(verb_names, object_names);

  // Symmetric verb-pair joint with planted co-occurrence blocks.
  Matrix joint = cfg.planted_c;
  if (joint.size() == 0) {
    joint = Matrix(n_p, n_p);
    for (std::size_t i = 0; i < n_p; ++i)
      for (std::size_t j = i + 1; j < n_p; ++j)
        joint(i, j) = joint(j, i) = std::exp(1.2 * structure.normal());
    for (std::size_t i = 0; i + 1 < n_p; i += 2) joint(i, i + 1) = joint(i + 1, i) *= 8.0;
  }
  if (joint.rows() != n_p || joint.cols() != n_p)
    throw std::invalid_argument("gen_dataset: planted verb joint must be " +
                                std::to_string(n_p) + "x" + std::to_string(n_p) + ", got " +
                                joint.shape_str());
  double joint_sum = 0.0;
  for (std::size_t i = 0; i < n_p; ++i)
    for (std::size_t j = 0; j < n_p; ++j) {
      if (joint(i, j) < 0.0)
        throw std::invalid_argument("gen_dataset: negative verb joint entry");
      if (i == j && joint(i, j) != 0.0)
        throw std::invalid_argument("gen_dataset: verb joint must have zero diagonal");
      if (std::abs(joint(i, j) - joint(j, i)) > 1e-9)
        throw std::invalid_argument("gen_dataset: verb joint must be symmetric");
      joint_sum += joint(i, j);
    }
  if (joint_sum <= 0.0) throw std::invalid_argument("gen_dataset: planted support empty");
  for (std::size_t k = 0; k < joint.size(); ++k) joint.at(k) /= joint_sum;

  // Marginal chance of each verb appearing in a pair draw.
  std::vector<double> pair_marginal(n_p, 0.0);
  for (std::size_t v = 0; v < n_p; ++v)
    for (std::size_t w = 0; w < n_p; ++w) pair_marginal[v] += 2.0 * joint(v, w);

  // Per-object verb targets.
  const bool user_s = cfg.planted_s.size() != 0;
  Matrix target_s = cfg.planted_s;
  if (!user_s) {
    target_s = Matrix(n_o, n_p);
    for (std::size_t o = 0; o < n_o; ++o) {
      double sum = 0.0;
      for (std::size_t v = 0; v < n_p; ++v) {
        target_s(o, v) = 0.05 + std::exp(1.5 * structure.normal());
        sum += target_s(o, v);
      }
      for (std::size_t v = 0; v < n_p; ++v) target_s(o, v) /= sum;
    }
  }
  if (target_s.rows() != n_o || target_s.cols() != n_p)
    throw std::invalid_argument("gen_dataset: planted object-verb table must be " +
                                std::to_string(n_o) + "x" + std::to_string(n_p) + ", got " +
                                target_s.shape_str());
  for (std::size_t o = 0; o < n_o; ++o) {
    double sum = 0.0;
    for (std::size_t v = 0; v < n_p; ++v) {
      if (target_s(o, v) < 0.0)
        throw std::invalid_argument("gen_dataset: negative planted object-verb entry");
      sum += target_s(o, v);
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw std::invalid_argument("gen_dataset: planted object-verb row " + std::to_string(o) +
                                  " sums to " + std::to_string(sum) + ", expected 1");
  }

  // Single-verb distributions that compensate the pair marginal so the
  // empirical conditional matches the target exactly in expectation:
  //   E[count of v | o] per triplet = p_co * pair_marginal_v + (1-p_co) * q_ov
  //                                 = target_s_ov * (1 + p_co).
  Matrix singles(n_o, n_p);
  bool clamped = false;
  for (std::size_t o = 0; o < n_o; ++o) {
    double sum = 0.0;
    for (std::size_t v = 0; v < n_p; ++v) {
      const double q =
          (target_s(o, v) * (1.0 + cfg.p_co) - cfg.p_co * pair_marginal[v]) / (1.0 - cfg.p_co);
      if (q < -1e-12) {
        if (user_s)
          throw std::invalid_argument(
              "gen_dataset: infeasible config: planted object-verb entry (" +
              std::to_string(o) + "," + std::to_string(v) +
              ") too small for the verb-pair marginal at p_co=" + std::to_string(cfg.p_co));
        clamped = true;
      }
      singles(o, v) = std::max(0.0, q);
      sum += singles(o, v);
    }
    if (sum <= 0.0)
      throw std::invalid_argument("gen_dataset: planted support empty for object " +
                                  std::to_string(o));
    for (std::size_t v = 0; v < n_p; ++v) singles(o, v) /= sum;
  }

  // The distribution actually realized (differs from target_s only when
  // generated defaults had to clamp); reported so convergence checks have
  // the exact limit. Background row uniform.
  Matrix realized_s(n_o + 1, n_p, 1.0 / static_cast<double>(n_p));
  for (std::size_t o = 0; o < n_o; ++o)
    for (std::size_t v = 0; v < n_p; ++v)
      realized_s(o, v) = (cfg.p_co * pair_marginal[v] + (1.0 - cfg.p_co) * singles(o, v)) /
                         (1.0 + cfg.p_co);
  (void)clamped;

  // What the extracted verb conditional converges to: row-normalized joint.
  Matrix realized_c(n_p, n_p);
  for (std::size_t v = 0; v < n_p; ++v) {
    double row = 0.0;
    for (std::size_t w = 0; w < n_p; ++w) row += joint(v, w);
    for (std::size_t w = 0; w < n_p; ++w)
      realized_c(v, w) = row > 0.0 ? joint(v, w) / row : 0.0;
  }

  // Pseudo embeddings: unit rows with co-occurring pairs pulled together.
  Matrix emb = structure.matrix_normal(n_p, cfg.d_p);
  double max_row = 0.0;
  for (std::size_t v = 0; v < n_p; ++v) {
    double row = 0.0;
    for (std::size_t w = 0; w < n_p; ++w) row += joint(v, w);
    max_row = std::max(max_row, row);
  }
  for (int iter = 0; iter < 2; ++iter) {
    Matrix pulled = emb;
    for (std::size_t v = 0; v < n_p; ++v)
      for (std::size_t w = 0; w < n_p; ++w) {
        const double pull = 0.6 * joint(v, w) / max_row;
        for (std::size_t k = 0; k < cfg.d_p; ++k) pulled(v, k) += pull * emb(w, k);
      }
    emb = pulled;
    for (std::size_t v = 0; v < n_p; ++v) {
      double norm = 0.0;
      for (std::size_t k = 0; k < cfg.d_p; ++k) norm += emb(v, k) * emb(v, k);
      norm = std::sqrt(norm);
      for (std::size_t k = 0; k < cfg.d_p; ++k) emb(v, k) /= norm;
    }
  }

  const Matrix obj_proto = structure.matrix_normal(n_o, cfg.d);
  const Matrix verb_proto = structure.matrix_normal(n_p, cfg.d);
  const Matrix bg_proto = structure.matrix_normal(1, cfg.d);
  const Matrix box_proj = structure.matrix_normal(8, cfg.d, 0.3);

  std::vector<double> object_weights(n_o);
  for (std::size_t o = 0; o < n_o; ++o)
    object_weights[o] = std::pow(1.0 / static_cast<double>(o + 1), cfg.object_skew);

  // Flatten the joint for categorical pair draws.
  std::vector<double> joint_flat(joint.raw().begin(), joint.raw().end());

  Rng draws(cfg.sample_seed);
  SynthDataset ds;
  ds.vocab = vocab;
  ds.embeddings = emb;
  ds.planted_s = realized_s;
  ds.planted_c = realized_c;
  ds.joint = joint;

  char id_buf[32];
  for (std::size_t img = 0; img < cfg.images; ++img) {
    std::snprintf(id_buf, sizeof(id_buf), "img%06zu", img);
    ImageAnnotations ia;
    ia.image_id = id_buf;
    const std::size_t n_trip =
        cfg.min_triplets + draws.index(cfg.max_triplets - cfg.min_triplets + 1);
    Matrix feats(cfg.n_queries, cfg.d);
    for (std::size_t t = 0; t < n_trip; ++t) {
      Triplet trip;
      trip.object_class = draws.categorical(object_weights);
      if (draws.uniform() < cfg.p_co) {
        const std::size_t flat = draws.categorical(joint_flat);
        const std::size_t v = flat / n_p, w = flat % n_p;
        trip.verbs = v < w ? std::vector<std::size_t>{v, w} : std::vector<std::size_t>{w, v};
      } else {
        std::vector<double> row(n_p);
        for (std::size_t v = 0; v < n_p; ++v) row[v] = singles(trip.object_class, v);
        trip.verbs = {draws.categorical(row)};
      }
      trip.human = detail::sample_box(draws);
      trip.object = detail::sample_box(draws);

      const double box_vec[8] = {trip.human.x1,  trip.human.y1,  trip.human.x2,
                                 trip.human.y2,  trip.object.x1, trip.object.y1,
                                 trip.object.x2, trip.object.y2};
      for (std::size_t k = 0; k < cfg.d; ++k) {
        double f = obj_proto(trip.object_class, k);
        for (std::size_t v : trip.verbs)
          f += cfg.verb_gain * verb_proto(v, k) / static_cast<double>(trip.verbs.size());
        for (std::size_t b = 0; b < 8; ++b) f += cfg.box_gain * box_vec[b] * box_proj(b, k);
        feats(t, k) = f + cfg.noise * draws.normal();
      }
      ia.triplets.push_back(std::move(trip));
    }
    for (std::size_t q = n_trip; q < cfg.n_queries; ++q)
      for (std::size_t k = 0; k < cfg.d; ++k)
        feats(q, k) = bg_proto(0, k) + cfg.noise * draws.normal();
    ds.anns.images.push_back(std::move(ia));
    ds.features.push_back(std::move(feats));
  }
  return ds;
}

/// Lay a generated split down as the annotation + matrix file formats.
inline void save_dataset(const std::string& dir, const SynthDataset& ds,
                         const SynthConfig& cfg) {
  save_vocabulary(dir + "/vocab.txt", ds.vocab);
  save_annotations(dir + "/annotations.txt", ds.anns, ds.vocab);
  Matrix stacked(ds.features.size() * cfg.n_queries, cfg.d);
  for (std::size_t i = 0; i < ds.features.size(); ++i)
    for (std::size_t q = 0; q < cfg.n_queries; ++q)
      for (std::size_t k = 0; k < cfg.d; ++k)
        stacked(i * cfg.n_queries + q, k) = ds.features[i](q, k);
  save_matrix(dir + "/features.txt", stacked);
  save_matrix(dir + "/embeddings.txt", ds.embeddings);
  save_matrix(dir + "/planted_object_verb.txt", ds.planted_s);
  save_matrix(dir + "/planted_verb_conditional.txt", ds.planted_c);
  KvFile meta;
  meta.set("n_verbs", cfg.n_verbs);
  meta.set("n_objects", cfg.n_objects);
  meta.set("n_queries", cfg.n_queries);
  meta.set("d", cfg.d);
  meta.set("d_p", cfg.d_p);
  meta.set("images", ds.anns.images.size());
  meta.set("noise", cfg.noise);
  meta.set("verb_gain", cfg.verb_gain);
  meta.set("box_gain", cfg.box_gain);
  meta.set("seed", static_cast<std::size_t>(cfg.seed));
  meta.set("sample_seed", static_cast<std::size_t>(cfg.sample_seed));
  meta.set("p_co", cfg.p_co);
  meta.save(dir + "/meta.txt");
}

struct LoadedDataset {
  Vocabulary vocab;
  AnnotationSet anns;
  std::vector<Matrix> features;
  Matrix embeddings;
  std::size_t n_queries = 0;
  std::size_t d = 0;
  std::size_t d_p = 0;
};

inline LoadedDataset load_dataset(const std::string& dir) {
  LoadedDataset ds;
  const KvFile meta = KvFile::load(dir + "/meta.txt");
  ds.n_queries = meta.get_count("n_queries");
  ds.d = meta.get_count("d");
  ds.d_p = meta.get_count("d_p");
  ds.vocab = load_vocabulary(dir + "/vocab.txt");
  ds.anns = load_annotations(dir + "/annotations.txt", ds.vocab);
  ds.embeddings = load_matrix(dir + "/embeddings.txt");
  const Matrix stacked = load_matrix(dir + "/features.txt");
  if (stacked.rows() != ds.anns.images.size() * ds.n_queries || stacked.cols() != ds.d)
    throw std::runtime_error(dir + ": features " + stacked.shape_str() + " disagree with " +
                             std::to_string(ds.anns.images.size()) + " images x " +
                             std::to_string(ds.n_queries) + " queries x " +
                             std::to_string(ds.d));
  for (std::size_t i = 0; i < ds.anns.images.size(); ++i) {
    Matrix f(ds.n_queries, ds.d);
    for (std::size_t q = 0; q < ds.n_queries; ++q)
      for (std::size_t k = 0; k < ds.d; ++k) f(q, k) = stacked(i * ds.n_queries + q, k);
    ds.features.push_back(std::move(f));
  }
  if (ds.embeddings.rows() != ds.vocab.n_verbs() || ds.embeddings.cols() != ds.d_p)
    throw std::runtime_error(dir + ": embeddings " + ds.embeddings.shape_str() +
                             " disagree with vocabulary/meta");
  return ds;
}

}  // namespace ocn
