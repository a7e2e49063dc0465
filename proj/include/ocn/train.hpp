#pragma once

#include <cstddef>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocn/autodiff.hpp"
#include "ocn/matrix.hpp"
#include "ocn/model.hpp"
#include "ocn/priors.hpp"
#include "ocn/rng.hpp"
#include "ocn/setmatch.hpp"
#include "ocn/vsm.hpp"

namespace ocn {

struct TrainConfig {
  std::size_t steps = 200;
  std::size_t batch = 8;
  double lr = 1e-2;
  double momentum = 0.9;
  double lr_drop = 0.1;  // lr multiplier over the final quarter of steps
  std::size_t seed = 0;
  std::size_t log_every = 10;  // 0 = silent
};

struct StepStats {
  std::size_t step = 0;
  double skl = 0.0;  // unweighted monitor value
  double box = 0.0;
  double giou = 0.0;
  double obj = 0.0;
  double verb = 0.0;
  double total = 0.0;  // weighted objective actually descended
};

/// Momentum SGD over one recorded step. Velocities stay aligned with the
/// parameters because bind_model enumerates them in a fixed order.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void set_lr(double lr) { lr_ = lr; }

  void apply(const std::vector<std::pair<Matrix*, Var>>& bound) {
    if (velocity_.empty()) {
      velocity_.reserve(bound.size());
      for (const auto& [master, var] : bound)
        velocity_.emplace_back(master->rows(), master->cols());
    }
    if (velocity_.size() != bound.size())
      throw std::logic_error("SgdMomentum: parameter count changed between steps");
    for (std::size_t k = 0; k < bound.size(); ++k) {
      Matrix* master = bound[k].first;
      const Matrix& grad = bound[k].second.grad();
      Matrix& vel = velocity_[k];
      if (!vel.same_shape(*master) || !grad.same_shape(*master))
        throw std::logic_error("SgdMomentum: shape drift at parameter " + std::to_string(k));
      for (std::size_t e = 0; e < vel.size(); ++e) {
        vel.at(e) = momentum_ * vel.at(e) - lr_ * grad.at(e);
        master->at(e) += vel.at(e);
      }
    }
  }

 private:
  double lr_, momentum_;
  std::vector<Matrix> velocity_;
};

/// Trains in place. features[i] pairs with anns.images[i]; embeddings are
/// frozen inputs, never updated. Returns per-step statistics.
inline std::vector<StepStats> train(ModelParams& params, const ModelConfig& cfg,
                                    const std::vector<Matrix>& features,
                                    const AnnotationSet& anns, const Matrix& embeddings,
                                    const PriorTables& priors, const TrainConfig& tc,
                                    std::ostream* log = nullptr) {
  cfg.validate();
  if (features.empty() || features.size() != anns.images.size())
    throw std::invalid_argument("train: " + std::to_string(features.size()) +
                                " feature blocks vs " + std::to_string(anns.images.size()) +
                                " annotated images");
  if (tc.steps == 0 || tc.batch == 0)
    throw std::invalid_argument("train: steps and batch must be positive");
  if (cfg.use_vsm && embeddings.rows() != cfg.n_verbs)
    throw std::invalid_argument("train: embeddings " + embeddings.shape_str() + " vs " +
                                std::to_string(cfg.n_verbs) + " verbs");

  const std::size_t background = cfg.n_objects;
  const MatchWeights mw{cfg.weights.obj, cfg.weights.verb, cfg.weights.box, cfg.weights.giou};
  Rng rng(tc.seed);
  SgdMomentum opt(tc.lr, tc.momentum);
  std::vector<StepStats> history;
  history.reserve(tc.steps);

  for (std::size_t step = 0; step < tc.steps; ++step) {
    opt.set_lr(step >= tc.steps - tc.steps / 4 ? tc.lr * tc.lr_drop : tc.lr);
    try {
      Tape tape;
      Binder binder(tape);
      BoundModel m = bind_model(binder, params);

      StepStats st;
      st.step = step;

      Var p_tilde;
      Var objective = tape.leaf(Matrix(1, 1), "zero");
      if (cfg.use_vsm) {
        p_tilde = embed_verbs(m, cfg, tape, embeddings);
        if (cfg.use_skl) {
          Var skl = skl_loss(priors.c_hat, adjacency(p_tilde, cfg.tau));
          st.skl = skl.scalar();
          if (cfg.weights.skl != 0.0) objective = add(objective, scale(skl, cfg.weights.skl));
        }
      }

      Var batch_sum = tape.leaf(Matrix(1, 1), "zero");
      for (std::size_t b = 0; b < tc.batch; ++b) {
        const std::size_t i = rng.index(features.size());
        QueryOutputs out = forward_image(m, cfg, tape, features[i], p_tilde, priors.s_hat);
        ImageLoss il =
            set_loss(out, anns.images[i].triplets, background, cfg.weights, cfg.verb_loss, mw);
        batch_sum = add(batch_sum, il.total);
        st.box += il.box;
        st.giou += il.giou;
        st.obj += il.obj;
        st.verb += il.verb;
      }
      const double inv_b = 1.0 / static_cast<double>(tc.batch);
      objective = add(objective, scale(batch_sum, inv_b));
      st.box *= inv_b;
      st.giou *= inv_b;
      st.obj *= inv_b;
      st.verb *= inv_b;
      st.total = objective.scalar();

      tape.backward(objective);
      opt.apply(binder.bound);
      history.push_back(st);

      if (log && tc.log_every > 0 && (step % tc.log_every == 0 || step + 1 == tc.steps)) {
        (*log) << "step " << st.step << " total " << st.total << " skl " << st.skl << " box "
               << st.box << " giou " << st.giou << " obj " << st.obj << " verb " << st.verb
               << '\n';
      }
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("train: step " + std::to_string(step) + ": " + e.what());
    }
  }
  return history;
}

}  // namespace ocn
