#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ocn/autodiff.hpp"
#include "ocn/gradcheck.hpp"
#include "ocn/matrix.hpp"
#include "ocn/model.hpp"
#include "ocn/priors.hpp"
#include "ocn/rng.hpp"
#include "ocn/setmatch.hpp"
#include "ocn/vsm.hpp"

namespace ocn {

struct GradCase {
  std::string name;
  std::function<GradCheckResult(std::size_t seed)> run;
};

namespace detail {

// Make any output scalar while keeping every entry load-bearing.
inline Var probe(Tape& tape, Var out, const Matrix& weights) {
  return sum_all(hadamard(out, tape.leaf(weights, "probe")));
}

struct SuiteDims {
  std::size_t d = 8, heads = 2, n_q = 4, n_p = 6, d_p = 5, n_o = 3;
};

inline ModelConfig suite_config(const SuiteDims& s) {
  ModelConfig cfg;
  cfg.n_verbs = s.n_p;
  cfg.n_objects = s.n_o;
  cfg.n_queries = s.n_q;
  cfg.d = s.d;
  cfg.d_p = s.d_p;
  cfg.heads = s.heads;
  return cfg;
}

// Strictly positive distribution with zero diagonal, rows of a joint over
// ordered pairs; the SKL target in the composed checks.
inline Matrix off_diagonal_dist(std::size_t n, Rng& rng) {
  Matrix m(n, n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        m(i, j) = 0.2 + rng.uniform();
        total += m(i, j);
      }
  for (std::size_t k = 0; k < m.size(); ++k) m.at(k) /= total;
  return m;
}

inline std::vector<Triplet> suite_triplets(const SuiteDims& s, Rng& rng) {
  std::vector<Triplet> gts;
  for (std::size_t t = 0; t < 2; ++t) {
    Triplet g;
    auto box = [&]() {
      Box b;
      b.x1 = rng.uniform(0.05, 0.4);
      b.y1 = rng.uniform(0.05, 0.4);
      b.x2 = b.x1 + rng.uniform(0.2, 0.5);
      b.y2 = b.y1 + rng.uniform(0.2, 0.5);
      return b;
    };
    g.human = box();
    g.object = box();
    g.object_class = rng.index(s.n_o);
    g.verbs = {rng.index(s.n_p / 2), s.n_p / 2 + rng.index(s.n_p - s.n_p / 2)};
    gts.push_back(g);
  }
  return gts;
}

}  // namespace detail

/// Every differentiable op plus the composed module and loss pipelines, at
/// desk-scale sizes. Each case draws its own inputs from the seed.
inline std::vector<GradCase> gradient_suite() {
  using detail::probe;
  const detail::SuiteDims S;
  std::vector<GradCase> cases;
  auto add_case = [&](const std::string& name,
                      std::function<GradCheckResult(std::size_t)> fn) {
    cases.push_back({name, std::move(fn)});
  };

  // --- elementwise and structural ops ---------------------------------
  auto binary = [&](const std::string& name, auto op, double lo, double hi) {
    add_case("op." + name, [op, lo, hi](std::size_t seed) {
      Rng rng(seed);
      const Matrix a = rng.matrix_uniform(3, 4, lo, hi);
      const Matrix b = rng.matrix_uniform(3, 4, lo, hi);
      const Matrix w = rng.matrix_uniform(3, 4, -1.0, 1.0);
      return grad_check(
          [&](Tape& t, const std::vector<Var>& p) { return probe(t, op(p[0], p[1]), w); },
          {a, b});
    });
  };
  binary("add", [](Var a, Var b) { return add(a, b); }, -1.0, 1.0);
  binary("sub", [](Var a, Var b) { return sub(a, b); }, -1.0, 1.0);
  binary("hadamard", [](Var a, Var b) { return hadamard(a, b); }, -1.0, 1.0);
  binary("div", [](Var a, Var b) { return div(a, b); }, 0.5, 1.5);
  binary("minimum", [](Var a, Var b) { return minimum(a, b); }, -1.0, 1.0);
  binary("maximum", [](Var a, Var b) { return maximum(a, b); }, -1.0, 1.0);

  auto unary = [&](const std::string& name, auto op, double lo, double hi) {
    add_case("op." + name, [op, lo, hi](std::size_t seed) {
      Rng rng(seed);
      const Matrix a = rng.matrix_uniform(3, 5, lo, hi);
      return grad_check(
          [&](Tape& t, const std::vector<Var>& p) {
            Var out = op(p[0]);
            Rng wr(seed + 101);
            const Matrix w =
                wr.matrix_uniform(out.value().rows(), out.value().cols(), -1.0, 1.0);
            return probe(t, out, w);
          },
          {a});
    });
  };
  unary("relu", [](Var a) { return relu(a); }, -1.0, 1.0);
  unary("sigmoid", [](Var a) { return sigmoid(a); }, -4.0, 4.0);
  unary("exp", [](Var a) { return exp_elem(a); }, -2.0, 2.0);
  unary("log", [](Var a) { return log_elem(a); }, 0.5, 2.0);
  unary("abs", [](Var a) { return abs_elem(a); }, -1.0, 1.0);
  unary("softmax_rows", [](Var a) { return softmax_rows(a); }, -3.0, 3.0);
  unary("l2_normalize_rows", [](Var a) { return l2_normalize_rows(a); }, 0.3, 2.0);
  unary("scale", [](Var a) { return scale(a, -1.7); }, -1.0, 1.0);
  unary("add_scalar", [](Var a) { return add_scalar(a, 0.9); }, -1.0, 1.0);
  unary("transpose", [](Var a) { return sum_all(hadamard(transpose(a), transpose(a))); },
        -1.0, 1.0);
  unary("sum_rows", [](Var a) { return sum_all(hadamard(sum_rows(a), sum_rows(a))); }, -1.0,
        1.0);
  unary("sum_all", [](Var a) { return sum_all(a); }, -1.0, 1.0);
  unary("mean_all", [](Var a) { return mean_all(a); }, -1.0, 1.0);

  add_case("op.matmul", [](std::size_t seed) {
    Rng rng(seed);
    const Matrix a = rng.matrix_uniform(3, 4, -1.0, 1.0);
    const Matrix b = rng.matrix_uniform(4, 2, -1.0, 1.0);
    const Matrix w = rng.matrix_uniform(3, 2, -1.0, 1.0);
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) { return probe(t, matmul(p[0], p[1]), w); },
        {a, b});
  });
  add_case("op.concat_cols", [](std::size_t seed) {
    Rng rng(seed);
    const Matrix a = rng.matrix_uniform(3, 2, -1.0, 1.0);
    const Matrix b = rng.matrix_uniform(3, 3, -1.0, 1.0);
    const Matrix c = rng.matrix_uniform(3, 1, -1.0, 1.0);
    const Matrix w = rng.matrix_uniform(3, 6, -1.0, 1.0);
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) {
          return probe(t, concat_cols({p[0], p[1], p[2]}), w);
        },
        {a, b, c});
  });
  add_case("op.slice_cols", [](std::size_t seed) {
    Rng rng(seed);
    const Matrix a = rng.matrix_uniform(3, 6, -1.0, 1.0);
    const Matrix w = rng.matrix_uniform(3, 3, -1.0, 1.0);
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) { return probe(t, slice_cols(p[0], 2, 3), w); },
        {a});
  });
  add_case("op.gather_rows", [](std::size_t seed) {
    Rng rng(seed);
    const Matrix a = rng.matrix_uniform(4, 3, -1.0, 1.0);
    const Matrix w = rng.matrix_uniform(5, 3, -1.0, 1.0);
    const std::vector<std::size_t> rows{2, 0, 2, 3, 1};  // duplicate on purpose
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) { return probe(t, gather_rows(p[0], rows), w); },
        {a});
  });
  add_case("op.repeat_rows", [](std::size_t seed) {
    Rng rng(seed);
    const Matrix a = rng.matrix_uniform(1, 4, -1.0, 1.0);
    const Matrix w = rng.matrix_uniform(3, 4, -1.0, 1.0);
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) { return probe(t, repeat_rows(p[0], 3), w); },
        {a});
  });
  add_case("op.div_scalar", [](std::size_t seed) {
    Rng rng(seed);
    const Matrix a = rng.matrix_uniform(3, 4, -1.0, 1.0);
    const Matrix s = rng.matrix_uniform(1, 1, 0.5, 1.5);
    const Matrix w = rng.matrix_uniform(3, 4, -1.0, 1.0);
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) {
          return probe(t, div_scalar(p[0], p[1]), w);
        },
        {a, s});
  });
  add_case("op.layer_norm", [](std::size_t seed) {
    Rng rng(seed);
    const Matrix x = rng.matrix_uniform(3, 6, -2.0, 2.0);
    const Matrix gain = rng.matrix_uniform(1, 6, 0.5, 1.5);
    const Matrix bias = rng.matrix_uniform(1, 6, -0.5, 0.5);
    const Matrix w = rng.matrix_uniform(3, 6, -1.0, 1.0);
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) {
          return probe(t, layer_norm(p[0], p[1], p[2]), w);
        },
        {x, gain, bias});
  });
  add_case("op.linear", [](std::size_t seed) {
    Rng rng(seed);
    const Matrix x = rng.matrix_uniform(3, 4, -1.0, 1.0);
    const Matrix wgt = rng.matrix_uniform(2, 4, -1.0, 1.0);
    const Matrix b = rng.matrix_uniform(1, 2, -1.0, 1.0);
    const Matrix w = rng.matrix_uniform(3, 2, -1.0, 1.0);
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) {
          return probe(t, linear(p[0], p[1], p[2]), w);
        },
        {x, wgt, b});
  });

  // --- scalar losses ---------------------------------------------------
  add_case("op.kl_div", [](std::size_t seed) {
    Rng rng(seed);
    Matrix target = rng.matrix_uniform(3, 4, 0.1, 1.0);
    double sum = 0.0;
    for (std::size_t k = 0; k < target.size(); ++k) sum += target.at(k);
    for (std::size_t k = 0; k < target.size(); ++k) target.at(k) /= sum;
    const Matrix q = rng.matrix_uniform(3, 4, 0.2, 1.5);
    return grad_check(
        [&](Tape&, const std::vector<Var>& p) { return kl_div(target, p[0]); }, {q});
  });
  add_case("op.softmax_xent", [](std::size_t seed) {
    Rng rng(seed);
    const Matrix logits = rng.matrix_uniform(4, 5, -2.0, 2.0);
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < 4; ++i) targets.push_back(rng.index(5));
    return grad_check(
        [&](Tape&, const std::vector<Var>& p) { return softmax_xent(p[0], targets); },
        {logits});
  });
  add_case("op.focal_loss", [](std::size_t seed) {
    Rng rng(seed);
    const Matrix logits = rng.matrix_uniform(3, 5, -3.0, 3.0);
    Matrix targets(3, 5);
    for (std::size_t k = 0; k < targets.size(); ++k) targets.at(k) = rng.uniform() < 0.4;
    return grad_check(
        [&](Tape&, const std::vector<Var>& p) {
          return focal_loss(p[0], targets, 2.0, 0.25);
        },
        {logits});
  });
  add_case("op.bce_loss", [](std::size_t seed) {
    Rng rng(seed);
    const Matrix logits = rng.matrix_uniform(3, 5, -3.0, 3.0);
    Matrix targets(3, 5);
    for (std::size_t k = 0; k < targets.size(); ++k) targets.at(k) = rng.uniform() < 0.5;
    return grad_check(
        [&](Tape&, const std::vector<Var>& p) { return bce_loss(p[0], targets); }, {logits});
  });

  // --- semantic branch --------------------------------------------------
  add_case("module.semantic_reasoning", [S](std::size_t seed) {
    Rng rng(seed);
    Rng init(seed + 1000);
    VsmParams vp = init_vsm(S.d_p, S.d, init);
    const Matrix emb = rng.matrix_normal(S.n_p, S.d_p);
    const Matrix w = rng.matrix_uniform(S.n_p, S.d, -1.0, 1.0);
    std::vector<Matrix> params{emb};
    vp.visit([&](const std::string&, Matrix& m) { params.push_back(m); });
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) {
          VsmVars v{p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]};
          return probe(t, semantic_reasoning(p[0], v), w);
        },
        params);
  });
  add_case("module.adjacency_skl", [S](std::size_t seed) {
    Rng rng(seed);
    const Matrix p_tilde = rng.matrix_normal(S.n_p, S.d);
    const Matrix c_hat = detail::off_diagonal_dist(S.n_p, rng);
    return grad_check(
        [&](Tape&, const std::vector<Var>& p) {
          return skl_loss(c_hat, adjacency(p[0], 0.5));
        },
        {p_tilde});
  });
  add_case("module.aggregate", [S](std::size_t seed) {
    Rng rng(seed);
    const Matrix p_tilde = rng.matrix_normal(S.n_p, S.d);
    Matrix s_hat(S.n_o + 1, S.n_p, 1.0 / S.n_p);
    for (std::size_t k = 0; k < s_hat.size(); ++k) s_hat.at(k) += 0.05 * rng.uniform();
    std::vector<std::size_t> classes{1, 0, S.n_o, 2};
    const Matrix w = rng.matrix_uniform(classes.size(), S.d, -1.0, 1.0);
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) {
          return probe(t, aggregate(classes, s_hat, p[0]), w);
        },
        {p_tilde});
  });

  // --- calibration ------------------------------------------------------
  add_case("module.inter_calibrate", [S](std::size_t seed) {
    Rng rng(seed);
    Rng init(seed + 1000);
    InterCParams ip = init_interc(S.d, S.heads, init);
    const Matrix guide = rng.matrix_normal(S.n_q, S.d);
    const Matrix target = rng.matrix_normal(S.n_q, S.d);
    const Matrix w = rng.matrix_uniform(S.n_q, S.d, -1.0, 1.0);
    std::vector<Matrix> params{guide, target};
    ip.visit("c", [&](const std::string&, Matrix& m) { params.push_back(m); });
    const std::size_t H = S.heads;
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) {
          InterCVars v;
          std::size_t k = 2;
          for (std::size_t h = 0; h < H; ++h) {  // visit order: gate_in, gate_out, target_proj
            v.w_t2.push_back(p[k++]);
            v.w_t1.push_back(p[k++]);
            v.w_t3.push_back(p[k++]);
          }
          v.w_t5 = p[k++];
          v.w_t4 = p[k++];
          v.ln_gain = p[k++];
          v.ln_bias = p[k++];
          return probe(t, inter_calibrate(p[0], p[1], v, H), w);
        },
        params);
  });
  add_case("module.intra_enhance", [S](std::size_t seed) {
    Rng rng(seed);
    Rng init(seed + 1000);
    IntraECParams ip = init_intraec(S.d, S.heads, init);
    const Matrix y = rng.matrix_normal(S.n_q, S.d);
    const Matrix w = rng.matrix_uniform(S.n_q, S.d, -1.0, 1.0);
    std::vector<Matrix> params{y};
    ip.visit("e", [&](const std::string&, Matrix& m) { params.push_back(m); });
    const std::size_t H = S.heads;
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) {
          IntraECVars v;
          std::size_t k = 1;
          for (std::size_t h = 0; h < H; ++h) {  // visit order: score, left, right, message
            v.w.push_back(p[k++]);
            v.w_b1.push_back(p[k++]);
            v.w_b2.push_back(p[k++]);
            v.w_b3.push_back(p[k++]);
          }
          v.w_b5 = p[k++];
          v.w_b4 = p[k++];
          v.ln_gain = p[k++];
          v.ln_bias = p[k++];
          return probe(t, intra_enhance(p[0], v, H), w);
        },
        params);
  });
  add_case("module.fuse", [S](std::size_t seed) {
    Rng rng(seed);
    Rng init(seed + 1000);
    FusionParams fp = init_fusion(S.d, init);
    const Matrix x = rng.matrix_normal(S.n_q, S.d);
    const Matrix y = rng.matrix_normal(S.n_q, S.d);
    const Matrix w = rng.matrix_uniform(S.n_q, S.d, -1.0, 1.0);
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) {
          FusionVars v{p[2], p[3]};
          return probe(t, fuse(p[0], p[1], v), w);
        },
        {x, y, fp.w_x, fp.w_y});
  });

  // --- box geometry -----------------------------------------------------
  add_case("module.giou_rows", [](std::size_t seed) {
    Rng rng(seed);
    Matrix boxes_cs(3, 8);
    Matrix gt(3, 8);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t pair = 0; pair < 2; ++pair) {
        boxes_cs(i, 4 * pair + 0) = rng.uniform(0.3, 0.7);
        boxes_cs(i, 4 * pair + 1) = rng.uniform(0.3, 0.7);
        boxes_cs(i, 4 * pair + 2) = rng.uniform(0.15, 0.4);
        boxes_cs(i, 4 * pair + 3) = rng.uniform(0.15, 0.4);
        const double x1 = rng.uniform(0.1, 0.5), y1 = rng.uniform(0.1, 0.5);
        gt(i, 4 * pair + 0) = x1;
        gt(i, 4 * pair + 1) = y1;
        gt(i, 4 * pair + 2) = x1 + rng.uniform(0.2, 0.4);
        gt(i, 4 * pair + 3) = y1 + rng.uniform(0.2, 0.4);
      }
    Matrix gt_h(3, 4), gt_o(3, 4);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < 4; ++c) {
        gt_h(i, c) = gt(i, c);
        gt_o(i, c) = gt(i, 4 + c);
      }
    const Matrix w = rng.matrix_uniform(3, 1, 0.5, 1.0);
    return grad_check(
        [&](Tape& t, const std::vector<Var>& p) {
          Var g_h = giou_rows(boxes_to_corners(slice_cols(p[0], 0, 4)), gt_h);
          Var g_o = giou_rows(boxes_to_corners(slice_cols(p[0], 4, 4)), gt_o);
          return probe(t, add(g_h, g_o), w);
        },
        {boxes_cs});
  });

  // --- composed per-image loss and full objective ------------------------
  add_case("loss.set_loss", [S](std::size_t seed) {
    Rng rng(seed);
    Rng init(seed + 1000);
    const std::vector<Triplet> gts = detail::suite_triplets(S, rng);
    const Matrix boxes_raw = rng.matrix_uniform(S.n_q, 8, -1.0, 1.0);
    const Matrix obj_logits = rng.matrix_uniform(S.n_q, S.n_o + 1, -1.0, 1.0);
    const Matrix verb_logits = rng.matrix_uniform(S.n_q, S.n_p, -1.0, 1.0);
    (void)init;
    const std::size_t n_o = S.n_o;
    return grad_check(
        [&, gts](Tape&, const std::vector<Var>& p) {
          QueryOutputs out;
          out.boxes = sigmoid(p[0]);
          out.obj_logits = p[1];
          out.verb_logits = p[2];
          return set_loss(out, gts, n_o, LossWeights{}, VerbLossCfg{}, MatchWeights{}).total;
        },
        {boxes_raw, obj_logits, verb_logits});
  });
  add_case("loss.full_objective", [S](std::size_t seed) {
    Rng rng(seed);
    Rng init(seed + 1000);
    ModelConfig cfg = detail::suite_config(S);
    ModelParams mp = init_model(cfg, init);
    const Matrix emb = [&] {
      Matrix e = rng.matrix_normal(S.n_p, S.d_p);
      for (std::size_t i = 0; i < e.rows(); ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < e.cols(); ++j) norm += e(i, j) * e(i, j);
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < e.cols(); ++j) e(i, j) /= norm;
      }
      return e;
    }();
    const Matrix features = rng.matrix_normal(S.n_q, S.d);
    const Matrix c_hat = detail::off_diagonal_dist(S.n_p, rng);
    Matrix s_hat(S.n_o + 1, S.n_p, 1.0 / S.n_p);
    const std::vector<Triplet> gts = detail::suite_triplets(S, rng);
    std::vector<Matrix> params;
    mp.visit([&](const std::string&, Matrix& m) { params.push_back(m); });
    return grad_check(
        [&, gts](Tape& t, const std::vector<Var>& p) {
          // Reassemble the bound model from the check's leaves, mirroring the
          // visit() enumeration order exactly.
          std::size_t k = 0;
          BoundModel bm;
          auto take = [&]() { return p[k++]; };
          bm.vsm = VsmVars{take(), take(), take(), take(), take(), take(), take(), take()};
          auto take_interc = [&]() {
            InterCVars v;
            for (std::size_t h = 0; h < cfg.heads; ++h) {
              v.w_t2.push_back(take());
              v.w_t1.push_back(take());
              v.w_t3.push_back(take());
            }
            v.w_t5 = take();
            v.w_t4 = take();
            v.ln_gain = take();
            v.ln_bias = take();
            return v;
          };
          auto take_intraec = [&]() {
            IntraECVars v;
            for (std::size_t h = 0; h < cfg.heads; ++h) {
              v.w.push_back(take());
              v.w_b1.push_back(take());
              v.w_b2.push_back(take());
              v.w_b3.push_back(take());
            }
            v.w_b5 = take();
            v.w_b4 = take();
            v.ln_gain = take();
            v.ln_bias = take();
            return v;
          };
          bm.cal_visual = take_interc();
          bm.cal_semantic = take_interc();
          bm.enh_visual = take_intraec();
          bm.enh_semantic = take_intraec();
          bm.fusion = FusionVars{take(), take()};
          bm.obj_w = take();
          bm.obj_b = take();
          bm.box_w1 = take();
          bm.box_b1 = take();
          bm.box_w2 = take();
          bm.box_b2 = take();
          bm.verb_w = take();
          bm.verb_b = take();
          Var p_tilde = embed_verbs(bm, cfg, t, emb);
          Var skl = skl_loss(c_hat, adjacency(p_tilde, cfg.tau));
          QueryOutputs out = forward_image(bm, cfg, t, features, p_tilde, s_hat);
          ImageLoss il = set_loss(out, gts, cfg.n_objects, cfg.weights, cfg.verb_loss,
                                  MatchWeights{});
          return add(scale(skl, cfg.weights.skl), il.total);
        },
        params);
  });

  return cases;
}

}  // namespace ocn
