#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocn/autodiff.hpp"
#include "ocn/cmc.hpp"
#include "ocn/io.hpp"
#include "ocn/matrix.hpp"
#include "ocn/rng.hpp"
#include "ocn/setmatch.hpp"
#include "ocn/vsm.hpp"

namespace ocn {

struct ModelConfig {
  std::size_t n_verbs = 0;
  std::size_t n_objects = 0;  // real classes, background excluded
  std::size_t n_queries = 100;
  std::size_t d = 256;
  std::size_t d_p = 300;
  std::size_t heads = 2;
  double tau = 0.05;
  double beta = 0.1;
  bool use_vsm = true;      // semantic branch + fusion
  bool use_skl = true;      // SKL loss term
  bool use_interc = true;   // inter-modal calibration (identity when off)
  bool use_intraec = true;  // intra-modal enhancement (identity when off)
  LossWeights weights;
  VerbLossCfg verb_loss;

  void validate() const {
    if (n_verbs < 2 || n_objects < 1)
      throw std::invalid_argument("ModelConfig: need >= 2 verbs and >= 1 object");
    if (d == 0 || d_p == 0 || n_queries == 0)
      throw std::invalid_argument("ModelConfig: zero dimension");
    require_heads(d, heads, "ModelConfig");
    if (tau <= 0.0 || beta < 0.0) throw std::invalid_argument("ModelConfig: bad tau/beta");
  }
};

/// All trainable weights. The visual stream is calibrated by the semantic
/// stream and vice versa, each with its own parameters; heads read object
/// class and boxes from the visual queries and verbs from the fused output.
struct ModelParams {
  VsmParams vsm;
  InterCParams cal_visual;    // semantic guides visual
  InterCParams cal_semantic;  // visual guides semantic
  IntraECParams enh_visual;
  IntraECParams enh_semantic;
  FusionParams fusion;
  Matrix obj_w, obj_b;                    // (N_o+1) x D, 1 x (N_o+1)
  Matrix box_w1, box_b1, box_w2, box_b2;  // D x D, 1 x D, 8 x D, 1 x 8
  Matrix verb_w, verb_b;                  // N_p x D, 1 x N_p

  template <class F>
  void visit(F&& f) {
    vsm.visit(f);
    cal_visual.visit("cal_visual", f);
    cal_semantic.visit("cal_semantic", f);
    enh_visual.visit("enh_visual", f);
    enh_semantic.visit("enh_semantic", f);
    fusion.visit("fusion", f);
    f("head.obj_w", obj_w);
    f("head.obj_b", obj_b);
    f("head.box_w1", box_w1);
    f("head.box_b1", box_b1);
    f("head.box_w2", box_w2);
    f("head.box_b2", box_b2);
    f("head.verb_w", verb_w);
    f("head.verb_b", verb_b);
  }
};

inline ModelParams init_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  p.vsm = init_vsm(cfg.d_p, cfg.d, rng);
  p.cal_visual = init_interc(cfg.d, cfg.heads, rng);
  p.cal_semantic = init_interc(cfg.d, cfg.heads, rng);
  p.enh_visual = init_intraec(cfg.d, cfg.heads, rng);
  p.enh_semantic = init_intraec(cfg.d, cfg.heads, rng);
  p.fusion = init_fusion(cfg.d, rng);
  p.obj_w = init_weight(cfg.n_objects + 1, cfg.d, rng);
  p.obj_b = Matrix(1, cfg.n_objects + 1);
  p.box_w1 = init_weight(cfg.d, cfg.d, rng);
  p.box_b1 = Matrix(1, cfg.d);
  p.box_w2 = init_weight(8, cfg.d, rng);
  p.box_b2 = Matrix(1, 8);
  p.verb_w = init_weight(cfg.n_verbs, cfg.d, rng);
  p.verb_b = Matrix(1, cfg.n_verbs);
  return p;
}

/// Creates tape leaves for parameters and remembers which master matrix
/// each leaf mirrors, in a deterministic order, so an optimizer can align
/// per-parameter state across steps.
struct Binder {
  explicit Binder(Tape& tape) : tape_(&tape) {}
  Var operator()(Matrix& master) {
    Var v = tape_->leaf(master, "param");
    bound.push_back({&master, v});
    return v;
  }
  std::vector<std::pair<Matrix*, Var>> bound;

 private:
  Tape* tape_;
};

struct BoundModel {
  VsmVars vsm;
  InterCVars cal_visual, cal_semantic;
  IntraECVars enh_visual, enh_semantic;
  FusionVars fusion;
  Var obj_w, obj_b, box_w1, box_b1, box_w2, box_b2, verb_w, verb_b;
};

namespace detail {

inline VsmVars bind_vsm(Binder& b, VsmParams& p) {
  return VsmVars{b(p.theta), b(p.phi),    b(p.w_p1), b(p.w_p2),
                 b(p.b_theta), b(p.b_phi), b(p.b_p1), b(p.b_p2)};
}

inline InterCVars bind_interc(Binder& b, InterCParams& p) {
  InterCVars v;
  for (Matrix& m : p.w_t1) v.w_t1.push_back(b(m));
  for (Matrix& m : p.w_t2) v.w_t2.push_back(b(m));
  for (Matrix& m : p.w_t3) v.w_t3.push_back(b(m));
  v.w_t4 = b(p.w_t4);
  v.w_t5 = b(p.w_t5);
  v.ln_gain = b(p.ln_gain);
  v.ln_bias = b(p.ln_bias);
  return v;
}

inline IntraECVars bind_intraec(Binder& b, IntraECParams& p) {
  IntraECVars v;
  for (Matrix& m : p.w) v.w.push_back(b(m));
  for (Matrix& m : p.w_b1) v.w_b1.push_back(b(m));
  for (Matrix& m : p.w_b2) v.w_b2.push_back(b(m));
  for (Matrix& m : p.w_b3) v.w_b3.push_back(b(m));
  v.w_b4 = b(p.w_b4);
  v.w_b5 = b(p.w_b5);
  v.ln_gain = b(p.ln_gain);
  v.ln_bias = b(p.ln_bias);
  return v;
}

}  // namespace detail

inline BoundModel bind_model(Binder& b, ModelParams& p) {
  BoundModel m;
  m.vsm = detail::bind_vsm(b, p.vsm);
  m.cal_visual = detail::bind_interc(b, p.cal_visual);
  m.cal_semantic = detail::bind_interc(b, p.cal_semantic);
  m.enh_visual = detail::bind_intraec(b, p.enh_visual);
  m.enh_semantic = detail::bind_intraec(b, p.enh_semantic);
  m.fusion = FusionVars{b(p.fusion.w_x), b(p.fusion.w_y)};
  m.obj_w = b(p.obj_w);
  m.obj_b = b(p.obj_b);
  m.box_w1 = b(p.box_w1);
  m.box_b1 = b(p.box_b1);
  m.box_w2 = b(p.box_w2);
  m.box_b2 = b(p.box_b2);
  m.verb_w = b(p.verb_w);
  m.verb_b = b(p.verb_b);
  return m;
}

/// Project verb embeddings once per tape; shared by every image in a step.
inline Var embed_verbs(const BoundModel& m, const ModelConfig& cfg, Tape& tape,
                       const Matrix& embeddings) {
  Var p = tape.leaf(embeddings, "verb_embeddings");
  if (!cfg.use_vsm)
    throw std::logic_error("embed_verbs: semantic branch disabled");
  return semantic_reasoning(p, m.vsm);
}

/// One image forward pass: visual queries -> object/box heads; semantic
/// aggregation by predicted class -> cross-modal calibration -> fused verb
/// head. With the semantic branch off the verb head reads the visual
/// queries directly.
inline QueryOutputs forward_image(const BoundModel& m, const ModelConfig& cfg, Tape& tape,
                                  const Matrix& features, Var p_tilde, const Matrix& s_hat) {
  if (features.cols() != cfg.d)
    throw std::invalid_argument("forward_image: features " + features.shape_str() +
                                " vs D=" + std::to_string(cfg.d));
  Var q = tape.leaf(features, "queries");
  QueryOutputs out;
  out.obj_logits = linear(q, m.obj_w, m.obj_b);
  out.boxes = sigmoid(linear(relu(linear(q, m.box_w1, m.box_b1)), m.box_w2, m.box_b2));

  Var verb_input = q;
  if (cfg.use_vsm) {
    const std::vector<std::size_t> classes = predict_object_class(out.obj_logits.value());
    Var p_bar = aggregate(classes, s_hat, p_tilde);
    Var y = cfg.use_interc ? inter_calibrate(p_bar, q, m.cal_visual, cfg.heads) : q;
    Var x = cfg.use_interc ? inter_calibrate(q, p_bar, m.cal_semantic, cfg.heads) : p_bar;
    if (cfg.use_intraec) {
      y = intra_enhance(y, m.enh_visual, cfg.heads);
      x = intra_enhance(x, m.enh_semantic, cfg.heads);
    }
    verb_input = fuse(x, y, m.fusion);
  }
  out.verb_logits = linear(verb_input, m.verb_w, m.verb_b);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, ModelParams& params,
                            const ModelConfig& cfg) {
  NamedMatrices mats;
  params.visit([&](const std::string& name, Matrix& m) { mats.emplace_back(name, m); });
  save_named_matrices(path, mats);
  KvFile meta;
  meta.set("n_verbs", cfg.n_verbs);
  meta.set("n_objects", cfg.n_objects);
  meta.set("n_queries", cfg.n_queries);
  meta.set("d", cfg.d);
  meta.set("d_p", cfg.d_p);
  meta.set("heads", cfg.heads);
  meta.set("tau", cfg.tau);
  meta.set("beta", cfg.beta);
  meta.set("use_vsm", std::size_t(cfg.use_vsm));
  meta.set("use_skl", std::size_t(cfg.use_skl));
  meta.set("use_interc", std::size_t(cfg.use_interc));
  meta.set("use_intraec", std::size_t(cfg.use_intraec));
  meta.save(path + ".meta");
}

inline std::pair<ModelParams, ModelConfig> load_checkpoint(const std::string& path) {
  const KvFile meta = KvFile::load(path + ".meta");
  ModelConfig cfg;
  cfg.n_verbs = meta.get_count("n_verbs");
  cfg.n_objects = meta.get_count("n_objects");
  cfg.n_queries = meta.get_count("n_queries");
  cfg.d = meta.get_count("d");
  cfg.d_p = meta.get_count("d_p");
  cfg.heads = meta.get_count("heads");
  cfg.tau = meta.get_double("tau");
  cfg.beta = meta.get_double("beta");
  cfg.use_vsm = meta.get_count("use_vsm") != 0;
  cfg.use_skl = meta.get_count("use_skl") != 0;
  cfg.use_interc = meta.get_count("use_interc") != 0;
  cfg.use_intraec = meta.get_count("use_intraec") != 0;
  cfg.validate();
  Rng rng(0);
  ModelParams params = init_model(cfg, rng);
  const NamedMatrices mats = load_named_matrices(path);
  params.visit([&](const std::string& name, Matrix& m) {
    const Matrix& stored = find_matrix(mats, name);
    if (!stored.same_shape(m))
      throw std::runtime_error("checkpoint " + path + ": " + name + " is " +
                               stored.shape_str() + ", expected " + m.shape_str());
    m = stored;
  });
  return {std::move(params), cfg};
}

}  // namespace ocn
