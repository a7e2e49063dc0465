#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocn/autodiff.hpp"
#include "ocn/matrix.hpp"
#include "ocn/vsm.hpp"

namespace ocn {

/// Gated inter-modal calibration. Per head: a bottleneck gate computed from
/// the guiding modality multiplies a projection of the target modality; the
/// concatenated heads pass through a shared projection + LN + ReLU +
/// projection residual branch.
struct InterCParams {
  std::vector<Matrix> w_t1;  // H of (D/H x D/H)
  std::vector<Matrix> w_t2;  // H of (D/H x D)
  std::vector<Matrix> w_t3;  // H of (D/H x D)
  Matrix w_t4, w_t5;         // D x D
  Matrix ln_gain, ln_bias;   // 1 x D

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t h = 0; h < w_t1.size(); ++h) {
      const std::string hs = std::to_string(h);
      f(prefix + ".gate_in." + hs, w_t2[h]);
      f(prefix + ".gate_out." + hs, w_t1[h]);
      f(prefix + ".target_proj." + hs, w_t3[h]);
    }
    f(prefix + ".mix", w_t5);
    f(prefix + ".out", w_t4);
    f(prefix + ".ln_gain", ln_gain);
    f(prefix + ".ln_bias", ln_bias);
  }
};

/// Bilinear-attention intra-modal enhancement. Per head: f_ij = w . ((W_b1
/// y_i) o (W_b2 y_j)) scores attention over j; messages are W_b3 y_j. Heads
/// concatenate into a shared projection + LN + ReLU + projection residual.
struct IntraECParams {
  std::vector<Matrix> w;     // H of (1 x D)
  std::vector<Matrix> w_b1;  // H of (D x D)
  std::vector<Matrix> w_b2;  // H of (D x D)
  std::vector<Matrix> w_b3;  // H of (D/H x D)
  Matrix w_b4, w_b5;         // D x D
  Matrix ln_gain, ln_bias;   // 1 x D

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t h = 0; h < w.size(); ++h) {
      const std::string hs = std::to_string(h);
      f(prefix + ".score." + hs, w[h]);
      f(prefix + ".left." + hs, w_b1[h]);
      f(prefix + ".right." + hs, w_b2[h]);
      f(prefix + ".message." + hs, w_b3[h]);
    }
    f(prefix + ".mix", w_b5);
    f(prefix + ".out", w_b4);
    f(prefix + ".ln_gain", ln_gain);
    f(prefix + ".ln_bias", ln_bias);
  }
};

struct FusionParams {
  Matrix w_x, w_y;  // D x D

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w_x", w_x);
    f(prefix + ".w_y", w_y);
  }
};

inline void require_heads(std::size_t d, std::size_t heads, const char* op) {
  if (heads == 0 || d % heads != 0)
    throw std::invalid_argument(std::string(op) + ": D=" + std::to_string(d) +
                                " not divisible by H=" + std::to_string(heads));
}

inline InterCParams init_interc(std::size_t d, std::size_t heads, Rng& rng) {
  require_heads(d, heads, "init_interc");
  const std::size_t dh = d / heads;
  InterCParams p;
  for (std::size_t h = 0; h < heads; ++h) {
    p.w_t1.push_back(init_weight(dh, dh, rng));
    p.w_t2.push_back(init_weight(dh, d, rng));
    p.w_t3.push_back(init_weight(dh, d, rng));
  }
  p.w_t4 = init_weight(d, d, rng);
  p.w_t5 = init_weight(d, d, rng);
  p.ln_gain = Matrix(1, d, 1.0);
  p.ln_bias = Matrix(1, d);
  return p;
}

inline IntraECParams init_intraec(std::size_t d, std::size_t heads, Rng& rng) {
  require_heads(d, heads, "init_intraec");
  const std::size_t dh = d / heads;
  IntraECParams p;
  for (std::size_t h = 0; h < heads; ++h) {
    p.w.push_back(init_weight(1, d, rng));
    p.w_b1.push_back(init_weight(d, d, rng));
    p.w_b2.push_back(init_weight(d, d, rng));
    p.w_b3.push_back(init_weight(dh, d, rng));
  }
  p.w_b4 = init_weight(d, d, rng);
  p.w_b5 = init_weight(d, d, rng);
  p.ln_gain = Matrix(1, d, 1.0);
  p.ln_bias = Matrix(1, d);
  return p;
}

inline FusionParams init_fusion(std::size_t d, Rng& rng) {
  FusionParams p;
  p.w_x = init_weight(d, d, rng);
  p.w_y = init_weight(d, d, rng);
  return p;
}

struct InterCVars {
  std::vector<Var> w_t1, w_t2, w_t3;
  Var w_t4, w_t5, ln_gain, ln_bias;
};

struct IntraECVars {
  std::vector<Var> w, w_b1, w_b2, w_b3;
  Var w_b4, w_b5, ln_gain, ln_bias;
};

struct FusionVars {
  Var w_x, w_y;
};

/// Per head h: e^h = sigmoid(W_t1 ReLU(W_t2 guide)) o (W_t3 target);
/// output = target + W_t4 ReLU(LN(W_t5 Cat(e^1..e^H))).
inline Var inter_calibrate(Var guide, Var target, const InterCVars& p, std::size_t heads) {
  const Matrix& gv = guide.value();
  const Matrix& tv = target.value();
  if (!gv.same_shape(tv))
    throw std::invalid_argument("inter_calibrate: guide " + gv.shape_str() + " vs target " +
                                tv.shape_str());
  require_heads(gv.cols(), heads, "inter_calibrate");
  if (p.w_t1.size() != heads)
    throw std::invalid_argument("inter_calibrate: params carry " +
                                std::to_string(p.w_t1.size()) + " heads, asked for " +
                                std::to_string(heads));
  std::vector<Var> excited;
  for (std::size_t h = 0; h < heads; ++h) {
    Var gate = sigmoid(matmul(relu(matmul(guide, transpose(p.w_t2[h]))),
                              transpose(p.w_t1[h])));
    excited.push_back(hadamard(gate, matmul(target, transpose(p.w_t3[h]))));
  }
  Var mixed = matmul(concat_cols(excited), transpose(p.w_t5));
  Var branch = matmul(relu(layer_norm(mixed, p.ln_gain, p.ln_bias)), transpose(p.w_t4));
  return add(target, branch);
}

/// Per head h: f_ij = w . ((W_b1 y_i) o (W_b2 y_j)); f' = softmax_j;
/// g_i = sum_j f'_ij W_b3 y_j; output = y + W_b4 ReLU(LN(W_b5 Cat(g^1..g^H))).
inline Var intra_enhance(Var y, const IntraECVars& p, std::size_t heads) {
  const Matrix& yv = y.value();
  require_heads(yv.cols(), heads, "intra_enhance");
  if (p.w.size() != heads)
    throw std::invalid_argument("intra_enhance: params carry " + std::to_string(p.w.size()) +
                                " heads, asked for " + std::to_string(heads));
  const std::size_t n = yv.rows();
  std::vector<Var> messages;
  for (std::size_t h = 0; h < heads; ++h) {
    Var left = hadamard(matmul(y, transpose(p.w_b1[h])), repeat_rows(p.w[h], n));
    Var scores = matmul(left, transpose(matmul(y, transpose(p.w_b2[h]))));
    Var attn = softmax_rows(scores);  // N_q x N_q
    messages.push_back(matmul(attn, matmul(y, transpose(p.w_b3[h]))));
  }
  Var mixed = matmul(concat_cols(messages), transpose(p.w_b5));
  Var branch = matmul(relu(layer_norm(mixed, p.ln_gain, p.ln_bias)), transpose(p.w_b4));
  return add(y, branch);
}

/// z = sigmoid(W_x x_bar + W_y y_bar) - (W_x x_bar - W_y y_bar)^2.
inline Var fuse(Var x_bar, Var y_bar, const FusionVars& p) {
  if (!x_bar.value().same_shape(y_bar.value()))
    throw std::invalid_argument("fuse: " + x_bar.value().shape_str() + " vs " +
                                y_bar.value().shape_str());
  Var u = matmul(x_bar, transpose(p.w_x));
  Var v = matmul(y_bar, transpose(p.w_y));
  Var diff = sub(u, v);
  return sub(sigmoid(add(u, v)), hadamard(diff, diff));
}

}  // namespace ocn
