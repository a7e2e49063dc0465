#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocn/autodiff.hpp"
#include "ocn/matrix.hpp"
#include "ocn/rng.hpp"

namespace ocn {

/// Projections of the verb semantic model. Weights map D_p-dim embeddings
/// to D-dim; biases are rows, zero by default.
struct VsmParams {
  Matrix theta, phi;      // D x D_p query/key projections
  Matrix w_p1, w_p2;      // D x D_p value and residual projections
  Matrix b_theta, b_phi, b_p1, b_p2;  // 1 x D

  template <class F>
  void visit(F&& f) {
    f("vsm.theta", theta);
    f("vsm.phi", phi);
    f("vsm.w_p1", w_p1);
    f("vsm.w_p2", w_p2);
    f("vsm.b_theta", b_theta);
    f("vsm.b_phi", b_phi);
    f("vsm.b_p1", b_p1);
    f("vsm.b_p2", b_p2);
  }
};

inline Matrix init_weight(std::size_t out, std::size_t in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return rng.matrix_uniform(out, in, -bound, bound);
}

inline VsmParams init_vsm(std::size_t d_p, std::size_t d, Rng& rng) {
  VsmParams p;
  p.theta = init_weight(d, d_p, rng);
  p.phi = init_weight(d, d_p, rng);
  p.w_p1 = init_weight(d, d_p, rng);
  p.w_p2 = init_weight(d, d_p, rng);
  p.b_theta = Matrix(1, d);
  p.b_phi = Matrix(1, d);
  p.b_p1 = Matrix(1, d);
  p.b_p2 = Matrix(1, d);
  return p;
}

struct VsmVars {
  Var theta, phi, w_p1, w_p2, b_theta, b_phi, b_p1, b_p2;
};

/// Attention-style reasoning over verb embeddings:
///   r_ij = theta(p_i) . phi(p_j) / sqrt(D), r' = row-softmax(r),
///   p~_i = ReLU(sum_j r'_ij W_p1 p_j) + W_p2 p_i.
/// p: N_p x D_p with l2-normed rows; result N_p x D.
inline Var semantic_reasoning(Var p, const VsmVars& v) {
  const std::size_t d = v.theta.value().rows();
  Var q = linear(p, v.theta, v.b_theta);              // N_p x D
  Var k = linear(p, v.phi, v.b_phi);                  // N_p x D
  Var r = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  Var attn = softmax_rows(r);                         // N_p x N_p
  Var values = linear(p, v.w_p1, v.b_p1);             // N_p x D
  Var mixed = relu(matmul(attn, values));
  return add(mixed, linear(p, v.w_p2, v.b_p2));
}

/// Temperature-softmax adjacency over off-diagonal pairs of l2-normalized
/// rows: a_ij = exp(<p~_i, p~_j>/tau) / sum_{k != l} exp(<p~_k, p~_l>/tau),
/// diagonal exactly zero, off-diagonal entries sum to 1.
inline Var adjacency(Var p_tilde, double tau) {
  if (tau <= 0.0)
    throw std::invalid_argument("adjacency: tau must be positive, got " + std::to_string(tau));
  const std::size_t n = p_tilde.value().rows();
  if (n < 2)
    throw std::invalid_argument("adjacency: need at least 2 rows, got " +
                                p_tilde.value().shape_str());
  Var pn = l2_normalize_rows(p_tilde);
  Var sim = scale(matmul(pn, transpose(pn)), 1.0 / tau);
  // Shift by the max off-diagonal entry before exp. The shift is treated as
  // a constant, which leaves both the value and the gradient of the
  // normalized result exactly unchanged (softmax shift invariance).
  const Matrix& sv = sim.value();
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) shift = std::max(shift, sv(i, j));
  Var e = exp_elem(add_scalar(sim, -shift));
  Matrix off_diag(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) off_diag(i, i) = 0.0;
  Var masked = hadamard(e, p_tilde.tape()->leaf(off_diag, "offdiag_mask"));
  return div_scalar(masked, sum_all(masked));
}

/// KL(c_hat || a) over the off-diagonal support, 0 log 0 = 0.
inline Var skl_loss(const Matrix& c_hat, Var a) {
  return kl_div(c_hat, a);
}

/// Plain-value KL for monitoring, same convention as skl_loss.
inline double skl_value(const Matrix& c_hat, const Matrix& a) {
  if (!c_hat.same_shape(a))
    throw std::invalid_argument("skl_value: shape mismatch " + c_hat.shape_str() + " vs " +
                                a.shape_str());
  double loss = 0.0;
  for (std::size_t k = 0; k < c_hat.size(); ++k) {
    const double p = c_hat.at(k);
    if (p <= 0.0) continue;
    if (a.at(k) <= 0.0)
      throw std::domain_error("skl_value: zero adjacency entry on the support");
    loss += p * (std::log(p) - std::log(a.at(k)));
  }
  return loss;
}

/// p_bar_i = sum_j s_hat[idx_i][j] p~_j: rows of the smoothed object-verb
/// prior select a convex combination of projected verb embeddings. Indices
/// come from the hard object-class argmax; no gradient flows through them.
inline Var aggregate(const std::vector<std::size_t>& object_indices, const Matrix& s_hat,
                     Var p_tilde) {
  if (s_hat.cols() != p_tilde.value().rows())
    throw std::invalid_argument("aggregate: prior cols " + s_hat.shape_str() +
                                " vs embeddings " + p_tilde.value().shape_str());
  Matrix weights(object_indices.size(), s_hat.cols());
  for (std::size_t i = 0; i < object_indices.size(); ++i) {
    const std::size_t idx = object_indices[i];
    if (idx >= s_hat.rows())
      throw std::out_of_range("aggregate: object index " + std::to_string(idx) +
                              " out of range for " + s_hat.shape_str());
    for (std::size_t j = 0; j < s_hat.cols(); ++j) weights(i, j) = s_hat(idx, j);
  }
  return matmul(p_tilde.tape()->leaf(weights, "aggregate_weights"), p_tilde);
}

/// Row argmax with ties broken toward the lowest index.
inline std::vector<std::size_t> predict_object_class(const Matrix& query_logits) {
  std::vector<std::size_t> out(query_logits.rows());
  for (std::size_t i = 0; i < query_logits.rows(); ++i) out[i] = argmax_row(query_logits, i);
  return out;
}

/// GloVe-style embedding file: one line per verb, name then D_p reals.
/// Rows are l2-normalized on load; order must match the vocabulary.
inline Matrix load_embeddings(const std::string& path, const std::vector<std::string>& names) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0, d_p = 0;
  std::size_t next = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string name;
    ss >> name;
    if (next >= names.size())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": extra row '" + name +
                               "'");
    if (name != names[next])
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected '" +
                               names[next] + "', got '" + name + "'");
    std::vector<double> vals;
    double x;
    while (ss >> x) vals.push_back(x);
    if (vals.empty())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": no values");
    if (d_p == 0) d_p = vals.size();
    if (vals.size() != d_p)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(d_p) + " values, got " +
                               std::to_string(vals.size()));
    rows.push_back(std::move(vals));
    ++next;
  }
  if (next != names.size())
    throw std::runtime_error(path + ": expected " + std::to_string(names.size()) +
                             " rows, got " + std::to_string(next));
  Matrix m(rows.size(), d_p);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double norm = 0.0;
    for (double x : rows[i]) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-12)
      throw std::runtime_error(path + ": zero embedding row " + std::to_string(i));
    for (std::size_t j = 0; j < d_p; ++j) m(i, j) = rows[i][j] / norm;
  }
  return m;
}

}  // namespace ocn
