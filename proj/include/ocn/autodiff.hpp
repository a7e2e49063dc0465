#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ocn/matrix.hpp"

namespace ocn {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t idx) : tape_(tape), idx_(idx) {}
  Tape* tape() const { return tape_; }
  std::size_t idx() const { return idx_; }
  const Matrix& value() const;
  const Matrix& grad() const;
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t idx_ = 0;
};

/// Recorded computation graph, rebuilt per forward pass. Ops evaluate
/// eagerly; backward() runs the stored rules in reverse creation order,
/// which is a topological order since parents precede children.
class Tape {
 public:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> parents;
    std::function<void(Tape&, std::size_t)> backward;
    const char* op = "";
    bool touched = false;  // grad received any contribution this pass
  };

  Var leaf(Matrix value, const char* name = "leaf") {
    return make(std::move(value), {}, nullptr, name);
  }

  Var make(Matrix value, std::vector<std::size_t> parents,
           std::function<void(Tape&, std::size_t)> backward, const char* op) {
    if (!value.all_finite())
      throw std::runtime_error(std::string("non-finite result in op ") + op);
    Node n;
    n.grad = Matrix(value.rows(), value.cols());
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(backward);
    n.op = op;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Node& node(std::size_t i) { return nodes_[i]; }
  const Node& node(std::size_t i) const { return nodes_[i]; }
  std::size_t size() const { return nodes_.size(); }

  void accumulate(std::size_t idx, const Matrix& g) {
    Node& n = nodes_[idx];
    if (!n.grad.same_shape(g))
      throw std::logic_error(std::string("gradient shape mismatch at op ") + n.op);
    for (std::size_t k = 0; k < g.size(); ++k) n.grad.at(k) += g.at(k);
    n.touched = true;
  }

  void zero_grad() {
    for (Node& n : nodes_) {
      n.grad.fill(0.0);
      n.touched = false;
    }
  }

  /// Reverse pass from a scalar (1x1) node. Gradients accumulate; call
  /// zero_grad() between passes for fresh values.
  void backward(Var out) {
    if (out.tape() != this) throw std::invalid_argument("backward: var from another tape");
    Node& o = nodes_[out.idx()];
    if (o.value.rows() != 1 || o.value.cols() != 1)
      throw std::invalid_argument("backward: output must be 1x1, got " + o.value.shape_str());
    o.grad(0, 0) += 1.0;
    o.touched = true;
    for (std::size_t i = out.idx() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.touched && n.backward) n.backward(*this, i);
    }
  }

 private:
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->node(idx_).value; }
inline const Matrix& Var::grad() const { return tape_->node(idx_).grad; }
inline double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1)
    throw std::logic_error("scalar() on non-scalar node " + v.shape_str());
  return v(0, 0);
}

namespace detail {

inline void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape())
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

// Plain matrix products used by forward values and backward rules.
inline Matrix mm(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline Matrix mm_abt(const Matrix& a, const Matrix& b) {  // a * b^T
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  return c;
}

inline Matrix mm_atb(const Matrix& a, const Matrix& b) {  // a^T * b
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k)
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aki * b(k, j);
    }
  return c;
}

inline Matrix transposed(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b, "add");
  detail::require_same_shape(a.value(), b.value(), "add");
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.at(k) += b.value().at(k);
  std::size_t ia = a.idx(), ib = b.idx();
  return a.tape()->make(std::move(v), {ia, ib},
                        [ia, ib](Tape& t, std::size_t self) {
                          t.accumulate(ia, t.node(self).grad);
                          t.accumulate(ib, t.node(self).grad);
                        },
                        "add");
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape(a, b, "sub");
  detail::require_same_shape(a.value(), b.value(), "sub");
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.at(k) -= b.value().at(k);
  std::size_t ia = a.idx(), ib = b.idx();
  return a.tape()->make(std::move(v), {ia, ib},
                        [ia, ib](Tape& t, std::size_t self) {
                          const Matrix& g = t.node(self).grad;
                          t.accumulate(ia, g);
                          Matrix gb = g;
                          for (std::size_t k = 0; k < gb.size(); ++k) gb.at(k) = -gb.at(k);
                          t.accumulate(ib, gb);
                        },
                        "sub");
}

inline Var hadamard(Var a, Var b) {
  detail::require_same_tape(a, b, "hadamard");
  detail::require_same_shape(a.value(), b.value(), "hadamard");
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.at(k) *= b.value().at(k);
  std::size_t ia = a.idx(), ib = b.idx();
  return a.tape()->make(std::move(v), {ia, ib},
                        [ia, ib](Tape& t, std::size_t self) {
                          const Matrix& g = t.node(self).grad;
                          const Matrix& av = t.node(ia).value;
                          const Matrix& bv = t.node(ib).value;
                          Matrix ga = g, gb = g;
                          for (std::size_t k = 0; k < g.size(); ++k) {
                            ga.at(k) *= bv.at(k);
                            gb.at(k) *= av.at(k);
                          }
                          t.accumulate(ia, ga);
                          t.accumulate(ib, gb);
                        },
                        "hadamard");
}

/// Elementwise quotient; denominator entries must be nonzero.
inline Var div(Var a, Var b) {
  detail::require_same_tape(a, b, "div");
  detail::require_same_shape(a.value(), b.value(), "div");
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double d = b.value().at(k);
    if (d == 0.0) throw std::domain_error("div: zero denominator entry");
    v.at(k) /= d;
  }
  std::size_t ia = a.idx(), ib = b.idx();
  return a.tape()->make(std::move(v), {ia, ib},
                        [ia, ib](Tape& t, std::size_t self) {
                          const Matrix& g = t.node(self).grad;
                          const Matrix& av = t.node(ia).value;
                          const Matrix& bv = t.node(ib).value;
                          Matrix ga = g, gb = g;
                          for (std::size_t k = 0; k < g.size(); ++k) {
                            const double d = bv.at(k);
                            ga.at(k) /= d;
                            gb.at(k) *= -av.at(k) / (d * d);
                          }
                          t.accumulate(ia, ga);
                          t.accumulate(ib, gb);
                        },
                        "div");
}

/// Elementwise min; ties propagate the gradient to the first operand.
inline Var minimum(Var a, Var b) {
  detail::require_same_tape(a, b, "minimum");
  detail::require_same_shape(a.value(), b.value(), "minimum");
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.at(k) = std::min(v.at(k), b.value().at(k));
  std::size_t ia = a.idx(), ib = b.idx();
  return a.tape()->make(std::move(v), {ia, ib},
                        [ia, ib](Tape& t, std::size_t self) {
                          const Matrix& g = t.node(self).grad;
                          const Matrix& av = t.node(ia).value;
                          const Matrix& bv = t.node(ib).value;
                          Matrix ga = g, gb = g;
                          for (std::size_t k = 0; k < g.size(); ++k) {
                            const bool a_wins = av.at(k) <= bv.at(k);
                            ga.at(k) = a_wins ? g.at(k) : 0.0;
                            gb.at(k) = a_wins ? 0.0 : g.at(k);
                          }
                          t.accumulate(ia, ga);
                          t.accumulate(ib, gb);
                        },
                        "minimum");
}

inline Var maximum(Var a, Var b) {
  detail::require_same_tape(a, b, "maximum");
  detail::require_same_shape(a.value(), b.value(), "maximum");
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.at(k) = std::max(v.at(k), b.value().at(k));
  std::size_t ia = a.idx(), ib = b.idx();
  return a.tape()->make(std::move(v), {ia, ib},
                        [ia, ib](Tape& t, std::size_t self) {
                          const Matrix& g = t.node(self).grad;
                          const Matrix& av = t.node(ia).value;
                          const Matrix& bv = t.node(ib).value;
                          Matrix ga = g, gb = g;
                          for (std::size_t k = 0; k < g.size(); ++k) {
                            const bool a_wins = av.at(k) >= bv.at(k);
                            ga.at(k) = a_wins ? g.at(k) : 0.0;
                            gb.at(k) = a_wins ? 0.0 : g.at(k);
                          }
                          t.accumulate(ia, ga);
                          t.accumulate(ib, gb);
                        },
                        "maximum");
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw std::invalid_argument("matmul: inner dimensions disagree, " + av.shape_str() +
                                " x " + bv.shape_str());
  Matrix v = detail::mm(av, bv);
  std::size_t ia = a.idx(), ib = b.idx();
  return a.tape()->make(std::move(v), {ia, ib},
                        [ia, ib](Tape& t, std::size_t self) {
                          const Matrix& g = t.node(self).grad;
                          t.accumulate(ia, detail::mm_abt(g, t.node(ib).value));
                          t.accumulate(ib, detail::mm_atb(t.node(ia).value, g));
                        },
                        "matmul");
}

inline Var transpose(Var a) {
  std::size_t ia = a.idx();
  return a.tape()->make(detail::transposed(a.value()), {ia},
                        [ia](Tape& t, std::size_t self) {
                          t.accumulate(ia, detail::transposed(t.node(self).grad));
                        },
                        "transpose");
}

inline Var scale(Var a, double c) {
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.at(k) *= c;
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia, c](Tape& t, std::size_t self) {
                          Matrix g = t.node(self).grad;
                          for (std::size_t k = 0; k < g.size(); ++k) g.at(k) *= c;
                          t.accumulate(ia, g);
                        },
                        "scale");
}

inline Var add_scalar(Var a, double c) {
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.at(k) += c;
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia](Tape& t, std::size_t self) { t.accumulate(ia, t.node(self).grad); },
                        "add_scalar");
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  Tape* tape = parts[0].tape();
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> idxs, offsets;
  for (const Var& p : parts) {
    detail::require_same_tape(parts[0], p, "concat_cols");
    if (p.value().rows() != rows)
      throw std::invalid_argument("concat_cols: row counts disagree, " +
                                  parts[0].value().shape_str() + " vs " + p.value().shape_str());
    idxs.push_back(p.idx());
    offsets.push_back(cols);
    cols += p.value().cols();
  }
  Matrix v(rows, cols);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Matrix& pv = parts[p].value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) v(i, offsets[p] + j) = pv(i, j);
  }
  return tape->make(std::move(v), idxs,
                    [idxs, offsets, rows](Tape& t, std::size_t self) {
                      const Matrix& g = t.node(self).grad;
                      for (std::size_t p = 0; p < idxs.size(); ++p) {
                        const std::size_t w = t.node(idxs[p]).value.cols();
                        Matrix gp(rows, w);
                        for (std::size_t i = 0; i < rows; ++i)
                          for (std::size_t j = 0; j < w; ++j) gp(i, j) = g(i, offsets[p] + j);
                        t.accumulate(idxs[p], gp);
                      }
                    },
                    "concat_cols");
}

inline Var concat_cols(Var a, Var b) { return concat_cols(std::vector<Var>{a, b}); }

inline Var slice_cols(Var a, std::size_t start, std::size_t len) {
  const Matrix& av = a.value();
  if (start + len > av.cols())
    throw std::invalid_argument("slice_cols: [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") out of " + av.shape_str());
  Matrix v(av.rows(), len);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < len; ++j) v(i, j) = av(i, start + j);
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia, start, len](Tape& t, std::size_t self) {
                          const Matrix& g = t.node(self).grad;
                          const Matrix& av = t.node(ia).value;
                          Matrix ga(av.rows(), av.cols());
                          for (std::size_t i = 0; i < av.rows(); ++i)
                            for (std::size_t j = 0; j < len; ++j) ga(i, start + j) = g(i, j);
                          t.accumulate(ia, ga);
                        },
                        "slice_cols");
}

inline Var gather_rows(Var a, std::vector<std::size_t> rows) {
  const Matrix& av = a.value();
  for (std::size_t r : rows)
    if (r >= av.rows())
      throw std::out_of_range("gather_rows: row " + std::to_string(r) + " out of " +
                              av.shape_str());
  Matrix v(rows.size(), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) v(i, j) = av(rows[i], j);
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia, rows](Tape& t, std::size_t self) {
                          const Matrix& g = t.node(self).grad;
                          const Matrix& av = t.node(ia).value;
                          Matrix ga(av.rows(), av.cols());
                          for (std::size_t i = 0; i < rows.size(); ++i)
                            for (std::size_t j = 0; j < av.cols(); ++j)
                              ga(rows[i], j) += g(i, j);
                          t.accumulate(ia, ga);
                        },
                        "gather_rows");
}

/// Tile a 1 x C row vector into N x C.
inline Var repeat_rows(Var a, std::size_t n) {
  const Matrix& av = a.value();
  if (av.rows() != 1)
    throw std::invalid_argument("repeat_rows: expected 1-row input, got " + av.shape_str());
  Matrix v(n, av.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) v(i, j) = av(0, j);
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia](Tape& t, std::size_t self) {
                          const Matrix& g = t.node(self).grad;
                          Matrix ga(1, g.cols());
                          for (std::size_t i = 0; i < g.rows(); ++i)
                            for (std::size_t j = 0; j < g.cols(); ++j) ga(0, j) += g(i, j);
                          t.accumulate(ia, ga);
                        },
                        "repeat_rows");
}

/// Per-row sum, N x C -> N x 1.
inline Var sum_rows(Var a) {
  const Matrix& av = a.value();
  Matrix v(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) s += av(i, j);
    v(i, 0) = s;
  }
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia](Tape& t, std::size_t self) {
                          const Matrix& g = t.node(self).grad;
                          const Matrix& av = t.node(ia).value;
                          Matrix ga(av.rows(), av.cols());
                          for (std::size_t i = 0; i < av.rows(); ++i)
                            for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) = g(i, 0);
                          t.accumulate(ia, ga);
                        },
                        "sum_rows");
}

inline Var sum_all(Var a) {
  const Matrix& av = a.value();
  double s = 0.0;
  for (std::size_t k = 0; k < av.size(); ++k) s += av.at(k);
  Matrix v(1, 1);
  v(0, 0) = s;
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia](Tape& t, std::size_t self) {
                          const double g = t.node(self).grad(0, 0);
                          const Matrix& av = t.node(ia).value;
                          Matrix ga(av.rows(), av.cols(), g);
                          t.accumulate(ia, ga);
                        },
                        "sum_all");
}

inline Var mean_all(Var a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Divide every entry of a by the 1x1 node s.
inline Var div_scalar(Var a, Var s) {
  detail::require_same_tape(a, s, "div_scalar");
  const Matrix& sv = s.value();
  if (sv.rows() != 1 || sv.cols() != 1)
    throw std::invalid_argument("div_scalar: divisor must be 1x1, got " + sv.shape_str());
  const double d = sv(0, 0);
  if (d == 0.0) throw std::domain_error("div_scalar: zero divisor");
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.at(k) /= d;
  std::size_t ia = a.idx(), is = s.idx();
  return a.tape()->make(std::move(v), {ia, is},
                        [ia, is](Tape& t, std::size_t self) {
                          const Matrix& g = t.node(self).grad;
                          const Matrix& av = t.node(ia).value;
                          const double d = t.node(is).value(0, 0);
                          Matrix ga = g;
                          double gs = 0.0;
                          for (std::size_t k = 0; k < g.size(); ++k) {
                            ga.at(k) /= d;
                            gs -= g.at(k) * av.at(k) / (d * d);
                          }
                          t.accumulate(ia, ga);
                          Matrix gsm(1, 1);
                          gsm(0, 0) = gs;
                          t.accumulate(is, gsm);
                        },
                        "div_scalar");
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

inline Var relu(Var a) {
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.at(k) = std::max(0.0, v.at(k));
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia](Tape& t, std::size_t self) {
                          Matrix g = t.node(self).grad;
                          const Matrix& av = t.node(ia).value;
                          for (std::size_t k = 0; k < g.size(); ++k)
                            if (av.at(k) <= 0.0) g.at(k) = 0.0;
                          t.accumulate(ia, g);
                        },
                        "relu");
}

inline Var sigmoid(Var a) {
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double x = v.at(k);
    v.at(k) = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia](Tape& t, std::size_t self) {
                          Matrix g = t.node(self).grad;
                          const Matrix& y = t.node(self).value;
                          for (std::size_t k = 0; k < g.size(); ++k)
                            g.at(k) *= y.at(k) * (1.0 - y.at(k));
                          t.accumulate(ia, g);
                        },
                        "sigmoid");
}

inline Var exp_elem(Var a) {
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.at(k) = std::exp(v.at(k));
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia](Tape& t, std::size_t self) {
                          Matrix g = t.node(self).grad;
                          const Matrix& y = t.node(self).value;
                          for (std::size_t k = 0; k < g.size(); ++k) g.at(k) *= y.at(k);
                          t.accumulate(ia, g);
                        },
                        "exp");
}

inline Var log_elem(Var a) {
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (v.at(k) <= 0.0) throw std::domain_error("log: non-positive entry");
    v.at(k) = std::log(v.at(k));
  }
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia](Tape& t, std::size_t self) {
                          Matrix g = t.node(self).grad;
                          const Matrix& av = t.node(ia).value;
                          for (std::size_t k = 0; k < g.size(); ++k) g.at(k) /= av.at(k);
                          t.accumulate(ia, g);
                        },
                        "log");
}

inline Var abs_elem(Var a) {
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.at(k) = std::abs(v.at(k));
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia](Tape& t, std::size_t self) {
                          Matrix g = t.node(self).grad;
                          const Matrix& av = t.node(ia).value;
                          for (std::size_t k = 0; k < g.size(); ++k) {
                            const double x = av.at(k);
                            g.at(k) *= x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                          }
                          t.accumulate(ia, g);
                        },
                        "abs");
}

// ---------------------------------------------------------------------------
// Row-structured ops
// ---------------------------------------------------------------------------

/// Row-wise softmax with max subtraction. Safe for entries in [-700, 700].
inline Var softmax_rows(Var a) {
  const Matrix& av = a.value();
  Matrix v(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < av.cols(); ++j) mx = std::max(mx, av(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) {
      v(i, j) = std::exp(av(i, j) - mx);
      z += v(i, j);
    }
    for (std::size_t j = 0; j < av.cols(); ++j) v(i, j) /= z;
  }
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia](Tape& t, std::size_t self) {
                          const Matrix& g = t.node(self).grad;
                          const Matrix& y = t.node(self).value;
                          Matrix ga(g.rows(), g.cols());
                          for (std::size_t i = 0; i < g.rows(); ++i) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
                            for (std::size_t j = 0; j < g.cols(); ++j)
                              ga(i, j) = y(i, j) * (g(i, j) - dot);
                          }
                          t.accumulate(ia, ga);
                        },
                        "softmax_rows");
}

/// Scale each row to unit Euclidean norm. Rows with norm below 1e-12 are an
/// error: pretrained embeddings are never zero, so a zero row signals
/// upstream corruption.
inline Var l2_normalize_rows(Var a) {
  const Matrix& av = a.value();
  Matrix v(av.rows(), av.cols());
  std::vector<double> norms(av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) s += av(i, j) * av(i, j);
    const double n = std::sqrt(s);
    if (n < 1e-12)
      throw std::domain_error("l2_normalize_rows: degenerate row " + std::to_string(i) +
                              " with norm " + std::to_string(n));
    norms[i] = n;
    for (std::size_t j = 0; j < av.cols(); ++j) v(i, j) = av(i, j) / n;
  }
  std::size_t ia = a.idx();
  return a.tape()->make(std::move(v), {ia},
                        [ia, norms](Tape& t, std::size_t self) {
                          const Matrix& g = t.node(self).grad;
                          const Matrix& y = t.node(self).value;
                          Matrix ga(g.rows(), g.cols());
                          for (std::size_t i = 0; i < g.rows(); ++i) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
                            for (std::size_t j = 0; j < g.cols(); ++j)
                              ga(i, j) = (g(i, j) - y(i, j) * dot) / norms[i];
                          }
                          t.accumulate(ia, ga);
                        },
                        "l2_normalize_rows");
}

constexpr double kLayerNormEps = 1e-5;

/// Per-row standardization followed by the affine gain/bias, both 1 x cols.
inline Var layer_norm(Var a, Var gain, Var bias) {
  detail::require_same_tape(a, gain, "layer_norm");
  detail::require_same_tape(a, bias, "layer_norm");
  const Matrix& av = a.value();
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  if (gv.rows() != 1 || gv.cols() != av.cols() || bv.rows() != 1 || bv.cols() != av.cols())
    throw std::invalid_argument("layer_norm: gain/bias must be 1x" + std::to_string(av.cols()) +
                                ", got " + gv.shape_str() + " and " + bv.shape_str());
  const std::size_t C = av.cols();
  Matrix xhat(av.rows(), C);
  std::vector<double> inv_sigma(av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < C; ++j) mu += av(i, j);
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      const double d = av(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(C);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_sigma[i] = is;
    for (std::size_t j = 0; j < C; ++j) xhat(i, j) = (av(i, j) - mu) * is;
  }
  Matrix v(av.rows(), C);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < C; ++j) v(i, j) = gv(0, j) * xhat(i, j) + bv(0, j);
  std::size_t ia = a.idx(), ig = gain.idx(), ib = bias.idx();
  return a.tape()->make(
      std::move(v), {ia, ig, ib},
      [ia, ig, ib, xhat, inv_sigma](Tape& t, std::size_t self) {
        const Matrix& g = t.node(self).grad;
        const Matrix& gv = t.node(ig).value;
        const std::size_t C = g.cols();
        Matrix ga(g.rows(), C), ggain(1, C), gbias(1, C);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          double m1 = 0.0, m2 = 0.0;  // means of dxhat and dxhat*xhat
          for (std::size_t j = 0; j < C; ++j) {
            const double dxh = g(i, j) * gv(0, j);
            m1 += dxh;
            m2 += dxh * xhat(i, j);
            ggain(0, j) += g(i, j) * xhat(i, j);
            gbias(0, j) += g(i, j);
          }
          m1 /= static_cast<double>(C);
          m2 /= static_cast<double>(C);
          for (std::size_t j = 0; j < C; ++j) {
            const double dxh = g(i, j) * gv(0, j);
            ga(i, j) = inv_sigma[i] * (dxh - m1 - xhat(i, j) * m2);
          }
        }
        t.accumulate(ia, ga);
        t.accumulate(ig, ggain);
        t.accumulate(ib, gbias);
      },
      "layer_norm");
}

// ---------------------------------------------------------------------------
// Scalar losses
// ---------------------------------------------------------------------------

/// KL(p || q) = sum over entries with p > 0 of p (log p - log q), with the
/// 0 log 0 = 0 convention. p is fixed data; the gradient flows through q.
inline Var kl_div(const Matrix& p, Var q) {
  const Matrix& qv = q.value();
  detail::require_same_shape(p, qv, "kl_div");
  double loss = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double pk = p.at(k);
    if (pk <= 0.0) continue;
    const double qk = qv.at(k);
    if (qk <= 0.0)
      throw std::domain_error("kl_div: q must be positive on the support of p, entry " +
                              std::to_string(k));
    loss += pk * (std::log(pk) - std::log(qk));
  }
  Matrix v(1, 1);
  v(0, 0) = loss;
  std::size_t iq = q.idx();
  return q.tape()->make(std::move(v), {iq},
                        [iq, p](Tape& t, std::size_t self) {
                          const double g = t.node(self).grad(0, 0);
                          const Matrix& qv = t.node(iq).value;
                          Matrix gq(qv.rows(), qv.cols());
                          for (std::size_t k = 0; k < p.size(); ++k)
                            if (p.at(k) > 0.0) gq.at(k) = -g * p.at(k) / qv.at(k);
                          t.accumulate(iq, gq);
                        },
                        "kl_div");
}

/// Mean softmax cross-entropy against integer class targets, one per row.
inline Var softmax_xent(Var logits, std::vector<std::size_t> targets) {
  const Matrix& x = logits.value();
  if (targets.size() != x.rows())
    throw std::invalid_argument("softmax_xent: " + std::to_string(targets.size()) +
                                " targets for " + x.shape_str());
  for (std::size_t t : targets)
    if (t >= x.cols()) throw std::out_of_range("softmax_xent: target class out of range");
  double loss = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) z += std::exp(x(i, j) - mx);
    loss += mx + std::log(z) - x(i, targets[i]);
  }
  loss /= static_cast<double>(x.rows());
  Matrix v(1, 1);
  v(0, 0) = loss;
  std::size_t il = logits.idx();
  return logits.tape()->make(
      std::move(v), {il},
      [il, targets](Tape& t, std::size_t self) {
        const double g = t.node(self).grad(0, 0) / static_cast<double>(targets.size());
        const Matrix& x = t.node(il).value;
        Matrix gx(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
          double mx = x(i, 0);
          for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
          double z = 0.0;
          for (std::size_t j = 0; j < x.cols(); ++j) z += std::exp(x(i, j) - mx);
          for (std::size_t j = 0; j < x.cols(); ++j) {
            const double sm = std::exp(x(i, j) - mx) / z;
            gx(i, j) = g * (sm - (j == targets[i] ? 1.0 : 0.0));
          }
        }
        t.accumulate(il, gx);
      },
      "softmax_xent");
}

namespace detail {
inline double softplus(double x) {
  // log(1 + e^x) without overflow
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}
}  // namespace detail

/// Sigmoid focal loss against a binary target matrix, mean-reduced over all
/// entries. alpha < 0 disables the alpha weighting; gamma = 0 with alpha
/// disabled is plain binary cross-entropy.
inline Var focal_loss(Var logits, const Matrix& targets, double gamma = 2.0,
                      double alpha = 0.25) {
  const Matrix& x = logits.value();
  detail::require_same_shape(x, targets, "focal_loss");
  const double n = static_cast<double>(x.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double xk = x.at(k);
    const double p = 1.0 / (1.0 + std::exp(-xk));
    const double log_p = -detail::softplus(-xk);
    const double log_1mp = -detail::softplus(xk);
    if (targets.at(k) > 0.5) {
      const double at = alpha < 0.0 ? 1.0 : alpha;
      loss += -at * std::pow(1.0 - p, gamma) * log_p;
    } else {
      const double at = alpha < 0.0 ? 1.0 : 1.0 - alpha;
      loss += -at * std::pow(p, gamma) * log_1mp;
    }
  }
  Matrix v(1, 1);
  v(0, 0) = loss / n;
  std::size_t il = logits.idx();
  return logits.tape()->make(
      std::move(v), {il},
      [il, targets, gamma, alpha, n](Tape& t, std::size_t self) {
        const double g = t.node(self).grad(0, 0) / n;
        const Matrix& x = t.node(il).value;
        Matrix gx(x.rows(), x.cols());
        for (std::size_t k = 0; k < x.size(); ++k) {
          const double xk = x.at(k);
          const double p = 1.0 / (1.0 + std::exp(-xk));
          const double log_p = -detail::softplus(-xk);
          const double log_1mp = -detail::softplus(xk);
          double d;
          if (targets.at(k) > 0.5) {
            const double at = alpha < 0.0 ? 1.0 : alpha;
            d = at * (gamma * std::pow(1.0 - p, gamma) * p * log_p -
                      std::pow(1.0 - p, gamma + 1.0));
          } else {
            const double at = alpha < 0.0 ? 1.0 : 1.0 - alpha;
            d = at * (-gamma * std::pow(p, gamma) * (1.0 - p) * log_1mp +
                      std::pow(p, gamma + 1.0));
          }
          gx.at(k) = g * d;
        }
        t.accumulate(il, gx);
      },
      "focal_loss");
}

inline Var bce_loss(Var logits, const Matrix& targets) {
  return focal_loss(logits, targets, 0.0, -1.0);
}

// ---------------------------------------------------------------------------
// Compositions
// ---------------------------------------------------------------------------

/// x W^T + b for row-major features: x is N x In, w is Out x In, b is 1 x Out.
inline Var linear(Var x, Var w, Var b) {
  Var y = matmul(x, transpose(w));
  return add(y, repeat_rows(b, y.value().rows()));
}

}  // namespace ocn
