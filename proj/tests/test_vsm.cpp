#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ocn/gradcheck.hpp"
#include "ocn/rng.hpp"
#include "ocn/vsm.hpp"
#include "oracles.hpp"

using namespace ocn;
using Catch::Approx;

namespace {

VsmVars bind(Tape& t, VsmParams& p) {
  return VsmVars{t.leaf(p.theta),   t.leaf(p.phi),   t.leaf(p.w_p1), t.leaf(p.w_p2),
                 t.leaf(p.b_theta), t.leaf(p.b_phi), t.leaf(p.b_p1), t.leaf(p.b_p2)};
}

}  // namespace

TEST_CASE("semantic reasoning matches the element-by-element transcription") {
  Rng rng(21);
  VsmParams params = init_vsm(5, 8, rng);
  const Matrix p = rng.matrix_normal(6, 5);
  Tape t;
  const Matrix got = semantic_reasoning(t.leaf(p), bind(t, params)).value();
  const Matrix want = oracle::semantic_reasoning(p, params);
  REQUIRE(got.same_shape(want));
  REQUIRE(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("weight init stays within the fan-in bound") {
  Rng rng(3);
  const Matrix w = init_weight(7, 16, rng);
  for (std::size_t k = 0; k < w.size(); ++k) REQUIRE(std::abs(w.at(k)) <= 0.25);
}

TEST_CASE("adjacency of identical rows is uniform off the diagonal") {
  Tape t;
  Matrix p(4, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    p(i, 0) = 1.0;
    p(i, 1) = 2.0;
    p(i, 2) = -1.0;
  }
  const Matrix a = adjacency(t.leaf(p), 0.2).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      if (i == j)
        REQUIRE(a(i, j) == 0.0);
      else
        REQUIRE(a(i, j) == Approx(1.0 / 12.0).epsilon(1e-12));
    }
}

TEST_CASE("adjacency with two rows puts a half on each side") {
  Tape t;
  Rng rng(4);
  const Matrix p = rng.matrix_normal(2, 5);
  const Matrix a = adjacency(t.leaf(p), 0.05).value();
  REQUIRE(a(0, 1) == Approx(0.5).epsilon(1e-12));
  REQUIRE(a(1, 0) == Approx(0.5).epsilon(1e-12));
  REQUIRE(a(0, 0) == 0.0);
}

TEST_CASE("adjacency ignores row scale") {
  Rng rng(5);
  const Matrix p = rng.matrix_normal(5, 4);
  Matrix scaled = p;
  for (std::size_t i = 0; i < scaled.rows(); ++i)
    for (std::size_t j = 0; j < scaled.cols(); ++j) scaled(i, j) *= 3.7;
  Tape t;
  const Matrix a = adjacency(t.leaf(p), 0.3).value();
  const Matrix b = adjacency(t.leaf(scaled), 0.3).value();
  REQUIRE(max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("adjacency matches the oracle and survives a harsh temperature") {
  Rng rng(6);
  const Matrix p = rng.matrix_normal(6, 8);
  Tape t;
  const Matrix got = adjacency(t.leaf(p), 0.05).value();
  const Matrix want = oracle::adjacency(p, 0.05);
  REQUIRE(max_abs_diff(got, want) < 1e-12);
  double total = 0.0;
  for (std::size_t k = 0; k < got.size(); ++k) total += got.at(k);
  REQUIRE(total == Approx(1.0).margin(1e-9));
  REQUIRE_THROWS_AS(adjacency(t.leaf(p), 0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(adjacency(t.leaf(Matrix(1, 4, 1.0)), 0.1), std::invalid_argument);
}

TEST_CASE("adjacency-with-loss gradient survives the constant shift") {
  Rng rng(7);
  const Matrix p = rng.matrix_normal(4, 3);
  const Matrix c_hat = [&] {
    Matrix m(4, 4);
    double tot = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        if (i != j) tot += m(i, j) = 0.1 + rng.uniform();
    for (std::size_t k = 0; k < m.size(); ++k) m.at(k) /= tot;
    return m;
  }();
  const GradCheckResult r = grad_check(
      [&](Tape&, const std::vector<Var>& vars) {
        return skl_loss(c_hat, adjacency(vars[0], 0.07));
      },
      {p});
  REQUIRE(r.max_rel_err < 1e-5);
}

TEST_CASE("skl on the two-pair toy distribution") {
  const Matrix c_hat = Matrix::from_rows({{0.0, 0.5}, {0.5, 0.0}});
  const Matrix a = Matrix::from_rows({{0.0, 0.25}, {0.75, 0.0}});
  const double expect = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  REQUIRE(skl_value(c_hat, a) == Approx(expect).epsilon(1e-9));
  REQUIRE(skl_value(c_hat, a) == Approx(0.143841).margin(1e-5));
  Tape t;
  REQUIRE(skl_loss(c_hat, t.leaf(a)).scalar() == Approx(expect).epsilon(1e-12));
}

TEST_CASE("skl is zero on itself and nonnegative across random pairs") {
  Rng rng(8);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 3 + rng.index(4);
    auto dist = [&] {
      Matrix m(n, n);
      double tot = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (i != j) tot += m(i, j) = 0.05 + rng.uniform();
      for (std::size_t k = 0; k < m.size(); ++k) m.at(k) /= tot;
      return m;
    };
    const Matrix p = dist(), q = dist();
    REQUIRE(skl_value(p, p) < 1e-12);
    REQUIRE(skl_value(p, q) >= 0.0);
  }
}

TEST_CASE("aggregation picks rows by prior weights") {
  Tape t;
  const Matrix p_tilde = Matrix::from_rows({{1.0, 2.0}, {10.0, 20.0}, {100.0, 200.0}});
  // Indicator prior selects one embedding row exactly.
  const Matrix s_hat = Matrix::from_rows(
      {{0.0, 1.0, 0.0}, {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}});
  const Matrix out = aggregate({0, 1, 0}, s_hat, t.leaf(p_tilde)).value();
  REQUIRE(out.rows() == 3);
  REQUIRE(out(0, 0) == 10.0);
  REQUIRE(out(0, 1) == 20.0);
  // Uniform row (the background convention) averages the embeddings.
  REQUIRE(out(1, 0) == Approx(111.0 / 3.0).epsilon(1e-12));
  REQUIRE(out(1, 1) == Approx(222.0 / 3.0).epsilon(1e-12));
  REQUIRE(out(2, 0) == 10.0);
  REQUIRE_THROWS_AS(aggregate({5}, s_hat, t.leaf(p_tilde)), std::out_of_range);
}

TEST_CASE("object class prediction takes the row argmax, ties to lowest") {
  const Matrix logits = Matrix::from_rows({{0.1, 0.9, 0.3}, {2.0, 2.0, -1.0}});
  const std::vector<std::size_t> got = predict_object_class(logits);
  REQUIRE(got == std::vector<std::size_t>{1, 0});
}

TEST_CASE("embedding file loads in vocabulary order with unit rows") {
  const std::string path = "vsm_embeddings.txt";
  {
    std::ofstream f(path);
    f << "ride 3 4\n";
    f << "hold 0 2\n";
  }
  const Matrix e = load_embeddings(path, {"ride", "hold"});
  REQUIRE(e.rows() == 2);
  REQUIRE(e(0, 0) == Approx(0.6).epsilon(1e-12));
  REQUIRE(e(0, 1) == Approx(0.8).epsilon(1e-12));
  REQUIRE(e(1, 1) == Approx(1.0).epsilon(1e-12));

  REQUIRE_THROWS_AS(load_embeddings(path, {"hold", "ride"}), std::runtime_error);
  {
    std::ofstream f(path);
    f << "ride 0 0\n";
    f << "hold 0 2\n";
  }
  REQUIRE_THROWS_AS(load_embeddings(path, {"ride", "hold"}), std::runtime_error);
  std::filesystem::remove(path);
}
