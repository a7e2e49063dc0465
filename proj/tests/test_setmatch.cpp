#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ocn/gradcheck.hpp"
#include "ocn/hungarian.hpp"
#include "ocn/rng.hpp"
#include "ocn/setmatch.hpp"
#include "oracles.hpp"

using namespace ocn;
using Catch::Approx;

TEST_CASE("center-size to corners") {
  const Box b = cxcywh_to_xyxy(0.5, 0.5, 0.2, 0.4);
  REQUIRE(b.x1 == Approx(0.4).epsilon(1e-15));
  REQUIRE(b.y1 == Approx(0.3).epsilon(1e-15));
  REQUIRE(b.x2 == Approx(0.6).epsilon(1e-15));
  REQUIRE(b.y2 == Approx(0.7).epsilon(1e-15));
}

TEST_CASE("iou and giou on hand geometry") {
  const Box a{0.0, 0.0, 1.0, 1.0};
  REQUIRE(iou(a, a) == 1.0);
  REQUIRE(giou(a, a) == 1.0);

  const Box apart{2.0, 0.0, 3.0, 1.0};
  REQUIRE(iou(a, apart) == 0.0);
  REQUIRE(giou(a, apart) == Approx(-1.0 / 3.0).epsilon(1e-12));

  const Box far{100.0, 0.0, 101.0, 1.0};
  REQUIRE(giou(a, far) < -0.97);
  REQUIRE(giou(a, far) > -1.0);

  const Box degenerate{0.5, 0.5, 0.5, 0.9};
  REQUIRE(iou(a, degenerate) == 0.0);
  REQUIRE_THROWS_AS(giou(a, degenerate), std::domain_error);
  REQUIRE_THROWS_AS(giou(degenerate, a), std::domain_error);
}

TEST_CASE("giou column matches the scalar oracle row by row") {
  Rng rng(31);
  Tape t;
  Matrix pred(5, 4), gt(5, 4);
  for (std::size_t i = 0; i < 5; ++i) {
    pred(i, 0) = rng.uniform(0.0, 0.5);
    pred(i, 1) = rng.uniform(0.0, 0.5);
    pred(i, 2) = pred(i, 0) + rng.uniform(0.1, 0.5);
    pred(i, 3) = pred(i, 1) + rng.uniform(0.1, 0.5);
    gt(i, 0) = rng.uniform(0.0, 0.5);
    gt(i, 1) = rng.uniform(0.0, 0.5);
    gt(i, 2) = gt(i, 0) + rng.uniform(0.1, 0.5);
    gt(i, 3) = gt(i, 1) + rng.uniform(0.1, 0.5);
  }
  const Matrix col = giou_rows(t.leaf(pred), gt).value();
  for (std::size_t i = 0; i < 5; ++i) {
    const Box p{pred(i, 0), pred(i, 1), pred(i, 2), pred(i, 3)};
    const Box g{gt(i, 0), gt(i, 1), gt(i, 2), gt(i, 3)};
    REQUIRE(col(i, 0) == Approx(oracle::giou(p, g)).margin(1e-12));
    REQUIRE(col(i, 0) == Approx(giou(p, g)).margin(1e-12));
  }
  Matrix bad = pred;
  bad(0, 2) = bad(0, 0);
  REQUIRE_THROWS_AS(giou_rows(t.leaf(bad), gt), std::domain_error);
}

TEST_CASE("corner decomposition round-trips through the tape") {
  Rng rng(32);
  Tape t;
  Matrix cs(3, 4);
  for (std::size_t i = 0; i < 3; ++i) {
    cs(i, 0) = rng.uniform(0.3, 0.7);
    cs(i, 1) = rng.uniform(0.3, 0.7);
    cs(i, 2) = rng.uniform(0.1, 0.4);
    cs(i, 3) = rng.uniform(0.1, 0.4);
  }
  const Matrix corners = boxes_to_corners(t.leaf(cs)).value();
  for (std::size_t i = 0; i < 3; ++i) {
    const Box b = cxcywh_to_xyxy(cs(i, 0), cs(i, 1), cs(i, 2), cs(i, 3));
    REQUIRE(corners(i, 0) == Approx(b.x1).margin(1e-15));
    REQUIRE(corners(i, 1) == Approx(b.y1).margin(1e-15));
    REQUIRE(corners(i, 2) == Approx(b.x2).margin(1e-15));
    REQUIRE(corners(i, 3) == Approx(b.y2).margin(1e-15));
  }
}

TEST_CASE("assignment on two hand matrices") {
  const MatchResult a = hungarian(Matrix::from_rows({{1.0, 2.0}, {2.0, 1.0}}));
  REQUIRE(a.assignment == std::vector<std::size_t>{0, 1});
  REQUIRE(a.total_cost == 2.0);
  const MatchResult b = hungarian(Matrix::from_rows({{2.0, 1.0}, {1.0, 2.0}}));
  REQUIRE(b.assignment == std::vector<std::size_t>{1, 0});
  REQUIRE(b.total_cost == 2.0);
}

TEST_CASE("assignment breaks ties lexicographically") {
  // Every assignment costs 2: the row-0-first, lowest-column choice wins.
  const MatchResult r = hungarian(Matrix(2, 3, 1.0));
  REQUIRE(r.assignment == std::vector<std::size_t>{0, 1});
  const auto [oracle_assign, oracle_total] = oracle::brute_assignment(Matrix(2, 3, 1.0));
  REQUIRE(r.assignment == oracle_assign);
  REQUIRE(r.total_cost == oracle_total);
}

TEST_CASE("assignment agrees with exhaustive search, values and order") {
  Rng rng(33);
  for (int rep = 0; rep < 40; ++rep) {
    const std::size_t n = 1 + rng.index(5);
    const std::size_t m = n + rng.index(4);
    Matrix cost(n, m);
    for (std::size_t k = 0; k < cost.size(); ++k)
      cost.at(k) = rep % 2 == 0
                       ? static_cast<double>(rng.index(8)) / 8.0  // ties likely
                       : rng.uniform(0.0, 2.0);
    const MatchResult got = hungarian(cost);
    const auto [want_assign, want_total] = oracle::brute_assignment(cost);
    REQUIRE(got.total_cost == want_total);
    REQUIRE(got.assignment == want_assign);
  }
}

TEST_CASE("assignment input validation") {
  REQUIRE_THROWS_AS(hungarian(Matrix(0, 0)), std::invalid_argument);
  REQUIRE_THROWS_AS(hungarian(Matrix(3, 2)), std::invalid_argument);
  Matrix nan_cost(2, 2, 1.0);
  nan_cost(0, 0) = std::nan("");
  REQUIRE_THROWS_AS(hungarian(nan_cost), std::invalid_argument);
}

namespace {

Triplet gt_triplet() {
  Triplet g;
  g.human = Box{0.1, 0.2, 0.5, 0.8};
  g.object = Box{0.4, 0.3, 0.9, 0.7};
  g.object_class = 1;
  g.verbs = {0, 2};
  return g;
}

// Query row that reproduces a triplet exactly in center-size form.
void write_perfect_box(Matrix& boxes, std::size_t q, const Triplet& g) {
  boxes(q, 0) = (g.human.x1 + g.human.x2) / 2.0;
  boxes(q, 1) = (g.human.y1 + g.human.y2) / 2.0;
  boxes(q, 2) = g.human.x2 - g.human.x1;
  boxes(q, 3) = g.human.y2 - g.human.y1;
  boxes(q, 4) = (g.object.x1 + g.object.x2) / 2.0;
  boxes(q, 5) = (g.object.y1 + g.object.y2) / 2.0;
  boxes(q, 6) = g.object.x2 - g.object.x1;
  boxes(q, 7) = g.object.y2 - g.object.y1;
}

}  // namespace

TEST_CASE("matching cost of a perfect prediction is numerically zero") {
  const Triplet g = gt_triplet();
  Matrix boxes(2, 8, 0.4);
  boxes(1, 2) = boxes(1, 3) = boxes(1, 6) = boxes(1, 7) = 0.2;
  write_perfect_box(boxes, 0, g);
  Matrix obj_logits(2, 4, 0.0);
  obj_logits(0, 1) = 40.0;  // confident correct class on query 0
  Matrix verb_logits(2, 3, -40.0);
  verb_logits(0, 0) = 40.0;
  verb_logits(0, 2) = 40.0;
  const Matrix cost = matching_cost({g}, boxes, obj_logits, verb_logits);
  REQUIRE(cost.rows() == 1);
  REQUIRE(cost(0, 0) < 1e-6);
  REQUIRE(cost(0, 1) > 0.5);
}

TEST_CASE("matching cost matches a hand transcription") {
  Rng rng(34);
  const Triplet g = gt_triplet();
  Matrix boxes(3, 8);
  for (std::size_t k = 0; k < boxes.size(); ++k) boxes.at(k) = rng.uniform(0.2, 0.6);
  const Matrix obj_logits = rng.matrix_uniform(3, 4, -1.0, 1.0);
  const Matrix verb_logits = rng.matrix_uniform(3, 3, -1.0, 1.0);
  MatchWeights w;
  w.obj = 0.7;
  w.verb = 1.3;
  w.box = 2.0;
  w.giou = 0.9;
  const Matrix cost = matching_cost({g}, boxes, obj_logits, verb_logits, w);
  for (std::size_t q = 0; q < 3; ++q) {
    const std::vector<double> probs = oracle::softmax(oracle::row_of(obj_logits, q));
    double verb_term = 0.0;
    for (std::size_t v : g.verbs)
      verb_term += 1.0 - oracle::sigmoid(verb_logits(q, v));
    verb_term /= 2.0;
    const Box ph = cxcywh_to_xyxy(boxes(q, 0), boxes(q, 1), boxes(q, 2), boxes(q, 3));
    const Box po = cxcywh_to_xyxy(boxes(q, 4), boxes(q, 5), boxes(q, 6), boxes(q, 7));
    double l1 = std::abs(boxes(q, 0) - 0.3) + std::abs(boxes(q, 1) - 0.5) +
                std::abs(boxes(q, 2) - 0.4) + std::abs(boxes(q, 3) - 0.6) +
                std::abs(boxes(q, 4) - 0.65) + std::abs(boxes(q, 5) - 0.5) +
                std::abs(boxes(q, 6) - 0.5) + std::abs(boxes(q, 7) - 0.4);
    const double want = w.obj * (1.0 - probs[1]) + w.verb * verb_term + w.box * l1 +
                        w.giou * (2.0 - oracle::giou(ph, g.human) - oracle::giou(po, g.object));
    REQUIRE(cost(0, q) == Approx(want).margin(1e-12));
  }
}

namespace {

QueryOutputs make_outputs(Tape& t, const Matrix& boxes_raw, const Matrix& obj_logits,
                          const Matrix& verb_logits) {
  QueryOutputs out;
  out.boxes = sigmoid(t.leaf(boxes_raw));
  out.obj_logits = t.leaf(obj_logits);
  out.verb_logits = t.leaf(verb_logits);
  return out;
}

}  // namespace

TEST_CASE("set loss with no ground truth is pure background classification") {
  Rng rng(35);
  Tape t;
  QueryOutputs out = make_outputs(t, rng.matrix_uniform(4, 8, -1.0, 1.0),
                                  rng.matrix_uniform(4, 3, -1.0, 1.0),
                                  rng.matrix_uniform(4, 2, -1.0, 1.0));
  const ImageLoss il = set_loss(out, {}, 2, LossWeights{});
  REQUIRE(il.box == 0.0);
  REQUIRE(il.giou == 0.0);
  REQUIRE(il.verb == 0.0);
  REQUIRE(il.obj > 0.0);
  // Only the weighted classification term remains.
  Tape t2;
  QueryOutputs out2 = make_outputs(t2, out.boxes.value(), out.obj_logits.value(),
                                   out.verb_logits.value());
  Var xent = softmax_xent(out2.obj_logits, {2, 2, 2, 2});
  REQUIRE(il.obj == Approx(xent.scalar()).epsilon(1e-12));
  REQUIRE(il.total.scalar() == Approx(xent.scalar()).epsilon(1e-12));
}

TEST_CASE("one-hot loss weights isolate single terms") {
  Rng rng(36);
  std::vector<Triplet> gts{gt_triplet()};
  struct Scalars {
    double total, box, giou, obj, verb;
  };
  auto run = [&](LossWeights lw) {
    Tape t;
    Rng local(36);
    QueryOutputs out = make_outputs(t, local.matrix_uniform(4, 8, -1.0, 1.0),
                                    local.matrix_uniform(4, 4, -1.0, 1.0),
                                    local.matrix_uniform(4, 3, -1.0, 1.0));
    const ImageLoss il = set_loss(out, gts, 3, lw);
    return Scalars{il.total.scalar(), il.box, il.giou, il.obj, il.verb};
  };
  const Scalars ref = run(LossWeights{});
  LossWeights only_box{};
  only_box.skl = only_box.giou = only_box.obj = only_box.verb = 0.0;
  only_box.box = 1.0;
  REQUIRE(run(only_box).total == Approx(ref.box).epsilon(1e-12));
  LossWeights only_giou{};
  only_giou.skl = only_giou.box = only_giou.obj = only_giou.verb = 0.0;
  only_giou.giou = 1.0;
  REQUIRE(run(only_giou).total == Approx(ref.giou).epsilon(1e-12));
  LossWeights weighted{};
  weighted.skl = 0.0;
  weighted.box = 2.5;
  weighted.giou = 1.0;
  weighted.obj = 1.0;
  weighted.verb = 1.0;
  REQUIRE(run(weighted).total ==
          Approx(2.5 * ref.box + ref.giou + ref.obj + ref.verb).epsilon(1e-12));
}

TEST_CASE("set loss rejects more ground truth than queries") {
  Rng rng(37);
  Tape t;
  QueryOutputs out = make_outputs(t, rng.matrix_uniform(1, 8, -1.0, 1.0),
                                  rng.matrix_uniform(1, 4, -1.0, 1.0),
                                  rng.matrix_uniform(1, 3, -1.0, 1.0));
  const std::vector<Triplet> gts{gt_triplet(), gt_triplet()};
  REQUIRE_THROWS_AS(set_loss(out, gts, 3, LossWeights{}), std::invalid_argument);
}

TEST_CASE("a perfect prediction drives every loss term near zero") {
  const Triplet g = gt_triplet();
  Tape t;
  QueryOutputs out;
  Matrix boxes(2, 8, 0.3);
  write_perfect_box(boxes, 0, g);
  out.boxes = t.leaf(boxes);
  Matrix obj_logits(2, 4, -40.0);
  obj_logits(0, 1) = 40.0;
  obj_logits(1, 3) = 40.0;  // query 1 confidently background
  out.obj_logits = t.leaf(obj_logits);
  Matrix verb_logits(2, 3, -40.0);
  verb_logits(0, 0) = 40.0;
  verb_logits(0, 2) = 40.0;
  out.verb_logits = t.leaf(verb_logits);
  const ImageLoss il = set_loss(out, {g}, 3, LossWeights{});
  REQUIRE(il.match.assignment[0] == 0);
  REQUIRE(il.box < 1e-9);
  REQUIRE(il.giou < 1e-9);
  REQUIRE(il.obj < 1e-9);
  REQUIRE(il.verb < 1e-9);
  REQUIRE(il.total.scalar() < 1e-6);
}

TEST_CASE("set loss gradient survives matching and argmax discontinuities only by margin") {
  Rng rng(38);
  const Matrix boxes_raw = rng.matrix_uniform(4, 8, -1.0, 1.0);
  const Matrix obj_logits = rng.matrix_uniform(4, 4, -1.5, 1.5);
  const Matrix verb_logits = rng.matrix_uniform(4, 3, -1.5, 1.5);
  std::vector<Triplet> gts{gt_triplet()};
  Triplet second = gt_triplet();
  second.object_class = 0;
  second.verbs = {1};
  gts.push_back(second);
  const GradCheckResult r = grad_check(
      [&](Tape&, const std::vector<Var>& p) {
        QueryOutputs out;
        out.boxes = sigmoid(p[0]);
        out.obj_logits = p[1];
        out.verb_logits = p[2];
        return set_loss(out, gts, 3, LossWeights{}).total;
      },
      {boxes_raw, obj_logits, verb_logits});
  REQUIRE(r.max_rel_err < 1e-4);
}
