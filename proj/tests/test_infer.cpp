#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ocn/infer.hpp"
#include "ocn/rng.hpp"
#include "oracles.hpp"

using namespace ocn;
using Catch::Approx;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("infer_tmp_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

Matrix flat_boxes(std::size_t n_q) {
  Matrix boxes(n_q, 8);
  for (std::size_t q = 0; q < n_q; ++q) {
    boxes(q, 0) = 0.3;
    boxes(q, 1) = 0.4;
    boxes(q, 2) = 0.2;
    boxes(q, 3) = 0.2;
    boxes(q, 4) = 0.6;
    boxes(q, 5) = 0.5;
    boxes(q, 6) = 0.3;
    boxes(q, 7) = 0.4;
  }
  return boxes;
}

}  // namespace

TEST_CASE("score composition multiplies object and verb confidences") {
  // Query 0: certain class 0. Query 1: class 1 with prob ~0.4.
  Matrix obj_logits(2, 3, 0.0);
  obj_logits(0, 0) = 50.0;
  obj_logits(1, 1) = std::log(2.0);  // softmax over {0, ln2, 0} -> 0.5 at class 1
  Matrix verb_logits(2, 2, 0.0);
  verb_logits(0, 1) = std::log(4.0);  // sigmoid -> 0.8
  const auto scored = compose_scores(flat_boxes(2), obj_logits, verb_logits);
  REQUIRE(scored.size() == 2);
  REQUIRE(scored[0].object_class == 0);
  REQUIRE(scored[0].object_score == Approx(1.0).margin(1e-12));
  REQUIRE(scored[0].verb_scores[0] == Approx(0.5).margin(1e-12));
  REQUIRE(scored[0].verb_scores[1] == Approx(0.8).margin(1e-12));
  REQUIRE(scored[1].object_class == 1);
  REQUIRE(scored[1].object_score == Approx(0.5).margin(1e-12));
  REQUIRE(scored[1].verb_scores[0] == Approx(0.25).margin(1e-12));
  // Boxes converted to corners.
  REQUIRE(scored[0].human.x1 == Approx(0.2).margin(1e-15));
  REQUIRE(scored[0].human.x2 == Approx(0.4).margin(1e-15));
  REQUIRE(scored[0].object.y1 == Approx(0.3).margin(1e-15));
}

TEST_CASE("background-heavy queries keep their best real class") {
  Matrix obj_logits(1, 3, 0.0);
  obj_logits(0, 2) = 10.0;  // background dominates
  obj_logits(0, 1) = 1.0;
  const auto scored = compose_scores(flat_boxes(1), Matrix(1, 3, 0.0), Matrix(1, 2, 0.0));
  REQUIRE(scored[0].object_class == 0);  // ties go to the lowest class
  const auto heavy = compose_scores(flat_boxes(1), obj_logits, Matrix(1, 2, 0.0));
  REQUIRE(heavy[0].object_class == 1);
  const std::vector<double> prob = oracle::softmax({0.0, 1.0, 10.0});
  REQUIRE(heavy[0].object_score == Approx(prob[1]).margin(1e-12));
}

TEST_CASE("score composition validates shapes") {
  REQUIRE_THROWS_AS(compose_scores(Matrix(2, 7), Matrix(2, 3), Matrix(2, 2)),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(compose_scores(flat_boxes(2), Matrix(3, 3), Matrix(2, 2)),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(compose_scores(flat_boxes(2), Matrix(2, 3), Matrix(1, 2)),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(compose_scores(flat_boxes(2), Matrix(2, 1), Matrix(2, 2)),
                    std::invalid_argument);
}

TEST_CASE("masking zeroes unseen pairs and nothing else") {
  const auto scored = compose_scores(flat_boxes(1), Matrix(1, 3, 0.0), Matrix(1, 2, 0.0));
  Matrix mask(2, 2, 1.0);
  mask(0, 1) = 0.0;
  const auto masked = apply_mask(scored, mask);
  REQUIRE(masked[0].verb_scores[0] == scored[0].verb_scores[0]);
  REQUIRE(masked[0].verb_scores[1] == 0.0);

  Matrix narrow(2, 1, 1.0);
  REQUIRE_THROWS_AS(apply_mask(scored, narrow), std::invalid_argument);
  auto big_class = scored;
  big_class[0].object_class = 7;
  REQUIRE_THROWS_AS(apply_mask(big_class, mask), std::out_of_range);
}

TEST_CASE("ranking sorts by score with deterministic ties and truncates") {
  std::vector<ScoredTriplet> triplets(2);
  triplets[0].verb_scores = {0.9, 0.5, 0.0};
  triplets[1].verb_scores = {0.5, 0.7, 0.1};
  const auto all = top_k(triplets, 100);
  REQUIRE(all.size() == 5);  // zero score dropped
  REQUIRE(all[0].triplet_index == 0);
  REQUIRE(all[0].verb == 0);
  REQUIRE(all[1].triplet_index == 1);
  REQUIRE(all[1].verb == 1);
  // 0.5 tie: triplet 0 before triplet 1.
  REQUIRE(all[2].triplet_index == 0);
  REQUIRE(all[2].verb == 1);
  REQUIRE(all[3].triplet_index == 1);
  REQUIRE(all[3].verb == 0);
  REQUIRE(all[4].score == Approx(0.1));

  const auto top2 = top_k(triplets, 2);
  REQUIRE(top2.size() == 2);
  REQUIRE(top2[1].score == Approx(0.7));
  REQUIRE_THROWS_AS(top_k(triplets, 0), std::invalid_argument);
}

TEST_CASE("verb ties within one triplet rank by verb index") {
  std::vector<ScoredTriplet> triplets(1);
  triplets[0].verb_scores = {0.3, 0.3, 0.3};
  const auto ranked = top_k(triplets, 10);
  REQUIRE(ranked.size() == 3);
  REQUIRE(ranked[0].verb == 0);
  REQUIRE(ranked[1].verb == 1);
  REQUIRE(ranked[2].verb == 2);
}

TEST_CASE("prediction files round-trip exactly") {
  const Vocabulary vocab({"carry", "ride"}, {"bike", "dog"});
  std::vector<DumpRecord> records(2);
  records[0] = {"img_001", Box{0.1, 0.2, 0.3, 0.4}, Box{0.5, 0.6, 0.7, 0.8}, 1, 0,
                0.123456789012345};
  records[1] = {"img_002", Box{0.0, 0.0, 1.0, 1.0}, Box{0.25, 0.25, 0.75, 0.75}, 0, 1, 1e-9};
  TempFile f("roundtrip.txt");
  write_predictions(f.path, records, vocab);
  const auto back = read_predictions(f.path, vocab);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(back[i].image_id == records[i].image_id);
    REQUIRE(back[i].human.x1 == records[i].human.x1);
    REQUIRE(back[i].human.y2 == records[i].human.y2);
    REQUIRE(back[i].object.x2 == records[i].object.x2);
    REQUIRE(back[i].object_class == records[i].object_class);
    REQUIRE(back[i].verb == records[i].verb);
    REQUIRE(back[i].score == records[i].score);
  }
}

TEST_CASE("prediction reader rejects malformed rows") {
  const Vocabulary vocab({"carry"}, {"bike"});
  TempFile f("bad.txt");
  {
    std::ofstream out(f.path);
    out << "# comment then a short row\n";
    out << "img 0 0 1 1 0 0 1 1 bike carry\n";  // missing score
  }
  REQUIRE_THROWS_AS(read_predictions(f.path, vocab), std::runtime_error);
  {
    std::ofstream out(f.path);
    out << "img 0 0 1 1 0 0 1 1 sofa carry 0.5\n";  // unknown object
  }
  REQUIRE_THROWS_AS(read_predictions(f.path, vocab), std::runtime_error);
  {
    std::ofstream out(f.path);
    out << "img 0 0 1 1 0 0 1 1 background carry 0.5\n";
  }
  REQUIRE_THROWS_AS(read_predictions(f.path, vocab), std::runtime_error);
  REQUIRE_THROWS_AS(read_predictions("infer_tmp_missing.txt", vocab), std::runtime_error);
}

TEST_CASE("comments and blank lines are skipped") {
  const Vocabulary vocab({"carry"}, {"bike"});
  TempFile f("comments.txt");
  {
    std::ofstream out(f.path);
    out << "# header\n\n";
    out << "img 0 0 1 1 0 0 1 1 bike carry 0.5\n";
  }
  const auto back = read_predictions(f.path, vocab);
  REQUIRE(back.size() == 1);
  REQUIRE(back[0].score == 0.5);
}
