#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocn/autodiff.hpp"
#include "ocn/hungarian.hpp"
#include "ocn/matrix.hpp"
#include "ocn/priors.hpp"

namespace ocn {

// ---------------------------------------------------------------------------
// Plain box geometry
// ---------------------------------------------------------------------------

inline Box cxcywh_to_xyxy(double cx, double cy, double w, double h) {
  return Box{cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0};
}

/// Intersection over union; 0 if either box is degenerate (robust for
/// scoring arbitrary prediction dumps).
inline double iou(const Box& a, const Box& b) {
  if (a.area() <= 0.0 || b.area() <= 0.0) return 0.0;
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

/// Generalized IoU in (-1, 1]: IoU minus the hull penalty.
inline double giou(const Box& a, const Box& b) {
  if (a.area() <= 0.0)
    throw std::domain_error("giou: degenerate first box (zero area)");
  if (b.area() <= 0.0)
    throw std::domain_error("giou: degenerate second box (zero area)");
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double hull = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) *
                      (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  return inter / uni - (hull - uni) / hull;
}

// ---------------------------------------------------------------------------
// Differentiable box columns
// ---------------------------------------------------------------------------

/// M x 4 center-size rows to corner rows.
inline Var boxes_to_corners(Var b) {
  if (b.value().cols() != 4)
    throw std::invalid_argument("boxes_to_corners: expected M x 4, got " +
                                b.value().shape_str());
  Var cx = slice_cols(b, 0, 1), cy = slice_cols(b, 1, 1);
  Var hw = scale(slice_cols(b, 2, 1), 0.5), hh = scale(slice_cols(b, 3, 1), 0.5);
  return concat_cols({sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)});
}

/// Row-wise GIoU of predicted corner boxes against fixed ground-truth
/// corner boxes: returns an M x 1 column, differentiable in the prediction.
inline Var giou_rows(Var pred_xyxy, const Matrix& gt_xyxy) {
  const Matrix& pv = pred_xyxy.value();
  if (pv.cols() != 4 || !pv.same_shape(gt_xyxy))
    throw std::invalid_argument("giou_rows: " + pv.shape_str() + " vs " + gt_xyxy.shape_str());
  for (std::size_t i = 0; i < pv.rows(); ++i) {
    if (pv(i, 2) <= pv(i, 0) || pv(i, 3) <= pv(i, 1))
      throw std::domain_error("giou_rows: degenerate predicted box, row " + std::to_string(i));
    if (gt_xyxy(i, 2) <= gt_xyxy(i, 0) || gt_xyxy(i, 3) <= gt_xyxy(i, 1))
      throw std::domain_error("giou_rows: degenerate reference box, row " + std::to_string(i));
  }
  Var g = pred_xyxy.tape()->leaf(gt_xyxy, "giou_gt");
  auto col = [](Var m, std::size_t j) { return slice_cols(m, j, 1); };
  Var iw = relu(sub(minimum(col(pred_xyxy, 2), col(g, 2)),
                    maximum(col(pred_xyxy, 0), col(g, 0))));
  Var ih = relu(sub(minimum(col(pred_xyxy, 3), col(g, 3)),
                    maximum(col(pred_xyxy, 1), col(g, 1))));
  Var inter = hadamard(iw, ih);
  Var area_p = hadamard(sub(col(pred_xyxy, 2), col(pred_xyxy, 0)),
                        sub(col(pred_xyxy, 3), col(pred_xyxy, 1)));
  Var area_g = hadamard(sub(col(g, 2), col(g, 0)), sub(col(g, 3), col(g, 1)));
  Var uni = sub(add(area_p, area_g), inter);
  Var hull = hadamard(sub(maximum(col(pred_xyxy, 2), col(g, 2)),
                          minimum(col(pred_xyxy, 0), col(g, 0))),
                      sub(maximum(col(pred_xyxy, 3), col(g, 3)),
                          minimum(col(pred_xyxy, 1), col(g, 1))));
  return sub(div(inter, uni), div(sub(hull, uni), hull));
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

/// Cost term weights for the bipartite matcher; defaults follow the loss
/// weight proportions.
struct MatchWeights {
  double obj = 1.0;
  double verb = 1.0;
  double box = 2.5;
  double giou = 1.0;
};

struct LossWeights {
  double skl = 1.0;
  double box = 2.5;
  double giou = 1.0;
  double obj = 1.0;
  double verb = 1.0;
};

struct VerbLossCfg {
  bool focal = true;  // false = plain BCE
  double gamma = 2.0;
  double alpha = 0.25;
};

namespace detail {

inline double stable_sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline std::vector<double> softmax_row_values(const Matrix& m, std::size_t i) {
  double mx = m(i, 0);
  for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, m(i, j));
  std::vector<double> out(m.cols());
  double z = 0.0;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    out[j] = std::exp(m(i, j) - mx);
    z += out[j];
  }
  for (double& x : out) x /= z;
  return out;
}

}  // namespace detail

/// Composite query-to-GT cost: (1 - class prob) + mean over GT verbs of
/// (1 - verb prob) + L1 of both center-size box pairs + (2 - both GIoUs),
/// each weighted.
inline Matrix matching_cost(const std::vector<Triplet>& gts, const Matrix& boxes_cs,
                            const Matrix& obj_logits, const Matrix& verb_logits,
                            const MatchWeights& w = {}) {
  const std::size_t n_q = boxes_cs.rows();
  if (boxes_cs.cols() != 8)
    throw std::invalid_argument("matching_cost: boxes must be N_q x 8, got " +
                                boxes_cs.shape_str());
  if (obj_logits.rows() != n_q || verb_logits.rows() != n_q)
    throw std::invalid_argument("matching_cost: row counts disagree");
  Matrix cost(gts.size(), n_q);
  for (std::size_t q = 0; q < n_q; ++q) {
    const std::vector<double> obj_prob = detail::softmax_row_values(obj_logits, q);
    const Box ph = cxcywh_to_xyxy(boxes_cs(q, 0), boxes_cs(q, 1), boxes_cs(q, 2),
                                  boxes_cs(q, 3));
    const Box po = cxcywh_to_xyxy(boxes_cs(q, 4), boxes_cs(q, 5), boxes_cs(q, 6),
                                  boxes_cs(q, 7));
    for (std::size_t t = 0; t < gts.size(); ++t) {
      const Triplet& gt = gts[t];
      double verb_term = 0.0;
      for (std::size_t v : gt.verbs)
        verb_term += 1.0 - detail::stable_sigmoid(verb_logits(q, v));
      verb_term /= static_cast<double>(gt.verbs.size());
      const double hcx = (gt.human.x1 + gt.human.x2) / 2.0;
      const double hcy = (gt.human.y1 + gt.human.y2) / 2.0;
      const double ocx = (gt.object.x1 + gt.object.x2) / 2.0;
      const double ocy = (gt.object.y1 + gt.object.y2) / 2.0;
      const double l1 = std::abs(boxes_cs(q, 0) - hcx) + std::abs(boxes_cs(q, 1) - hcy) +
                        std::abs(boxes_cs(q, 2) - (gt.human.x2 - gt.human.x1)) +
                        std::abs(boxes_cs(q, 3) - (gt.human.y2 - gt.human.y1)) +
                        std::abs(boxes_cs(q, 4) - ocx) + std::abs(boxes_cs(q, 5) - ocy) +
                        std::abs(boxes_cs(q, 6) - (gt.object.x2 - gt.object.x1)) +
                        std::abs(boxes_cs(q, 7) - (gt.object.y2 - gt.object.y1));
      const double g = 2.0 - giou(ph, gt.human) - giou(po, gt.object);
      cost(t, q) = w.obj * (1.0 - obj_prob[gt.object_class]) + w.verb * verb_term +
                   w.box * l1 + w.giou * g;
    }
  }
  return cost;
}

// ---------------------------------------------------------------------------
// Per-image set loss
// ---------------------------------------------------------------------------

struct QueryOutputs {
  Var boxes;        // N_q x 8 center-size, human then object, in (0,1)
  Var obj_logits;   // N_q x (N_o + 1)
  Var verb_logits;  // N_q x N_p
};

struct ImageLoss {
  Var total;  // box/giou/obj/verb terms, each loss-weighted (no SKL term)
  double box = 0.0;
  double giou = 0.0;
  double obj = 0.0;
  double verb = 0.0;
  MatchResult match;
};

/// Match GT triplets to queries, then assemble the set-prediction loss:
/// L1 + GIoU on matched boxes, cross-entropy on all object logits with
/// background targets for unmatched queries, and focal/BCE on matched verb
/// logits. Box terms are means over matched boxes (2 per triplet).
inline ImageLoss set_loss(const QueryOutputs& out, const std::vector<Triplet>& gts,
                          std::size_t background_index, const LossWeights& lw,
                          const VerbLossCfg& vcfg = {}, const MatchWeights& mw = {}) {
  Tape& tape = *out.boxes.tape();
  const std::size_t n_q = out.boxes.value().rows();
  const std::size_t n_p = out.verb_logits.value().cols();
  if (gts.size() > n_q)
    throw std::invalid_argument("set_loss: " + std::to_string(gts.size()) +
                                " GT triplets exceed " + std::to_string(n_q) + " queries");

  ImageLoss res;
  std::vector<std::size_t> obj_targets(n_q, background_index);

  Var total = tape.leaf(Matrix(1, 1), "zero");
  if (!gts.empty()) {
    const Matrix cost = matching_cost(gts, out.boxes.value(), out.obj_logits.value(),
                                      out.verb_logits.value(), mw);
    res.match = hungarian(cost);
    const std::vector<std::size_t>& assign = res.match.assignment;
    const std::size_t m = gts.size();

    Matrix gt_cs(m, 8);
    Matrix gt_h_xyxy(m, 4), gt_o_xyxy(m, 4);
    Matrix verb_targets(m, n_p);
    for (std::size_t i = 0; i < m; ++i) {
      const Triplet& gt = gts[i];
      obj_targets[assign[i]] = gt.object_class;
      const Box& h = gt.human;
      const Box& o = gt.object;
      const double row[8] = {(h.x1 + h.x2) / 2.0, (h.y1 + h.y2) / 2.0, h.x2 - h.x1,
                             h.y2 - h.y1,         (o.x1 + o.x2) / 2.0, (o.y1 + o.y2) / 2.0,
                             o.x2 - o.x1,         o.y2 - o.y1};
      for (std::size_t j = 0; j < 8; ++j) gt_cs(i, j) = row[j];
      gt_h_xyxy(i, 0) = h.x1;
      gt_h_xyxy(i, 1) = h.y1;
      gt_h_xyxy(i, 2) = h.x2;
      gt_h_xyxy(i, 3) = h.y2;
      gt_o_xyxy(i, 0) = o.x1;
      gt_o_xyxy(i, 1) = o.y1;
      gt_o_xyxy(i, 2) = o.x2;
      gt_o_xyxy(i, 3) = o.y2;
      for (std::size_t v : gt.verbs) verb_targets(i, v) = 1.0;
    }

    Var matched_boxes = gather_rows(out.boxes, assign);
    Var l1 = scale(sum_all(abs_elem(sub(matched_boxes, tape.leaf(gt_cs, "gt_boxes")))),
                   1.0 / (2.0 * static_cast<double>(m)));

    Var giou_h = giou_rows(boxes_to_corners(slice_cols(matched_boxes, 0, 4)), gt_h_xyxy);
    Var giou_o = giou_rows(boxes_to_corners(slice_cols(matched_boxes, 4, 4)), gt_o_xyxy);
    Var giou_sum = add(sum_all(giou_h), sum_all(giou_o));
    Var giou_loss = scale(add_scalar(scale(giou_sum, -1.0), 2.0 * static_cast<double>(m)),
                          1.0 / (2.0 * static_cast<double>(m)));

    Var matched_verbs = gather_rows(out.verb_logits, assign);
    Var verb_loss = vcfg.focal
                        ? focal_loss(matched_verbs, verb_targets, vcfg.gamma, vcfg.alpha)
                        : bce_loss(matched_verbs, verb_targets);

    res.box = l1.scalar();
    res.giou = giou_loss.scalar();
    res.verb = verb_loss.scalar();
    total = add(total, add(scale(l1, lw.box),
                           add(scale(giou_loss, lw.giou), scale(verb_loss, lw.verb))));
  }

  Var obj_loss = softmax_xent(out.obj_logits, obj_targets);
  res.obj = obj_loss.scalar();
  res.total = add(total, scale(obj_loss, lw.obj));
  return res;
}

}  // namespace ocn
