#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ocn/infer.hpp"
#include "ocn/io.hpp"
#include "ocn/matrix.hpp"
#include "ocn/priors.hpp"
#include "ocn/setmatch.hpp"

namespace ocn {

struct EvalConfig {
  double iou_thresh = 0.5;
  std::size_t k = 100;  // per-image retained predictions
};

struct ClassEval {
  std::size_t object_class = 0;
  std::size_t verb = 0;
  std::size_t n_gt = 0;
  std::size_t n_pred = 0;
  std::size_t n_tp = 0;
  double ap = 0.0;
  double recall = 0.0;
  bool rare = false;
};

struct EvalReport {
  std::vector<ClassEval> classes;  // every (object, verb) with >= 1 GT
  double map_full = 0.0;           // percentages
  double map_rare = 0.0;
  double map_nonrare = 0.0;
  double mr_at_k = 0.0;
  std::size_t n_rare = 0;
  std::size_t n_nonrare = 0;
  double mpcc = 0.0;
  std::size_t mpcc_classes = 0;    // object classes entering the mPCC mean
  std::size_t mpcc_skipped = 0;    // skipped for zero variance / no support
  bool has_mpcc = false;
};

/// Area under the precision-recall curve with the precision envelope
/// (all-point interpolation). tp_flags are ordered by descending score.
inline double average_precision(const std::vector<char>& tp_flags, std::size_t n_gt) {
  if (n_gt == 0) throw std::invalid_argument("average_precision: no ground truth");
  const std::size_t n = tp_flags.size();
  if (n == 0) return 0.0;
  std::vector<double> precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp_flags[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  double envelope = 0.0;
  double ap = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    envelope = std::max(envelope, precision[i]);
    if (tp_flags[i]) ap += envelope / static_cast<double>(n_gt);
  }
  return ap;
}

/// Pearson correlation of two equal-length vectors; throws on zero variance.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("pearson: length mismatch or empty input");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va <= 0.0 || vb <= 0.0) throw std::domain_error("pearson: zero-variance input");
  return cov / std::sqrt(va * vb);
}

/// Drop records whose (object, verb) pair is forbidden by the mask.
inline std::vector<DumpRecord> filter_masked(const std::vector<DumpRecord>& records,
                                             const Matrix& mask) {
  std::vector<DumpRecord> out;
  out.reserve(records.size());
  for (const DumpRecord& r : records) {
    if (r.object_class >= mask.rows() || r.verb >= mask.cols())
      throw std::out_of_range("filter_masked: record class outside " + mask.shape_str());
    if (mask(r.object_class, r.verb) != 0.0) out.push_back(r);
  }
  return out;
}

namespace detail {

struct IndexedRecord {
  const DumpRecord* rec;
  std::size_t order;  // original input position, the deterministic tiebreak
};

/// Per-image truncation to the top-k records by (score desc, input order).
inline std::vector<IndexedRecord> truncate_per_image(const std::vector<DumpRecord>& records,
                                                     std::size_t k) {
  std::map<std::string, std::vector<IndexedRecord>> by_image;
  for (std::size_t i = 0; i < records.size(); ++i)
    by_image[records[i].image_id].push_back({&records[i], i});
  std::vector<IndexedRecord> kept;
  for (auto& [id, recs] : by_image) {
    std::sort(recs.begin(), recs.end(), [](const IndexedRecord& a, const IndexedRecord& b) {
      if (a.rec->score != b.rec->score) return a.rec->score > b.rec->score;
      return a.order < b.order;
    });
    if (recs.size() > k) recs.resize(k);
    kept.insert(kept.end(), recs.begin(), recs.end());
  }
  return kept;
}

}  // namespace detail

/// Greedy score-ordered matching for one interaction class. Returns the
/// TP/FP flags in score order. A prediction claims the unclaimed same-image
/// GT maximizing min(IoU_human, IoU_object), requiring both above threshold.
struct ClassMatches {
  std::vector<char> tp_flags;
  std::size_t n_tp = 0;
};

inline ClassMatches match_detections(std::vector<detail::IndexedRecord> preds,
                                     const std::vector<const Triplet*>& gts,
                                     const std::vector<std::size_t>& gt_image,
                                     const std::map<std::string, std::size_t>& image_ids,
                                     double iou_thresh) {
  std::sort(preds.begin(), preds.end(),
            [](const detail::IndexedRecord& a, const detail::IndexedRecord& b) {
              if (a.rec->score != b.rec->score) return a.rec->score > b.rec->score;
              return a.order < b.order;
            });
  std::vector<char> claimed(gts.size(), 0);
  ClassMatches out;
  out.tp_flags.reserve(preds.size());
  for (const auto& p : preds) {
    const auto img_it = image_ids.find(p.rec->image_id);
    double best_quality = 0.0;
    std::size_t best_gt = gts.size();
    if (img_it != image_ids.end()) {
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (claimed[g] || gt_image[g] != img_it->second) continue;
        const double ih = iou(p.rec->human, gts[g]->human);
        const double io = iou(p.rec->object, gts[g]->object);
        const double quality = std::min(ih, io);
        if (ih > iou_thresh && io > iou_thresh && quality > best_quality) {
          best_quality = quality;
          best_gt = g;
        }
      }
    }
    if (best_gt < gts.size()) {
      claimed[best_gt] = 1;
      out.tp_flags.push_back(1);
      ++out.n_tp;
    } else {
      out.tp_flags.push_back(0);
    }
  }
  return out;
}

/// Full metric pass: per-image top-K truncation, per-class greedy matching,
/// AP/recall per class, Full/Rare/Non-Rare mAP, mR@K, and (given the
/// training object-verb conditional) mPCC.
inline EvalReport evaluate_predictions(const std::vector<DumpRecord>& records,
                                       const AnnotationSet& gts, const Vocabulary& vocab,
                                       const Matrix& rare_flags, const EvalConfig& cfg = {},
                                       const Matrix* train_s = nullptr,
                                       std::ostream* warnings = nullptr) {
  if (gts.n_triplets() == 0)
    throw std::invalid_argument("evaluate_predictions: annotation set has no triplets");
  if (cfg.iou_thresh <= 0.0 || cfg.iou_thresh >= 1.0)
    throw std::invalid_argument("evaluate_predictions: IoU threshold must be in (0,1)");
  if (cfg.k < 1) throw std::invalid_argument("evaluate_predictions: K must be >= 1");

  std::map<std::string, std::size_t> image_ids;
  for (std::size_t i = 0; i < gts.images.size(); ++i) image_ids[gts.images[i].image_id] = i;

  // GT instances per interaction class.
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> class_gt;
  std::vector<const Triplet*> all_gts;
  std::vector<std::size_t> gt_image;
  for (std::size_t i = 0; i < gts.images.size(); ++i)
    for (const Triplet& t : gts.images[i].triplets) {
      all_gts.push_back(&t);
      gt_image.push_back(i);
      for (std::size_t v : t.verbs) class_gt[{t.object_class, v}].push_back(all_gts.size() - 1);
    }

  const std::vector<detail::IndexedRecord> kept = detail::truncate_per_image(records, cfg.k);
  std::map<std::pair<std::size_t, std::size_t>, std::vector<detail::IndexedRecord>> class_pred;
  for (const auto& r : kept) class_pred[{r.rec->object_class, r.rec->verb}].push_back(r);

  EvalReport report;
  double sum_full = 0.0, sum_rare = 0.0, sum_nonrare = 0.0, sum_recall = 0.0;
  for (const auto& [key, gt_idx] : class_gt) {
    ClassEval ce;
    ce.object_class = key.first;
    ce.verb = key.second;
    ce.n_gt = gt_idx.size();
    ce.rare = rare_flags(key.first, key.second) != 0.0;

    std::vector<const Triplet*> cls_gts;
    std::vector<std::size_t> cls_img;
    for (std::size_t g : gt_idx) {
      cls_gts.push_back(all_gts[g]);
      cls_img.push_back(gt_image[g]);
    }
    const auto pred_it = class_pred.find(key);
    std::vector<detail::IndexedRecord> preds =
        pred_it == class_pred.end() ? std::vector<detail::IndexedRecord>{} : pred_it->second;
    ce.n_pred = preds.size();
    const ClassMatches m =
        match_detections(std::move(preds), cls_gts, cls_img, image_ids, cfg.iou_thresh);
    ce.n_tp = m.n_tp;
    ce.ap = average_precision(m.tp_flags, ce.n_gt);
    ce.recall = static_cast<double>(m.n_tp) / static_cast<double>(ce.n_gt);

    sum_full += ce.ap;
    sum_recall += ce.recall;
    if (ce.rare) {
      sum_rare += ce.ap;
      ++report.n_rare;
    } else {
      sum_nonrare += ce.ap;
      ++report.n_nonrare;
    }
    report.classes.push_back(ce);
  }
  const double n_classes = static_cast<double>(report.classes.size());
  report.map_full = 100.0 * sum_full / n_classes;
  report.map_rare = report.n_rare ? 100.0 * sum_rare / static_cast<double>(report.n_rare) : 0.0;
  report.map_nonrare =
      report.n_nonrare ? 100.0 * sum_nonrare / static_cast<double>(report.n_nonrare) : 0.0;
  report.mr_at_k = 100.0 * sum_recall / n_classes;

  if (train_s != nullptr) {
    const std::size_t n_p = train_s->cols();
    std::map<std::size_t, std::vector<double>> dist;  // object class -> score mass per verb
    for (const auto& r : kept) {
      const auto img_it = image_ids.find(r.rec->image_id);
      if (img_it == image_ids.end()) continue;
      bool localized = false;
      for (const Triplet& t : gts.images[img_it->second].triplets) {
        if (t.object_class != r.rec->object_class) continue;
        if (iou(r.rec->human, t.human) > cfg.iou_thresh &&
            iou(r.rec->object, t.object) > cfg.iou_thresh) {
          localized = true;
          break;
        }
      }
      if (!localized) continue;
      auto& d = dist[r.rec->object_class];
      if (d.empty()) d.assign(n_p, 0.0);
      if (r.rec->verb >= n_p) continue;
      d[r.rec->verb] += r.rec->score;
    }
    double sum_pcc = 0.0;
    for (const auto& [obj, mass] : dist) {
      double total = 0.0;
      for (double x : mass) total += x;
      if (total <= 0.0) {
        ++report.mpcc_skipped;
        continue;
      }
      std::vector<double> predicted(mass);
      for (double& x : predicted) x /= total;
      std::vector<double> training(n_p);
      for (std::size_t v = 0; v < n_p; ++v) training[v] = (*train_s)(obj, v);
      try {
        sum_pcc += pearson(predicted, training);
        ++report.mpcc_classes;
      } catch (const std::domain_error&) {
        ++report.mpcc_skipped;
        if (warnings)
          *warnings << "mPCC: skipping object class " << vocab.object_name(obj)
                    << " (zero-variance distribution)\n";
      }
    }
    if (report.mpcc_classes > 0) {
      report.mpcc = sum_pcc / static_cast<double>(report.mpcc_classes);
      report.has_mpcc = true;
    }
  }
  return report;
}

inline void print_report(std::ostream& os, const EvalReport& r, const Vocabulary& vocab) {
  os << "interaction classes with GT: " << r.classes.size() << " (rare " << r.n_rare
     << ", non-rare " << r.n_nonrare << ")\n";
  os << "class                          n_gt  n_pred  n_tp      AP   recall  set\n";
  for (const ClassEval& c : r.classes) {
    const std::string name = vocab.object_name(c.object_class) + "/" + vocab.verb_name(c.verb);
    os << "  " << name;
    for (std::size_t pad = name.size(); pad < 29; ++pad) os << ' ';
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%5zu  %6zu  %4zu  %6.2f  %7.2f  %s", c.n_gt, c.n_pred,
                  c.n_tp, 100.0 * c.ap, 100.0 * c.recall, c.rare ? "rare" : "non-rare");
    os << buf << "\n";
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "mAP full %.4f  rare %.4f  non-rare %.4f  |  mR@K %.4f", r.map_full,
                r.map_rare, r.map_nonrare, r.mr_at_k);
  os << buf << "\n";
  if (r.has_mpcc)
    os << "mPCC " << r.mpcc << " over " << r.mpcc_classes << " object classes ("
       << r.mpcc_skipped << " skipped)\n";
}

inline KvFile report_kv(const EvalReport& r) {
  KvFile kv;
  kv.set("classes", r.classes.size());
  kv.set("map_full", r.map_full);
  kv.set("map_rare", r.map_rare);
  kv.set("map_nonrare", r.map_nonrare);
  kv.set("mr_at_k", r.mr_at_k);
  kv.set("n_rare", r.n_rare);
  kv.set("n_nonrare", r.n_nonrare);
  if (r.has_mpcc) {
    kv.set("mpcc", r.mpcc);
    kv.set("mpcc_classes", r.mpcc_classes);
  }
  return kv;
}

}  // namespace ocn
