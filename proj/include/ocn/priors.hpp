#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocn/io.hpp"
#include "ocn/matrix.hpp"

namespace ocn {

constexpr const char* kBackgroundName = "background";

/// Verb and object name lists with stable ids. The object list always ends
/// with the background class at index n_objects().
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> verbs, std::vector<std::string> objects_no_bg)
      : verbs_(std::move(verbs)), objects_(std::move(objects_no_bg)) {
    objects_.push_back(kBackgroundName);
    index(verbs_, verb_ids_, "verb");
    index(objects_, object_ids_, "object");
  }

  std::size_t n_verbs() const { return verbs_.size(); }
  std::size_t n_objects() const { return objects_.size() - 1; }  // real classes
  std::size_t background_index() const { return objects_.size() - 1; }

  const std::string& verb_name(std::size_t i) const { return verbs_.at(i); }
  const std::string& object_name(std::size_t i) const { return objects_.at(i); }

  std::size_t verb_id(const std::string& name) const {
    auto it = verb_ids_.find(name);
    if (it == verb_ids_.end()) throw std::invalid_argument("unknown verb '" + name + "'");
    return it->second;
  }
  std::size_t object_id(const std::string& name) const {
    auto it = object_ids_.find(name);
    if (it == object_ids_.end()) throw std::invalid_argument("unknown object '" + name + "'");
    return it->second;
  }

 private:
  static void index(const std::vector<std::string>& names,
                    std::map<std::string, std::size_t>& ids, const char* kind) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i].empty() || names[i].find_first_of(" \t,") != std::string::npos)
        throw std::invalid_argument(std::string(kind) + " name '" + names[i] +
                                    "' is empty or contains whitespace/comma");
      if (!ids.emplace(names[i], i).second)
        throw std::invalid_argument(std::string("duplicate ") + kind + " name '" + names[i] +
                                    "'");
    }
  }

  std::vector<std::string> verbs_;
  std::vector<std::string> objects_;  // includes background as last entry
  std::map<std::string, std::size_t> verb_ids_;
  std::map<std::string, std::size_t> object_ids_;
};

/// Vocabulary file: one entry per line, "verb NAME" or "object NAME".
/// Background is appended automatically and must not be listed.
inline Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<std::string> verbs, objects;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string kind, name;
    if (!(ss >> kind >> name))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 'verb NAME' or 'object NAME'");
    if (kind == "verb")
      verbs.push_back(name);
    else if (kind == "object") {
      if (name == kBackgroundName)
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": background is implicit, do not list it");
      objects.push_back(name);
    } else
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown kind '" +
                               kind + "'");
  }
  if (verbs.empty() || objects.empty())
    throw std::runtime_error(path + ": vocabulary needs at least one verb and one object");
  return Vocabulary(std::move(verbs), std::move(objects));
}

inline void save_vocabulary(const std::string& path, const Vocabulary& vocab) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  for (std::size_t i = 0; i < vocab.n_verbs(); ++i) f << "verb " << vocab.verb_name(i) << "\n";
  for (std::size_t i = 0; i < vocab.n_objects(); ++i)
    f << "object " << vocab.object_name(i) << "\n";
  if (!f) throw std::runtime_error("write failed: " + path);
}

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool valid() const { return x1 < x2 && y1 < y2; }
  double area() const { return (x2 - x1) * (y2 - y1); }
};

/// One ground-truth human-object pair with its multi-label verb set.
struct Triplet {
  Box human;
  Box object;
  std::size_t object_class = 0;       // never background
  std::vector<std::size_t> verbs;     // sorted unique verb ids, non-empty
};

struct ImageAnnotations {
  std::string image_id;
  std::vector<Triplet> triplets;
};

struct AnnotationSet {
  std::vector<ImageAnnotations> images;
  std::size_t n_triplets() const {
    std::size_t n = 0;
    for (const auto& im : images) n += im.triplets.size();
    return n;
  }
};

inline void validate_triplet(const Triplet& t, const Vocabulary& vocab,
                             const std::string& locus) {
  if (!t.human.valid())
    throw std::invalid_argument(locus + ": human box violates x1 < x2, y1 < y2");
  if (!t.object.valid())
    throw std::invalid_argument(locus + ": object box violates x1 < x2, y1 < y2");
  if (t.object_class >= vocab.background_index())
    throw std::invalid_argument(locus + ": object class is background or out of range");
  if (t.verbs.empty()) throw std::invalid_argument(locus + ": triplet has no verbs");
  for (std::size_t v : t.verbs)
    if (v >= vocab.n_verbs()) throw std::invalid_argument(locus + ": verb id out of range");
}

/// Annotation file: one triplet per line —
///   image-id hx1 hy1 hx2 hy2 ox1 oy1 ox2 oy2 object-name verb,verb,...
/// Lines with the same image-id are grouped into one image, in first-seen
/// order.
inline AnnotationSet load_annotations(const std::string& path, const Vocabulary& vocab) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  AnnotationSet anns;
  std::map<std::string, std::size_t> image_index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::string locus = path + ":" + std::to_string(lineno);
    std::istringstream ss(line);
    std::string image_id, object_name, verb_list;
    Triplet t;
    if (!(ss >> image_id >> t.human.x1 >> t.human.y1 >> t.human.x2 >> t.human.y2 >>
          t.object.x1 >> t.object.y1 >> t.object.x2 >> t.object.y2 >> object_name >>
          verb_list))
      throw std::runtime_error(locus + ": expected image-id, 8 box reals, object, verbs");
    try {
      t.object_class = vocab.object_id(object_name);
      std::istringstream vs(verb_list);
      std::string verb;
      while (std::getline(vs, verb, ',')) {
        if (verb.empty()) throw std::invalid_argument("empty verb name in list");
        const std::size_t id = vocab.verb_id(verb);
        bool dup = false;
        for (std::size_t existing : t.verbs) dup = dup || existing == id;
        if (!dup) t.verbs.push_back(id);
      }
      std::sort(t.verbs.begin(), t.verbs.end());
      validate_triplet(t, vocab, "triplet");
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(locus + ": " + e.what());
    }
    auto [it, fresh] = image_index.emplace(image_id, anns.images.size());
    if (fresh) anns.images.push_back({image_id, {}});
    anns.images[it->second].triplets.push_back(std::move(t));
  }
  return anns;
}

inline void save_annotations(const std::string& path, const AnnotationSet& anns,
                             const Vocabulary& vocab) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.precision(17);
  for (const auto& im : anns.images)
    for (const Triplet& t : im.triplets) {
      f << im.image_id << " " << t.human.x1 << " " << t.human.y1 << " " << t.human.x2 << " "
        << t.human.y2 << " " << t.object.x1 << " " << t.object.y1 << " " << t.object.x2
        << " " << t.object.y2 << " " << vocab.object_name(t.object_class) << " ";
      for (std::size_t k = 0; k < t.verbs.size(); ++k)
        f << (k ? "," : "") << vocab.verb_name(t.verbs[k]);
      f << "\n";
    }
  if (!f) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Prior tables
// ---------------------------------------------------------------------------

/// Conditional verb co-occurrence: c_ij = P(v_j present | v_i present) over
/// triplets, diagonal zero, rows renormalized to sum 1 over j != i. Verbs
/// with no co-occurring partner (or absent entirely) fall back to the
/// uniform off-diagonal row.
inline Matrix verb_conditional(const AnnotationSet& anns, std::size_t n_verbs) {
  if (n_verbs < 2) throw std::invalid_argument("verb_conditional: need at least 2 verbs");
  if (anns.n_triplets() == 0)
    throw std::invalid_argument("verb_conditional: empty annotation set");
  std::vector<double> verb_count(n_verbs, 0.0);
  Matrix pair_count(n_verbs, n_verbs);
  for (const auto& im : anns.images)
    for (const Triplet& t : im.triplets) {
      for (std::size_t a : t.verbs) {
        verb_count[a] += 1.0;
        for (std::size_t b : t.verbs)
          if (a != b) pair_count(a, b) += 1.0;
      }
    }
  Matrix c(n_verbs, n_verbs);
  const double uniform = 1.0 / static_cast<double>(n_verbs - 1);
  for (std::size_t i = 0; i < n_verbs; ++i) {
    double row_sum = 0.0;
    if (verb_count[i] > 0.0)
      for (std::size_t j = 0; j < n_verbs; ++j) {
        if (i == j) continue;
        c(i, j) = pair_count(i, j) / verb_count[i];
        row_sum += c(i, j);
      }
    if (row_sum <= 0.0) {
      for (std::size_t j = 0; j < n_verbs; ++j) c(i, j) = i == j ? 0.0 : uniform;
    } else {
      for (std::size_t j = 0; j < n_verbs; ++j) c(i, j) /= row_sum;
    }
  }
  return c;
}

/// c_hat_ij = (c_ij + c_ji) / (2 N_p): a single joint distribution over
/// ordered off-diagonal pairs, symmetric, summing to 1 when rows of C do.
inline Matrix symmetrize(const Matrix& c) {
  if (c.rows() != c.cols())
    throw std::invalid_argument("symmetrize: square matrix required, got " + c.shape_str());
  for (std::size_t i = 0; i < c.rows(); ++i)
    if (c(i, i) != 0.0) throw std::invalid_argument("symmetrize: nonzero diagonal");
  const double n = static_cast<double>(c.rows());
  Matrix out(c.rows(), c.cols());
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j) out(i, j) = (c(i, j) + c(j, i)) / (2.0 * n);
  return out;
}

/// s_ij = P(v_j | object o_i) over triplets, rows renormalized to sum 1
/// (multi-label rows can exceed 1 before renormalization). Unseen objects
/// and the background row are uniform.
inline Matrix object_verb_conditional(const AnnotationSet& anns, const Vocabulary& vocab) {
  if (anns.n_triplets() == 0)
    throw std::invalid_argument("object_verb_conditional: empty annotation set");
  const std::size_t n_p = vocab.n_verbs();
  const std::size_t rows = vocab.n_objects() + 1;
  Matrix s(rows, n_p);
  std::vector<double> obj_count(rows, 0.0);
  for (const auto& im : anns.images)
    for (const Triplet& t : im.triplets) {
      obj_count[t.object_class] += 1.0;
      for (std::size_t v : t.verbs) s(t.object_class, v) += 1.0;
    }
  const double uniform = 1.0 / static_cast<double>(n_p);
  for (std::size_t i = 0; i < rows; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < n_p; ++j) row_sum += s(i, j);
    if (i == vocab.background_index() || obj_count[i] == 0.0 || row_sum <= 0.0) {
      for (std::size_t j = 0; j < n_p; ++j) s(i, j) = uniform;
    } else {
      for (std::size_t j = 0; j < n_p; ++j) s(i, j) /= row_sum;
    }
  }
  return s;
}

/// s_hat_ij = (s_ij + beta/N_p) / (1 + beta). Preserves row sums of 1.
inline Matrix laplacian_smooth(const Matrix& s, double beta) {
  if (beta < 0.0)
    throw std::invalid_argument("laplacian_smooth: beta must be >= 0, got " +
                                std::to_string(beta));
  const double n_p = static_cast<double>(s.cols());
  Matrix out(s.rows(), s.cols());
  for (std::size_t k = 0; k < s.size(); ++k) out.at(k) = (s.at(k) + beta / n_p) / (1.0 + beta);
  return out;
}

/// 1 where the (object, verb) pair occurs in any training triplet, else 0.
/// Background row all ones: background cannot reject verbs.
inline Matrix build_mask(const AnnotationSet& anns, const Vocabulary& vocab) {
  Matrix mask(vocab.n_objects() + 1, vocab.n_verbs());
  for (const auto& im : anns.images)
    for (const Triplet& t : im.triplets)
      for (std::size_t v : t.verbs) mask(t.object_class, v) = 1.0;
  for (std::size_t j = 0; j < vocab.n_verbs(); ++j) mask(vocab.background_index(), j) = 1.0;
  return mask;
}

/// Raw (object, verb) triplet counts, background row zero.
inline Matrix pair_counts(const AnnotationSet& anns, const Vocabulary& vocab) {
  Matrix counts(vocab.n_objects() + 1, vocab.n_verbs());
  for (const auto& im : anns.images)
    for (const Triplet& t : im.triplets)
      for (std::size_t v : t.verbs) counts(t.object_class, v) += 1.0;
  return counts;
}

/// 1 where the interaction has fewer than `threshold` training triplets.
inline Matrix rare_partition(const AnnotationSet& anns, const Vocabulary& vocab,
                             std::size_t threshold = 10) {
  if (threshold < 1) throw std::invalid_argument("rare_partition: threshold must be >= 1");
  const Matrix counts = pair_counts(anns, vocab);
  Matrix rare(counts.rows(), counts.cols());
  for (std::size_t k = 0; k < counts.size(); ++k)
    rare.at(k) = counts.at(k) < static_cast<double>(threshold) ? 1.0 : 0.0;
  return rare;
}

struct PriorTables {
  Matrix c;         // N_p x N_p conditional, zero diagonal
  Matrix c_hat;     // symmetrized joint distribution
  Matrix s;         // (N_o+1) x N_p object-verb conditional
  Matrix s_hat;     // smoothed
  Matrix mask;      // binary (N_o+1) x N_p
  Matrix rare;      // binary (N_o+1) x N_p, 1 = rare interaction
  Matrix counts;    // raw pair counts
  double beta = 0.1;
  std::size_t rare_threshold = 10;
};

inline PriorTables build_priors(const AnnotationSet& anns, const Vocabulary& vocab,
                                double beta = 0.1, std::size_t rare_threshold = 10) {
  PriorTables t;
  t.c = verb_conditional(anns, vocab.n_verbs());
  t.c_hat = symmetrize(t.c);
  t.s = object_verb_conditional(anns, vocab);
  t.s_hat = laplacian_smooth(t.s, beta);
  t.mask = build_mask(anns, vocab);
  t.rare = rare_partition(anns, vocab, rare_threshold);
  t.counts = pair_counts(anns, vocab);
  t.beta = beta;
  t.rare_threshold = rare_threshold;
  return t;
}

inline void save_priors(const std::string& dir, const PriorTables& t) {
  KvFile meta;
  meta.set("n_verbs", t.c.rows());
  meta.set("n_objects", t.s.rows() - 1);
  meta.set("beta", t.beta);
  meta.set("rare_threshold", t.rare_threshold);
  meta.save(dir + "/priors_meta.txt");
  save_matrix(dir + "/verb_conditional.txt", t.c);
  save_matrix(dir + "/verb_joint.txt", t.c_hat);
  save_matrix(dir + "/object_verb.txt", t.s);
  save_matrix(dir + "/object_verb_smoothed.txt", t.s_hat);
  save_matrix(dir + "/mask.txt", t.mask);
  save_matrix(dir + "/rare.txt", t.rare);
  save_matrix(dir + "/pair_counts.txt", t.counts);
}

inline PriorTables load_priors(const std::string& dir) {
  PriorTables t;
  const KvFile meta = KvFile::load(dir + "/priors_meta.txt");
  t.beta = meta.get_double("beta");
  t.rare_threshold = meta.get_count("rare_threshold");
  t.c = load_matrix(dir + "/verb_conditional.txt");
  t.c_hat = load_matrix(dir + "/verb_joint.txt");
  t.s = load_matrix(dir + "/object_verb.txt");
  t.s_hat = load_matrix(dir + "/object_verb_smoothed.txt");
  t.mask = load_matrix(dir + "/mask.txt");
  t.rare = load_matrix(dir + "/rare.txt");
  t.counts = load_matrix(dir + "/pair_counts.txt");
  if (t.c.rows() != meta.get_count("n_verbs") ||
      t.s.rows() != meta.get_count("n_objects") + 1)
    throw std::runtime_error("priors in " + dir + " disagree with their header");
  return t;
}

}  // namespace ocn
