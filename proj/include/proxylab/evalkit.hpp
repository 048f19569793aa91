#pragma once

// Zero-shot retrieval metrics: Recall@K over nearest neighbours, k-means
// clustering, and normalised mutual information between labels and clusters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "proxylab/errors.hpp"
#include "proxylab/matrix.hpp"
#include "proxylab/rng.hpp"

namespace proxylab {

enum class RetrievalMode { same_set, query_gallery };

struct GalleryRef {
  const Matrix& embeddings;
  std::span<const int> labels;
  // Skip gallery item i for query i (for galleries that are the query set).
  bool exclude_self = false;
};

struct RecallTable {
  std::map<std::size_t, double> recall_at;
  std::vector<std::vector<std::size_t>> neighbor_table;  // top max(K) per query
};

struct Clustering {
  std::vector<std::size_t> assignments;
  Matrix centroids;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after every assignment step
  std::size_t iterations = 0;
};

struct RetrievalResult {
  std::map<std::size_t, double> recall_at;
  double nmi = 0.0;
  std::vector<double> nmi_per_seed;
  std::vector<Clustering> clusterings;
  std::vector<std::vector<std::size_t>> neighbor_table;
};

namespace detail {

inline double sqdist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

inline void check_ks(std::span<const std::size_t> ks, std::size_t gallery_size) {
  if (ks.empty()) throw ParameterError("recall_at_k: no K values given");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < 1) throw ParameterError("recall_at_k: K must be >= 1");
    if (i > 0 && ks[i] < ks[i - 1]) throw ParameterError("recall_at_k: ks must be ascending");
    if (ks[i] >= gallery_size) {
      throw ParameterError("recall_at_k: K=" + std::to_string(ks[i]) +
                           " is not smaller than the gallery size " +
                           std::to_string(gallery_size));
    }
  }
}

}  // namespace detail

// Fraction of queries with at least one same-class item among their K nearest
// neighbours (Euclidean; distance ties go to the lower gallery index). In
// same_set mode the embeddings are both queries and gallery and each query's
// own row is excluded.
inline RecallTable recall_at_k(const Matrix& embeddings, std::span<const int> labels,
                               std::span<const std::size_t> ks,
                               RetrievalMode mode = RetrievalMode::same_set,
                               std::optional<GalleryRef> gallery = std::nullopt) {
  if (labels.size() != embeddings.rows()) {
    throw ShapeError("recall_at_k: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(embeddings.rows()) + " embeddings");
  }
  const Matrix* g_emb = &embeddings;
  std::span<const int> g_lab = labels;
  bool exclude_self = true;
  if (mode == RetrievalMode::same_set) {
    if (embeddings.rows() < 2) throw ParameterError("recall_at_k: same_set needs >= 2 points");
  } else {
    if (!gallery) throw ParameterError("recall_at_k: query_gallery mode needs a gallery");
    g_emb = &gallery->embeddings;
    g_lab = gallery->labels;
    exclude_self = gallery->exclude_self;
    if (g_lab.size() != g_emb->rows()) throw ShapeError("recall_at_k: gallery label count");
    if (g_emb->cols() != embeddings.cols()) {
      throw ShapeError("recall_at_k: query " + embeddings.shape_string() + " vs gallery " +
                       g_emb->shape_string());
    }
    if (exclude_self && g_emb->rows() != embeddings.rows()) {
      throw ParameterError("recall_at_k: exclude_self needs a gallery the size of the queries");
    }
  }
  detail::check_ks(ks, g_emb->rows());
  const std::size_t kmax = ks.back();

  RecallTable out;
  std::vector<std::size_t> hits(ks.size(), 0);
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(g_emb->rows());
  for (std::size_t q = 0; q < embeddings.rows(); ++q) {
    cand.clear();
    for (std::size_t j = 0; j < g_emb->rows(); ++j) {
      if (exclude_self && j == q) continue;
      cand.emplace_back(detail::sqdist(embeddings.row(q), g_emb->row(j)), j);
    }
    const std::size_t take = std::min(kmax, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take),
                      cand.end());
    std::vector<std::size_t> nn(take);
    std::size_t first_hit = take;
    for (std::size_t r = 0; r < take; ++r) {
      nn[r] = cand[r].second;
      if (first_hit == take && g_lab[nn[r]] == labels[q]) first_hit = r;
    }
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (first_hit < ks[i]) ++hits[i];
    out.neighbor_table.push_back(std::move(nn));
  }
  for (std::size_t i = 0; i < ks.size(); ++i)
    out.recall_at[ks[i]] =
        static_cast<double>(hits[i]) / static_cast<double>(embeddings.rows());
  return out;
}

// Lloyd's algorithm from k-means++ seeding. Iterates until the assignment is
// a fixpoint or max_iter update steps have run. A cluster that empties is
// re-seeded at the point farthest from its assigned centroid.
inline Clustering kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                         std::size_t max_iter = 100) {
  const std::size_t n = points.rows();
  if (k < 1 || k > n) {
    throw ParameterError("kmeans: k=" + std::to_string(k) + " with " + std::to_string(n) +
                         " points");
  }
  Rng rng(seed, Stream::kmeans);
  Clustering cl;
  cl.centroids = Matrix(k, points.cols());

  // k-means++ seeding
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.below(n));
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (double v : d2) total += v;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          acc += d2[i];
          if (d2[i] > 0.0 && acc > target) {
            pick = i;
            break;
          }
        }
        if (pick == n) {  // rounding at the top end
          for (std::size_t i = n; i-- > 0;)
            if (d2[i] > 0.0) {
              pick = i;
              break;
            }
        }
      } else {
        pick = static_cast<std::size_t>(rng.below(n));
      }
    }
    std::copy(points.row(pick).begin(), points.row(pick).end(), cl.centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], detail::sqdist(points.row(i), cl.centroids.row(c)));
  }

  std::vector<double> cost(n);
  auto assign = [&](std::vector<std::size_t>& a) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = detail::sqdist(points.row(i), cl.centroids.row(c));
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      a[i] = arg;
      cost[i] = best;
      inertia += best;
    }
    return inertia;
  };

  cl.assignments.assign(n, 0);
  cl.inertia = assign(cl.assignments);
  cl.inertia_history.push_back(cl.inertia);
  std::vector<std::size_t> next(n);
  for (std::size_t it = 0; it < max_iter; ++it) {
    Matrix sums(k, points.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[cl.assignments[i]];
      auto s = sums.row(cl.assignments[i]);
      auto p = points.row(i);
      for (std::size_t j = 0; j < p.size(); ++j) s[j] += p[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      auto s = sums.row(c);
      auto dst = cl.centroids.row(c);
      for (std::size_t j = 0; j < s.size(); ++j) dst[j] = s[j] / static_cast<double>(counts[c]);
    }
    std::set<std::size_t> taken;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken.contains(i)) continue;
        const double d = detail::sqdist(points.row(i), cl.centroids.row(cl.assignments[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      taken.insert(far);
      std::copy(points.row(far).begin(), points.row(far).end(), cl.centroids.row(c).begin());
    }
    cl.inertia = assign(next);
    cl.inertia_history.push_back(cl.inertia);
    cl.iterations = it + 1;
    const bool stable = next == cl.assignments;
    cl.assignments.swap(next);
    if (stable) break;
  }
  return cl;
}

// 2 I(labels; clusters) / (H(labels) + H(clusters)), natural logs. Defined as
// 0 when both entropies vanish.
inline double nmi(std::span<const int> truth, std::span<const std::size_t> clusters) {
  if (truth.size() != clusters.size()) {
    throw ShapeError("nmi: " + std::to_string(truth.size()) + " labels vs " +
                     std::to_string(clusters.size()) + " cluster assignments");
  }
  if (truth.empty()) throw ParameterError("nmi: empty input");
  const double n = static_cast<double>(truth.size());
  std::map<int, double> pa;
  std::map<std::size_t, double> pb;
  std::map<std::pair<int, std::size_t>, double> joint;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    pa[truth[i]] += 1.0;
    pb[clusters[i]] += 1.0;
    joint[{truth[i], clusters[i]}] += 1.0;
  }
  auto entropy = [n](const auto& counts) {
    double h = 0.0;
    for (const auto& [key, c] : counts) {
      const double p = c / n;
      h -= p * std::log(p);
    }
    return h;
  };
  const double ha = entropy(pa), hb = entropy(pb);
  if (ha + hb <= 0.0) return 0.0;
  double mi = 0.0;
  for (const auto& [key, c] : joint) {
    const double pij = c / n;
    mi += pij * std::log(pij / ((pa[key.first] / n) * (pb[key.second] / n)));
  }
  return std::clamp(2.0 * mi / (ha + hb), 0.0, 1.0);
}

inline std::size_t distinct_count(std::span<const int> labels) {
  return std::set<int>(labels.begin(), labels.end()).size();
}

inline constexpr std::uint64_t kDefaultNmiSeeds = 5;

// Recall@K plus NMI of k-means (k = number of distinct classes) averaged over
// k-means seeds 0..nmi_seeds-1.
inline RetrievalResult evaluate(const Matrix& embeddings, std::span<const int> labels,
                                std::span<const std::size_t> ks,
                                std::uint64_t nmi_seeds = kDefaultNmiSeeds) {
  RetrievalResult res;
  auto table = recall_at_k(embeddings, labels, ks);
  res.recall_at = std::move(table.recall_at);
  res.neighbor_table = std::move(table.neighbor_table);
  const std::size_t k = distinct_count(labels);
  for (std::uint64_t s = 0; s < nmi_seeds; ++s) {
    auto cl = kmeans(embeddings, k, s);
    res.nmi_per_seed.push_back(nmi(labels, cl.assignments));
    res.clusterings.push_back(std::move(cl));
  }
  if (!res.nmi_per_seed.empty()) {
    res.nmi = std::accumulate(res.nmi_per_seed.begin(), res.nmi_per_seed.end(), 0.0) /
              static_cast<double>(res.nmi_per_seed.size());
  }
  return res;
}

// Query/gallery protocol. Recall is measured against the gallery; NMI clusters
// the union of queries and gallery.
inline RetrievalResult evaluate(const Matrix& queries, std::span<const int> query_labels,
                                const Matrix& gallery, std::span<const int> gallery_labels,
                                std::span<const std::size_t> ks,
                                std::uint64_t nmi_seeds = kDefaultNmiSeeds) {
  RetrievalResult res;
  auto table = recall_at_k(queries, query_labels, ks, RetrievalMode::query_gallery,
                           GalleryRef{gallery, gallery_labels, false});
  res.recall_at = std::move(table.recall_at);
  res.neighbor_table = std::move(table.neighbor_table);
  const Matrix both[] = {queries, gallery};
  const Matrix all = vstack(std::span<const Matrix>(both));
  std::vector<int> all_labels(query_labels.begin(), query_labels.end());
  all_labels.insert(all_labels.end(), gallery_labels.begin(), gallery_labels.end());
  const std::size_t k = distinct_count(all_labels);
  for (std::uint64_t s = 0; s < nmi_seeds; ++s) {
    auto cl = kmeans(all, k, s);
    res.nmi_per_seed.push_back(nmi(all_labels, cl.assignments));
    res.clusterings.push_back(std::move(cl));
  }
  if (!res.nmi_per_seed.empty()) {
    res.nmi = std::accumulate(res.nmi_per_seed.begin(), res.nmi_per_seed.end(), 0.0) /
              static_cast<double>(res.nmi_per_seed.size());
  }
  return res;
}

}  // namespace proxylab
