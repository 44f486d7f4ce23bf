#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rgvq/encoder.hpp"
#include "rgvq/errors.hpp"
#include "rgvq/graph.hpp"
#include "rgvq/random.hpp"
#include "rgvq/tensor.hpp"

namespace rgvq {

enum class Similarity { Euclidean, Cosine };

inline const char* to_string(Similarity s) { return s == Similarity::Euclidean ? "euclidean" : "cosine"; }

// K x d codewords. Under cosine similarity the assignment compares normalized
// vectors; the stored entries stay unnormalized.
struct Codebook {
  Tensor entries;
  Similarity similarity = Similarity::Euclidean;

  std::size_t size() const { return entries.rows(); }
  std::size_t dim() const { return entries.cols(); }
};

struct Assignment {
  std::vector<std::size_t> index;  // one code per node
  std::size_t codebook_size = 0;

  std::vector<std::size_t> counts() const {
    std::vector<std::size_t> c(codebook_size, 0);
    for (std::size_t k : index) ++c[k];
    return c;
  }
  std::size_t active_codes() const {
    std::size_t a = 0;
    for (std::size_t c : counts()) a += c > 0;
    return a;
  }
};

namespace detail {
inline void require_codebook(const Tensor& h, const Codebook& cb, const char* what) {
  if (cb.size() == 0) throw ContractError(std::string(what) + ": empty codebook");
  if (h.cols() != cb.dim())
    throw DimensionError(std::string(what) + ": embedding width " + std::to_string(h.cols()) + " but codebook width " +
                         std::to_string(cb.dim()));
}

// Lowest index wins ties.
inline std::size_t argmin_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] < row[best]) best = j;
  return best;
}
inline std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}
}  // namespace detail

// Nearest codeword per row; ties go to the lowest index.
inline Assignment nearest_assign(const Tensor& h, const Codebook& cb) {
  detail::require_codebook(h, cb, "nearest_assign");
  NoGradGuard guard;
  Assignment a;
  a.codebook_size = cb.size();
  a.index.resize(h.rows());
  if (cb.similarity == Similarity::Euclidean) {
    const Tensor d = pairwise_sq_dist(h, cb.entries);
    for (std::size_t i = 0; i < h.rows(); ++i) a.index[i] = detail::argmin_row(d.row(i));
  } else {
    const Tensor cos = matmul(row_normalize(h), transpose(row_normalize(cb.entries)));
    for (std::size_t i = 0; i < h.rows(); ++i) a.index[i] = detail::argmax_row(cos.row(i));
  }
  return a;
}

// Forward: the selected codewords. Backward: identity into h, nothing into
// the codebook.
inline Tensor ste_quantize(const Tensor& h, const Codebook& cb, const Assignment& a) {
  detail::require_codebook(h, cb, "ste_quantize");
  if (a.index.size() != h.rows()) throw DimensionError("ste_quantize: assignment length differs from embedding rows");
  Tensor q;
  {
    NoGradGuard guard;  // the gathered rows are constants here
    q = gather_rows(cb.entries, a.index);
  }
  return straight_through(h, q);
}

enum class Reduction { Sum, MeanOverNodes };

struct VqAuxLosses {
  Tensor codebook;    // ||sg[h] - q||^2, reaches only the codebook
  Tensor commitment;  // beta * ||h - sg[q]||^2, reaches only h
};

// `quantized` must be differentiable w.r.t. the codebook (gathered rows or a
// soft mixture), not the straight-through output.
inline VqAuxLosses vq_aux_losses(const Tensor& h, const Tensor& quantized, double beta, Reduction reduction = Reduction::Sum) {
  detail::require_same_shape(h, quantized, "vq_aux_losses");
  if (beta < 0.0) throw ParameterError("vq_aux_losses: beta must be >= 0");
  const double norm = reduction == Reduction::Sum ? 1.0 : 1.0 / static_cast<double>(std::max<std::size_t>(h.rows(), 1));
  VqAuxLosses out;
  out.codebook = scale(sum_squares(sub(stop_gradient(h), quantized)), norm);
  out.commitment = scale(sum_squares(sub(h, stop_gradient(quantized))), beta * norm);
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction

struct LinkSample {
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  std::vector<double> target;  // 1 for edges, 0 for non-edges

  std::size_t size() const { return src.size(); }
};

// Every pair u < v, labeled by adjacency.
inline LinkSample all_pairs(const Graph& g) {
  LinkSample s;
  for (std::size_t u = 0; u < g.n; ++u)
    for (std::size_t v = u + 1; v < g.n; ++v) {
      s.src.push_back(u);
      s.dst.push_back(v);
      s.target.push_back(g.has_edge(u, v) ? 1.0 : 0.0);
    }
  return s;
}

// Each undirected edge once plus `neg_per_edge` uniformly drawn non-edges per
// edge. Gives up on negatives after a bounded number of rejections (dense graphs).
inline LinkSample sample_link_pairs(const Graph& g, std::size_t neg_per_edge, Rng& rng) {
  if (neg_per_edge < 1) throw ParameterError("sample_link_pairs: need at least one negative per edge");
  LinkSample s;
  for (std::size_t u = 0; u < g.n; ++u)
    for (std::size_t v : g.neighbors_of(u))
      if (u < v) {
        s.src.push_back(u);
        s.dst.push_back(v);
        s.target.push_back(1.0);
      }
  if (g.n < 2) return s;
  const std::size_t wanted = s.size() * neg_per_edge;
  std::size_t found = 0, attempts = 0;
  while (found < wanted && attempts < 100 * wanted) {
    ++attempts;
    const std::size_t u = rng.index(g.n), v = rng.index(g.n);
    if (u == v || g.has_edge(u, v)) continue;
    s.src.push_back(u);
    s.dst.push_back(v);
    s.target.push_back(0.0);
    ++found;
  }
  return s;
}

// mean over pairs of (a_uv - sigmoid(z_u . z_v))^2
inline Tensor link_loss(const Tensor& z, const LinkSample& pairs) {
  if (pairs.size() == 0) return Tensor::scalar(0.0);
  const Tensor logits = row_dot(gather_rows(z, pairs.src), gather_rows(z, pairs.dst));
  const Tensor diff = sub(Tensor(pairs.size(), 1, pairs.target), sigmoid(logits));
  return mean(mul(diff, diff));
}

// (1/N) ||recon - X||^2
inline Tensor feature_loss(const Tensor& recon, const Tensor& x) {
  detail::require_same_shape(recon, x, "feature_loss");
  return scale(sum_squares(sub(recon, x)), 1.0 / static_cast<double>(std::max<std::size_t>(x.rows(), 1)));
}

enum class LinkMode { Sampled, Dense };

struct ReconConfig {
  LinkMode mode = LinkMode::Sampled;
  std::size_t neg_samples = 5;
  std::size_t dense_limit = 512;
};

struct ReconLosses {
  Tensor feature;
  Tensor link;
};

inline ReconLosses recon_losses(const Graph& g, const Tensor& z, const DecoderParams& dec, const ReconConfig& cfg, Rng& rng) {
  if (z.rows() != g.n) throw DimensionError("recon_losses: " + std::to_string(z.rows()) + " embeddings for " + std::to_string(g.n) + " nodes");
  ReconLosses out;
  out.feature = feature_loss(decode(z, dec), g.features);
  if (cfg.mode == LinkMode::Dense) {
    if (g.n > cfg.dense_limit)
      throw ParameterError("recon_losses: dense link reconstruction limited to " + std::to_string(cfg.dense_limit) + " nodes");
    out.link = link_loss(z, all_pairs(g));
  } else {
    if (cfg.neg_samples < 1) throw ParameterError("recon_losses: neg_samples must be >= 1 in sampled mode");
    out.link = link_loss(z, sample_link_pairs(g, cfg.neg_samples, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Utilization

// exp of the Shannon entropy of a probability vector; 0 log 0 = 0.
inline double perplexity_from_probs(std::span<const double> p) {
  if (p.empty()) throw ContractError("perplexity: empty distribution");
  double h = 0.0;
  for (double q : p)
    if (q > 0.0) h -= q * std::log(q);
  return std::exp(h);
}

inline double perplexity_from_counts(std::span<const std::size_t> counts) {
  if (counts.empty()) throw ContractError("perplexity: empty usage counts");
  double total = 0.0;
  for (std::size_t c : counts) total += static_cast<double>(c);
  if (total == 0.0) throw ContractError("perplexity: no assignments");
  std::vector<double> p(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) p[k] = static_cast<double>(counts[k]) / total;
  return perplexity_from_probs(p);
}

inline double perplexity(const Assignment& a) {
  if (a.index.empty()) throw ContractError("perplexity: empty assignment");
  const auto c = a.counts();
  return perplexity_from_counts(c);
}

// ---------------------------------------------------------------------------
// k-means initialization

struct KMeansResult {
  Tensor centroids;            // K x d
  std::vector<double> inertia; // after each assignment pass
  std::vector<std::size_t> labels;
};

// k-means++ seeding followed by Lloyd iterations. An empty cluster is
// re-seeded with the point farthest from its centroid.
inline KMeansResult kmeans(const Tensor& points, std::size_t k, std::size_t iters, std::uint64_t seed) {
  const std::size_t n = points.rows(), d = points.cols();
  if (k == 0) throw ContractError("kmeans: K must be positive");
  if (n < k) throw ContractError("kmeans: " + std::to_string(n) + " points cannot seed " + std::to_string(k) + " centroids");
  NoGradGuard guard;
  Rng rng(derive_seed(seed, 300));
  auto sqdist = [&](std::size_t i, const std::vector<double>& c, std::size_t j) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) {
      const double diff = points(i, t) - c[j * d + t];
      s += diff * diff;
    }
    return s;
  };

  std::vector<double> cent(k * d);
  std::vector<bool> chosen(n, false);
  std::size_t first = rng.index(n);
  chosen[first] = true;
  std::copy_n(points.row(first).begin(), d, cent.begin());
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i) best[i] = std::min(best[i], sqdist(i, cent, c - 1));
    std::vector<double> w(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += (w[i] = chosen[i] ? 0.0 : best[i]);
    std::size_t pick;
    if (total > 0.0) {
      pick = rng.categorical(w);
    } else {  // every remaining point coincides with a centroid
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) free.push_back(i);
      pick = free[rng.index(free.size())];
    }
    chosen[pick] = true;
    std::copy_n(points.row(pick).begin(), d, cent.begin() + static_cast<std::ptrdiff_t>(c * d));
  }

  KMeansResult r;
  r.labels.assign(n, 0);
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < std::max<std::size_t>(iters, 1); ++it) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      double bd = sqdist(i, cent, 0);
      for (std::size_t j = 1; j < k; ++j) {
        const double dj = sqdist(i, cent, j);
        if (dj < bd) {
          bd = dj;
          arg = j;
        }
      }
      r.labels[i] = arg;
      dist[i] = bd;
      inertia += bd;
    }
    r.inertia.push_back(inertia);
    if (it + 1 >= iters) break;

    std::vector<double> next(k * d, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[r.labels[i]];
      for (std::size_t t = 0; t < d; ++t) next[r.labels[i] * d + t] += points(i, t);
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] == 0) {
        const std::size_t far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        std::copy_n(points.row(far).begin(), d, next.begin() + static_cast<std::ptrdiff_t>(j * d));
        dist[far] = 0.0;
        continue;
      }
      for (std::size_t t = 0; t < d; ++t) next[j * d + t] /= static_cast<double>(count[j]);
    }
    cent = std::move(next);
  }
  r.centroids = Tensor(k, d, std::move(cent));
  return r;
}

inline Codebook kmeans_init(const Tensor& h, std::size_t k, std::size_t iters, std::uint64_t seed,
                            Similarity similarity = Similarity::Euclidean) {
  const Tensor pts = similarity == Similarity::Cosine ? [&] { NoGradGuard g; return row_normalize(h); }() : h.detach();
  Codebook cb;
  cb.entries = kmeans(pts, k, iters, seed).centroids;
  cb.entries.set_requires_grad(true);
  cb.similarity = similarity;
  return cb;
}

// ---------------------------------------------------------------------------
// Orthogonality

struct OrthoPenalty {
  Tensor value;                  // ||C_hat C_hat^T - I||_F^2 over non-degenerate rows
  std::size_t zero_norm_rows = 0;
};

inline OrthoPenalty ortho_penalty(const Tensor& entries) {
  const std::size_t k = entries.rows();
  OrthoPenalty out;
  Tensor mask(k, k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (double v : entries.row(i)) s += v * v;
    if (std::sqrt(s) < 1e-12)
      ++out.zero_norm_rows;  // its Gram row is zero: orthogonal to everything
    else
      mask.at(i, i) = 1.0;
  }
  const Tensor unit = row_normalize(entries);
  const Tensor gram = matmul(unit, transpose(unit));
  out.value = sum_squares(sub(gram, mask));
  return out;
}

inline OrthoPenalty ortho_penalty(const Codebook& cb) { return ortho_penalty(cb.entries); }

}  // namespace rgvq
