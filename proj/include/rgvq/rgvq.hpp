#pragma once

// Soft quantization with Gumbel-Softmax assignment distributions and the
// structure-aware contrastive regularizer over those distributions.
//
// Training path:
//   logits   pi_i = -||h_i - e_j||^2                      (n x K)
//   sample   p~_i = softmax((log softmax(pi_i) + g_i) / tau), g ~ Gumbel(0, 1)
//   quantize z~_i = p~_i C
//   regularize with InfoNCE over p~ using per-node positive/negative sets.
// Inference falls back to argmax_j pi_ij.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rgvq/errors.hpp"
#include "rgvq/graph.hpp"
#include "rgvq/random.hpp"
#include "rgvq/tensor.hpp"
#include "rgvq/vq.hpp"

namespace rgvq {

// Negative squared distances, or cosine similarities times `cosine_scale`
// under cosine similarity. Differentiable in both h and the codebook.
inline Tensor assignment_logits(const Tensor& h, const Tensor& entries, Similarity sim = Similarity::Euclidean,
                                double cosine_scale = 10.0) {
  if (entries.rows() == 0) throw ContractError("assignment_logits: empty codebook");
  if (h.cols() != entries.cols())
    throw DimensionError("assignment_logits: embedding width " + std::to_string(h.cols()) + " vs codebook width " +
                         std::to_string(entries.cols()));
  if (sim == Similarity::Euclidean) return scale(pairwise_sq_dist(h, entries), -1.0);
  return scale(matmul(row_normalize(h), transpose(row_normalize(entries))), cosine_scale);
}

inline Tensor assignment_logits(const Tensor& h, const Codebook& cb, double cosine_scale = 10.0) {
  return assignment_logits(h, cb.entries, cb.similarity, cosine_scale);
}

enum class GumbelMode { Sampled, Expected };

struct AssignmentDistribution {
  Tensor probs;  // n x K, rows sum to 1
  double temperature = 1.0;
  GumbelMode mode = GumbelMode::Sampled;
};

// Gumbel(0, 1) noise, u clamped to [1e-10, 1 - 1e-10].
inline Tensor gumbel_noise(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 600));
  Tensor g(rows, cols);
  for (double& x : g.mutable_values()) {
    const double u = std::clamp(rng.uniform(), 1e-10, 1.0 - 1e-10);
    x = -std::log(-std::log(u));
  }
  return g;
}

// Expected mode drops the noise: softmax(log softmax(pi) / tau) = softmax(pi / tau).
inline AssignmentDistribution gumbel_softmax(const Tensor& logits, double tau, std::uint64_t seed,
                                             GumbelMode mode = GumbelMode::Sampled) {
  if (!(tau > 0.0)) throw ParameterError("gumbel_softmax: temperature must be > 0");
  Tensor perturbed = log_softmax_rows(logits);
  if (mode == GumbelMode::Sampled) perturbed = add(perturbed, gumbel_noise(logits.rows(), logits.cols(), seed));
  return {softmax_rows(perturbed, tau), tau, mode};
}

// z~ = p~ C: every codeword receives gradient in proportion to its weight.
inline Tensor soft_quantize(const AssignmentDistribution& dist, const Tensor& entries) {
  if (dist.probs.cols() != entries.rows())
    throw DimensionError("soft_quantize: distribution over " + std::to_string(dist.probs.cols()) + " codes but codebook has " +
                         std::to_string(entries.rows()));
  return matmul(dist.probs, entries);
}
inline Tensor soft_quantize(const AssignmentDistribution& dist, const Codebook& cb) { return soft_quantize(dist, cb.entries); }

// Deterministic inference: argmax of the logits, no noise.
inline Assignment infer_hard_assign(const Tensor& h, const Tensor& entries, Similarity sim = Similarity::Euclidean) {
  NoGradGuard guard;
  const Tensor logits = assignment_logits(h, entries, sim);
  Assignment a;
  a.codebook_size = entries.rows();
  a.index.resize(h.rows());
  for (std::size_t i = 0; i < h.rows(); ++i) a.index[i] = detail::argmax_row(logits.row(i));
  return a;
}
inline Assignment infer_hard_assign(const Tensor& h, const Codebook& cb) { return infer_hard_assign(h, cb.entries, cb.similarity); }

// ---------------------------------------------------------------------------
// Contrastive sets

enum class NegativeMode { Shared, PerAnchor };

struct ContrastiveConfig {
  std::size_t k_c = 20;
  double eps_quantile = 0.1;
  double gamma_quantile = 0.9;
  std::size_t m_samples = 100;  // non-neighbors sampled per node
  std::size_t probes = 32;      // anchors used to score shared negatives
  NegativeMode negative_mode = NegativeMode::Shared;
  std::uint64_t seed = 0;
  // Absolute thresholds override the quantiles when both are set.
  std::optional<double> eps;
  std::optional<double> gamma;

  void validate() const {
    if (eps.has_value() != gamma.has_value()) throw ParameterError("contrastive sets: set both eps and gamma or neither");
    if (eps) {
      if (!(*gamma > *eps) || !(*eps > 0.0)) throw ParameterError("contrastive sets: require gamma > eps > 0");
    } else if (!(gamma_quantile > eps_quantile) || eps_quantile < 0.0 || gamma_quantile > 1.0) {
      throw ParameterError("contrastive sets: require 0 <= eps quantile < gamma quantile <= 1");
    }
    if (k_c < 1) throw ParameterError("contrastive sets: k_c must be >= 1");
    if (m_samples < k_c) throw ParameterError("contrastive sets: M must be >= k_c");
  }
};

struct ContrastiveSets {
  std::vector<std::vector<std::size_t>> positives;
  std::vector<std::vector<std::size_t>> negatives;  // per anchor, predicate-checked
  std::vector<std::size_t> shared_negatives;        // empty in per-anchor mode
  double eps = 0.0;
  double gamma = 0.0;
  std::size_t k_c = 0;
  std::size_t m_samples = 0;
  NegativeMode negative_mode = NegativeMode::Shared;
  std::size_t scarce_positive_nodes = 0;  // fewer than k_c positives
  std::size_t degenerate_nodes = 0;       // no negatives or no positives
  bool negatives_empty = false;           // no node has any negative
};

inline double feature_distance(const Tensor& x, std::size_t u, std::size_t v) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.cols(); ++j) {
    const double d = x(u, j) - x(v, j);
    s += d * d;
  }
  return std::sqrt(s);
}

// Linear-interpolated quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ContractError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline bool is_positive_pair(const Graph& g, std::size_t v, std::size_t u, double eps) {
  return u != v && (g.has_edge(v, u) || feature_distance(g.features, v, u) < eps);
}
inline bool is_negative_pair(const Graph& g, std::size_t v, std::size_t u, double gamma) {
  return u != v && !g.has_edge(v, u) && feature_distance(g.features, v, u) > gamma;
}

// Positives: direct neighbors (closest features first), then sampled
// non-neighbors within eps, truncated to k_c. Negatives: one shared list
// scored against random probe anchors, then filtered per anchor so that every
// emitted pair satisfies the non-edge and distance > gamma predicate.
inline ContrastiveSets build_contrastive_sets(const Graph& g, const ContrastiveConfig& cfg) {
  cfg.validate();
  const std::size_t n = g.n;
  const Tensor& x = g.features;
  ContrastiveSets s;
  s.k_c = cfg.k_c;
  s.m_samples = cfg.m_samples;
  s.negative_mode = cfg.negative_mode;
  s.positives.resize(n);
  s.negatives.resize(n);

  // Sampled non-neighbors per node, with distances.
  std::vector<std::vector<std::pair<double, std::size_t>>> sampled(n);
  std::vector<double> pooled;
  for (std::size_t v = 0; v < n; ++v) {
    Rng rng(derive_seed(cfg.seed, 1000 + v));
    std::vector<std::size_t> candidates;
    for (std::size_t u = 0; u < n; ++u)
      if (u != v && !g.has_edge(v, u)) candidates.push_back(u);
    for (std::size_t pick : rng.sample_without_replacement(candidates.size(), cfg.m_samples)) {
      const std::size_t u = candidates[pick];
      const double d = feature_distance(x, v, u);
      sampled[v].emplace_back(d, u);
      pooled.push_back(d);
    }
  }

  if (cfg.eps) {
    s.eps = *cfg.eps;
    s.gamma = *cfg.gamma;
  } else if (!pooled.empty()) {
    s.eps = quantile(pooled, cfg.eps_quantile);
    s.gamma = quantile(pooled, cfg.gamma_quantile);
  } else {
    s.eps = 0.0;
    s.gamma = std::numeric_limits<double>::infinity();
  }

  for (std::size_t v = 0; v < n; ++v) {
    std::vector<std::pair<double, std::size_t>> structural;
    for (std::size_t u : g.neighbors_of(v)) structural.emplace_back(feature_distance(x, v, u), u);
    std::sort(structural.begin(), structural.end());
    std::vector<std::pair<double, std::size_t>> semantic;
    for (const auto& du : sampled[v])
      if (du.first < s.eps) semantic.push_back(du);
    std::sort(semantic.begin(), semantic.end());
    auto& pos = s.positives[v];
    for (const auto& du : structural) {
      if (pos.size() >= cfg.k_c) break;
      pos.push_back(du.second);
    }
    for (const auto& du : semantic) {
      if (pos.size() >= cfg.k_c) break;
      pos.push_back(du.second);
    }
    if (pos.size() < cfg.k_c) ++s.scarce_positive_nodes;
  }

  if (cfg.negative_mode == NegativeMode::PerAnchor) {
    for (std::size_t v = 0; v < n; ++v)
      for (const auto& [d, u] : sampled[v]) {
        if (s.negatives[v].size() >= cfg.k_c) break;
        if (d > s.gamma) s.negatives[v].push_back(u);
      }
  } else if (n > 0) {
    Rng rng(derive_seed(cfg.seed, 999));
    const auto pool = rng.sample_without_replacement(n, std::max(cfg.m_samples, cfg.k_c));
    const auto probes = rng.sample_without_replacement(n, cfg.probes);
    std::vector<std::pair<std::size_t, std::size_t>> scored;  // (probe passes, pool position)
    for (std::size_t i = 0; i < pool.size(); ++i) {
      std::size_t pass = 0;
      for (std::size_t v : probes) pass += is_negative_pair(g, v, pool[i], s.gamma);
      if (pass > 0) scored.emplace_back(pass, i);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; i < scored.size() && s.shared_negatives.size() < cfg.k_c; ++i)
      s.shared_negatives.push_back(pool[scored[i].second]);
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t u : s.shared_negatives)
        if (is_negative_pair(g, v, u, s.gamma)) s.negatives[v].push_back(u);
  }

  bool any_negative = false;
  for (std::size_t v = 0; v < n; ++v) {
    any_negative = any_negative || !s.negatives[v].empty();
    if (s.negatives[v].empty() || s.positives[v].empty()) ++s.degenerate_nodes;
  }
  s.negatives_empty = !any_negative;
  return s;
}

// ---------------------------------------------------------------------------
// InfoNCE regularizer

struct InfoNceConfig {
  double sim_temperature = 0.5;
  Reduction reduction = Reduction::MeanOverNodes;
};

struct InfoNceResult {
  Tensor value;
  std::size_t degenerate_nodes = 0;  // skipped: no positives or no negatives
};

// L_i = -log( sum_{j in P} exp(s_ij) / sum_{j in P u N} exp(s_ij) ),
// s_ij = cos(p~_i, p~_j) / sim_temperature. Mean (default) or sum over nodes;
// degenerate nodes contribute 0.
inline InfoNceResult infonce_reg(const AssignmentDistribution& dist, const ContrastiveSets& sets, const InfoNceConfig& cfg = {}) {
  if (!(cfg.sim_temperature > 0.0)) throw ParameterError("infonce_reg: similarity temperature must be > 0");
  const Tensor& p = dist.probs;
  const std::size_t n = p.rows();
  if (sets.positives.size() != n || sets.negatives.size() != n)
    throw DimensionError("infonce_reg: contrastive sets cover " + std::to_string(sets.positives.size()) + " nodes, distribution has " +
                         std::to_string(n));
  InfoNceResult out;
  std::vector<std::size_t> pos_anchor, pos_other, all_anchor, all_other;
  std::vector<std::size_t> pos_off{0}, all_off{0};
  for (std::size_t i = 0; i < n; ++i) {
    if (sets.positives[i].empty() || sets.negatives[i].empty()) {
      ++out.degenerate_nodes;
      continue;
    }
    for (std::size_t j : sets.positives[i]) {
      pos_anchor.push_back(i);
      pos_other.push_back(j);
      all_anchor.push_back(i);
      all_other.push_back(j);
    }
    for (std::size_t j : sets.negatives[i]) {
      all_anchor.push_back(i);
      all_other.push_back(j);
    }
    pos_off.push_back(pos_anchor.size());
    all_off.push_back(all_anchor.size());
  }
  if (pos_off.size() == 1) {
    out.value = Tensor::scalar(0.0);
    return out;
  }
  const Tensor unit = row_normalize(p);
  const double inv_t = 1.0 / cfg.sim_temperature;
  const Tensor pos_sim = scale(row_dot(gather_rows(unit, pos_anchor), gather_rows(unit, pos_other)), inv_t);
  const Tensor all_sim = scale(row_dot(gather_rows(unit, all_anchor), gather_rows(unit, all_other)), inv_t);
  const Tensor per_node = sub(segment_logsumexp(all_sim, all_off), segment_logsumexp(pos_sim, pos_off));
  const double norm = cfg.reduction == Reduction::Sum ? 1.0 : 1.0 / static_cast<double>(n);
  out.value = scale(sum(per_node), norm);
  return out;
}

// ---------------------------------------------------------------------------
// Combined objective

struct LossWeights {
  double link = 0.01;
  double feature = 100.0;
  double reg = 1.0;
  double commitment = 0.1;
  double vocabulary = 0.9;
  double ortho = 0.1;

  // Weights for the deterministic baseline (no regularizer).
  static LossWeights vanilla() {
    LossWeights w;
    w.reg = 0.0;
    return w;
  }
};

// Parts left default-constructed (0 x 0) are treated as absent.
struct LossParts {
  Tensor link, feature, reg, commitment, codebook, ortho;
};

inline Tensor rgvq_total_loss(const LossParts& parts, const LossWeights& w) {
  Tensor total = Tensor::scalar(0.0);
  auto accumulate = [&total](const Tensor& part, double weight) {
    if (part.size() == 0 || weight == 0.0) return;
    total = add(total, scale(part, weight));
  };
  accumulate(parts.link, w.link);
  accumulate(parts.feature, w.feature);
  accumulate(parts.reg, w.reg);
  accumulate(parts.commitment, w.commitment);
  accumulate(parts.codebook, w.vocabulary);
  accumulate(parts.ortho, w.ortho);
  return total;
}

}  // namespace rgvq
