#pragma once

// Codebook-update dynamics and token co-assignment diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "rgvq/encoder.hpp"
#include "rgvq/errors.hpp"
#include "rgvq/graph.hpp"
#include "rgvq/linalg.hpp"
#include "rgvq/random.hpp"
#include "rgvq/tensor.hpp"
#include "rgvq/vq.hpp"

namespace rgvq {

// K x K matrix with a single 1 at (k, k).
inline Tensor kronecker_selector(std::size_t k, std::size_t codebook_size) {
  if (k >= codebook_size) throw ContractError("kronecker_selector: code " + std::to_string(k) + " out of range for K=" + std::to_string(codebook_size));
  Tensor s(codebook_size, codebook_size);
  s.at(k, k) = 1.0;
  return s;
}

// C <- C - eta * E[S_k C] + eta * E[delta_k^T h], expectations as batch means.
// Equivalent to one gradient step of size eta on
//   (1 / 2B) sum_i ||sg[h_i] - e_{k_i}||^2.
inline Codebook analytic_update_step(const Codebook& cb, const Tensor& h, const Assignment& a, double eta) {
  if (!(eta > 0.0)) throw ParameterError("analytic_update_step: eta must be > 0");
  const std::size_t k = cb.size(), d = cb.dim(), b = h.rows();
  if (h.cols() != d || a.index.size() != b) throw DimensionError("analytic_update_step: batch does not match codebook");
  if (b == 0) return {cb.entries.detach(), cb.similarity};
  const double inv_b = 1.0 / static_cast<double>(b);
  std::vector<double> selector_mean(k, 0.0);
  std::vector<double> pull(k * d, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t code = a.index[i];
    if (code >= k) throw ContractError("analytic_update_step: assignment out of range");
    selector_mean[code] += inv_b;
    for (std::size_t t = 0; t < d; ++t) pull[code * d + t] += inv_b * h(i, t);
  }
  Codebook next{cb.entries.detach(), cb.similarity};
  auto e = next.entries.mutable_values();
  for (std::size_t j = 0; j < k; ++j) {
    if (selector_mean[j] == 0.0) continue;  // zero row of E[S_k]: entry untouched
    for (std::size_t t = 0; t < d; ++t) e[j * d + t] += -eta * selector_mean[j] * e[j * d + t] + eta * pull[j * d + t];
  }
  return next;
}

inline double entropy_of_counts(std::span<const std::size_t> counts) { return std::log(perplexity_from_counts(counts)); }

// ---------------------------------------------------------------------------
// Cocoon simulation
//
// K latent sources, one per code. Each step draws a batch whose source ids
// follow `bias`, emits h = mu_source + noise, hard-assigns h to the nearest
// codeword, applies the analytic codebook update, and pulls every source
// center toward the codewords its samples selected (commitment direction).

struct CocoonConfig {
  std::size_t codebook_size = 8;
  std::size_t dim = 4;
  std::vector<double> bias;  // empty = uniform
  std::size_t steps = 500;
  double eta = 0.05;
  std::size_t batch = 64;
  double noise = 0.1;
  double source_spread = 0.5;  // initial offset of source centers from their codewords
  double encoder_pull = 0.05;
  std::uint64_t seed = 0;
};

struct CocoonTrajectory {
  std::vector<double> usage_entropy;                   // per step, from batch counts
  std::vector<std::vector<double>> cumulative_update;  // per step, per code: sum of ||e_k(t+1) - e_k(t)||
  std::vector<std::size_t> total_counts;               // per code over the whole run
  std::vector<bool> never_selected_frozen;             // per code: never selected and bit-identical throughout
  double final_perplexity = 0.0;                       // from total_counts
};

inline CocoonTrajectory cocoon_sim(const CocoonConfig& cfg) {
  const std::size_t k = cfg.codebook_size, d = cfg.dim;
  if (k == 0 || d == 0 || cfg.batch == 0) throw ParameterError("cocoon_sim: sizes must be positive");
  std::vector<double> bias = cfg.bias.empty() ? std::vector<double>(k, 1.0 / static_cast<double>(k)) : cfg.bias;
  if (bias.size() != k) throw DimensionError("cocoon_sim: bias has " + std::to_string(bias.size()) + " entries for K=" + std::to_string(k));
  const double total = std::accumulate(bias.begin(), bias.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9 || std::any_of(bias.begin(), bias.end(), [](double p) { return p < 0.0; }))
    throw ParameterError("cocoon_sim: bias must be a probability distribution");

  Rng rng(derive_seed(cfg.seed, 700));
  Codebook cb{Tensor(k, d), Similarity::Euclidean};
  for (double& x : cb.entries.mutable_values()) x = rng.normal();
  std::vector<double> mu(k * d);
  for (std::size_t s = 0; s < k; ++s)
    for (std::size_t t = 0; t < d; ++t) mu[s * d + t] = cb.entries(s, t) + cfg.source_spread * rng.normal();
  const std::vector<double> initial(cb.entries.values().begin(), cb.entries.values().end());

  CocoonTrajectory out;
  out.total_counts.assign(k, 0);
  std::vector<double> cumulative(k, 0.0);
  std::vector<bool> frozen(k, true);
  Tensor h(cfg.batch, d);
  std::vector<std::size_t> source(cfg.batch);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      source[i] = rng.categorical(bias);
      for (std::size_t t = 0; t < d; ++t) h.at(i, t) = mu[source[i] * d + t] + cfg.noise * rng.normal();
    }
    const Assignment a = nearest_assign(h, cb);
    const auto counts = a.counts();
    out.usage_entropy.push_back(entropy_of_counts(counts));
    for (std::size_t j = 0; j < k; ++j) out.total_counts[j] += counts[j];

    Codebook next = analytic_update_step(cb, h, a, cfg.eta);
    for (std::size_t j = 0; j < k; ++j) {
      double sq = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = next.entries(j, t) - cb.entries(j, t);
        sq += diff * diff;
      }
      cumulative[j] += std::sqrt(sq);
    }
    out.cumulative_update.push_back(cumulative);

    // Encoder pull: each source center moves toward the mean selected codeword.
    std::vector<double> target(k * d, 0.0);
    std::vector<std::size_t> drawn(k, 0);
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      ++drawn[source[i]];
      for (std::size_t t = 0; t < d; ++t) target[source[i] * d + t] += cb.entries(a.index[i], t);
    }
    for (std::size_t s = 0; s < k; ++s) {
      if (drawn[s] == 0) continue;
      for (std::size_t t = 0; t < d; ++t) {
        const double m = target[s * d + t] / static_cast<double>(drawn[s]);
        mu[s * d + t] += cfg.encoder_pull * (m - mu[s * d + t]);
      }
    }
    cb = std::move(next);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t t = 0; t < d && frozen[j]; ++t)
        if (cb.entries(j, t) != initial[j * d + t]) frozen[j] = false;
  }
  for (std::size_t j = 0; j < k; ++j) out.never_selected_frozen.push_back(out.total_counts[j] == 0 && frozen[j]);
  out.final_perplexity = perplexity_from_counts(out.total_counts);
  return out;
}

// ---------------------------------------------------------------------------
// Co-assignment check

struct BoundParams {
  double delta_c = 0.0;  // half the minimum pairwise codeword distance
  double c1 = 0.0;       // C_sigma * max spectral norm of W_self
  double c2 = 0.0;       // C_sigma * max spectral norm of W_neigh * C_rho * C_g
  double b_x = 0.0;      // max feature row norm
  std::vector<double> branching;  // d_l per layer (max degree)
  std::size_t depth = 0;

  // 1 - (2 B_x / delta_c) (C_1 + sum_l C_2^l D_l), D_l = d_l ... d_1.
  double global_bound() const {
    double acc = c1, d_prod = 1.0, c_pow = 1.0;
    for (std::size_t l = 0; l < depth; ++l) {
      d_prod *= branching[l];
      c_pow *= c2;
      acc += c_pow * d_prod;
    }
    return 1.0 - 2.0 * b_x / delta_c * acc;
  }

  // 1 - (C_1 ||x_1 - x_2|| + C_2 * child_distance_sum) / delta_c
  double pair_bound(double feature_distance, double child_distance_sum) const {
    return 1.0 - (c1 * feature_distance + c2 * child_distance_sum) / delta_c;
  }
};

inline double min_pairwise_distance(const Tensor& entries) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < entries.rows(); ++i)
    for (std::size_t j = i + 1; j < entries.rows(); ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < entries.cols(); ++t) {
        const double d = entries(i, t) - entries(j, t);
        s += d * d;
      }
      best = std::min(best, std::sqrt(s));
    }
  return best;
}

// Constants measured from the instantiated network: activations treated as
// 1-Lipschitz, aggregator and message maps as 1-Lipschitz, d_l = max degree.
inline BoundParams measure_bound_params(const Graph& g, const EncoderParams& enc, const Codebook& cb) {
  if (cb.size() < 2) throw ContractError("coassign_check: safety radius undefined for K < 2");
  BoundParams bp;
  bp.delta_c = min_pairwise_distance(cb.entries) / 2.0;
  for (const auto& layer : enc.layers) {
    bp.c1 = std::max(bp.c1, spectral_norm(layer.w_self));
    bp.c2 = std::max(bp.c2, spectral_norm(layer.w_neigh));
  }
  for (std::size_t v = 0; v < g.n; ++v) {
    double s = 0.0;
    for (double x : g.features.row(v)) s += x * x;
    bp.b_x = std::max(bp.b_x, std::sqrt(s));
  }
  bp.depth = enc.layers.size();
  bp.branching.assign(bp.depth, static_cast<double>(std::max<std::size_t>(g.max_degree(), 1)));
  return bp;
}

struct CoassignReport {
  BoundParams params;
  std::size_t pairs = 0;
  std::size_t pairs_within_radius = 0;    // Delta <= delta_c
  std::size_t literal_violations = 0;     // Delta <= delta_c but different tokens
  std::size_t anchored_pairs = 0;         // min_i ||h_i - e_{k_i}|| + Delta < delta_c
  std::size_t anchored_violations = 0;    // anchored but different tokens (geometrically impossible)
  double coassign_rate = 0.0;             // over all pairs
  double within_radius_rate = 0.0;        // P[Delta <= delta_c] over all pairs
  double markov_bound = 0.0;              // 1 - mean(Delta) / delta_c
  double global_bound = 0.0;

  nlohmann::json to_json() const {
    return {{"delta_c", params.delta_c},
            {"c1", params.c1},
            {"c2", params.c2},
            {"b_x", params.b_x},
            {"depth", params.depth},
            {"branching", params.branching},
            {"pairs", pairs},
            {"pairs_within_radius", pairs_within_radius},
            {"literal_violations", literal_violations},
            {"anchored_pairs", anchored_pairs},
            {"anchored_violations", anchored_violations},
            {"coassign_rate", coassign_rate},
            {"within_radius_rate", within_radius_rate},
            {"markov_bound", markov_bound},
            {"global_bound", global_bound}};
  }
};

// Scans every node pair. The literal check tests "Delta <= delta_c implies
// the same token"; the anchored check adds the distance from one endpoint to
// its own codeword, which makes the implication hold by the triangle
// inequality.
inline CoassignReport coassign_check(const Tensor& h, const Codebook& cb, const BoundParams& bp) {
  if (cb.size() < 2) throw ContractError("coassign_check: safety radius undefined for K < 2");
  const Assignment a = nearest_assign(h, cb);
  const std::size_t n = h.rows();
  std::vector<double> anchor(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < h.cols(); ++t) {
      const double diff = h(i, t) - cb.entries(a.index[i], t);
      s += diff * diff;
    }
    anchor[i] = std::sqrt(s);
  }
  CoassignReport r;
  r.params = bp;
  std::size_t same = 0;
  double delta_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < h.cols(); ++t) {
        const double diff = h(i, t) - h(j, t);
        s += diff * diff;
      }
      const double delta = std::sqrt(s);
      const bool co = a.index[i] == a.index[j];
      ++r.pairs;
      same += co;
      delta_sum += delta;
      if (delta <= bp.delta_c) {
        ++r.pairs_within_radius;
        if (!co) ++r.literal_violations;
      }
      if (std::min(anchor[i], anchor[j]) + delta < bp.delta_c) {
        ++r.anchored_pairs;
        if (!co) ++r.anchored_violations;
      }
    }
  if (r.pairs > 0) {
    const double p = static_cast<double>(r.pairs);
    r.coassign_rate = static_cast<double>(same) / p;
    r.within_radius_rate = static_cast<double>(r.pairs_within_radius) / p;
    r.markov_bound = 1.0 - delta_sum / p / bp.delta_c;
  }
  r.global_bound = bp.global_bound();
  return r;
}

inline CoassignReport coassign_check(const Graph& g, const EncoderParams& enc, const Codebook& cb) {
  const BoundParams bp = measure_bound_params(g, enc, cb);
  Tensor h;
  {
    NoGradGuard guard;
    h = encode(g, enc);
  }
  return coassign_check(h, cb, bp);
}

}  // namespace rgvq
