#pragma once

// Finite-difference checks over every differentiable op and the full
// training objective on a 6-node toy graph.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rgvq/baselines.hpp"
#include "rgvq/encoder.hpp"
#include "rgvq/graph.hpp"
#include "rgvq/random.hpp"
#include "rgvq/rgvq.hpp"
#include "rgvq/tensor.hpp"
#include "rgvq/vq.hpp"

namespace rgvq {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass() const { return max_rel_error < tolerance; }
};

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (double& x : t.mutable_values()) x = rng.uniform(lo, hi);
  return t;
}

inline Tensor random_leaf(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return random_tensor(rows, cols, rng, lo, hi).set_requires_grad(true);
}

// sum(t * w) with a fixed random w, so no gradient entry cancels by symmetry.
inline Tensor probe(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(t, random_tensor(t.rows(), t.cols(), rng)));
}

// Undirected 6-cycle plus one chord, 4 features per node.
inline Graph toy_graph(std::uint64_t seed = 7) {
  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> edges{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}, {0, 3}};
  return make_graph(6, edges, random_tensor(6, 4, rng));
}

inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 1, double op_tol = 1e-4, double composite_tol = 1e-3) {
  std::vector<GradCheckResult> out;
  Rng rng(seed);
  auto check = [&](const std::string& name, auto&& analytic, auto&& numeric, const Tensor& x, double tol) {
    out.push_back({name, finite_diff_check(analytic, numeric, x), tol});
  };
  auto op = [&](const std::string& name, auto&& f, const Tensor& x) { check(name, f, f, x, op_tol); };

  const Tensor a = random_leaf(4, 3, rng);
  const Tensor b = random_leaf(3, 5, rng);
  const Tensor c = random_leaf(4, 3, rng);
  const Tensor row = random_leaf(1, 3, rng);
  const Tensor pos = random_leaf(4, 3, rng, 0.2, 2.0);

  op("matmul.lhs", [&](const Tensor& x) { return probe(matmul(x, b), 11); }, a);
  op("matmul.rhs", [&](const Tensor& x) { return probe(matmul(a, x), 11); }, b);
  op("transpose", [&](const Tensor& x) { return probe(transpose(x), 12); }, a);
  op("add", [&](const Tensor& x) { return probe(add(x, c), 13); }, a);
  op("sub.rhs", [&](const Tensor& x) { return probe(sub(c, x), 14); }, a);
  op("mul", [&](const Tensor& x) { return probe(mul(x, c), 15); }, a);
  op("scale", [&](const Tensor& x) { return probe(scale(x, -2.5), 16); }, a);
  op("add_scalar", [&](const Tensor& x) { return probe(add_scalar(x, 0.7), 17); }, a);
  op("add_row_vector.matrix", [&](const Tensor& x) { return probe(add_row_vector(x, row), 18); }, a);
  op("add_row_vector.row", [&](const Tensor& x) { return probe(add_row_vector(a, x), 18); }, row);
  op("mul_row_vector.matrix", [&](const Tensor& x) { return probe(mul_row_vector(x, row), 19); }, a);
  op("mul_row_vector.row", [&](const Tensor& x) { return probe(mul_row_vector(a, x), 19); }, row);
  op("relu", [&](const Tensor& x) { return probe(relu(x), 20); }, a);
  op("elu", [&](const Tensor& x) { return probe(elu(x), 21); }, a);
  op("sigmoid", [&](const Tensor& x) { return probe(sigmoid(x), 22); }, a);
  op("exp", [&](const Tensor& x) { return probe(exp(x), 23); }, a);
  op("log", [&](const Tensor& x) { return probe(log(x), 24); }, pos);
  op("softmax_rows", [&](const Tensor& x) { return probe(softmax_rows(x, 0.5), 25); }, a);
  op("log_softmax_rows", [&](const Tensor& x) { return probe(log_softmax_rows(x), 26); }, a);
  op("pairwise_sq_dist.lhs", [&](const Tensor& x) { return probe(pairwise_sq_dist(x, c), 27); }, a);
  op("pairwise_sq_dist.rhs", [&](const Tensor& x) { return probe(pairwise_sq_dist(a, x), 27); }, c);
  op("sum", [&](const Tensor& x) { return sum(mul(x, x)); }, a);
  op("mean", [&](const Tensor& x) { return mean(mul(x, c)); }, a);
  op("sum_squares", [&](const Tensor& x) { return sum_squares(x); }, a);
  const std::vector<std::size_t> idx{2, 0, 2, 3, 1};
  op("gather_rows", [&](const Tensor& x) { return probe(gather_rows(x, idx), 29); }, a);
  op("row_dot", [&](const Tensor& x) { return probe(row_dot(x, c), 30); }, a);
  op("row_normalize", [&](const Tensor& x) { return probe(row_normalize(x), 31); }, a);
  const std::vector<std::size_t> seg{0, 1, 3, 6};
  op("segment_logsumexp", [&](const Tensor& x) { return probe(segment_logsumexp(x, seg), 32); }, random_leaf(6, 1, rng));

  const Graph g = toy_graph(derive_seed(seed, 1));
  const Tensor hx = random_leaf(6, 3, rng);
  for (auto [agg, name] : {std::pair{Aggregator::Mean, "mean"}, std::pair{Aggregator::Sum, "sum"}, std::pair{Aggregator::Max, "max"}})
    op(std::string("sparse_aggregate.") + name, [&, agg](const Tensor& x) { return probe(sparse_aggregate(x, g.offsets, g.neighbors, agg), 33); },
       hx);

  // Module-level losses.
  const Tensor codes = random_leaf(5, 3, rng);
  const Tensor h = random_leaf(6, 3, rng);
  op("vq_aux_losses.codebook", [&](const Tensor& x) {
    const Assignment asg = nearest_assign(h, Codebook{x.detach(), Similarity::Euclidean});
    return vq_aux_losses(h, gather_rows(x, asg.index), 1.0).codebook;
  }, codes);
  op("vq_aux_losses.commitment", [&](const Tensor& x) {
    const Assignment asg = nearest_assign(x.detach(), Codebook{codes.detach(), Similarity::Euclidean});
    return vq_aux_losses(x, gather_rows(codes.detach(), asg.index), 0.25).commitment;
  }, h);
  op("ortho_penalty", [&](const Tensor& x) { return ortho_penalty(x).value; }, codes);
  op("assignment_logits.h", [&](const Tensor& x) { return probe(assignment_logits(x, codes), 34); }, h);
  op("assignment_logits.codebook", [&](const Tensor& x) { return probe(assignment_logits(h, x), 34); }, codes);
  op("assignment_logits.cosine", [&](const Tensor& x) { return probe(assignment_logits(x, codes, Similarity::Cosine), 35); }, h);
  op("gumbel_softmax", [&](const Tensor& x) { return probe(gumbel_softmax(x, 0.5, 99).probs, 36); }, random_leaf(6, 5, rng));
  op("soft_quantize.probs", [&](const Tensor& x) {
    return probe(soft_quantize(AssignmentDistribution{softmax_rows(x), 1.0, GumbelMode::Expected}, codes), 37);
  }, random_leaf(6, 5, rng));
  op("soft_quantize.codebook", [&](const Tensor& x) {
    return probe(soft_quantize(AssignmentDistribution{softmax_rows(h.detach()), 1.0, GumbelMode::Expected}, x), 37);
  }, random_leaf(3, 3, rng));
  op("link_loss", [&](const Tensor& x) { return link_loss(x, all_pairs(g)); }, h);
  op("feature_loss", [&](const Tensor& x) { return feature_loss(x, g.features); }, random_leaf(6, 4, rng));
  op("affine_adapt.scale", [&](const Tensor& x) { return probe(affine_adapt(h, x, row), 38); }, random_leaf(1, 3, rng));
  op("simvq_project.proj", [&](const Tensor& x) { return probe(simvq_project(codes.detach(), x), 39); }, random_leaf(3, 3, rng));

  ContrastiveConfig cc;
  cc.k_c = 2;
  cc.m_samples = 3;
  cc.eps_quantile = 0.2;
  cc.gamma_quantile = 0.5;
  cc.probes = 6;
  cc.negative_mode = NegativeMode::PerAnchor;
  const ContrastiveSets sets = build_contrastive_sets(g, cc);
  op("infonce_reg", [&](const Tensor& x) {
    return infonce_reg(AssignmentDistribution{softmax_rows(x), 1.0, GumbelMode::Expected}, sets).value;
  }, random_leaf(6, 5, rng));

  // Encoder and decoder parameters.
  EncoderParams enc = init_encoder({4, 5, 3}, derive_seed(seed, 2));
  DecoderParams dec = init_decoder(3, 4, derive_seed(seed, 3));
  op("encode.w_self", [&](const Tensor&) { return probe(encode(g, enc), 40); }, enc.layers[0].w_self);
  op("encode.w_neigh", [&](const Tensor&) { return probe(encode(g, enc), 40); }, enc.layers[1].w_neigh);
  op("encode.bias", [&](const Tensor&) { return probe(encode(g, enc), 40); }, enc.layers[0].bias);
  op("decode.w1", [&](const Tensor&) { return probe(decode(h.detach(), dec), 41); }, dec.w1);

  // Full objective: link + feature + reg + commitment + codebook + ortho.
  // The numeric side replaces sg[h] and sg[z] by their values at the base
  // point, which is exactly the function the stop-gradients differentiate.
  Codebook cb{random_leaf(5, 3, rng), Similarity::Euclidean};
  ReconConfig dense;
  dense.mode = LinkMode::Dense;
  const LossWeights w{};
  auto objective = [&](bool frozen, const Tensor& h_fixed, const Tensor& z_fixed) {
    const Tensor hh = encode(g, enc);
    const AssignmentDistribution dist = gumbel_softmax(assignment_logits(hh, cb), 0.5, derive_seed(seed, 4));
    const Tensor z = soft_quantize(dist, cb);
    VqAuxLosses aux = vq_aux_losses(hh, z, 1.0, Reduction::MeanOverNodes);
    if (frozen) {
      const double norm = 1.0 / static_cast<double>(g.n);
      aux.codebook = scale(sum_squares(sub(h_fixed, z)), norm);
      aux.commitment = scale(sum_squares(sub(hh, z_fixed)), norm);
    }
    Rng unused(0);
    const ReconLosses recon = recon_losses(g, z, dec, dense, unused);
    LossParts parts{recon.link, recon.feature, infonce_reg(dist, sets).value, aux.commitment, aux.codebook, ortho_penalty(cb.entries).value};
    return rgvq_total_loss(parts, w);
  };
  auto composite = [&](const std::string& name, const Tensor& param) {
    Tensor h0, z0;
    {
      NoGradGuard guard;
      h0 = encode(g, enc);
      z0 = soft_quantize(gumbel_softmax(assignment_logits(h0, cb), 0.5, derive_seed(seed, 4)), cb);
    }
    check("composite." + name, [&](const Tensor&) { return objective(false, h0, z0); },
          [&](const Tensor&) { return objective(true, h0, z0); }, param, composite_tol);
  };
  for (const auto& [name, t] : enc.named_parameters()) composite(name, t);
  for (const auto& [name, t] : dec.named_parameters()) composite(name, t);
  composite("codebook", cb.entries);
  return out;
}

}  // namespace rgvq
