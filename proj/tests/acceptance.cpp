// Acceptance run: one PASS/FAIL line per criterion on stdout, exit 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rgvq/dynamics.hpp"
#include "rgvq/gradcheck.hpp"
#include "rgvq/linalg.hpp"
#include "rgvq/train.hpp"

using namespace rgvq;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor uniform_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (double& x : t.mutable_values()) x = rng.uniform(lo, hi);
  return t;
}

std::string join(const std::vector<double>& v, int precision = 3) {
  std::ostringstream out;
  out.precision(precision);
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  return out.str();
}

std::string fmt(double x, int precision = 4) {
  std::ostringstream out;
  out.precision(precision);
  out << x;
  return out.str();
}

double best_perplexity(TrainConfig cfg, Method method, std::uint64_t seed) {
  cfg.method = method;
  cfg.seed = seed;
  return train(cfg).best_perplexity;
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const auto rows = run_gradcheck_suite(1, 1e-4, 1e-3);
  const double secs = seconds_since(t0);
  double worst_op = 0.0, worst_composite = 0.0;
  std::string failed;
  for (const auto& r : rows) {
    double& worst = r.tolerance > 1e-4 ? worst_composite : worst_op;
    worst = std::max(worst, r.max_rel_error);
    if (!r.pass()) failed += " " + r.name;
  }
  const bool ok = failed.empty() && secs < 30.0;
  return {ok, std::to_string(rows.size()) + " checks, worst op " + fmt(worst_op, 2) + ", worst composite " + fmt(worst_composite, 2) +
                  ", " + fmt(secs, 3) + " s" + (failed.empty() ? "" : ", failed:" + failed)};
}

Outcome ste_contract() {
  Rng rng(2);
  const std::size_t n = 6, d = 3, k = 4;
  bool ok = true;
  for (std::size_t i = 0; i < n && ok; ++i)
    for (std::size_t t = 0; t < d && ok; ++t) {
      Tensor h = uniform_matrix(n, d, rng).set_requires_grad(true);
      const Codebook cb{uniform_matrix(k, d, rng).set_requires_grad(true), Similarity::Euclidean};
      const Tensor z = ste_quantize(h, cb, nearest_assign(h, cb));
      Tensor pick(n, d);
      pick.at(i, t) = 1.0;
      backward(sum(mul(z, pick)));
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < d; ++b) ok = ok && h.grad()(a, b) == ((a == i && b == t) ? 1.0 : 0.0);
      for (double g : cb.entries.grad_values()) ok = ok && g == 0.0;
    }
  return {ok, "full Jacobian dz/dh = I and dz/dC = 0 on a 6x3 batch, exact equality"};
}

Outcome update_rule_equivalence() {
  double worst = 0.0;
  for (std::uint64_t inst = 0; inst < 20; ++inst) {
    Rng rng(derive_seed(3, inst));
    const std::size_t k = 2 + rng.index(10), d = 1 + rng.index(6), b = 1 + rng.index(60);
    const double eta = rng.uniform(0.001, 0.5);
    const Codebook cb{uniform_matrix(k, d, rng, -2.0, 2.0), Similarity::Euclidean};
    const Tensor h = uniform_matrix(b, d, rng, -2.0, 2.0);
    const Assignment a = nearest_assign(h, cb);

    Tensor c = cb.entries.detach().set_requires_grad(true);
    const VqAuxLosses l = vq_aux_losses(h, gather_rows(c, a.index), 1.0, Reduction::MeanOverNodes);
    backward(scale(l.codebook, 0.5));
    const Codebook analytic = analytic_update_step(cb, h, a, eta);
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double autodiff = c.values()[i] - eta * c.grad_values()[i];
      worst = std::max(worst, std::abs(autodiff - analytic.entries.values()[i]));
    }
  }
  return {worst <= 1e-10, "20 random instances, max |analytic - autodiff| = " + fmt(worst, 3)};
}

Outcome dead_row_theorem() {
  Rng rng(4);
  const std::size_t n = 40, d = 4, k = 12;
  // Hard assignment: inputs drawn near the first four codewords only.
  Tensor entries = uniform_matrix(k, d, rng, -3.0, 3.0);
  Tensor h(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < d; ++t) h.at(i, t) = entries(i % 4, t) + 0.01 * rng.normal();
  h.set_requires_grad(true);
  const Codebook hard{entries.detach().set_requires_grad(true), Similarity::Euclidean};
  const Assignment a = nearest_assign(h, hard);
  const VqAuxLosses aux = vq_aux_losses(h, gather_rows(hard.entries, a.index), 0.25, Reduction::MeanOverNodes);
  const Tensor target = uniform_matrix(n, d, rng);
  backward(add(add(aux.codebook, aux.commitment), sum_squares(sub(ste_quantize(h, hard, a), target))));
  const auto counts = a.counts();
  std::size_t dead = 0;
  bool dead_zero = true;
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] > 0) continue;
    ++dead;
    for (double g : hard.entries.grad().row(j)) dead_zero = dead_zero && g == 0.0;
  }

  // Soft assignment at tau = 0.1 on the same inputs and codebook.
  const Tensor soft_entries = entries.detach().set_requires_grad(true);
  const AssignmentDistribution dist = gumbel_softmax(assignment_logits(h.detach(), soft_entries, Similarity::Euclidean), 0.1, 5);
  bool positive = true;
  for (double p : dist.probs.values()) positive = positive && p > 0.0;
  backward(sum_squares(sub(soft_quantize(dist, soft_entries), target)));
  double min_norm = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (double g : soft_entries.grad().row(j)) s += g * g;
    min_norm = std::min(min_norm, std::sqrt(s));
  }
  const bool ok = dead > 0 && dead_zero && positive && min_norm > 0.0;
  return {ok, std::to_string(dead) + " unselected codes with exactly zero gradient; soft path probs all > 0: " +
                  (positive ? "yes" : "no") + ", min codeword grad norm " + fmt(min_norm, 3)};
}

Outcome voronoi_implication() {
  std::size_t violations = 0, within = 0, anchored_violations = 0, pairs = 0;
  for (std::uint64_t tri = 0; tri < 50; ++tri) {
    Rng rng(derive_seed(5, tri));
    SbmSpec spec;
    spec.blocks = 2 + rng.index(4);
    spec.nodes_per_block = 10 + rng.index(200 / spec.blocks - 9);
    spec.p_in = rng.uniform(0.1, 0.6);
    spec.p_out = rng.uniform(0.0, 0.05);
    spec.feature_dim = 8;
    spec.redundancy = rng.uniform(0.0, 1.0);
    spec.seed = rng.next();
    const Graph g = generate_sbm(spec);
    const EncoderParams enc = init_encoder({spec.feature_dim, 16, 8}, rng.next());
    const Codebook cb{uniform_matrix(2 + rng.index(31), 8, rng), Similarity::Euclidean};
    const CoassignReport r = coassign_check(g, enc, cb);
    violations += r.literal_violations;
    anchored_violations += r.anchored_violations;
    within += r.pairs_within_radius;
    pairs += r.pairs;
  }
  return {violations == 0, "50 triples, " + std::to_string(pairs) + " pairs, " + std::to_string(within) +
                               " with Delta <= delta_c, literal violations " + std::to_string(violations) +
                               ", anchored violations " + std::to_string(anchored_violations)};
}

Outcome perplexity_closed_forms() {
  const double single = perplexity_from_counts(std::vector<std::size_t>{0, 7, 0, 0});
  const double uniform = perplexity_from_counts(std::vector<std::size_t>(16, 5));
  const double half = perplexity_from_counts(std::vector<std::size_t>{6, 0, 6, 0, 0});
  const bool ok = std::abs(single - 1.0) <= 1e-9 && std::abs(uniform - 16.0) <= 1e-9 && std::abs(half - 2.0) <= 1e-9;
  return {ok, "P = " + fmt(single, 12) + ", " + fmt(uniform, 12) + ", " + fmt(half, 12)};
}

struct DeskRuns {
  std::vector<double> vanilla, rgvq;
  double first_vanilla_seconds = 0.0;
};

DeskRuns desk_runs() {
  DeskRuns out;
  const TrainConfig cfg = desk_preset();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t0 = Clock::now();
    out.vanilla.push_back(best_perplexity(cfg, Method::Vanilla, seed));
    if (seed == 1) out.first_vanilla_seconds = seconds_since(t0);
    out.rgvq.push_back(best_perplexity(cfg, Method::Rgvq, seed));
  }
  return out;
}

Outcome collapse_reproduction(const DeskRuns& runs) {
  const double limit = 0.15 * static_cast<double>(desk_preset().codebook_size);
  const double worst = *std::max_element(runs.vanilla.begin(), runs.vanilla.end());
  const bool ok = worst <= limit && runs.first_vanilla_seconds < 300.0;
  return {ok, "vanilla best perplexity per seed [" + join(runs.vanilla) + "], limit " + fmt(limit) + ", one run " +
                  fmt(runs.first_vanilla_seconds, 3) + " s"};
}

Outcome rgvq_improvement(const DeskRuns& runs) {
  const double v = median(runs.vanilla), r = median(runs.rgvq);
  return {r >= 2.0 * v, "median rgvq " + fmt(r) + " vs vanilla " + fmt(v) + " (ratio " + fmt(r / v, 3) + "), rgvq per seed [" +
                            join(runs.rgvq) + "]"};
}

Outcome redundancy_and_density_trends() {
  const TrainConfig base = desk_preset();
  std::size_t pca_agree = 0, degree_agree = 0;
  std::vector<double> rho_pca, rho_degree;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    TrainConfig cfg = base;
    cfg.seed = seed;
    std::vector<SbmSpec> redundancy, density;
    for (double r : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      SbmSpec s = base.sbm;
      s.redundancy = r;
      s.seed = seed;
      redundancy.push_back(s);
    }
    for (double p : {0.1, 0.2, 0.3, 0.4, 0.5}) {
      SbmSpec s = base.sbm;
      s.p_in = p;
      s.seed = seed;
      density.push_back(s);
    }
    const RedundancyTable rt = redundancy_sweep(redundancy, cfg);
    const RedundancyTable dt = redundancy_sweep(density, cfg);
    rho_pca.push_back(rt.spearman_pca);
    rho_degree.push_back(dt.spearman_degree);
    pca_agree += rt.spearman_pca > 0.0;
    degree_agree += dt.spearman_degree < 0.0;
  }
  return {pca_agree >= 2 && degree_agree >= 2,
          "Spearman(pca95, P) per seed [" + join(rho_pca) + "], Spearman(avg degree, P) per seed [" + join(rho_degree) + "]"};
}

Outcome temperature_direction() {
  std::vector<double> cold, hot;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    TrainConfig cfg = desk_preset();
    cfg.tau = 0.1;
    cold.push_back(best_perplexity(cfg, Method::Rgvq, seed));
    cfg.tau = 1.0;
    hot.push_back(best_perplexity(cfg, Method::Rgvq, seed));
  }
  return {median(cold) >= median(hot),
          "median P at tau 0.1 = " + fmt(median(cold)) + " [" + join(cold) + "], tau 1.0 = " + fmt(median(hot)) + " [" + join(hot) + "]"};
}

Outcome codebook_capacity() {
  TrainConfig cfg = desk_preset();
  cfg.method = Method::Rgvq;
  cfg.seed = 1;
  const std::vector<double> ks{64, 128, 256, 512};
  const auto rows = sweep(cfg, SweepAxis::CodebookSize, ks);
  std::vector<double> norm;
  for (const auto& r : rows) norm.push_back(r.normalized_perplexity);
  return {rows.back().normalized_perplexity >= 0.5, "K {64,128,256,512}: normalized perplexity [" + join(norm) + "]"};
}

Outcome predicate_audit() {
  std::size_t checked = 0, bad = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed)
    for (NegativeMode mode : {NegativeMode::Shared, NegativeMode::PerAnchor}) {
      SbmSpec spec;
      spec.blocks = 4;
      spec.nodes_per_block = 50;
      spec.p_in = 0.3;
      spec.p_out = 0.02;
      spec.seed = seed;
      const Graph g = generate_sbm(spec);
      ContrastiveConfig cc;
      cc.negative_mode = mode;
      cc.seed = seed;
      const ContrastiveSets s = build_contrastive_sets(g, cc);
      for (std::size_t v = 0; v < g.n; ++v) {
        for (std::size_t u : s.positives[v]) {
          double d = 0.0;
          for (std::size_t t = 0; t < g.features.cols(); ++t) d += std::pow(g.features(v, t) - g.features(u, t), 2);
          bad += !(u != v && (g.has_edge(v, u) || std::sqrt(d) < s.eps));
          ++checked;
        }
        for (std::size_t u : s.negatives[v]) {
          double d = 0.0;
          for (std::size_t t = 0; t < g.features.cols(); ++t) d += std::pow(g.features(v, t) - g.features(u, t), 2);
          bad += !(u != v && !g.has_edge(v, u) && std::sqrt(d) > s.gamma);
          ++checked;
        }
      }
    }
  return {bad == 0 && checked > 0, std::to_string(checked) + " emitted pairs on 200-node graphs, " + std::to_string(bad) + " violations"};
}

Outcome determinism() {
  auto metrics = [](Method method) {
    TrainConfig cfg = desk_preset();
    cfg.method = method;
    cfg.seed = 11;
    std::ostringstream out;
    write_metrics(out, train(cfg).records);
    return out.str();
  };
  bool ok = true;
  std::size_t bytes = 0;
  for (Method m : {Method::Vanilla, Method::Rgvq}) {
    const std::string a = metrics(m), b = metrics(m);
    ok = ok && a == b && !a.empty();
    bytes += a.size();
  }
  return {ok, "vanilla and rgvq desk runs repeated, " + std::to_string(bytes) + " metric bytes compared"};
}

}  // namespace

int main() {
  const DeskRuns runs = desk_runs();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"straight-through contract", ste_contract},
      {"update-rule equivalence", update_rule_equivalence},
      {"dead-row theorem", dead_row_theorem},
      {"Voronoi implication", voronoi_implication},
      {"perplexity closed forms", perplexity_closed_forms},
      {"collapse reproduction", [&] { return collapse_reproduction(runs); }},
      {"rgvq improvement", [&] { return rgvq_improvement(runs); }},
      {"redundancy and density trends", redundancy_and_density_trends},
      {"temperature direction", temperature_direction},
      {"codebook capacity", codebook_capacity},
      {"contrastive predicate audit", predicate_audit},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
