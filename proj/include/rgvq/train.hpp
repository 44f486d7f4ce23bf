#pragma once

// Joint training loop, metric records, sweeps, and dataset statistics.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rgvq/baselines.hpp"
#include "rgvq/config.hpp"
#include "rgvq/encoder.hpp"
#include "rgvq/errors.hpp"
#include "rgvq/graph.hpp"
#include "rgvq/linalg.hpp"
#include "rgvq/optim.hpp"
#include "rgvq/random.hpp"
#include "rgvq/rgvq.hpp"
#include "rgvq/tensor.hpp"
#include "rgvq/vq.hpp"

namespace rgvq {

struct MetricsRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double link = 0.0;
  double feature = 0.0;
  double reg = 0.0;
  double commitment = 0.0;
  double codebook = 0.0;
  double ortho = 0.0;
  double perplexity = 0.0;
  std::size_t active_codes = 0;
  std::optional<double> wall_time;  // seconds since the start of the run

  nlohmann::json to_json() const {
    nlohmann::json j = {{"epoch", epoch},         {"loss", loss},
                        {"link", link},           {"feature", feature},
                        {"reg", reg},             {"commitment", commitment},
                        {"codebook", codebook},   {"ortho", ortho},
                        {"perplexity", perplexity}, {"active_codes", active_codes}};
    if (wall_time) j["wall_time"] = *wall_time;
    return j;
  }
};

// Counts of mitigation-hook invocations.
struct HookCounters {
  std::size_t ema_updates = 0;
  std::size_t reset_passes = 0;
  std::size_t codes_reset = 0;
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  double best_perplexity = 0.0;
  std::size_t best_epoch = 0;
  double final_perplexity = 0.0;
  HookCounters hooks;
  EncoderParams encoder;
  DecoderParams decoder;
  Codebook codebook;  // effective codebook after training
  std::size_t contrastive_degenerate_nodes = 0;
  std::vector<double> pretrain_losses;

  nlohmann::json summary() const {
    return {{"best_perplexity", best_perplexity}, {"best_epoch", best_epoch}, {"final_perplexity", final_perplexity},
            {"epochs", records.size()}};
  }
};

// Writes one JSON object per line.
inline void write_metrics(std::ostream& out, const std::vector<MetricsRecord>& records) {
  for (const auto& r : records) out << r.to_json().dump() << '\n';
}

namespace detail {

inline bool finite_scalar(const Tensor& t) { return t.size() == 0 || std::isfinite(t.item()); }
inline double value_or_zero(const Tensor& t) { return t.size() == 0 ? 0.0 : t.item(); }

// Codebook initialization. Uniform: U(-1/K, 1/K) entries. k-means: on the
// initial embeddings when K <= n; otherwise every node row seeds one code and
// the remaining codes are noisy copies of random rows.
inline Codebook init_codebook(const Tensor& h, const TrainConfig& cfg) {
  const std::size_t k = cfg.codebook_size;
  if (cfg.codebook_init == CodebookInit::Uniform) {
    Rng rng(derive_seed(cfg.seed, 3));
    Tensor entries(k, h.cols());
    const double a = 1.0 / static_cast<double>(k);
    for (double& x : entries.mutable_values()) x = rng.uniform(-a, a);
    entries.set_requires_grad(true);
    return {entries, cfg.similarity};
  }
  if (k <= h.rows()) return kmeans_init(h, k, cfg.kmeans_iters, derive_seed(cfg.seed, 3), cfg.similarity);
  Tensor pts;
  {
    NoGradGuard guard;
    pts = cfg.similarity == Similarity::Cosine ? row_normalize(h) : h.detach();
  }
  Rng rng(derive_seed(cfg.seed, 3));
  double spread = 0.0;
  for (double v : pts.values()) spread += v * v;
  spread = 1e-2 * std::sqrt(spread / static_cast<double>(std::max<std::size_t>(pts.size(), 1)));
  Tensor entries(k, h.cols());
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t src = j < pts.rows() ? j : rng.index(pts.rows());
    for (std::size_t t = 0; t < h.cols(); ++t) entries.at(j, t) = pts(src, t) + (j < pts.rows() ? 0.0 : spread * rng.normal());
  }
  entries.set_requires_grad(true);
  return {entries, cfg.similarity};
}

}  // namespace detail

// Everything the forward pass needs besides the graph.
struct Model {
  EncoderParams encoder;
  DecoderParams decoder;
  Codebook codebook;  // learnable entries (or the SimVQ basis holder)
  std::optional<AffineParams> affine;
  std::optional<SimVqParams> simvq;

  Tensor embed(const Graph& g) const {
    Tensor h = encode(g, encoder);
    if (affine) h = affine_adapt(h, *affine);
    return h;
  }
  Tensor effective_entries() const { return simvq ? simvq_project(simvq->basis, simvq->proj) : codebook.entries; }
};

// Deterministic hard assignment of the current model.
inline Assignment evaluate_assignment(const Graph& g, const Model& m) {
  NoGradGuard guard;
  return nearest_assign(m.embed(g), Codebook{m.effective_entries(), m.codebook.similarity});
}

// Contrastive settings with the sampling seed derived from the run seed.
inline ContrastiveConfig contrastive_config(const TrainConfig& cfg) {
  ContrastiveConfig cc = cfg.contrastive;
  cc.seed = derive_seed(cfg.seed, 4);
  return cc;
}

inline TrainResult train(const TrainConfig& cfg, const Graph& g, const ContrastiveSets* precomputed = nullptr) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t f = g.features.cols();
  std::vector<std::size_t> dims{f};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());

  TrainResult result;
  Model m;
  m.encoder = init_encoder(dims, derive_seed(cfg.seed, 1), cfg.aggregator, cfg.activation);
  m.decoder = init_decoder(dims.back(), f, derive_seed(cfg.seed, 2), cfg.activation);
  const MitigationKind mit = cfg.mitigation.kind;

  if (mit == MitigationKind::Pretrain) {
    PretrainConfig pc;
    pc.epochs = cfg.mitigation.pretrain_epochs;
    pc.optimizer = cfg.optimizer;
    pc.w_feat = cfg.weights.feature;
    pc.w_link = cfg.weights.link;
    pc.recon = cfg.recon;
    pc.seed = derive_seed(cfg.seed, 5);
    result.pretrain_losses = pretrain_encoder(g, m.encoder, m.decoder, pc);
  }
  if (mit == MitigationKind::Affine) m.affine = AffineParams::identity(dims.back());

  {
    Tensor h0;
    {
      NoGradGuard guard;
      h0 = m.embed(g);
    }
    m.codebook = detail::init_codebook(h0, cfg);
  }
  if (mit == MitigationKind::SimVq) m.simvq = SimVqParams::from_basis(m.codebook.entries);
  if (mit == MitigationKind::Ema) m.codebook.entries = m.codebook.entries.detach();

  ContrastiveSets sets;
  if (cfg.method == Method::Rgvq) {
    if (precomputed) {
      sets = *precomputed;
    } else {
      sets = build_contrastive_sets(g, contrastive_config(cfg));
    }
    result.contrastive_degenerate_nodes = sets.degenerate_nodes;
  }

  std::vector<Tensor> params = m.encoder.parameters();
  for (const auto& p : m.decoder.parameters()) params.push_back(p);
  if (m.simvq)
    params.push_back(m.simvq->proj);
  else if (mit != MitigationKind::Ema)
    params.push_back(m.codebook.entries);
  if (m.affine)
    for (const auto& p : m.affine->parameters()) params.push_back(p);
  AdamW opt(params, cfg.optimizer);

  const LossWeights weights = cfg.effective_weights();
  EmaState ema = EmaState::for_codebook(m.codebook);
  UsageHistory usage(cfg.codebook_size);
  MetricsRecord last_finite;
  bool have_finite = false;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 10000 + epoch));
    opt.zero_grad();
    const Tensor h = m.embed(g);
    const Tensor entries = m.effective_entries();

    LossParts parts;
    Tensor z;
    Assignment used;  // assignment driving the mitigation hooks
    if (cfg.method == Method::Vanilla) {
      used = nearest_assign(h, Codebook{entries, cfg.similarity});
      const Tensor q = gather_rows(entries, used.index);
      z = straight_through(h, q);
      const VqAuxLosses aux = vq_aux_losses(h, q, 1.0, Reduction::MeanOverNodes);
      parts.codebook = aux.codebook;
      parts.commitment = aux.commitment;
    } else {
      const Tensor logits = assignment_logits(h, entries, cfg.similarity, cfg.cosine_scale);
      const AssignmentDistribution dist = gumbel_softmax(logits, cfg.tau, derive_seed(cfg.seed, 20000 + epoch), cfg.gumbel_mode);
      z = soft_quantize(dist, entries);
      const VqAuxLosses aux = vq_aux_losses(h, z, 1.0, Reduction::MeanOverNodes);
      parts.codebook = aux.codebook;
      parts.commitment = aux.commitment;
      parts.reg = infonce_reg(dist, sets, cfg.infonce).value;
      used.codebook_size = cfg.codebook_size;
      used.index.resize(g.n);
      for (std::size_t i = 0; i < g.n; ++i) used.index[i] = detail::argmax_row(dist.probs.row(i));
    }
    const ReconLosses recon = recon_losses(g, z, m.decoder, cfg.recon, rng);
    parts.link = recon.link;
    parts.feature = recon.feature;
    if (weights.ortho > 0.0 && mit != MitigationKind::Ema) parts.ortho = ortho_penalty(entries).value;
    const Tensor total = rgvq_total_loss(parts, weights);

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.loss = total.item();
    rec.link = detail::value_or_zero(parts.link);
    rec.feature = detail::value_or_zero(parts.feature);
    rec.reg = detail::value_or_zero(parts.reg);
    rec.commitment = detail::value_or_zero(parts.commitment);
    rec.codebook = detail::value_or_zero(parts.codebook);
    rec.ortho = detail::value_or_zero(parts.ortho);
    if (!std::isfinite(rec.loss)) {
      std::string msg = "non-finite loss at epoch " + std::to_string(epoch);
      msg += have_finite ? "; last finite record: " + last_finite.to_json().dump() : "; no finite record";
      throw NumericError(msg);
    }

    backward(total);
    opt.step();

    if (mit == MitigationKind::Ema) {
      ema_update(m.codebook, ema, h.detach(), used, cfg.mitigation.ema_decay);
      ++result.hooks.ema_updates;
    }
    if (mit == MitigationKind::Reset) {
      usage.record(used);
      ++result.hooks.reset_passes;
      Tensor hd;
      {
        NoGradGuard guard;
        hd = m.embed(g);
      }
      result.hooks.codes_reset +=
          codebook_reset(m.codebook, usage, hd, cfg.mitigation.dead_threshold, derive_seed(cfg.seed, 30000 + epoch)).size();
    }

    const Assignment eval = evaluate_assignment(g, m);
    rec.perplexity = perplexity(eval);
    rec.active_codes = eval.active_codes();
    if (cfg.record_timing) rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (rec.perplexity > result.best_perplexity) {
      result.best_perplexity = rec.perplexity;
      result.best_epoch = epoch;
    }
    result.final_perplexity = rec.perplexity;
    last_finite = rec;
    have_finite = true;
    if (epoch % cfg.report_every == 0 || epoch == cfg.epochs) result.records.push_back(rec);
  }

  result.encoder = m.encoder;
  result.decoder = m.decoder;
  {
    NoGradGuard guard;
    result.codebook = {m.effective_entries().detach(), cfg.similarity};
  }
  return result;
}

inline TrainResult train(const TrainConfig& cfg) { return train(cfg, load_dataset(cfg)); }

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { CodebookSize, Temperature, ContrastiveK };

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::CodebookSize: return "codebook_size";
    case SweepAxis::Temperature: return "tau";
    case SweepAxis::ContrastiveK: return "k_c";
  }
  return "?";
}

struct SweepRow {
  double value = 0.0;
  double best_perplexity = 0.0;
  double normalized_perplexity = 0.0;  // best perplexity / K
};

inline TrainConfig with_axis_value(TrainConfig cfg, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::CodebookSize: cfg.codebook_size = static_cast<std::size_t>(value); break;
    case SweepAxis::Temperature: cfg.tau = value; break;
    case SweepAxis::ContrastiveK:
      cfg.contrastive.k_c = static_cast<std::size_t>(value);
      cfg.contrastive.m_samples = std::max(cfg.contrastive.m_samples, cfg.contrastive.k_c);
      break;
  }
  return cfg;
}

inline std::vector<SweepRow> sweep(const TrainConfig& cfg, SweepAxis axis, const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("sweep: no values given");
  const Graph g = load_dataset(cfg);
  std::vector<SweepRow> rows;
  for (double v : values) {
    const TrainConfig c = with_axis_value(cfg, axis, v);
    const TrainResult r = train(c, g);
    rows.push_back({v, r.best_perplexity, r.best_perplexity / static_cast<double>(c.codebook_size)});
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows) {
  out << to_string(axis) << ",best_perplexity,normalized_perplexity\n";
  for (const auto& r : rows) out << r.value << ',' << r.best_perplexity << ',' << r.normalized_perplexity << '\n';
}

// ---------------------------------------------------------------------------
// Dataset statistics

struct GraphStats {
  std::size_t nodes = 0;
  std::size_t edges = 0;
  double avg_degree = 0.0;
  std::size_t pca95 = 0;

  nlohmann::json to_json() const { return {{"nodes", nodes}, {"edges", edges}, {"avg_degree", avg_degree}, {"pca95", pca95}}; }
};

inline GraphStats stats(const Graph& g) { return {g.n, g.edge_count(), avg_degree(g), pca95(g.features).components}; }

// ---------------------------------------------------------------------------
// Redundancy sweep: vanilla VQ per SBM cell, then rank correlations.

struct RedundancyCell {
  SbmSpec spec;
  std::size_t pca95 = 0;
  double avg_degree = 0.0;
  double perplexity = 0.0;
};

struct RedundancyTable {
  std::vector<RedundancyCell> cells;
  double spearman_pca = std::numeric_limits<double>::quiet_NaN();
  double spearman_degree = std::numeric_limits<double>::quiet_NaN();
  bool correlations_defined = false;
};

inline RedundancyTable redundancy_sweep(const std::vector<SbmSpec>& grid, const TrainConfig& base) {
  RedundancyTable t;
  std::vector<double> pcs, degs, ppl;
  for (const auto& spec : grid) {
    TrainConfig cfg = base;
    cfg.method = Method::Vanilla;
    cfg.source = DataSource::Sbm;
    cfg.sbm = spec;
    const Graph g = generate_sbm(spec);
    const TrainResult r = train(cfg, g);
    RedundancyCell c{spec, pca95(g.features).components, avg_degree(g), r.best_perplexity};
    t.cells.push_back(c);
    pcs.push_back(static_cast<double>(c.pca95));
    degs.push_back(c.avg_degree);
    ppl.push_back(c.perplexity);
  }
  if (t.cells.size() >= 2) {
    t.spearman_pca = spearman(pcs, ppl);
    t.spearman_degree = spearman(degs, ppl);
  }
  t.correlations_defined = std::isfinite(t.spearman_pca) && std::isfinite(t.spearman_degree);
  return t;
}

inline void write_redundancy_csv(std::ostream& out, const RedundancyTable& t) {
  out << "redundancy,p_in,pca95,avg_degree,perplexity\n";
  for (const auto& c : t.cells)
    out << c.spec.redundancy << ',' << c.spec.p_in << ',' << c.pca95 << ',' << c.avg_degree << ',' << c.perplexity << '\n';
}

}  // namespace rgvq
