#pragma once

// Collapse-mitigation comparison arms.

#include <cstdint>
#include <string>
#include <vector>

#include "rgvq/encoder.hpp"
#include "rgvq/errors.hpp"
#include "rgvq/graph.hpp"
#include "rgvq/optim.hpp"
#include "rgvq/random.hpp"
#include "rgvq/tensor.hpp"
#include "rgvq/vq.hpp"

namespace rgvq {

enum class MitigationKind { None, Ema, Reset, Affine, Pretrain, SimVq };

inline const char* to_string(MitigationKind k) {
  switch (k) {
    case MitigationKind::None: return "none";
    case MitigationKind::Ema: return "ema";
    case MitigationKind::Reset: return "reset";
    case MitigationKind::Affine: return "affine";
    case MitigationKind::Pretrain: return "pretrain";
    case MitigationKind::SimVq: return "simvq";
  }
  return "none";
}

struct MitigationConfig {
  MitigationKind kind = MitigationKind::None;
  double ema_decay = 0.9;
  std::size_t dead_threshold = 10;
  std::size_t pretrain_epochs = 50;

  void validate() const {
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ParameterError("ema_decay must lie in (0, 1)");
    if (dead_threshold < 1) throw ParameterError("dead_threshold must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// EMA codebook

// Smoothed per-code assignment count and embedding sum. Both start at zero.
struct EmaState {
  std::vector<double> cluster_size;
  std::vector<double> embed_sum;  // K x d row-major

  static EmaState for_codebook(const Codebook& cb) {
    return {std::vector<double>(cb.size(), 0.0), std::vector<double>(cb.size() * cb.dim(), 0.0)};
  }
};

// size_k <- decay * size_k + (1 - decay) * n_k
// sum_k  <- decay * sum_k  + (1 - decay) * sum_{i in k} h_i
// e_k    <- sum_k / (size_k + 1e-5)
// Codes whose accumulators never received mass keep their current entry.
inline void ema_update(Codebook& cb, EmaState& state, const Tensor& h, const Assignment& a, double decay) {
  if (!(decay > 0.0 && decay < 1.0)) throw ParameterError("ema_update: decay must lie in (0, 1)");
  const std::size_t k = cb.size(), d = cb.dim();
  if (h.cols() != d || a.index.size() != h.rows()) throw DimensionError("ema_update: shapes do not match the codebook");
  if (state.cluster_size.size() != k) state = EmaState::for_codebook(cb);
  std::vector<double> count(k, 0.0), batch_sum(k * d, 0.0);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    const std::size_t code = a.index[i];
    count[code] += 1.0;
    for (std::size_t t = 0; t < d; ++t) batch_sum[code * d + t] += h(i, t);
  }
  auto e = cb.entries.mutable_values();
  for (std::size_t j = 0; j < k; ++j) {
    state.cluster_size[j] = decay * state.cluster_size[j] + (1.0 - decay) * count[j];
    for (std::size_t t = 0; t < d; ++t)
      state.embed_sum[j * d + t] = decay * state.embed_sum[j * d + t] + (1.0 - decay) * batch_sum[j * d + t];
    if (state.cluster_size[j] == 0.0) continue;
    for (std::size_t t = 0; t < d; ++t) e[j * d + t] = state.embed_sum[j * d + t] / (state.cluster_size[j] + 1e-5);
  }
}

// ---------------------------------------------------------------------------
// Dead-code reset

// Consecutive epochs without any assignment, per code.
class UsageHistory {
 public:
  explicit UsageHistory(std::size_t codebook_size = 0) : idle_(codebook_size, 0) {}

  void record(const Assignment& a) {
    if (idle_.size() != a.codebook_size) idle_.assign(a.codebook_size, 0);
    const auto counts = a.counts();
    for (std::size_t k = 0; k < counts.size(); ++k) idle_[k] = counts[k] > 0 ? 0 : idle_[k] + 1;
    ++epochs_;
  }

  std::size_t idle_epochs(std::size_t code) const { return idle_[code]; }
  std::size_t epochs_recorded() const { return epochs_; }
  void mark_reset(std::size_t code) { idle_[code] = 0; }

 private:
  std::vector<std::size_t> idle_;
  std::size_t epochs_ = 0;
};

// Replaces every code idle for >= dead_threshold epochs with a uniformly
// drawn row of h. Returns the replaced code ids.
inline std::vector<std::size_t> codebook_reset(Codebook& cb, UsageHistory& usage, const Tensor& h, std::size_t dead_threshold,
                                               std::uint64_t seed) {
  if (dead_threshold < 1) throw ParameterError("codebook_reset: dead_threshold must be >= 1");
  if (h.cols() != cb.dim()) throw DimensionError("codebook_reset: embedding width differs from codebook");
  std::vector<std::size_t> dead;
  for (std::size_t k = 0; k < cb.size(); ++k)
    if (usage.idle_epochs(k) >= dead_threshold) dead.push_back(k);
  if (dead.empty() || h.rows() == 0) return {};
  Rng rng(derive_seed(seed, 400));
  auto rows = rng.sample_without_replacement(h.rows(), dead.size());
  while (rows.size() < dead.size()) rows.push_back(rng.index(h.rows()));
  auto e = cb.entries.mutable_values();
  const std::size_t d = cb.dim();
  for (std::size_t i = 0; i < dead.size(); ++i) {
    std::copy_n(h.row(rows[i]).begin(), d, e.begin() + static_cast<std::ptrdiff_t>(dead[i] * d));
    usage.mark_reset(dead[i]);
  }
  return dead;
}

// ---------------------------------------------------------------------------
// Affine adaptation (per-dimension scale and shift before quantization)

struct AffineParams {
  Tensor scale;  // 1 x d
  Tensor shift;  // 1 x d

  static AffineParams identity(std::size_t d) {
    AffineParams p;
    p.scale = Tensor::ones(1, d).set_requires_grad(true);
    p.shift = Tensor::zeros(1, d).set_requires_grad(true);
    return p;
  }
  std::vector<Tensor> parameters() const { return {scale, shift}; }
};

inline Tensor affine_adapt(const Tensor& h, const Tensor& scale, const Tensor& shift) {
  return add_row_vector(mul_row_vector(h, scale), shift);
}
inline Tensor affine_adapt(const Tensor& h, const AffineParams& p) { return affine_adapt(h, p.scale, p.shift); }

// ---------------------------------------------------------------------------
// SimVQ-style reparameterization: effective codebook = basis * proj with a
// frozen basis, so every codeword moves whenever proj does.

struct SimVqParams {
  Tensor basis;  // K x d, no gradient
  Tensor proj;   // d x d, learnable

  static SimVqParams from_basis(const Tensor& basis) {
    SimVqParams p;
    p.basis = basis.detach();
    p.proj = Tensor::identity(basis.cols()).set_requires_grad(true);
    return p;
  }
  std::vector<Tensor> parameters() const { return {proj}; }
};

inline Tensor simvq_project(const Tensor& basis, const Tensor& proj) {
  if (basis.cols() != proj.rows())
    throw DimensionError("simvq_project: basis " + basis.shape_string() + " does not chain with proj " + proj.shape_string());
  return matmul(basis, proj);
}

// ---------------------------------------------------------------------------
// Encoder pretraining on feature + link reconstruction without quantization.

struct PretrainConfig {
  std::size_t epochs = 50;
  AdamWConfig optimizer{};
  double w_feat = 100.0;
  double w_link = 0.01;
  ReconConfig recon{};
  std::uint64_t seed = 0;
};

// Returns the loss recorded before each step (size == epochs).
inline std::vector<double> pretrain_encoder(const Graph& g, EncoderParams& enc, DecoderParams& dec, const PretrainConfig& cfg) {
  std::vector<Tensor> params = enc.parameters();
  for (const auto& p : dec.parameters()) params.push_back(p);
  AdamW opt(params, cfg.optimizer);
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 500 + epoch));
    opt.zero_grad();
    const Tensor h = encode(g, enc);
    const ReconLosses r = recon_losses(g, h, dec, cfg.recon, rng);
    const Tensor loss = add(scale(r.feature, cfg.w_feat), scale(r.link, cfg.w_link));
    history.push_back(loss.item());
    backward(loss);
    opt.step();
  }
  return history;
}

}  // namespace rgvq
