#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "rgvq/errors.hpp"
#include "rgvq/tensor.hpp"

namespace rgvq {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

// One AdamW update: decoupled weight decay, then the bias-corrected Adam step.
inline void adamw_step(std::span<double> param, std::span<const double> grad, AdamState& state, const AdamWConfig& cfg) {
  if (!grad.empty() && grad.size() != param.size()) throw DimensionError("adamw_step: gradient length differs from parameter");
  if (state.m.size() != param.size()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    param[i] -= cfg.lr * cfg.weight_decay * param[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// Owns moment state for a fixed list of leaf tensors.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw ParameterError("AdamW: learning rate must be > 0");
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i)
      adamw_step(params_[i].mutable_values(), params_[i].grad_values(), states_[i], cfg_);
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  AdamWConfig cfg_;
};

}  // namespace rgvq
