#pragma once

// Message-passing encoder and MLP feature decoder.
//
// Layer l computes
//   h_v = act(h_v W_self + AGG_{u in N(v)}(h_u) W_neigh + b)
// so the node's own state enters through W_self and its neighbors through
// W_neigh; no self-loop is added to the adjacency.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rgvq/errors.hpp"
#include "rgvq/graph.hpp"
#include "rgvq/random.hpp"
#include "rgvq/tensor.hpp"

namespace rgvq {

struct EncoderLayer {
  Tensor w_self;   // d_in x d_out
  Tensor w_neigh;  // d_in x d_out
  Tensor bias;     // 1 x d_out
};

struct EncoderParams {
  std::vector<EncoderLayer> layers;
  Aggregator aggregator = Aggregator::Mean;
  Activation activation = Activation::Elu;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().w_self.rows(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().w_self.cols(); }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : layers) {
      out.push_back(l.w_self);
      out.push_back(l.w_neigh);
      out.push_back(l.bias);
    }
    return out;
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "encoder." + std::to_string(i) + ".";
      out.emplace_back(p + "w_self", layers[i].w_self);
      out.emplace_back(p + "w_neigh", layers[i].w_neigh);
      out.emplace_back(p + "bias", layers[i].bias);
    }
    return out;
  }

  // Deep copy with fresh leaves (same requires_grad flags).
  EncoderParams clone() const {
    EncoderParams c = *this;
    for (auto& l : c.layers) {
      l.w_self = l.w_self.detach().set_requires_grad(true);
      l.w_neigh = l.w_neigh.detach().set_requires_grad(true);
      l.bias = l.bias.detach().set_requires_grad(true);
    }
    return c;
  }
};

struct DecoderParams {
  Tensor w1, b1, w2, b2;
  Activation activation = Activation::Elu;

  std::vector<Tensor> parameters() const { return {w1, b1, w2, b2}; }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    return {{"decoder.w1", w1}, {"decoder.b1", b1}, {"decoder.w2", w2}, {"decoder.b2", b2}};
  }
};

// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  if (fan_in == 0 || fan_out == 0) throw ParameterError("glorot_uniform: dimensions must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w(fan_in, fan_out);
  for (double& x : w.mutable_values()) x = rng.uniform(-limit, limit);
  w.set_requires_grad(true);
  return w;
}

// dims = {input, hidden_1, ..., hidden_L}; one layer per consecutive pair.
inline EncoderParams init_encoder(const std::vector<std::size_t>& dims, std::uint64_t seed,
                                  Aggregator aggregator = Aggregator::Mean, Activation act = Activation::Elu) {
  if (dims.size() < 2) throw ParameterError("init_encoder: need at least input and output dimensions");
  EncoderParams p;
  p.aggregator = aggregator;
  p.activation = act;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Rng rng(derive_seed(seed, 100 + l));
    EncoderLayer layer;
    layer.w_self = glorot_uniform(dims[l], dims[l + 1], rng);
    layer.w_neigh = glorot_uniform(dims[l], dims[l + 1], rng);
    layer.bias = Tensor::zeros(1, dims[l + 1]).set_requires_grad(true);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

inline DecoderParams init_decoder(std::size_t latent_dim, std::size_t feature_dim, std::uint64_t seed,
                                  Activation act = Activation::Elu) {
  Rng rng(derive_seed(seed, 200));
  DecoderParams d;
  d.w1 = glorot_uniform(latent_dim, latent_dim, rng);
  d.b1 = Tensor::zeros(1, latent_dim).set_requires_grad(true);
  d.w2 = glorot_uniform(latent_dim, feature_dim, rng);
  d.b2 = Tensor::zeros(1, feature_dim).set_requires_grad(true);
  d.activation = act;
  return d;
}

inline Tensor encode(const Graph& g, const EncoderParams& p) {
  Tensor h = g.features;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    if (h.cols() != layer.w_self.rows() || h.cols() != layer.w_neigh.rows())
      throw DimensionError("encode: layer " + std::to_string(l) + " expects input width " + std::to_string(layer.w_self.rows()) +
                           ", got " + std::to_string(h.cols()));
    const Tensor agg = sparse_aggregate(h, g.offsets, g.neighbors, p.aggregator);
    Tensor pre = add(matmul(h, layer.w_self), matmul(agg, layer.w_neigh));
    pre = add_row_vector(pre, layer.bias);
    h = activation(pre, p.activation);
  }
  return h;
}

inline Tensor decode(const Tensor& z, const DecoderParams& d) {
  if (z.cols() != d.w1.rows())
    throw DimensionError("decode: latent width " + std::to_string(z.cols()) + " but decoder expects " + std::to_string(d.w1.rows()));
  const Tensor hidden = activation(add_row_vector(matmul(z, d.w1), d.b1), d.activation);
  return add_row_vector(matmul(hidden, d.w2), d.b2);
}

}  // namespace rgvq
