#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rgvq/errors.hpp"
#include "rgvq/linalg.hpp"
#include "rgvq/random.hpp"
#include "rgvq/tensor.hpp"

namespace rgvq {

// Undirected simple graph with node features. Adjacency is stored as sorted
// CSR neighbor lists, symmetric, without self-loops or duplicates.
struct Graph {
  std::size_t n = 0;
  Tensor features;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> neighbors;
  std::optional<std::vector<int>> labels;

  std::size_t edge_count() const { return neighbors.size() / 2; }
  std::size_t degree(std::size_t v) const { return offsets[v + 1] - offsets[v]; }
  std::span<const std::size_t> neighbors_of(std::size_t v) const {
    return {neighbors.data() + offsets[v], offsets[v + 1] - offsets[v]};
  }
  bool has_edge(std::size_t u, std::size_t v) const {
    const auto nb = neighbors_of(u);
    return std::binary_search(nb.begin(), nb.end(), v);
  }
  std::size_t max_degree() const {
    std::size_t m = 0;
    for (std::size_t v = 0; v < n; ++v) m = std::max(m, degree(v));
    return m;
  }
};

// Builds the CSR form from an arbitrary edge list: both orientations are
// stored, duplicates and self-loops are dropped.
inline Graph make_graph(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges, Tensor features,
                        std::optional<std::vector<int>> labels = std::nullopt) {
  if (features.rows() != n)
    throw DimensionError("make_graph: features have " + std::to_string(features.rows()) + " rows for " + std::to_string(n) + " nodes");
  std::vector<std::vector<std::size_t>> adj(n);
  for (auto [u, v] : edges) {
    if (u >= n || v >= n) throw DimensionError("make_graph: edge (" + std::to_string(u) + ", " + std::to_string(v) + ") out of range");
    if (u == v) continue;
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  Graph g;
  g.n = n;
  g.features = std::move(features);
  g.labels = std::move(labels);
  g.offsets.assign(n + 1, 0);
  for (std::size_t v = 0; v < n; ++v) {
    auto& nb = adj[v];
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    g.offsets[v + 1] = g.offsets[v] + nb.size();
    g.neighbors.insert(g.neighbors.end(), nb.begin(), nb.end());
  }
  return g;
}

inline void normalize_rows_inplace(Tensor& x) {
  const std::size_t f = x.cols();
  auto vals = x.mutable_values();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < f; ++j) s += vals[i * f + j] * vals[i * f + j];
    if (s <= 0.0) continue;
    const double inv = 1.0 / std::sqrt(s);
    for (std::size_t j = 0; j < f; ++j) vals[i * f + j] *= inv;
  }
}

struct LoadOptions {
  bool normalize_features = true;
};

inline Tensor read_feature_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open feature file " + path);
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError(path + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
      }
      ++count;
    }
    if (rows == 0) cols = count;
    if (count != cols)
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) + " columns, found " +
                        std::to_string(count));
    ++rows;
  }
  if (rows == 0) throw FormatError("feature file " + path + " is empty");
  return Tensor(rows, cols, std::move(values));
}

// Edge list: "u v" per line, 0-indexed, '#' starts a comment. Features: CSV,
// one node per row, no header. Labels: one integer per line.
inline Graph load_graph(const std::string& edge_path, const std::string& feature_path,
                        const std::optional<std::string>& label_path = std::nullopt, LoadOptions opts = {}) {
  Tensor features = read_feature_csv(feature_path);
  const std::size_t n = features.rows();

  std::ifstream in(edge_path);
  if (!in) throw FormatError("cannot open edge list " + edge_path);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    long long u = -1, v = -1;
    std::string extra;
    if (!(ss >> u >> v) || (ss >> extra))
      throw FormatError(edge_path + ":" + std::to_string(lineno) + ": expected two integer node ids");
    if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n)
      throw FormatError(edge_path + ":" + std::to_string(lineno) + ": node id out of range [0, " + std::to_string(n) + ")");
    edges.emplace_back(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
  }

  std::optional<std::vector<int>> labels;
  if (label_path) {
    std::ifstream lin(*label_path);
    if (!lin) throw FormatError("cannot open label file " + *label_path);
    std::vector<int> ls;
    lineno = 0;
    while (std::getline(lin, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream ss(line);
      int label = 0;
      std::string extra;
      if (!(ss >> label) || (ss >> extra))
        throw FormatError(*label_path + ":" + std::to_string(lineno) + ": expected one integer label");
      ls.push_back(label);
    }
    if (ls.size() != n)
      throw FormatError(*label_path + ": " + std::to_string(ls.size()) + " labels for " + std::to_string(n) + " nodes");
    labels = std::move(ls);
  }

  if (opts.normalize_features) normalize_rows_inplace(features);
  return make_graph(n, edges, std::move(features), std::move(labels));
}

inline void save_graph(const Graph& g, const std::string& edge_path, const std::string& feature_path) {
  std::ofstream e(edge_path);
  if (!e) throw FormatError("cannot write " + edge_path);
  for (std::size_t u = 0; u < g.n; ++u)
    for (std::size_t v : g.neighbors_of(u))
      if (u < v) e << u << ' ' << v << '\n';
  std::ofstream f(feature_path);
  if (!f) throw FormatError("cannot write " + feature_path);
  f.precision(17);
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = 0; j < g.features.cols(); ++j) f << (j ? "," : "") << g.features(i, j);
    f << '\n';
  }
}

struct SbmSpec {
  std::size_t blocks = 5;
  std::size_t nodes_per_block = 60;
  double p_in = 0.5;
  double p_out = 0.01;
  std::size_t feature_dim = 32;
  double redundancy = 0.9;  // share of each feature vector taken from the block centroid
  std::uint64_t seed = 0;
  bool normalize_features = true;

  void validate() const {
    if (p_in < 0.0 || p_in > 1.0 || p_out < 0.0 || p_out > 1.0) throw ParameterError("SBM edge probabilities must lie in [0, 1]");
    if (redundancy < 0.0 || redundancy > 1.0) throw ParameterError("SBM redundancy must lie in [0, 1]");
    if (blocks == 0 || nodes_per_block == 0 || feature_dim == 0) throw ParameterError("SBM sizes must be positive");
  }
};

// Planted-partition graph. Node v in block b gets
//   x_v = redundancy * c_b + (1 - redundancy) * noise_v,   c_b, noise_v ~ N(0, I)
// followed by optional row normalization. Labels are block ids.
inline Graph generate_sbm(const SbmSpec& spec) {
  spec.validate();
  const std::size_t n = spec.blocks * spec.nodes_per_block;
  const std::size_t f = spec.feature_dim;
  Rng edge_rng(derive_seed(spec.seed, 1));
  Rng feat_rng(derive_seed(spec.seed, 2));

  std::vector<int> labels(n);
  for (std::size_t v = 0; v < n; ++v) labels[v] = static_cast<int>(v / spec.nodes_per_block);

  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v) {
      const double p = labels[u] == labels[v] ? spec.p_in : spec.p_out;
      if (edge_rng.uniform() < p) edges.emplace_back(u, v);
    }

  std::vector<double> centroids(spec.blocks * f);
  for (double& c : centroids) c = feat_rng.normal();
  Tensor features(n, f);
  auto x = features.mutable_values();
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t b = static_cast<std::size_t>(labels[v]);
    for (std::size_t j = 0; j < f; ++j) {
      const double noise = feat_rng.normal();
      x[v * f + j] = spec.redundancy * centroids[b * f + j] + (1.0 - spec.redundancy) * noise;
    }
  }
  if (spec.normalize_features) normalize_rows_inplace(features);
  return make_graph(n, edges, std::move(features), std::move(labels));
}

inline double avg_degree(const Graph& g) {
  return g.n == 0 ? 0.0 : 2.0 * static_cast<double>(g.edge_count()) / static_cast<double>(g.n);
}

struct Pca95Result {
  std::size_t components = 0;
  bool zero_variance = false;
};

// Smallest k whose top-k covariance eigenvalues hold >= 95% of the variance.
inline Pca95Result pca95(const Tensor& features, double fraction = 0.95) {
  if (features.rows() < 2) throw ContractError("pca95: need at least 2 nodes");
  const auto eig = symmetric_eigenvalues(covariance(features), features.cols());
  double total = 0.0;
  for (double e : eig) total += std::max(e, 0.0);
  if (!(total > 0.0)) return {0, true};
  double acc = 0.0;
  for (std::size_t k = 0; k < eig.size(); ++k) {
    acc += std::max(eig[k], 0.0);
    // relative slack absorbs rounding when the spectrum is exactly rank-deficient
    if (acc >= fraction * total * (1.0 - 1e-12)) return {k + 1, false};
  }
  return {eig.size(), false};
}

// FNV-1a over the structural and feature content; keys cached sidecars.
inline std::uint64_t dataset_hash(const Graph& g) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  const std::uint64_t n = g.n, f = g.features.cols();
  mix(&n, sizeof n);
  mix(&f, sizeof f);
  for (std::size_t v : g.offsets) {
    const std::uint64_t x = v;
    mix(&x, sizeof x);
  }
  for (std::size_t v : g.neighbors) {
    const std::uint64_t x = v;
    mix(&x, sizeof x);
  }
  for (double d : g.features.values()) mix(&d, sizeof d);
  return h;
}

}  // namespace rgvq
