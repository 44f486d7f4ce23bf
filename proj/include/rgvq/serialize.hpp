#pragma once

// JSON persistence: model checkpoints and the contrastive-set sidecar.
//
// Checkpoint: {"format": "rgvq-checkpoint", "version": 1,
//              "similarity": "cosine", "matrices": [{"name", "rows", "cols", "data"}]}
// Sidecar:    {"format": "rgvq-contrastive", "version": 1, "key": {...},
//              "eps", "gamma", "positives": [[...]], "negatives": [[...]], "shared_negatives": [...]}

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rgvq/encoder.hpp"
#include "rgvq/errors.hpp"
#include "rgvq/graph.hpp"
#include "rgvq/rgvq.hpp"
#include "rgvq/tensor.hpp"
#include "rgvq/vq.hpp"

namespace rgvq {

using json = nlohmann::json;

inline json matrix_to_json(const std::string& name, const Tensor& t) {
  return {{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"data", std::vector<double>(t.values().begin(), t.values().end())}};
}

inline Tensor matrix_from_json(const json& j) {
  try {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != rows * cols) throw FormatError("matrix '" + j.value("name", std::string("?")) + "' has the wrong number of values");
    return Tensor(rows, cols, std::move(data));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed matrix record: ") + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << j.dump(1) << '\n';
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

struct Checkpoint {
  EncoderParams encoder;
  DecoderParams decoder;
  Codebook codebook;
};

inline json checkpoint_to_json(const EncoderParams& enc, const DecoderParams& dec, const Codebook& cb) {
  json mats = json::array();
  for (const auto& [name, t] : enc.named_parameters()) mats.push_back(matrix_to_json(name, t));
  for (const auto& [name, t] : dec.named_parameters()) mats.push_back(matrix_to_json(name, t));
  mats.push_back(matrix_to_json("codebook", cb.entries));
  return {{"format", "rgvq-checkpoint"}, {"version", 1}, {"similarity", to_string(cb.similarity)}, {"matrices", mats}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", std::string()) != "rgvq-checkpoint") throw FormatError("not a checkpoint file");
  if (j.value("version", 0) != 1) throw FormatError("unsupported checkpoint version");
  std::map<std::string, Tensor> by_name;
  for (const auto& m : j.at("matrices")) by_name[m.at("name").get<std::string>()] = matrix_from_json(m).set_requires_grad(true);
  auto take = [&](const std::string& name) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing matrix '" + name + "'");
    return it->second;
  };
  Checkpoint c;
  for (std::size_t l = 0; by_name.count("encoder." + std::to_string(l) + ".w_self"); ++l) {
    const std::string p = "encoder." + std::to_string(l) + ".";
    c.encoder.layers.push_back({take(p + "w_self"), take(p + "w_neigh"), take(p + "bias")});
  }
  c.decoder.w1 = take("decoder.w1");
  c.decoder.b1 = take("decoder.b1");
  c.decoder.w2 = take("decoder.w2");
  c.decoder.b2 = take("decoder.b2");
  c.codebook.entries = take("codebook");
  c.codebook.similarity = j.value("similarity", std::string("euclidean")) == "cosine" ? Similarity::Cosine : Similarity::Euclidean;
  return c;
}

inline void save_checkpoint(const std::string& path, const EncoderParams& enc, const DecoderParams& dec, const Codebook& cb) {
  write_json_file(path, checkpoint_to_json(enc, dec, cb));
}
inline Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Contrastive sidecar

inline json contrastive_key(const Graph& g, const ContrastiveConfig& cfg) {
  json key = {{"dataset_hash", dataset_hash(g)},
              {"k_c", cfg.k_c},
              {"eps_quantile", cfg.eps_quantile},
              {"gamma_quantile", cfg.gamma_quantile},
              {"m_samples", cfg.m_samples},
              {"probes", cfg.probes},
              {"negatives", cfg.negative_mode == NegativeMode::Shared ? "shared" : "per_anchor"},
              {"seed", cfg.seed}};
  if (cfg.eps) {
    key["eps"] = *cfg.eps;
    key["gamma"] = *cfg.gamma;
  }
  return key;
}

inline json contrastive_to_json(const ContrastiveSets& s, const json& key) {
  return {{"format", "rgvq-contrastive"},
          {"version", 1},
          {"key", key},
          {"eps", s.eps},
          {"gamma", s.gamma},
          {"k_c", s.k_c},
          {"m_samples", s.m_samples},
          {"scarce_positive_nodes", s.scarce_positive_nodes},
          {"degenerate_nodes", s.degenerate_nodes},
          {"negatives_empty", s.negatives_empty},
          {"positives", s.positives},
          {"negatives", s.negatives},
          {"shared_negatives", s.shared_negatives}};
}

inline ContrastiveSets contrastive_from_json(const json& j) {
  if (j.value("format", std::string()) != "rgvq-contrastive") throw FormatError("not a contrastive sidecar");
  try {
    ContrastiveSets s;
    s.eps = j.at("eps").get<double>();
    s.gamma = j.at("gamma").get<double>();
    s.k_c = j.at("k_c").get<std::size_t>();
    s.m_samples = j.at("m_samples").get<std::size_t>();
    s.scarce_positive_nodes = j.at("scarce_positive_nodes").get<std::size_t>();
    s.degenerate_nodes = j.at("degenerate_nodes").get<std::size_t>();
    s.negatives_empty = j.at("negatives_empty").get<bool>();
    s.positives = j.at("positives").get<std::vector<std::vector<std::size_t>>>();
    s.negatives = j.at("negatives").get<std::vector<std::vector<std::size_t>>>();
    s.shared_negatives = j.at("shared_negatives").get<std::vector<std::size_t>>();
    s.negative_mode = j.at("key").value("negatives", std::string("shared")) == "shared" ? NegativeMode::Shared : NegativeMode::PerAnchor;
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed contrastive sidecar: ") + e.what());
  }
}

// Reuses the sidecar at `path` when its key matches; otherwise builds the
// sets and writes the sidecar.
inline ContrastiveSets load_or_build_contrastive(const Graph& g, const ContrastiveConfig& cfg, const std::string& path) {
  const json key = contrastive_key(g, cfg);
  std::ifstream probe(path);
  if (probe) {
    const json j = read_json_file(path);
    if (j.contains("key") && j["key"] == key) return contrastive_from_json(j);
  }
  ContrastiveSets s = build_contrastive_sets(g, cfg);
  write_json_file(path, contrastive_to_json(s, key));
  return s;
}

}  // namespace rgvq
