#pragma once

// Experiment configuration: presets, an INI-style file format, and
// `section.key = value` overrides shared by the file loader and the CLI.
//
//   [config]  version = 1, preset = desk | paper
//   [data]    source = sbm | files, edges, features, labels, normalize,
//             blocks, nodes_per_block, p_in, p_out, feature_dim, redundancy, data_seed
//   [model]   hidden = 64,64, aggregator, activation, codebook_size, similarity,
//             cosine_scale, codebook_init = kmeans | uniform, kmeans_iters
//   [method]  method = vanilla | rgvq, mitigation, ema_decay, dead_threshold,
//             pretrain_epochs, tau, gumbel_mode
//   [contrastive] k_c, m_samples, eps_quantile, gamma_quantile, negatives,
//             probes, sim_temperature, reduction
//   [loss]    w_link, w_feat, w_reg, w_commit, w_vocab, w_ortho, link_mode, neg_samples
//   [optim]   lr, weight_decay, beta1, beta2, eps
//   [train]   epochs, seed, report_every, record_timing

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rgvq/baselines.hpp"
#include "rgvq/errors.hpp"
#include "rgvq/graph.hpp"
#include "rgvq/optim.hpp"
#include "rgvq/rgvq.hpp"
#include "rgvq/vq.hpp"

namespace rgvq {

inline constexpr int kConfigVersion = 1;

enum class Method { Vanilla, Rgvq };
enum class DataSource { Sbm, Files };
enum class CodebookInit { KMeans, Uniform };

inline const char* to_string(Method m) { return m == Method::Vanilla ? "vanilla" : "rgvq"; }

struct TrainConfig {
  // data
  DataSource source = DataSource::Sbm;
  SbmSpec sbm{};
  std::string edges_path, features_path, labels_path;
  bool normalize_features = true;

  // model
  std::vector<std::size_t> hidden{64, 64};
  Aggregator aggregator = Aggregator::Mean;
  Activation activation = Activation::Elu;
  std::size_t codebook_size = 64;
  Similarity similarity = Similarity::Cosine;
  double cosine_scale = 10.0;
  CodebookInit codebook_init = CodebookInit::KMeans;
  std::size_t kmeans_iters = 20;

  // method
  Method method = Method::Vanilla;
  MitigationConfig mitigation{};
  double tau = 0.1;
  GumbelMode gumbel_mode = GumbelMode::Sampled;

  // contrastive
  ContrastiveConfig contrastive{};
  InfoNceConfig infonce{};

  // loss
  LossWeights weights{};
  ReconConfig recon{};

  AdamWConfig optimizer{};

  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::size_t report_every = 1;
  bool record_timing = false;

  // Vanilla and the mitigation arms carry no contrastive term.
  LossWeights effective_weights() const {
    LossWeights w = weights;
    if (method == Method::Vanilla) w.reg = 0.0;
    return w;
  }

  void validate() const {
    const LossWeights& w = weights;
    for (double x : {w.link, w.feature, w.reg, w.commitment, w.vocabulary, w.ortho})
      if (!(x >= 0.0)) throw ConfigError("loss weights must be >= 0");
    if (!(optimizer.lr > 0.0)) throw ConfigError("lr must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (codebook_size < 1) throw ConfigError("codebook_size must be >= 1");
    if (hidden.empty()) throw ConfigError("hidden must list at least one layer width");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (report_every < 1) throw ConfigError("report_every must be >= 1");
    if (source == DataSource::Files && (edges_path.empty() || features_path.empty()))
      throw ConfigError("file data source needs both edges and features paths");
    try {
      mitigation.validate();
      if (source == DataSource::Sbm) sbm.validate();
      if (method == Method::Rgvq) contrastive.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
  }
};

// Desk scale: 300-node SBM, hidden 64, K = 64, 100 epochs. Distance logits
// and a uniform codebook start; lr raised to 1e-3 for the short schedule.
inline TrainConfig desk_preset() {
  TrainConfig c;
  c.similarity = Similarity::Euclidean;
  c.codebook_init = CodebookInit::Uniform;
  c.sbm.blocks = 5;
  c.sbm.nodes_per_block = 60;
  c.sbm.p_in = 0.5;
  c.sbm.p_out = 0.01;
  c.sbm.redundancy = 0.9;
  c.optimizer.lr = 1e-3;
  return c;
}

// The published protocol: cosine similarity, k-means start, hidden 256,
// K = 512, lr 1e-4, 100 epochs.
inline TrainConfig paper_preset() {
  TrainConfig c;
  c.hidden = {256, 256};
  c.codebook_size = 512;
  c.optimizer.lr = 1e-4;
  c.optimizer.weight_decay = 1e-5;
  return c;
}

inline TrainConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <class E>
E parse_enum(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> options) {
  std::string allowed;
  for (const auto& [name, value] : options) {
    if (v == name) return value;
    allowed += allowed.empty() ? name : std::string("|") + name;
  }
  throw ConfigError(key + ": expected " + allowed + ", got '" + v + "'");
}

inline std::vector<std::size_t> parse_dims(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::size_t d = parse_uint(key, trim(item));
    if (d == 0) throw ConfigError(key + ": layer widths must be positive");
    out.push_back(d);
  }
  if (out.empty()) throw ConfigError(key + ": empty layer list");
  return out;
}

using Setter = std::function<void(TrainConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter>& setters() {
  using C = TrainConfig;
  using S = const std::string&;
  static const std::map<std::string, Setter> table = {
      {"data.source", [](C& c, S k, S v) { c.source = parse_enum<DataSource>(k, v, {{"sbm", DataSource::Sbm}, {"files", DataSource::Files}}); }},
      {"data.edges", [](C& c, S, S v) { c.edges_path = v; }},
      {"data.features", [](C& c, S, S v) { c.features_path = v; }},
      {"data.labels", [](C& c, S, S v) { c.labels_path = v; }},
      {"data.normalize", [](C& c, S k, S v) { c.normalize_features = c.sbm.normalize_features = parse_bool(k, v); }},
      {"data.blocks", [](C& c, S k, S v) { c.sbm.blocks = parse_uint(k, v); }},
      {"data.nodes_per_block", [](C& c, S k, S v) { c.sbm.nodes_per_block = parse_uint(k, v); }},
      {"data.p_in", [](C& c, S k, S v) { c.sbm.p_in = parse_double(k, v); }},
      {"data.p_out", [](C& c, S k, S v) { c.sbm.p_out = parse_double(k, v); }},
      {"data.feature_dim", [](C& c, S k, S v) { c.sbm.feature_dim = parse_uint(k, v); }},
      {"data.redundancy", [](C& c, S k, S v) { c.sbm.redundancy = parse_double(k, v); }},
      {"data.data_seed", [](C& c, S k, S v) { c.sbm.seed = parse_uint(k, v); }},
      {"model.hidden", [](C& c, S k, S v) { c.hidden = parse_dims(k, v); }},
      {"model.aggregator",
       [](C& c, S k, S v) {
         c.aggregator = parse_enum<Aggregator>(k, v, {{"mean", Aggregator::Mean}, {"sum", Aggregator::Sum}, {"max", Aggregator::Max}});
       }},
      {"model.activation",
       [](C& c, S k, S v) {
         c.activation = parse_enum<Activation>(
             k, v, {{"elu", Activation::Elu}, {"relu", Activation::Relu}, {"sigmoid", Activation::Sigmoid}, {"identity", Activation::Identity}});
       }},
      {"model.codebook_size", [](C& c, S k, S v) { c.codebook_size = parse_uint(k, v); }},
      {"model.similarity",
       [](C& c, S k, S v) {
         c.similarity = parse_enum<Similarity>(k, v, {{"euclidean", Similarity::Euclidean}, {"cosine", Similarity::Cosine}});
       }},
      {"model.cosine_scale", [](C& c, S k, S v) { c.cosine_scale = parse_double(k, v); }},
      {"model.codebook_init",
       [](C& c, S k, S v) {
         c.codebook_init = parse_enum<CodebookInit>(k, v, {{"kmeans", CodebookInit::KMeans}, {"uniform", CodebookInit::Uniform}});
       }},
      {"model.kmeans_iters", [](C& c, S k, S v) { c.kmeans_iters = parse_uint(k, v); }},
      {"method.method", [](C& c, S k, S v) { c.method = parse_enum<Method>(k, v, {{"vanilla", Method::Vanilla}, {"rgvq", Method::Rgvq}}); }},
      {"method.mitigation",
       [](C& c, S k, S v) {
         c.mitigation.kind = parse_enum<MitigationKind>(k, v,
                                                        {{"none", MitigationKind::None},
                                                         {"ema", MitigationKind::Ema},
                                                         {"reset", MitigationKind::Reset},
                                                         {"affine", MitigationKind::Affine},
                                                         {"pretrain", MitigationKind::Pretrain},
                                                         {"simvq", MitigationKind::SimVq}});
       }},
      {"method.ema_decay", [](C& c, S k, S v) { c.mitigation.ema_decay = parse_double(k, v); }},
      {"method.dead_threshold", [](C& c, S k, S v) { c.mitigation.dead_threshold = parse_uint(k, v); }},
      {"method.pretrain_epochs", [](C& c, S k, S v) { c.mitigation.pretrain_epochs = parse_uint(k, v); }},
      {"method.tau", [](C& c, S k, S v) { c.tau = parse_double(k, v); }},
      {"method.gumbel_mode",
       [](C& c, S k, S v) {
         c.gumbel_mode = parse_enum<GumbelMode>(k, v, {{"sampled", GumbelMode::Sampled}, {"expected", GumbelMode::Expected}});
       }},
      {"contrastive.k_c", [](C& c, S k, S v) { c.contrastive.k_c = parse_uint(k, v); }},
      {"contrastive.m_samples", [](C& c, S k, S v) { c.contrastive.m_samples = parse_uint(k, v); }},
      {"contrastive.eps_quantile", [](C& c, S k, S v) { c.contrastive.eps_quantile = parse_double(k, v); }},
      {"contrastive.gamma_quantile", [](C& c, S k, S v) { c.contrastive.gamma_quantile = parse_double(k, v); }},
      {"contrastive.negatives",
       [](C& c, S k, S v) {
         c.contrastive.negative_mode =
             parse_enum<NegativeMode>(k, v, {{"shared", NegativeMode::Shared}, {"per_anchor", NegativeMode::PerAnchor}});
       }},
      {"contrastive.probes", [](C& c, S k, S v) { c.contrastive.probes = parse_uint(k, v); }},
      {"contrastive.sim_temperature", [](C& c, S k, S v) { c.infonce.sim_temperature = parse_double(k, v); }},
      {"contrastive.reduction",
       [](C& c, S k, S v) {
         c.infonce.reduction = parse_enum<Reduction>(k, v, {{"mean", Reduction::MeanOverNodes}, {"sum", Reduction::Sum}});
       }},
      {"loss.w_link", [](C& c, S k, S v) { c.weights.link = parse_double(k, v); }},
      {"loss.w_feat", [](C& c, S k, S v) { c.weights.feature = parse_double(k, v); }},
      {"loss.w_reg", [](C& c, S k, S v) { c.weights.reg = parse_double(k, v); }},
      {"loss.w_commit", [](C& c, S k, S v) { c.weights.commitment = parse_double(k, v); }},
      {"loss.w_vocab", [](C& c, S k, S v) { c.weights.vocabulary = parse_double(k, v); }},
      {"loss.w_ortho", [](C& c, S k, S v) { c.weights.ortho = parse_double(k, v); }},
      {"loss.link_mode",
       [](C& c, S k, S v) { c.recon.mode = parse_enum<LinkMode>(k, v, {{"sampled", LinkMode::Sampled}, {"dense", LinkMode::Dense}}); }},
      {"loss.neg_samples", [](C& c, S k, S v) { c.recon.neg_samples = parse_uint(k, v); }},
      {"optim.lr", [](C& c, S k, S v) { c.optimizer.lr = parse_double(k, v); }},
      {"optim.weight_decay", [](C& c, S k, S v) { c.optimizer.weight_decay = parse_double(k, v); }},
      {"optim.beta1", [](C& c, S k, S v) { c.optimizer.beta1 = parse_double(k, v); }},
      {"optim.beta2", [](C& c, S k, S v) { c.optimizer.beta2 = parse_double(k, v); }},
      {"optim.eps", [](C& c, S k, S v) { c.optimizer.eps = parse_double(k, v); }},
      {"train.epochs", [](C& c, S k, S v) { c.epochs = parse_uint(k, v); }},
      {"train.seed", [](C& c, S k, S v) { c.seed = parse_uint(k, v); }},
      {"train.report_every", [](C& c, S k, S v) { c.report_every = parse_uint(k, v); }},
      {"train.record_timing", [](C& c, S k, S v) { c.record_timing = parse_bool(k, v); }},
  };
  return table;
}

}  // namespace detail

// Applies one `section.key` = value assignment.
inline void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = detail::setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown configuration key '" + key + "'");
  it->second(cfg, key, detail::trim(value));
}

// Accepts "section.key=value".
inline void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  apply_setting(cfg, detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

inline TrainConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }
  const auto meta = tree.get_child_optional("config");
  if (!meta || !meta->get_optional<std::string>("version")) throw ConfigError("config: missing [config] version");
  const int version = static_cast<int>(detail::parse_uint("config.version", meta->get<std::string>("version")));
  if (version != kConfigVersion)
    throw ConfigError("config: unsupported version " + std::to_string(version) + " (expected " + std::to_string(kConfigVersion) + ")");
  TrainConfig cfg = preset(meta->get<std::string>("preset", "desk"));
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
    if (section == "config") {
      for (const auto& [key, node] : body)
        if (key != "version" && key != "preset") throw ConfigError("unknown configuration key 'config." + key + "'");
      continue;
    }
    for (const auto& [key, node] : body) apply_setting(cfg, section + "." + key, node.data());
  }
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_config(in);
}

// Reads the graph named by the config.
inline Graph load_dataset(const TrainConfig& cfg) {
  if (cfg.source == DataSource::Sbm) return generate_sbm(cfg.sbm);
  LoadOptions opts;
  opts.normalize_features = cfg.normalize_features;
  const std::optional<std::string> labels = cfg.labels_path.empty() ? std::nullopt : std::optional<std::string>(cfg.labels_path);
  return load_graph(cfg.edges_path, cfg.features_path, labels, opts);
}

}  // namespace rgvq
