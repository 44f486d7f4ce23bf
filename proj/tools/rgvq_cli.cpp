// rgvq: command-line harness for training, sweeps, dataset statistics,
// contrastive-set building, dynamics checks and gradient checks.
//
// Exit codes: 0 success, 1 failed check, 2 configuration error,
// 3 numeric abort, 4 data format error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rgvq/config.hpp"
#include "rgvq/dynamics.hpp"
#include "rgvq/errors.hpp"
#include "rgvq/gradcheck.hpp"
#include "rgvq/serialize.hpp"
#include "rgvq/train.hpp"

namespace {

using namespace rgvq;

constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitFormat = 4;

// Options shared by every subcommand that builds a TrainConfig.
struct ConfigOptions {
  std::string preset = "desk";
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> codebook_size;
  std::optional<double> tau;
  std::string edges, features, labels;

  void attach(CLI::App& app, bool seed_required) {
    app.add_option("--preset", preset, "base preset: desk or paper")->capture_default_str();
    app.add_option("--config", config_path, "INI config file (replaces the preset)");
    app.add_option("--set", overrides, "override one key, e.g. --set model.codebook_size=128 (repeatable)");
    auto* s = app.add_option("--seed", seed, "run seed");
    if (seed_required) s->required();
    app.add_option("--method", method, "vanilla or rgvq");
    app.add_option("--epochs", epochs, "training epochs");
    app.add_option("--codebook-size", codebook_size, "codebook size K");
    app.add_option("--tau", tau, "Gumbel-Softmax temperature");
    app.add_option("--edges", edges, "edge list file (with --features selects file input)");
    app.add_option("--features", features, "feature CSV file");
    app.add_option("--labels", labels, "optional label file");
  }

  TrainConfig build() const {
    TrainConfig cfg = config_path.empty() ? rgvq::preset(preset) : load_config(config_path);
    for (const auto& o : overrides) apply_override(cfg, o);
    if (method) apply_setting(cfg, "method.method", *method);
    if (epochs) cfg.epochs = *epochs;
    if (codebook_size) cfg.codebook_size = *codebook_size;
    if (tau) cfg.tau = *tau;
    if (!edges.empty() || !features.empty()) {
      cfg.source = DataSource::Files;
      cfg.edges_path = edges;
      cfg.features_path = features;
      cfg.labels_path = labels;
    }
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
  }
};

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  return out;
}

std::vector<double> parse_values(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(detail::parse_double("--values", item));
  if (out.empty()) throw ConfigError("--values must list at least one number");
  return out;
}

SweepAxis parse_axis(const std::string& s) {
  if (s == "codebook-size" || s == "codebook_size" || s == "K") return SweepAxis::CodebookSize;
  if (s == "temperature" || s == "tau") return SweepAxis::Temperature;
  if (s == "contrastive-k" || s == "k_c") return SweepAxis::ContrastiveK;
  throw ConfigError("unknown sweep axis '" + s + "' (expected codebook-size, temperature or contrastive-k)");
}

int run_train(const ConfigOptions& opts, const std::string& metrics_path, const std::string& checkpoint_path,
              const std::string& sets_path) {
  const TrainConfig cfg = opts.build();
  const Graph g = load_dataset(cfg);
  std::optional<ContrastiveSets> sets;
  if (!sets_path.empty() && cfg.method == Method::Rgvq) sets = load_or_build_contrastive(g, contrastive_config(cfg), sets_path);
  const TrainResult r = train(cfg, g, sets ? &*sets : nullptr);
  if (metrics_path.empty() || metrics_path == "-") {
    write_metrics(std::cout, r.records);
  } else {
    auto out = open_output(metrics_path);
    write_metrics(out, r.records);
  }
  if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, r.encoder, r.decoder, r.codebook);
  std::cerr << r.summary().dump() << '\n';
  return 0;
}

int run_sweep(const ConfigOptions& opts, const std::string& axis, const std::string& values, const std::string& out_path) {
  const TrainConfig cfg = opts.build();
  const SweepAxis a = parse_axis(axis);
  const auto rows = sweep(cfg, a, parse_values(values));
  if (out_path.empty() || out_path == "-") {
    write_sweep_csv(std::cout, a, rows);
  } else {
    auto out = open_output(out_path);
    write_sweep_csv(out, a, rows);
  }
  return 0;
}

int run_stats(const ConfigOptions& opts) {
  const TrainConfig cfg = opts.build();
  std::cout << stats(load_dataset(cfg)).to_json().dump() << '\n';
  return 0;
}

int run_build_sets(const ConfigOptions& opts, const std::string& out_path) {
  const TrainConfig cfg = opts.build();
  const Graph g = load_dataset(cfg);
  const ContrastiveSets s = load_or_build_contrastive(g, contrastive_config(cfg), out_path);
  std::cout << json{{"path", out_path},
                    {"eps", s.eps},
                    {"gamma", s.gamma},
                    {"scarce_positive_nodes", s.scarce_positive_nodes},
                    {"degenerate_nodes", s.degenerate_nodes},
                    {"negatives_empty", s.negatives_empty}}
                   .dump()
            << '\n';
  return 0;
}

struct DynamicsOptions {
  std::string check = "all";
  std::string checkpoint;
  std::vector<double> bias;
  std::size_t steps = 500;
  std::size_t cocoon_k = 8;
};

int run_dynamics(const ConfigOptions& opts, const DynamicsOptions& d) {
  const bool all = d.check == "all";
  if (!all && d.check != "cocoon" && d.check != "coassign" && d.check != "redundancy")
    throw ConfigError("unknown dynamics check '" + d.check + "' (expected cocoon, coassign, redundancy or all)");
  const TrainConfig cfg = opts.build();
  json report;
  if (all || d.check == "cocoon") {
    CocoonConfig cc;
    cc.codebook_size = d.bias.empty() ? d.cocoon_k : d.bias.size();
    cc.bias = d.bias;
    cc.steps = d.steps;
    cc.seed = cfg.seed;
    const CocoonTrajectory t = cocoon_sim(cc);
    std::size_t frozen = 0;
    for (bool f : t.never_selected_frozen) frozen += f ? 1 : 0;
    report["cocoon"] = {{"final_perplexity", t.final_perplexity},
                        {"initial_entropy", t.usage_entropy.front()},
                        {"final_entropy", t.usage_entropy.back()},
                        {"total_counts", t.total_counts},
                        {"cumulative_update", t.cumulative_update.back()},
                        {"never_selected_frozen", frozen}};
  }
  if (all || d.check == "coassign") {
    const Graph g = load_dataset(cfg);
    if (!d.checkpoint.empty()) {
      const Checkpoint c = load_checkpoint(d.checkpoint);
      report["coassign"] = coassign_check(g, c.encoder, c.codebook).to_json();
    } else {
      std::vector<std::size_t> dims{g.features.cols()};
      dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
      const EncoderParams enc = init_encoder(dims, derive_seed(cfg.seed, 1), cfg.aggregator, cfg.activation);
      Tensor h;
      {
        NoGradGuard guard;
        h = encode(g, enc);
      }
      const Codebook cb = kmeans_init(h, std::min(cfg.codebook_size, g.n), cfg.kmeans_iters, derive_seed(cfg.seed, 3), Similarity::Euclidean);
      report["coassign"] = coassign_check(g, enc, cb).to_json();
    }
  }
  if (all || d.check == "redundancy") {
    std::vector<SbmSpec> grid;
    for (double r : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      SbmSpec s = cfg.sbm;
      s.redundancy = r;
      grid.push_back(s);
    }
    const RedundancyTable t = redundancy_sweep(grid, cfg);
    std::ostringstream csv;
    write_redundancy_csv(csv, t);
    report["redundancy"] = {{"table_csv", csv.str()},
                            {"spearman_pca_perplexity", t.correlations_defined ? json(t.spearman_pca) : json(nullptr)},
                            {"spearman_degree_perplexity", t.correlations_defined ? json(t.spearman_degree) : json(nullptr)}};
  }
  std::cout << report.dump(1) << '\n';
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(seed)) {
    std::cout << (r.pass() ? "ok   " : "FAIL ") << r.name << " max_rel_err=" << r.max_rel_error << " tol=" << r.tolerance << '\n';
    ok = ok && r.pass();
  }
  return ok ? 0 : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph vector quantization laboratory"};
  app.require_subcommand(1);

  ConfigOptions train_opts, sweep_opts, stats_opts, sets_opts, dyn_opts;
  std::string metrics_path, checkpoint_path, sets_path;
  auto* train_cmd = app.add_subcommand("train", "train one model and write per-epoch metrics (JSON lines)");
  train_opts.attach(*train_cmd, true);
  train_cmd->add_option("--metrics", metrics_path, "metrics output file (default stdout)");
  train_cmd->add_option("--checkpoint", checkpoint_path, "write the trained model here");
  train_cmd->add_option("--sets", sets_path, "contrastive-set sidecar to reuse or create");

  std::string axis, values, sweep_out;
  auto* sweep_cmd = app.add_subcommand("sweep", "train once per value of one axis and write a CSV table");
  sweep_opts.attach(*sweep_cmd, true);
  sweep_cmd->add_option("--axis", axis, "codebook-size, temperature or contrastive-k")->required();
  sweep_cmd->add_option("--values", values, "comma-separated values")->required();
  sweep_cmd->add_option("--out", sweep_out, "CSV output file (default stdout)");

  auto* stats_cmd = app.add_subcommand("stats", "print node count, edge count, average degree and PCA@95%");
  stats_opts.attach(*stats_cmd, false);

  std::string sets_out;
  auto* sets_cmd = app.add_subcommand("build-sets", "build the contrastive positive/negative sidecar");
  sets_opts.attach(*sets_cmd, false);
  sets_cmd->add_option("--out", sets_out, "sidecar path")->required();

  DynamicsOptions dyn;
  auto* dyn_cmd = app.add_subcommand("dynamics", "cocoon simulation, co-assignment check and redundancy sweep");
  dyn_opts.attach(*dyn_cmd, false);
  dyn_cmd->add_option("--check", dyn.check, "cocoon, coassign, redundancy or all")->capture_default_str();
  dyn_cmd->add_option("--checkpoint", dyn.checkpoint, "trained model for the co-assignment check");
  dyn_cmd->add_option("--bias", dyn.bias, "cocoon selection bias (one probability per code)")->delimiter(',');
  dyn_cmd->add_option("--steps", dyn.steps, "cocoon simulation steps")->capture_default_str();
  dyn_cmd->add_option("--cocoon-k", dyn.cocoon_k, "cocoon codebook size when no bias is given")->capture_default_str();

  std::uint64_t grad_seed = 1;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  grad_cmd->add_option("--seed", grad_seed, "seed for the random inputs")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) return run_train(train_opts, metrics_path, checkpoint_path, sets_path);
    if (*sweep_cmd) return run_sweep(sweep_opts, axis, values, sweep_out);
    if (*stats_cmd) return run_stats(stats_opts);
    if (*sets_cmd) return run_build_sets(sets_opts, sets_out);
    if (*dyn_cmd) return run_dynamics(dyn_opts, dyn);
    if (*grad_cmd) return run_gradcheck(grad_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParameterError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
  return 0;
}
