#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "proxylab/proxylab.hpp"

namespace {

using proxylab::RunConfig;

void print_error(const std::string& kind, const std::string& message, int code) {
  nlohmann::json j{{"error", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << j.dump() << std::endl;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(proxylab::detail::parse_real(nlohmann::json(item), "--grid"));
  }
  return out;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

// Defaults, then the config file, then command-line flags.
RunConfig load_config(const Common& c) {
  RunConfig cfg;
  if (!c.config.empty()) proxylab::apply_json(cfg, proxylab::read_json_file(c.config));
  if (c.seed) {
    cfg.seed = *c.seed;
    const auto n = cfg.seeds.size();
    cfg.seeds.clear();
    for (std::size_t i = 0; i < n; ++i) cfg.seeds.push_back(*c.seed + i);
  }
  if (!c.out.empty()) cfg.out = c.out;
  return cfg;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run configuration");
  sub->add_option("--seed", c.seed, "Run seed (sweeps use seed, seed+1, ...)");
  sub->add_option("--out", c.out, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Proxy-based metric learning experiments"};
  app.require_subcommand(1);

  Common train_c, eval_c, sweep_c, ablate_c, moons_c;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoint and logs");
  add_common(train, train_c);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
  add_common(eval, eval_c);
  std::string checkpoint, data_path, gallery_path, ks_text;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", data_path, "Dataset file (queries)")->required();
  eval->add_option("--gallery", gallery_path, "Gallery dataset file (query/gallery protocol)");
  eval->add_option("--ks", ks_text, "Comma-separated K values");

  auto* sweep = app.add_subcommand("sweep", "Sweep one hyperparameter over a grid");
  add_common(sweep, sweep_c);
  std::string axis, grid_text;
  sweep->add_option("--axis", axis, "temperature | kmax | proxy_lr");
  sweep->add_option("--grid", grid_text, "Comma-separated values, e.g. 1,1/3,1/9");

  auto* ablate = app.add_subcommand("ablate", "Remove each enhancement in turn");
  add_common(ablate, ablate_c);

  auto* moons = app.add_subcommand("moons", "Two-moons temperature demonstration");
  add_common(moons, moons_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("usage_error", e.what(), 2);
    return 2;
  }

  try {
    nlohmann::json summary;
    if (*train) {
      auto cfg = load_config(train_c);
      proxylab::cmd_train(cfg, &summary);
    } else if (*eval) {
      auto cfg = load_config(eval_c);
      proxylab::EvalRequest req;
      req.checkpoint = checkpoint;
      req.data = data_path;
      if (!gallery_path.empty()) req.gallery = gallery_path;
      req.ks = cfg.ks;
      if (!ks_text.empty()) {
        req.ks.clear();
        for (double k : parse_grid(ks_text)) {
          if (k < 1 || k != static_cast<double>(static_cast<std::size_t>(k)))
            throw proxylab::ConfigError("--ks: values must be positive integers");
          req.ks.push_back(static_cast<std::size_t>(k));
        }
      }
      req.nmi_seeds = cfg.nmi_seeds;
      req.out = cfg.out;
      proxylab::cmd_eval(req, &summary);
    } else if (*sweep) {
      auto cfg = load_config(sweep_c);
      std::optional<std::string> ax;
      std::optional<std::vector<double>> grid;
      if (!axis.empty()) ax = axis;
      if (!grid_text.empty()) grid = parse_grid(grid_text);
      auto res = proxylab::cmd_sweep(cfg, ax, grid);
      summary["axis"] = res.axis;
      for (const auto& r : res.rows)
        summary["rows"].push_back({{"value", r.value}, {"mean_r1", r.stats.mean}, {"std_r1", r.stats.std}});
    } else if (*ablate) {
      auto cfg = load_config(ablate_c);
      for (const auto& r : proxylab::cmd_ablate(cfg))
        summary["rows"].push_back({{"variant", r.variant}, {"mean_r1", r.stats.mean}, {"std_r1", r.stats.std}});
    } else if (*moons) {
      auto cfg = load_config(moons_c);
      for (const auto& r : proxylab::cmd_moons(cfg))
        summary["runs"].push_back({{"temperature", r.temperature}, {"seed", r.seed}, {"train_accuracy", r.train_accuracy}});
    }
    std::cout << summary.dump(1) << std::endl;
  } catch (const proxylab::Error& e) {
    print_error(e.kind(), e.what(), 1);
    return 1;
  } catch (const std::exception& e) {
    print_error("internal_error", e.what(), 3);
    return 3;
  }
  return 0;
}
