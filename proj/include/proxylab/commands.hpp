#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "proxylab/config.hpp"
#include "proxylab/data.hpp"
#include "proxylab/embedder.hpp"
#include "proxylab/errors.hpp"
#include "proxylab/evalkit.hpp"
#include "proxylab/hexfloat.hpp"
#include "proxylab/io.hpp"
#include "proxylab/pooling.hpp"
#include "proxylab/training.hpp"

namespace proxylab {

// ---------------------------------------------------------------------------
// Shared plumbing

struct PreparedData {
  LabeledDataset train;
  LabeledDataset test;
  std::size_t spatial = 1;   // 1 for point datasets
  std::size_t channels = 0;
};

inline std::uint64_t data_seed(const RunConfig& cfg, std::uint64_t run_seed) {
  return cfg.dataset.seed_from_run ? run_seed : cfg.dataset.gaussian.seed;
}

inline std::size_t feature_width(const LabeledDataset& ds) {
  return ds.has_maps() ? ds.maps().front().channels() : ds.points().cols();
}

inline PreparedData prepare_data(const RunConfig& cfg, std::uint64_t run_seed) {
  PreparedData p;
  if (!cfg.dataset.train_path.empty()) {
    if (cfg.dataset.test_path.empty())
      throw ConfigError("field 'dataset.test_path': required with dataset.train_path");
    p.train = load_dataset(cfg.dataset.train_path);
    p.test = load_dataset(cfg.dataset.test_path);
  } else {
    GaussianSpec spec = cfg.dataset.gaussian;
    spec.seed = data_seed(cfg, run_seed);
    auto split = make_zero_shot_gaussians(spec);
    p.train = std::move(split.train);
    p.test = std::move(split.test);
  }
  if (p.train.has_maps() != p.test.has_maps())
    throw ShapeError("train and test datasets hold different feature kinds");
  p.spatial = p.train.has_maps() ? p.train.maps().front().spatial() : 1;
  p.channels = feature_width(p.train);
  if (feature_width(p.test) != p.channels ||
      (p.test.has_maps() && p.test.maps().front().spatial() != p.spatial))
    throw ShapeError("train and test feature shapes differ");
  return p;
}

// Pools every sample with the given k (points pass through unchanged).
inline Matrix pooled_features(const LabeledDataset& ds, std::size_t k) {
  if (!ds.has_maps()) return ds.points();
  return pool_batch(ds.maps(), k);
}

inline TrainSet pooled_set(const LabeledDataset& ds, std::size_t k) {
  return {pooled_features(ds, k), ds.labels};
}

inline Matrix embed_dataset(const LabeledDataset& ds, const EmbedderParams& params) {
  return embed_pooled(pooled_features(ds, params.pool_k), params).value;
}

inline std::string log_csv(const std::vector<EpochRecord>& log) {
  std::string s = "epoch,loss,val_r1,lr_scale\n";
  for (const auto& r : log) {
    s += std::to_string(r.epoch) + "," + format_decimal(r.loss) + "," +
         (r.val_r1 ? format_decimal(*r.val_r1) : std::string()) + "," +
         format_decimal(r.lr_scale) + "\n";
  }
  return s;
}

inline nlohmann::json to_json(const RetrievalResult& r) {
  nlohmann::json j;
  for (const auto& [k, v] : r.recall_at) j["recall_at"][std::to_string(k)] = v;
  j["nmi"] = r.nmi;
  j["nmi_per_seed"] = r.nmi_per_seed;
  auto& km = j["kmeans"] = nlohmann::json::array();
  for (std::size_t s = 0; s < r.clusterings.size(); ++s) {
    km.push_back({{"seed", s},
                  {"inertia", r.clusterings[s].inertia},
                  {"iterations", r.clusterings[s].iterations}});
  }
  return j;
}

inline std::filesystem::path ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw FileError("cannot create output directory '" + dir + "'");
  const auto probe = std::filesystem::path(dir) / ".write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw FileError("output directory '" + dir + "' is not writable");
  }
  std::filesystem::remove(probe, ec);
  return dir;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

// ---------------------------------------------------------------------------
// One training run: train on the training classes, evaluate zero-shot on the
// held-out classes.

struct RunOutcome {
  ResolvedRun resolved;
  std::vector<EpochRecord> log;         // final-stage log
  std::vector<EpochRecord> stage1_log;  // empty for single-stage runs
  std::optional<double> initial_val_r1;
  std::size_t stopping_epoch = 0;
  std::vector<std::size_t> decay_epochs;
  std::uint64_t schedule_hash = 0;
  Checkpoint checkpoint;
  RetrievalResult test;
  double test_r1 = 0.0;
  std::size_t batches_per_epoch = 0;
};

inline RunOutcome run_experiment(const RunConfig& cfg, std::uint64_t seed,
                                 const PreparedData& data, bool with_nmi = true) {
  RunOutcome out;
  out.resolved = resolve(cfg, data.spatial, seed);
  const auto& r = out.resolved;
  const TrainSet train = pooled_set(data.train, r.pool_k);
  out.batches_per_epoch = batches_per_epoch(train.size(), r.fit.sampler.batch_size);

  EmbedderParams params;
  ProxyBank bank;
  if (cfg.two_stage) {
    auto ts = two_stage_fit(train, r.init, r.fit);
    out.stage1_log = ts.stage1.log;
    out.initial_val_r1 = ts.stage1.initial_val_r1;
    out.stopping_epoch = ts.stopping_epoch;
    out.decay_epochs = ts.stage2.decay_epochs;
    out.log = ts.stage2.log;
    out.schedule_hash = ts.stage2.schedule_hash;
    params = std::move(ts.stage2.params);
    bank = std::move(ts.stage2.bank);
  } else {
    const auto classes = sorted_classes(train.labels);
    auto [p0, b0] = make_model(train.pooled.cols(), classes, r.init);
    auto fr = fit(train, nullptr, std::move(p0), std::move(b0), r.fit);
    out.log = fr.log;
    out.stopping_epoch = fr.best_epoch;
    out.schedule_hash = fr.schedule_hash;
    params = std::move(fr.params);
    bank = std::move(fr.bank);
  }

  const Matrix test_emb = embed_dataset(data.test, params);
  out.test = evaluate(test_emb, data.test.labels, cfg.ks, with_nmi ? cfg.nmi_seeds : 0);
  out.test_r1 = out.test.recall_at.count(1) ? out.test.recall_at.at(1)
                                            : recall_at_k(test_emb, data.test.labels,
                                                          std::vector<std::size_t>{1})
                                                  .recall_at.at(1);
  out.checkpoint.params = std::move(params);
  out.checkpoint.bank = std::move(bank);
  out.checkpoint.seed = seed;
  out.checkpoint.config = to_json(r, out.batches_per_epoch);
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainArtifacts {
  std::filesystem::path checkpoint, log, stage1_log, config, result, test_data;
};

inline TrainArtifacts cmd_train(const RunConfig& cfg, nlohmann::json* summary = nullptr) {
  const auto dir = ensure_out_dir(cfg.out);
  const auto data = prepare_data(cfg, cfg.seed);
  const auto run = run_experiment(cfg, cfg.seed, data);

  TrainArtifacts a{dir / "checkpoint.json", dir / "train_log.csv", {}, dir / "config.json",
                   dir / "result.json", dir / "test.dataset"};
  save_checkpoint(run.checkpoint, a.checkpoint);
  write_text_file(a.log, log_csv(run.log));
  if (cfg.two_stage) {
    a.stage1_log = dir / "stage1_log.csv";
    write_text_file(a.stage1_log, log_csv(run.stage1_log));
  }
  nlohmann::json echo;
  echo["config"] = to_json(cfg);
  echo["resolved"] = run.checkpoint.config;
  write_text_file(a.config, echo.dump(1) + "\n");
  save_dataset(data.test, a.test_data);

  nlohmann::json res;
  res["seed"] = cfg.seed;
  res["stopping_epoch"] = run.stopping_epoch;
  res["decay_epochs"] = run.decay_epochs;
  res["schedule_hash"] = run.schedule_hash;
  if (run.initial_val_r1) res["initial_val_r1"] = *run.initial_val_r1;
  res["test"] = to_json(run.test);
  write_text_file(a.result, res.dump(1) + "\n");
  if (summary) *summary = res;
  return a;
}

// ---------------------------------------------------------------------------
// eval

struct EvalRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::optional<std::filesystem::path> gallery;  // query/gallery protocol when set
  std::vector<std::size_t> ks{1, 2, 4, 8};
  std::size_t nmi_seeds = kDefaultNmiSeeds;
  std::string out = "out";
};

inline void check_compatible(const LabeledDataset& ds, const EmbedderParams& p,
                             const std::string& what) {
  const std::size_t width = feature_width(ds);
  if (width != p.channels()) {
    throw ShapeError(what + " has " + std::to_string(width) + " channels, checkpoint expects " +
                     std::to_string(p.channels()));
  }
  if (ds.has_maps()) {
    const auto n = ds.maps().front().positions();
    if (p.pool_k > n) {
      throw ShapeError(what + " has " + std::to_string(n) + " positions, checkpoint pools k=" +
                       std::to_string(p.pool_k));
    }
  } else if (p.pool_k != 1) {
    throw ShapeError(what + " holds points but the checkpoint pools k=" +
                     std::to_string(p.pool_k));
  }
}

inline RetrievalResult cmd_eval(const EvalRequest& req, nlohmann::json* summary = nullptr) {
  const auto dir = ensure_out_dir(req.out);
  const auto ck = load_checkpoint(req.checkpoint);
  const auto queries = load_dataset(req.data);
  check_compatible(queries, ck.params, "dataset");
  const Matrix q = embed_dataset(queries, ck.params);
  RetrievalResult res;
  nlohmann::json j;
  if (req.gallery) {
    const auto gallery = load_dataset(*req.gallery);
    check_compatible(gallery, ck.params, "gallery");
    const Matrix g = embed_dataset(gallery, ck.params);
    res = evaluate(q, queries.labels, g, gallery.labels, req.ks, req.nmi_seeds);
    j["protocol"] = "query_gallery";
    save_embeddings(g, gallery.labels, dir / "gallery_embeddings.txt");
  } else {
    res = evaluate(q, queries.labels, req.ks, req.nmi_seeds);
    j["protocol"] = "same_set";
  }
  save_embeddings(q, queries.labels, dir / "embeddings.txt");
  j.update(to_json(res));
  write_text_file(dir / "eval.json", j.dump(1) + "\n");
  if (summary) *summary = j;
  return res;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepRow {
  double value = 0.0;
  std::vector<double> r1;  // per seed, in seed order
  MeanStd stats;
};

struct SweepResult {
  std::string axis;
  std::vector<std::uint64_t> seeds;
  std::vector<SweepRow> rows;
};

inline constexpr std::size_t kMinSweepSeeds = 3;

inline SweepResult run_sweep(const RunConfig& base, std::optional<std::string> axis_override = {},
                             std::optional<std::vector<double>> grid_override = {}) {
  SweepResult out;
  out.axis = axis_override.value_or(base.sweep.axis);
  out.seeds = base.seeds;
  if (out.seeds.size() < kMinSweepSeeds) {
    throw ConfigError("field 'seeds': a sweep needs >= " + std::to_string(kMinSweepSeeds) +
                      " seeds, got " + std::to_string(out.seeds.size()));
  }
  if (out.axis != "temperature" && out.axis != "kmax" && out.axis != "proxy_lr")
    throw ConfigError("field 'sweep.axis': unknown axis '" + out.axis + "'");
  std::vector<double> grid = grid_override.value_or(base.sweep.grid);

  std::map<std::uint64_t, PreparedData> data;
  for (auto s : out.seeds) data.emplace(s, prepare_data(base, s));
  if (grid.empty() && out.axis == "kmax") {
    const std::size_t n = data.begin()->second.spatial * data.begin()->second.spatial;
    for (std::size_t k = 1; k <= n; ++k) grid.push_back(static_cast<double>(k));
  }
  if (grid.empty()) throw ConfigError("field 'sweep.grid': must not be empty");

  for (double v : grid) {
    RunConfig cfg = base;
    if (out.axis == "temperature") {
      cfg.temperature = v;
    } else if (out.axis == "proxy_lr") {
      cfg.proxy_lr = v;
    } else {
      if (v < 1 || v != std::floor(v)) throw ConfigError("field 'sweep.grid': k must be a positive integer");
      cfg.pool = PoolMode::kmax;
      cfg.pool_k = static_cast<std::size_t>(v);
    }
    SweepRow row;
    row.value = v;
    for (auto s : out.seeds) row.r1.push_back(run_experiment(cfg, s, data.at(s), false).test_r1);
    row.stats = mean_std(row.r1);
    out.rows.push_back(std::move(row));
  }
  return out;
}

inline std::string sweep_csv(const SweepResult& s) {
  std::string csv = "value,mean_r1,std_r1\n";
  for (const auto& r : s.rows)
    csv += format_decimal(r.value) + "," + format_decimal(r.stats.mean) + "," +
           format_decimal(r.stats.std) + "\n";
  return csv;
}

inline SweepResult cmd_sweep(const RunConfig& base, std::optional<std::string> axis = {},
                             std::optional<std::vector<double>> grid = {}) {
  const auto dir = ensure_out_dir(base.out);
  auto res = run_sweep(base, std::move(axis), std::move(grid));
  write_text_file(dir / ("sweep_" + res.axis + ".csv"), sweep_csv(res));
  std::string runs = "value,seed,r1\n";
  for (const auto& r : res.rows)
    for (std::size_t i = 0; i < res.seeds.size(); ++i)
      runs += format_decimal(r.value) + "," + std::to_string(res.seeds[i]) + "," +
              format_decimal(r.r1[i]) + "\n";
  write_text_file(dir / ("sweep_" + res.axis + "_runs.csv"), runs);
  return res;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
  std::string variant;  // "full" or "-<enhancement>"
  std::vector<double> r1;
  std::vector<std::uint64_t> schedule_hash;
  MeanStd stats;
};

inline std::vector<AblationRow> run_ablation(const RunConfig& base) {
  if (base.seeds.empty()) throw ConfigError("field 'seeds': must not be empty");
  std::map<std::uint64_t, PreparedData> data;
  for (auto s : base.seeds) data.emplace(s, prepare_data(base, s));

  std::vector<std::pair<std::string, RunConfig>> variants;
  RunConfig full = base;
  full.loss = LossKind::proxynca_pp;
  full.enhancements = Enhancements{};
  variants.emplace_back("full", full);
  for (const char* name : kEnhancementNames) {
    RunConfig v = full;
    enhancement(v.enhancements, name) = false;
    variants.emplace_back(std::string("-") + name, v);
  }
  std::vector<AblationRow> rows;
  for (const auto& [name, cfg] : variants) {
    AblationRow row{name, {}, {}, {}};
    for (auto s : base.seeds) {
      auto run = run_experiment(cfg, s, data.at(s), false);
      row.r1.push_back(run.test_r1);
      row.schedule_hash.push_back(run.schedule_hash);
    }
    row.stats = mean_std(row.r1);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<AblationRow> cmd_ablate(const RunConfig& base) {
  const auto dir = ensure_out_dir(base.out);
  auto rows = run_ablation(base);
  std::string csv = "variant,mean_r1,std_r1,delta_r1\n";
  for (const auto& r : rows)
    csv += r.variant + "," + format_decimal(r.stats.mean) + "," + format_decimal(r.stats.std) +
           "," + format_decimal(r.stats.mean - rows.front().stats.mean) + "\n";
  write_text_file(dir / "ablation.csv", csv);
  std::string runs = "variant,seed,r1,schedule_hash\n";
  for (const auto& r : rows)
    for (std::size_t i = 0; i < base.seeds.size(); ++i)
      runs += r.variant + "," + std::to_string(base.seeds[i]) + "," + format_decimal(r.r1[i]) +
              "," + std::to_string(r.schedule_hash[i]) + "\n";
  write_text_file(dir / "ablation_runs.csv", runs);
  return rows;
}

// ---------------------------------------------------------------------------
// moons

struct MoonsRun {
  double temperature = 1.0;
  std::uint64_t seed = 0;
  double train_accuracy = 0.0;
  double final_loss = 0.0;
  Matrix lattice;  // rows: x, y, p0, p1
};

inline Matrix lattice_probabilities(const ToyBackbone& net, const MoonsConfig& m,
                                    double temperature) {
  const std::size_t n = m.lattice_steps;
  if (n < 2) throw ConfigError("field 'moons.lattice_steps': must be >= 2");
  Matrix pts(n * n, 2);
  for (std::size_t iy = 0; iy < n; ++iy) {
    for (std::size_t ix = 0; ix < n; ++ix) {
      const double fx = static_cast<double>(ix) / static_cast<double>(n - 1);
      const double fy = static_cast<double>(iy) / static_cast<double>(n - 1);
      pts(iy * n + ix, 0) = m.lattice_min_x + fx * (m.lattice_max_x - m.lattice_min_x);
      pts(iy * n + ix, 1) = m.lattice_min_y + fy * (m.lattice_max_y - m.lattice_min_y);
    }
  }
  const Matrix logp = log_softmax_rows(toy_forward(pts, net).value, temperature).value;
  Matrix out(n * n, 4);
  for (std::size_t r = 0; r < n * n; ++r) {
    out(r, 0) = pts(r, 0);
    out(r, 1) = pts(r, 1);
    out(r, 2) = std::exp(logp(r, 0));
    out(r, 3) = std::exp(logp(r, 1));
  }
  return out;
}

inline std::vector<MoonsRun> run_moons(const MoonsConfig& m) {
  if (m.temperatures.empty()) throw ConfigError("field 'moons.temperatures': must not be empty");
  if (m.seeds.empty()) throw ConfigError("field 'moons.seeds': must not be empty");
  const auto ds = make_two_moons(m.samples, m.noise, m.data_seed);
  std::vector<MoonsRun> runs;
  for (double t : m.temperatures) {
    if (!(t > 0.0)) throw ConfigError("field 'moons.temperatures': must be > 0");
    for (auto s : m.seeds) {
      ToyTrainConfig tc{m.lr, m.steps, t, s};
      auto fr = fit_toy(ds.points(), ds.labels, tc);
      runs.push_back({t, s, fr.train_accuracy, fr.final_loss, lattice_probabilities(fr.net, m, t)});
    }
  }
  return runs;
}

inline std::vector<MoonsRun> cmd_moons(const RunConfig& cfg) {
  const auto dir = ensure_out_dir(cfg.out);
  auto runs = run_moons(cfg.moons);
  std::string acc = "temperature,seed,train_accuracy,final_loss\n";
  std::map<double, std::vector<double>> by_t;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    acc += format_decimal(r.temperature) + "," + std::to_string(r.seed) + "," +
           format_decimal(r.train_accuracy) + "," + format_decimal(r.final_loss) + "\n";
    by_t[r.temperature].push_back(r.train_accuracy);
    std::string lat = "x,y,p0,p1\n";
    for (std::size_t row = 0; row < r.lattice.rows(); ++row)
      lat += format_decimal(r.lattice(row, 0)) + "," + format_decimal(r.lattice(row, 1)) + "," +
             format_decimal(r.lattice(row, 2)) + "," + format_decimal(r.lattice(row, 3)) + "\n";
    char name[96];
    std::snprintf(name, sizeof name, "moons_lattice_t%zu_seed%llu.csv",
                  i / cfg.moons.seeds.size(), static_cast<unsigned long long>(r.seed));
    write_text_file(dir / name, lat);
  }
  write_text_file(dir / "moons_accuracy.csv", acc);
  std::string summary = "temperature,mean_accuracy,std_accuracy\n";
  for (double t : cfg.moons.temperatures) {
    const auto ms = mean_std(by_t[t]);
    summary += format_decimal(t) + "," + format_decimal(ms.mean) + "," + format_decimal(ms.std) + "\n";
  }
  write_text_file(dir / "moons_summary.csv", summary);
  return runs;
}

}  // namespace proxylab
