#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "proxylab/data.hpp"
#include "proxylab/errors.hpp"
#include "proxylab/hexfloat.hpp"
#include "proxylab/losses.hpp"
#include "proxylab/pooling.hpp"
#include "proxylab/training.hpp"

namespace proxylab {

// The six switchable enhancements of the full method.
struct Enhancements {
  bool prob = true;   // proxy assignment probability (loss over all proxies)
  bool scale = true;  // low temperature
  bool cbs = true;    // class-balanced sampling
  bool norm = true;   // affine-free layer norm before L2 normalisation
  bool max = true;    // max-style pooling instead of GAP
  bool fast = true;   // separate proxy learning rate

  bool operator==(const Enhancements&) const = default;
};

inline constexpr const char* kEnhancementNames[] = {"scale", "max", "norm", "cbs", "fast", "prob"};

inline bool& enhancement(Enhancements& e, std::string_view name) {
  if (name == "prob") return e.prob;
  if (name == "scale") return e.scale;
  if (name == "cbs") return e.cbs;
  if (name == "norm") return e.norm;
  if (name == "max") return e.max;
  if (name == "fast") return e.fast;
  throw ConfigError("unknown enhancement '" + std::string(name) + "'");
}

struct DatasetConfig {
  GaussianSpec gaussian;
  bool seed_from_run = true;  // data seed follows the run seed unless "seed" is given
  std::string train_path;     // when set, load files instead of generating
  std::string test_path;
};

struct MoonsConfig {
  std::size_t samples = 600;
  double noise = 0.3;
  std::uint64_t data_seed = 0;
  std::vector<double> temperatures{1.0, 1.0 / 3.0, 1.0 / 9.0};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double lr = 0.1;
  std::size_t steps = 2000;
  std::size_t lattice_steps = 41;
  double lattice_min_x = -1.5, lattice_max_x = 2.5;
  double lattice_min_y = -1.0, lattice_max_y = 1.5;
};

struct SweepConfig {
  std::string axis = "temperature";
  std::vector<double> grid;  // empty kmax grid means 1..M*M
};

struct RunConfig {
  LossKind loss = LossKind::proxynca_pp;
  Enhancements enhancements;
  double temperature = 1.0 / 9.0;
  PoolMode pool = PoolMode::gmp;
  std::optional<std::size_t> pool_k;
  double base_lr = 4e-3;
  double proxy_lr = 4e2;
  double momentum = 0.0;
  std::size_t batch_size = 32;
  std::size_t classes_per_batch = 4;
  std::size_t epochs = 30;
  std::size_t emb_dim = 64;
  std::size_t patience = 4;
  double decay_factor = 0.5;
  bool two_stage = true;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<std::size_t> ks{1, 2, 4, 8};
  std::size_t nmi_seeds = 5;
  DatasetConfig dataset;
  SweepConfig sweep;
  MoonsConfig moons;
  std::string out = "out";
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

// Accepts a JSON number or a string such as "1/9" or "0x1p-3".
inline double parse_real(const nlohmann::json& v, const std::string& field) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    const auto slash = s.find('/');
    if (slash != std::string::npos) {
      auto num = parse_double(std::string_view(s).substr(0, slash));
      auto den = parse_double(std::string_view(s).substr(slash + 1));
      if (num && den && *den != 0.0) return *num / *den;
    } else if (auto d = parse_double(s)) {
      return *d;
    }
  }
  throw ConfigError("field '" + field + "': expected a number, got " + v.dump());
}

template <class T>
T get_as(const nlohmann::json& v, const std::string& field) {
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
        throw ConfigError("field '" + field + "': expected a non-negative integer, got " +
                          v.dump());
    }
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("field '" + field + "': wrong type, got " + v.dump());
  }
}

inline void check_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                       const std::string& where) {
  if (!obj.is_object()) throw ConfigError("field '" + where + "': expected an object");
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.contains(k)) {
      throw ConfigError("unknown field '" + (where.empty() ? k : where + "." + k) + "'");
    }
  }
}

inline std::vector<double> parse_real_list(const nlohmann::json& v, const std::string& field) {
  if (!v.is_array()) throw ConfigError("field '" + field + "': expected an array");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(parse_real(v[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

}  // namespace detail

inline void apply_json(RunConfig& cfg, const nlohmann::json& j) {
  using detail::get_as;
  using detail::parse_real;
  detail::check_keys(j,
                     {"loss", "enhancements", "temperature", "pool", "base_lr", "proxy_lr",
                      "momentum", "batch_size", "classes_per_batch", "epochs", "emb_dim",
                      "patience", "decay_factor", "two_stage", "seed", "seeds", "ks",
                      "nmi_seeds", "dataset", "sweep", "moons", "out"},
                     "");
  if (j.contains("loss")) {
    try {
      cfg.loss = parse_loss_kind(get_as<std::string>(j["loss"], "loss"));
    } catch (const Error& e) {
      throw ConfigError(std::string("field 'loss': ") + e.what());
    }
  }
  if (j.contains("enhancements")) {
    const auto& e = j["enhancements"];
    detail::check_keys(e, {"prob", "scale", "cbs", "norm", "max", "fast"}, "enhancements");
    for (const auto& [k, v] : e.items())
      enhancement(cfg.enhancements, k) = get_as<bool>(v, "enhancements." + k);
  }
  if (j.contains("temperature")) cfg.temperature = parse_real(j["temperature"], "temperature");
  if (j.contains("pool")) {
    const auto& p = j["pool"];
    detail::check_keys(p, {"mode", "k"}, "pool");
    if (p.contains("mode")) {
      try {
        cfg.pool = parse_pool_mode(get_as<std::string>(p["mode"], "pool.mode"));
      } catch (const Error& e) {
        throw ConfigError(std::string("field 'pool.mode': ") + e.what());
      }
    }
    if (p.contains("k")) cfg.pool_k = get_as<std::size_t>(p["k"], "pool.k");
  }
  if (j.contains("base_lr")) cfg.base_lr = parse_real(j["base_lr"], "base_lr");
  if (j.contains("proxy_lr")) cfg.proxy_lr = parse_real(j["proxy_lr"], "proxy_lr");
  if (j.contains("momentum")) cfg.momentum = parse_real(j["momentum"], "momentum");
  if (j.contains("batch_size")) cfg.batch_size = get_as<std::size_t>(j["batch_size"], "batch_size");
  if (j.contains("classes_per_batch"))
    cfg.classes_per_batch = get_as<std::size_t>(j["classes_per_batch"], "classes_per_batch");
  if (j.contains("epochs")) cfg.epochs = get_as<std::size_t>(j["epochs"], "epochs");
  if (j.contains("emb_dim")) cfg.emb_dim = get_as<std::size_t>(j["emb_dim"], "emb_dim");
  if (j.contains("patience")) cfg.patience = get_as<std::size_t>(j["patience"], "patience");
  if (j.contains("decay_factor")) cfg.decay_factor = parse_real(j["decay_factor"], "decay_factor");
  if (j.contains("two_stage")) cfg.two_stage = get_as<bool>(j["two_stage"], "two_stage");
  if (j.contains("seed")) cfg.seed = get_as<std::uint64_t>(j["seed"], "seed");
  if (j.contains("seeds")) cfg.seeds = get_as<std::vector<std::uint64_t>>(j["seeds"], "seeds");
  if (j.contains("ks")) cfg.ks = get_as<std::vector<std::size_t>>(j["ks"], "ks");
  if (j.contains("nmi_seeds")) cfg.nmi_seeds = get_as<std::size_t>(j["nmi_seeds"], "nmi_seeds");
  if (j.contains("out")) cfg.out = get_as<std::string>(j["out"], "out");
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    detail::check_keys(d,
                       {"num_classes", "per_class", "dim", "spatial", "channels", "separation",
                        "seed", "blob_sigma", "nuisance_dim", "nuisance_sigma", "clutter_sigma",
                        "object_offset", "num_groups", "group_separation", "train_path",
                        "test_path"},
                       "dataset");
    auto& g = cfg.dataset.gaussian;
    auto count = [&](const char* k, std::size_t& dst) {
      if (d.contains(k)) dst = get_as<std::size_t>(d[k], std::string("dataset.") + k);
    };
    auto real = [&](const char* k, double& dst) {
      if (d.contains(k)) dst = parse_real(d[k], std::string("dataset.") + k);
    };
    count("num_classes", g.num_classes);
    count("per_class", g.per_class);
    count("dim", g.dim);
    count("spatial", g.spatial);
    count("channels", g.channels);
    count("nuisance_dim", g.nuisance_dim);
    count("num_groups", g.num_groups);
    real("group_separation", g.group_separation);
    real("separation", g.separation);
    real("blob_sigma", g.blob_sigma);
    real("nuisance_sigma", g.nuisance_sigma);
    real("clutter_sigma", g.clutter_sigma);
    real("object_offset", g.object_offset);
    if (d.contains("seed")) {
      g.seed = get_as<std::uint64_t>(d["seed"], "dataset.seed");
      cfg.dataset.seed_from_run = false;
    }
    if (d.contains("train_path"))
      cfg.dataset.train_path = get_as<std::string>(d["train_path"], "dataset.train_path");
    if (d.contains("test_path"))
      cfg.dataset.test_path = get_as<std::string>(d["test_path"], "dataset.test_path");
  }
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    detail::check_keys(s, {"axis", "grid"}, "sweep");
    if (s.contains("axis")) cfg.sweep.axis = get_as<std::string>(s["axis"], "sweep.axis");
    if (s.contains("grid")) cfg.sweep.grid = detail::parse_real_list(s["grid"], "sweep.grid");
  }
  if (j.contains("moons")) {
    const auto& m = j["moons"];
    detail::check_keys(m,
                       {"samples", "noise", "data_seed", "temperatures", "seeds", "lr", "steps",
                        "lattice_steps", "lattice_min_x", "lattice_max_x", "lattice_min_y",
                        "lattice_max_y"},
                       "moons");
    auto& mc = cfg.moons;
    if (m.contains("samples")) mc.samples = get_as<std::size_t>(m["samples"], "moons.samples");
    if (m.contains("noise")) mc.noise = parse_real(m["noise"], "moons.noise");
    if (m.contains("data_seed"))
      mc.data_seed = get_as<std::uint64_t>(m["data_seed"], "moons.data_seed");
    if (m.contains("temperatures"))
      mc.temperatures = detail::parse_real_list(m["temperatures"], "moons.temperatures");
    if (m.contains("seeds")) mc.seeds = get_as<std::vector<std::uint64_t>>(m["seeds"], "moons.seeds");
    if (m.contains("lr")) mc.lr = parse_real(m["lr"], "moons.lr");
    if (m.contains("steps")) mc.steps = get_as<std::size_t>(m["steps"], "moons.steps");
    if (m.contains("lattice_steps"))
      mc.lattice_steps = get_as<std::size_t>(m["lattice_steps"], "moons.lattice_steps");
    if (m.contains("lattice_min_x")) mc.lattice_min_x = parse_real(m["lattice_min_x"], "moons.lattice_min_x");
    if (m.contains("lattice_max_x")) mc.lattice_max_x = parse_real(m["lattice_max_x"], "moons.lattice_max_x");
    if (m.contains("lattice_min_y")) mc.lattice_min_y = parse_real(m["lattice_min_y"], "moons.lattice_min_y");
    if (m.contains("lattice_max_y")) mc.lattice_max_y = parse_real(m["lattice_max_y"], "moons.lattice_max_y");
  }
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig cfg;
  apply_json(cfg, j);
  return cfg;
}

// ---------------------------------------------------------------------------
// Resolution: the enhancement switches override the raw fields.

struct ResolvedRun {
  LossKind loss = LossKind::proxynca_pp;
  Enhancements effective;  // what actually applies after resolution
  double temperature = 1.0;
  PoolMode pool = PoolMode::gmp;
  std::size_t pool_k = 1;
  bool class_balanced = true;
  bool layer_norm = true;
  FitConfig fit;
  ModelInit init;
};

// `spatial` is the feature-map side M of the dataset in use.
inline ResolvedRun resolve(const RunConfig& cfg, std::size_t spatial, std::uint64_t seed) {
  const auto& e = cfg.enhancements;
  ResolvedRun r;
  r.loss = cfg.loss;
  if (cfg.loss == LossKind::proxynca_pp && !e.prob) r.loss = LossKind::proxynca;
  r.effective = e;
  r.effective.prob = r.loss == LossKind::proxynca_pp || r.loss == LossKind::normsoftmax;

  r.temperature = e.scale ? cfg.temperature : 1.0;
  if (!(r.temperature > 0.0)) throw ConfigError("field 'temperature': must be > 0");
  if (!e.max) {
    r.pool = PoolMode::gap;
  } else {
    r.pool = cfg.pool;
  }
  try {
    r.pool_k = pool_mode(r.pool, cfg.pool_k, spatial);
  } catch (const Error& err) {
    throw ConfigError(std::string("field 'pool': ") + err.what());
  }
  if (r.pool_k < 1 || r.pool_k > spatial * spatial) {
    throw ConfigError("field 'pool.k': " + std::to_string(r.pool_k) + " outside [1, " +
                      std::to_string(spatial * spatial) + "]");
  }
  r.class_balanced = e.cbs;
  r.layer_norm = e.norm;
  if (cfg.emb_dim < 2 && e.norm) throw ConfigError("field 'emb_dim': layer norm needs >= 2");
  if (cfg.emb_dim < 1) throw ConfigError("field 'emb_dim': must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("field 'batch_size': must be >= 1");
  if (!(cfg.decay_factor > 0.0 && cfg.decay_factor <= 1.0))
    throw ConfigError("field 'decay_factor': must be in (0, 1]");

  auto& f = r.fit;
  f.loss = r.loss;
  f.optim.base_lr = cfg.base_lr;
  f.optim.proxy_lr = e.fast ? cfg.proxy_lr : cfg.base_lr;
  f.optim.momentum = cfg.momentum;
  f.optim.epochs = cfg.epochs;
  f.optim.temperature = r.temperature;
  try {
    f.optim.validate();
  } catch (const Error& err) {
    throw ConfigError(std::string("optimizer: ") + err.what());
  }
  f.sampler.batch_size = cfg.batch_size;
  f.sampler.classes_per_batch = cfg.classes_per_batch;
  f.sampler.seed = seed;
  f.class_balanced = r.class_balanced;
  f.patience = cfg.patience;
  f.decay_factor = cfg.decay_factor;

  r.init.emb_dim = cfg.emb_dim;
  r.init.seed = seed;
  r.init.pool_k = r.pool_k;
  r.init.use_layer_norm = r.layer_norm;
  return r;
}

// ---------------------------------------------------------------------------
// Echo

inline nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["loss"] = std::string(to_string(cfg.loss));
  auto& e = j["enhancements"];
  e["prob"] = cfg.enhancements.prob;
  e["scale"] = cfg.enhancements.scale;
  e["cbs"] = cfg.enhancements.cbs;
  e["norm"] = cfg.enhancements.norm;
  e["max"] = cfg.enhancements.max;
  e["fast"] = cfg.enhancements.fast;
  j["temperature"] = format_hex(cfg.temperature);
  j["pool"]["mode"] = std::string(to_string(cfg.pool));
  if (cfg.pool_k) j["pool"]["k"] = *cfg.pool_k;
  j["base_lr"] = format_hex(cfg.base_lr);
  j["proxy_lr"] = format_hex(cfg.proxy_lr);
  j["momentum"] = format_hex(cfg.momentum);
  j["batch_size"] = cfg.batch_size;
  j["classes_per_batch"] = cfg.classes_per_batch;
  j["epochs"] = cfg.epochs;
  j["emb_dim"] = cfg.emb_dim;
  j["patience"] = cfg.patience;
  j["decay_factor"] = format_hex(cfg.decay_factor);
  j["two_stage"] = cfg.two_stage;
  j["seed"] = cfg.seed;
  j["seeds"] = cfg.seeds;
  j["ks"] = cfg.ks;
  j["nmi_seeds"] = cfg.nmi_seeds;
  j["out"] = cfg.out;
  auto& d = j["dataset"];
  const auto& g = cfg.dataset.gaussian;
  if (!cfg.dataset.train_path.empty()) {
    d["train_path"] = cfg.dataset.train_path;
    d["test_path"] = cfg.dataset.test_path;
  } else {
    d["num_classes"] = g.num_classes;
    d["per_class"] = g.per_class;
    d["dim"] = g.dim;
    d["spatial"] = g.spatial;
    d["channels"] = g.channels;
    d["nuisance_dim"] = g.nuisance_dim;
    d["separation"] = format_hex(g.separation);
    d["blob_sigma"] = format_hex(g.blob_sigma);
    d["nuisance_sigma"] = format_hex(g.nuisance_sigma);
    d["clutter_sigma"] = format_hex(g.clutter_sigma);
    d["object_offset"] = format_hex(g.object_offset);
    d["num_groups"] = g.num_groups;
    d["group_separation"] = format_hex(g.group_separation);
    if (!cfg.dataset.seed_from_run) d["seed"] = g.seed;
  }
  j["sweep"]["axis"] = cfg.sweep.axis;
  auto& grid = j["sweep"]["grid"] = nlohmann::json::array();
  for (double v : cfg.sweep.grid) grid.push_back(format_hex(v));
  const auto& m = cfg.moons;
  auto& mj = j["moons"];
  mj["samples"] = m.samples;
  mj["noise"] = format_hex(m.noise);
  mj["data_seed"] = m.data_seed;
  auto& temps = mj["temperatures"] = nlohmann::json::array();
  for (double t : m.temperatures) temps.push_back(format_hex(t));
  mj["seeds"] = m.seeds;
  mj["lr"] = format_hex(m.lr);
  mj["steps"] = m.steps;
  mj["lattice_steps"] = m.lattice_steps;
  mj["lattice_min_x"] = format_hex(m.lattice_min_x);
  mj["lattice_max_x"] = format_hex(m.lattice_max_x);
  mj["lattice_min_y"] = format_hex(m.lattice_min_y);
  mj["lattice_max_y"] = format_hex(m.lattice_max_y);
  return j;
}

// Echo of what a single run actually used.
inline nlohmann::json to_json(const ResolvedRun& r, std::size_t batches_per_epoch) {
  nlohmann::json j;
  j["loss"] = std::string(to_string(r.loss));
  j["enhancements"] = {{"prob", r.effective.prob}, {"scale", r.effective.scale},
                       {"cbs", r.effective.cbs},   {"norm", r.effective.norm},
                       {"max", r.effective.max},   {"fast", r.effective.fast}};
  j["temperature"] = format_hex(r.temperature);
  j["pool"] = {{"mode", std::string(to_string(r.pool))}, {"k", r.pool_k}};
  j["base_lr"] = format_hex(r.fit.optim.base_lr);
  j["proxy_lr"] = format_hex(r.fit.optim.proxy_lr);
  j["momentum"] = format_hex(r.fit.optim.momentum);
  j["epochs"] = r.fit.optim.epochs;
  j["batch_size"] = r.fit.sampler.batch_size;
  j["classes_per_batch"] = r.fit.sampler.classes_per_batch;
  j["class_balanced"] = r.class_balanced;
  j["batches_per_epoch"] = batches_per_epoch;
  j["layer_norm"] = r.layer_norm;
  j["emb_dim"] = r.init.emb_dim;
  j["seed"] = r.init.seed;
  j["patience"] = r.fit.patience;
  j["decay_factor"] = format_hex(r.fit.decay_factor);
  return j;
}

}  // namespace proxylab
