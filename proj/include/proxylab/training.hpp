#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "proxylab/embedder.hpp"
#include "proxylab/errors.hpp"
#include "proxylab/evalkit.hpp"
#include "proxylab/losses.hpp"
#include "proxylab/matrix.hpp"
#include "proxylab/rng.hpp"

namespace proxylab {

using IndexBatch = std::vector<std::size_t>;

// ---------------------------------------------------------------------------
// Sampling

struct SamplerConfig {
  std::size_t batch_size = 32;         // N_b
  std::size_t classes_per_batch = 4;   // N_c
  std::uint64_t seed = 0;
};

inline std::size_t batches_per_epoch(std::size_t samples, std::size_t batch_size) {
  return (samples + batch_size - 1) / batch_size;
}

// Every batch holds exactly N_c distinct classes with floor(N_b/N_c) samples
// each. Classes are drawn without replacement; samples within a class are
// drawn without replacement unless the class is too small.
class ClassBalancedSampler {
 public:
  ClassBalancedSampler(std::span<const int> labels, const SamplerConfig& cfg)
      : cfg_(cfg), rng_(cfg.seed, Stream::sampler), total_(labels.size()) {
    for (std::size_t i = 0; i < labels.size(); ++i) by_class_[labels[i]].push_back(i);
    for (const auto& [c, idx] : by_class_) classes_.push_back(c);
    if (cfg.classes_per_batch < 1) throw ConfigError("classes_per_batch must be >= 1");
    if (cfg.classes_per_batch > classes_.size()) {
      throw ConfigError("classes_per_batch=" + std::to_string(cfg.classes_per_batch) +
                        " exceeds the " + std::to_string(classes_.size()) +
                        " available classes");
    }
    per_class_ = cfg.batch_size / cfg.classes_per_batch;
    if (per_class_ < 1) {
      throw ConfigError("batch_size " + std::to_string(cfg.batch_size) +
                        " is smaller than classes_per_batch " +
                        std::to_string(cfg.classes_per_batch));
    }
  }

  std::size_t per_class() const noexcept { return per_class_; }

  IndexBatch next_batch() {
    std::vector<int> pool = classes_;
    // partial Fisher-Yates: the first N_c slots end up as the chosen classes
    for (std::size_t i = 0; i < cfg_.classes_per_batch; ++i) {
      const auto j = i + static_cast<std::size_t>(rng_.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    IndexBatch batch;
    batch.reserve(cfg_.classes_per_batch * per_class_);
    for (std::size_t i = 0; i < cfg_.classes_per_batch; ++i) {
      std::vector<std::size_t> members = by_class_.at(pool[i]);
      if (members.size() >= per_class_) {
        for (std::size_t s = 0; s < per_class_; ++s) {
          const auto j = s + static_cast<std::size_t>(rng_.below(members.size() - s));
          std::swap(members[s], members[j]);
          batch.push_back(members[s]);
        }
      } else {
        for (std::size_t s = 0; s < per_class_; ++s)
          batch.push_back(members[static_cast<std::size_t>(rng_.below(members.size()))]);
      }
    }
    return batch;
  }

  std::vector<IndexBatch> epoch() {
    std::vector<IndexBatch> out(batches_per_epoch(total_, cfg_.batch_size));
    for (auto& b : out) b = next_batch();
    return out;
  }

 private:
  SamplerConfig cfg_;
  Rng rng_;
  std::size_t total_;
  std::size_t per_class_ = 0;
  std::map<int, std::vector<std::size_t>> by_class_;
  std::vector<int> classes_;
};

inline std::vector<IndexBatch> class_balanced_batches(std::span<const int> labels,
                                                      const SamplerConfig& cfg,
                                                      std::size_t num_batches) {
  ClassBalancedSampler sampler(labels, cfg);
  std::vector<IndexBatch> out(num_batches);
  for (auto& b : out) b = sampler.next_batch();
  return out;
}

// Shuffled pass over the data cut into consecutive batches of N_b (the last
// one may be short).
class UniformSampler {
 public:
  UniformSampler(std::size_t samples, const SamplerConfig& cfg)
      : samples_(samples), batch_size_(cfg.batch_size), rng_(cfg.seed, Stream::sampler) {
    if (batch_size_ < 1) throw ConfigError("batch_size must be >= 1");
  }

  std::vector<IndexBatch> epoch() {
    std::vector<std::size_t> perm(samples_);
    for (std::size_t i = 0; i < samples_; ++i) perm[i] = i;
    rng_.shuffle(std::span<std::size_t>(perm));
    std::vector<IndexBatch> out;
    for (std::size_t s = 0; s < samples_; s += batch_size_)
      out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(s),
                       perm.begin() + static_cast<std::ptrdiff_t>(std::min(samples_, s + batch_size_)));
    return out;
  }

 private:
  std::size_t samples_;
  std::size_t batch_size_;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Optimisation

struct OptimConfig {
  double base_lr = 4e-3;
  double proxy_lr = 4e2;
  double momentum = 0.0;
  std::size_t epochs = 30;
  double temperature = 1.0 / 9.0;

  void validate() const {
    if (!(base_lr >= 0.0)) throw ConfigError("base_lr must be >= 0");
    if (!(proxy_lr >= 0.0)) throw ConfigError("proxy_lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  }
};

enum class ParamGroup { embedding, proxies };

struct ParamBlock {
  Matrix& value;
  const Matrix& grad;
  ParamGroup group;
};

// Momentum buffers, one per parameter block, created on first use.
struct SgdState {
  std::vector<Matrix> velocity;
};

// Plain SGD with two learning-rate groups and optional classical momentum
// (v <- mu v + g; p <- p - lr v). Embedding blocks use base_lr * lr_scale,
// proxy blocks proxy_lr * lr_scale.
inline void sgd_step(std::span<const ParamBlock> blocks, const OptimConfig& cfg, double lr_scale,
                     SgdState& state) {
  for (const auto& b : blocks) {
    if (!b.value.same_shape(b.grad)) {
      throw ShapeError("sgd_step: parameter " + b.value.shape_string() + " vs gradient " +
                       b.grad.shape_string());
    }
  }
  if (state.velocity.size() != blocks.size()) {
    state.velocity.clear();
    for (const auto& b : blocks) state.velocity.emplace_back(b.value.rows(), b.value.cols());
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const double lr = (b.group == ParamGroup::proxies ? cfg.proxy_lr : cfg.base_lr) * lr_scale;
    if (cfg.momentum == 0.0) {
      for (std::size_t j = 0; j < b.value.size(); ++j) b.value[j] -= lr * b.grad[j];
    } else {
      Matrix& v = state.velocity[i];
      for (std::size_t j = 0; j < b.value.size(); ++j) {
        v[j] = cfg.momentum * v[j] + b.grad[j];
        b.value[j] -= lr * v[j];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Reduce-on-plateau

struct PlateauState {
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improve = 0;
  std::size_t patience = 4;
  double decay_factor = 0.5;
  double current_lr_scale = 1.0;
  std::size_t epochs_seen = 0;
  std::vector<std::size_t> decay_epochs;  // 1-based
};

// One epoch's metric. A strict improvement resets the counter; once the
// counter exceeds patience the lr scale decays and the counter restarts.
inline PlateauState plateau_step(PlateauState state, double metric) {
  ++state.epochs_seen;
  if (metric > state.best_metric) {
    state.best_metric = metric;
    state.epochs_since_improve = 0;
    return state;
  }
  ++state.epochs_since_improve;
  if (state.epochs_since_improve > state.patience) {
    state.current_lr_scale *= state.decay_factor;
    state.decay_epochs.push_back(state.epochs_seen);
    state.epochs_since_improve = 0;
  }
  return state;
}

// ---------------------------------------------------------------------------
// Training loop

// Training examples already reduced by the (parameter-free) pooling stage.
struct TrainSet {
  Matrix pooled;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

inline TrainSet subset_by_class(const TrainSet& ts, const std::set<int>& keep) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ts.size(); ++i)
    if (keep.contains(ts.labels[i])) idx.push_back(i);
  TrainSet out{select_rows(ts.pooled, idx), {}};
  for (std::size_t i : idx) out.labels.push_back(ts.labels[i]);
  return out;
}

inline std::vector<int> sorted_classes(std::span<const int> labels) {
  std::set<int> s(labels.begin(), labels.end());
  return {s.begin(), s.end()};
}

struct FitConfig {
  LossKind loss = LossKind::proxynca_pp;
  OptimConfig optim;
  SamplerConfig sampler;
  bool class_balanced = true;
  std::size_t patience = 4;
  double decay_factor = 0.5;
  // When set, the plateau scheduler is bypassed and the lr scale decays after
  // exactly these (1-based) epochs.
  std::optional<std::vector<std::size_t>> replay_decays;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean batch loss
  std::optional<double> val_r1;
  double lr_scale = 1.0;  // scale used while training this epoch

  bool operator==(const EpochRecord&) const = default;
};

struct FitResult {
  EmbedderParams params;
  ProxyBank bank;
  std::vector<EpochRecord> log;
  std::optional<double> initial_val_r1;
  std::vector<std::size_t> decay_epochs;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_r1;
  std::uint64_t schedule_hash = 0;  // FNV-1a over every emitted batch index
};

inline double validation_r1(const EmbedderParams& params, const TrainSet& val) {
  const Matrix emb = embed_pooled(val.pooled, params).value;
  const std::size_t k1[] = {1};
  return recall_at_k(emb, val.labels, k1).recall_at.at(1);
}

namespace detail {

inline void fnv1a(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= 0x100000001b3ULL;
  }
}

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

}  // namespace detail

// Trains the embedding head and proxies on `train`. With a validation set the
// lr scale follows reduce-on-plateau on validation R@1 and the best epoch is
// recorded; otherwise best_epoch is the last epoch.
inline FitResult fit(const TrainSet& train, const TrainSet* val, EmbedderParams params,
                     ProxyBank bank, const FitConfig& cfg) {
  cfg.optim.validate();
  if (train.size() == 0) throw ConfigError("fit: empty training set");
  if (train.pooled.rows() != train.size()) throw ShapeError("fit: pooled rows vs labels");
  if (sorted_classes(train.labels).size() < 2) throw ConfigError("fit: needs >= 2 classes");
  if (cfg.loss != LossKind::nca) BatchLabels::resolve(train.labels, bank);

  std::optional<ClassBalancedSampler> cbs;
  std::optional<UniformSampler> uniform;
  if (cfg.class_balanced) {
    cbs.emplace(train.labels, cfg.sampler);
  } else {
    uniform.emplace(train.size(), cfg.sampler);
  }

  FitResult res;
  res.schedule_hash = detail::kFnvOffset;
  PlateauState plateau;
  plateau.patience = cfg.patience;
  plateau.decay_factor = cfg.decay_factor;
  double lr_scale = 1.0;
  if (val) {
    res.initial_val_r1 = validation_r1(params, *val);
  }
  SgdState sgd;
  for (std::size_t epoch = 1; epoch <= cfg.optim.epochs; ++epoch) {
    auto batches = cbs ? cbs->epoch() : uniform->epoch();
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
      for (std::size_t i : batch) detail::fnv1a(res.schedule_hash, i);
      const Matrix pooled = select_rows(train.pooled, batch);
      std::vector<int> labels;
      labels.reserve(batch.size());
      for (std::size_t i : batch) labels.push_back(train.labels[i]);

      auto emb = embed_pooled(pooled, params);
      auto lv = compute_loss(cfg.loss, emb.value, labels, bank, cfg.optim.temperature);
      auto g = emb.pullback(lv.grad_embeddings);
      loss_sum += lv.scalar;

      std::vector<ParamBlock> blocks{
          {params.embed_weights, g.embed_weights, ParamGroup::embedding},
          {params.embed_bias, g.embed_bias, ParamGroup::embedding}};
      if (lv.grad_proxies) blocks.push_back({bank.proxies, *lv.grad_proxies, ParamGroup::proxies});
      sgd_step(blocks, cfg.optim, lr_scale, sgd);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(batches.size());
    rec.lr_scale = lr_scale;
    if (val) {
      rec.val_r1 = validation_r1(params, *val);
      if (!res.best_val_r1 || *rec.val_r1 > *res.best_val_r1) {
        res.best_val_r1 = rec.val_r1;
        res.best_epoch = epoch;
      }
    }
    if (cfg.replay_decays) {
      if (std::find(cfg.replay_decays->begin(), cfg.replay_decays->end(), epoch) !=
          cfg.replay_decays->end()) {
        lr_scale *= cfg.decay_factor;
        res.decay_epochs.push_back(epoch);
      }
    } else if (val) {
      plateau = plateau_step(plateau, *rec.val_r1);
      lr_scale = plateau.current_lr_scale;
      res.decay_epochs = plateau.decay_epochs;
    }
    res.log.push_back(rec);
  }
  if (!val) res.best_epoch = cfg.optim.epochs;
  res.params = std::move(params);
  res.bank = std::move(bank);
  return res;
}

// How a fresh model is built for each training stage.
struct ModelInit {
  std::size_t emb_dim = 64;
  std::uint64_t seed = 0;
  std::size_t pool_k = 1;
  bool use_layer_norm = true;
  double ln_epsilon = 1e-5;
};

inline std::pair<EmbedderParams, ProxyBank> make_model(std::size_t channels,
                                                       std::span<const int> classes,
                                                       const ModelInit& init) {
  auto params = init_params(channels, init.emb_dim, init.seed);
  params.pool_k = init.pool_k;
  params.use_layer_norm = init.use_layer_norm;
  params.ln_epsilon = init.ln_epsilon;
  return {std::move(params), init_proxies(classes, init.emb_dim, init.seed)};
}

struct TwoStageResult {
  FitResult stage1;
  FitResult stage2;
  std::size_t stopping_epoch = 0;
};

// Stage 1 trains on the first half of the classes and validates on the
// second half, recording the best epoch and the lr decay epochs. Stage 2
// retrains from scratch on all classes for that many epochs, replaying the
// recorded decays.
inline TwoStageResult two_stage_fit(const TrainSet& full, const ModelInit& init,
                                    const FitConfig& cfg) {
  const auto classes = sorted_classes(full.labels);
  const std::size_t half = classes.size() / 2;
  if (half == 0) throw ConfigError("two_stage_fit: a class half would be empty");
  if (half < 2 || classes.size() - half < 2) {
    throw ConfigError("two_stage_fit: each class half needs >= 2 classes, have " +
                      std::to_string(classes.size()) + " classes");
  }
  const std::set<int> first(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(half));
  const std::set<int> second(classes.begin() + static_cast<std::ptrdiff_t>(half), classes.end());
  const TrainSet train = subset_by_class(full, first);
  const TrainSet val = subset_by_class(full, second);

  TwoStageResult out;
  {
    const std::vector<int> ids(first.begin(), first.end());
    auto [params, bank] = make_model(full.pooled.cols(), ids, init);
    FitConfig c1 = cfg;
    c1.replay_decays.reset();
    out.stage1 = fit(train, &val, std::move(params), std::move(bank), c1);
  }
  out.stopping_epoch = std::max<std::size_t>(out.stage1.best_epoch, 1);
  {
    auto [params, bank] = make_model(full.pooled.cols(), classes, init);
    FitConfig c2 = cfg;
    c2.optim.epochs = out.stopping_epoch;
    std::vector<std::size_t> replay;
    for (std::size_t e : out.stage1.decay_epochs)
      if (e <= out.stopping_epoch) replay.push_back(e);
    c2.replay_decays = std::move(replay);
    out.stage2 = fit(full, nullptr, std::move(params), std::move(bank), c2);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Proxy gradient diagnostic

struct GradRatioReport {
  double proxy_grad_norm = 0.0;
  double embed_weight_grad_norm = 0.0;
  double embed_bias_grad_norm = 0.0;
  std::optional<double> ratio;  // proxy / embedding weights; empty for 0/0
};

inline GradRatioReport grad_ratio_diagnostic(const EmbedderParams& params, const ProxyBank& bank,
                                             const Matrix& pooled_batch,
                                             const std::vector<int>& labels, LossKind loss,
                                             double temperature,
                                             ProxyNormalization norm = ProxyNormalization::on) {
  if (loss == LossKind::nca) throw ConfigError("grad_ratio_diagnostic: needs a proxy loss");
  auto emb = embed_pooled(pooled_batch, params);
  auto lv = compute_loss(loss, emb.value, labels, bank, temperature, norm);
  auto g = emb.pullback(lv.grad_embeddings);
  GradRatioReport r;
  r.proxy_grad_norm = frobenius_norm(*lv.grad_proxies);
  r.embed_weight_grad_norm = frobenius_norm(g.embed_weights);
  r.embed_bias_grad_norm = frobenius_norm(g.embed_bias);
  if (r.proxy_grad_norm != 0.0 || r.embed_weight_grad_norm != 0.0) {
    r.ratio = r.proxy_grad_norm / r.embed_weight_grad_norm;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Toy classifier (two moons)

struct ToyTrainConfig {
  double lr = 0.1;
  std::size_t steps = 2000;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct ToyTrainResult {
  ToyBackbone net;
  double final_loss = 0.0;
  double train_accuracy = 0.0;
};

inline double toy_accuracy(const ToyBackbone& net, const Matrix& points, std::span<const int> labels) {
  const Matrix logits = toy_forward(points, net).value;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const int pred = logits(i, 1) > logits(i, 0) ? 1 : 0;
    if (pred == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(points.rows());
}

// Full-batch gradient descent on temperature-scaled softmax cross-entropy.
inline ToyTrainResult fit_toy(const Matrix& points, std::span<const int> labels,
                              const ToyTrainConfig& cfg) {
  if (labels.size() != points.rows()) throw ShapeError("fit_toy: labels vs points");
  for (int y : labels)
    if (y < 0 || y >= static_cast<int>(ToyBackbone::kOutputs))
      throw LabelError("fit_toy: labels must be 0 or 1");
  ToyTrainResult res;
  res.net = init_toy(cfg.seed);
  OptimConfig optim;
  optim.base_lr = cfg.lr;
  SgdState sgd;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    auto fwd = toy_forward(points, res.net);
    auto ce = softmax_cross_entropy(fwd.value, labels, cfg.temperature);
    auto g = fwd.pullback(ce.grad);
    res.final_loss = ce.value;
    const ParamBlock blocks[] = {
        {res.net.layer1_weights, g.layer1_weights, ParamGroup::embedding},
        {res.net.layer1_bias, g.layer1_bias, ParamGroup::embedding},
        {res.net.layer2_weights, g.layer2_weights, ParamGroup::embedding},
        {res.net.layer2_bias, g.layer2_bias, ParamGroup::embedding}};
    sgd_step(blocks, optim, 1.0, sgd);
  }
  res.train_accuracy = toy_accuracy(res.net, points, labels);
  return res;
}

}  // namespace proxylab
