#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "proxylab/embedder.hpp"
#include "proxylab/errors.hpp"
#include "proxylab/matrix.hpp"
#include "proxylab/numgrad.hpp"

namespace proxylab {

struct LossValue {
  double scalar = 0.0;
  Matrix grad_embeddings;
  std::optional<Matrix> grad_proxies;  // absent for NCA
};

// Per-row class ids plus, when a proxy bank is involved, the proxy row of each.
struct BatchLabels {
  std::vector<int> labels;
  std::map<int, std::size_t> class_index;

  static BatchLabels plain(std::vector<int> labels) { return {std::move(labels), {}}; }

  static BatchLabels resolve(std::vector<int> labels, const ProxyBank& bank) {
    BatchLabels out{std::move(labels), {}};
    for (std::size_t r = 0; r < bank.class_ids.size(); ++r) {
      if (!out.class_index.emplace(bank.class_ids[r], r).second) {
        throw LabelError("proxy bank lists class " + std::to_string(bank.class_ids[r]) +
                         " twice");
      }
    }
    for (int y : out.labels) {
      if (!out.class_index.contains(y)) {
        throw LabelError("label " + std::to_string(y) + " has no proxy in the bank");
      }
    }
    return out;
  }

  std::size_t proxy_row(std::size_t sample) const {
    auto it = class_index.find(labels[sample]);
    if (it == class_index.end()) {
      throw LabelError("label " + std::to_string(labels[sample]) + " has no proxy in the bank");
    }
    return it->second;
  }
};

enum class LossKind { nca, proxynca, proxynca_pp, normsoftmax };

inline LossKind parse_loss_kind(std::string_view name) {
  if (name == "nca") return LossKind::nca;
  if (name == "proxynca") return LossKind::proxynca;
  if (name == "proxynca_pp") return LossKind::proxynca_pp;
  if (name == "normsoftmax") return LossKind::normsoftmax;
  throw ConfigError("loss must be one of nca|proxynca|proxynca_pp|normsoftmax, got '" +
                    std::string(name) + "'");
}

inline std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::nca: return "nca";
    case LossKind::proxynca: return "proxynca";
    case LossKind::proxynca_pp: return "proxynca_pp";
    case LossKind::normsoftmax: return "normsoftmax";
  }
  return "?";
}

// Whether proxies pass through L2 normalisation inside the loss. Only the
// gradient diagnostic turns this off.
enum class ProxyNormalization { on, off };

namespace detail {

struct ProxyLogits {
  Matrix logits;  // B x K, larger means closer
  std::function<MatrixPair(const Matrix&)> pullback;
};

inline void check_proxy_inputs(const Matrix& embeddings, const BatchLabels& labels,
                               const ProxyBank& bank, double temperature, const char* op) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError(std::string(op) + ": temperature must be positive, got " +
                         std::to_string(temperature));
  }
  if (embeddings.rows() == 0) throw ParameterError(std::string(op) + ": empty batch");
  if (labels.labels.size() != embeddings.rows()) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.labels.size()) +
                     " labels for " + std::to_string(embeddings.rows()) + " embeddings");
  }
  if (bank.num_classes() == 0) throw ConfigError(std::string(op) + ": empty proxy bank");
  if (embeddings.cols() != bank.proxies.cols()) {
    throw ShapeError(std::string(op) + ": embeddings " + embeddings.shape_string() +
                     " vs proxies " + bank.proxies.shape_string());
  }
}

inline GradPair<> maybe_normalize(const Matrix& proxies, ProxyNormalization norm) {
  if (norm == ProxyNormalization::on) return l2_normalize(proxies);
  return {proxies, [](const Matrix& g) { return g; }};
}

// logits = -||x/|x| - p/|p|||^2
inline ProxyLogits neg_sqdist_logits(const Matrix& embeddings, const Matrix& proxies,
                                     ProxyNormalization norm) {
  auto xn = l2_normalize(embeddings);
  auto pn = maybe_normalize(proxies, norm);
  auto d = pairwise_sqdist(xn.value, pn.value);
  Matrix logits = -1.0 * d.value;
  return {std::move(logits), [xn = std::move(xn), pn = std::move(pn),
                              d = std::move(d)](const Matrix& g) {
            auto gd = d.pullback(-1.0 * g);
            return MatrixPair{xn.pullback(gd.first), pn.pullback(gd.second)};
          }};
}

// logits = <x/|x|, p/|p|>
inline ProxyLogits cosine_logits(const Matrix& embeddings, const Matrix& proxies,
                                 ProxyNormalization norm) {
  auto xn = l2_normalize(embeddings);
  auto pn = maybe_normalize(proxies, norm);
  auto s = matmul(xn.value, transpose(pn.value));
  instrumentation::distance_evaluations += embeddings.rows() * proxies.rows();
  return {s.value, [xn = std::move(xn), pn = std::move(pn), s = std::move(s)](const Matrix& g) {
            auto gs = s.pullback(g);
            return MatrixPair{xn.pullback(gs.first), pn.pullback(transpose(gs.second))};
          }};
}

// Mean over rows of -log softmax_T(logits)[own].
inline LossValue softmax_over_all(const ProxyLogits& pl, const BatchLabels& labels,
                                  double temperature) {
  const std::size_t b = pl.logits.rows();
  auto lsm = log_softmax_rows(pl.logits, temperature);
  Matrix g(b, pl.logits.cols());
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t own = labels.proxy_row(i);
    total -= lsm.value(i, own);
    g(i, own) = -inv_b;
  }
  auto grads = pl.pullback(lsm.pullback(g));
  return {total * inv_b, std::move(grads.first), std::move(grads.second)};
}

// Mean over rows of -log( exp(l_own/T) / sum_{z != own} exp(l_z/T) ).
inline LossValue softmax_over_others(const ProxyLogits& pl, const BatchLabels& labels,
                                     double temperature) {
  const std::size_t b = pl.logits.rows();
  const std::size_t k = pl.logits.cols();
  Matrix g(b, k);
  double total = 0.0;
  const double scale = 1.0 / (static_cast<double>(b) * temperature);
  std::vector<double> w(k);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t own = labels.proxy_row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t z = 0; z < k; ++z)
      if (z != own) mx = std::max(mx, pl.logits(i, z) / temperature);
    double s = 0.0;
    for (std::size_t z = 0; z < k; ++z) {
      w[z] = z == own ? 0.0 : std::exp(pl.logits(i, z) / temperature - mx);
      s += w[z];
    }
    total += -pl.logits(i, own) / temperature + mx + std::log(s);
    for (std::size_t z = 0; z < k; ++z) g(i, z) = z == own ? -scale : scale * w[z] / s;
  }
  auto grads = pl.pullback(g);
  return {total / static_cast<double>(b), std::move(grads.first), std::move(grads.second)};
}

}  // namespace detail

// Neighbourhood component analysis over a batch, verbatim: for anchor i the
// numerator sums exp(-d) over same-class points j != i and the denominator over
// other-class points only. The ratio is not a probability and the loss can be
// negative.
inline LossValue nca_batch_loss(const Matrix& embeddings, const BatchLabels& labels) {
  const std::size_t b = embeddings.rows();
  if (labels.labels.size() != b) {
    throw ShapeError("nca_batch_loss: " + std::to_string(labels.labels.size()) +
                     " labels for " + std::to_string(b) + " embeddings");
  }
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < b; ++i) {
    bool pos = false, neg = false;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      (labels.labels[j] == labels.labels[i] ? pos : neg) = true;
    }
    if (!pos || !neg) bad.push_back(i);
  }
  if (!bad.empty()) {
    std::string list;
    for (std::size_t i : bad) list += (list.empty() ? "" : ", ") + std::to_string(i);
    throw DegenerateBatchError("nca_batch_loss: anchors without a positive or a negative: " +
                               list);
  }

  auto d = pairwise_sqdist(embeddings, embeddings);
  Matrix g(b, b);
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  std::vector<double> w(b);
  for (std::size_t i = 0; i < b; ++i) {
    // log-sum-exp of -d over positives and over negatives, each max-shifted
    double mp = -std::numeric_limits<double>::infinity(), mn = mp;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      double& m = labels.labels[j] == labels.labels[i] ? mp : mn;
      m = std::max(m, -d.value(i, j));
    }
    double sp = 0.0, sn = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) {
        w[j] = 0.0;
        continue;
      }
      const bool same = labels.labels[j] == labels.labels[i];
      w[j] = std::exp(-d.value(i, j) - (same ? mp : mn));
      (same ? sp : sn) += w[j];
    }
    total += (mn + std::log(sn)) - (mp + std::log(sp));
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      const bool same = labels.labels[j] == labels.labels[i];
      g(i, j) = same ? inv_b * w[j] / sp : -inv_b * w[j] / sn;
    }
  }
  auto gd = d.pullback(g);
  return {total * inv_b, gd.first + gd.second, std::nullopt};
}

// Original ProxyNCA: the denominator runs over the proxies of the other classes
// only. Temperature generalises the unit-scale original.
inline LossValue proxynca_loss(const Matrix& embeddings, const BatchLabels& labels,
                               const ProxyBank& bank, double temperature,
                               ProxyNormalization norm = ProxyNormalization::on) {
  detail::check_proxy_inputs(embeddings, labels, bank, temperature, "proxynca_loss");
  if (bank.num_classes() < 2) {
    throw ConfigError("proxynca_loss: needs at least 2 classes in the proxy bank");
  }
  auto pl = detail::neg_sqdist_logits(embeddings, bank.proxies, norm);
  return detail::softmax_over_others(pl, labels, temperature);
}

// Row i: softmax over all proxies of -d(x_i, p_a) / T.
inline Matrix proxy_assignment_prob(const Matrix& embeddings, const ProxyBank& bank,
                                    double temperature) {
  BatchLabels none;
  none.labels.assign(embeddings.rows(), 0);
  detail::check_proxy_inputs(embeddings, none, bank, temperature, "proxy_assignment_prob");
  auto pl = detail::neg_sqdist_logits(embeddings, bank.proxies, ProxyNormalization::on);
  Matrix p = log_softmax_rows(pl.logits, temperature).value;
  for (double& v : p.data()) v = std::exp(v);
  return p;
}

// ProxyNCA++: -log of the own-class proxy assignment probability.
inline LossValue proxynca_pp_loss(const Matrix& embeddings, const BatchLabels& labels,
                                  const ProxyBank& bank, double temperature,
                                  ProxyNormalization norm = ProxyNormalization::on) {
  detail::check_proxy_inputs(embeddings, labels, bank, temperature, "proxynca_pp_loss");
  auto pl = detail::neg_sqdist_logits(embeddings, bank.proxies, norm);
  return detail::softmax_over_all(pl, labels, temperature);
}

// Same as ProxyNCA++ with cosine-similarity logits.
inline LossValue normsoftmax_loss(const Matrix& embeddings, const BatchLabels& labels,
                                  const ProxyBank& bank, double temperature,
                                  ProxyNormalization norm = ProxyNormalization::on) {
  detail::check_proxy_inputs(embeddings, labels, bank, temperature, "normsoftmax_loss");
  auto pl = detail::cosine_logits(embeddings, bank.proxies, norm);
  return detail::softmax_over_all(pl, labels, temperature);
}

// Dispatch used by the training loop. NCA ignores bank and temperature.
inline LossValue compute_loss(LossKind kind, const Matrix& embeddings,
                              const std::vector<int>& labels, const ProxyBank& bank,
                              double temperature,
                              ProxyNormalization norm = ProxyNormalization::on) {
  if (kind == LossKind::nca) return nca_batch_loss(embeddings, BatchLabels::plain(labels));
  auto bl = BatchLabels::resolve(labels, bank);
  switch (kind) {
    case LossKind::proxynca: return proxynca_loss(embeddings, bl, bank, temperature, norm);
    case LossKind::proxynca_pp:
      return proxynca_pp_loss(embeddings, bl, bank, temperature, norm);
    case LossKind::normsoftmax:
      return normsoftmax_loss(embeddings, bl, bank, temperature, norm);
    case LossKind::nca: break;
  }
  throw ConfigError("unknown loss kind");
}

// Mean over rows of -log softmax(logits / T)[label]; labels index columns.
inline ScalarGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels,
                                        double temperature) {
  if (labels.size() != logits.rows()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(logits.rows()) + " rows");
  }
  if (logits.rows() == 0) throw DegenerateBatchError("softmax_cross_entropy: empty batch");
  auto lsm = log_softmax_rows(logits, temperature);
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  Matrix g(logits.rows(), logits.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.cols()) {
      throw LabelError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                       " out of range");
    }
    const auto y = static_cast<std::size_t>(labels[i]);
    total -= lsm.value(i, y);
    g(i, y) = -inv_b;
  }
  return {total * inv_b, lsm.pullback(g)};
}

}  // namespace proxylab
