// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "proxylab/proxylab.hpp"
#include "support.hpp"

using namespace proxylab;
namespace fs = std::filesystem;
using testsupport::random_labels;
using testsupport::random_matrix;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

RunConfig benchmark_config() {
  std::ifstream f(fs::path(PROXYLAB_CONFIG_DIR) / "benchmark.json");
  if (!f) throw FileError("cannot open benchmark config");
  return parse_run_config(nlohmann::json::parse(f));
}

ProxyBank bank_of(Matrix proxies) {
  ProxyBank b;
  b.class_ids.resize(proxies.rows());
  std::iota(b.class_ids.begin(), b.class_ids.end(), 0);
  b.proxies = std::move(proxies);
  return b;
}

// Rows scaled to unit length.
Matrix unit_rows(Matrix m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) s += m(r, c) * m(r, c);
    s = std::sqrt(s);
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) /= s;
  }
  return m;
}

// ---------------------------------------------------------------------------
// AC1

struct GradSuite {
  std::size_t checks = 0;
  double worst = 0.0;
  std::string worst_name;

  template <class F>
  void check(const std::string& name, F&& f, const Matrix& x) {
    const double e = grad_check(f, x, 1e-5);
    ++checks;
    if (e > worst || worst_name.empty()) {
      worst = std::max(worst, e);
      worst_name = name;
    }
  }
};

// Central differences with h = 1e-5 are only meaningful away from the
// non-differentiable points of ReLU and k-max selection.
constexpr double kKinkMargin = 1e-4;

double min_adjacent_gap(const Matrix& fm) {
  double gap = 1e300;
  for (std::size_t c = 0; c < fm.cols(); ++c) {
    std::vector<double> col;
    for (std::size_t r = 0; r < fm.rows(); ++r) col.push_back(fm(r, c));
    std::sort(col.begin(), col.end());
    for (std::size_t i = 1; i < col.size(); ++i) gap = std::min(gap, col[i] - col[i - 1]);
  }
  return gap;
}

double min_abs_preactivation(const ToyBackbone& net, const Matrix& pts) {
  double m = 1e300;
  for (std::size_t i = 0; i < pts.rows(); ++i)
    for (std::size_t j = 0; j < ToyBackbone::kHidden; ++j) {
      double z = net.layer1_bias(0, j);
      for (std::size_t c = 0; c < ToyBackbone::kInputs; ++c) z += pts(i, c) * net.layer1_weights(c, j);
      m = std::min(m, std::abs(z));
    }
  return m;
}

template <class Op>
ScalarGrad weighted_unary(Op&& op, const Matrix& x, const Matrix& w) {
  return testsupport::weighted_sum(std::forward<Op>(op), x, w);
}

Verdict ac1() {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuite s;
  using LossFn = LossValue (*)(const Matrix&, const BatchLabels&, const ProxyBank&, double,
                               ProxyNormalization);
  const std::pair<const char*, LossFn> proxy_losses[] = {
      {"proxynca", proxynca_loss}, {"proxynca_pp", proxynca_pp_loss},
      {"normsoftmax", normsoftmax_loss}};

  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t b = 3 + seed % 4, d = 3 + seed % 3, k = 2 + seed % 4;

    // Proxy losses, both inputs, two temperatures, proxy normalisation on and off.
    const Matrix x = random_matrix(b, d, rng);
    auto bank = bank_of(random_matrix(k, d, rng));
    const auto y = random_labels(b, static_cast<int>(k), rng);
    const auto bl = BatchLabels::resolve(y, bank);
    for (const auto& [name, fn] : proxy_losses) {
      for (double t : {1.0, 1.0 / 9.0}) {
        for (auto norm : {ProxyNormalization::on, ProxyNormalization::off}) {
          auto fx = [&](const Matrix& e) {
            auto v = fn(e, bl, bank, t, norm);
            return ScalarGrad{v.scalar, v.grad_embeddings};
          };
          auto fp = [&](const Matrix& p) {
            ProxyBank pb = bank;
            pb.proxies = p;
            auto v = fn(x, bl, pb, t, norm);
            return ScalarGrad{v.scalar, *v.grad_proxies};
          };
          s.check(std::string(name) + "/x", fx, x);
          s.check(std::string(name) + "/p", fp, bank.proxies);
        }
      }
    }

    // NCA over sample pairs: every anchor has a positive and a negative.
    {
      std::vector<int> ny;
      for (std::size_t i = 0; i < 2 * b; ++i) ny.push_back(static_cast<int>(i % b) % 3);
      if (std::set<int>(ny.begin(), ny.end()).size() < 2) ny.back() = 9;
      const auto nbl = BatchLabels::plain(ny);
      const Matrix nx = random_matrix(ny.size(), d, rng);
      auto f = [&](const Matrix& e) {
        auto v = nca_batch_loss(e, nbl);
        return ScalarGrad{v.scalar, v.grad_embeddings};
      };
      s.check("nca", f, nx);
    }

    // Primitives. Entries stay clear of the ReLU kink by more than the step.
    Matrix a = random_matrix(b, d, rng);
    for (double& v : a.data())
      if (std::abs(v) < kKinkMargin) v = std::copysign(kKinkMargin, v) * 10.0;
    const Matrix c = random_matrix(d, k, rng);
    const Matrix wo = random_matrix(b, k, rng);
    s.check("matmul/a", [&](const Matrix& m) {
      auto o = matmul(m, c);
      double v = 0.0;
      for (std::size_t i = 0; i < o.value.size(); ++i) v += o.value[i] * wo[i];
      return ScalarGrad{v, o.pullback(wo).first};
    }, a);
    s.check("matmul/b", [&](const Matrix& m) {
      auto o = matmul(a, m);
      double v = 0.0;
      for (std::size_t i = 0; i < o.value.size(); ++i) v += o.value[i] * wo[i];
      return ScalarGrad{v, o.pullback(wo).second};
    }, c);
    const Matrix bias = random_matrix(1, d, rng);
    const Matrix wd = random_matrix(b, d, rng);
    s.check("add_row_bias/x", [&](const Matrix& m) {
      auto o = add_row_bias(m, bias);
      double v = 0.0;
      for (std::size_t i = 0; i < o.value.size(); ++i) v += o.value[i] * wd[i];
      return ScalarGrad{v, o.pullback(wd).first};
    }, a);
    s.check("add_row_bias/b", [&](const Matrix& m) {
      auto o = add_row_bias(a, m);
      double v = 0.0;
      for (std::size_t i = 0; i < o.value.size(); ++i) v += o.value[i] * wd[i];
      return ScalarGrad{v, o.pullback(wd).second};
    }, bias);
    s.check("relu", [&](const Matrix& m) { return weighted_unary(relu, m, wd); }, a);
    s.check("l2_normalize", [&](const Matrix& m) { return weighted_unary(l2_normalize, m, wd); }, a);
    s.check("layer_norm", [&](const Matrix& m) {
      return weighted_unary([](const Matrix& z) { return layer_norm(z, 1e-5); }, m, wd);
    }, a);
    const Matrix q = random_matrix(k, d, rng);
    s.check("pairwise_sqdist/a", [&](const Matrix& m) {
      auto o = pairwise_sqdist(m, q);
      double v = 0.0;
      for (std::size_t i = 0; i < o.value.size(); ++i) v += o.value[i] * wo[i];
      return ScalarGrad{v, o.pullback(wo).first};
    }, a);
    s.check("pairwise_sqdist/b", [&](const Matrix& m) {
      auto o = pairwise_sqdist(a, m);
      double v = 0.0;
      for (std::size_t i = 0; i < o.value.size(); ++i) v += o.value[i] * wo[i];
      return ScalarGrad{v, o.pullback(wo).second};
    }, q);
    for (double t : {1.0, 1.0 / 9.0}) {
      s.check("log_softmax_rows", [&](const Matrix& m) {
        return weighted_unary([t](const Matrix& z) { return log_softmax_rows(z, t); }, m, wd);
      }, a);
      std::vector<int> cy(b);
      for (auto& v : cy) v = static_cast<int>(rng.below(d));
      s.check("softmax_cross_entropy",
              [&](const Matrix& m) { return softmax_cross_entropy(m, cy, t); }, a);
    }

    // Pooling.
    const std::size_t spatial = 2 + seed % 3;
    Matrix fm = random_matrix(spatial * spatial, d, rng);
    while (min_adjacent_gap(fm) < kKinkMargin) fm = random_matrix(spatial * spatial, d, rng);
    const Matrix wp = random_matrix(1, d, rng);
    for (std::size_t kk : {std::size_t{1}, spatial, spatial * spatial}) {
      s.check("global_kmax_pool", [&](const Matrix& m) {
        return weighted_unary([&](const Matrix& z) { return global_kmax_pool(FeatureMap(spatial, z), kk); },
                              m, wp);
      }, fm);
    }

    // Embedding head.
    for (bool ln : {true, false}) {
      auto params = init_params(d, 4, seed);
      params.use_layer_norm = ln;
      const Matrix pooled = random_matrix(b, d, rng);
      const Matrix we = random_matrix(b, 4, rng);
      auto value = [&](const EmbedderParams& p) {
        auto o = embed_pooled(pooled, p);
        double v = 0.0;
        for (std::size_t i = 0; i < o.value.size(); ++i) v += o.value[i] * we[i];
        return std::pair{v, o.pullback(we)};
      };
      s.check("embed/W", [&](const Matrix& m) {
        auto p = params;
        p.embed_weights = m;
        auto [v, g] = value(p);
        return ScalarGrad{v, g.embed_weights};
      }, params.embed_weights);
      s.check("embed/b", [&](const Matrix& m) {
        auto p = params;
        p.embed_bias = m;
        auto [v, g] = value(p);
        return ScalarGrad{v, g.embed_bias};
      }, params.embed_bias);
    }

    // Toy network.
    {
      const auto net = init_toy(seed);
      Matrix pts = random_matrix(6, 2, rng);
      while (min_abs_preactivation(net, pts) < kKinkMargin) pts = random_matrix(6, 2, rng);
      const Matrix wt = random_matrix(6, 2, rng);
      const std::pair<Matrix ToyBackbone::*, Matrix ToyGrads::*> blocks[] = {
          {&ToyBackbone::layer1_weights, &ToyGrads::layer1_weights},
          {&ToyBackbone::layer1_bias, &ToyGrads::layer1_bias},
          {&ToyBackbone::layer2_weights, &ToyGrads::layer2_weights},
          {&ToyBackbone::layer2_bias, &ToyGrads::layer2_bias}};
      for (const auto& [pm, gm] : blocks) {
        s.check("toy", [&](const Matrix& m) {
          auto n = net;
          n.*pm = m;
          auto o = toy_forward(pts, n);
          double v = 0.0;
          for (std::size_t i = 0; i < o.value.size(); ++i) v += o.value[i] * wt[i];
          return ScalarGrad{v, o.pullback(wt).*gm};
        }, net.*pm);
      }
    }
  }

  const double secs = seconds_since(t0);
  const bool ok = s.worst < 1e-5 && s.checks >= 100 && secs < 60.0;
  return {ok, fmt("%zu random instances, worst rel err %.2e (%s), %.1f s", s.checks, s.worst, s.worst_name.c_str(), secs)};
}

// ---------------------------------------------------------------------------
// AC2

Verdict ac2() {
  std::size_t cases = 0, mismatches = 0;
  double endpoint_err = 0.0;
  Rng rng(2);
  for (std::size_t m = 1; m <= 4; ++m) {
    const std::size_t n = m * m;
    for (int trial = 0; trial < 12; ++trial) {
      const std::size_t channels = 3;
      // Small integers keep every subset sum exact and produce ties.
      Matrix data(n, channels);
      for (double& v : data.data()) v = static_cast<double>(rng.below(7)) - 3.0;
      const FeatureMap fm(m, data);
      for (std::size_t k = 1; k <= n; ++k) {
        const Matrix pooled = global_kmax_pool(fm, k).value;
        for (std::size_t c = 0; c < channels; ++c) {
          double best = -1e300;
          for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
            if (static_cast<std::size_t>(std::popcount(mask)) != k) continue;
            double sum = 0.0;
            for (std::size_t p = 0; p < n; ++p)
              if (mask >> p & 1u) sum += data(p, c);
            best = std::max(best, sum / static_cast<double>(k));
          }
          ++cases;
          if (pooled(0, c) != best) ++mismatches;
        }
      }
      // Endpoints on continuous values.
      const Matrix real = random_matrix(n, channels, rng);
      const FeatureMap rf(m, real);
      const Matrix g1 = global_kmax_pool(rf, 1).value;
      const Matrix gn = global_kmax_pool(rf, n).value;
      for (std::size_t c = 0; c < channels; ++c) {
        double mx = -1e300, mean = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
          mx = std::max(mx, real(p, c));
          mean += real(p, c);
        }
        mean /= static_cast<double>(n);
        endpoint_err = std::max({endpoint_err, std::abs(g1(0, c) - mx), std::abs(gn(0, c) - mean)});
      }
    }
  }
  return {mismatches == 0 && endpoint_err <= 1e-12,
          fmt("%zu exhaustive cases (M^2 <= 16), %zu mismatches, endpoint err %.1e", cases,
              mismatches, endpoint_err)};
}

// ---------------------------------------------------------------------------
// AC3

Verdict ac3() {
  // (a) own-term removal: exp(-d_y/T) / sum_{a != y} exp(-d_a/T) = P_y / (1 - P_y).
  double err_a = 0.0;
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 2 + trial % 5, k = 2 + trial % 6;
    const auto bank = bank_of(random_matrix(k, d, rng));
    for (double t : {1.0, 1.0 / 3.0}) {
      for (int i = 0; i < 4; ++i) {
        const Matrix x = random_matrix(1, d, rng);
        const int y = static_cast<int>(rng.below(k));
        const double pyp = proxy_assignment_prob(x, bank, t)(0, static_cast<std::size_t>(y));
        const double oracle = -std::log(pyp / (1.0 - pyp));
        const double lib = proxynca_loss(x, BatchLabels::resolve({y}, bank), bank, t).scalar;
        err_a = std::max(err_a, std::abs(lib - oracle));
      }
    }
  }

  // (b) proxynca_pp(T) == normsoftmax(T/2) on the unit sphere.
  double err_b = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t b = 2 + trial % 5, d = 2 + trial % 4, k = 2 + trial % 5;
    const Matrix x = unit_rows(random_matrix(b, d, rng));
    const auto bank = bank_of(unit_rows(random_matrix(k, d, rng)));
    const auto bl = BatchLabels::resolve(random_labels(b, static_cast<int>(k), rng), bank);
    for (double t : {1.0, 1.0 / 9.0, 0.37}) {
      const auto pp = proxynca_pp_loss(x, bl, bank, t);
      const auto ns = normsoftmax_loss(x, bl, bank, t / 2.0);
      err_b = std::max(err_b, std::abs(pp.scalar - ns.scalar));
      for (std::size_t i = 0; i < pp.grad_embeddings.size(); ++i)
        err_b = std::max(err_b, std::abs(pp.grad_embeddings[i] - ns.grad_embeddings[i]));
      for (std::size_t i = 0; i < pp.grad_proxies->size(); ++i)
        err_b = std::max(err_b, std::abs((*pp.grad_proxies)[i] - (*ns.grad_proxies)[i]));
    }
  }

  // (c) worked example.
  const Matrix x{{1.0, 0.0}};
  const auto bank = bank_of(Matrix{{1.0, 0.0}, {0.0, 1.0}});
  const auto bl = BatchLabels::resolve({0}, bank);
  const double pp = proxynca_pp_loss(x, bl, bank, 1.0).scalar;
  const double pn = proxynca_loss(x, bl, bank, 1.0).scalar;
  const bool ok_c = std::abs(pp - 0.1269) < 5e-5 && std::abs(pp - std::log1p(std::exp(-2.0))) < 1e-15 &&
                    std::abs(pn + 2.0) < 1e-15;

  return {err_a <= 1e-12 && err_b <= 1e-10 && ok_c,
          fmt("(a) max err %.1e, (b) max err %.1e, (c) pp %.6f, proxynca %.6f", err_a, err_b, pp, pn)};
}

// ---------------------------------------------------------------------------
// AC4

Verdict ac4() {
  std::vector<double> grid;
  for (int e = -5; e <= 4; ++e) grid.push_back(std::ldexp(1.0, e));  // 1/32 .. 16
  Rng rng(4);
  std::size_t rows = 0, entropy_violations = 0, argmax_changes = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t b = 3 + trial % 4, d = 2 + trial % 5, k = 2 + trial % 7;
    const Matrix x = random_matrix(b, d, rng);
    const auto bank = bank_of(random_matrix(k, d, rng));
    std::vector<double> prev_h(b, -1.0);
    std::vector<std::size_t> argmax0(b);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const Matrix p = proxy_assignment_prob(x, bank, grid[g]);
      for (std::size_t i = 0; i < b; ++i) {
        double h = 0.0;
        std::size_t am = 0;
        for (std::size_t a = 0; a < k; ++a) {
          if (p(i, a) > 0.0) h -= p(i, a) * std::log(p(i, a));
          if (p(i, a) > p(i, am)) am = a;
        }
        if (g == 0) argmax0[i] = am;
        else if (am != argmax0[i]) ++argmax_changes;
        if (h < prev_h[i] - 1e-12) ++entropy_violations;
        prev_h[i] = h;
        ++rows;
      }
    }
  }
  return {entropy_violations == 0 && argmax_changes == 0,
          fmt("%zu row evaluations over %zu temperatures, %zu entropy decreases, %zu argmax changes",
              rows, grid.size(), entropy_violations, argmax_changes)};
}

// ---------------------------------------------------------------------------
// AC5

double brute_recall(const Matrix& e, const std::vector<int>& y, std::size_t k) {
  const std::size_t n = e.rows();
  std::size_t hits = 0;
  for (std::size_t q = 0; q < n; ++q) {
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t g = 0; g < n; ++g) {
      if (g == q) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < e.cols(); ++c) s += (e(q, c) - e(g, c)) * (e(q, c) - e(g, c));
      order.emplace_back(s, g);
    }
    std::sort(order.begin(), order.end());
    for (std::size_t j = 0; j < k && j < order.size(); ++j)
      if (y[order[j].second] == y[q]) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double contingency_nmi(const std::vector<int>& t, const std::vector<std::size_t>& c) {
  std::map<int, double> pt;
  std::map<std::size_t, double> pc;
  std::map<std::pair<int, std::size_t>, double> joint;
  const double n = static_cast<double>(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    pt[t[i]] += 1.0 / n;
    pc[c[i]] += 1.0 / n;
    joint[{t[i], c[i]}] += 1.0 / n;
  }
  double mi = 0.0, ht = 0.0, hc = 0.0;
  for (const auto& [key, p] : joint) mi += p * std::log(p / (pt[key.first] * pc[key.second]));
  for (const auto& [key, p] : pt) ht -= p * std::log(p);
  for (const auto& [key, p] : pc) hc -= p * std::log(p);
  return ht + hc == 0.0 ? 0.0 : 2.0 * mi / (ht + hc);
}

Verdict ac5() {
  Rng rng(5);
  std::size_t recall_cases = 0, recall_mismatch = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    const std::size_t d = 1 + trial % 4;
    Matrix e(n, d);
    // Half the instances use a coarse integer grid so distance ties occur.
    for (double& v : e.data())
      v = trial % 2 ? rng.normal() : static_cast<double>(rng.below(4));
    const auto y = random_labels(n, 1 + static_cast<int>(rng.below(8)), rng);
    std::vector<std::size_t> ks;
    for (std::size_t k : {1, 2, 4, 8, 16})
      if (k <= n - 1) ks.push_back(k);
    const auto table = recall_at_k(e, y, ks);
    for (auto k : ks) {
      ++recall_cases;
      if (table.recall_at.at(k) != brute_recall(e, y, k)) ++recall_mismatch;
    }
  }

  double nmi_err = 0.0;
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 5 + rng.below(200);
    const auto t = random_labels(n, 1 + static_cast<int>(rng.below(6)), rng);
    std::vector<std::size_t> c(n);
    for (auto& v : c) v = rng.below(1 + rng.below(6));
    nmi_err = std::max(nmi_err, std::abs(nmi(t, c) - contingency_nmi(t, c)));
  }

  std::vector<int> truth;
  std::vector<std::size_t> relabeled, independent;
  for (std::size_t i = 0; i < 60; ++i) {
    truth.push_back(static_cast<int>(i % 4));
    relabeled.push_back((i % 4) * 7 + 3);
    independent.push_back((i / 4) % 3);  // every (truth, cluster) pair occurs equally often
  }
  const double n_rel = nmi(truth, relabeled);
  const double n_ind = nmi(truth, independent);

  const bool ok = recall_mismatch == 0 && nmi_err <= 1e-12 && std::abs(n_rel - 1.0) <= 1e-12 &&
                  std::abs(n_ind) <= 1e-12;
  return {ok, fmt("recall %zu/%zu exact, NMI max err %.1e, relabeled %.15f, independent %.1e",
                  recall_cases - recall_mismatch, recall_cases, nmi_err, n_rel, n_ind)};
}

// ---------------------------------------------------------------------------
// AC6

Verdict ac6() {
  // Sampler composition.
  std::size_t batches = 0, bad_batches = 0;
  Rng rng(6);
  const std::pair<std::size_t, std::size_t> shapes[] = {{32, 4}, {192, 3}, {30, 4}, {10, 10}, {7, 2}};
  for (const auto& [nb, nc] : shapes) {
    std::vector<int> labels;
    for (int c = 0; c < 12; ++c)
      for (std::size_t i = 0; i < 2 + rng.below(20); ++i) labels.push_back(c);
    SamplerConfig sc{nb, nc, 6};
    for (const auto& b : class_balanced_batches(labels, sc, 200)) {
      ++batches;
      std::map<int, std::size_t> count;
      for (auto i : b) ++count[labels[i]];
      bool ok = b.size() == nc * (nb / nc) && count.size() == nc;
      for (const auto& [c, m] : count) ok = ok && m == nb / nc;
      if (!ok) ++bad_batches;
    }
  }

  // Two learning-rate groups on identical gradients, at the reference dataset ratios.
  std::size_t ratio_bad = 0;
  const std::pair<double, double> lrs[] = {{4e-3, 4e2}, {2.4e-2, 2.4e2}, {2.4e-2, 2.4e3}, {4e-3, 4e-1}};
  for (const auto& [base, proxy] : lrs) {
    Matrix w(1, 1), p(1, 1);
    const Matrix g{{1.0}};
    const ParamBlock blocks[] = {{w, g, ParamGroup::embedding}, {p, g, ParamGroup::proxies}};
    OptimConfig oc;
    oc.base_lr = base;
    oc.proxy_lr = proxy;
    SgdState st;
    sgd_step(blocks, oc, 1.0, st);
    if (p(0, 0) / w(0, 0) != proxy / base) ++ratio_bad;
  }

  // Plateau rule against a direct oracle on random metric sequences.
  std::size_t plateau_bad = 0, decays_seen = 0;
  for (int trial = 0; trial < 500; ++trial) {
    PlateauState s;
    double best = -1e300;
    std::size_t stale = 0;
    for (int e = 0; e < 40; ++e) {
      const double m = static_cast<double>(rng.below(6 + trial % 10));
      s = plateau_step(s, m);
      bool expect_decay = false;
      if (m > best) {
        best = m;
        stale = 0;
      } else if (++stale > 4) {
        expect_decay = true;
        stale = 0;
      }
      const bool decayed = !s.decay_epochs.empty() &&
                           s.decay_epochs.back() == static_cast<std::size_t>(e + 1);
      if (decayed != expect_decay) ++plateau_bad;
      decays_seen += decayed;
    }
  }

  return {bad_batches == 0 && ratio_bad == 0 && plateau_bad == 0 && decays_seen > 0,
          fmt("%zu/%zu batches exact, %zu/4 lr ratios exact, plateau mismatches %zu (%zu decays)",
              batches - bad_batches, batches, 4 - ratio_bad, plateau_bad, decays_seen)};
}

// ---------------------------------------------------------------------------
// AC7, AC8

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto i, auto j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t t = i; t <= j; ++t) r[idx[t]] = (static_cast<double>(i + j) / 2.0) + 1.0;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return saa == 0.0 || sbb == 0.0 ? 0.0 : sab / std::sqrt(saa * sbb);
}

Verdict ac7() {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig base = benchmark_config();
  const auto& g = base.dataset.gaussian;
  const bool setup = g.num_classes == 20 && g.per_class == 30 && base.seeds.size() == 5;

  const auto rows = run_ablation(base);
  RunConfig plain = base;
  plain.loss = LossKind::proxynca;
  for (const char* name : kEnhancementNames) enhancement(plain.enhancements, name) = false;
  std::vector<double> plain_r1;
  for (auto s : base.seeds)
    plain_r1.push_back(run_experiment(plain, s, prepare_data(plain, s), false).test_r1);
  const double plain_mean = mean_std(plain_r1).mean;

  const double full = rows.front().stats.mean;
  std::string largest;
  double largest_drop = -1e300;
  std::string table;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double drop = full - rows[i].stats.mean;
    table += fmt(" %s %.3f", rows[i].variant.c_str(), rows[i].stats.mean);
    if (drop > largest_drop) {
      largest_drop = drop;
      largest = rows[i].variant;
    }
  }
  const double secs = seconds_since(t0);
  const bool a = full > plain_mean;
  const bool b = largest == "-scale";
  return {setup && a && b && secs < 600.0,
          fmt("(a) full %.3f vs plain %.3f; (b) largest drop %s (%.3f);%s; %.0f s", full,
              plain_mean, largest.c_str(), largest_drop, table.c_str(), secs)};
}

Verdict ac8() {
  const RunConfig base = benchmark_config();
  const auto temp = run_sweep(base, std::string("temperature"));
  const auto* best = &temp.rows.front();
  for (const auto& r : temp.rows)
    if (r.stats.mean > best->stats.mean) best = &r;
  std::string temps;
  for (const auto& r : temp.rows) temps += fmt(" %.4g:%.3f", r.value, r.stats.mean);

  const auto kmax = run_sweep(base, std::string("kmax"), std::vector<double>{});
  std::vector<double> ks;
  for (const auto& r : kmax.rows) ks.push_back(r.value);
  std::size_t nonpositive = 0;
  std::string rhos;
  for (std::size_t s = 0; s < base.seeds.size(); ++s) {
    std::vector<double> r1;
    for (const auto& r : kmax.rows) r1.push_back(r.r1[s]);
    const double rho = spearman(ks, r1);
    nonpositive += rho <= 0.0;
    rhos += fmt(" %.3f", rho);
  }
  const bool a = best->value < 1.0;
  const bool b = nonpositive >= 4 && base.seeds.size() == 5;
  return {a && b, fmt("(a) best T %.4g, R@1 by T%s; (b) Spearman(k, R@1) <= 0 in %zu/5 seeds:%s",
                      best->value, temps.c_str(), nonpositive, rhos.c_str())};
}

// ---------------------------------------------------------------------------
// AC9

Verdict ac9() {
  MoonsConfig m;  // 600 samples, noise 0.3
  m.temperatures = {1.0, 1.0 / 9.0};
  m.seeds = {0, 1, 2, 3, 4};
  const auto runs = run_moons(m);
  std::map<double, std::vector<double>> acc;
  double worst_sum = 0.0;
  bool in_range = true;
  for (const auto& r : runs) {
    acc[r.temperature].push_back(r.train_accuracy);
    if (r.lattice.rows() != m.lattice_steps * m.lattice_steps) in_range = false;
    for (std::size_t i = 0; i < r.lattice.rows(); ++i) {
      const double p0 = r.lattice(i, 2), p1 = r.lattice(i, 3);
      in_range = in_range && p0 >= 0.0 && p0 <= 1.0 && p1 >= 0.0 && p1 <= 1.0;
      worst_sum = std::max(worst_sum, std::abs(p0 + p1 - 1.0));
    }
  }
  const bool setup = m.samples == 600 && m.noise == 0.3 && ToyBackbone::kHidden == 100;
  const double cold = mean_std(acc[1.0 / 9.0]).mean, warm = mean_std(acc[1.0]).mean;
  return {setup && cold >= warm && in_range && worst_sum <= 1e-12,
          fmt("mean train accuracy T=1/9 %.4f vs T=1 %.4f; lattice sums within %.1e", cold, warm,
              worst_sum)};
}

// ---------------------------------------------------------------------------
// AC10

Verdict ac10() {
  Rng rng(10);
  std::size_t cases = 0, bad = 0;
  for (std::size_t b : {1, 5, 32}) {
    for (std::size_t k : {2, 7, 100}) {
      const Matrix x = random_matrix(b, 6, rng);
      const auto bank = bank_of(random_matrix(k, 6, rng));
      const auto y = random_labels(b, static_cast<int>(k), rng);
      for (auto kind : {LossKind::proxynca, LossKind::proxynca_pp, LossKind::normsoftmax}) {
        instrumentation::reset_distance_count();
        compute_loss(kind, x, y, bank, 1.0 / 9.0);
        ++cases;
        if (instrumentation::distance_count() != b * k) ++bad;
      }
    }
  }
  return {bad == 0, fmt("%zu/%zu loss evaluations used exactly B*K distances", cases - bad, cases)};
}

// ---------------------------------------------------------------------------
// AC11

Verdict ac11() {
  const auto root = testsupport::temp_dir("acceptance_determinism");
  // Both runs write to the same path, since the config echo records it.
  const auto dir = root / "run";
  auto run_all = [&](const std::string& tag) {
    RunConfig cfg = benchmark_config();
    cfg.seed = 3;
    cfg.out = (dir / "train").string();
    const auto art = cmd_train(cfg);

    EvalRequest req;
    req.checkpoint = art.checkpoint;
    req.data = art.test_data;
    req.out = (dir / "eval").string();
    cmd_eval(req);

    RunConfig small = cfg;
    small.epochs = 3;
    small.seeds = {0, 1, 2};
    small.out = (dir / "sweep").string();
    cmd_sweep(small, std::string("temperature"), std::vector<double>{1.0, 1.0 / 9.0});
    small.out = (dir / "ablate").string();
    cmd_ablate(small);

    RunConfig moons;
    moons.moons.steps = 200;
    moons.moons.seeds = {0, 1};
    moons.out = (dir / "moons").string();
    cmd_moons(moons);
    fs::rename(dir, root / tag);
    return root / tag;
  };
  const auto a = run_all("a");
  const auto b = run_all("b");
  std::size_t files = 0, differ = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    ++files;
    if (!fs::exists(b / rel) || slurp(entry.path()) != slurp(b / rel)) {
      ++differ;
      std::fprintf(stderr, "differs: %s\n", rel.c_str());
    }
  }
  if (differ == 0) fs::remove_all(root);
  return {files > 10 && differ == 0,
          fmt("%zu artifacts from train/eval/sweep/ablate/moons, %zu differ", files, differ)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::set<std::string> only(argv + 1, argv + argc);
  const std::pair<const char*, std::function<Verdict()>> criteria[] = {
      {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4},  {"AC5", ac5},  {"AC6", ac6},
      {"AC7", ac7}, {"AC8", ac8}, {"AC9", ac9}, {"AC10", ac10}, {"AC11", ac11}};
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.contains(name)) continue;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s  %s\n", name, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
