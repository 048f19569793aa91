#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "proxylab/matrix.hpp"
#include "proxylab/numgrad.hpp"
#include "proxylab/rng.hpp"

namespace testsupport {

inline proxylab::Matrix random_matrix(std::size_t r, std::size_t c, proxylab::Rng& rng,
                                      double scale = 1.0) {
  proxylab::Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal(0.0, scale);
  return m;
}

inline std::vector<int> random_labels(std::size_t n, int classes, proxylab::Rng& rng) {
  std::vector<int> out(n);
  for (auto& y : out) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return out;
}

// sum(weights .* op(x)) and its gradient through the op's pullback.
template <class Op>
proxylab::ScalarGrad weighted_sum(Op&& op, const proxylab::Matrix& x,
                                  const proxylab::Matrix& weights) {
  auto out = op(x);
  double s = 0.0;
  for (std::size_t i = 0; i < out.value.size(); ++i) s += out.value[i] * weights[i];
  return {s, out.pullback(weights)};
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto p = std::filesystem::temp_directory_path() /
           ("proxylab_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testsupport
