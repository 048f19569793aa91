#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "proxylab/errors.hpp"
#include "proxylab/matrix.hpp"
#include "proxylab/numgrad.hpp"

namespace proxylab {

// An M x M x E spatial feature block with spatial positions flattened to rows.
class FeatureMap {
 public:
  FeatureMap() = default;

  FeatureMap(std::size_t spatial, Matrix data) : spatial_(spatial), data_(std::move(data)) {
    if (data_.rows() != spatial_ * spatial_) {
      throw ShapeError("FeatureMap: expected " + std::to_string(spatial_ * spatial_) +
                       " spatial rows for M=" + std::to_string(spatial_) + ", got " +
                       data_.shape_string());
    }
  }

  std::size_t spatial() const noexcept { return spatial_; }
  std::size_t positions() const noexcept { return spatial_ * spatial_; }
  std::size_t channels() const noexcept { return data_.cols(); }
  const Matrix& data() const noexcept { return data_; }

  bool operator==(const FeatureMap&) const = default;

 private:
  std::size_t spatial_ = 0;
  Matrix data_;
};

// Global k-max pooling: per channel, the mean of the k largest spatial
// activations. k = 1 is global max pooling, k = M^2 is global average pooling.
// Ties are resolved towards the lowest flattened spatial index, and the
// pullback routes g/k to exactly the selected positions.
inline GradPair<> global_kmax_pool(const FeatureMap& fm, std::size_t k) {
  const std::size_t n = fm.positions();
  const std::size_t channels = fm.channels();
  if (k < 1 || k > n) {
    throw ParameterError("global_kmax_pool: k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(n) + "]");
  }
  const Matrix& g = fm.data();
  Matrix out(1, channels);
  // selected[c * k + j] is the j-th chosen spatial index of channel c.
  std::vector<std::size_t> selected(channels * k);
  std::vector<std::size_t> order(n);
  for (std::size_t c = 0; c < channels; ++c) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                      order.end(), [&](std::size_t a, std::size_t b) {
                        const double va = g(a, c), vb = g(b, c);
                        return va > vb || (va == vb && a < b);
                      });
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      selected[c * k + j] = order[j];
      s += g(order[j], c);
    }
    out(0, c) = s / static_cast<double>(k);
  }
  detail::ensure_finite(out, "global_kmax_pool");
  return {std::move(out), [selected = std::move(selected), n, channels, k](const Matrix& go) {
            detail::require_grad_shape(go, 1, channels, "global_kmax_pool");
            Matrix gi(n, channels);
            const double inv_k = 1.0 / static_cast<double>(k);
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t j = 0; j < k; ++j) gi(selected[c * k + j], c) = go(0, c) * inv_k;
            return gi;
          }};
}

// Pools every map of a batch into one row each (B x E). Pooling has no
// parameters, so callers that only need the value can cache this.
inline Matrix pool_batch(std::span<const FeatureMap> maps, std::size_t k) {
  if (maps.empty()) return {};
  const std::size_t m = maps.front().spatial();
  const std::size_t e = maps.front().channels();
  Matrix out(maps.size(), e);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].spatial() != m || maps[i].channels() != e) {
      throw ShapeError("pool_batch: feature map " + std::to_string(i) + " has shape " +
                       std::to_string(maps[i].spatial()) + "x" +
                       std::to_string(maps[i].spatial()) + "x" +
                       std::to_string(maps[i].channels()) + ", expected " +
                       std::to_string(m) + "x" + std::to_string(m) + "x" + std::to_string(e));
    }
    auto pooled = global_kmax_pool(maps[i], k).value;
    std::copy(pooled.data().begin(), pooled.data().end(), out.row(i).begin());
  }
  return out;
}

enum class PoolMode { gap, gmp, kmax };

inline PoolMode parse_pool_mode(std::string_view name) {
  if (name == "gap") return PoolMode::gap;
  if (name == "gmp") return PoolMode::gmp;
  if (name == "kmax") return PoolMode::kmax;
  throw ConfigError("pool mode must be one of gap|gmp|kmax, got '" + std::string(name) + "'");
}

inline std::string_view to_string(PoolMode mode) {
  switch (mode) {
    case PoolMode::gap: return "gap";
    case PoolMode::gmp: return "gmp";
    case PoolMode::kmax: return "kmax";
  }
  return "?";
}

// Resolves a pooling mode to the k used by global_kmax_pool for an M x M map.
inline std::size_t pool_mode(PoolMode mode, std::optional<std::size_t> k, std::size_t spatial) {
  switch (mode) {
    case PoolMode::gap: return spatial * spatial;
    case PoolMode::gmp: return 1;
    case PoolMode::kmax:
      if (!k) throw ConfigError("pool mode kmax requires k");
      return *k;
  }
  throw ConfigError("unknown pool mode");
}

}  // namespace proxylab
