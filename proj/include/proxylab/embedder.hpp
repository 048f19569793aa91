#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "proxylab/errors.hpp"
#include "proxylab/matrix.hpp"
#include "proxylab/numgrad.hpp"
#include "proxylab/pooling.hpp"
#include "proxylab/rng.hpp"

namespace proxylab {

// Embedding head: pooled features -> linear map + bias -> optional affine-free
// layer norm -> L2 normalisation.
struct EmbedderParams {
  std::size_t pool_k = 1;
  Matrix embed_weights;  // E x emb_dim
  Matrix embed_bias;     // 1 x emb_dim
  bool use_layer_norm = true;
  double ln_epsilon = 1e-5;

  std::size_t channels() const noexcept { return embed_weights.rows(); }
  std::size_t emb_dim() const noexcept { return embed_weights.cols(); }

  bool operator==(const EmbedderParams&) const = default;
};

struct EmbedderGrads {
  Matrix embed_weights;
  Matrix embed_bias;
};

// One proxy row per training class. Rows are stored unnormalised; the losses
// normalise them on the fly.
struct ProxyBank {
  Matrix proxies;             // num_classes x emb_dim
  std::vector<int> class_ids; // class id of each proxy row

  std::size_t num_classes() const noexcept { return proxies.rows(); }

  bool operator==(const ProxyBank&) const = default;
};

// 2 -> 100 -> 2 ReLU classifier.
struct ToyBackbone {
  static constexpr std::size_t kInputs = 2;
  static constexpr std::size_t kHidden = 100;
  static constexpr std::size_t kOutputs = 2;

  Matrix layer1_weights;  // 2 x 100
  Matrix layer1_bias;     // 1 x 100
  Matrix layer2_weights;  // 100 x 2
  Matrix layer2_bias;     // 1 x 2

  bool operator==(const ToyBackbone&) const = default;
};

struct ToyGrads {
  Matrix layer1_weights;
  Matrix layer1_bias;
  Matrix layer2_weights;
  Matrix layer2_bias;
};

inline EmbedderParams init_params(std::size_t channels, std::size_t emb_dim, std::uint64_t seed) {
  if (channels < 1 || emb_dim < 1) {
    throw ParameterError("init_params: channels and emb_dim must be >= 1");
  }
  Rng rng(seed, Stream::embed_init);
  EmbedderParams p;
  p.embed_weights = Matrix(channels, emb_dim);
  const double sd = 1.0 / std::sqrt(static_cast<double>(channels));
  for (double& w : p.embed_weights.data()) w = rng.normal(0.0, sd);
  p.embed_bias = Matrix(1, emb_dim);
  return p;
}

inline ProxyBank init_proxies(std::span<const int> class_ids, std::size_t emb_dim,
                              std::uint64_t seed) {
  if (class_ids.empty()) throw ParameterError("init_proxies: need at least one class");
  if (emb_dim < 1) throw ParameterError("init_proxies: emb_dim must be >= 1");
  Rng rng(seed, Stream::proxy_init);
  ProxyBank bank;
  bank.proxies = Matrix(class_ids.size(), emb_dim);
  const double sd = 1.0 / std::sqrt(static_cast<double>(emb_dim));
  for (double& v : bank.proxies.data()) v = rng.normal(0.0, sd);
  bank.class_ids.assign(class_ids.begin(), class_ids.end());
  return bank;
}

// Class ids 0..num_classes-1.
inline ProxyBank init_proxies(std::size_t num_classes, std::size_t emb_dim, std::uint64_t seed) {
  std::vector<int> ids(num_classes);
  for (std::size_t i = 0; i < num_classes; ++i) ids[i] = static_cast<int>(i);
  return init_proxies(std::span<const int>(ids), emb_dim, seed);
}

// Head applied to already-pooled features (B x E).
inline GradPair<EmbedderGrads> embed_pooled(const Matrix& pooled, const EmbedderParams& params) {
  if (pooled.cols() != params.channels()) {
    throw ShapeError("embed: pooled features have " + std::to_string(pooled.cols()) +
                     " channels but embed_weights is " + params.embed_weights.shape_string());
  }
  auto linear = matmul(pooled, params.embed_weights);
  auto shifted = add_row_bias(linear.value, params.embed_bias);
  GradPair<> normed;
  if (params.use_layer_norm) {
    normed = layer_norm(shifted.value, params.ln_epsilon);
  } else {
    normed = {shifted.value, [](const Matrix& g) { return g; }};
  }
  auto unit = l2_normalize(normed.value);
  return {unit.value, [linear = std::move(linear), shifted = std::move(shifted),
                       normed = std::move(normed), unit = std::move(unit)](const Matrix& g) {
            auto g_shift = shifted.pullback(normed.pullback(unit.pullback(g)));
            auto g_lin = linear.pullback(g_shift.first);
            return EmbedderGrads{std::move(g_lin.second), std::move(g_shift.second)};
          }};
}

inline GradPair<EmbedderGrads> embed_batch(std::span<const FeatureMap> features,
                                           const EmbedderParams& params) {
  if (!features.empty() && features.front().channels() != params.channels()) {
    throw ShapeError("embed_batch: feature maps have " +
                     std::to_string(features.front().channels()) +
                     " channels, embed_weights expects " + std::to_string(params.channels()));
  }
  return embed_pooled(pool_batch(features, params.pool_k), params);
}

// PyTorch-style default: weights and biases uniform on +-1/sqrt(fan_in).
inline ToyBackbone init_toy(std::uint64_t seed) {
  Rng rng(seed, Stream::toy_init);
  auto fill = [&rng](std::size_t r, std::size_t c, std::size_t fan_in) {
    Matrix m(r, c);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : m.data()) v = rng.uniform(-bound, bound);
    return m;
  };
  ToyBackbone net;
  net.layer1_weights = fill(ToyBackbone::kInputs, ToyBackbone::kHidden, ToyBackbone::kInputs);
  net.layer1_bias = fill(1, ToyBackbone::kHidden, ToyBackbone::kInputs);
  net.layer2_weights = fill(ToyBackbone::kHidden, ToyBackbone::kOutputs, ToyBackbone::kHidden);
  net.layer2_bias = fill(1, ToyBackbone::kOutputs, ToyBackbone::kHidden);
  return net;
}

inline void check_toy_shapes(const ToyBackbone& net) {
  auto expect = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
    if (m.rows() != r || m.cols() != c) {
      throw ShapeError(std::string("toy backbone ") + name + " is " + m.shape_string() +
                       ", expected " + std::to_string(r) + "x" + std::to_string(c));
    }
  };
  expect(net.layer1_weights, ToyBackbone::kInputs, ToyBackbone::kHidden, "layer1_weights");
  expect(net.layer1_bias, 1, ToyBackbone::kHidden, "layer1_bias");
  expect(net.layer2_weights, ToyBackbone::kHidden, ToyBackbone::kOutputs, "layer2_weights");
  expect(net.layer2_bias, 1, ToyBackbone::kOutputs, "layer2_bias");
}

// logits = relu(points W1 + b1) W2 + b2
inline GradPair<ToyGrads> toy_forward(const Matrix& points, const ToyBackbone& net) {
  if (points.cols() != ToyBackbone::kInputs) {
    throw ShapeError("toy_forward: points must be n x 2, got " + points.shape_string());
  }
  check_toy_shapes(net);
  auto l1 = matmul(points, net.layer1_weights);
  auto b1 = add_row_bias(l1.value, net.layer1_bias);
  auto act = relu(b1.value);
  auto l2 = matmul(act.value, net.layer2_weights);
  auto b2 = add_row_bias(l2.value, net.layer2_bias);
  return {b2.value, [l1 = std::move(l1), b1 = std::move(b1), act = std::move(act),
                     l2 = std::move(l2), b2 = std::move(b2)](const Matrix& g) {
            auto g_b2 = b2.pullback(g);
            auto g_l2 = l2.pullback(g_b2.first);
            auto g_b1 = b1.pullback(act.pullback(g_l2.first));
            auto g_l1 = l1.pullback(g_b1.first);
            return ToyGrads{std::move(g_l1.second), std::move(g_b1.second),
                            std::move(g_l2.second), std::move(g_b2.second)};
          }};
}

}  // namespace proxylab
