#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "proxylab/errors.hpp"
#include "proxylab/hexfloat.hpp"
#include "proxylab/matrix.hpp"
#include "proxylab/pooling.hpp"
#include "proxylab/rng.hpp"

namespace proxylab {

// Samples are either spatial feature maps or plain vectors (one per row).
struct LabeledDataset {
  std::variant<std::vector<FeatureMap>, Matrix> features;
  std::vector<int> labels;
  std::vector<std::string> class_names;

  bool has_maps() const noexcept { return std::holds_alternative<std::vector<FeatureMap>>(features); }
  const std::vector<FeatureMap>& maps() const { return std::get<std::vector<FeatureMap>>(features); }
  const Matrix& points() const { return std::get<Matrix>(features); }

  std::size_t size() const noexcept { return labels.size(); }

  std::vector<int> classes() const {
    std::set<int> s(labels.begin(), labels.end());
    return {s.begin(), s.end()};
  }

  bool operator==(const LabeledDataset&) const = default;
};

inline void validate(const LabeledDataset& ds) {
  const std::size_t n = ds.has_maps() ? ds.maps().size() : ds.points().rows();
  if (n != ds.labels.size()) {
    throw ShapeError("dataset has " + std::to_string(n) + " samples but " +
                     std::to_string(ds.labels.size()) + " labels");
  }
  if (ds.has_maps() && !ds.maps().empty()) {
    const auto& first = ds.maps().front();
    for (const auto& m : ds.maps())
      if (m.spatial() != first.spatial() || m.channels() != first.channels())
        throw ShapeError("dataset feature maps differ in shape");
  }
}

// Rows of ds whose label is in `keep`, in original order.
inline LabeledDataset subset_by_class(const LabeledDataset& ds, const std::set<int>& keep) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (keep.contains(ds.labels[i])) idx.push_back(i);
  LabeledDataset out;
  out.class_names = ds.class_names;
  for (std::size_t i : idx) out.labels.push_back(ds.labels[i]);
  if (ds.has_maps()) {
    std::vector<FeatureMap> maps;
    maps.reserve(idx.size());
    for (std::size_t i : idx) maps.push_back(ds.maps()[i]);
    out.features = std::move(maps);
  } else {
    out.features = select_rows(ds.points(), idx);
  }
  return out;
}

// Two interleaving half circles. Class 0: (cos t, sin t); class 1:
// (1 - cos t, 0.5 - sin t); t on an even grid over [0, pi].
inline LabeledDataset make_two_moons(std::size_t n, double noise_sigma, std::uint64_t seed) {
  if (n == 0 || n % 2 != 0) {
    throw ParameterError("make_two_moons: n must be even and positive, got " + std::to_string(n));
  }
  if (!(noise_sigma >= 0.0)) throw ParameterError("make_two_moons: noise must be >= 0");
  const std::size_t half = n / 2;
  Matrix pts(n, 2);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < half; ++i) {
    const double t =
        half == 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(half - 1);
    pts(i, 0) = std::cos(t);
    pts(i, 1) = std::sin(t);
    labels[i] = 0;
    pts(half + i, 0) = 1.0 - std::cos(t);
    pts(half + i, 1) = 0.5 - std::sin(t);
    labels[half + i] = 1;
  }
  if (noise_sigma > 0.0) {
    Rng rng(seed, Stream::data);
    for (double& v : pts.data()) v += rng.normal(0.0, noise_sigma);
  }
  LabeledDataset ds;
  ds.features = std::move(pts);
  ds.labels = std::move(labels);
  return ds;
}

// Synthetic zero-shot benchmark. Each sample of class c has a class latent
// z ~ N(mu_c, blob_sigma^2 I_dim) with |mu_c| = separation, and a
// class-independent nuisance latent u ~ N(0, nuisance_sigma^2 I_nuisance_dim).
// A fixed random linear lift maps [z; u] to E channel activations, which are
// placed (plus object_offset) at one uniformly random position of an M x M
// map; every other position holds N(0, clutter_sigma^2) background.
struct GaussianSpec {
  std::size_t num_classes = 20;
  std::size_t per_class = 30;
  std::size_t dim = 8;
  std::size_t spatial = 4;
  std::size_t channels = 32;
  double separation = 3.0;
  std::uint64_t seed = 0;
  double blob_sigma = 1.0;
  std::size_t nuisance_dim = 8;
  double nuisance_sigma = 2.0;
  double clutter_sigma = 0.5;
  double object_offset = 4.0;
  // With num_groups > 0, class c belongs to group c % num_groups and its mean
  // is the group centre (norm group_separation) plus the offset above.
  std::size_t num_groups = 0;
  double group_separation = 0.0;
};

struct ZeroShotSplit {
  LabeledDataset train;
  LabeledDataset test;
  Matrix class_means;  // num_classes x dim
};

inline ZeroShotSplit make_zero_shot_gaussians(const GaussianSpec& spec) {
  if (spec.num_classes < 4 || spec.num_classes % 2 != 0) {
    throw ParameterError("make_zero_shot_gaussians: num_classes must be even and >= 4");
  }
  if (spec.per_class < 1 || spec.dim < 1 || spec.spatial < 1 || spec.channels < 1) {
    throw ParameterError("make_zero_shot_gaussians: sizes must be positive");
  }
  if (!(spec.separation >= 0.0) || !(spec.blob_sigma >= 0.0) ||
      !(spec.nuisance_sigma >= 0.0) || !(spec.clutter_sigma >= 0.0) ||
      !(spec.group_separation >= 0.0)) {
    throw ParameterError("make_zero_shot_gaussians: scales must be non-negative");
  }
  const std::size_t latent = spec.dim + spec.nuisance_dim;
  const std::size_t positions = spec.spatial * spec.spatial;

  Rng lift_rng(spec.seed, Stream::lift);
  Matrix lift(latent, spec.channels);
  const double lift_sd = 1.0 / std::sqrt(static_cast<double>(latent));
  for (double& v : lift.data()) v = lift_rng.normal(0.0, lift_sd);

  Rng rng(spec.seed, Stream::data);
  Matrix means(spec.num_classes, spec.dim);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : means.row(c)) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-8);
    for (double& v : means.row(c)) v *= spec.separation / norm;
  }
  if (spec.num_groups > 0) {
    Matrix centres(spec.num_groups, spec.dim);
    for (std::size_t g = 0; g < spec.num_groups; ++g) {
      double norm = 0.0;
      for (double& v : centres.row(g)) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (double& v : centres.row(g)) v *= norm > 0.0 ? spec.group_separation / norm : 0.0;
    }
    for (std::size_t c = 0; c < spec.num_classes; ++c)
      for (std::size_t j = 0; j < spec.dim; ++j) means(c, j) += centres(c % spec.num_groups, j);
  }

  ZeroShotSplit out;
  out.class_means = means;
  std::vector<FeatureMap> train_maps, test_maps;
  std::vector<double> code(latent);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const bool is_train = c < spec.num_classes / 2;
    for (std::size_t s = 0; s < spec.per_class; ++s) {
      for (std::size_t j = 0; j < spec.dim; ++j) code[j] = means(c, j) + rng.normal(0.0, spec.blob_sigma);
      for (std::size_t j = 0; j < spec.nuisance_dim; ++j)
        code[spec.dim + j] = rng.normal(0.0, spec.nuisance_sigma);
      const auto where = static_cast<std::size_t>(rng.below(positions));
      Matrix map(positions, spec.channels);
      for (std::size_t p = 0; p < positions; ++p) {
        if (p == where) continue;
        for (double& v : map.row(p)) v = rng.normal(0.0, spec.clutter_sigma);
      }
      for (std::size_t e = 0; e < spec.channels; ++e) {
        double a = spec.object_offset;
        for (std::size_t j = 0; j < latent; ++j) a += code[j] * lift(j, e);
        map(where, e) = a;
      }
      (is_train ? train_maps : test_maps).emplace_back(spec.spatial, std::move(map));
      (is_train ? out.train.labels : out.test.labels).push_back(static_cast<int>(c));
    }
  }
  out.train.features = std::move(train_maps);
  out.test.features = std::move(test_maps);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files. Line 1 is a JSON header; each following line is one sample:
// an integer label and then the sample values as hex floats, space separated.
// Feature maps are written position-major (M*M rows of E channels).

inline constexpr int kDatasetFormatVersion = 1;

inline void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
  validate(ds);
  nlohmann::json header;
  header["format"] = "proxylab-dataset";
  header["version"] = kDatasetFormatVersion;
  header["count"] = ds.size();
  if (ds.has_maps()) {
    header["kind"] = "feature_maps";
    header["spatial"] = ds.maps().empty() ? 0 : ds.maps().front().spatial();
    header["channels"] = ds.maps().empty() ? 0 : ds.maps().front().channels();
  } else {
    header["kind"] = "points";
    header["dim"] = ds.points().cols();
  }
  header["class_names"] = ds.class_names;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw FileError("cannot open '" + path.string() + "' for writing");
  f << header.dump() << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    f << ds.labels[i];
    auto values = ds.has_maps() ? ds.maps()[i].data().data() : ds.points().row(i);
    for (double v : values) f << ' ' << format_hex(v);
    f << '\n';
  }
  if (!f) throw FileError("write to '" + path.string() + "' failed");
}

inline LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FileError("cannot open dataset '" + path.string() + "'");
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(f, line)) throw ParseError("missing dataset header", 1, 0);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed dataset header: ") + e.what(), 1, 0);
  }
  auto field = [&](const char* key) -> const nlohmann::json& {
    if (!header.contains(key)) throw ParseError(std::string("header lacks '") + key + "'", 1, 0);
    return header.at(key);
  };
  std::size_t count = 0, width = 0, spatial = 0, channels = 0;
  bool maps = false;
  try {
    if (field("format").get<std::string>() != "proxylab-dataset")
      throw ParseError("not a proxylab dataset file", 1, 0);
    if (field("version").get<int>() != kDatasetFormatVersion)
      throw ParseError("unknown dataset format version " + field("version").dump(), 1, 0);
    count = field("count").get<std::size_t>();
    const auto kind = field("kind").get<std::string>();
    if (kind == "feature_maps") {
      maps = true;
      spatial = field("spatial").get<std::size_t>();
      channels = field("channels").get<std::size_t>();
      width = spatial * spatial * channels;
    } else if (kind == "points") {
      width = field("dim").get<std::size_t>();
    } else {
      throw ParseError("unknown dataset kind '" + kind + "'", 1, 0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad dataset header field: ") + e.what(), 1, 0);
  }
  if (count == 0) throw ParseError("dataset file declares 0 samples", 1, 0);
  if (width == 0) throw ParseError("dataset rows would be empty", 1, 0);

  LabeledDataset ds;
  if (header.contains("class_names")) ds.class_names = header["class_names"].get<std::vector<std::string>>();
  offset += line.size() + 1;
  std::vector<double> values;
  values.reserve(count * width);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t lineno = i + 2;
    if (!std::getline(f, line)) {
      throw ParseError("truncated dataset: expected " + std::to_string(count) +
                           " samples, found " + std::to_string(i),
                       lineno, offset);
    }
    if (f.eof()) throw ParseError("truncated dataset: last sample lacks a newline", lineno, offset);
    std::istringstream in(line);
    std::string tok;
    if (!(in >> tok)) throw ParseError("empty sample line", lineno, offset);
    try {
      std::size_t used = 0;
      const long long label = std::stoll(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      ds.labels.push_back(static_cast<int>(label));
    } catch (const std::exception&) {
      throw ParseError("bad label '" + tok + "'", lineno, offset);
    }
    std::size_t got = 0;
    while (in >> tok) {
      auto v = parse_double(tok);
      if (!v) throw ParseError("bad number '" + tok + "'", lineno, offset);
      values.push_back(*v);
      ++got;
    }
    if (got != width) {
      throw ParseError("sample has " + std::to_string(got) + " values, expected " +
                           std::to_string(width),
                       lineno, offset);
    }
    offset += line.size() + 1;
  }
  if (std::getline(f, line)) {
    throw ParseError("dataset has more sample lines than its count of " + std::to_string(count),
                     count + 2, offset);
  }
  if (maps) {
    std::vector<FeatureMap> fms;
    fms.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<double> one(values.begin() + static_cast<std::ptrdiff_t>(i * width),
                              values.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
      fms.emplace_back(spatial, Matrix(spatial * spatial, channels, std::move(one)));
    }
    ds.features = std::move(fms);
  } else {
    ds.features = Matrix(count, width, std::move(values));
  }
  return ds;
}

}  // namespace proxylab
