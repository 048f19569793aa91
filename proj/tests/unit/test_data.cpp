#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>

#include "proxylab/commands.hpp"
#include "proxylab/data.hpp"
#include "proxylab/errors.hpp"
#include "proxylab/hexfloat.hpp"
#include "proxylab/io.hpp"
#include "support.hpp"

using namespace proxylab;
using testsupport::random_matrix;
using testsupport::temp_dir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

template <class F>
ParseError expect_parse_error(F&& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e;
  }
  ADD_FAILURE() << "expected ParseError";
  return ParseError("none", 0, 0);
}

}  // namespace

TEST(HexFloat, RoundTripsBitExactly) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal(0.0, std::pow(10.0, rng.uniform(-30.0, 30.0)));
    EXPECT_EQ(*parse_double(format_hex(v)), v);
    EXPECT_EQ(*parse_double(format_decimal(v)), v);
  }
  const double specials[] = {0.0, -0.0, std::numeric_limits<double>::denorm_min(),
                             std::numeric_limits<double>::max(), 1.0 / 3.0};
  for (double v : specials) {
    EXPECT_EQ(*parse_double(format_hex(v)), v);
    EXPECT_EQ(std::signbit(*parse_double(format_hex(v))), std::signbit(v));
  }
  EXPECT_EQ(format_hex(3.0), "0x1.8p+1");
}

TEST(HexFloat, RejectsJunk) {
  EXPECT_FALSE(parse_double(""));
  EXPECT_FALSE(parse_double("1.0x"));
  EXPECT_FALSE(parse_double("inf"));
  EXPECT_FALSE(parse_double("nan"));
  EXPECT_FALSE(parse_double("1e999"));
  EXPECT_EQ(*parse_double("0.25"), 0.25);
}

TEST(Moons, NoiselessPointsLieOnArcs) {
  auto ds = make_two_moons(4, 0.0, 0);
  const auto& p = ds.points();
  ASSERT_EQ(p.rows(), 4u);
  EXPECT_NEAR(p(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(p(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(p(1, 0), -1.0, 1e-12);
  EXPECT_NEAR(p(2, 0), 0.0, 1e-12);
  EXPECT_NEAR(p(2, 1), 0.5, 1e-12);
  EXPECT_NEAR(p(3, 0), 2.0, 1e-12);
  EXPECT_NEAR(p(3, 1), 0.5, 1e-12);

  auto big = make_two_moons(600, 0.0, 0);
  for (std::size_t i = 0; i < 600; ++i) {
    const double x = big.points()(i, 0), y = big.points()(i, 1);
    if (big.labels[i] == 0) {
      EXPECT_NEAR(x * x + y * y, 1.0, 1e-12);
      EXPECT_GE(y, -1e-12);
    } else {
      EXPECT_NEAR((1 - x) * (1 - x) + (0.5 - y) * (0.5 - y), 1.0, 1e-12);
      EXPECT_LE(y, 0.5 + 1e-12);
    }
  }
}

TEST(Moons, ReferenceConfigBalanceAndNoise) {
  auto clean = make_two_moons(600, 0.0, 0);
  auto noisy = make_two_moons(600, 0.3, 0);
  std::size_t zeros = 0;
  for (int y : noisy.labels) zeros += y == 0;
  EXPECT_EQ(zeros, 300u);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < 300; ++i) {
    mx += noisy.points()(i, 0) - clean.points()(i, 0);
    my += noisy.points()(i, 1) - clean.points()(i, 1);
  }
  const double band = 3.0 * 0.3 / std::sqrt(300.0);
  EXPECT_LT(std::abs(mx / 300.0), band);
  EXPECT_LT(std::abs(my / 300.0), band);
}

TEST(Moons, DeterministicAndErrors) {
  EXPECT_EQ(make_two_moons(20, 0.3, 4), make_two_moons(20, 0.3, 4));
  EXPECT_NE(make_two_moons(20, 0.3, 4), make_two_moons(20, 0.3, 5));
  EXPECT_THROW(make_two_moons(7, 0.1, 0), ParameterError);
  EXPECT_THROW(make_two_moons(8, -0.1, 0), ParameterError);
}

TEST(ZeroShot, DisjointSplitsAndShapes) {
  GaussianSpec g;
  g.num_classes = 8;
  g.per_class = 5;
  auto s = make_zero_shot_gaussians(g);
  auto tr = s.train.classes(), te = s.test.classes();
  std::set<int> both(tr.begin(), tr.end());
  for (int c : te) EXPECT_FALSE(both.count(c));
  EXPECT_EQ(tr.size(), 4u);
  EXPECT_EQ(te.size(), 4u);
  EXPECT_EQ(s.train.size(), 20u);
  EXPECT_EQ(s.train.maps().front().spatial(), g.spatial);
  EXPECT_EQ(s.train.maps().front().channels(), g.channels);
  for (std::size_t c = 0; c < 8; ++c) {
    double n = 0.0;
    for (double v : s.class_means.row(c)) n += v * v;
    EXPECT_NEAR(std::sqrt(n), g.separation, 1e-12);
  }
}

TEST(ZeroShot, DeterministicAndSeedSensitive) {
  GaussianSpec g;
  g.num_classes = 4;
  g.per_class = 3;
  auto a = make_zero_shot_gaussians(g), b = make_zero_shot_gaussians(g);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  g.seed = 1;
  EXPECT_NE(make_zero_shot_gaussians(g).train, a.train);
}

TEST(ZeroShot, ParameterErrors) {
  GaussianSpec g;
  g.num_classes = 5;
  EXPECT_THROW(make_zero_shot_gaussians(g), ParameterError);
  g.num_classes = 2;
  EXPECT_THROW(make_zero_shot_gaussians(g), ParameterError);
  g.num_classes = 4;
  g.separation = -1.0;
  EXPECT_THROW(make_zero_shot_gaussians(g), ParameterError);
}

TEST(ZeroShot, NoSeparationIsChanceLevel) {
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GaussianSpec g;
    g.separation = 0.0;
    g.seed = seed;
    auto s = make_zero_shot_gaussians(g);
    auto test = pooled_set(s.test, 1);
    const std::size_t k1[] = {1};
    total += recall_at_k(test.pooled, test.labels, k1).recall_at.at(1);
  }
  // a random neighbour shares the class with probability 29/299
  EXPECT_NEAR(total / 5.0, 29.0 / 299.0, 0.03);
}

TEST(ZeroShot, LargeSeparationIsLinearlyObvious) {
  GaussianSpec g;
  g.spatial = 1;
  g.nuisance_dim = 0;
  g.separation = 30.0;
  auto s = make_zero_shot_gaussians(g);
  for (const auto* ds : {&s.train, &s.test}) {
    const auto x = pooled_features(*ds, 1);
    std::map<int, std::vector<double>> means;
    std::map<int, double> counts;
    for (std::size_t i = 0; i < ds->size(); ++i) {
      auto& m = means[ds->labels[i]];
      m.resize(x.cols());
      for (std::size_t c = 0; c < x.cols(); ++c) m[c] += x(i, c);
      counts[ds->labels[i]] += 1.0;
    }
    for (auto& [y, m] : means)
      for (double& v : m) v /= counts[y];
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds->size(); ++i) {
      int best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (auto& [y, m] : means) {
        double d = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) d += (x(i, c) - m[c]) * (x(i, c) - m[c]);
        if (d < best_d) {
          best_d = d;
          best = y;
        }
      }
      correct += best == ds->labels[i];
    }
    EXPECT_GE(static_cast<double>(correct) / static_cast<double>(ds->size()), 0.99);
  }
}

TEST(DatasetFile, RoundTripsMapsAndPoints) {
  auto dir = temp_dir("dataset");
  GaussianSpec g;
  g.num_classes = 4;
  g.per_class = 3;
  auto s = make_zero_shot_gaussians(g);
  s.train.class_names = {"a", "b"};
  save_dataset(s.train, dir / "maps.txt");
  EXPECT_EQ(load_dataset(dir / "maps.txt"), s.train);

  auto moons = make_two_moons(10, 0.3, 1);
  save_dataset(moons, dir / "points.txt");
  EXPECT_EQ(load_dataset(dir / "points.txt"), moons);
  std::filesystem::remove_all(dir);
}

TEST(DatasetFile, TruncatedFileNamesLineAndOffset) {
  auto dir = temp_dir("dataset_trunc");
  save_dataset(make_two_moons(4, 0.0, 0), dir / "d.txt");
  const auto text = slurp(dir / "d.txt");
  const auto cut = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
  spit(dir / "d.txt", cut);
  auto e = expect_parse_error([&] { load_dataset(dir / "d.txt"); });
  EXPECT_EQ(e.line(), 5u);
  EXPECT_EQ(e.offset(), cut.size());
  std::filesystem::remove_all(dir);
}

TEST(DatasetFile, WorkedExampleBytes) {
  auto dir = temp_dir("dataset_bytes");
  LabeledDataset ds;
  ds.features = Matrix{{0.5, -1.0}, {3.0, 0.1}};
  ds.labels = {0, 1};
  save_dataset(ds, dir / "p.txt");
  const std::string expect =
      R"({"class_names":[],"count":2,"dim":2,"format":"proxylab-dataset","kind":"points","version":1})"
      "\n0 0x1p-1 -0x1p+0\n1 0x1.8p+1 0x1.999999999999ap-4\n";
  EXPECT_EQ(slurp(dir / "p.txt"), expect);
  EXPECT_EQ(expect.size(), 142u);
  std::filesystem::remove_all(dir);
}

TEST(DatasetFile, RejectsRowsBeyondCount) {
  auto dir = temp_dir("dataset_extra");
  spit(dir / "extra.txt",
       R"({"format":"proxylab-dataset","version":1,"count":1,"kind":"points","dim":1})"
       "\n0 0x1p+0\n1 0x1p+1\n");
  auto e = expect_parse_error([&] { load_dataset(dir / "extra.txt"); });
  EXPECT_EQ(e.line(), 3u);
  std::filesystem::remove_all(dir);
}

TEST(DatasetFile, RejectsEmptyBadVersionAndBadRows) {
  auto dir = temp_dir("dataset_bad");
  spit(dir / "empty.txt", "");
  expect_parse_error([&] { load_dataset(dir / "empty.txt"); });
  spit(dir / "zero.txt",
       R"({"format":"proxylab-dataset","version":1,"count":0,"kind":"points","dim":2})"
       "\n");
  expect_parse_error([&] { load_dataset(dir / "zero.txt"); });
  spit(dir / "ver.txt",
       R"({"format":"proxylab-dataset","version":9,"count":1,"kind":"points","dim":1})"
       "\n0 0x1p+0\n");
  expect_parse_error([&] { load_dataset(dir / "ver.txt"); });
  spit(dir / "short.txt",
       R"({"format":"proxylab-dataset","version":1,"count":1,"kind":"points","dim":2})"
       "\n0 0x1p+0\n");
  auto e = expect_parse_error([&] { load_dataset(dir / "short.txt"); });
  EXPECT_EQ(e.line(), 2u);
  spit(dir / "junk.txt", "{not json\n");
  expect_parse_error([&] { load_dataset(dir / "junk.txt"); });
  EXPECT_THROW(load_dataset(dir / "missing.txt"), FileError);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RoundTripsBitExactly) {
  auto dir = temp_dir("ckpt");
  Checkpoint ck;
  ck.params = init_params(6, 4, 3);
  ck.params.pool_k = 2;
  ck.params.use_layer_norm = false;
  ck.bank = init_proxies(std::vector<int>{3, 5, 9}, 4, 3);
  ck.seed = 17;
  ck.config = {{"loss", "proxynca_pp"}};
  save_checkpoint(ck, dir / "c.json");
  EXPECT_EQ(load_checkpoint(dir / "c.json"), ck);
  EXPECT_EQ(slurp(dir / "c.json"), checkpoint_to_string(ck));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, ShapeAndParseErrors) {
  auto dir = temp_dir("ckpt_bad");
  Checkpoint ck;
  ck.params = init_params(6, 4, 3);
  ck.bank = init_proxies(2, 5, 3);
  save_checkpoint(ck, dir / "c.json");
  EXPECT_THROW(load_checkpoint(dir / "c.json"), ShapeError);
  spit(dir / "bad.json", "{\n  \"format\": \n");
  auto e = expect_parse_error([&] { load_checkpoint(dir / "bad.json"); });
  EXPECT_EQ(e.line(), 3u);
  EXPECT_THROW(load_checkpoint(dir / "none.json"), FileError);
  std::filesystem::remove_all(dir);
}

TEST(EmbeddingFile, RoundTripAndTruncation) {
  auto dir = temp_dir("emb");
  Rng rng(2);
  auto m = random_matrix(5, 3, rng);
  std::vector<int> labels{1, 1, 2, 3, 3};
  save_embeddings(m, labels, dir / "e.txt");
  auto back = load_embeddings(dir / "e.txt");
  EXPECT_EQ(back.embeddings, m);
  EXPECT_EQ(back.labels, labels);
  auto text = slurp(dir / "e.txt");
  spit(dir / "e.txt", text.substr(0, text.size() - 5));
  expect_parse_error([&] { load_embeddings(dir / "e.txt"); });
  std::filesystem::remove_all(dir);
}
