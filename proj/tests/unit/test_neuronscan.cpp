#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "worldprobe/errors.hpp"
#include "worldprobe/metrics.hpp"
#include "worldprobe/neuronscan.hpp"
#include "worldprobe/rng.hpp"
#include "worldprobe/synth.hpp"
#include "worldprobe/toymodel.hpp"

using namespace worldprobe;

namespace {

Matrix randn(std::uint64_t seed, Eigen::Index r, Eigen::Index c) {
  Rng rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

struct Flat {
  int layer;
  Polarity pol;
  std::size_t index;
  double cosine;
};

// Every (layer, polarity, neuron) cosine, sorted by the documented order.
std::vector<Flat> brute_force(const std::vector<NeuronWeights>& ws, const Vector& dir) {
  std::vector<Flat> all;
  for (const auto& w : ws) {
    for (Eigen::Index i = 0; i < w.rows.rows(); ++i) {
      double dot = 0, nn = 0, dd = 0;
      for (Eigen::Index k = 0; k < dir.size(); ++k) {
        dot += w.rows(i, k) * dir(k);
        nn += w.rows(i, k) * w.rows(i, k);
        dd += dir(k) * dir(k);
      }
      all.push_back({w.layer, w.polarity, static_cast<std::size_t>(i), nn > 0 ? dot / std::sqrt(nn * dd) : 0.0});
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const Flat& a, const Flat& b) {
    if (std::abs(a.cosine) != std::abs(b.cosine)) return std::abs(a.cosine) > std::abs(b.cosine);
    if (a.layer != b.layer) return a.layer < b.layer;
    if (a.pol != b.pol) return a.pol < b.pol;
    return a.index < b.index;
  });
  return all;
}

}  // namespace

TEST_CASE("probe directions") {
  ProbeModel p;
  p.weights.resize(2, 1);
  p.weights << 3, 4;
  auto dirs = probe_directions(p);
  REQUIRE(dirs.size() == 1);
  CHECK(dirs[0](0) == doctest::Approx(0.6));
  CHECK(dirs[0](1) == doctest::Approx(0.8));

  p.weights.resize(3, 2);
  p.weights << 1, 0, 0, 0, 0, 2;
  dirs = probe_directions(p);
  CHECK(dirs.size() == 2);
  CHECK(dirs[0] == Eigen::Vector3d(1, 0, 0));
  CHECK(dirs[1] == Eigen::Vector3d(0, 0, 1));
  p.weights.col(1).setZero();
  CHECK_THROWS_AS(probe_directions(p), DataError);
}

TEST_CASE("planted neuron ranks first with cosine one") {
  const Matrix R = randn(1, 50, 16);
  Vector dir = randn(2, 16, 1).col(0);
  dir.normalize();
  std::vector<NeuronWeights> ws{{0, Polarity::Read, R}, {1, Polarity::Write, randn(3, 50, 16)}};
  ws[1].rows.row(17) = 2.5 * dir.transpose();
  const auto hits = scan(ws, dir, 5);
  REQUIRE(hits.size() == 5);
  CHECK(hits[0].layer == 1);
  CHECK(hits[0].neuron_index == 17);
  CHECK(hits[0].polarity == Polarity::Write);
  CHECK(std::abs(hits[0].cosine - 1.0) <= 1e-9);
}

TEST_CASE("orthogonal rows all score zero and tie-break by layer then index") {
  Matrix rows = Matrix::Zero(4, 3);
  rows.col(1).setOnes();
  std::vector<NeuronWeights> ws{{2, Polarity::Read, rows}, {0, Polarity::Read, rows}, {0, Polarity::Write, Matrix::Zero(2, 3)}};
  const auto hits = scan(ws, Eigen::Vector3d(1, 0, 0), 100);
  REQUIRE(hits.size() == 10);
  for (const auto& h : hits) CHECK(h.cosine == 0.0);
  CHECK(hits[0].layer == 0);
  CHECK(hits[0].polarity == Polarity::Read);
  CHECK(hits[0].neuron_index == 0);
  CHECK(hits[3].neuron_index == 3);
  CHECK(hits[4].polarity == Polarity::Write);
  CHECK(hits.back().layer == 2);
  CHECK_THROWS_AS(scan(ws, Eigen::Vector2d(1, 0), 3), DataError);
}

TEST_CASE("scan on a random 4-layer toy model equals brute force") {
  toy::ToyModelConfig c;
  c.vocab_size = 10;
  c.d_model = 64;
  c.n_layers = 4;
  c.n_heads = 4;
  c.mlp_width = 256;
  const auto model = toy::init_model(c, 5);
  const auto ws = toy::neuron_weights(model);
  Vector dir = randn(6, 64, 1).col(0);
  dir.normalize();
  const auto hits = scan(ws, dir, 10);
  const auto brute = brute_force(ws, dir);
  REQUIRE(hits.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(hits[i].layer == brute[i].layer);
    CHECK(hits[i].polarity == brute[i].pol);
    CHECK(hits[i].neuron_index == brute[i].index);
    CHECK(std::abs(hits[i].cosine - brute[i].cosine) <= 1e-9);
  }
  const auto full = scan(ws, dir, 1u << 20);
  REQUIRE(full.size() == brute.size());
  for (std::size_t i = 0; i < full.size(); ++i) {
    CHECK(full[i].neuron_index == brute[i].index);
    CHECK(full[i].layer == brute[i].layer);
  }
}

TEST_CASE("scan is invariant to positive rescaling of neuron weights") {
  std::vector<NeuronWeights> ws{{0, Polarity::Read, randn(11, 40, 8)}, {1, Polarity::Read, randn(12, 40, 8)}};
  const Vector dir = randn(13, 8, 1).col(0);
  auto scaled = ws;
  scaled[0].rows *= 4.0;
  scaled[1].rows *= 0.125;
  const auto a = scan(ws, dir, 20), b = scan(scaled, dir, 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(a[i].layer == b[i].layer);
    CHECK(a[i].neuron_index == b[i].neuron_index);
    CHECK(a[i].cosine == doctest::Approx(b[i].cosine).epsilon(1e-12));
  }
  // Stored cosines reproduce from the raw matrices.
  for (const auto& h : a) {
    const Vector w = ws[static_cast<std::size_t>(h.layer)].rows.row(static_cast<Eigen::Index>(h.neuron_index));
    CHECK(std::abs(h.cosine - w.dot(dir) / (w.norm() * dir.norm())) <= 1e-9);
  }
}

TEST_CASE("neuron projection") {
  const Eigen::Vector3d w(1, 2, 2);
  Matrix A(2, 3);
  A.row(0) = w;
  A.row(1) = -w;
  const Vector s = neuron_projection(A, w);
  CHECK(s(0) == doctest::Approx(3.0));
  CHECK(s(1) == doctest::Approx(-3.0));
  Matrix orth(2, 3);
  orth << 2, -1, 0, 0, 1, -1;
  CHECK(neuron_projection(orth, w).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK_THROWS_AS(neuron_projection(A, Eigen::Vector3d::Zero()), DataError);
  CHECK_THROWS_AS(neuron_projection(A, Eigen::Vector2d(1, 1)), DataError);
}

TEST_CASE("projection onto the probe direction of noiseless planted data") {
  synth::SynthSpec spec;
  spec.n = 500;
  spec.d = 32;
  spec.target_dim = 1;
  spec.n_distractors = 4;
  spec.seed = 3;
  const auto ds = synth::gen_linear(spec);
  const Vector scores = neuron_projection(ds.exact, ds.basis.row(0).transpose());
  Matrix s(scores.size(), 1);
  s.col(0) = scores;
  CHECK(spearman(ds.entities.targets(), s) >= 0.95);
}

namespace {
EntityTable typed_1d(const std::vector<std::string>& types, const Vector& y) {
  EntityTable t;
  t.target_dim = 1;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    Entity e;
    e.id = "e" + std::to_string(i);
    e.entity_type = types[static_cast<std::size_t>(i) % types.size()];
    e.group_id = e.id;
    e.target = {y(i)};
    t.rows.push_back(e);
  }
  return t;
}
}  // namespace

TEST_CASE("per-type Spearman") {
  Vector y = Vector::LinSpaced(30, 1, 30);
  const auto t = typed_1d({"a", "b", "c"}, y);
  Vector scores = y.array().exp();
  auto res = neuron_spearman_by_type(scores, t);
  for (const auto& [type, v] : res.by_type) CHECK(v[0] == doctest::Approx(1.0));

  for (Eigen::Index i = 1; i < 30; i += 3) scores(i) = -scores(i);
  res = neuron_spearman_by_type(scores, t);
  CHECK(res.by_type["a"][0] == doctest::Approx(1.0));
  CHECK(res.by_type["b"][0] == doctest::Approx(-1.0));
  CHECK(res.by_type["c"][0] == doctest::Approx(1.0));

  auto small = typed_1d({"a", "a", "a", "a", "b", "b"}, Vector::LinSpaced(6, 0, 5));
  res = neuron_spearman_by_type(Vector::LinSpaced(6, 0, 5), small);
  CHECK(res.by_type.count("b") == 0);
  CHECK(res.notes.size() == 1);
}

TEST_CASE("per-type Spearman matches restriction of the global computation") {
  Rng rng(21);
  Vector y(90), scores(90);
  for (Eigen::Index i = 0; i < 90; ++i) {
    y(i) = rng.uniform(0, 10);
    scores(i) = y(i) + rng.normal() * 3.0;
  }
  const auto t = typed_1d({"city", "river", "peak"}, y);
  const auto res = neuron_spearman_by_type(scores, t);
  for (const auto& [type, v] : res.by_type) {
    std::vector<double> yy, ss;
    for (Eigen::Index i = 0; i < 90; ++i)
      if (t.rows[static_cast<std::size_t>(i)].entity_type == type) yy.push_back(y(i)), ss.push_back(scores(i));
    const Eigen::Map<const Vector> ym(yy.data(), static_cast<Eigen::Index>(yy.size()));
    const Eigen::Map<const Vector> sm(ss.data(), static_cast<Eigen::Index>(ss.size()));
    CHECK(std::abs(v[0] - oracle::pearson(oracle::count_ranks(ym), oracle::count_ranks(sm))) <= 1e-12);
  }
}

TEST_CASE("hit export") {
  std::vector<NeuronWeights> ws{{3, Polarity::Write, randn(1, 5, 4)}};
  auto hits = scan(ws, randn(2, 4, 1).col(0), 2);
  const auto csv = hits_to_csv(hits);
  CHECK(csv.rfind("rank,layer,index,polarity,cosine,spearman\n1,3,", 0) == 0);
  const auto j = hits_to_json(hits);
  CHECK(j[0]["name"].get<std::string>().rfind("L3.", 0) == 0);
  CHECK(j[0]["spearman"].is_null());
}
