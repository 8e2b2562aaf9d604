#include "worldprobe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "worldprobe/errors.hpp"
#include "worldprobe/rng.hpp"

namespace worldprobe::synth {

namespace {

using Index = Eigen::Index;

Matrix gaussian(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
  return m;
}

// k x d with orthonormal rows.
Matrix orthonormal_rows(Rng& rng, std::size_t k, std::size_t d) {
  const Matrix g = gaussian(rng, d, k);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(static_cast<Index>(d), static_cast<Index>(k));
  // Fix signs so the result depends only on the draw, not the QR convention.
  const Matrix r = qr.matrixQR().topRows(static_cast<Index>(k)).triangularView<Eigen::Upper>();
  for (Index j = 0; j < q.cols(); ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q.transpose();
}

struct Grid {
  std::size_t rows = 1, cols = 1;  // latitude bands x longitude bands (2-D); rows = 1 for 1-D
};

Grid grid_for(std::size_t n_blocks, std::size_t target_dim) {
  Grid g;
  if (target_dim == 1) {
    g.cols = n_blocks;
    return g;
  }
  std::size_t r = 1;
  for (std::size_t k = 1; k * k <= n_blocks; ++k)
    if (n_blocks % k == 0) r = k;
  g.rows = r;
  g.cols = n_blocks / r;
  return g;
}

// Cell coordinates (band along dim 0, band along the last dim).
std::pair<std::size_t, std::size_t> cell_of(const std::vector<double>& target, const TargetBox& box, const Grid& g) {
  auto band = [](double v, double lo, double hi, std::size_t k) {
    const double u = (v - lo) / (hi - lo);
    return std::min(k - 1, static_cast<std::size_t>(std::max(0.0, std::floor(u * static_cast<double>(k)))));
  };
  if (target.size() == 1) return {0, band(target[0], box.lo[0], box.hi[0], g.cols)};
  return {band(target[0], box.lo[0], box.hi[0], g.rows), band(target[1], box.lo[1], box.hi[1], g.cols)};
}

std::string cell_name(std::size_t r, std::size_t c, std::size_t target_dim) {
  if (target_dim == 1) return "era_" + std::to_string(c);
  return "cell_" + std::to_string(r) + "_" + std::to_string(c);
}

std::vector<double> cell_centroid(std::size_t r, std::size_t c, const TargetBox& box, const Grid& g) {
  auto mid = [](double lo, double hi, std::size_t i, std::size_t k) {
    return lo + (hi - lo) * (static_cast<double>(i) + 0.5) / static_cast<double>(k);
  };
  if (box.lo.size() == 1) return {mid(box.lo[0], box.hi[0], c, g.cols)};
  return {mid(box.lo[0], box.hi[0], r, g.rows), mid(box.lo[1], box.hi[1], c, g.cols)};
}

std::string pad_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06zu", prefix, i);
  return buf;
}

Entity make_entity(const char* prefix, std::size_t i, std::size_t n_types, std::vector<double> target, std::string block) {
  Entity e;
  e.id = pad_id(prefix, i);
  e.name = e.id;
  e.entity_type = "type_" + std::to_string(i % std::max<std::size_t>(n_types, 1));
  e.block = std::move(block);
  e.group_id = e.id;
  e.target = std::move(target);
  return e;
}

ActivationMatrix to_actv(const Matrix& a, const std::string& model_id) {
  ActivationMatrix m;
  m.model_id = model_id;
  m.prompt_id = "synthetic";
  m.layer = 0;
  m.data = a.cast<float>();
  return m;
}

nlohmann::ordered_json matrix_json(const Matrix& m) {
  auto out = nlohmann::ordered_json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(std::move(row));
  }
  return out;
}

nlohmann::ordered_json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

void SynthSpec::validate() const {
  if (n < 10) throw UsageError("synth: n must be at least 10");
  if (d < 1) throw UsageError("synth: d must be positive");
  if (target_dim != 1 && target_dim != 2) throw UsageError("synth: target_dim must be 1 or 2");
  if (!(snr > 0.0)) throw UsageError("synth: snr must be positive");
  if (target_dim > d) throw UsageError("synth: target_dim exceeds d");
  if (n_blocks < 1) throw UsageError("synth: n_blocks must be positive");
  if (!(distractor_scale >= 0.0) || !std::isfinite(distractor_scale))
    throw UsageError("synth: distractor_scale must be finite and non-negative");
}

nlohmann::ordered_json SynthSpec::to_json() const {
  return {{"n", n},
          {"d", d},
          {"target_dim", target_dim},
          {"snr", number_or_null(snr)},
          {"n_distractors", n_distractors},
          {"distractor_scale", distractor_scale},
          {"n_blocks", n_blocks},
          {"n_entity_types", n_entity_types},
          {"seed", seed}};
}

TargetBox target_box(std::size_t target_dim) {
  if (target_dim == 1) return {{1000.0}, {2000.0}};
  return {{-60.0, -180.0}, {60.0, 180.0}};
}

std::string block_label(const std::vector<double>& target, std::size_t n_blocks) {
  const auto box = target_box(target.size());
  const auto g = grid_for(n_blocks, target.size());
  const auto [r, c] = cell_of(target, box, g);
  return cell_name(r, c, target.size());
}

nlohmann::ordered_json LinearDataset::ground_truth() const {
  nlohmann::ordered_json j;
  j["basis"] = matrix_json(basis);
  j["target_center"] = std::vector<double>(target_center.data(), target_center.data() + target_center.size());
  j["target_scale"] = std::vector<double>(target_scale.data(), target_scale.data() + target_scale.size());
  j["distractor_dirs"] = matrix_json(distractor_dirs);
  return j;
}

LinearDataset gen_linear(const SynthSpec& spec) {
  spec.validate();
  const auto box = target_box(spec.target_dim);
  const auto grid = grid_for(spec.n_blocks, spec.target_dim);
  const Index n = static_cast<Index>(spec.n), t = static_cast<Index>(spec.target_dim);
  Rng rng(spec.seed);

  LinearDataset out;
  out.target_center.resize(t);
  out.target_scale.resize(t);
  for (Index j = 0; j < t; ++j) {
    out.target_center(j) = 0.5 * (box.lo[j] + box.hi[j]);
    out.target_scale(j) = (box.hi[j] - box.lo[j]) / std::sqrt(12.0);
  }

  Matrix z(n, t);
  out.entities.target_dim = spec.target_dim;
  for (Index i = 0; i < n; ++i) {
    std::vector<double> target(spec.target_dim);
    for (Index j = 0; j < t; ++j) target[j] = z(i, j) = rng.uniform(box.lo[j], box.hi[j]);
    const auto [r, c] = cell_of(target, box, grid);
    out.entities.rows.push_back(
        make_entity("lin", static_cast<std::size_t>(i), spec.n_entity_types, target, cell_name(r, c, spec.target_dim)));
  }
  const Matrix zs = (z.rowwise() - out.target_center.transpose()).array().rowwise() / out.target_scale.transpose().array();

  out.basis = orthonormal_rows(rng, spec.target_dim, spec.d);
  Matrix a = zs * out.basis;

  out.distractor_dirs = gaussian(rng, spec.n_distractors, spec.d);
  for (Index k = 0; k < out.distractor_dirs.rows(); ++k)
    out.distractor_dirs.row(k) *= spec.distractor_scale / out.distractor_dirs.row(k).norm();
  if (spec.n_distractors > 0) a += gaussian(rng, spec.n, spec.n_distractors) * out.distractor_dirs;

  if (std::isfinite(spec.snr)) a += gaussian(rng, spec.n, spec.d) / spec.snr;
  out.exact = a;
  out.activations = to_actv(a, "synth-linear");
  return out;
}

BlockCentroidDataset gen_block_centroid(const SynthSpec& spec) {
  spec.validate();
  if (spec.n_blocks < 3) throw UsageError("block-centroid: n_blocks must be at least 3");
  if (spec.n_blocks > spec.d) throw UsageError("block-centroid: n_blocks must not exceed d");
  const auto box = target_box(spec.target_dim);
  const auto grid = grid_for(spec.n_blocks, spec.target_dim);
  const Index n = static_cast<Index>(spec.n), t = static_cast<Index>(spec.target_dim);
  const bool one_per_block = spec.n_blocks >= spec.n;
  Rng rng(spec.seed);

  BlockCentroidDataset out;
  out.entities.target_dim = spec.target_dim;
  out.offsets = Matrix::Zero(n, t);
  std::vector<std::size_t> block_index(spec.n);
  for (Index i = 0; i < n; ++i) {
    std::size_t r = 0, c = 0;
    std::vector<double> target(spec.target_dim);
    if (one_per_block) {
      const auto cell = static_cast<std::size_t>(i);
      r = cell / grid.cols;
      c = cell % grid.cols;
      target = cell_centroid(r, c, box, grid);
    } else {
      for (Index j = 0; j < t; ++j) target[j] = rng.uniform(box.lo[j], box.hi[j]);
      std::tie(r, c) = cell_of(target, box, grid);
      for (Index j = 0; j < t; ++j) out.offsets(i, j) = target[j];
    }
    block_index[i] = r * grid.cols + c;
    out.entities.rows.push_back(
        make_entity("blk", static_cast<std::size_t>(i), spec.n_entity_types, target, cell_name(r, c, spec.target_dim)));
  }

  if (!one_per_block) {
    Matrix sums = Matrix::Zero(static_cast<Index>(spec.n_blocks), t);
    Vector counts = Vector::Zero(static_cast<Index>(spec.n_blocks));
    for (Index i = 0; i < n; ++i) {
      sums.row(static_cast<Index>(block_index[i])) += out.offsets.row(i);
      counts(static_cast<Index>(block_index[i])) += 1.0;
    }
    for (Index i = 0; i < n; ++i) {
      const auto b = static_cast<Index>(block_index[i]);
      out.offsets.row(i) -= sums.row(b) / counts(b);
    }
  }

  const Matrix dirs = orthonormal_rows(rng, spec.n_blocks, spec.d);
  Matrix a(n, static_cast<Index>(spec.d));
  for (Index i = 0; i < n; ++i) a.row(i) = dirs.row(static_cast<Index>(block_index[i]));
  if (std::isfinite(spec.snr)) a += gaussian(rng, spec.n, spec.d) / spec.snr;
  out.activations = to_actv(a, "synth-block-centroid");
  return out;
}

// ---------------------------------------------------------------------------

void GeoCorpusConfig::validate() const {
  if (grid < 1) throw UsageError("geo corpus: grid must be positive");
  if (n_entities < 2) throw UsageError("geo corpus: need at least 2 entities");
  if (n_entities > grid * grid)
    throw UsageError("geo corpus: " + std::to_string(n_entities) + " entities do not fit a " + std::to_string(grid) +
                     "x" + std::to_string(grid) + " grid");
  if (grid > 90) throw UsageError("geo corpus: grid coordinates must stay within latitude range");
  if (walk_length < 2 && n_walks > 0) throw UsageError("geo corpus: walk_length must be at least 2");
  if (!(walk_sigma > 0.0)) throw UsageError("geo corpus: walk_sigma must be positive");
}

nlohmann::ordered_json GeoCorpusConfig::to_json() const {
  return {{"grid", grid},
          {"n_entities", n_entities},
          {"fact_repeats", fact_repeats},
          {"n_walks", n_walks},
          {"walk_length", walk_length},
          {"walk_sigma", walk_sigma},
          {"n_entity_types", n_entity_types},
          {"seed", seed}};
}

std::vector<toy::Sequence> GeoCorpus::probe_prompts() const {
  std::vector<toy::Sequence> out;
  for (int e = 0; e < vocab.n_entities; ++e) out.push_back({e});
  return out;
}

std::vector<toy::Sequence> GeoCorpus::answer_prompts() const {
  std::vector<toy::Sequence> out;
  for (int e = 0; e < vocab.n_entities; ++e) out.push_back({e, vocab.loc()});
  return out;
}

GeoCorpus gen_geo_corpus(const GeoCorpusConfig& config) {
  config.validate();
  const int E = static_cast<int>(config.n_entities);
  const int g = static_cast<int>(config.grid);
  Rng rng(config.seed);

  GeoCorpus out;
  out.vocab = {E, g};
  std::vector<int> cells(static_cast<std::size_t>(g * g));
  std::iota(cells.begin(), cells.end(), 0);
  rng.shuffle(cells.begin(), cells.end());

  out.entities.target_dim = 2;
  const int half = g / 2;
  for (int e = 0; e < E; ++e) {
    const int cell = cells[static_cast<std::size_t>(e)];
    const int x = cell % g, y = cell / g;
    out.cell_x.push_back(x);
    out.cell_y.push_back(y);
    const int quadrant = (half > 0 ? (y >= half) * 2 + (x >= half) : 0);
    Entity ent = make_entity("geo", static_cast<std::size_t>(e), config.n_entity_types,
                             {static_cast<double>(y), static_cast<double>(x)}, "q" + std::to_string(quadrant));
    ent.name = "ent" + std::to_string(e);
    ent.extra["token"] = e;
    out.entities.rows.push_back(std::move(ent));
  }

  for (int e = 0; e < E; ++e) {
    const toy::Sequence fact{e, out.vocab.loc(), out.vocab.x_token(out.cell_x[static_cast<std::size_t>(e)]),
                             out.vocab.y_token(out.cell_y[static_cast<std::size_t>(e)])};
    for (std::size_t k = 0; k < config.fact_repeats; ++k) out.corpus.push_back(fact);
  }

  // Cumulative neighbour weights per entity (self excluded).
  std::vector<std::vector<double>> cumulative(static_cast<std::size_t>(E));
  const double two_sigma_sq = 2.0 * config.walk_sigma * config.walk_sigma;
  for (int a = 0; a < E; ++a) {
    auto& cum = cumulative[static_cast<std::size_t>(a)];
    double acc = 0.0;
    for (int b = 0; b < E; ++b) {
      if (b != a) {
        const double dx = out.cell_x[a] - out.cell_x[b], dy = out.cell_y[a] - out.cell_y[b];
        acc += std::exp(-(dx * dx + dy * dy) / two_sigma_sq);
      }
      cum.push_back(acc);
    }
  }
  for (std::size_t w = 0; w < config.n_walks; ++w) {
    toy::Sequence seq{static_cast<int>(rng.below(static_cast<std::uint64_t>(E)))};
    while (seq.size() < config.walk_length) {
      const auto& cum = cumulative[static_cast<std::size_t>(seq.back())];
      const double u = rng.uniform() * cum.back();
      const auto it = std::upper_bound(cum.begin(), cum.end(), u);
      seq.push_back(static_cast<int>(std::min<std::ptrdiff_t>(it - cum.begin(), E - 1)));
    }
    out.corpus.push_back(std::move(seq));
  }
  return out;
}

}  // namespace worldprobe::synth
