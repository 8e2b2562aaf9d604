#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "worldprobe/dataset.hpp"
#include "worldprobe/toymodel.hpp"
#include "worldprobe/types.hpp"

namespace worldprobe::synth {

struct SynthSpec {
  std::size_t n = 1000;
  std::size_t d = 64;
  std::size_t target_dim = 2;
  // Planted features carry unit variance per target dimension; the isotropic
  // noise term is divided by snr. Infinity means no noise.
  double snr = std::numeric_limits<double>::infinity();
  std::size_t n_distractors = 0;
  double distractor_scale = 1.0;  // norm of each distractor direction
  std::size_t n_blocks = 4;
  std::size_t n_entity_types = 3;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
};

// Targets are drawn uniformly from this box: latitude [-60, 60] and
// longitude [-180, 180] for 2-D, years [1000, 2000] for 1-D.
struct TargetBox {
  std::vector<double> lo, hi;
};
TargetBox target_box(std::size_t target_dim);

struct LinearDataset {
  EntityTable entities;
  ActivationMatrix activations;
  Matrix basis;            // t x d, orthonormal rows
  Matrix distractor_dirs;  // m x d
  Vector target_center, target_scale;  // Z_std = (Z - center) / scale
  Matrix exact;  // activations before float32 storage

  // Basis and standardization as JSON, for oracle checks.
  nlohmann::ordered_json ground_truth() const;
};

// A = Z_std * B + D * C + eps / snr, with Z uniform in the target box,
// B random orthonormal rows, D standard Gaussian distractor features and
// C random directions of norm distractor_scale. Blocks are the cells of a
// grid over the box.
LinearDataset gen_linear(const SynthSpec& spec);

struct BlockCentroidDataset {
  EntityTable entities;
  ActivationMatrix activations;
  Matrix offsets;  // n x t, target minus the mean target of its block
};

// Activations encode only block membership (one-hot in random orthonormal
// directions, plus eps / snr). Targets are uniform in the box, so each one is
// its block's centroid (the block mean) plus an offset that sums to zero
// within the block and is therefore uncorrelated with the activations. When
// n_blocks >= n each entity sits at its cell centre and the offset is zero.
BlockCentroidDataset gen_block_centroid(const SynthSpec& spec);

// Block label of a target under the grid used by both generators.
std::string block_label(const std::vector<double>& target, std::size_t n_blocks);

struct GeoCorpusConfig {
  std::size_t grid = 8;
  std::size_t n_entities = 64;
  std::size_t fact_repeats = 20;  // copies of each entity's fact sequence
  std::size_t n_walks = 20000;
  std::size_t walk_length = 8;
  double walk_sigma = 1.0;  // grid units
  std::size_t n_entity_types = 2;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
};

// Vocabulary: entity tokens [0, E), LOC = E, x tokens E+1.., y tokens E+1+g..
struct GeoVocab {
  int n_entities = 0;
  int grid = 0;

  int loc() const { return n_entities; }
  int x_token(int x) const { return n_entities + 1 + x; }
  int y_token(int y) const { return n_entities + 1 + grid + y; }
  int size() const { return n_entities + 1 + 2 * grid; }
};

struct GeoCorpus {
  GeoVocab vocab;
  std::vector<toy::Sequence> corpus;
  EntityTable entities;  // target = [y, x] grid coordinates as (lat, lon)
  std::vector<int> cell_x, cell_y;

  // [entity] per entity, for activation extraction.
  std::vector<toy::Sequence> probe_prompts() const;
  // [entity, LOC] per entity; the next token is the x coordinate.
  std::vector<toy::Sequence> answer_prompts() const;
};

// Fact sequences [e, LOC, x, y] plus random walks between nearby entities,
// with steps drawn proportional to exp(-dist^2 / (2 sigma^2)).
GeoCorpus gen_geo_corpus(const GeoCorpusConfig& config);

}  // namespace worldprobe::synth
