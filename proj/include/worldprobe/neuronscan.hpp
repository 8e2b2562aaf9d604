#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "worldprobe/dataset.hpp"
#include "worldprobe/probes.hpp"
#include "worldprobe/types.hpp"

namespace worldprobe {

// read: MLP input weight row (what the neuron reads from the residual stream);
// write: MLP output weight column (what it writes back).
enum class Polarity { Read = 0, Write = 1 };

const char* to_string(Polarity p);

// One row per neuron, row length d.
struct NeuronWeights {
  int layer = 0;
  Polarity polarity = Polarity::Read;
  Matrix rows;
};

struct NeuronHit {
  int layer = 0;
  std::size_t neuron_index = 0;
  Polarity polarity = Polarity::Read;
  double cosine = 0.0;
  double spearman_overall = std::numeric_limits<double>::quiet_NaN();
  // entity_type -> per-target-dimension Spearman
  std::map<std::string, std::vector<double>> spearman_by_type;
};

// Unit-normalized weight columns, one per target dimension.
std::vector<Vector> probe_directions(const ProbeModel& probe);

// Top-k neurons by |cosine| with `direction`, descending; ties broken by
// (layer, polarity, index). Zero rows have cosine 0.
std::vector<NeuronHit> scan(const std::vector<NeuronWeights>& weights, const Vector& direction, std::size_t top_k);

// A * w / |w|
Vector neuron_projection(const Matrix& A, const Vector& neuron_weight);

struct TypeSpearman {
  std::map<std::string, std::vector<double>> by_type;  // per target dimension
  std::vector<std::string> notes;                      // skipped types
};

TypeSpearman neuron_spearman_by_type(const Vector& scores, const EntityTable& entities);

// Fill the Spearman fields of each hit by projecting `A` (n x d, aligned
// with `entities`) onto the hit's weight vector. `dim` selects the target
// dimension used for spearman_overall.
void attach_spearman(std::vector<NeuronHit>& hits, const std::vector<NeuronWeights>& weights, const Matrix& A,
                     const EntityTable& entities, std::size_t dim);

std::string hits_to_csv(const std::vector<NeuronHit>& hits);
nlohmann::ordered_json hits_to_json(const std::vector<NeuronHit>& hits);

}  // namespace worldprobe
