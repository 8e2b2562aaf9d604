#include "worldprobe/neuronscan.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "worldprobe/errors.hpp"
#include "worldprobe/metrics.hpp"

namespace worldprobe {

const char* to_string(Polarity p) { return p == Polarity::Read ? "read" : "write"; }

std::vector<Vector> probe_directions(const ProbeModel& probe) {
  if (!probe.weights.allFinite()) throw DataError("probe weights are not finite");
  std::vector<Vector> out;
  for (Eigen::Index j = 0; j < probe.weights.cols(); ++j) {
    const double norm = probe.weights.col(j).norm();
    if (!(norm > 0.0)) throw DataError("probe weight column " + std::to_string(j) + " is zero");
    out.push_back(probe.weights.col(j) / norm);
  }
  return out;
}

std::vector<NeuronHit> scan(const std::vector<NeuronWeights>& weights, const Vector& direction, std::size_t top_k) {
  const double dnorm = direction.norm();
  if (!(dnorm > 0.0)) throw DataError("scan direction is zero");
  std::vector<NeuronHit> all;
  for (const auto& w : weights) {
    if (w.rows.cols() != direction.size()) {
      throw DataError("layer " + std::to_string(w.layer) + " " + to_string(w.polarity) + " weights have width " +
                      std::to_string(w.rows.cols()) + ", direction has " + std::to_string(direction.size()));
    }
    const Vector dots = w.rows * direction;
    const Vector norms = w.rows.rowwise().norm();
    for (Eigen::Index i = 0; i < w.rows.rows(); ++i) {
      NeuronHit h;
      h.layer = w.layer;
      h.neuron_index = static_cast<std::size_t>(i);
      h.polarity = w.polarity;
      h.cosine = norms(i) > 0.0 ? std::clamp(dots(i) / (norms(i) * dnorm), -1.0, 1.0) : 0.0;
      all.push_back(std::move(h));
    }
  }
  auto better = [](const NeuronHit& a, const NeuronHit& b) {
    const double aa = std::abs(a.cosine), bb = std::abs(b.cosine);
    if (aa != bb) return aa > bb;
    if (a.layer != b.layer) return a.layer < b.layer;
    if (a.polarity != b.polarity) return a.polarity < b.polarity;
    return a.neuron_index < b.neuron_index;
  };
  const std::size_t k = std::min(top_k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

Vector neuron_projection(const Matrix& A, const Vector& neuron_weight) {
  if (A.cols() != neuron_weight.size()) throw DataError("neuron weight length does not match activation width");
  const double norm = neuron_weight.norm();
  if (!(norm > 0.0)) throw DataError("neuron weight vector is zero");
  return A * neuron_weight / norm;
}

TypeSpearman neuron_spearman_by_type(const Vector& scores, const EntityTable& entities) {
  if (static_cast<std::size_t>(scores.size()) != entities.size())
    throw DataError("scores and entity table have different lengths");
  TypeSpearman out;
  const Matrix Y = entities.targets();
  for (const auto& type : entity_types(entities)) {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < entities.size(); ++i)
      if (entities.rows[i].entity_type == type) idx.push_back(static_cast<Eigen::Index>(i));
    if (idx.size() < 3) {
      out.notes.push_back("type '" + type + "' skipped: only " + std::to_string(idx.size()) + " rows");
      continue;
    }
    std::vector<double> per_dim;
    for (Eigen::Index j = 0; j < Y.cols(); ++j) {
      Matrix y(static_cast<Eigen::Index>(idx.size()), 1), s(static_cast<Eigen::Index>(idx.size()), 1);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        y(static_cast<Eigen::Index>(i), 0) = Y(idx[i], j);
        s(static_cast<Eigen::Index>(i), 0) = scores(idx[i]);
      }
      per_dim.push_back(spearman_per_dim(y, s)[0]);
    }
    out.by_type[type] = std::move(per_dim);
  }
  return out;
}

void attach_spearman(std::vector<NeuronHit>& hits, const std::vector<NeuronWeights>& weights, const Matrix& A,
                     const EntityTable& entities, std::size_t dim) {
  if (dim >= entities.target_dim) throw DataError("target dimension out of range");
  const Matrix Y = entities.targets();
  for (auto& h : hits) {
    auto it = std::find_if(weights.begin(), weights.end(),
                           [&](const NeuronWeights& w) { return w.layer == h.layer && w.polarity == h.polarity; });
    if (it == weights.end()) throw DataError("hit refers to a layer that was not scanned");
    const Vector w = it->rows.row(static_cast<Eigen::Index>(h.neuron_index)).transpose();
    if (!(w.norm() > 0.0)) continue;
    const Vector scores = neuron_projection(A, w);
    h.spearman_overall = spearman_per_dim(Y.col(static_cast<Eigen::Index>(dim)), scores)[0];
    h.spearman_by_type = neuron_spearman_by_type(scores, entities).by_type;
  }
}

std::string hits_to_csv(const std::vector<NeuronHit>& hits) {
  std::ostringstream out;
  out << "rank,layer,index,polarity,cosine,spearman\n";
  for (std::size_t r = 0; r < hits.size(); ++r) {
    const auto& h = hits[r];
    out << r + 1 << ',' << h.layer << ',' << h.neuron_index << ',' << to_string(h.polarity) << ','
        << fmt_double(h.cosine) << ',' << fmt_double(h.spearman_overall) << '\n';
  }
  return out.str();
}

nlohmann::ordered_json hits_to_json(const std::vector<NeuronHit>& hits) {
  auto num = [](double v) -> nlohmann::ordered_json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  auto arr = nlohmann::ordered_json::array();
  for (const auto& h : hits) {
    nlohmann::ordered_json j;
    j["layer"] = h.layer;
    j["index"] = h.neuron_index;
    j["name"] = "L" + std::to_string(h.layer) + "." + std::to_string(h.neuron_index);
    j["polarity"] = to_string(h.polarity);
    j["cosine"] = h.cosine;
    j["spearman"] = num(h.spearman_overall);
    nlohmann::ordered_json by = nlohmann::ordered_json::object();
    for (const auto& [type, vals] : h.spearman_by_type) {
      auto v = nlohmann::ordered_json::array();
      for (double x : vals) v.push_back(num(x));
      by[type] = v;
    }
    j["spearman_by_type"] = by;
    arr.push_back(j);
  }
  return arr;
}

}  // namespace worldprobe
