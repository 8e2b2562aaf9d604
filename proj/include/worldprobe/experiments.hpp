#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "worldprobe/dataset.hpp"
#include "worldprobe/metrics.hpp"
#include "worldprobe/probes.hpp"
#include "worldprobe/toymodel.hpp"
#include "worldprobe/types.hpp"

namespace worldprobe {

enum class ProbeKind { Ridge, Mlp };

const char* to_string(ProbeKind k);
ProbeKind parse_probe_kind(const std::string& s);

struct ProbeArgs {
  ProbeKind kind = ProbeKind::Ridge;
  std::vector<double> lambda_grid = default_lambda_grid();
  RidgeOptions ridge;
  MlpConfig mlp;
  // When set, activations are projected onto the top pca_k training
  // components before fitting.
  std::optional<std::size_t> pca_k;
};

struct FittedProbe {
  ProbeKind kind = ProbeKind::Ridge;
  std::optional<PcaProjector> pca;
  std::optional<RidgeCvFit> ridge;
  std::optional<MlpProbe> mlp;

  Matrix predict(const Matrix& A) const;
  nlohmann::ordered_json describe() const;
  // Ridge probes only: the PCA projection folded into one linear map on the
  // raw activations.
  ProbeModel linear_probe() const;
};

FittedProbe fit_probe(const Matrix& A, const Matrix& Y, const ProbeArgs& args);

struct ProbeRun {
  FittedProbe probe;
  Matrix predictions;  // test rows, split order
  ProbeReport report;
};

// Fit on split.train_rows, predict split.test_rows and score them.
ProbeRun run_probe(const EntityTable& entities, const Matrix& A, const SplitAssignment& split, const ProbeArgs& args,
                   const ReportOptions& report_opts);

// Exact leave-one-out predictions for every row, lambda tuned by LOOCV over
// all rows. Requires singleton leakage groups.
ProbeRun run_probe_loo(const EntityTable& entities, const Matrix& A, const ProbeArgs& args,
                       const ReportOptions& report_opts);

enum class HoldoutMode { Block, Entity };

const char* to_string(HoldoutMode m);

struct HoldoutRow {
  std::string held_value;
  std::size_t n_held = 0;
  std::size_t n_nominal = 0;  // nominal test rows carrying held_value
  double nominal_pe = 0.0;    // NaN when n_nominal == 0
  double heldout_pe = 0.0;
};

struct HoldoutTable {
  HoldoutMode mode = HoldoutMode::Block;
  std::vector<HoldoutRow> rows;
  double nominal_pe_mean = 0.0;  // over every nominal test row
  double heldout_pe_mean = 0.0;  // over held values

  std::string to_csv() const;
  nlohmann::ordered_json to_json() const;
};

// Nominal: one random grouped split; PE of its test rows. Held out: for each
// label value, train without it and score its rows. In both cases the
// proximity pool is the fitted probe's predictions for every row of the
// table, so a held-out entity is compared against where the probe places
// everyone else.
HoldoutTable run_holdout(const EntityTable& entities, const Matrix& A, HoldoutMode mode, const ProbeArgs& args,
                         double test_fraction, std::uint64_t seed, DistanceKind distance);

struct PcaSweepRow {
  std::size_t k = 0;  // d for the full-dimension reference row
  bool full = false;
  double r2 = 0.0;
  double spearman = 0.0;
  double lambda = 0.0;
};

// Ridge probes on the top-k training principal components for each k
// (ascending, deduplicated), plus a reference row on the raw activations.
std::vector<PcaSweepRow> run_pca_sweep(const EntityTable& entities, const Matrix& A, const SplitAssignment& split,
                                       std::vector<std::size_t> ks, const ProbeArgs& args);

std::string pca_sweep_csv(const std::vector<PcaSweepRow>& rows);

// Smallest k whose value reaches `fraction` of the full-dimension value, or
// nullopt when no k does.
std::optional<std::size_t> first_k_reaching(const std::vector<PcaSweepRow>& rows, double fraction, bool use_spearman);

struct InterventionSweep {
  std::vector<double> values;
  std::vector<int> tracked;       // token ids
  Matrix mean_probs;              // values x tracked, averaged over prompts
  Vector baseline_probs;          // tracked, no intervention
  // Mean over prompts of the total-variation distance between the pins at
  // the smallest and largest value; `tracked` renormalizes over the tracked
  // tokens first.
  double tv_full = 0.0;
  double tv_tracked = 0.0;

  std::string to_csv() const;
  nlohmann::ordered_json summary() const;
};

// Next-token distribution at the last position of each prompt while one
// neuron is pinned to each value. Empty `tracked` selects the top_k tokens
// by mean baseline probability.
InterventionSweep sweep_neuron(const toy::ToyModel& model, const std::vector<toy::Sequence>& prompts, int layer,
                               int neuron, const std::vector<double>& values, toy::TokenScope scope,
                               std::vector<int> tracked, std::size_t top_k);

}  // namespace worldprobe
