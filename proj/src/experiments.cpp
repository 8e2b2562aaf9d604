#include "worldprobe/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "worldprobe/errors.hpp"

namespace worldprobe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Matrix rows_of(const Matrix& A, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), A.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = A.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

nlohmann::ordered_json num(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

double mean_over(const Vector& v, const std::vector<std::size_t>& rows) {
  if (rows.empty()) return kNaN;
  double s = 0.0;
  for (auto r : rows) s += v(static_cast<Eigen::Index>(r));
  return s / static_cast<double>(rows.size());
}

}  // namespace

const char* to_string(ProbeKind k) { return k == ProbeKind::Ridge ? "ridge" : "mlp"; }

ProbeKind parse_probe_kind(const std::string& s) {
  if (s == "ridge") return ProbeKind::Ridge;
  if (s == "mlp") return ProbeKind::Mlp;
  throw UsageError("unknown probe kind '" + s + "' (expected ridge or mlp)");
}

const char* to_string(HoldoutMode m) { return m == HoldoutMode::Block ? "block" : "entity"; }

Matrix FittedProbe::predict(const Matrix& A) const {
  const Matrix X = pca ? project(*pca, A) : A;
  if (kind == ProbeKind::Ridge) return worldprobe::predict(ridge->probe, X);
  return worldprobe::predict(*mlp, X);
}

nlohmann::ordered_json FittedProbe::describe() const {
  nlohmann::ordered_json j;
  j["kind"] = to_string(kind);
  j["pca_k"] = pca ? nlohmann::ordered_json(pca->k) : nlohmann::ordered_json(nullptr);
  if (ridge) {
    j["lambda"] = ridge->probe.lambda;
    j["standardized"] = ridge->probe.standardized;
  }
  if (mlp) {
    j["hidden_width"] = mlp->config.hidden_width;
    j["steps_taken"] = mlp->steps_taken;
    j["final_train_loss"] = mlp->final_train_loss;
    j["warnings"] = mlp->warnings;
  }
  return j;
}

ProbeModel FittedProbe::linear_probe() const {
  if (kind != ProbeKind::Ridge || !ridge) throw UsageError("only ridge probes have a linear form");
  ProbeModel p = ridge->probe;
  if (!pca) return p;
  // z = (x - m) C^T and yhat = (z - z_mean) W + t_mean.
  const Vector z_mean = p.feature_mean;
  p.weights = pca->components.transpose() * ridge->probe.weights;
  p.target_mean = ridge->probe.target_mean - ridge->probe.weights.transpose() * z_mean;
  p.feature_mean = pca->mean;
  p.intercept = p.target_mean - p.weights.transpose() * p.feature_mean;
  p.feature_scale = Vector::Ones(pca->mean.size());
  p.standardized = false;
  return p;
}

FittedProbe fit_probe(const Matrix& A, const Matrix& Y, const ProbeArgs& args) {
  FittedProbe f;
  f.kind = args.kind;
  Matrix X = A;
  if (args.pca_k) {
    f.pca = fit_pca(A, *args.pca_k);
    X = project(*f.pca, A);
  }
  if (args.kind == ProbeKind::Ridge) f.ridge = fit_ridge_cv(X, Y, args.lambda_grid, args.ridge);
  else f.mlp = fit_mlp(X, Y, args.mlp);
  return f;
}

ProbeRun run_probe(const EntityTable& entities, const Matrix& A, const SplitAssignment& split, const ProbeArgs& args,
                   const ReportOptions& report_opts) {
  if (static_cast<std::size_t>(A.rows()) != entities.size())
    throw DataError("activation rows (" + std::to_string(A.rows()) + ") do not match entity count (" +
                    std::to_string(entities.size()) + ")");
  if (split.train_rows.empty()) throw DataError("split has no training rows");
  if (split.test_rows.empty()) throw DataError("split has no test rows");
  ProbeRun run;
  run.probe = fit_probe(rows_of(A, split.train_rows), entities.targets(split.train_rows), args);
  run.predictions = run.probe.predict(rows_of(A, split.test_rows));
  run.report = make_report(entities, split, split.test_ids(entities), run.predictions, report_opts);
  run.report.probe_meta = run.probe.describe();
  return run;
}

ProbeRun run_probe_loo(const EntityTable& entities, const Matrix& A, const ProbeArgs& args,
                       const ReportOptions& report_opts) {
  if (args.kind != ProbeKind::Ridge) throw UsageError("leave-one-out evaluation supports ridge probes only");
  if (args.pca_k) throw UsageError("leave-one-out evaluation does not combine with a PCA projection");
  if (static_cast<std::size_t>(A.rows()) != entities.size())
    throw DataError("activation rows do not match entity count");
  std::unordered_set<std::string> groups;
  for (const auto& e : entities.rows)
    if (!groups.insert(e.group_id).second)
      throw UsageError("leave-one-out evaluation needs singleton groups; group '" + e.group_id + "' repeats");

  const Matrix Y = entities.targets();
  const RidgeSolver solver(A, Y, args.ridge);
  ProbeRun run;
  run.probe.kind = ProbeKind::Ridge;
  run.probe.ridge = fit_ridge_cv(A, Y, args.lambda_grid, args.ridge);
  run.predictions = Y - solver.loo_residuals(run.probe.ridge->curve.chosen_lambda());

  SplitAssignment all;
  for (std::size_t i = 0; i < entities.size(); ++i) all.test_rows.push_back(i);
  run.report = make_report(entities, all, all.test_ids(entities), run.predictions, report_opts);
  run.report.split = "leave-one-out";
  run.report.probe_meta = run.probe.describe();
  return run;
}

HoldoutTable run_holdout(const EntityTable& entities, const Matrix& A, HoldoutMode mode, const ProbeArgs& args,
                         double test_fraction, std::uint64_t seed, DistanceKind distance) {
  if (static_cast<std::size_t>(A.rows()) != entities.size())
    throw DataError("activation rows do not match entity count");
  const auto values = mode == HoldoutMode::Block ? block_values(entities) : entity_types(entities);
  for (const auto& v : values)
    if (v.empty()) throw DataError(std::string("holdout: empty ") + (mode == HoldoutMode::Block ? "block" : "entity_type") + " label");
  if (values.size() < 2)
    throw DataError(std::string("holdout: need at least two distinct ") +
                    (mode == HoldoutMode::Block ? "block values" : "entity types") + " (nothing to hold out against)");

  const Matrix Y = entities.targets();
  auto label = [&](std::size_t i) -> const std::string& {
    return mode == HoldoutMode::Block ? entities.rows[i].block : entities.rows[i].entity_type;
  };

  HoldoutTable table;
  table.mode = mode;
  const auto nominal = make_split(entities, test_fraction, seed);
  if (nominal.train_rows.empty() || nominal.test_rows.empty()) throw DataError("holdout: nominal split is degenerate");
  const auto nominal_fit = fit_probe(rows_of(A, nominal.train_rows), entities.targets(nominal.train_rows), args);
  const Vector nominal_pe = proximity_error(Y, nominal_fit.predict(A), distance).per_entity;
  table.nominal_pe_mean = mean_over(nominal_pe, nominal.test_rows);

  double held_sum = 0.0;
  for (const auto& v : values) {
    const auto split = mode == HoldoutMode::Block ? make_block_holdout(entities, v) : make_entity_holdout(entities, v);
    if (split.train_rows.empty()) throw DataError("holdout: holding out '" + v + "' leaves no training rows");
    const auto fit = fit_probe(rows_of(A, split.train_rows), entities.targets(split.train_rows), args);
    const Vector pe = proximity_error(Y, fit.predict(A), distance).per_entity;

    HoldoutRow row;
    row.held_value = v;
    row.n_held = split.test_rows.size();
    std::vector<std::size_t> nominal_rows;
    for (auto r : nominal.test_rows)
      if (label(r) == v) nominal_rows.push_back(r);
    row.n_nominal = nominal_rows.size();
    row.nominal_pe = mean_over(nominal_pe, nominal_rows);
    row.heldout_pe = mean_over(pe, split.test_rows);
    held_sum += row.heldout_pe;
    table.rows.push_back(row);
  }
  table.heldout_pe_mean = held_sum / static_cast<double>(values.size());
  return table;
}

std::string HoldoutTable::to_csv() const {
  std::ostringstream os;
  os << "mode,held_value,n_held,n_nominal,nominal_pe,heldout_pe\n";
  for (const auto& r : rows)
    os << to_string(mode) << ',' << r.held_value << ',' << r.n_held << ',' << r.n_nominal << ','
       << fmt_double(r.nominal_pe) << ',' << fmt_double(r.heldout_pe) << '\n';
  os << to_string(mode) << ",average,,," << fmt_double(nominal_pe_mean) << ',' << fmt_double(heldout_pe_mean) << '\n';
  return os.str();
}

nlohmann::ordered_json HoldoutTable::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = to_string(mode);
  j["nominal_pe_mean"] = num(nominal_pe_mean);
  j["heldout_pe_mean"] = num(heldout_pe_mean);
  auto& arr = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows)
    arr.push_back({{"held_value", r.held_value},
                   {"n_held", r.n_held},
                   {"n_nominal", r.n_nominal},
                   {"nominal_pe", num(r.nominal_pe)},
                   {"heldout_pe", num(r.heldout_pe)}});
  return j;
}

std::vector<PcaSweepRow> run_pca_sweep(const EntityTable& entities, const Matrix& A, const SplitAssignment& split,
                                       std::vector<std::size_t> ks, const ProbeArgs& args) {
  if (ks.empty()) throw UsageError("pca sweep: empty k list");
  const auto d = static_cast<std::size_t>(A.cols());
  for (auto k : ks)
    if (k < 1 || k > d) throw UsageError("pca sweep: k=" + std::to_string(k) + " outside [1, " + std::to_string(d) + "]");
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  if (args.kind != ProbeKind::Ridge) throw UsageError("pca sweep supports ridge probes only");

  const Matrix Atr = rows_of(A, split.train_rows), Ate = rows_of(A, split.test_rows);
  const Matrix Ytr = entities.targets(split.train_rows), Yte = entities.targets(split.test_rows);
  const auto pca_full = fit_pca(Atr, std::min(d, split.train_rows.size()));

  std::vector<PcaSweepRow> rows;
  auto score = [&](const Matrix& Xtr, const Matrix& Xte, std::size_t k, bool full) {
    const auto fit = fit_ridge_cv(Xtr, Ytr, args.lambda_grid, args.ridge);
    const Matrix P = predict(fit.probe, Xte);
    rows.push_back({k, full, r2(Yte, P), spearman(Yte, P, true), fit.probe.lambda});
  };
  for (auto k : ks) {
    PcaProjector proj;
    if (k <= pca_full.k) {
      proj.k = k;
      proj.mean = pca_full.mean;
      proj.components = pca_full.components.topRows(static_cast<Eigen::Index>(k));
      proj.explained_variance = pca_full.explained_variance.head(static_cast<Eigen::Index>(k));
    } else {
      proj = fit_pca(Atr, k);
    }
    score(project(proj, Atr), project(proj, Ate), k, false);
  }
  score(Atr, Ate, d, true);
  return rows;
}

std::string pca_sweep_csv(const std::vector<PcaSweepRow>& rows) {
  std::ostringstream os;
  os << "k,full,r2,spearman,lambda\n";
  for (const auto& r : rows)
    os << r.k << ',' << (r.full ? 1 : 0) << ',' << fmt_double(r.r2) << ',' << fmt_double(r.spearman) << ','
       << fmt_double(r.lambda) << '\n';
  return os.str();
}

std::optional<std::size_t> first_k_reaching(const std::vector<PcaSweepRow>& rows, double fraction, bool use_spearman) {
  const auto full = std::find_if(rows.begin(), rows.end(), [](const PcaSweepRow& r) { return r.full; });
  if (full == rows.end()) return std::nullopt;
  const double target = fraction * (use_spearman ? full->spearman : full->r2);
  for (const auto& r : rows) {
    if (r.full) continue;
    if ((use_spearman ? r.spearman : r.r2) >= target) return r.k;
  }
  return std::nullopt;
}

namespace {

Vector softmax_row(const Matrix& logits) {
  const Eigen::RowVectorXd row = logits.row(logits.rows() - 1);
  const Vector e = (row.array() - row.maxCoeff()).exp().transpose();
  return e / e.sum();
}

double total_variation(const Vector& p, const Vector& q) { return 0.5 * (p - q).cwiseAbs().sum(); }

Vector gather(const Vector& p, const std::vector<int>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = p(idx[i]);
  return out;
}

}  // namespace

InterventionSweep sweep_neuron(const toy::ToyModel& model, const std::vector<toy::Sequence>& prompts, int layer,
                               int neuron, const std::vector<double>& values, toy::TokenScope scope,
                               std::vector<int> tracked, std::size_t top_k) {
  if (prompts.empty()) throw UsageError("intervention sweep: no prompts");
  if (values.empty()) throw UsageError("intervention sweep: no pin values");
  const int V = model.config.vocab_size;
  for (int t : tracked)
    if (t < 0 || t >= V) throw UsageError("tracked token " + std::to_string(t) + " outside vocabulary [0, " + std::to_string(V) + ")");

  std::vector<Vector> base;
  Vector base_mean = Vector::Zero(V);
  for (const auto& p : prompts) {
    base.push_back(softmax_row(toy::forward(model, p)));
    base_mean += base.back() / static_cast<double>(prompts.size());
  }
  if (tracked.empty()) {
    std::vector<int> order(static_cast<std::size_t>(V));
    for (int i = 0; i < V; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return base_mean(a) > base_mean(b); });
    order.resize(std::min<std::size_t>(std::max<std::size_t>(top_k, 1), order.size()));
    tracked = order;
  }

  InterventionSweep out;
  out.values = values;
  out.tracked = tracked;
  out.baseline_probs = gather(base_mean, tracked);
  out.mean_probs = Matrix::Zero(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(tracked.size()));
  const auto lo = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
  const auto hi = static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
  std::vector<Vector> at_lo, at_hi;
  for (std::size_t v = 0; v < values.size(); ++v) {
    const toy::Intervention iv{layer, neuron, toy::InterventionMode::Pin, values[v], scope};
    for (const auto& p : prompts) {
      const Vector probs = softmax_row(toy::intervene(model, p, iv));
      out.mean_probs.row(static_cast<Eigen::Index>(v)) += gather(probs, tracked).transpose() / static_cast<double>(prompts.size());
      if (v == lo) at_lo.push_back(probs);
      if (v == hi) at_hi.push_back(probs);
    }
  }
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    out.tv_full += total_variation(at_lo[i], at_hi[i]) / static_cast<double>(prompts.size());
    const Vector a = gather(at_lo[i], tracked), b = gather(at_hi[i], tracked);
    out.tv_tracked += total_variation(a / a.sum(), b / b.sum()) / static_cast<double>(prompts.size());
  }
  return out;
}

std::string InterventionSweep::to_csv() const {
  std::ostringstream os;
  os << "pin_value,token,probability,baseline_probability\n";
  for (std::size_t v = 0; v < values.size(); ++v)
    for (std::size_t t = 0; t < tracked.size(); ++t)
      os << fmt_double(values[v]) << ',' << tracked[t] << ','
         << fmt_double(mean_probs(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(t))) << ','
         << fmt_double(baseline_probs(static_cast<Eigen::Index>(t))) << '\n';
  return os.str();
}

nlohmann::ordered_json InterventionSweep::summary() const {
  return {{"values", values}, {"tracked_tokens", tracked}, {"tv_full", tv_full}, {"tv_tracked", tv_tracked}};
}

}  // namespace worldprobe
