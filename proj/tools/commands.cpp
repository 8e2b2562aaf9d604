#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "worldprobe/binio.hpp"
#include "worldprobe/dataset.hpp"
#include "worldprobe/errors.hpp"
#include "worldprobe/experiments.hpp"
#include "worldprobe/metrics.hpp"
#include "worldprobe/neuronscan.hpp"
#include "worldprobe/probes.hpp"
#include "worldprobe/rng.hpp"
#include "worldprobe/synth.hpp"
#include "worldprobe/toymodel.hpp"

namespace worldprobe::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Run bookkeeping

struct Run {
  std::string out_dir;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  void input(const std::string& path) { inputs.push_back(path); }

  void write(const std::string& name, std::string_view contents) {
    fs::create_directories(out_dir);
    binio::write_file((fs::path(out_dir) / name).string(), contents);
    outputs.push_back(name);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json describe_input(const std::string& path) {
  const std::string bytes = binio::read_file(path);
  return {{"path", path}, {"bytes", bytes.size()}, {"fnv1a64", hex64(fnv1a64(bytes))}};
}

// Every option of `app` with its resolved value: explicit values as given,
// defaults otherwise. Replaying these arguments reruns the command exactly.
void resolved_options(const CLI::App* app, std::vector<std::string>& argv, json& params) {
  for (const CLI::Option* opt : app->get_options()) {
    if (opt == app->get_help_ptr() || opt == app->get_help_all_ptr() || opt->get_lnames().empty()) continue;
    const std::string key = opt->get_lnames().front();
    const std::string name = "--" + key;
    const bool flag = opt->get_type_size_max() == 0;
    const bool multi = opt->get_items_expected_max() > 1;
    if (opt->count() > 0) {
      if (flag) {
        argv.push_back(name);
        params[key] = true;
      } else if (multi) {
        argv.push_back(name);
        for (const auto& r : opt->results()) argv.push_back(r);
        params[key] = opt->results();
      } else {
        argv.push_back(name + "=" + opt->results().back());
        params[key] = opt->results().back();
      }
    } else if (!flag && !multi && !opt->get_default_str().empty()) {
      argv.push_back(name + "=" + opt->get_default_str());
      params[key] = opt->get_default_str();
    }
  }
}

void write_manifest(const CLI::App& root, Run& run) {
  std::vector<std::string> argv;
  std::vector<std::string> command;
  json params = json::object();
  const CLI::App* app = &root;
  while (true) {
    const auto subs = app->get_subcommands();
    if (subs.empty()) break;
    app = subs.front();
    argv.push_back(app->get_name());
    command.push_back(app->get_name());
    resolved_options(app, argv, params);
  }
  json m;
  m["tool"] = "worldprobe";
  m["version"] = kToolkitVersion;
  std::string joined;
  for (const auto& c : command) joined += (joined.empty() ? "" : " ") + c;
  m["command"] = joined;
  m["argv"] = argv;
  m["params"] = params;
  auto& ins = m["inputs"] = json::array();
  for (const auto& p : run.inputs) ins.push_back(describe_input(p));
  m["outputs"] = run.outputs;
  fs::create_directories(run.out_dir);
  binio::write_file((fs::path(run.out_dir) / "manifest.json").string(), m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Argument parsing helpers

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : cur.substr(b, e - b + 1));
  }
  return out;
}

double parse_double(const std::string& s, const std::string& flag) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw UsageError(flag + ": '" + s + "' is not a number");
  return v;
}

long long parse_int(const std::string& s, const std::string& flag) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw UsageError(flag + ": '" + s + "' is not an integer");
  return v;
}

std::vector<double> parse_doubles(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  for (const auto& part : split_commas(s)) out.push_back(parse_double(part, flag));
  if (out.empty()) throw UsageError(flag + ": empty list");
  return out;
}

std::vector<long long> parse_ints(const std::string& s, const std::string& flag) {
  std::vector<long long> out;
  for (const auto& part : split_commas(s)) out.push_back(parse_int(part, flag));
  if (out.empty()) throw UsageError(flag + ": empty list");
  return out;
}

std::vector<double> parse_lambda_grid(const std::string& s) {
  if (s == "default") return default_lambda_grid();
  auto grid = parse_doubles(s, "--lambda-grid");
  for (double l : grid)
    if (!(l >= 0.0) || !std::isfinite(l)) throw UsageError("--lambda-grid: values must be finite and non-negative");
  return grid;
}

std::vector<toy::Sequence> read_prompts(const std::string& path) {
  std::istringstream in(binio::read_file(path));
  std::vector<toy::Sequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    toy::Sequence seq;
    std::string tok;
    while (ls >> tok) {
      long long v = 0;
      const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size() || v < 0 || v > 0x7fffffff)
        throw DataError(path + ":" + std::to_string(lineno) + ": bad token '" + tok + "'");
      seq.push_back(static_cast<int>(v));
    }
    if (!seq.empty()) out.push_back(std::move(seq));
  }
  if (out.empty()) throw DataError(path + ": no prompts");
  return out;
}

std::string prompts_text(const std::vector<toy::Sequence>& prompts) {
  std::string out;
  for (const auto& p : prompts) {
    for (std::size_t i = 0; i < p.size(); ++i) out += (i ? " " : "") + std::to_string(p[i]);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared probe options

struct ProbeFlags {
  std::string entities;
  std::string activations;
  std::vector<std::string> activation_files;
  std::string split = "random";
  std::string held;
  double test_fraction = kDefaultTestFraction;
  std::uint64_t seed = 0;
  std::string lambda_grid = "default";
  std::string probe = "ridge";
  bool standardize = false;
  std::size_t mlp_hidden = 256;
  std::size_t mlp_epochs = 50;
  std::size_t mlp_steps = 0;
  double mlp_lr = 1e-3;
  std::size_t mlp_batch = 256;
  std::size_t pca_k = 0;
  std::string distance = "auto";
  std::string pool = "predictions";
  std::int64_t min_views = 0;
  std::string out_dir;
};

enum ProbeFlagSet : unsigned {
  kSingleActivations = 1,
  kMultiActivations = 2,
  kSplit = 4,
  kPcaK = 8,
};

void add_probe_flags(CLI::App* sub, ProbeFlags& f, unsigned set) {
  sub->add_option("--entities", f.entities, "Entity metadata (JSONL)")->required()->check(CLI::ExistingFile);
  if (set & kSingleActivations)
    sub->add_option("--activations", f.activations, "Activation matrix (ACTV)")->required()->check(CLI::ExistingFile);
  if (set & kMultiActivations)
    sub->add_option("--activations", f.activation_files, "Activation matrices, one per layer")
        ->required()
        ->check(CLI::ExistingFile);
  if (set & kSplit) {
    sub->add_option("--split", f.split, "random | block | entity | loo")
        ->check(CLI::IsMember({"random", "block", "entity", "loo"}));
    sub->add_option("--held", f.held, "Held-out block value or entity type (block/entity splits)");
  }
  sub->add_option("--test-fraction", f.test_fraction, "Test share of groups for random splits");
  sub->add_option("--seed", f.seed, "Split and MLP seed");
  sub->add_option("--lambda-grid", f.lambda_grid, "Comma-separated ridge penalties, or 'default'");
  sub->add_option("--probe", f.probe, "ridge | mlp")->check(CLI::IsMember({"ridge", "mlp"}));
  sub->add_flag("--standardize", f.standardize, "Scale features to unit variance before ridge");
  sub->add_option("--mlp-hidden", f.mlp_hidden, "MLP hidden width");
  sub->add_option("--mlp-epochs", f.mlp_epochs, "MLP epochs");
  sub->add_option("--mlp-steps", f.mlp_steps, "MLP steps (overrides epochs when nonzero)");
  sub->add_option("--mlp-lr", f.mlp_lr, "MLP learning rate");
  sub->add_option("--mlp-batch", f.mlp_batch, "MLP batch size");
  if (set & kPcaK) sub->add_option("--pca-k", f.pca_k, "Project onto the top k principal components (0: off)");
  sub->add_option("--distance", f.distance, "auto | haversine | euclidean | absolute");
  sub->add_option("--pool", f.pool, "Proximity pool: predictions | true")
      ->check(CLI::IsMember({"predictions", "true"}));
  sub->add_option("--min-views", f.min_views, "Drop entities whose pageviews fall below this");
  sub->add_option("--out-dir", f.out_dir, "Output directory")->required();
}

ProbeArgs probe_args(const ProbeFlags& f) {
  ProbeArgs a;
  a.kind = parse_probe_kind(f.probe);
  a.lambda_grid = parse_lambda_grid(f.lambda_grid);
  a.ridge.standardize = f.standardize;
  a.mlp.hidden_width = f.mlp_hidden;
  a.mlp.epochs = f.mlp_epochs;
  a.mlp.steps = f.mlp_steps;
  a.mlp.learning_rate = f.mlp_lr;
  a.mlp.batch_size = f.mlp_batch;
  a.mlp.seed = f.seed;
  if (f.pca_k > 0) a.pca_k = f.pca_k;
  if (a.kind == ProbeKind::Mlp && f.standardize) throw UsageError("--standardize applies to ridge probes only");
  return a;
}

ReportOptions report_options(const ProbeFlags& f, std::size_t target_dim) {
  ReportOptions r;
  r.distance = f.distance == "auto" ? default_distance_kind(target_dim) : parse_distance_kind(f.distance);
  r.pool = f.pool == "true" ? ProximityPool::TruePositions : ProximityPool::Predictions;
  return r;
}

struct Loaded {
  EntityTable entities;
  ActivationMatrix acts;
  Matrix A;
};

// Rows are filtered by pageviews on both sides so the positional pairing holds.
std::vector<std::size_t> kept_rows(const EntityTable& full, std::int64_t min_views) {
  const EntityTable kept = filter_entities(full, min_views);
  std::unordered_set<std::string> ids;
  for (const auto& e : kept.rows) ids.insert(e.id);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < full.size(); ++i)
    if (ids.count(full.rows[i].id)) rows.push_back(i);
  if (rows.empty()) throw DataError("--min-views " + std::to_string(min_views) + " removes every entity");
  return rows;
}

Loaded load_pair(const std::string& entities_path, const std::string& acts_path, std::int64_t min_views, Run& run) {
  Loaded l;
  const EntityTable full = load_entities(entities_path);
  run.input(entities_path);
  l.acts = load_activations(acts_path);
  run.input(acts_path);
  check_alignment(full, l.acts);
  const auto rows = kept_rows(full, min_views);
  l.entities = select_rows(full, rows);
  l.A = l.acts.as_double(rows);
  return l;
}

SplitAssignment split_for(const ProbeFlags& f, const EntityTable& t) {
  if (f.split != "random" && f.split != "loo" && f.held.empty()) throw UsageError("--split " + f.split + " needs --held");
  if ((f.split == "random" || f.split == "loo") && !f.held.empty())
    throw UsageError("--held only applies to block and entity splits");
  if (f.split == "block") return make_block_holdout(t, f.held);
  if (f.split == "entity") return make_entity_holdout(t, f.held);
  if (!(f.test_fraction > 0.0 && f.test_fraction < 1.0)) throw UsageError("--test-fraction must lie in (0, 1)");
  return make_split(t, f.test_fraction, f.seed);
}

ProbeRun probe_once(const ProbeFlags& f, const Loaded& l, const ProbeArgs& args, const ReportOptions& ro) {
  if (f.split == "loo") return run_probe_loo(l.entities, l.A, args, ro);
  return run_probe(l.entities, l.A, split_for(f, l.entities), args, ro);
}

std::vector<std::size_t> rows_for_ids(const EntityTable& t, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < t.size(); ++i) row_of.emplace(t.rows[i].id, i);
  std::vector<std::size_t> rows;
  for (const auto& id : ids) {
    const auto it = row_of.find(id);
    if (it == row_of.end()) throw DataError("unknown entity id '" + id + "'");
    rows.push_back(it->second);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_probe(const ProbeFlags& f, Run& run) {
  const Loaded l = load_pair(f.entities, f.activations, f.min_views, run);
  const auto args = probe_args(f);
  const auto ro = report_options(f, l.entities.target_dim);
  ProbeRun pr = probe_once(f, l, args, ro);
  pr.report.probe_meta["model_id"] = l.acts.model_id;
  pr.report.probe_meta["layer"] = l.acts.layer;
  pr.report.probe_meta["prompt_id"] = l.acts.prompt_id;

  run.write_json("report.json", pr.report.to_json());
  run.write("report.csv", pr.report.to_csv());
  const Matrix Y = l.entities.targets(rows_for_ids(l.entities, pr.report.ids));
  run.write("predictions.csv", predictions_csv(pr.report.ids, Y, pr.predictions));
  if (args.kind == ProbeKind::Ridge) {
    ProbeModel p = pr.probe.linear_probe();
    p.meta = {l.acts.model_id, l.acts.layer, l.acts.prompt_id, pr.report.split};
    run.write("probe.prbe", encode_probe(p));
    run.write("lambda_curve.csv", pr.probe.ridge->curve.to_csv());
  }
  std::cout << "r2=" << fmt_double(pr.report.r2) << " spearman=" << fmt_double(pr.report.spearman)
            << " proximity_error=" << fmt_double(pr.report.proximity_error_mean) << "\n";
}

void cmd_sweep(const ProbeFlags& f, Run& run) {
  const EntityTable full = load_entities(f.entities);
  run.input(f.entities);
  const auto rows = kept_rows(full, f.min_views);
  const EntityTable entities = select_rows(full, rows);
  const auto args = probe_args(f);
  const auto ro = report_options(f, entities.target_dim);

  struct LayerResult {
    int layer;
    ProbeReport report;
  };
  std::vector<LayerResult> results;
  std::set<int> layers;
  std::string model_id;
  for (const auto& path : f.activation_files) {
    const ActivationMatrix acts = load_activations(path);
    run.input(path);
    check_alignment(full, acts);
    if (results.empty()) model_id = acts.model_id;
    else if (acts.model_id != model_id)
      throw DataError(path + ": model_id '" + acts.model_id + "' differs from '" + model_id + "'");
    if (!layers.insert(acts.layer).second)
      throw DataError(path + ": layer " + std::to_string(acts.layer) + " appears more than once");
    Loaded l{entities, acts, acts.as_double(rows)};
    results.push_back({acts.layer, probe_once(f, l, args, ro).report});
  }
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.layer < b.layer; });

  std::ostringstream csv;
  csv << "model_id,layer,split,metric,value\n";
  json j = json::array();
  for (const auto& r : results) {
    const std::pair<const char*, double> metrics[] = {
        {"r2", r.report.r2}, {"spearman", r.report.spearman}, {"proximity_error", r.report.proximity_error_mean}};
    for (const auto& [name, v] : metrics)
      csv << model_id << ',' << r.layer << ',' << r.report.split << ',' << name << ',' << fmt_double(v) << '\n';
    if (r.report.probe_meta.contains("lambda"))
      csv << model_id << ',' << r.layer << ',' << r.report.split << ",lambda,"
          << fmt_double(r.report.probe_meta["lambda"].get<double>()) << '\n';
    json row = r.report.to_json();
    row["layer"] = r.layer;
    j.push_back(row);
    std::cout << "layer " << r.layer << ": r2=" << fmt_double(r.report.r2) << "\n";
  }
  run.write("sweep.csv", csv.str());
  run.write_json("sweep.json", j);
}

void cmd_holdout(const ProbeFlags& f, const std::string& mode, Run& run) {
  const Loaded l = load_pair(f.entities, f.activations, f.min_views, run);
  const auto args = probe_args(f);
  const auto ro = report_options(f, l.entities.target_dim);
  if (!(f.test_fraction > 0.0 && f.test_fraction < 1.0)) throw UsageError("--test-fraction must lie in (0, 1)");
  const auto table = run_holdout(l.entities, l.A, mode == "block" ? HoldoutMode::Block : HoldoutMode::Entity, args,
                                 f.test_fraction, f.seed, ro.distance);
  run.write("holdout.csv", table.to_csv());
  run.write_json("holdout.json", table.to_json());
  std::cout << "nominal_pe=" << fmt_double(table.nominal_pe_mean) << " heldout_pe=" << fmt_double(table.heldout_pe_mean)
            << "\n";
}

void cmd_pca_sweep(const ProbeFlags& f, const std::string& ks_text, Run& run) {
  const Loaded l = load_pair(f.entities, f.activations, f.min_views, run);
  const auto args = probe_args(f);
  if (f.split == "loo") throw UsageError("pca-sweep needs a train/test split, not loo");
  std::vector<std::size_t> ks;
  for (long long k : parse_ints(ks_text, "--k")) {
    if (k < 1) throw UsageError("--k: values must be positive");
    ks.push_back(static_cast<std::size_t>(k));
  }
  const auto rows = run_pca_sweep(l.entities, l.A, split_for(f, l.entities), ks, args);
  run.write("pca_sweep.csv", pca_sweep_csv(rows));
  json j;
  const auto ks_sp = first_k_reaching(rows, 0.9, true), ks_r2 = first_k_reaching(rows, 0.9, false);
  j["k_reaching_0.9_spearman"] = ks_sp ? json(*ks_sp) : json(nullptr);
  j["k_reaching_0.9_r2"] = ks_r2 ? json(*ks_r2) : json(nullptr);
  run.write_json("pca_sweep.json", j);
  std::cout << pca_sweep_csv(rows);
}

struct ScanFlags {
  std::string model, probe, activations, entities, out_dir;
  std::size_t top_k = 10;
  int dim = -1;
};

void cmd_scan(const ScanFlags& f, Run& run) {
  const toy::ToyModel model = toy::load_model(f.model);
  run.input(f.model);
  const ProbeModel probe = load_probe(f.probe);
  run.input(f.probe);
  if (probe.input_dim() != static_cast<std::size_t>(model.config.d_model))
    throw DataError("probe expects " + std::to_string(probe.input_dim()) + " features but the model has d_model " +
                    std::to_string(model.config.d_model));
  if (f.activations.empty() != f.entities.empty())
    throw UsageError("--activations and --entities go together");
  const auto weights = toy::neuron_weights(model);
  const auto dirs = probe_directions(probe);

  std::optional<Loaded> data;
  if (!f.activations.empty()) {
    data = load_pair(f.entities, f.activations, 0, run);
    if (data->A.cols() != model.config.d_model) throw DataError("activation width does not match the model");
  }
  std::vector<std::size_t> dims;
  if (f.dim < 0)
    for (std::size_t d = 0; d < dirs.size(); ++d) dims.push_back(d);
  else if (static_cast<std::size_t>(f.dim) < dirs.size())
    dims.push_back(static_cast<std::size_t>(f.dim));
  else
    throw UsageError("--dim " + std::to_string(f.dim) + " outside the probe's " + std::to_string(dirs.size()) +
                     " target dimensions");

  json j = json::object();
  for (auto d : dims) {
    auto hits = scan(weights, dirs[d], f.top_k);
    if (data) attach_spearman(hits, weights, data->A, data->entities, d);
    run.write("hits_dim" + std::to_string(d) + ".csv", hits_to_csv(hits));
    j["dim" + std::to_string(d)] = hits_to_json(hits);
    if (!hits.empty())
      std::cout << "dim " << d << ": top L" << hits[0].layer << "." << hits[0].neuron_index << " "
                << to_string(hits[0].polarity) << " cosine=" << fmt_double(hits[0].cosine) << "\n";
  }
  run.write_json("hits.json", j);
}

struct InterveneFlags {
  std::string model, prompts, mode = "pin", pin_values, scope = "all", track_tokens, out_dir;
  int layer = 0, neuron = 0;
  std::size_t top_k = 5;
};

void check_neuron(const toy::ToyModel& model, int layer, int neuron) {
  if (layer < 0 || layer >= model.config.n_layers)
    throw UsageError("--layer " + std::to_string(layer) + " outside [0, " + std::to_string(model.config.n_layers) + ")");
  if (neuron < 0 || neuron >= model.config.mlp_width)
    throw UsageError("--neuron " + std::to_string(neuron) + " outside [0, " + std::to_string(model.config.mlp_width) +
                     ")");
}

void cmd_intervene(const InterveneFlags& f, Run& run) {
  if (f.mode == "zero" && !f.pin_values.empty()) throw UsageError("--pin-values does not apply to --mode zero");
  const toy::ToyModel model = toy::load_model(f.model);
  check_neuron(model, f.layer, f.neuron);
  run.input(f.model);
  const auto prompts = read_prompts(f.prompts);
  run.input(f.prompts);
  for (const auto& p : prompts) toy::validate_sequence(model, p);
  std::vector<double> values{0.0};
  if (f.mode == "pin") values = parse_doubles(f.pin_values.empty() ? "-3,-2,-1,0,1,2,3" : f.pin_values, "--pin-values");
  std::vector<int> tracked;
  if (!f.track_tokens.empty())
    for (long long t : parse_ints(f.track_tokens, "--track-tokens")) tracked.push_back(static_cast<int>(t));
  const auto sweep = sweep_neuron(model, prompts, f.layer, f.neuron, values,
                                  f.scope == "last" ? toy::TokenScope::Last : toy::TokenScope::All, tracked, f.top_k);
  run.write("intervention.csv", sweep.to_csv());
  json s = sweep.summary();
  s["layer"] = f.layer;
  s["neuron"] = f.neuron;
  s["mode"] = f.mode;
  s["scope"] = f.scope;
  run.write_json("intervention.json", s);
  std::cout << "tv_full=" << fmt_double(sweep.tv_full) << " tv_tracked=" << fmt_double(sweep.tv_tracked) << "\n";
}

struct AblateFlags {
  std::string model, corpus, prompts, out_dir;
  int layer = 0, neuron = 0;
  std::size_t top_k = 10;
};

void cmd_ablate(const AblateFlags& f, Run& run) {
  if (f.corpus.empty() == f.prompts.empty()) throw UsageError("give exactly one of --corpus and --prompts");
  const toy::ToyModel model = toy::load_model(f.model);
  check_neuron(model, f.layer, f.neuron);
  run.input(f.model);
  std::vector<toy::Sequence> seqs;
  if (!f.corpus.empty()) {
    seqs = toy::load_corpus(f.corpus);
    run.input(f.corpus);
  } else {
    seqs = read_prompts(f.prompts);
    run.input(f.prompts);
  }
  const auto entries = toy::ablation_loss_scan(model, seqs, f.layer, f.neuron, f.top_k);
  std::ostringstream csv;
  csv << "rank,sequence,position,context,true_token,base_loss,ablated_loss,loss_increase\n";
  for (std::size_t r = 0; r < entries.size(); ++r) {
    const auto& e = entries[r];
    std::string ctx;
    for (std::size_t i = 0; i < e.context.size(); ++i) ctx += (i ? " " : "") + std::to_string(e.context[i]);
    csv << r + 1 << ',' << e.sequence << ',' << e.position << ',' << ctx << ',' << e.true_token << ','
        << fmt_double(e.base_loss) << ',' << fmt_double(e.ablated_loss) << ',' << fmt_double(e.loss_increase) << '\n';
  }
  run.write("ablation.csv", csv.str());
  if (!entries.empty()) std::cout << "max loss increase=" << fmt_double(entries.front().loss_increase) << "\n";
}

struct ExportFlags {
  std::string predictions, entities, out_dir;
  bool csv_only = false;
};

void cmd_export_map(const ExportFlags& f, Run& run) {
  const PredictionDump dump = parse_predictions_csv(binio::read_file(f.predictions), f.predictions);
  run.input(f.predictions);
  const EntityTable entities = load_entities(f.entities);
  run.input(f.entities);
  const auto rows = rows_for_ids(entities, dump.ids);
  const auto t = static_cast<std::size_t>(dump.y.cols());
  if (t != entities.target_dim) throw DataError("prediction dump and entities disagree on target dimension");
  if (t != 2 && !f.csv_only)
    throw DataError("export-map needs 2-D (lat, lon) targets; for time targets rerun with --csv-only to get a scatter CSV");
  const auto pe = proximity_error(dump.y, dump.yhat, default_distance_kind(t)).per_entity;

  std::ostringstream csv;
  if (t == 2) csv << "id,name,entity_type,true_lat,true_lon,pred_lat,pred_lon,proximity_error\n";
  else csv << "id,name,entity_type,true,pred,proximity_error\n";
  json fc;
  fc["type"] = "FeatureCollection";
  auto& features = fc["features"] = json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& e = entities.rows[rows[i]];
    const auto r = static_cast<Eigen::Index>(i);
    csv << e.id << ',' << e.name << ',' << e.entity_type;
    for (Eigen::Index c = 0; c < dump.y.cols(); ++c) csv << ',' << fmt_double(dump.y(r, c));
    for (Eigen::Index c = 0; c < dump.yhat.cols(); ++c) csv << ',' << fmt_double(dump.yhat(r, c));
    csv << ',' << fmt_double(pe(r)) << '\n';
    if (t != 2) continue;
    json feat;
    feat["type"] = "Feature";
    feat["geometry"] = {{"type", "Point"}, {"coordinates", {dump.yhat(r, 1), dump.yhat(r, 0)}}};
    feat["properties"] = {{"id", e.id},
                          {"name", e.name},
                          {"entity_type", e.entity_type},
                          {"true_lat", dump.y(r, 0)},
                          {"true_lon", dump.y(r, 1)},
                          {"proximity_error", pe(r)}};
    features.push_back(feat);
  }
  run.write("map.csv", csv.str());
  if (t == 2) run.write_json("map.geojson", fc);
  std::cout << rows.size() << " entities exported\n";
}

struct SynthFlags {
  std::size_t n = 1000, d = 64, target_dim = 2, distractors = 0, blocks = 4, types = 3;
  std::string snr = "inf";
  double distractor_scale = 1.0;
  std::uint64_t seed = 0;
  std::string out_dir;
};

synth::SynthSpec synth_spec(const SynthFlags& f) {
  synth::SynthSpec s;
  s.n = f.n;
  s.d = f.d;
  s.target_dim = f.target_dim;
  s.snr = parse_double(f.snr, "--snr");
  s.n_distractors = f.distractors;
  s.distractor_scale = f.distractor_scale;
  s.n_blocks = f.blocks;
  s.n_entity_types = f.types;
  s.seed = f.seed;
  return s;
}

void cmd_synth_linear(const SynthFlags& f, Run& run) {
  const auto spec = synth_spec(f);
  const auto ds = synth::gen_linear(spec);
  run.write("entities.jsonl", entities_to_jsonl(ds.entities));
  run.write("activations.actv", encode_activations(ds.activations));
  json gt = ds.ground_truth();
  gt["spec"] = spec.to_json();
  run.write_json("ground_truth.json", gt);
  std::cout << ds.entities.size() << " entities, d=" << ds.activations.d() << "\n";
}

void cmd_synth_block(const SynthFlags& f, Run& run) {
  const auto spec = synth_spec(f);
  const auto ds = synth::gen_block_centroid(spec);
  run.write("entities.jsonl", entities_to_jsonl(ds.entities));
  run.write("activations.actv", encode_activations(ds.activations));
  run.write_json("spec.json", spec.to_json());
  std::cout << ds.entities.size() << " entities in " << spec.n_blocks << " blocks\n";
}

void cmd_synth_geo(const synth::GeoCorpusConfig& cfg, Run& run) {
  const auto g = synth::gen_geo_corpus(cfg);
  run.write("corpus.bin", toy::encode_corpus(g.corpus));
  run.write("entities.jsonl", entities_to_jsonl(g.entities));
  run.write("probe_prompts.txt", prompts_text(g.probe_prompts()));
  run.write("answer_prompts.txt", prompts_text(g.answer_prompts()));
  json v;
  v["vocab_size"] = g.vocab.size();
  v["n_entities"] = g.vocab.n_entities;
  v["loc"] = g.vocab.loc();
  v["x_tokens"] = json::array();
  v["y_tokens"] = json::array();
  for (int i = 0; i < g.vocab.grid; ++i) {
    v["x_tokens"].push_back(g.vocab.x_token(i));
    v["y_tokens"].push_back(g.vocab.y_token(i));
  }
  v["config"] = cfg.to_json();
  run.write_json("vocab.json", v);
  std::cout << g.corpus.size() << " sequences, vocab " << g.vocab.size() << "\n";
}

struct TrainFlags {
  std::string corpus, out_dir;
  toy::ToyModelConfig model;
  toy::TrainConfig train;
  std::uint64_t seed = 0;
};

void cmd_toy_train(TrainFlags f, Run& run) {
  const auto corpus = toy::load_corpus(f.corpus);
  run.input(f.corpus);
  f.train.seed = f.seed;
  toy::ToyModel model = toy::init_model(f.model, f.seed);
  const auto curve = toy::train(model, corpus, f.train);
  std::ostringstream csv;
  csv << "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) csv << i << ',' << fmt_double(curve[i]) << '\n';
  run.write("model.toym", toy::encode_model(model));
  run.write("loss.csv", csv.str());
  if (!curve.empty()) std::cout << "final loss=" << fmt_double(curve.back()) << "\n";
}

struct ExtractFlags {
  std::string model, prompts, layers = "all", prompt_id = "empty", model_id = "toy", out_dir;
  int token_index = -1;
};

void cmd_toy_extract(const ExtractFlags& f, Run& run) {
  const toy::ToyModel model = toy::load_model(f.model);
  run.input(f.model);
  const auto prompts = read_prompts(f.prompts);
  run.input(f.prompts);
  std::vector<int> layers;
  if (f.layers == "all")
    for (int l = 0; l < model.config.n_layers; ++l) layers.push_back(l);
  else
    for (long long l : parse_ints(f.layers, "--layers")) layers.push_back(static_cast<int>(l));
  for (int l : layers) {
    if (l < 0 || l >= model.config.n_layers)
      throw UsageError("--layers: layer " + std::to_string(l) + " outside [0, " + std::to_string(model.config.n_layers) + ")");
    const auto acts = toy::extract_activations(model, prompts, l, f.token_index, f.prompt_id, f.model_id);
    run.write("layer_" + std::to_string(l) + ".actv", encode_activations(acts));
  }
  std::cout << layers.size() << " layers x " << prompts.size() << " prompts\n";
}

// ---------------------------------------------------------------------------

int replay(const std::string& manifest_path, const std::string& out_dir, bool verify) {
  json m;
  try {
    m = json::parse(binio::read_file(manifest_path));
  } catch (const json::exception& e) {
    throw DataError(manifest_path + ": " + e.what());
  }
  if (!m.contains("argv") || !m["argv"].is_array()) throw DataError(manifest_path + ": missing argv");
  auto argv = m["argv"].get<std::vector<std::string>>();
  if (verify && m.contains("inputs")) {
    for (const auto& in : m["inputs"]) {
      const auto path = in.at("path").get<std::string>();
      if (describe_input(path)["fnv1a64"] != in.at("fnv1a64"))
        throw DataError(path + ": contents changed since the manifest was written");
    }
  }
  if (!out_dir.empty()) {
    for (auto& a : argv)
      if (a.rfind("--out-dir=", 0) == 0) a = "--out-dir=" + out_dir;
  }
  if (!argv.empty() && argv.front() == "replay") throw UsageError("a manifest cannot replay another replay");
  return run_cli(argv);
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Linear probes for space and time in model activations", "worldprobe"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolkitVersion);

  std::function<void(Run&)> action;
  std::function<int()> direct;
  Run run;

  auto pf = std::make_shared<ProbeFlags>();

  auto* probe = app.add_subcommand("probe", "Fit one probe and report its test metrics");
  add_probe_flags(probe, *pf, kSingleActivations | kSplit | kPcaK);
  probe->callback([&, pf] { action = [pf](Run& r) { cmd_probe(*pf, r); }; run.out_dir = pf->out_dir; });

  auto* sweep = app.add_subcommand("sweep", "Probe every layer file and emit a long-format table");
  add_probe_flags(sweep, *pf, kMultiActivations | kSplit | kPcaK);
  sweep->callback([&, pf] { action = [pf](Run& r) { cmd_sweep(*pf, r); }; run.out_dir = pf->out_dir; });

  auto holdout_mode = std::make_shared<std::string>("block");
  auto* holdout = app.add_subcommand("holdout", "Nominal versus held-out proximity error per block or entity type");
  add_probe_flags(holdout, *pf, kSingleActivations | kPcaK);
  holdout->add_option("--mode", *holdout_mode, "block | entity")->check(CLI::IsMember({"block", "entity"}));
  holdout->callback([&, pf, holdout_mode] {
    action = [pf, holdout_mode](Run& r) { cmd_holdout(*pf, *holdout_mode, r); };
    run.out_dir = pf->out_dir;
  });

  auto ks = std::make_shared<std::string>();
  auto* pca = app.add_subcommand("pca-sweep", "Ridge probes on the top-k principal components");
  add_probe_flags(pca, *pf, kSingleActivations | kSplit);
  pca->add_option("--k", *ks, "Comma-separated component counts")->required();
  pca->callback([&, pf, ks] { action = [pf, ks](Run& r) { cmd_pca_sweep(*pf, *ks, r); }; run.out_dir = pf->out_dir; });

  auto sf = std::make_shared<ScanFlags>();
  auto* scan_cmd = app.add_subcommand("scan-neurons", "Rank MLP neurons by cosine with the probe direction");
  scan_cmd->add_option("--model", sf->model, "Toy model checkpoint (TOYM)")->required()->check(CLI::ExistingFile);
  scan_cmd->add_option("--probe", sf->probe, "Probe file (PRBE)")->required()->check(CLI::ExistingFile);
  scan_cmd->add_option("--top-k", sf->top_k, "Hits per target dimension");
  scan_cmd->add_option("--dim", sf->dim, "Target dimension, or -1 for all");
  scan_cmd->add_option("--activations", sf->activations, "Activations for per-type Spearman")->check(CLI::ExistingFile);
  scan_cmd->add_option("--entities", sf->entities, "Entities paired with --activations")->check(CLI::ExistingFile);
  scan_cmd->add_option("--out-dir", sf->out_dir, "Output directory")->required();
  scan_cmd->callback([&, sf] { action = [sf](Run& r) { cmd_scan(*sf, r); }; run.out_dir = sf->out_dir; });

  auto inf = std::make_shared<InterveneFlags>();
  auto* inter = app.add_subcommand("intervene", "Pin one neuron over a sweep of values");
  inter->add_option("--model", inf->model, "Toy model checkpoint (TOYM)")->required()->check(CLI::ExistingFile);
  inter->add_option("--prompts", inf->prompts, "Prompts, one token-id sequence per line")
      ->required()
      ->check(CLI::ExistingFile);
  inter->add_option("--layer", inf->layer, "Neuron layer")->required();
  inter->add_option("--neuron", inf->neuron, "Neuron index")->required();
  inter->add_option("--mode", inf->mode, "pin | zero")->check(CLI::IsMember({"pin", "zero"}));
  inter->add_option("--pin-values", inf->pin_values, "Comma-separated values (default -3..3)");
  inter->add_option("--scope", inf->scope, "all | last")->check(CLI::IsMember({"all", "last"}));
  inter->add_option("--track-tokens", inf->track_tokens, "Comma-separated token ids to report");
  inter->add_option("--top-k", inf->top_k, "Tokens to report when --track-tokens is absent");
  inter->add_option("--out-dir", inf->out_dir, "Output directory")->required();
  inter->callback([&, inf] { action = [inf](Run& r) { cmd_intervene(*inf, r); }; run.out_dir = inf->out_dir; });

  auto af = std::make_shared<AblateFlags>();
  auto* abl = app.add_subcommand("ablate", "Zero-ablate one neuron and rank contexts by loss increase");
  abl->add_option("--model", af->model, "Toy model checkpoint (TOYM)")->required()->check(CLI::ExistingFile);
  abl->add_option("--corpus", af->corpus, "Token corpus (binary)")->check(CLI::ExistingFile);
  abl->add_option("--prompts", af->prompts, "Prompts, one token-id sequence per line")->check(CLI::ExistingFile);
  abl->add_option("--layer", af->layer, "Neuron layer")->required();
  abl->add_option("--neuron", af->neuron, "Neuron index")->required();
  abl->add_option("--top-k", af->top_k, "Contexts to keep (0: all)");
  abl->add_option("--out-dir", af->out_dir, "Output directory")->required();
  abl->callback([&, af] { action = [af](Run& r) { cmd_ablate(*af, r); }; run.out_dir = af->out_dir; });

  auto ef = std::make_shared<ExportFlags>();
  auto* exp = app.add_subcommand("export-map", "GeoJSON and CSV scatter of predicted positions");
  exp->add_option("--predictions", ef->predictions, "predictions.csv from probe")->required()->check(CLI::ExistingFile);
  exp->add_option("--entities", ef->entities, "Entity metadata (JSONL)")->required()->check(CLI::ExistingFile);
  exp->add_flag("--csv-only", ef->csv_only, "Write only the CSV scatter (required for 1-D targets)");
  exp->add_option("--out-dir", ef->out_dir, "Output directory")->required();
  exp->callback([&, ef] { action = [ef](Run& r) { cmd_export_map(*ef, r); }; run.out_dir = ef->out_dir; });

  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic datasets");
  synth_cmd->require_subcommand(1);
  auto sy = std::make_shared<SynthFlags>();
  auto add_synth = [&](CLI::App* sub, bool distractors) {
    sub->add_option("--n", sy->n, "Entities");
    sub->add_option("--d", sy->d, "Activation width");
    sub->add_option("--target-dim", sy->target_dim, "1 (time) or 2 (space)");
    sub->add_option("--snr", sy->snr, "Signal-to-noise ratio, or inf");
    if (distractors) {
      sub->add_option("--distractors", sy->distractors, "Distractor features");
      sub->add_option("--distractor-scale", sy->distractor_scale, "Norm of each distractor direction");
    }
    sub->add_option("--blocks", sy->blocks, "Grid blocks");
    sub->add_option("--types", sy->types, "Entity types");
    sub->add_option("--seed", sy->seed, "Seed");
    sub->add_option("--out-dir", sy->out_dir, "Output directory")->required();
  };
  auto* lin = synth_cmd->add_subcommand("linear", "Planted linear features plus distractors");
  add_synth(lin, true);
  lin->callback([&, sy] { action = [sy](Run& r) { cmd_synth_linear(*sy, r); }; run.out_dir = sy->out_dir; });
  auto* blk = synth_cmd->add_subcommand("block-centroid", "Activations that encode only block membership");
  add_synth(blk, false);
  blk->callback([&, sy] { action = [sy](Run& r) { cmd_synth_block(*sy, r); }; run.out_dir = sy->out_dir; });

  auto geo = std::make_shared<synth::GeoCorpusConfig>();
  auto geo_out = std::make_shared<std::string>();
  auto* geo_cmd = synth_cmd->add_subcommand("geo-corpus", "Token corpus over entities on a grid");
  geo_cmd->add_option("--grid", geo->grid, "Grid side");
  geo_cmd->add_option("--n-entities", geo->n_entities, "Entities");
  geo_cmd->add_option("--fact-repeats", geo->fact_repeats, "Copies of each fact sequence");
  geo_cmd->add_option("--walks", geo->n_walks, "Random walks");
  geo_cmd->add_option("--walk-length", geo->walk_length, "Tokens per walk");
  geo_cmd->add_option("--walk-sigma", geo->walk_sigma, "Step length scale in grid units");
  geo_cmd->add_option("--types", geo->n_entity_types, "Entity types");
  geo_cmd->add_option("--seed", geo->seed, "Seed");
  geo_cmd->add_option("--out-dir", *geo_out, "Output directory")->required();
  geo_cmd->callback([&, geo, geo_out] {
    action = [geo](Run& r) { cmd_synth_geo(*geo, r); };
    run.out_dir = *geo_out;
  });

  auto* toy_cmd = app.add_subcommand("toy", "Train and inspect the toy transformer");
  toy_cmd->require_subcommand(1);
  auto tf = std::make_shared<TrainFlags>();
  auto* train_cmd = toy_cmd->add_subcommand("train", "Train on a token corpus");
  train_cmd->add_option("--corpus", tf->corpus, "Token corpus (binary)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--vocab-size", tf->model.vocab_size, "Vocabulary size")->required();
  train_cmd->add_option("--d-model", tf->model.d_model, "Residual width");
  train_cmd->add_option("--layers", tf->model.n_layers, "Blocks");
  train_cmd->add_option("--heads", tf->model.n_heads, "Attention heads");
  train_cmd->add_option("--mlp-width", tf->model.mlp_width, "MLP hidden width");
  train_cmd->add_option("--max-seq-len", tf->model.max_seq_len, "Context length");
  train_cmd->add_option("--steps", tf->train.steps, "Optimizer steps");
  train_cmd->add_option("--batch-size", tf->train.batch_size, "Sequences per step");
  train_cmd->add_option("--lr", tf->train.learning_rate, "Adam learning rate");
  train_cmd->add_option("--weight-decay", tf->train.weight_decay, "Decoupled weight decay");
  train_cmd->add_option("--grad-clip", tf->train.grad_clip, "Global gradient norm clip (0: off)");
  train_cmd->add_option("--seed", tf->seed, "Initialization and batching seed");
  train_cmd->add_option("--out-dir", tf->out_dir, "Output directory")->required();
  train_cmd->callback([&, tf] { action = [tf](Run& r) { cmd_toy_train(*tf, r); }; run.out_dir = tf->out_dir; });

  auto xf = std::make_shared<ExtractFlags>();
  auto* extract_cmd = toy_cmd->add_subcommand("extract", "Write residual-stream activations as ACTV files");
  extract_cmd->add_option("--model", xf->model, "Toy model checkpoint (TOYM)")->required()->check(CLI::ExistingFile);
  extract_cmd->add_option("--prompts", xf->prompts, "Prompts, one token-id sequence per line")
      ->required()
      ->check(CLI::ExistingFile);
  extract_cmd->add_option("--layers", xf->layers, "Comma-separated layers, or 'all'");
  extract_cmd->add_option("--token-index", xf->token_index, "Captured position (-1: last)");
  extract_cmd->add_option("--prompt-id", xf->prompt_id, "Prompt id recorded in the header");
  extract_cmd->add_option("--model-id", xf->model_id, "Model id recorded in the header");
  extract_cmd->add_option("--out-dir", xf->out_dir, "Output directory")->required();
  extract_cmd->callback([&, xf] { action = [xf](Run& r) { cmd_toy_extract(*xf, r); }; run.out_dir = xf->out_dir; });

  auto replay_path = std::make_shared<std::string>();
  auto replay_out = std::make_shared<std::string>();
  auto replay_noverify = std::make_shared<bool>(false);
  auto* rep = app.add_subcommand("replay", "Rerun the command recorded in a manifest");
  rep->add_option("manifest", *replay_path, "manifest.json")->required()->check(CLI::ExistingFile);
  rep->add_option("--out-dir", *replay_out, "Write to this directory instead of the recorded one");
  rep->add_flag("--no-verify", *replay_noverify, "Skip the input checksum comparison");
  rep->callback([&, replay_path, replay_out, replay_noverify] {
    direct = [=] { return replay(*replay_path, *replay_out, !*replay_noverify); };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (direct) return direct();
    action(run);
    write_manifest(app, run);
    return kExitOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace worldprobe::cli
