#include "worldprobe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "worldprobe/binio.hpp"
#include "worldprobe/errors.hpp"
#include "worldprobe/rng.hpp"

namespace worldprobe {

namespace {

std::string row_label(const Entity& e, std::size_t row) {
  return "row " + std::to_string(row) + " (id '" + e.id + "')";
}

std::string require_string(const nlohmann::ordered_json& obj, const char* key, const std::string& where,
                           bool required, const std::string& fallback = "") {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    if (required) throw DataError(where + ": missing field '" + key + "'");
    return fallback;
  }
  if (!it->is_string()) throw DataError(where + ": field '" + key + "' must be a string");
  return it->get<std::string>();
}

void validate_entity(const Entity& e, std::size_t i, std::size_t target_dim) {
  if (e.id.empty()) throw DataError(row_label(e, i) + ": empty id");
  if (e.target.size() != target_dim) {
    throw DataError(row_label(e, i) + ": mixed target dimensionality (" + std::to_string(e.target.size()) +
                    " vs " + std::to_string(target_dim) + ")");
  }
  if (target_dim != 1 && target_dim != 2) throw DataError(row_label(e, i) + ": target must have 1 or 2 values");
  for (double v : e.target) {
    if (!std::isfinite(v)) throw DataError(row_label(e, i) + ": non-finite target");
  }
  if (target_dim == 2) {
    if (e.target[0] < -90.0 || e.target[0] > 90.0)
      throw DataError(row_label(e, i) + ": field 'target[0]' (latitude) = " + std::to_string(e.target[0]) +
                      " outside [-90, 90]");
    if (e.target[1] < -180.0 || e.target[1] > 180.0)
      throw DataError(row_label(e, i) + ": field 'target[1]' (longitude) = " + std::to_string(e.target[1]) +
                      " outside [-180, 180]");
  }
}

}  // namespace

Matrix EntityTable::targets() const {
  Matrix y(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(target_dim));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < target_dim; ++j) y(i, j) = rows[i].target[j];
  return y;
}

Matrix EntityTable::targets(const std::vector<std::size_t>& subset) const {
  Matrix y(static_cast<Eigen::Index>(subset.size()), static_cast<Eigen::Index>(target_dim));
  for (std::size_t i = 0; i < subset.size(); ++i)
    for (std::size_t j = 0; j < target_dim; ++j) y(i, j) = rows.at(subset[i]).target[j];
  return y;
}

void EntityTable::validate() const {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    validate_entity(rows[i], i, target_dim);
    if (!seen.insert(rows[i].id).second) throw DataError(row_label(rows[i], i) + ": duplicate id");
  }
}

EntityTable parse_entities(std::istream& in, const std::string& source) {
  EntityTable table;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    nlohmann::ordered_json rec;
    try {
      rec = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(where + ": malformed JSON (" + ex.what() + ")");
    }
    if (!rec.is_object()) throw DataError(where + ": record must be a JSON object");

    Entity e;
    e.id = require_string(rec, "id", where, true);
    e.name = require_string(rec, "name", where, false, e.id);
    e.entity_type = require_string(rec, "entity_type", where, false);
    e.block = require_string(rec, "block", where, false);
    e.group_id = require_string(rec, "group_id", where, false, e.id);
    if (e.group_id.empty()) e.group_id = e.id;

    auto t = rec.find("target");
    if (t == rec.end() || !t->is_array() || t->empty())
      throw DataError(where + ": field 'target' must be a non-empty array of numbers");
    for (const auto& v : *t) {
      if (!v.is_number()) throw DataError(where + ": field 'target' must contain only numbers");
      e.target.push_back(v.get<double>());
    }
    if (auto x = rec.find("extra"); x != rec.end() && !x->is_null()) {
      if (!x->is_object()) throw DataError(where + ": field 'extra' must be an object");
      e.extra = *x;
    }

    if (table.rows.empty()) table.target_dim = e.target.size();
    if (e.target.size() != table.target_dim) {
      throw DataError(where + ": mixed target dimensionality (" + std::to_string(e.target.size()) +
                      " vs " + std::to_string(table.target_dim) + ")");
    }
    try {
      validate_entity(e, table.rows.size(), table.target_dim);
    } catch (const DataError& ex) {
      throw DataError(where + ": " + ex.what());
    }
    if (!ids.insert(e.id).second) throw DataError(where + ": duplicate id '" + e.id + "'");
    table.rows.push_back(std::move(e));
  }
  table.validate();
  return table;
}

EntityTable load_entities(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open entities file " + path);
  return parse_entities(in, path);
}

std::string entities_to_jsonl(const EntityTable& table) {
  std::string out;
  for (const auto& e : table.rows) {
    nlohmann::ordered_json rec;
    rec["id"] = e.id;
    rec["name"] = e.name;
    rec["entity_type"] = e.entity_type;
    rec["block"] = e.block;
    rec["group_id"] = e.group_id;
    rec["target"] = e.target;
    if (!e.extra.empty()) rec["extra"] = e.extra;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void write_entities(const std::string& path, const EntityTable& table) {
  binio::write_file(path, entities_to_jsonl(table));
}

EntityTable filter_entities(const EntityTable& table, std::int64_t min_views) {
  EntityTable out;
  out.target_dim = table.target_dim;
  for (const auto& e : table.rows) {
    auto it = e.extra.find("pageviews");
    if (it != e.extra.end() && it->is_number()) {
      if (it->get<double>() < static_cast<double>(min_views)) continue;
    }
    out.rows.push_back(e);
  }
  return out;
}

EntityTable select_rows(const EntityTable& table, const std::vector<std::size_t>& rows) {
  EntityTable out;
  out.target_dim = table.target_dim;
  out.rows.reserve(rows.size());
  for (auto r : rows) out.rows.push_back(table.rows.at(r));
  return out;
}

double decimal_year(int year, int day_of_year) {
  return static_cast<double>(year) + static_cast<double>(day_of_year - 1) / 365.25;
}

// ---------------------------------------------------------------------------
// ACTV

Matrix ActivationMatrix::as_double(const std::vector<std::size_t>& subset) const {
  Matrix out(static_cast<Eigen::Index>(subset.size()), data.cols());
  for (std::size_t i = 0; i < subset.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(subset[i])).cast<double>();
  return out;
}

std::string encode_activations(const ActivationMatrix& m) {
  binio::Writer w;
  w.bytes("ACTV");
  w.uint<std::uint32_t>(1);
  w.str16(m.model_id);
  w.str16(m.prompt_id);
  w.uint<std::uint16_t>(m.layer);
  w.uint<std::uint64_t>(m.n());
  w.uint<std::uint64_t>(m.d());
  w.uint<std::uint8_t>(0);
  const float* p = m.data.data();
  for (std::size_t i = 0; i < m.n() * m.d(); ++i) w.f32(p[i]);
  return w.take();
}

ActivationMatrix decode_activations(std::string_view bytes, const std::string& source) {
  binio::Reader r(bytes, source);
  if (r.remaining() < 4 || r.bytes(4) != "ACTV") throw DataError(source + ": bad magic (expected ACTV)");
  const auto version = r.uint<std::uint32_t>();
  if (version != 1) throw DataError(source + ": unsupported ACTV version " + std::to_string(version));
  ActivationMatrix m;
  m.model_id = r.str16();
  m.prompt_id = r.str16();
  m.layer = r.uint<std::uint16_t>();
  const auto n = r.uint<std::uint64_t>();
  const auto d = r.uint<std::uint64_t>();
  const auto dtype = r.uint<std::uint8_t>();
  if (dtype != 0) throw DataError(source + ": unsupported dtype " + std::to_string(dtype));
  if (d != 0 && n > (UINT64_MAX / 4) / d) throw DataError(source + ": header dimensions overflow");
  const std::uint64_t payload = n * d * 4;
  if (r.remaining() < payload) {
    throw DataError(source + ": truncated payload (expected " + std::to_string(payload) +
                    " bytes, got " + std::to_string(r.remaining()) + ")");
  }
  if (r.remaining() > payload) {
    throw DataError(source + ": trailing bytes after payload (" +
                    std::to_string(r.remaining() - payload) + ")");
  }
  m.data.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::uint64_t i = 0; i < n; ++i) {
    for (std::uint64_t j = 0; j < d; ++j) {
      const float v = r.f32();
      if (!std::isfinite(v)) {
        throw DataError(source + ": non-finite value (" + std::string(std::isnan(v) ? "NaN" : "Inf") +
                        ") at (row " + std::to_string(i) + ", col " + std::to_string(j) + ")");
      }
      m.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return m;
}

ActivationMatrix load_activations(const std::string& path) {
  return decode_activations(binio::read_file(path), path);
}

void write_activations(const std::string& path, const ActivationMatrix& m) {
  if (!m.data.allFinite()) throw DataError("refusing to write non-finite activations to " + path);
  binio::write_file(path, encode_activations(m));
}

void check_alignment(const EntityTable& table, const ActivationMatrix& acts) {
  if (table.size() != acts.n()) {
    throw DataError("activation rows (" + std::to_string(acts.n()) + ") do not match entity rows (" +
                    std::to_string(table.size()) + ")");
  }
}

// ---------------------------------------------------------------------------
// Splits

const char* to_string(SplitProtocol p) {
  switch (p) {
    case SplitProtocol::RandomGrouped: return "random-grouped";
    case SplitProtocol::BlockHoldout: return "block-holdout";
    case SplitProtocol::EntityHoldout: return "entity-holdout";
  }
  return "?";
}

namespace {
std::vector<std::string> ids_of(const EntityTable& t, const std::vector<std::size_t>& rows) {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(t.rows.at(r).id);
  return out;
}
}  // namespace

std::vector<std::string> SplitAssignment::train_ids(const EntityTable& t) const { return ids_of(t, train_rows); }
std::vector<std::string> SplitAssignment::test_ids(const EntityTable& t) const { return ids_of(t, test_rows); }

std::string SplitAssignment::descriptor() const {
  std::ostringstream ss;
  ss << to_string(protocol);
  if (protocol == SplitProtocol::RandomGrouped) {
    ss << ':' << test_fraction << '@' << seed;
  } else if (held_value) {
    ss << ':' << *held_value;
  }
  return ss.str();
}

SplitAssignment make_split(const EntityTable& table, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw UsageError("test fraction must lie strictly between 0 and 1");
  std::unordered_map<std::string, bool> group_in_test;
  for (const auto& e : table.rows) {
    if (group_in_test.count(e.group_id)) continue;
    const double u = static_cast<double>(stable_hash(seed, e.group_id) >> 11) * 0x1.0p-53;
    group_in_test.emplace(e.group_id, u < test_fraction);
  }
  if (group_in_test.size() < 2) throw DataError("split needs at least 2 distinct group ids");

  SplitAssignment s;
  s.protocol = SplitProtocol::RandomGrouped;
  s.seed = seed;
  s.test_fraction = test_fraction;
  for (std::size_t i = 0; i < table.size(); ++i) {
    (group_in_test.at(table.rows[i].group_id) ? s.test_rows : s.train_rows).push_back(i);
  }
  if (s.train_rows.empty() || s.test_rows.empty()) {
    throw DataError("split with seed " + std::to_string(seed) + " left the " +
                    (s.train_rows.empty() ? "train" : "test") + " side empty; too few groups");
  }
  return s;
}

namespace {

template <typename Pred>
SplitAssignment holdout(const EntityTable& table, SplitProtocol protocol, const std::string& held, Pred in_test) {
  SplitAssignment s;
  s.protocol = protocol;
  s.held_value = held;
  std::set<std::string> test_groups;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (in_test(table.rows[i])) {
      s.test_rows.push_back(i);
      test_groups.insert(table.rows[i].group_id);
    }
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (in_test(table.rows[i])) continue;
    (test_groups.count(table.rows[i].group_id) ? s.excluded_rows : s.train_rows).push_back(i);
  }
  if (s.train_rows.empty()) throw DataError("holding out '" + held + "' leaves no training rows");
  return s;
}

}  // namespace

SplitAssignment make_block_holdout(const EntityTable& table, const std::string& held_value) {
  const auto blocks = block_values(table);
  if (std::find(blocks.begin(), blocks.end(), held_value) == blocks.end())
    throw DataError("unknown block value '" + held_value + "'");
  return holdout(table, SplitProtocol::BlockHoldout, held_value,
                 [&](const Entity& e) { return e.block == held_value; });
}

SplitAssignment make_entity_holdout(const EntityTable& table, const std::string& held_type) {
  std::size_t count = 0;
  for (const auto& e : table.rows) count += e.entity_type == held_type;
  if (count == 0) throw DataError("unknown entity type '" + held_type + "'");
  if (2 * count > table.size()) {
    throw DataError("entity type '" + held_type + "' is a majority class (" + std::to_string(count) + " of " +
                    std::to_string(table.size()) + " rows) and cannot be held out");
  }
  return holdout(table, SplitProtocol::EntityHoldout, held_type,
                 [&](const Entity& e) { return e.entity_type == held_type; });
}

namespace {
template <typename Get>
std::vector<std::string> distinct(const EntityTable& table, Get get) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& e : table.rows) {
    const std::string& v = get(e);
    if (seen.insert(v).second) out.push_back(v);
  }
  return out;
}
}  // namespace

std::vector<std::string> block_values(const EntityTable& table) {
  return distinct(table, [](const Entity& e) -> const std::string& { return e.block; });
}

std::vector<std::string> entity_types(const EntityTable& table) {
  return distinct(table, [](const Entity& e) -> const std::string& { return e.entity_type; });
}

}  // namespace worldprobe
