#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "worldprobe/types.hpp"

namespace worldprobe {

struct Entity {
  std::string id;
  std::string name;
  std::string entity_type;
  std::string block;
  std::string group_id;  // leakage group; defaults to id
  std::vector<double> target;  // [year] or [lat, lon]
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

// Per-entity metadata. Row i pairs with activation row i.
struct EntityTable {
  std::vector<Entity> rows;
  std::size_t target_dim = 0;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }

  // n x target_dim matrix of targets, optionally restricted to `subset` rows.
  Matrix targets() const;
  Matrix targets(const std::vector<std::size_t>& subset) const;

  // Throws DataError on any invariant violation.
  void validate() const;
};

EntityTable parse_entities(std::istream& in, const std::string& source = "<stream>");
EntityTable load_entities(const std::string& path);
std::string entities_to_jsonl(const EntityTable& table);
void write_entities(const std::string& path, const EntityTable& table);

// Rows whose extra["pageviews"] is below `min_views` are dropped; rows without
// the key are kept.
EntityTable filter_entities(const EntityTable& table, std::int64_t min_views);

// Restrict to the given row indices, in the given order.
EntityTable select_rows(const EntityTable& table, const std::vector<std::size_t>& rows);

// Headline dates are stored as year + (day_of_year - 1) / 365.25.
double decimal_year(int year, int day_of_year);

struct ActivationMatrix {
  std::string model_id;
  std::uint16_t layer = 0;
  std::string prompt_id;
  MatrixF data;  // n x d, row-major float32

  std::size_t n() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(data.cols()); }

  Matrix as_double() const { return data.cast<double>(); }
  Matrix as_double(const std::vector<std::size_t>& subset) const;
};

// ACTV container: "ACTV", u32 version=1, model_id (u16 len + bytes),
// prompt_id (u16 len + bytes), u16 layer, u64 n, u64 d, u8 dtype=0,
// n*d little-endian float32 row-major.
std::string encode_activations(const ActivationMatrix& m);
ActivationMatrix decode_activations(std::string_view bytes, const std::string& source = "<buffer>");
ActivationMatrix load_activations(const std::string& path);
void write_activations(const std::string& path, const ActivationMatrix& m);

// Positional pairing is authoritative; this only checks the row counts.
void check_alignment(const EntityTable& table, const ActivationMatrix& acts);

enum class SplitProtocol { RandomGrouped, BlockHoldout, EntityHoldout };

const char* to_string(SplitProtocol p);

struct SplitAssignment {
  SplitProtocol protocol = SplitProtocol::RandomGrouped;
  std::uint64_t seed = 0;
  double test_fraction = 0.0;  // random-grouped only
  std::optional<std::string> held_value;

  // Row indices into the source table, ascending.
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  // Holdout only: rows sharing a group_id with a held-out row. They are kept
  // out of training so no group straddles the split.
  std::vector<std::size_t> excluded_rows;

  std::vector<std::string> train_ids(const EntityTable& t) const;
  std::vector<std::string> test_ids(const EntityTable& t) const;

  // Human-readable descriptor, e.g. "block-holdout:FR" or "random-grouped:0.2@7".
  std::string descriptor() const;
};

inline constexpr double kDefaultTestFraction = 0.2;

// Deterministic group-level split: a group goes to test when
// stable_hash(seed, group_id) falls below the fraction threshold.
SplitAssignment make_split(const EntityTable& table, double test_fraction, std::uint64_t seed);
SplitAssignment make_block_holdout(const EntityTable& table, const std::string& held_value);
SplitAssignment make_entity_holdout(const EntityTable& table, const std::string& held_type);

// Distinct block / entity-type labels in first-appearance order.
std::vector<std::string> block_values(const EntityTable& table);
std::vector<std::string> entity_types(const EntityTable& table);

}  // namespace worldprobe
