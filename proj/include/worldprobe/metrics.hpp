#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "worldprobe/dataset.hpp"
#include "worldprobe/types.hpp"

namespace worldprobe {

inline constexpr double kEarthRadiusKm = 6371.0;

// Pooled multi-output R^2: 1 - SSE / SST, SST taken around the evaluation
// column means. Constant Y raises DataError.
double r2(const Matrix& Y, const Matrix& Yhat);

// Ranks starting at 1; tied values receive the average of their ranks.
Vector average_ranks(const Vector& x);
double pearson(const Vector& a, const Vector& b);

// Per-column Spearman, averaged over columns. A constant column in either
// argument raises DataError unless `skip_constant`, in which case the column
// is dropped (all columns dropped still raises).
double spearman(const Matrix& Y, const Matrix& Yhat, bool skip_constant = false);
// Per-column values; NaN where undefined.
std::vector<double> spearman_per_dim(const Matrix& Y, const Matrix& Yhat);

enum class DistanceKind { Haversine, Euclidean, Absolute };

const char* to_string(DistanceKind k);
DistanceKind parse_distance_kind(const std::string& s);
// Haversine for 2-D (lat, lon) targets, absolute difference for 1-D.
DistanceKind default_distance_kind(std::size_t target_dim);

double distance(std::span<const double> p, std::span<const double> q, DistanceKind kind);
double haversine_km(double lat1, double lon1, double lat2, double lon2);

// Which positions an entity's prediction is compared against.
enum class ProximityPool {
  Predictions,    // other entities' predictions (default)
  TruePositions,  // other entities' true targets
};

struct ProximityResult {
  Vector per_entity;
  double mean = 0.0;
};

// PE_i = |{ j != i : dist(pool_j, Y_i) < dist(Yhat_i, Y_i) }| / (m - 1)
ProximityResult proximity_error(const Matrix& Y, const Matrix& Yhat, DistanceKind kind,
                                ProximityPool pool = ProximityPool::Predictions);

struct BreakdownCell {
  std::string by;   // "entity_type" or "block"
  std::string key;
  std::size_t n = 0;
  double r2 = 0.0;        // NaN when undefined
  double spearman = 0.0;  // NaN when undefined
  double proximity_error_mean = 0.0;
};

struct ReportOptions {
  DistanceKind distance = DistanceKind::Haversine;
  ProximityPool pool = ProximityPool::Predictions;
};

struct ProbeReport {
  double r2 = 0.0;
  double spearman = 0.0;
  double proximity_error_mean = 0.0;
  std::vector<std::string> ids;  // evaluation rows, prediction order
  Vector proximity_error_per_entity;
  std::vector<BreakdownCell> breakdowns;
  std::string split;
  nlohmann::ordered_json probe_meta = nlohmann::ordered_json::object();
  nlohmann::ordered_json conventions = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const;
  // Long format: one row per (scope, key, metric).
  std::string to_csv() const;
};

// `pred_ids` must match the split's test ids exactly (as a set); Yhat rows
// follow pred_ids.
ProbeReport make_report(const EntityTable& entities, const SplitAssignment& split,
                        const std::vector<std::string>& pred_ids, const Matrix& Yhat,
                        const ReportOptions& opts);

// CSV with columns id, y0.., yhat0..; enough to recompute every metric.
std::string predictions_csv(const std::vector<std::string>& ids, const Matrix& Y, const Matrix& Yhat);

struct PredictionDump {
  std::vector<std::string> ids;
  Matrix y, yhat;
};
PredictionDump parse_predictions_csv(const std::string& text, const std::string& source = "<csv>");

// %.17g formatting, "nan" for NaN.
std::string fmt_double(double v);

}  // namespace worldprobe
