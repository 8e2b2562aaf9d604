#include "worldprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "worldprobe/errors.hpp"

namespace worldprobe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_shapes(const Matrix& Y, const Matrix& Yhat, const char* what) {
  if (Y.rows() != Yhat.rows() || Y.cols() != Yhat.cols()) {
    throw DataError(std::string(what) + ": shape mismatch (" + std::to_string(Y.rows()) + "x" +
                    std::to_string(Y.cols()) + " vs " + std::to_string(Yhat.rows()) + "x" +
                    std::to_string(Yhat.cols()) + ")");
  }
}

bool is_constant(const Vector& v) {
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) != v(0)) return false;
  return true;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double r2(const Matrix& Y, const Matrix& Yhat) {
  check_shapes(Y, Yhat, "r2");
  if (Y.rows() < 2) throw DataError("r2 needs at least 2 rows");
  const Vector mean = Y.colwise().mean().transpose();
  double sse = 0.0, sst = 0.0;
  for (Eigen::Index j = 0; j < Y.cols(); ++j) {
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      const double e = Y(i, j) - Yhat(i, j);
      const double c = Y(i, j) - mean(j);
      sse += e * e;
      sst += c * c;
    }
  }
  if (!(sst > 0.0)) throw DataError("r2 undefined: targets have zero total variance");
  return 1.0 - sse / sst;
}

Vector average_ranks(const Vector& x) {
  const auto n = x.size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x(a) < x(b); });
  Vector ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && x(idx[j + 1]) == x(idx[i])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) ranks(idx[k]) = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(const Vector& a, const Vector& b) {
  const Vector ac = a.array() - a.mean();
  const Vector bc = b.array() - b.mean();
  const double denom = std::sqrt(ac.squaredNorm() * bc.squaredNorm());
  if (!(denom > 0.0)) return kNaN;
  return ac.dot(bc) / denom;
}

std::vector<double> spearman_per_dim(const Matrix& Y, const Matrix& Yhat) {
  check_shapes(Y, Yhat, "spearman");
  std::vector<double> out;
  for (Eigen::Index j = 0; j < Y.cols(); ++j) {
    const Vector y = Y.col(j), yh = Yhat.col(j);
    if (Y.rows() < 3 || is_constant(y) || is_constant(yh)) {
      out.push_back(kNaN);
    } else {
      out.push_back(pearson(average_ranks(y), average_ranks(yh)));
    }
  }
  return out;
}

double spearman(const Matrix& Y, const Matrix& Yhat, bool skip_constant) {
  check_shapes(Y, Yhat, "spearman");
  if (Y.rows() < 3) throw DataError("spearman needs at least 3 rows");
  const auto per = spearman_per_dim(Y, Yhat);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t j = 0; j < per.size(); ++j) {
    if (std::isnan(per[j])) {
      if (!skip_constant) throw DataError("spearman undefined: dimension " + std::to_string(j) + " is constant");
      continue;
    }
    sum += per[j];
    ++used;
  }
  if (used == 0) throw DataError("spearman undefined: every dimension is constant");
  return sum / static_cast<double>(used);
}

const char* to_string(DistanceKind k) {
  switch (k) {
    case DistanceKind::Haversine: return "haversine";
    case DistanceKind::Euclidean: return "euclidean";
    case DistanceKind::Absolute: return "absolute";
  }
  return "?";
}

DistanceKind parse_distance_kind(const std::string& s) {
  if (s == "haversine") return DistanceKind::Haversine;
  if (s == "euclidean") return DistanceKind::Euclidean;
  if (s == "absolute") return DistanceKind::Absolute;
  throw UsageError("unknown distance kind '" + s + "'");
}

DistanceKind default_distance_kind(std::size_t target_dim) {
  return target_dim == 2 ? DistanceKind::Haversine : DistanceKind::Absolute;
}

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double dphi = (lat2 - lat1) * rad;
  const double dlambda = (lon2 - lon1) * rad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  double a = s1 * s1 + std::cos(lat1 * rad) * std::cos(lat2 * rad) * s2 * s2;
  a = std::clamp(a, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::atan2(std::sqrt(a), std::sqrt(1.0 - a));
}

double distance(std::span<const double> p, std::span<const double> q, DistanceKind kind) {
  if (p.size() != q.size()) throw DataError("distance: dimension mismatch");
  switch (kind) {
    case DistanceKind::Haversine:
      if (p.size() != 2) throw DataError("haversine distance needs 2-D (lat, lon) targets");
      return haversine_km(p[0], p[1], q[0], q[1]);
    case DistanceKind::Absolute:
      if (p.size() != 1) throw DataError("absolute distance needs 1-D targets");
      return std::abs(p[0] - q[0]);
    case DistanceKind::Euclidean: {
      double s = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - q[i]) * (p[i] - q[i]);
      return std::sqrt(s);
    }
  }
  throw DataError("unknown distance kind");
}

ProximityResult proximity_error(const Matrix& Y, const Matrix& Yhat, DistanceKind kind, ProximityPool pool) {
  check_shapes(Y, Yhat, "proximity_error");
  const auto m = Y.rows();
  if (m < 2) throw DataError("proximity error needs at least 2 rows");
  const auto t = static_cast<std::size_t>(Y.cols());
  // Row-major copies so each row is a contiguous span.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> y = Y, yh = Yhat;
  const auto& ref = pool == ProximityPool::Predictions ? yh : y;
  auto row = [t](const auto& M, Eigen::Index i) { return std::span<const double>(M.data() + i * t, t); };

  ProximityResult out;
  out.per_entity.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double own = distance(row(yh, i), row(y, i), kind);
    std::size_t closer = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      if (distance(row(ref, j), row(y, i), kind) < own) ++closer;
    }
    out.per_entity(i) = static_cast<double>(closer) / static_cast<double>(m - 1);
  }
  out.mean = out.per_entity.mean();
  return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

double r2_or_nan(const Matrix& Y, const Matrix& Yhat) {
  if (Y.rows() < 2) return kNaN;
  try {
    return r2(Y, Yhat);
  } catch (const DataError&) {
    return kNaN;
  }
}

double spearman_or_nan(const Matrix& Y, const Matrix& Yhat) {
  if (Y.rows() < 3) return kNaN;
  try {
    return spearman(Y, Yhat, true);
  } catch (const DataError&) {
    return kNaN;
  }
}

Matrix take_rows(const Matrix& M, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), M.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = M.row(rows[i]);
  return out;
}

}  // namespace

ProbeReport make_report(const EntityTable& entities, const SplitAssignment& split,
                        const std::vector<std::string>& pred_ids, const Matrix& Yhat,
                        const ReportOptions& opts) {
  if (split.test_rows.empty() || pred_ids.empty()) throw DataError("report: empty evaluation set");
  if (static_cast<std::size_t>(Yhat.rows()) != pred_ids.size())
    throw DataError("report: prediction rows do not match id count");
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < entities.size(); ++i) row_of.emplace(entities.rows[i].id, i);

  std::vector<std::string> expected = split.test_ids(entities), got = pred_ids;
  std::sort(expected.begin(), expected.end());
  std::sort(got.begin(), got.end());
  if (expected != got) throw DataError("report: prediction ids do not match the split's test ids");

  std::vector<std::size_t> rows;
  for (const auto& id : pred_ids) rows.push_back(row_of.at(id));
  const Matrix Y = entities.targets(rows);

  ProbeReport rep;
  rep.ids = pred_ids;
  rep.split = split.descriptor();
  rep.r2 = r2_or_nan(Y, Yhat);
  rep.spearman = spearman_or_nan(Y, Yhat);
  const auto pe = proximity_error(Y, Yhat, opts.distance, opts.pool);
  rep.proximity_error_per_entity = pe.per_entity;
  rep.proximity_error_mean = pe.mean;
  rep.conventions["r2"] = "pooled";
  rep.conventions["spearman"] = "mean over target dimensions";
  rep.conventions["proximity_pool"] = opts.pool == ProximityPool::Predictions ? "predictions" : "true-positions";
  rep.conventions["distance"] = to_string(opts.distance);

  auto breakdown = [&](const char* by, auto key_of) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<Eigen::Index>> members;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::string& k = key_of(entities.rows[rows[i]]);
      if (!members.count(k)) order.push_back(k);
      members[k].push_back(static_cast<Eigen::Index>(i));
    }
    for (const auto& k : order) {
      const auto& idx = members[k];
      BreakdownCell cell;
      cell.by = by;
      cell.key = k;
      cell.n = idx.size();
      const Matrix ys = take_rows(Y, idx), yhs = take_rows(Yhat, idx);
      cell.r2 = r2_or_nan(ys, yhs);
      cell.spearman = spearman_or_nan(ys, yhs);
      double s = 0.0;
      for (auto i : idx) s += pe.per_entity(i);
      cell.proximity_error_mean = s / static_cast<double>(idx.size());
      rep.breakdowns.push_back(cell);
    }
  };
  breakdown("entity_type", [](const Entity& e) -> const std::string& { return e.entity_type; });
  breakdown("block", [](const Entity& e) -> const std::string& { return e.block; });
  return rep;
}

nlohmann::ordered_json ProbeReport::to_json() const {
  auto num = [](double v) -> nlohmann::ordered_json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  nlohmann::ordered_json j;
  j["split"] = split;
  j["probe"] = probe_meta;
  j["conventions"] = conventions;
  j["n"] = ids.size();
  j["r2"] = num(r2);
  j["spearman"] = num(spearman);
  j["proximity_error_mean"] = num(proximity_error_mean);
  auto cells = nlohmann::ordered_json::array();
  for (const auto& c : breakdowns) {
    nlohmann::ordered_json cj;
    cj["by"] = c.by;
    cj["key"] = c.key;
    cj["n"] = c.n;
    cj["r2"] = num(c.r2);
    cj["spearman"] = num(c.spearman);
    cj["proximity_error_mean"] = num(c.proximity_error_mean);
    cells.push_back(cj);
  }
  j["breakdowns"] = cells;
  auto per = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    per.push_back({{"id", ids[i]}, {"proximity_error", proximity_error_per_entity(static_cast<Eigen::Index>(i))}});
  }
  j["proximity_error_per_entity"] = per;
  return j;
}

std::string ProbeReport::to_csv() const {
  std::ostringstream out;
  out << "scope,key,n,metric,value\n";
  auto emit = [&](const std::string& scope, const std::string& key, std::size_t n, double r, double s, double pe) {
    out << csv_quote(scope) << ',' << csv_quote(key) << ',' << n << ",r2," << fmt_double(r) << '\n';
    out << csv_quote(scope) << ',' << csv_quote(key) << ',' << n << ",spearman," << fmt_double(s) << '\n';
    out << csv_quote(scope) << ',' << csv_quote(key) << ',' << n << ",proximity_error," << fmt_double(pe) << '\n';
  };
  emit("overall", "all", ids.size(), r2, spearman, proximity_error_mean);
  for (const auto& c : breakdowns) emit(c.by, c.key, c.n, c.r2, c.spearman, c.proximity_error_mean);
  return out.str();
}

std::string predictions_csv(const std::vector<std::string>& ids, const Matrix& Y, const Matrix& Yhat) {
  check_shapes(Y, Yhat, "predictions_csv");
  std::ostringstream out;
  out << "id";
  for (Eigen::Index j = 0; j < Y.cols(); ++j) out << ",y" << j;
  for (Eigen::Index j = 0; j < Y.cols(); ++j) out << ",yhat" << j;
  out << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << csv_quote(ids[i]);
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < Y.cols(); ++j) out << ',' << fmt_double(Y(r, j));
    for (Eigen::Index j = 0; j < Y.cols(); ++j) out << ',' << fmt_double(Yhat(r, j));
    out << '\n';
  }
  return out.str();
}

PredictionDump parse_predictions_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty prediction dump");
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "id" || header.size() % 2 == 0)
    throw DataError(source + ": header must be id,y0..,yhat0..");
  const std::size_t t = (header.size() - 1) / 2;
  std::vector<std::vector<double>> vals;
  PredictionDump dump;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) + " cells");
    dump.ids.push_back(cells[0]);
    std::vector<double> row;
    for (std::size_t c = 1; c < cells.size(); ++c) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cells[c], &used));
        if (used != cells[c].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw DataError(source + ":" + std::to_string(line_no) + ": bad number '" + cells[c] + "'");
      }
    }
    vals.push_back(std::move(row));
  }
  const auto m = static_cast<Eigen::Index>(vals.size());
  dump.y.resize(m, static_cast<Eigen::Index>(t));
  dump.yhat.resize(m, static_cast<Eigen::Index>(t));
  for (Eigen::Index i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      dump.y(i, static_cast<Eigen::Index>(j)) = vals[i][j];
      dump.yhat(i, static_cast<Eigen::Index>(j)) = vals[i][t + j];
    }
  }
  return dump;
}

}  // namespace worldprobe
