#pragma once

// File formats for the command-line front end. Measures are JSON
// {"points": [[...], ...], "weights": [...]} or CSV rows (coordinates then
// weight); grid densities are {"grid": [...], "density": [...]}; plans are
// sparse triplets. Output is canonical JSON: sorted keys, shortest
// round-trip doubles.

#include "ot/gaussian.hpp"
#include "ot/measures.hpp"
#include "ot/w1.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace ot::io {

using Json = nlohmann::json;

namespace detail {

[[noreturn]] inline void malformed(const std::string& what) { throw Error(ErrorCode::malformed_input, what); }

inline double number(const Json& j, const char* who) {
  if (!j.is_number()) malformed(std::string(who) + ": expected a number");
  return j.get<double>();
}

}  // namespace detail

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::malformed("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Json parse_json(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    detail::malformed(origin + ": " + e.what());
  }
}

inline Json read_json(const std::string& path) { return parse_json(read_file(path), path); }

inline Vector vector_from_json(const Json& j, const char* who) {
  if (!j.is_array()) detail::malformed(std::string(who) + ": expected an array");
  Vector v(Index(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v[Index(k)] = detail::number(j[k], who);
  return v;
}

/// Rows of equal length; a flat array of numbers is read as one column.
inline Matrix matrix_from_json(const Json& j, const char* who) {
  if (!j.is_array()) detail::malformed(std::string(who) + ": expected an array of rows");
  if (!j.empty() && j.front().is_number()) {
    const Vector v = vector_from_json(j, who);
    return Matrix(v);
  }
  const std::size_t rows = j.size();
  const std::size_t cols = rows ? j.front().size() : 0;
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) detail::malformed(std::string(who) + ": ragged rows");
    for (std::size_t c = 0; c < cols; ++c) m(Index(r), Index(c)) = detail::number(j[r][c], who);
  }
  return m;
}

inline Json to_json(const Vector& v) {
  Json j = Json::array();
  for (Index k = 0; k < v.size(); ++k) j.push_back(v[k]);
  return j;
}

inline Json to_json(const Matrix& m) {
  Json j = Json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(std::move(row));
  }
  return j;
}

inline Json to_json(const std::vector<double>& v) { return Json(v); }

inline DiscreteMeasure measure_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("points") || !j.contains("weights"))
    detail::malformed("measure: expected {\"points\": ..., \"weights\": ...}");
  return DiscreteMeasure(matrix_from_json(j["points"], "measure points"), vector_from_json(j["weights"], "measure weights"));
}

inline Json to_json(const DiscreteMeasure& m) { return Json{{"points", to_json(m.points())}, {"weights", to_json(m.weights())}}; }

/// One atom per line: coordinates followed by the weight. Blank lines and
/// lines starting with '#' are skipped.
inline DiscreteMeasure measure_from_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        detail::malformed("measure csv: bad number '" + cell + "'");
      }
    }
    if (row.size() < 2) detail::malformed("measure csv: need at least one coordinate and a weight");
    if (!rows.empty() && row.size() != rows.front().size()) detail::malformed("measure csv: ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) detail::malformed("measure csv: no atoms");
  const Index n = Index(rows.size()), d = Index(rows.front().size()) - 1;
  Matrix p(n, d);
  Vector w(n);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < d; ++c) p(i, c) = rows[std::size_t(i)][std::size_t(c)];
    w[i] = rows[std::size_t(i)][std::size_t(d)];
  }
  return DiscreteMeasure(std::move(p), std::move(w));
}

inline std::string shortest(double x) {
  // nlohmann prints the shortest string that reads back to the same double.
  return Json(x).dump();
}

inline std::string measure_to_csv(const DiscreteMeasure& m) {
  std::string out;
  for (Index i = 0; i < m.size(); ++i) {
    for (Index c = 0; c < m.dim(); ++c) out += shortest(m.points()(i, c)) + ",";
    out += shortest(m.weights()[i]) + "\n";
  }
  return out;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline DiscreteMeasure read_measure(const std::string& path) {
  const std::string text = read_file(path);
  return ends_with(path, ".csv") ? measure_from_csv(text) : measure_from_json(parse_json(text, path));
}

inline GridDensity1D grid_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("grid") || !j.contains("density"))
    detail::malformed("grid density: expected {\"grid\": ..., \"density\": ...}");
  return GridDensity1D(vector_from_json(j["grid"], "grid"), vector_from_json(j["density"], "density"));
}

inline Json to_json(const GridDensity1D& g) { return Json{{"grid", to_json(g.grid())}, {"density", to_json(g.density())}}; }

inline GaussianMeasure gaussian_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("mean") || !j.contains("covariance"))
    detail::malformed("gaussian: expected {\"mean\": ..., \"covariance\": ...}");
  return GaussianMeasure(vector_from_json(j["mean"], "mean"), matrix_from_json(j["covariance"], "covariance"));
}

inline Json to_json(const GaussianMeasure& g) {
  return Json{{"mean", to_json(g.mean())}, {"covariance", to_json(g.covariance())}};
}

/// {"rows": n, "cols": m, "triplets": [[i, j, mass], ...]} over positive entries.
inline Json plan_to_json(const Matrix& p) {
  Json t = Json::array();
  for (Index i = 0; i < p.rows(); ++i)
    for (Index j = 0; j < p.cols(); ++j)
      if (p(i, j) != 0.0) t.push_back(Json::array({i, j, p(i, j)}));
  return Json{{"rows", p.rows()}, {"cols", p.cols()}, {"triplets", std::move(t)}};
}

inline Matrix plan_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("triplets"))
    detail::malformed("plan: expected {\"rows\", \"cols\", \"triplets\"}");
  const auto rows = j["rows"].get<Index>(), cols = j["cols"].get<Index>();
  if (rows < 0 || cols < 0) detail::malformed("plan: negative shape");
  Matrix p = Matrix::Zero(rows, cols);
  for (const auto& t : j["triplets"]) {
    if (!t.is_array() || t.size() != 3) detail::malformed("plan: triplets must be [i, j, mass]");
    const auto i = t[0].get<Index>(), k = t[1].get<Index>();
    if (i < 0 || i >= rows || k < 0 || k >= cols) detail::malformed("plan: triplet index out of range");
    p(i, k) = detail::number(t[2], "plan mass");
  }
  return p;
}

inline std::string plan_to_csv(const Matrix& p) {
  std::string out = "i,j,mass\n";
  for (Index i = 0; i < p.rows(); ++i)
    for (Index j = 0; j < p.cols(); ++j)
      if (p(i, j) != 0.0) out += std::to_string(i) + "," + std::to_string(j) + "," + shortest(p(i, j)) + "\n";
  return out;
}

/// {"nodes": n, "edges": [[u, v, length], ...], "imbalance": {"node": mass}}.
inline FlowGraph graph_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("nodes") || !j.contains("edges"))
    detail::malformed("graph: expected {\"nodes\", \"edges\", \"imbalance\"}");
  FlowGraph g;
  g.nodes = j["nodes"].get<Index>();
  if (g.nodes < 1) detail::malformed("graph: need at least one node");
  for (const auto& e : j["edges"]) {
    if (!e.is_array() || e.size() != 3) detail::malformed("graph: edges must be [u, v, length]");
    g.edges.push_back({e[0].get<Index>(), e[1].get<Index>(), detail::number(e[2], "edge length")});
  }
  g.imbalance = Vector::Zero(g.nodes);
  if (j.contains("imbalance")) {
    for (const auto& [key, value] : j["imbalance"].items()) {
      Index v = -1;
      try {
        std::size_t used = 0;
        v = Index(std::stol(key, &used));
        if (used != key.size()) v = -1;
      } catch (const std::exception&) {
      }
      if (v < 0 || v >= g.nodes) detail::malformed("graph: imbalance key '" + key + "' is not a node");
      g.imbalance[v] = detail::number(value, "imbalance");
    }
  }
  return g;
}

inline std::string dump(const Json& j) { return j.dump(); }

}  // namespace ot::io
