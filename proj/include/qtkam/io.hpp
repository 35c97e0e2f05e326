#pragma once

#include "qtkam/kam.hpp"
#include "qtkam/params.hpp"
#include "qtkam/series.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace qtkam {

using json = nlohmann::json;

struct Config {
  Problem problem;
  LatticeParams lp;
  double r = 0.1, s = 0.5, rho = 0.1, gamma = 1e-3;
  std::int64_t K = 3;
  int degree_max = 4;
  std::vector<std::pair<double, double>> xi_box;
  int xi_grid_per_dim = 3;
  double schedule_c = 1;
  std::uint64_t seed = 12345;
  std::string source;  // canonical JSON text the hash is taken over

  Grid grid() const;
};

// Missing fields keep their defaults; unknown fields are rejected.
Config config_from_json(const json& j);
Config load_config(const std::string& path);
json config_to_json(const Config& c);

std::uint64_t fnv1a64(const std::string& data);
std::string hex64(std::uint64_t h);

// JSONL: one header line, then one term per line in monomial order.
void write_series(std::ostream& os, const GSeries& F);
void write_series(std::ostream& os, const XSeries& F);
// Reads either coefficient kind; exact input is converted when a grid series is requested.
GSeries read_grid_series(std::istream& is);
XSeries read_exact_series(std::istream& is);
std::string series_kind(std::istream& is);  // peeks at the header: "grid" or "exact"

json monomial_to_json(const Monomial& m);
// Class table (h, subspace id, representative, coefficient) and the difference series; the error part is weight * error.
json qt_decomposition_to_json(const QTDecomposition<GridCoeff>& dec);
Monomial monomial_from_json(const json& j, int b);

struct RunReport {
  std::string command;
  std::vector<std::string> argv;
  std::string config_hash;
  std::vector<std::string> outputs;
  double timing_seconds = 0;
  std::vector<std::string> warnings;
  json results = json::object();

  json to_json() const;
};

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace qtkam
