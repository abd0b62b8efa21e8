#pragma once

// Scenario directories: scenario.json plus buses.csv, lines.csv and
// consumers.csv (header row required, dot decimals, UTF-8).

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flexmarket/error.hpp"
#include "flexmarket/game.hpp"
#include "flexmarket/grid.hpp"
#include "flexmarket/types.hpp"

namespace flexmarket::io {

namespace fs = std::filesystem;

struct LoadedScenario {
  fs::path dir;
  MarketScenario scenario;
  grid::DistributionNetwork network;
  std::vector<ConsumerProfile> consumers;
};

/// Rows of a CSV file keyed by header name.
class CsvTable {
 public:
  static CsvTable read(const fs::path& path, const std::vector<std::string>& required) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::schema, "cannot open " + path.string());
    CsvTable t;
    t.path_ = path.string();
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::schema, t.path_ + ": missing header row");
    strip_bom(line);
    t.header_ = split(line);
    for (std::size_t i = 0; i < t.header_.size(); ++i) t.col_[t.header_[i]] = i;
    for (const auto& r : required)
      require(t.col_.count(r) == 1, ErrorKind::schema, t.path_ + ": missing column '" + r + "'");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      auto cells = split(line);
      require(cells.size() == t.header_.size(), ErrorKind::schema,
              t.path_ + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header_.size()) + " fields");
      t.rows_.push_back(std::move(cells));
      t.lines_.push_back(lineno);
    }
    return t;
  }

  std::size_t size() const { return rows_.size(); }

  double number(std::size_t row, const std::string& col) const {
    const std::string& s = cell(row, col);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == s.size() && !s.empty() && std::isfinite(v), ErrorKind::schema,
            where(row) + ": column '" + col + "' is not a finite decimal number: '" + s + "'");
    return v;
  }

  int integer(std::size_t row, const std::string& col) const {
    const double v = number(row, col);
    require(v == std::floor(v) && std::abs(v) < 1e9, ErrorKind::schema,
            where(row) + ": column '" + col + "' must be an integer");
    return static_cast<int>(v);
  }

  bool flag(std::size_t row, const std::string& col) const {
    const std::string& s = cell(row, col);
    if (s == "1" || s == "true") return true;
    if (s == "0" || s == "false") return false;
    throw Error(ErrorKind::schema, where(row) + ": column '" + col + "' must be 0/1 or true/false");
  }

  std::string where(std::size_t row) const { return path_ + ":" + std::to_string(lines_.at(row)); }

 private:
  const std::string& cell(std::size_t row, const std::string& col) const {
    return rows_.at(row).at(col_.at(col));
  }

  static void strip_bom(std::string& s) {
    if (s.size() >= 3 && s.compare(0, 3, "\xEF\xBB\xBF") == 0) s.erase(0, 3);
    if (!s.empty() && s.back() == '\r') s.pop_back();
  }

  static std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t");
      const auto e = cell.find_last_not_of(" \t");
      out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
  }

  std::string path_;
  std::vector<std::string> header_;
  std::map<std::string, std::size_t> col_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::size_t> lines_;
};

inline std::vector<grid::Bus> read_buses(const fs::path& path) {
  const auto t = CsvTable::read(path, {"id", "vmin", "vmax", "theta_min", "theta_max", "q_injection"});
  std::vector<grid::Bus> buses;
  std::set<int> ids;
  for (std::size_t r = 0; r < t.size(); ++r) {
    grid::Bus b;
    b.id = t.integer(r, "id");
    b.vmin = t.number(r, "vmin");
    b.vmax = t.number(r, "vmax");
    b.theta_min = t.number(r, "theta_min");
    b.theta_max = t.number(r, "theta_max");
    b.reactive_injection = t.number(r, "q_injection");
    require(ids.insert(b.id).second, ErrorKind::schema, t.where(r) + ": duplicate bus id");
    require(b.vmin < b.vmax && b.theta_min < b.theta_max, ErrorKind::schema, t.where(r) + ": empty voltage or angle range");
    buses.push_back(b);
  }
  return buses;
}

inline std::vector<grid::Line> read_lines(const fs::path& path, const std::set<int>& bus_ids) {
  const auto t = CsvTable::read(path, {"from", "to", "u", "w", "z"});
  std::vector<grid::Line> lines;
  for (std::size_t r = 0; r < t.size(); ++r) {
    grid::Line l;
    l.from = t.integer(r, "from");
    l.to = t.integer(r, "to");
    l.u = t.number(r, "u");
    l.w = t.number(r, "w");
    l.z = t.number(r, "z");
    require(bus_ids.count(l.from) && bus_ids.count(l.to), ErrorKind::reference,
            t.where(r) + ": line references an unknown bus");
    require(l.z > 0.0, ErrorKind::schema, t.where(r) + ": capacity z must be positive");
    lines.push_back(l);
  }
  return lines;
}

inline std::vector<ConsumerProfile> read_consumers(const fs::path& path, const std::set<int>& bus_ids) {
  const auto t = CsvTable::read(path, {"id", "bus", "active", "a", "b_lin", "x_hat", "d"});
  std::vector<ConsumerProfile> out;
  std::set<int> ids;
  for (std::size_t r = 0; r < t.size(); ++r) {
    ConsumerProfile c;
    c.id = t.integer(r, "id");
    c.bus_id = t.integer(r, "bus");
    c.active = t.flag(r, "active");
    c.a = t.number(r, "a");
    c.b_lin = t.number(r, "b_lin");
    c.x_hat = t.number(r, "x_hat");
    c.d = t.number(r, "d");
    require(ids.insert(c.id).second, ErrorKind::schema, t.where(r) + ": duplicate consumer id");
    require(bus_ids.count(c.bus_id) == 1, ErrorKind::reference,
            t.where(r) + ": consumer " + std::to_string(c.id) + " references unknown bus " + std::to_string(c.bus_id));
    require(c.bus_id != 1, ErrorKind::reference, t.where(r) + ": consumers cannot attach to the slack bus");
    require(c.a >= 0.0, ErrorKind::schema, t.where(r) + ": cost curvature a must be nonnegative");
    if (c.active) {
      require(c.x_hat > 0.0, ErrorKind::schema, t.where(r) + ": active consumers need x_hat > 0");
      require(c.b_lin >= 0.0, ErrorKind::schema, t.where(r) + ": linear cost must be nonnegative");
    }
    out.push_back(c);
  }
  return out;
}

namespace detail {

template <typename T>
T get(const nlohmann::json& j, const char* key, const std::string& file) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, file + ": field '" + key + "': " + e.what());
  }
}

}  // namespace detail

inline const std::set<std::string>& scenario_keys() {
  static const std::set<std::string> keys{
      "x_tot", "direction", "alpha", "delta", "kappa", "rho", "nu", "beta0", "gamma0", "stop_tol", "max_iter",
      "seed", "network_enabled", "interval_hours", "base_mva", "sweep", "files", "description"};
  return keys;
}

/// Parses scenario.json. File-name overrides (relative to the scenario
/// directory) are returned through `files`.
inline MarketScenario parse_scenario(const nlohmann::json& j, const std::string& file,
                                     std::map<std::string, std::string>* files = nullptr) {
  using detail::get;
  require(j.is_object(), ErrorKind::schema, file + ": top level must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    require(scenario_keys().count(it.key()) == 1, ErrorKind::schema, file + ": unknown field '" + it.key() + "'");
  MarketScenario s;
  s.x_tot = get<double>(j, "x_tot", file);
  require(s.x_tot > 0.0, ErrorKind::schema, file + ": x_tot must be positive");
  s.direction = parse_direction(get<std::string>(j, "direction", file));
  if (j.contains("alpha")) s.alpha = get<double>(j, "alpha", file);
  if (j.contains("delta")) s.delta = get<double>(j, "delta", file);
  require(s.alpha.has_value() != s.delta.has_value(), ErrorKind::schema, file + ": give exactly one of alpha and delta");
  if (j.contains("kappa")) s.kappa = get<double>(j, "kappa", file);
  if (j.contains("rho")) s.rho = get<double>(j, "rho", file);
  if (j.contains("nu")) s.nu = get<double>(j, "nu", file);
  if (j.contains("beta0")) s.beta0 = get<std::vector<double>>(j, "beta0", file);
  if (j.contains("gamma0")) s.gamma0 = get<std::vector<double>>(j, "gamma0", file);
  if (j.contains("stop_tol")) s.stop_tol = get<double>(j, "stop_tol", file);
  if (j.contains("max_iter")) s.max_iter = get<std::uint64_t>(j, "max_iter", file);
  if (j.contains("seed")) s.seed = get<std::uint64_t>(j, "seed", file);
  if (j.contains("network_enabled")) s.network_enabled = get<bool>(j, "network_enabled", file);
  if (j.contains("interval_hours")) s.interval_hours = get<double>(j, "interval_hours", file);
  if (j.contains("base_mva")) s.base_mva = get<double>(j, "base_mva", file);
  require(s.stop_tol > 0.0, ErrorKind::schema, file + ": stop_tol must be positive");
  require(s.interval_hours > 0.0 && s.base_mva > 0.0, ErrorKind::schema,
          file + ": interval_hours and base_mva must be positive");
  if (j.contains("sweep")) {
    const auto& sw = j.at("sweep");
    s.sweep.n_values = get<std::vector<int>>(sw, "n_values", file);
    s.sweep.delta_values = get<std::vector<double>>(sw, "delta_values", file);
  }
  if (j.contains("files") && files) {
    for (auto it = j.at("files").begin(); it != j.at("files").end(); ++it) {
      require(it.key() == "buses" || it.key() == "lines" || it.key() == "consumers", ErrorKind::schema,
              file + ": unknown file key '" + it.key() + "'");
      (*files)[it.key()] = it.value().get<std::string>();
    }
  }
  return s;
}

/// Loads and validates a scenario directory. Throws Error with kind schema,
/// reference or game_condition.
inline LoadedScenario load_scenario(const fs::path& dir) {
  const fs::path json_path = dir / "scenario.json";
  std::ifstream in(json_path);
  require(in.good(), ErrorKind::schema, "cannot open " + json_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, json_path.string() + ": " + e.what());
  }
  std::map<std::string, std::string> files{{"buses", "buses.csv"}, {"lines", "lines.csv"}, {"consumers", "consumers.csv"}};
  MarketScenario s = parse_scenario(j, json_path.string(), &files);

  auto buses = read_buses(dir / files["buses"]);
  std::set<int> ids;
  for (const auto& b : buses) ids.insert(b.id);
  auto lines = read_lines(dir / files["lines"], ids);
  auto consumers = read_consumers(dir / files["consumers"], ids);

  std::optional<grid::DistributionNetwork> net;
  try {
    net.emplace(std::move(buses), std::move(lines));
  } catch (const Error& e) {
    throw Error(ErrorKind::schema, dir.string() + ": " + e.what());
  }

  // Game conditions: slope, existence bound, manual step sizes.
  const auto players = active_only(consumers);
  require(players.size() >= 2, ErrorKind::game_condition, "scenario needs at least two active consumers");
  if (s.delta)
    require(*s.delta > 0.0 && *s.delta < 1.0, ErrorKind::game_condition,
            "delta = " + std::to_string(*s.delta) + " is outside the open interval (0, 1)");
  const double alpha = game::resolve_alpha(s, players);
  const auto c = game::constants(players, alpha, s.kappa);
  require(s.rho.has_value() == s.nu.has_value(), ErrorKind::schema, "give both rho and nu or neither");
  if (s.rho) game::validate_step_sizes(c, {*s.rho, *s.nu});
  if (!s.network_enabled) {
    double cap = 0.0;
    for (const auto& p : players) cap += p.x_hat;
    require(cap >= s.x_tot, ErrorKind::game_condition,
            "sum of x_hat (" + std::to_string(cap) + ") is below x_tot (" + std::to_string(s.x_tot) + ")");
  }
  return LoadedScenario{dir, s, std::move(*net), std::move(consumers)};
}

}  // namespace flexmarket::io
