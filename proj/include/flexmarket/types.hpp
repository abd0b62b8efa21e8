#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flexmarket/error.hpp"

namespace flexmarket {

/// Sign of the real-time mismatch. In a deficit active consumers inject
/// extra power; in a surplus they withdraw it.
enum class Direction { deficit, surplus };

inline const char* to_string(Direction d) {
  return d == Direction::deficit ? "deficit" : "surplus";
}

inline Direction parse_direction(const std::string& s) {
  if (s == "deficit") return Direction::deficit;
  if (s == "surplus") return Direction::surplus;
  throw Error(ErrorKind::schema, "direction must be 'deficit' or 'surplus', got '" + s + "'");
}

/// A consumer attached to the distribution network. Cost is
/// C(x) = 0.5 * a * x^2 + b_lin * x on [0, x_hat]; energies are in kWh.
struct ConsumerProfile {
  int id = 0;
  int bus_id = 0;
  double a = 0.0;      // $/(kWh)^2
  double b_lin = 0.0;  // $/kWh
  double x_hat = 0.0;  // kWh, maximum flexibility
  double d = 0.0;      // kWh, predicted net active load
  bool active = false;
};

inline std::vector<ConsumerProfile> active_only(const std::vector<ConsumerProfile>& all) {
  std::vector<ConsumerProfile> out;
  for (const auto& c : all)
    if (c.active) out.push_back(c);
  return out;
}

struct SweepGrid {
  std::vector<int> n_values;
  std::vector<double> delta_values;
};

/// Public market data for one balancing interval.
struct MarketScenario {
  double x_tot = 0.0;  // kWh, required flexibility
  Direction direction = Direction::deficit;
  std::optional<double> alpha;
  std::optional<double> delta;
  std::optional<double> kappa;  // override, must dominate max_n a_n
  std::optional<double> rho;    // manual step sizes (validated)
  std::optional<double> nu;
  std::vector<double> beta0;  // empty => zeros
  std::vector<double> gamma0;
  double stop_tol = 1e-5;
  std::uint64_t max_iter = 100000;
  std::uint64_t seed = 1;
  bool network_enabled = true;
  double interval_hours = 1.0;
  double base_mva = 1.0;
  SweepGrid sweep;

  /// Converts kWh over the interval into per-unit active power.
  double kwh_to_pu() const { return 1.0 / (interval_hours * base_mva * 1000.0); }
};

}  // namespace flexmarket
