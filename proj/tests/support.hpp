#pragma once

#include <Eigen/Dense>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "flexmarket/grid.hpp"
#include "flexmarket/types.hpp"

namespace fmtest {

using flexmarket::ConsumerProfile;
using flexmarket::grid::Bus;
using flexmarket::grid::DistributionNetwork;
using flexmarket::grid::Line;

inline ConsumerProfile player(int id, int bus, double a, double b, double x_hat, double d = 0.0) {
  return ConsumerProfile{id, bus, a, b, x_hat, d, true};
}

inline ConsumerProfile passive(int id, int bus, double d) { return ConsumerProfile{id, bus, 0.0, 0.0, 0.0, d, false}; }

/// Buses 1..B with wide bounds.
inline std::vector<Bus> wide_buses(int count, double vmin = 0.5, double vmax = 1.5) {
  std::vector<Bus> buses;
  for (int b = 1; b <= count; ++b) buses.push_back(Bus{b, vmin, vmax, -1.5, 1.5, 0.0});
  return buses;
}

/// Slack plus one load bus joined by a line with huge capacity.
inline DistributionNetwork two_bus(double z = 1e3) {
  return DistributionNetwork(wide_buses(2), {Line{1, 2, 2.0, -4.0, z}});
}

/// Radial feeder 1 - 2 - ... - B.
inline DistributionNetwork feeder(int count, double u, double w, double z, double vmin = 0.5, double vmax = 1.5) {
  std::vector<Line> lines;
  for (int b = 1; b < count; ++b) lines.push_back(Line{b, b + 1, u, w, z});
  return DistributionNetwork(wide_buses(count, vmin, vmax), lines);
}

/// Five-bus feeder whose last line (4 -> 5) is tight; the cheapest player
/// sits behind it at bus 5.
struct Congested {
  DistributionNetwork net{wide_buses(5, 0.9, 1.1),
                          {Line{1, 2, 4.0, -8.0, 1.0}, Line{2, 3, 4.0, -8.0, 1.0}, Line{3, 4, 4.0, -8.0, 1.0},
                           Line{4, 5, 4.0, -8.0, 0.02}}};
  std::vector<ConsumerProfile> consumers{player(1, 3, 0.004, 0.40, 120, 5), player(2, 5, 0.004, 0.35, 120, 5),
                                         player(3, 4, 0.005, 0.42, 120, 10), passive(4, 2, 15)};
};

/// Players with costs drawn as in the sweep campaigns.
inline std::vector<ConsumerProfile> random_players(int n, std::mt19937_64& rng, double x_hat = 1e3, int buses = 2) {
  std::uniform_real_distribution<double> a(0.003, 0.005), b(0.35, 0.45);
  std::uniform_int_distribution<int> bus(2, buses);
  std::vector<ConsumerProfile> out;
  for (int i = 0; i < n; ++i) {
    const double ai = a(rng), bi = b(rng);
    out.push_back(player(i + 1, bus(rng), ai, bi, x_hat));
  }
  return out;
}

inline Eigen::VectorXd uniform_vector(Eigen::Index n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

/// Net cost of player n with price and allocation substituted from the
/// clearing rule, written out independently of the library.
inline double net_cost(const std::vector<ConsumerProfile>& ps, const Eigen::VectorXd& beta, Eigen::Index n, double alpha,
                double x_tot) {
  const double N = static_cast<double>(beta.size());
  const double gap = x_tot - beta.sum();
  const double x = gap / N + beta(n);
  const auto& p = ps[static_cast<std::size_t>(n)];
  return 0.5 * p.a * x * x + p.b_lin * x - (gap + N * beta(n)) * gap / (alpha * N * N);
}

inline std::filesystem::path scenario_dir(const std::string& name) {
  return std::filesystem::path(FLEXMARKET_SCENARIO_ROOT) / name;
}

/// Private copy of a shipped scenario that a test may edit; removed on exit.
class TempScenario {
 public:
  explicit TempScenario(const std::string& name, const std::string& tag) {
    static int counter = 0;
    dir_ = std::filesystem::temp_directory_path() /
           ("flexmarket-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
    std::filesystem::copy(scenario_dir(name), dir_, std::filesystem::copy_options::recursive);
  }
  ~TempScenario() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  TempScenario(const TempScenario&) = delete;
  TempScenario& operator=(const TempScenario&) = delete;

  const std::filesystem::path& dir() const { return dir_; }

  std::string read(const std::string& file) const {
    std::ifstream in(dir_ / file, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }
  void write(const std::string& file, const std::string& text) const {
    std::ofstream(dir_ / file, std::ios::binary) << text;
  }
  /// Replaces the first occurrence of `from`; the test fails loudly if absent.
  bool replace(const std::string& file, const std::string& from, const std::string& to) const {
    std::string t = read(file);
    const auto pos = t.find(from);
    if (pos == std::string::npos) return false;
    t.replace(pos, from.size(), to);
    write(file, t);
    return true;
  }

 private:
  std::filesystem::path dir_;
};

}  // namespace fmtest
