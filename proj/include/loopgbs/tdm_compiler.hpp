#pragma once

// Time-domain loop interferometer: programs, compilation to transfer matrices,
// and band-structure diagnostics.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopgbs/core.hpp"
#include "loopgbs/rng.hpp"

namespace loopgbs {

struct LoopSpec {
  std::vector<int> delays{1, 6, 36};   // in time bins, shortest loop first
  double bin_separation_ns = 167.0;    // metadata only
  std::vector<double> static_phases{0.0, 0.0, 0.0};

  std::size_t loop_count() const { return delays.size(); }
  int total_delay() const { return std::accumulate(delays.begin(), delays.end(), 0); }

  void validate() const {
    require(!delays.empty(), ErrorKind::program, "delays: at least one loop required");
    for (std::size_t i = 0; i < delays.size(); ++i) {
      require(delays[i] >= 1, ErrorKind::program, "delays: every delay must be >= 1");
      if (i > 0)
        require(delays[i] > delays[i - 1], ErrorKind::program, "delays: must be strictly increasing");
    }
    require(static_phases.size() == delays.size(), ErrorKind::program,
            "static_phases: expected one phase per loop");
    for (double phi : static_phases) {
      require(std::isfinite(phi), ErrorKind::input, "static_phases: non-finite value");
      require(phi > -kPi && phi <= kPi, ErrorKind::program, "static_phases: each must lie in (-pi, pi]");
    }
  }
};

struct CircuitProgram {
  LoopSpec loops;
  int n_physical_modes = 259;
  int n_logical_modes = 216;
  int fill_modes = 43;
  // [loop][bin]
  std::vector<std::vector<double>> bs_transmissivity;
  std::vector<std::vector<double>> phase;

  void validate() const {
    loops.validate();
    require(n_physical_modes > 0 && n_logical_modes > 0, ErrorKind::program,
            "n_physical_modes: mode counts must be positive");
    require(fill_modes >= 0, ErrorKind::program, "fill_modes: must be non-negative");
    require(n_physical_modes == n_logical_modes + fill_modes, ErrorKind::program,
            "n_physical_modes: must equal n_logical_modes + fill_modes");
    const auto check_schedule = [&](const std::vector<std::vector<double>>& sched, const char* key) {
      require(sched.size() == loops.loop_count(), ErrorKind::program,
              std::string(key) + ": expected one schedule per loop");
      for (const auto& row : sched)
        require(static_cast<int>(row.size()) == n_physical_modes, ErrorKind::program,
                std::string(key) + ": schedule length must equal n_physical_modes");
    };
    check_schedule(bs_transmissivity, "bs_transmissivity");
    check_schedule(phase, "phase");
    for (const auto& row : bs_transmissivity)
      for (double t : row) {
        require(std::isfinite(t), ErrorKind::input, "bs_transmissivity: non-finite value");
        require(t >= 0.0 && t <= 1.0, ErrorKind::program, "bs_transmissivity: entries must lie in [0, 1]");
      }
    for (const auto& row : phase)
      for (double p : row) {
        require(std::isfinite(p), ErrorKind::input, "phase: non-finite value");
        require(p >= -kPi / 2 && p <= kPi / 2, ErrorKind::program, "phase: entries must lie in [-pi/2, pi/2]");
      }
  }
};

/// Rows are output bins, columns are input bins.
struct TransferMatrix {
  MatrixXc entries;
  bool lossless = false;

  Eigen::Index size() const { return entries.rows(); }
};

/// Largest |(T^dagger T - I)_ij|.
inline double unitarity_deviation(const MatrixXc& t) {
  return (t.adjoint() * t - MatrixXc::Identity(t.cols(), t.cols())).cwiseAbs().maxCoeff();
}

inline double max_singular_value(const MatrixXc& t) {
  if (t.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXc> svd(t);
  return svd.singularValues()(0);
}

/// Largest modulus strictly above the diagonal (zero for a causal matrix).
inline double acausal_magnitude(const MatrixXc& t) {
  double worst = 0.0;
  for (Eigen::Index j = 1; j < t.cols(); ++j)
    for (Eigen::Index i = 0; i < std::min(j, t.rows()); ++i) worst = std::max(worst, std::abs(t(i, j)));
  return worst;
}

inline CircuitProgram uniform_program(LoopSpec loops, int n_logical, int fill, double transmissivity,
                                      double phase = 0.0) {
  CircuitProgram p;
  p.loops = std::move(loops);
  p.n_logical_modes = n_logical;
  p.fill_modes = fill;
  p.n_physical_modes = n_logical + fill;
  p.bs_transmissivity.assign(p.loops.loop_count(), std::vector<double>(p.n_physical_modes, transmissivity));
  p.phase.assign(p.loops.loop_count(), std::vector<double>(p.n_physical_modes, phase));
  p.validate();
  return p;
}

/// Random program: transmissivities uniform in [t_lo, t_hi], tunable phases
/// uniform over their full range.
inline CircuitProgram random_program(LoopSpec loops, int n_logical, int fill, std::uint64_t seed,
                                     double t_lo = 0.4, double t_hi = 0.6) {
  require(0.0 <= t_lo && t_lo <= t_hi && t_hi <= 1.0, ErrorKind::input, "transmissivity range must lie in [0, 1]");
  CircuitProgram p = uniform_program(std::move(loops), n_logical, fill, 1.0);
  KeyedRng rng(seed, 0, RngStage::program);
  std::uniform_real_distribution<double> bs(t_lo, t_hi);
  std::uniform_real_distribution<double> ph(-kPi / 2, kPi / 2);
  for (auto& row : p.bs_transmissivity)
    for (double& t : row) t = bs(rng);
  for (auto& row : p.phase)
    for (double& x : row) x = ph(rng);
  return p;
}

namespace detail {

// Gate-by-gate composition over n_physical bins followed by one block of
// delay-d memory slots per loop. Slot (t mod d) of a loop holds the light that
// entered d bins before bin t.
inline MatrixXc compose_loops(const CircuitProgram& program, std::span<const double> loop_efficiency) {
  program.validate();
  const auto& loops = program.loops;
  require(loop_efficiency.size() == loops.loop_count(), ErrorKind::input,
          "loop_efficiencies: expected one value per loop");
  for (double eta : loop_efficiency)
    require(std::isfinite(eta) && eta >= 0.0 && eta <= 1.0, ErrorKind::input,
            "loop_efficiencies: values must lie in [0, 1]");

  const int m = program.n_physical_modes;
  const int dim = m + loops.total_delay();
  MatrixXc u = MatrixXc::Identity(dim, dim);
  const cplx I(0.0, 1.0);

  int base = m;
  for (std::size_t l = 0; l < loops.loop_count(); ++l) {
    const int d = loops.delays[l];
    const cplx exit_factor = std::polar(std::sqrt(loop_efficiency[l]), loops.static_phases[l]);
    for (int t = 0; t < m; ++t) {
      const int slot = base + t % d;
      u.row(t) *= std::polar(1.0, program.phase[l][t]);
      u.row(slot) *= exit_factor;
      const double tr = program.bs_transmissivity[l][t];
      const double c = std::sqrt(tr);
      const double s = std::sqrt(1.0 - tr);
      const Eigen::RowVectorXcd through = u.row(t);
      const Eigen::RowVectorXcd memory = u.row(slot);
      u.row(t) = c * through + I * s * memory;
      u.row(slot) = I * s * through + c * memory;
    }
    base += d;
  }
  return u;
}

inline std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

}  // namespace detail

/// Full map over (bins + loop memory slots); memory inputs start in vacuum and
/// memory outputs hold whatever is still circulating after the last bin.
/// Exactly unitary when every loop efficiency is 1.
inline TransferMatrix compile_extended(const CircuitProgram& program,
                                       std::optional<std::vector<double>> loop_efficiencies = std::nullopt) {
  const auto effs = loop_efficiencies.value_or(detail::ones(program.loops.loop_count()));
  TransferMatrix t{detail::compose_loops(program, effs), false};
  t.lossless = std::all_of(effs.begin(), effs.end(), [](double e) { return e == 1.0; });
  return t;
}

/// Causal n_physical x n_physical map between time bins. Light still inside a
/// loop after the final bin is lost, so this is unitary only when nothing enters
/// the loops; `lossless` reports that numerically.
inline TransferMatrix compile_unitary(const CircuitProgram& program) {
  const int m = program.n_physical_modes;
  const auto ext = compile_extended(program);
  TransferMatrix t{ext.entries.topLeftCorner(m, m), false};
  t.lossless = unitarity_deviation(t.entries) <= 1e-10;
  return t;
}

/// As compile_unitary, with each loop's efficiency applied once per traversal
/// of its delay line.
inline TransferMatrix compile_with_loop_loss(const CircuitProgram& program,
                                             const std::vector<double>& loop_efficiencies) {
  const int m = program.n_physical_modes;
  const auto ext = compile_extended(program, loop_efficiencies);
  TransferMatrix t{ext.entries.topLeftCorner(m, m), false};
  t.lossless = unitarity_deviation(t.entries) <= 1e-10;
  return t;
}

/// Drops the first fill_modes rows and columns.
inline TransferMatrix truncate_to_logical(const TransferMatrix& t, const CircuitProgram& program) {
  require(program.fill_modes < program.n_physical_modes, ErrorKind::input,
          "fill_modes: must be smaller than n_physical_modes");
  require(t.entries.rows() == program.n_physical_modes && t.entries.cols() == program.n_physical_modes,
          ErrorKind::input, "transfer matrix does not have n_physical_modes dimensions");
  if (program.fill_modes == 0) return t;
  const int f = program.fill_modes;
  const int n = program.n_physical_modes - f;
  TransferMatrix out{t.entries.block(f, f, n, n), false};
  out.lossless = unitarity_deviation(out.entries) <= 1e-10;
  return out;
}

/// Mean |T(i, i-k)| for every sub-diagonal offset k.
inline std::vector<double> connectivity_profile(const TransferMatrix& t) {
  const auto n = std::min(t.entries.rows(), t.entries.cols());
  std::vector<double> profile(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index k = 0; k < n; ++k) {
    double sum = 0.0;
    for (Eigen::Index i = k; i < n; ++i) sum += std::abs(t.entries(i, i - k));
    profile[static_cast<std::size_t>(k)] = sum / static_cast<double>(n - k);
  }
  return profile;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json program_to_json(const CircuitProgram& p) {
  nlohmann::json j;
  j["delays"] = p.loops.delays;
  j["static_phases"] = p.loops.static_phases;
  j["bin_separation_ns"] = p.loops.bin_separation_ns;
  j["n_physical_modes"] = p.n_physical_modes;
  j["fill_modes"] = p.fill_modes;
  j["bs_transmissivity"] = p.bs_transmissivity;
  j["phase"] = p.phase;
  return j;
}

inline CircuitProgram program_from_json(const nlohmann::json& j) {
  const auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.is_object() || !j.contains(key)) fail(ErrorKind::program, std::string(key) + ": missing key");
    return j.at(key);
  };
  CircuitProgram p;
  try {
    p.loops.delays = need("delays").get<std::vector<int>>();
    p.loops.static_phases = need("static_phases").get<std::vector<double>>();
    if (j.contains("bin_separation_ns")) p.loops.bin_separation_ns = j.at("bin_separation_ns").get<double>();
    p.n_physical_modes = need("n_physical_modes").get<int>();
    p.fill_modes = need("fill_modes").get<int>();
    p.bs_transmissivity = need("bs_transmissivity").get<std::vector<std::vector<double>>>();
    p.phase = need("phase").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::program, std::string("malformed program document: ") + e.what());
  }
  p.n_logical_modes = p.n_physical_modes - p.fill_modes;
  if (j.contains("n_logical_modes"))
    require(j.at("n_logical_modes").get<int>() == p.n_logical_modes, ErrorKind::program,
            "n_logical_modes: inconsistent with n_physical_modes - fill_modes");
  p.validate();
  return p;
}

/// Fingerprint of the canonical JSON form.
inline std::string program_hash(const CircuitProgram& p) { return hex64(fnv1a(program_to_json(p).dump())); }

inline CircuitProgram load_program(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::input, "cannot open program file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::program, std::string("program file is not valid JSON: ") + e.what());
  }
  return program_from_json(j);
}

inline void save_program(const CircuitProgram& p, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::input, "cannot write " + path);
  out << program_to_json(p).dump(1) << '\n';
}

/// Row-major CSV, each entry written as a `re,im` pair.
inline void write_matrix_csv(std::ostream& os, const MatrixXc& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j).real()) << ',' << format_double(m(i, j).imag());
    }
    os << '\n';
  }
}

inline MatrixXc read_matrix_csv(std::istream& is) {
  std::vector<std::vector<cplx>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    require(vals.size() % 2 == 0, ErrorKind::input, "matrix CSV rows must hold re,im pairs");
    std::vector<cplx> row;
    for (std::size_t k = 0; k < vals.size(); k += 2) row.emplace_back(vals[k], vals[k + 1]);
    rows.push_back(std::move(row));
  }
  MatrixXc m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(static_cast<Eigen::Index>(rows[i].size()) == m.cols(), ErrorKind::input, "ragged matrix CSV");
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

}  // namespace loopgbs
