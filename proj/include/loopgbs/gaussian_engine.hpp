#pragma once

// Gaussian states in the quadrature picture (hbar = 2, vacuum covariance = I,
// ordering x_1..x_m, p_1..p_m), the five input families, propagation through
// lossy transfer matrices and analytic photon statistics.

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "loopgbs/core.hpp"
#include "loopgbs/tdm_compiler.hpp"

namespace loopgbs {

enum class InputKind { smsv, thermal, coherent, squashed, vacuum };

inline const char* to_string(InputKind k) {
  switch (k) {
    case InputKind::smsv: return "smsv";
    case InputKind::thermal: return "thermal";
    case InputKind::coherent: return "coherent";
    case InputKind::squashed: return "squashed";
    case InputKind::vacuum: return "vacuum";
  }
  return "?";
}

inline InputKind input_kind_from_string(const std::string& s) {
  if (s == "smsv") return InputKind::smsv;
  if (s == "thermal") return InputKind::thermal;
  if (s == "coherent") return InputKind::coherent;
  if (s == "squashed") return InputKind::squashed;
  if (s == "vacuum") return InputKind::vacuum;
  fail(ErrorKind::input, "unknown input kind '" + s + "'");
}

struct InputSpec {
  InputKind kind = InputKind::smsv;
  double squeezing = 0.0;  // shared by every mode
  int n_modes = 1;
};

class GaussianState {
 public:
  GaussianState() = default;
  GaussianState(VectorXd mean, MatrixXd cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    require(cov_.rows() == cov_.cols() && cov_.rows() % 2 == 0 && mean_.size() == cov_.rows(), ErrorKind::input,
            "Gaussian state needs a 2m mean and a 2m x 2m covariance");
  }

  static GaussianState vacuum(int modes) {
    return {VectorXd::Zero(2 * modes), MatrixXd::Identity(2 * modes, 2 * modes)};
  }

  int modes() const { return static_cast<int>(mean_.size() / 2); }
  const VectorXd& mean() const { return mean_; }
  const MatrixXd& cov() const { return cov_; }

  bool has_displacement(double tol = 1e-12) const { return mean_.size() > 0 && mean_.cwiseAbs().maxCoeff() > tol; }

  bool is_symmetric(double tol = 1e-10) const { return (cov_ - cov_.transpose()).cwiseAbs().maxCoeff() <= tol; }

  /// Smallest eigenvalue of sigma + i*Omega.
  double uncertainty_margin() const {
    const int m = modes();
    MatrixXc h = cov_.cast<cplx>();
    const cplx I(0.0, 1.0);
    for (int k = 0; k < m; ++k) {
      h(k, k + m) += I;
      h(k + m, k) -= I;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXc> es(h, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }

  bool is_physical(double tol = 1e-8) const { return is_symmetric() && uncertainty_margin() >= -tol; }

  /// sigma - I >= 0: a Glauber P-function exists.
  bool is_classical(double tol = 1e-8) const {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov_ - MatrixXd::Identity(cov_.rows(), cov_.cols()),
                                               Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -tol;
  }

 private:
  VectorXd mean_;
  MatrixXd cov_;
};

inline GaussianState prepare_input(const InputSpec& spec) {
  require(std::isfinite(spec.squeezing), ErrorKind::input, "squeezing must be finite");
  require(spec.squeezing >= 0.0, ErrorKind::input, "squeezing must be non-negative");
  require(spec.n_modes > 0, ErrorKind::input, "n_modes must be positive");
  const int m = spec.n_modes;
  const double s = spec.squeezing;
  const double sh2 = std::sinh(s) * std::sinh(s);
  VectorXd mean = VectorXd::Zero(2 * m);
  VectorXd var_x = VectorXd::Ones(m);
  VectorXd var_p = VectorXd::Ones(m);
  switch (spec.kind) {
    case InputKind::smsv:
      var_x.setConstant(std::exp(-2.0 * s));
      var_p.setConstant(std::exp(2.0 * s));
      break;
    case InputKind::thermal:
      var_x.setConstant(1.0 + 2.0 * sh2);
      var_p.setConstant(1.0 + 2.0 * sh2);
      break;
    case InputKind::squashed:
      var_p.setConstant(1.0 + 4.0 * sh2);
      break;
    case InputKind::coherent:
      mean.head(m).setConstant(2.0 * std::sinh(s));
      break;
    case InputKind::vacuum:
      break;
  }
  MatrixXd cov = MatrixXd::Zero(2 * m, 2 * m);
  cov.diagonal() << var_x, var_p;
  return {std::move(mean), std::move(cov)};
}

/// Real symplectic-form representation of a complex mode map.
inline MatrixXd quadrature_map(const MatrixXc& t) {
  const auto r = t.rows();
  const auto c = t.cols();
  MatrixXd s(2 * r, 2 * c);
  s.topLeftCorner(r, c) = t.real();
  s.topRightCorner(r, c) = -t.imag();
  s.bottomLeftCorner(r, c) = t.imag();
  s.bottomRightCorner(r, c) = t.real();
  return s;
}

/// Squared spectral norm, from the smaller Gram matrix.
inline double spectral_norm_squared(const MatrixXc& t) {
  if (t.size() == 0) return 0.0;
  const MatrixXc g = t.rows() <= t.cols() ? MatrixXc(t * t.adjoint()) : MatrixXc(t.adjoint() * t);
  Eigen::SelfAdjointEigenSolver<MatrixXc> es(g, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

/// Propagates through a (possibly rectangular, lossy) map; the vacuum term
/// I - S S^T fills the lost fraction.
inline GaussianState evolve(const GaussianState& state, const MatrixXc& t) {
  require(t.cols() == state.modes(), ErrorKind::input, "transfer matrix columns do not match state modes");
  require(spectral_norm_squared(t) <= 1.0 + 2e-10, ErrorKind::input, "transfer matrix has singular values above 1");
  const MatrixXd s = quadrature_map(t);
  MatrixXd cov = s * state.cov() * s.transpose();
  cov += MatrixXd::Identity(cov.rows(), cov.cols()) - s * s.transpose();
  cov = 0.5 * (cov + cov.transpose());
  return {s * state.mean(), std::move(cov)};
}

inline GaussianState evolve(const GaussianState& state, const TransferMatrix& t) { return evolve(state, t.entries); }

inline GaussianState apply_loss(const GaussianState& state, const std::vector<double>& eta) {
  const int m = state.modes();
  require(static_cast<int>(eta.size()) == m, ErrorKind::input, "one efficiency per mode required");
  VectorXd h(2 * m);
  for (int i = 0; i < m; ++i) {
    require(std::isfinite(eta[i]) && eta[i] >= 0.0 && eta[i] <= 1.0, ErrorKind::input,
            "efficiencies must lie in [0, 1]");
    h(i) = h(i + m) = eta[i];
  }
  const VectorXd root = h.cwiseSqrt();
  MatrixXd cov = root.asDiagonal() * state.cov() * root.asDiagonal();
  cov.diagonal() += (VectorXd::Ones(2 * m) - h);
  return {root.cwiseProduct(state.mean()), std::move(cov)};
}

inline VectorXd mean_photons(const GaussianState& state) {
  const int m = state.modes();
  const auto& c = state.cov();
  const auto& mu = state.mean();
  VectorXd n(m);
  for (int i = 0; i < m; ++i)
    n(i) = (c(i, i) + c(i + m, i + m) - 2.0) / 4.0 + (mu(i) * mu(i) + mu(i + m) * mu(i + m)) / 4.0;
  return n;
}

/// Normally ordered second moments of a zero-mean state:
/// N_ij = <a_i^dagger a_j>, M_ij = <a_i a_j>.
struct SecondMoments {
  MatrixXc n;
  MatrixXc m;
};

inline SecondMoments second_moments(const GaussianState& state) {
  const int m = state.modes();
  const auto& c = state.cov();
  const MatrixXd xx = c.topLeftCorner(m, m);
  const MatrixXd pp = c.bottomRightCorner(m, m);
  const MatrixXd xp = c.topRightCorner(m, m);
  const MatrixXd px = c.bottomLeftCorner(m, m);
  SecondMoments out;
  out.n.resize(m, m);
  out.m.resize(m, m);
  out.n.real() = (xx + pp) / 4.0 - MatrixXd::Identity(m, m) / 2.0;
  out.n.imag() = (xp - px) / 4.0;
  out.m.real() = (xx - pp) / 4.0;
  out.m.imag() = (xp + px) / 4.0;
  return out;
}

/// Cov(n_i, n_j) for a zero-mean Gaussian state.
inline MatrixXd photon_covariance(const GaussianState& state) {
  require(!state.has_displacement(), ErrorKind::unsupported,
          "photon_covariance needs a zero-mean state; displaced hypotheses go through the sampling path");
  const auto mom = second_moments(state);
  MatrixXd cov = mom.n.cwiseAbs2() + mom.m.cwiseAbs2();
  for (int i = 0; i < state.modes(); ++i) {
    const double nii = mom.n(i, i).real();
    cov(i, i) = nii * (nii + 1.0) + std::norm(mom.m(i, i));
  }
  return cov;
}

/// Marginal state of the listed modes.
inline GaussianState reduce_modes(const GaussianState& state, const std::vector<int>& modes) {
  const int m = state.modes();
  const int k = static_cast<int>(modes.size());
  std::vector<int> idx;
  idx.reserve(2 * k);
  for (int q : modes) {
    require(q >= 0 && q < m, ErrorKind::input, "mode index out of range");
    idx.push_back(q);
  }
  for (int q : modes) idx.push_back(q + m);
  VectorXd mean(2 * k);
  MatrixXd cov(2 * k, 2 * k);
  for (int a = 0; a < 2 * k; ++a) {
    mean(a) = state.mean()(idx[a]);
    for (int b = 0; b < 2 * k; ++b) cov(a, b) = state.cov()(idx[a], idx[b]);
  }
  return {std::move(mean), std::move(cov)};
}

// ---------------------------------------------------------------------------
// Loss model and the effective circuit seen by the detectors

enum class LoopLossPlacement {
  per_traversal,  // loop efficiency applied each time light circulates a delay line
  uniform,        // every mode charged each loop efficiency exactly once
};

enum class FillInputs {
  lit,   // all physical bins carry the input state; fill outputs are discarded
  dark,  // fill input bins are ignored as well (rows and columns dropped)
};

struct LossModel {
  double common_efficiency = 1.0;
  std::vector<double> loop_efficiencies{1.0, 1.0, 1.0};
  std::vector<double> channel_efficiencies = std::vector<double>(16, 1.0);
  std::vector<int> disabled_detectors;
  LoopLossPlacement placement = LoopLossPlacement::per_traversal;

  int detector_count() const { return static_cast<int>(channel_efficiencies.size()); }

  /// Time-to-space demultiplexing: logical mode i lands on detector i mod 16.
  int detector_of(int logical_mode) const { return logical_mode % detector_count(); }

  double channel_efficiency_for_mode(int logical_mode) const {
    const int d = detector_of(logical_mode);
    if (std::find(disabled_detectors.begin(), disabled_detectors.end(), d) != disabled_detectors.end()) return 0.0;
    return channel_efficiencies[static_cast<std::size_t>(d)];
  }

  void validate() const {
    const auto in01 = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
    require(in01(common_efficiency), ErrorKind::input, "common_efficiency must lie in [0, 1]");
    for (double v : loop_efficiencies) require(in01(v), ErrorKind::input, "loop_efficiencies must lie in [0, 1]");
    require(!channel_efficiencies.empty(), ErrorKind::input, "at least one detector channel required");
    for (double v : channel_efficiencies)
      require(in01(v) && v > 0.0, ErrorKind::input, "channel_efficiencies must lie in (0, 1]");
    for (int d : disabled_detectors)
      require(d >= 0 && d < detector_count(), ErrorKind::input, "disabled detector index out of range");
  }
};

/// Lossy map from input bins to detected logical modes.
struct EffectiveCircuit {
  MatrixXc matrix;  // n_logical x n_inputs
  int n_inputs() const { return static_cast<int>(matrix.cols()); }
  int n_outputs() const { return static_cast<int>(matrix.rows()); }
};

inline EffectiveCircuit effective_circuit(const CircuitProgram& program, const LossModel& loss,
                                          FillInputs fill = FillInputs::lit) {
  loss.validate();
  require(loss.loop_efficiencies.size() == program.loops.loop_count(), ErrorKind::input,
          "loss model needs one loop efficiency per loop");
  double uniform_factor = loss.common_efficiency;
  TransferMatrix bins;
  if (loss.placement == LoopLossPlacement::per_traversal) {
    bins = compile_with_loop_loss(program, loss.loop_efficiencies);
  } else {
    bins = compile_unitary(program);
    for (double e : loss.loop_efficiencies) uniform_factor *= e;
  }
  const int f = program.fill_modes;
  const int n = program.n_logical_modes;
  const int first_col = fill == FillInputs::lit ? 0 : f;
  EffectiveCircuit out;
  out.matrix = bins.entries.block(f, first_col, n, program.n_physical_modes - first_col);
  for (int i = 0; i < n; ++i) out.matrix.row(i) *= std::sqrt(loss.channel_efficiency_for_mode(i) * uniform_factor);
  return out;
}

/// Lossy output state for a given input family on every input bin of the circuit.
inline GaussianState output_state(const EffectiveCircuit& circuit, InputKind kind, double squeezing) {
  return evolve(prepare_input({kind, squeezing, circuit.n_inputs()}), circuit.matrix);
}

// ---------------------------------------------------------------------------
// Text export

inline void write_state(std::ostream& os, const GaussianState& s) {
  os << "# gaussian-state modes=" << s.modes() << " ordering=xxpp hbar=2\n";
  os << "mean";
  for (Eigen::Index i = 0; i < s.mean().size(); ++i) os << ' ' << format_double(s.mean()(i));
  os << "\ncov\n";
  for (Eigen::Index i = 0; i < s.cov().rows(); ++i) {
    for (Eigen::Index j = 0; j < s.cov().cols(); ++j) os << (j ? " " : "") << format_double(s.cov()(i, j));
    os << '\n';
  }
}

inline GaussianState read_state(std::istream& is) {
  std::string header;
  std::getline(is, header);
  const auto pos = header.find("modes=");
  require(header.rfind("# gaussian-state", 0) == 0 && pos != std::string::npos, ErrorKind::ingestion,
          "not a gaussian-state document");
  const int m = std::stoi(header.substr(pos + 6));
  std::string tag;
  is >> tag;
  require(tag == "mean", ErrorKind::ingestion, "expected 'mean' line");
  VectorXd mean(2 * m);
  for (int i = 0; i < 2 * m; ++i) is >> mean(i);
  is >> tag;
  require(tag == "cov", ErrorKind::ingestion, "expected 'cov' block");
  MatrixXd cov(2 * m, 2 * m);
  for (int i = 0; i < 2 * m; ++i)
    for (int j = 0; j < 2 * m; ++j) is >> cov(i, j);
  require(static_cast<bool>(is), ErrorKind::ingestion, "truncated gaussian-state document");
  return {std::move(mean), std::move(cov)};
}

}  // namespace loopgbs
