#pragma once

// Orbit-space geometry (planes, iso-n lines, spread), two-point correlator
// comparison and the ranked hypothesis verdict.

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopgbs/certificate.hpp"
#include "loopgbs/core.hpp"
#include "loopgbs/orbits.hpp"
#include "loopgbs/rng.hpp"
#include "loopgbs/samplers.hpp"

namespace loopgbs {

using Eigen::Matrix3d;
using Eigen::Vector3d;

inline Vector3d to_point(const FeatureVector& f) { return {f.o1, f.o2, f.o3}; }

// ---------------------------------------------------------------------------
// Total-least-squares fits

struct PlaneFit {
  Vector3d normal = Vector3d::UnitZ();
  Vector3d centroid = Vector3d::Zero();
  double offset = 0.0;  // normal · x = offset on the plane
  double rms_residual = 0.0;
  std::vector<double> residuals;

  double signed_distance(const Vector3d& p) const { return normal.dot(p) - offset; }
};

namespace detail {

inline std::pair<Vector3d, Eigen::SelfAdjointEigenSolver<Matrix3d>> scatter(const std::vector<Vector3d>& pts) {
  Vector3d c = Vector3d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Matrix3d s = Matrix3d::Zero();
  for (const auto& p : pts) s += (p - c) * (p - c).transpose();
  return {c, Eigen::SelfAdjointEigenSolver<Matrix3d>(s)};
}

// Fixes the sign ambiguity of an eigenvector: largest component positive.
inline Vector3d canonical_sign(Vector3d v) {
  Eigen::Index k;
  v.cwiseAbs().maxCoeff(&k);
  return v(k) < 0 ? Vector3d(-v) : v;
}

}  // namespace detail

inline PlaneFit fit_hyperplane(const std::vector<Vector3d>& points) {
  require(points.size() >= 4, ErrorKind::input, "plane fit needs at least 4 points");
  const auto [c, eig] = detail::scatter(points);
  const Vector3d ev = eig.eigenvalues();
  require(ev(2) > 0.0 && ev(1) > 1e-12 * ev(2), ErrorKind::input, "plane fit: points are collinear");
  PlaneFit f;
  f.centroid = c;
  f.normal = detail::canonical_sign(eig.eigenvectors().col(0).normalized());
  f.offset = f.normal.dot(c);
  double ss = 0.0;
  for (const auto& p : points) {
    f.residuals.push_back(f.signed_distance(p));
    ss += f.residuals.back() * f.residuals.back();
  }
  f.rms_residual = std::sqrt(ss / static_cast<double>(points.size()));
  return f;
}

struct LineFit {
  int n = 0;
  Vector3d centroid = Vector3d::Zero();
  Vector3d direction = Vector3d::UnitX();
  std::vector<double> residuals;  // perpendicular distances of the fitted points

  Vector3d residual_vector(const Vector3d& p) const {
    const Vector3d d = p - centroid;
    return d - direction * direction.dot(d);
  }
};

inline LineFit fit_line(int n, const std::vector<Vector3d>& points) {
  require(points.size() >= 2, ErrorKind::input, "line fit needs at least 2 points");
  const auto [c, eig] = detail::scatter(points);
  LineFit f;
  f.n = n;
  f.centroid = c;
  if (eig.eigenvalues()(2) > 0.0) f.direction = detail::canonical_sign(eig.eigenvectors().col(2).normalized());
  for (const auto& p : points) f.residuals.push_back(f.residual_vector(p).norm());
  return f;
}

/// One line per photon number; groups with a single point are skipped.
inline std::vector<LineFit> fit_iso_n_lines(const std::map<int, std::vector<Vector3d>>& groups) {
  std::vector<LineFit> out;
  for (const auto& [n, pts] : groups) {
    if (pts.size() < 2) {
      warn("iso-n line for n=" + std::to_string(n) + " skipped: single point");
      continue;
    }
    out.push_back(fit_line(n, pts));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bootstrap over (photon number, orbit class) cells

inline constexpr int kDefaultBootstrapResamples = 200;
inline constexpr int kMinSpreadResamples = 30;

struct BootstrapOptions {
  int resamples = kDefaultBootstrapResamples;
  std::uint64_t seed = 0;
  FeatureOptions features;
};

struct FeatureBootstrap {
  std::vector<FeatureVector> estimate;
  std::vector<std::vector<Vector3d>> replicas;  // replicas[b][k] pairs with estimate[k]

  int resamples() const { return static_cast<int>(replicas.size()); }

  Matrix3d covariance(std::size_t k) const {
    if (replicas.empty()) return Matrix3d::Zero();
    // shifted by the first replica so identical replicas give an exact zero
    const Vector3d ref = replicas.front()[k];
    Vector3d mean = Vector3d::Zero();
    for (const auto& r : replicas) mean += r[k] - ref;
    mean /= static_cast<double>(replicas.size());
    Matrix3d c = Matrix3d::Zero();
    for (const auto& r : replicas) c += (r[k] - ref - mean) * (r[k] - ref - mean).transpose();
    return c / static_cast<double>(std::max<std::size_t>(replicas.size(), 2) - 1);
  }

  std::vector<Vector3d> points() const {
    std::vector<Vector3d> p;
    for (const auto& f : estimate) p.push_back(to_point(f));
    return p;
  }
};

namespace detail {

// Multinomial draw of `total` items over `weights` by sequential binomials.
inline std::vector<std::size_t> multinomial(std::size_t total, const std::vector<double>& weights, KeyedRng& rng) {
  std::vector<std::size_t> out(weights.size(), 0);
  double rest = 0.0;
  for (double w : weights) rest += w;
  std::size_t left = total;
  for (std::size_t i = 0; i < weights.size() && left > 0; ++i) {
    if (weights[i] <= 0.0) continue;
    const double p = std::min(1.0, weights[i] / rest);
    std::binomial_distribution<long long> bin(static_cast<long long>(left), p);
    out[i] = static_cast<std::size_t>(p >= 1.0 ? static_cast<long long>(left) : bin(rng));
    left -= out[i];
    rest -= weights[i];
  }
  return out;
}

}  // namespace detail

inline FeatureBootstrap bootstrap_features(const OrbitTally& tally, const BootstrapOptions& opts = {}) {
  require(opts.resamples >= 0, ErrorKind::input, "resample count must be non-negative");
  FeatureBootstrap fb;
  fb.estimate = feature_vectors(tally, opts.features);
  // flattened cells, plus one cell for shots outside the photon-number window
  std::vector<double> w;
  std::size_t in_range = 0;
  for (const auto& c : tally.cells)
    for (std::size_t q : c) {
      w.push_back(static_cast<double>(q));
      in_range += q;
    }
  w.push_back(static_cast<double>(tally.shots - in_range));
  FeatureOptions lax = opts.features;
  lax.min_support = 1;
  for (int b = 0; b < opts.resamples; ++b) {
    KeyedRng rng(opts.seed, static_cast<std::uint64_t>(b), RngStage::bootstrap);
    const auto draw = detail::multinomial(tally.shots, w, rng);
    OrbitTally r = tally;
    for (std::size_t i = 0; i < r.cells.size(); ++i)
      for (std::size_t q = 0; q < 4; ++q) r.cells[i][q] = draw[4 * i + q];
    const auto fv = feature_vectors(r, lax);
    std::vector<Vector3d> pts;
    for (const auto& e : fb.estimate) {
      const auto it = std::find_if(fv.begin(), fv.end(), [&](const FeatureVector& f) { return f.n == e.n; });
      pts.push_back(it == fv.end() ? to_point(e) : to_point(*it));
    }
    fb.replicas.push_back(std::move(pts));
  }
  return fb;
}

inline FeatureBootstrap bootstrap_features(const SampleSet& samples, int n_min, int n_max,
                                           const BootstrapOptions& opts = {}) {
  return bootstrap_features(tally_orbits(samples, n_min, n_max), opts);
}

/// Mean over photon numbers of the trace of the bootstrap covariance of (o1,o2,o3).
inline double spread_metric(const FeatureBootstrap& fb) {
  require(fb.resamples() >= kMinSpreadResamples, ErrorKind::input,
          "spread metric needs at least " + std::to_string(kMinSpreadResamples) + " bootstrap resamples");
  require(!fb.estimate.empty(), ErrorKind::input, "spread metric needs at least one feature vector");
  double s = 0.0;
  for (std::size_t k = 0; k < fb.estimate.size(); ++k) s += fb.covariance(k).trace();
  return s / static_cast<double>(fb.estimate.size());
}

// ---------------------------------------------------------------------------
// Geometry tests against a reference cloud. Every bootstrap replica refits the
// reference geometry, so the σ of each residual includes the fit uncertainty.

struct GeometryTest {
  std::vector<int> n;
  std::vector<double> residual;  // signed plane distance, or perpendicular line distance
  std::vector<double> sigma;
  std::vector<double> z;
  double max_z = 0.0;
  double mean_z = 0.0;
  double mean_residual = 0.0;
  double mean_residual_sigma = 0.0;
  double mean_residual_z = 0.0;
};

namespace detail {

inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline std::size_t common_resamples(const std::vector<const FeatureBootstrap*>& reference, const FeatureBootstrap& probe) {
  std::size_t b = probe.replicas.size();
  for (const auto* r : reference) b = std::min(b, r->replicas.size());
  return b;
}

// replica < 0 selects the point estimates
inline std::vector<Vector3d> reference_points(const std::vector<const FeatureBootstrap*>& reference, int replica) {
  std::vector<Vector3d> pts;
  for (const auto* r : reference) {
    if (replica < 0)
      for (const auto& f : r->estimate) pts.push_back(to_point(f));
    else
      for (const auto& p : r->replicas[static_cast<std::size_t>(replica)]) pts.push_back(p);
  }
  return pts;
}

inline std::map<int, std::vector<Vector3d>> reference_groups(const std::vector<const FeatureBootstrap*>& reference,
                                                             int replica) {
  std::map<int, std::vector<Vector3d>> g;
  for (const auto* r : reference)
    for (std::size_t k = 0; k < r->estimate.size(); ++k)
      g[r->estimate[k].n].push_back(replica < 0 ? to_point(r->estimate[k])
                                                : r->replicas[static_cast<std::size_t>(replica)][k]);
  return g;
}

inline void finish(GeometryTest& t, double mean_res, const std::vector<double>& mean_rep) {
  t.max_z = 0.0;
  t.mean_z = 0.0;
  for (double z : t.z) {
    t.max_z = std::max(t.max_z, z);
    t.mean_z += z;
  }
  if (!t.z.empty()) t.mean_z /= static_cast<double>(t.z.size());
  t.mean_residual = mean_res;
  t.mean_residual_sigma = stddev(mean_rep);
  t.mean_residual_z = t.mean_residual_sigma > 0 ? std::abs(mean_res) / t.mean_residual_sigma
                                                : (mean_res == 0 ? 0.0 : std::numeric_limits<double>::infinity());
}

inline double zscore(double r, double sigma) {
  if (sigma > 0) return std::abs(r) / sigma;
  return r == 0 ? 0.0 : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Residuals of the probe's feature vectors from the plane fitted to the
/// reference clouds (the probe may itself be one of them).
inline GeometryTest plane_test(const std::vector<const FeatureBootstrap*>& reference, const FeatureBootstrap& probe) {
  const PlaneFit plane = fit_hyperplane(detail::reference_points(reference, -1));
  const std::size_t nb = detail::common_resamples(reference, probe);
  require(nb >= 2, ErrorKind::input, "plane test needs bootstrap replicas");
  const std::size_t k_count = probe.estimate.size();
  std::vector<std::vector<double>> rep(k_count);
  std::vector<double> mean_rep;
  for (std::size_t b = 0; b < nb; ++b) {
    const PlaneFit pb = fit_hyperplane(detail::reference_points(reference, static_cast<int>(b)));
    // replica planes may flip orientation relative to the estimate
    const double sgn = pb.normal.dot(plane.normal) < 0 ? -1.0 : 1.0;
    double m = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      rep[k].push_back(sgn * pb.signed_distance(probe.replicas[b][k]));
      m += rep[k].back();
    }
    mean_rep.push_back(k_count ? m / static_cast<double>(k_count) : 0.0);
  }
  GeometryTest t;
  double mean_res = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    const double r = plane.signed_distance(to_point(probe.estimate[k]));
    t.n.push_back(probe.estimate[k].n);
    t.residual.push_back(r);
    t.sigma.push_back(detail::stddev(rep[k]));
    t.z.push_back(detail::zscore(r, t.sigma.back()));
    mean_res += r;
  }
  if (k_count) mean_res /= static_cast<double>(k_count);
  detail::finish(t, mean_res, mean_rep);
  return t;
}

/// Perpendicular residuals of the probe's feature vectors from the iso-n lines
/// of the reference clouds; photon numbers without a line are skipped.
inline GeometryTest line_test(const std::vector<const FeatureBootstrap*>& reference, const FeatureBootstrap& probe) {
  std::map<int, LineFit> lines;
  for (const auto& [n, pts] : detail::reference_groups(reference, -1))
    if (pts.size() >= 2) lines.emplace(n, fit_line(n, pts));
  const std::size_t nb = detail::common_resamples(reference, probe);
  require(nb >= 2, ErrorKind::input, "line test needs bootstrap replicas");
  std::vector<std::size_t> ks;
  std::vector<Vector3d> dir;
  GeometryTest t;
  for (std::size_t k = 0; k < probe.estimate.size(); ++k) {
    const auto it = lines.find(probe.estimate[k].n);
    if (it == lines.end()) continue;
    const Vector3d r = it->second.residual_vector(to_point(probe.estimate[k]));
    ks.push_back(k);
    dir.push_back(r.norm() > 0 ? Vector3d(r.normalized()) : Vector3d::Zero());
    t.n.push_back(probe.estimate[k].n);
    t.residual.push_back(r.norm());
  }
  std::vector<std::vector<double>> rep(ks.size());
  std::vector<double> mean_rep;
  for (std::size_t b = 0; b < nb; ++b) {
    const auto groups = detail::reference_groups(reference, static_cast<int>(b));
    double m = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const int n = probe.estimate[ks[i]].n;
      const LineFit lb = fit_line(n, groups.at(n));
      rep[i].push_back(dir[i].dot(lb.residual_vector(probe.replicas[b][ks[i]])));
      m += rep[i].back();
    }
    mean_rep.push_back(ks.empty() ? 0.0 : m / static_cast<double>(ks.size()));
  }
  double mean_res = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    t.sigma.push_back(detail::stddev(rep[i]));
    t.z.push_back(detail::zscore(t.residual[i], t.sigma.back()));
    mean_res += t.residual[i];
  }
  if (!ks.empty()) mean_res /= static_cast<double>(ks.size());
  detail::finish(t, mean_res, mean_rep);
  return t;
}

// ---------------------------------------------------------------------------
// Two-point correlators

struct CovarianceDistance {
  double frobenius = 0.0;  // ‖a − b‖_F / ‖b‖_F
  double pearson = 1.0;    // correlation of the off-diagonal entries
};

inline CovarianceDistance covariance_distance(const MatrixXd& a, const MatrixXd& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols() && a.rows() == a.cols(), ErrorKind::input,
          "covariance matrices must be square and of equal size");
  const double nb = b.norm();
  require(nb > 0.0, ErrorKind::input, "reference covariance has zero norm");
  CovarianceDistance d;
  d.frobenius = (a - b).norm() / nb;
  const Eigen::Index m = a.rows();
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0, cnt = 0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double x = a(i, j), y = b(i, j);
      sa += x;
      sb += y;
      saa += x * x;
      sbb += y * y;
      sab += x * y;
      cnt += 1;
    }
  if (cnt == 0) {
    d.pearson = std::numeric_limits<double>::quiet_NaN();
    return d;
  }
  const double va = saa - sa * sa / cnt, vb = sbb - sb * sb / cnt, cab = sab - sa * sb / cnt;
  if (va <= 0 || vb <= 0)
    d.pearson = (va <= 0 && vb <= 0 && (a - b).norm() == 0) ? 1.0 : std::numeric_limits<double>::quiet_NaN();
  else
    d.pearson = cab / std::sqrt(va * vb);
  return d;
}

/// Photon-number covariance predicted by a hypothesis for the given circuit.
inline MatrixXd analytic_photon_covariance(Hypothesis h, const EffectiveCircuit& circuit, double s) {
  switch (h) {
    case Hypothesis::smsv:
      return photon_covariance(output_state(circuit, InputKind::smsv, s));
    case Hypothesis::thermal:
      return photon_covariance(output_state(circuit, InputKind::thermal, s));
    case Hypothesis::squashed:
      return photon_covariance(output_state(circuit, InputKind::squashed, s));
    case Hypothesis::coherent: {
      // coherent states stay coherent: independent Poisson counts
      const VectorXd mu = mean_photons(output_state(circuit, InputKind::coherent, s));
      return mu.asDiagonal();
    }
    case Hypothesis::distinguishable: {
      // each source's photons are routed independently:
      // Cov(n_i, n_j) = Σ_k p_ik p_jk (Var N − E N) + δ_ij Σ_k p_ik E N
      const double en = std::sinh(s) * std::sinh(s);
      const double var = 2.0 * en * std::cosh(s) * std::cosh(s);
      const MatrixXd p = circuit.matrix.cwiseAbs2();
      MatrixXd c = (var - en) * p * p.transpose();
      c.diagonal() += en * p.rowwise().sum();
      return c;
    }
  }
  fail(ErrorKind::program, "unknown hypothesis");
}

/// Typical relative deviation of a resampled covariance from the full-sample one:
/// mean over multinomial bootstrap replicas of ‖C_b − C‖_F / ‖C‖_F.
inline double covariance_noise_floor(const SampleSet& samples, int resamples, std::uint64_t seed) {
  require(resamples >= 2, ErrorKind::input, "noise floor needs at least two resamples");
  const MatrixXd c = sample_photon_covariance(samples);
  const std::size_t shots = samples.shots();
  double acc = 0.0;
  std::vector<double> w(shots);
  for (int b = 0; b < resamples; ++b) {
    KeyedRng rng(seed, static_cast<std::uint64_t>(b), RngStage::bootstrap);
    std::fill(w.begin(), w.end(), 0.0);
    std::uniform_int_distribution<std::size_t> pick(0, shots - 1);
    for (std::size_t i = 0; i < shots; ++i) w[pick(rng)] += 1.0;
    acc += (sample_photon_covariance(samples, &w) - c).norm() / c.norm();
  }
  return acc / resamples;
}

// ---------------------------------------------------------------------------
// End-to-end validation

struct ValidationConfig {
  std::uint64_t seed = 0;
  std::string squeezing_label = "low";
  std::optional<double> squeezing;  // overrides the certificate preset
  int n_min = 18;
  int n_max = 32;
  std::size_t shots = 0;  // per simulated hypothesis; 0 = same as the samples
  int pnr_cutoff = kDefaultPnrCutoff;
  unsigned threads = 1;
  int bootstrap_resamples = kDefaultBootstrapResamples;
  int covariance_resamples = 10;
  double sigma_threshold = 3.0;
  double spread_factor = 2.0;
  // common-efficiency offsets of the thermal reference sweep (0 is always run)
  std::vector<double> efficiency_offsets{-0.05, -0.025, 0.025, 0.05};
  std::vector<Hypothesis> hypotheses{Hypothesis::thermal, Hypothesis::coherent, Hypothesis::squashed,
                                     Hypothesis::distinguishable, Hypothesis::smsv};
  FeatureOptions features;
};

struct HypothesisResult {
  Hypothesis hypothesis = Hypothesis::thermal;
  bool simulated = false;
  std::uint64_t seed = 0;
  double mean_photons = std::numeric_limits<double>::quiet_NaN();
  std::vector<FeatureVector> features;
  double spread = std::numeric_limits<double>::quiet_NaN();
  bool plane_evaluated = false;
  bool plane_pass = false;
  std::optional<GeometryTest> sample_vs_plane;
  bool spread_evaluated = false;
  double spread_ratio = std::numeric_limits<double>::quiet_NaN();  // hypothesis / samples
  bool spread_compatible = false;
  CovarianceDistance covariance;
  std::vector<std::string> notes;
};

struct ValidationReport {
  std::string tool_version{kToolVersion};
  std::uint64_t seed = 0;
  std::string program_hash;
  std::string certificate_id;
  std::string samples_hash;
  std::string samples_hypothesis;
  int modes = 0;
  std::size_t shots = 0;
  std::size_t simulation_shots = 0;
  double squeezing = 0.0;
  ValidationConfig config;

  double sample_mean_photons = 0.0;
  std::vector<FeatureVector> sample_features;
  double sample_spread = std::numeric_limits<double>::quiet_NaN();

  std::vector<double> sweep_efficiencies;
  std::vector<std::vector<FeatureVector>> sweep_features;
  std::optional<PlaneFit> reference_plane;
  std::vector<LineFit> iso_n_lines;
  std::optional<GeometryTest> sample_plane_test;
  std::optional<GeometryTest> sample_line_test;
  bool off_hyperplane = false;

  double covariance_noise_floor = std::numeric_limits<double>::quiet_NaN();
  std::vector<HypothesisResult> hypotheses;
  std::vector<Hypothesis> ranking;
  std::vector<std::string> warnings;

  MatrixXd sample_covariance;
  std::map<Hypothesis, MatrixXd> analytic_covariances;
};

namespace detail {

inline std::string samples_hash(const SampleSet& s) {
  std::uint64_t h = fnv1a(std::string_view(reinterpret_cast<const char*>(s.counts.data()), s.counts.size()));
  return hex64(fnv1a(std::to_string(s.modes), h));
}

inline SampleSet simulate(Hypothesis h, const EffectiveCircuit& circuit, double s, const SamplerOptions& o) {
  switch (h) {
    case Hypothesis::thermal:
      return sample_classical(InputKind::thermal, circuit, s, o);
    case Hypothesis::coherent:
      return sample_classical(InputKind::coherent, circuit, s, o);
    case Hypothesis::squashed:
      return sample_classical(InputKind::squashed, circuit, s, o);
    case Hypothesis::distinguishable:
      return sample_distinguishable(circuit, s, o);
    case Hypothesis::smsv:
      return sample_smsv_bruteforce(circuit, s, o);
  }
  fail(ErrorKind::program, "unknown hypothesis");
}

inline double mean_total(const SampleSet& s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < s.shots(); ++i) acc += s.total(i);
  return s.shots() ? acc / static_cast<double>(s.shots()) : 0.0;
}

}  // namespace detail

/// Runs every configured hypothesis under the certificate and ranks them
/// lexicographically by (hyperplane pass, spread compatibility, covariance distance).
inline ValidationReport validate(const SampleSet& samples, const CircuitProgram& program_in,
                                 const DeviceCertificate& cert, const ValidationConfig& cfg = {}) {
  require(cfg.n_min <= cfg.n_max, ErrorKind::input, "n_min must not exceed n_max");
  require(cfg.bootstrap_resamples >= kMinSpreadResamples, ErrorKind::input,
          "validation needs at least " + std::to_string(kMinSpreadResamples) + " bootstrap resamples");
  require(samples.modes == program_in.n_logical_modes, ErrorKind::input,
          "sample set has " + std::to_string(samples.modes) + " modes but the program has " +
              std::to_string(program_in.n_logical_modes) + " logical modes");
  require(samples.shots() >= 2, ErrorKind::input, "validation needs at least two shots");

  ValidationReport rep;
  const auto previous_sink = set_warning_sink([&rep](const std::string& w) { rep.warnings.push_back(w); });
  struct Restore {
    WarningSink sink;
    ~Restore() { set_warning_sink(std::move(sink)); }
  } restore{previous_sink};

  const CircuitProgram program = with_certificate_phases(program_in, cert);
  const LossModel loss = loss_model(cert);
  const double s = cfg.squeezing ? *cfg.squeezing : cert.squeezing(cfg.squeezing_label);

  rep.seed = cfg.seed;
  rep.config = cfg;
  rep.program_hash = program_hash(program);
  rep.certificate_id = certificate_id(cert);
  rep.samples_hash = detail::samples_hash(samples);
  rep.samples_hypothesis = samples.meta.hypothesis;
  rep.modes = samples.modes;
  rep.shots = samples.shots();
  rep.simulation_shots = cfg.shots ? cfg.shots : samples.shots();
  rep.squeezing = s;
  if (samples.meta.program_hash != "none" && samples.meta.program_hash != rep.program_hash)
    warn("sample set was recorded with program " + samples.meta.program_hash + ", validating against " +
         rep.program_hash);

  BootstrapOptions bo;
  bo.resamples = cfg.bootstrap_resamples;
  bo.features = cfg.features;
  std::uint64_t stream = 0;
  const auto next_seed = [&] { return derive_seed(cfg.seed, stream++); };

  SamplerOptions so;
  so.shots = rep.simulation_shots;
  so.pnr_cutoff = cfg.pnr_cutoff;
  so.threads = std::max(1u, cfg.threads);
  so.certificate_id = rep.certificate_id;
  so.program_hash = rep.program_hash;

  // samples
  rep.sample_mean_photons = detail::mean_total(samples);
  bo.seed = next_seed();
  const FeatureBootstrap sample_fb = bootstrap_features(samples, cfg.n_min, cfg.n_max, bo);
  rep.sample_features = sample_fb.estimate;
  if (!sample_fb.estimate.empty()) rep.sample_spread = spread_metric(sample_fb);
  if (sample_fb.estimate.size() < 4)
    warn("only " + std::to_string(sample_fb.estimate.size()) +
         " sample feature vectors reach the support threshold; orbit tests are partial");

  // thermal reference sweep over the common efficiency
  std::vector<double> effs{cert.common_efficiency};
  for (double d : cfg.efficiency_offsets)
    if (d != 0.0) effs.push_back(cert.common_efficiency + d);
  std::vector<FeatureBootstrap> sweep;
  std::optional<SampleSet> nominal_thermal;
  for (double eta : effs) {
    require(eta > 0.0 && eta <= 1.0, ErrorKind::input, "efficiency sweep leaves (0, 1]");
    LossModel l = loss;
    l.common_efficiency = eta;
    so.seed = next_seed();
    auto set = sample_classical(InputKind::thermal, effective_circuit(program, l), s, so);
    bo.seed = next_seed();
    sweep.push_back(bootstrap_features(set, cfg.n_min, cfg.n_max, bo));
    rep.sweep_efficiencies.push_back(eta);
    rep.sweep_features.push_back(sweep.back().estimate);
    if (!nominal_thermal) nominal_thermal = std::move(set);
  }
  std::vector<const FeatureBootstrap*> sweep_refs;
  std::size_t sweep_points = 0;
  for (const auto& f : sweep) {
    sweep_refs.push_back(&f);
    sweep_points += f.estimate.size();
  }
  const auto try_geometry = [&](auto&& fn) -> bool {
    try {
      fn();
      return true;
    } catch (const Error& e) {
      warn(std::string("orbit geometry skipped: ") + e.what());
      return false;
    }
  };
  if (sweep_points >= 4) {
    try_geometry([&] { rep.reference_plane = fit_hyperplane(detail::reference_points(sweep_refs, -1)); });
    std::map<int, std::vector<Vector3d>> groups = detail::reference_groups(sweep_refs, -1);
    rep.iso_n_lines = fit_iso_n_lines(groups);
  } else {
    warn("thermal reference sweep has fewer than 4 feature vectors");
  }
  if (rep.reference_plane && !sample_fb.estimate.empty()) {
    try_geometry([&] {
      rep.sample_plane_test = plane_test(sweep_refs, sample_fb);
      rep.off_hyperplane = rep.sample_plane_test->mean_residual_z > cfg.sigma_threshold;
    });
    if (!rep.iso_n_lines.empty()) try_geometry([&] { rep.sample_line_test = line_test(sweep_refs, sample_fb); });
  }

  // correlators
  const EffectiveCircuit circuit = effective_circuit(program, loss);
  rep.sample_covariance = sample_photon_covariance(samples);
  if (cfg.covariance_resamples >= 2)
    rep.covariance_noise_floor = covariance_noise_floor(samples, cfg.covariance_resamples, next_seed());

  // hypotheses
  for (Hypothesis h : cfg.hypotheses) {
    HypothesisResult hr;
    hr.hypothesis = h;
    std::optional<FeatureBootstrap> fb;
    const std::uint64_t sim_seed = next_seed();
    const std::uint64_t boot_seed = next_seed();
    if (h == Hypothesis::thermal) {
      hr.simulated = true;
      hr.seed = nominal_thermal ? nominal_thermal->meta.seed : 0;
      hr.mean_photons = detail::mean_total(*nominal_thermal);
      fb = sweep.front();
    } else if (h != Hypothesis::smsv || program.n_logical_modes <= kMaxEnumerationModes) {
      so.seed = sim_seed;
      const auto set = detail::simulate(h, circuit, s, so);
      hr.simulated = true;
      hr.seed = sim_seed;
      hr.mean_photons = detail::mean_total(set);
      bo.seed = boot_seed;
      fb = bootstrap_features(set, cfg.n_min, cfg.n_max, bo);
    } else {
      hr.notes.push_back("exact SMSV sampling is out of reach at this size; orbit tests use the thermal "
                         "reference plane (shared by indistinguishable Gaussian inputs) and the spread test is "
                         "not evaluated");
    }
    if (fb) {
      hr.features = fb->estimate;
      if (!fb->estimate.empty()) hr.spread = spread_metric(*fb);
      if (!sample_fb.estimate.empty() && fb->estimate.size() >= 4) {
        const FeatureBootstrap* ref = &*fb;
        std::vector<const FeatureBootstrap*> refs =
            h == Hypothesis::thermal ? sweep_refs : std::vector<const FeatureBootstrap*>{ref};
        hr.plane_evaluated = try_geometry([&] { hr.sample_vs_plane = plane_test(refs, sample_fb); });
        if (hr.plane_evaluated) hr.plane_pass = hr.sample_vs_plane->mean_residual_z <= cfg.sigma_threshold;
      } else {
        hr.notes.push_back("too few feature vectors for a plane test");
      }
      if (std::isfinite(hr.spread) && std::isfinite(rep.sample_spread) && rep.sample_spread > 0) {
        hr.spread_evaluated = true;
        hr.spread_ratio = hr.spread / rep.sample_spread;
        hr.spread_compatible = std::max(hr.spread_ratio, 1.0 / hr.spread_ratio) <= cfg.spread_factor;
      }
    } else if (rep.sample_plane_test) {
      hr.plane_evaluated = true;
      hr.sample_vs_plane = rep.sample_plane_test;
      hr.plane_pass = !rep.off_hyperplane;
      hr.spread_compatible = true;
    }
    const MatrixXd analytic = analytic_photon_covariance(h, circuit, s);
    rep.analytic_covariances[h] = analytic;
    hr.covariance = covariance_distance(rep.sample_covariance, analytic);
    rep.hypotheses.push_back(std::move(hr));
  }

  std::vector<const HypothesisResult*> order;
  for (const auto& h : rep.hypotheses) order.push_back(&h);
  std::stable_sort(order.begin(), order.end(), [](const HypothesisResult* a, const HypothesisResult* b) {
    const auto key = [](const HypothesisResult* r) {
      return std::make_tuple(r->plane_pass ? 0 : 1, r->spread_compatible ? 0 : 1, r->covariance.frobenius);
    };
    return key(a) < key(b);
  });
  for (const auto* h : order) rep.ranking.push_back(h->hypothesis);
  return rep;
}

// ---------------------------------------------------------------------------
// Report output

namespace detail {

inline nlohmann::json num(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

inline nlohmann::json features_json(const std::vector<FeatureVector>& fv) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& f : fv)
    a.push_back({{"n", f.n},
                 {"o1", f.o1},
                 {"o2", f.o2},
                 {"o3", f.o3},
                 {"e1", f.e1},
                 {"e2", f.e2},
                 {"e3", f.e3},
                 {"support", f.support}});
  return a;
}

inline nlohmann::json geometry_json(const GeometryTest& t) {
  nlohmann::json z = nlohmann::json::array(), s = nlohmann::json::array(), r = nlohmann::json::array();
  for (std::size_t i = 0; i < t.z.size(); ++i) {
    z.push_back(num(t.z[i]));
    s.push_back(num(t.sigma[i]));
    r.push_back(t.residual[i]);
  }
  return {{"n", t.n},
          {"residual", r},
          {"sigma", s},
          {"z", z},
          {"max_z", num(t.max_z)},
          {"mean_z", num(t.mean_z)},
          {"mean_residual", t.mean_residual},
          {"mean_residual_sigma", t.mean_residual_sigma},
          {"mean_residual_z", num(t.mean_residual_z)}};
}

inline nlohmann::json vec3(const Vector3d& v) { return {v(0), v(1), v(2)}; }

}  // namespace detail

inline nlohmann::json report_to_json(const ValidationReport& r) {
  using nlohmann::json;
  json j;
  j["tool_version"] = r.tool_version;
  j["seed"] = r.seed;
  j["program_hash"] = r.program_hash;
  j["certificate_id"] = r.certificate_id;
  j["samples_hash"] = r.samples_hash;
  j["samples_hypothesis"] = r.samples_hypothesis;
  j["modes"] = r.modes;
  j["shots"] = r.shots;
  j["simulation_shots"] = r.simulation_shots;
  j["squeezing"] = r.squeezing;
  json cfg;
  cfg["squeezing_label"] = r.config.squeezing_label;
  cfg["n_min"] = r.config.n_min;
  cfg["n_max"] = r.config.n_max;
  cfg["pnr_cutoff"] = r.config.pnr_cutoff;
  cfg["bootstrap_resamples"] = r.config.bootstrap_resamples;
  cfg["covariance_resamples"] = r.config.covariance_resamples;
  cfg["sigma_threshold"] = r.config.sigma_threshold;
  cfg["spread_factor"] = r.config.spread_factor;
  cfg["efficiency_offsets"] = r.config.efficiency_offsets;
  cfg["min_support"] = r.config.features.min_support;
  cfg["pool_width"] = r.config.features.pool_width;
  json hyps = json::array();
  for (Hypothesis h : r.config.hypotheses) hyps.push_back(to_string(h));
  cfg["hypotheses"] = hyps;
  j["config"] = cfg;

  j["samples"] = {{"mean_photons", r.sample_mean_photons},
                  {"spread", detail::num(r.sample_spread)},
                  {"features", detail::features_json(r.sample_features)}};
  json sweep = json::array();
  for (std::size_t i = 0; i < r.sweep_efficiencies.size(); ++i)
    sweep.push_back({{"common_efficiency", r.sweep_efficiencies[i]},
                     {"features", detail::features_json(r.sweep_features[i])}});
  j["thermal_sweep"] = sweep;
  if (r.reference_plane)
    j["reference_plane"] = {{"normal", detail::vec3(r.reference_plane->normal)},
                            {"offset", r.reference_plane->offset},
                            {"rms_residual", r.reference_plane->rms_residual},
                            {"residuals", r.reference_plane->residuals}};
  json lines = json::array();
  for (const auto& l : r.iso_n_lines)
    lines.push_back({{"n", l.n},
                     {"centroid", detail::vec3(l.centroid)},
                     {"direction", detail::vec3(l.direction)},
                     {"residuals", l.residuals}});
  j["iso_n_lines"] = lines;
  if (r.sample_plane_test) j["sample_plane_test"] = detail::geometry_json(*r.sample_plane_test);
  if (r.sample_line_test) j["sample_line_test"] = detail::geometry_json(*r.sample_line_test);
  j["off_hyperplane"] = r.off_hyperplane;
  j["covariance_noise_floor"] = detail::num(r.covariance_noise_floor);

  json hs = json::array();
  for (const auto& h : r.hypotheses) {
    json o;
    o["hypothesis"] = to_string(h.hypothesis);
    o["simulated"] = h.simulated;
    o["seed"] = h.seed;
    o["mean_photons"] = detail::num(h.mean_photons);
    o["features"] = detail::features_json(h.features);
    o["spread"] = detail::num(h.spread);
    o["plane_evaluated"] = h.plane_evaluated;
    o["plane_pass"] = h.plane_pass;
    if (h.sample_vs_plane) o["sample_vs_plane"] = detail::geometry_json(*h.sample_vs_plane);
    o["spread_evaluated"] = h.spread_evaluated;
    o["spread_ratio"] = detail::num(h.spread_ratio);
    o["spread_compatible"] = h.spread_compatible;
    o["covariance_distance"] = {{"frobenius", h.covariance.frobenius}, {"pearson", detail::num(h.covariance.pearson)}};
    o["notes"] = h.notes;
    hs.push_back(o);
  }
  j["hypotheses"] = hs;
  json rank = json::array();
  for (Hypothesis h : r.ranking) rank.push_back(to_string(h));
  j["ranking"] = rank;
  j["verdict"] = r.ranking.empty() ? "none" : to_string(r.ranking.front());
  j["warnings"] = r.warnings;
  return j;
}

inline void write_orbit_scatter_csv(std::ostream& os, const ValidationReport& r) {
  os << "series,n,o1,o2,o3,e1,e2,e3,support\n";
  const auto rows = [&](const std::string& name, const std::vector<FeatureVector>& fv) {
    for (const auto& f : fv)
      os << name << ',' << f.n << ',' << format_double(f.o1) << ',' << format_double(f.o2) << ','
         << format_double(f.o3) << ',' << format_double(f.e1) << ',' << format_double(f.e2) << ','
         << format_double(f.e3) << ',' << f.support << '\n';
  };
  rows("samples", r.sample_features);
  for (std::size_t i = 0; i < r.sweep_efficiencies.size(); ++i)
    rows("thermal_eta_" + format_double(r.sweep_efficiencies[i]), r.sweep_features[i]);
  for (const auto& h : r.hypotheses)
    if (h.hypothesis != Hypothesis::thermal) rows(std::string(to_string(h.hypothesis)), h.features);
}

/// Heatmap grid in gnuplot's nonuniform-matrix-free "i j value" layout.
inline void write_covariance_grid(std::ostream& os, const MatrixXd& c) {
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    for (Eigen::Index j = 0; j < c.cols(); ++j) os << i << ' ' << j << ' ' << format_double(c(i, j)) << '\n';
    os << '\n';
  }
}

/// Writes report.json, orbits.csv, covariance_*.dat and plot.gp into a directory.
inline void write_report(const ValidationReport& r, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto open = [&](const std::string& name) {
    std::ofstream f(fs::path(dir) / name);
    require(static_cast<bool>(f), ErrorKind::input, "cannot write " + (fs::path(dir) / name).string());
    return f;
  };
  {
    auto f = open("report.json");
    f << report_to_json(r).dump(2) << '\n';
  }
  {
    auto f = open("orbits.csv");
    write_orbit_scatter_csv(f, r);
  }
  {
    auto f = open("covariance_samples.dat");
    write_covariance_grid(f, r.sample_covariance);
  }
  for (const auto& [h, c] : r.analytic_covariances) {
    auto f = open(std::string("covariance_") + to_string(h) + ".dat");
    write_covariance_grid(f, c);
  }
  auto gp = open("plot.gp");
  gp << "# gnuplot script for the validation side files\n"
        "set datafile separator ','\n"
        "set terminal pngcairo size 900,700\n"
        "set output 'orbits.png'\n"
        "set xlabel 'O1'\nset ylabel 'O2'\nset zlabel 'O3'\n"
        "splot for [s in system(\"tail -n +2 orbits.csv | cut -d, -f1 | uniq\")] "
        "'< grep ^'.s.', orbits.csv' using 3:4:5 with points title s\n"
        "set datafile separator whitespace\n"
        "set view map\n";
  std::vector<std::string> grids{"samples"};
  for (const auto& [h, c] : r.analytic_covariances) grids.push_back(to_string(h));
  for (const auto& g : grids)
    gp << "set output 'covariance_" << g << ".png'\n"
       << "splot 'covariance_" << g << ".dat' using 1:2:3 with image title '" << g << "'\n";
}

}  // namespace loopgbs
