#pragma once

// Exact photon-counting probabilities of Gaussian states:
//   P(n) = |sigma_Q|^{-1/2} Haf(A_n) / prod_i n_i!
// with sigma_Q = (sigma + I)/2 in the vacuum-is-identity convention and
// A = X (I - Q^{-1})^* built from sigma_Q in the (a, a^dagger) basis.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "loopgbs/core.hpp"
#include "loopgbs/gaussian_engine.hpp"
#include "loopgbs/hafnian.hpp"

namespace loopgbs {

struct AdjacencyEncoding {
  MatrixXc a;               // 2m x 2m, [[B, C], [C^T, B^*]]
  double log_det_sigma_q = 0.0;
  double prefactor = 1.0;   // det(sigma_Q)^{-1/2}

  int modes() const { return static_cast<int>(a.rows() / 2); }
  MatrixXc b() const { return a.topLeftCorner(modes(), modes()); }
  MatrixXc c() const { return a.topRightCorner(modes(), modes()); }
};

struct OutcomePattern {
  std::vector<int> counts;
  int total() const {
    int n = 0;
    for (int c : counts) n += c;
    return n;
  }
};

inline AdjacencyEncoding build_encoding(const GaussianState& state) {
  require(!state.has_displacement(), ErrorKind::unsupported, "adjacency encoding needs a zero-mean state");
  require(state.is_physical(), ErrorKind::input, "covariance matrix is not physical");
  const int m = state.modes();
  const MatrixXd sigma_q = 0.5 * (state.cov() + MatrixXd::Identity(2 * m, 2 * m));
  Eigen::LLT<MatrixXd> llt(sigma_q);
  require(llt.info() == Eigen::Success, ErrorKind::input, "sigma_Q is not positive definite");

  AdjacencyEncoding enc;
  // log-domain determinant from the Cholesky factor; stays finite at hundreds of modes
  enc.log_det_sigma_q = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  enc.prefactor = std::exp(-0.5 * enc.log_det_sigma_q);

  // Q^{-1} = R sigma_Q^{-1} R^dagger with R = [[I, iI], [I, -iI]] / sqrt(2),
  // expanded blockwise so that exact inputs stay exact
  const MatrixXd inv_q = llt.solve(MatrixXd::Identity(2 * m, 2 * m));
  const MatrixXd xx = inv_q.topLeftCorner(m, m), xp = inv_q.topRightCorner(m, m);
  const MatrixXd px = inv_q.bottomLeftCorner(m, m), pp = inv_q.bottomRightCorner(m, m);
  MatrixXc q_inv(2 * m, 2 * m);
  q_inv.topLeftCorner(m, m).real() = 0.5 * (xx + pp);
  q_inv.topLeftCorner(m, m).imag() = 0.5 * (px - xp);
  q_inv.topRightCorner(m, m).real() = 0.5 * (xx - pp);
  q_inv.topRightCorner(m, m).imag() = 0.5 * (px + xp);
  q_inv.bottomLeftCorner(m, m) = q_inv.topRightCorner(m, m).conjugate();
  q_inv.bottomRightCorner(m, m) = q_inv.topLeftCorner(m, m).conjugate();
  const MatrixXc k = (MatrixXc::Identity(2 * m, 2 * m) - q_inv).conjugate();
  enc.a.resize(2 * m, 2 * m);
  enc.a.topRows(m) = k.bottomRows(m);
  enc.a.bottomRows(m) = k.topRows(m);
  enc.a = 0.5 * (enc.a + enc.a.transpose()).eval();
  return enc;
}

/// A_n: row/column i repeated n_i times in the first half, i+m repeated n_i
/// times in the second half.
inline MatrixXc reduce_encoding(const AdjacencyEncoding& enc, const OutcomePattern& pattern) {
  const int m = enc.modes();
  require(static_cast<int>(pattern.counts.size()) == m, ErrorKind::input, "pattern length must equal mode count");
  std::vector<int> idx;
  for (int half = 0; half < 2; ++half)
    for (int i = 0; i < m; ++i)
      for (int c = 0; c < pattern.counts[i]; ++c) idx.push_back(i + half * m);
  const auto n = static_cast<Eigen::Index>(idx.size());
  MatrixXc out(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) out(a, b) = enc.a(idx[a], idx[b]);
  return out;
}

struct ProbabilityOptions {
  int max_pairs = kDefaultHafnianPairLimit;  // total photons allowed: 2 * max_pairs
};

inline double log_factorial(int n) { return std::lgamma(static_cast<double>(n) + 1.0); }

/// Outcome probabilities of one state. Zero-mean states go through the
/// hafnian; pure coherent states (covariance I) factorize into Poisson laws.
class OutcomeModel {
 public:
  explicit OutcomeModel(const GaussianState& state, ProbabilityOptions opts = {}) : opts_(opts), modes_(state.modes()) {
    if (state.has_displacement()) {
      const double dev = (state.cov() - MatrixXd::Identity(2 * modes_, 2 * modes_)).cwiseAbs().maxCoeff();
      require(dev <= 1e-9, ErrorKind::unsupported,
              "displaced states are only supported with vacuum-level covariance (coherent states)");
      poisson_means_ = mean_photons(state);
    } else {
      encoding_ = build_encoding(state);
    }
  }

  int modes() const { return modes_; }
  const std::optional<AdjacencyEncoding>& encoding() const { return encoding_; }

  double probability(std::span<const int> counts) const {
    require(static_cast<int>(counts.size()) == modes_, ErrorKind::input, "pattern length must equal mode count");
    int total = 0;
    double log_fact = 0.0;
    for (int c : counts) {
      require(c >= 0, ErrorKind::input, "photon counts must be non-negative");
      total += c;
      log_fact += log_factorial(c);
    }
    if (!encoding_) {
      double logp = 0.0;
      for (int i = 0; i < modes_; ++i) {
        const double mu = poisson_means_(i);
        if (mu == 0.0) {
          if (counts[i] != 0) return 0.0;
          continue;
        }
        logp += counts[i] * std::log(mu) - mu;
      }
      return std::exp(logp - log_fact);
    }
    require(total <= 2 * opts_.max_pairs, ErrorKind::resource,
            "pattern with " + std::to_string(total) + " photons exceeds the limit of " +
                std::to_string(2 * opts_.max_pairs));
    const cplx haf = hafnian_repeated(encoding_->a, counts);
    const double p = encoding_->prefactor * std::exp(-log_fact) * haf.real();
    const double residue = encoding_->prefactor * std::exp(-log_fact) * std::abs(haf.imag());
    if (residue > 1e-10) warn("outcome probability carries imaginary residue " + std::to_string(residue));
    return p < 0.0 && p > -1e-12 ? 0.0 : p;
  }

 private:
  ProbabilityOptions opts_;
  int modes_ = 0;
  std::optional<AdjacencyEncoding> encoding_;
  VectorXd poisson_means_;
};

inline double outcome_probability(const GaussianState& state, const OutcomePattern& pattern,
                                  ProbabilityOptions opts = {}) {
  return OutcomeModel(state, opts).probability(pattern.counts);
}

struct EnumerationOptions {
  int cutoff = 8;      // per-mode photon cap
  int max_total = -1;  // patterns above this total are skipped; -1 means 2 * max_pairs
  ProbabilityOptions probability;
};

inline constexpr int kMaxEnumerationModes = 6;
inline constexpr int kMaxEnumerationCutoff = 8;

/// Probabilities of every pattern with counts <= cutoff (dense, mixed-radix
/// indexed with mode 0 most significant).
struct Distribution {
  int modes = 0;
  int cutoff = 0;
  int max_total = 0;
  std::vector<double> probabilities;
  double captured_mass = 0.0;

  std::size_t size() const { return probabilities.size(); }

  std::vector<int> pattern(std::size_t index) const {
    std::vector<int> c(static_cast<std::size_t>(modes));
    for (int i = modes - 1; i >= 0; --i) {
      c[i] = static_cast<int>(index % static_cast<std::size_t>(cutoff + 1));
      index /= static_cast<std::size_t>(cutoff + 1);
    }
    return c;
  }

  template <class Counts>
  std::optional<std::size_t> index_of(const Counts& counts) const {
    std::size_t idx = 0;
    for (int i = 0; i < modes; ++i) {
      const int c = static_cast<int>(counts[i]);
      if (c < 0 || c > cutoff) return std::nullopt;
      idx = idx * static_cast<std::size_t>(cutoff + 1) + static_cast<std::size_t>(c);
    }
    return idx;
  }
};

/// Every pattern's hafnian is a signed binomial sum over multiplicity vectors
/// nu <= n of one series coefficient that depends on nu alone, so the series
/// are computed once per grid point and shared by all patterns.
inline Distribution enumerate_distribution(const GaussianState& state, int modes, EnumerationOptions opts = {}) {
  require(modes == state.modes(), ErrorKind::input, "mode count does not match the state");
  require(modes >= 1 && modes <= kMaxEnumerationModes, ErrorKind::resource,
          "enumeration supports at most " + std::to_string(kMaxEnumerationModes) + " modes");
  require(opts.cutoff >= 0 && opts.cutoff <= kMaxEnumerationCutoff, ErrorKind::resource,
          "enumeration cutoff must lie in [0, " + std::to_string(kMaxEnumerationCutoff) + "]");
  const int limit = 2 * opts.probability.max_pairs;
  const int max_total = opts.max_total < 0 ? limit : std::min(opts.max_total, limit);

  Distribution dist;
  dist.modes = modes;
  dist.cutoff = opts.cutoff;
  dist.max_total = max_total;
  std::size_t count = 1;
  for (int i = 0; i < modes; ++i) count *= static_cast<std::size_t>(opts.cutoff + 1);
  dist.probabilities.assign(count, 0.0);
  const auto total_of = [](const std::vector<int>& c) {
    int n = 0;
    for (int v : c) n += v;
    return n;
  };

  const OutcomeModel model(state, opts.probability);
  if (!model.encoding()) {
    // displaced (coherent) states have closed-form probabilities
    double mass = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      const auto c = dist.pattern(k);
      if (total_of(c) > max_total) continue;
      mass += (dist.probabilities[k] = model.probability(c));
    }
    dist.captured_mass = mass;
    return dist;
  }

  const auto& enc = *model.encoding();
  const int m = modes;
  MatrixXc z(2 * m, 2 * m);
  z.topRows(m) = enc.a.bottomRows(m);
  z.bottomRows(m) = enc.a.topRows(m);

  std::vector<std::vector<cplx>> table(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto nu = dist.pattern(k);
    if (total_of(nu) > max_total) continue;
    table[k] = detail::trace_series(z, nu, max_total);
  }

  std::vector<double> log_fact(static_cast<std::size_t>(opts.cutoff) + 1);
  for (int n = 0; n <= opts.cutoff; ++n) log_fact[static_cast<std::size_t>(n)] = log_factorial(n);
  double mass = 0.0;
  std::vector<int> nu(static_cast<std::size_t>(m));
  for (std::size_t k = 0; k < count; ++k) {
    const auto r = dist.pattern(k);
    const int n = total_of(r);
    if (n > max_total) continue;
    cplx haf{0.0, 0.0};
    std::fill(nu.begin(), nu.end(), 0);
    while (true) {
      double weight = 1.0;
      int chosen = 0;
      for (int i = 0; i < m; ++i) {
        weight *= detail::binomial(r[i], nu[i]);
        chosen += nu[i];
      }
      const double sign = ((n - chosen) % 2 == 0) ? 1.0 : -1.0;
      haf += sign * weight * table[*dist.index_of(nu)][static_cast<std::size_t>(n)];
      int pos = 0;
      while (pos < m && nu[pos] == r[pos]) nu[pos++] = 0;
      if (pos == m) break;
      ++nu[pos];
    }
    double lf = 0.0;
    for (int v : r) lf += log_fact[static_cast<std::size_t>(v)];
    double p = enc.prefactor * std::exp(-lf) * haf.real();
    if (p < 0.0 && p > -1e-12) p = 0.0;
    dist.probabilities[k] = p;
    mass += p;
  }
  dist.captured_mass = mass;
  return dist;
}

inline void write_distribution_csv(std::ostream& os, const Distribution& d) {
  os << "pattern,probability\n";
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (d.probabilities[k] == 0.0) continue;
    const auto c = d.pattern(k);
    for (std::size_t i = 0; i < c.size(); ++i) os << (i ? " " : "") << c[i];
    os << ',' << format_double(d.probabilities[k]) << '\n';
  }
}

}  // namespace loopgbs
