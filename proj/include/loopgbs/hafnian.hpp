#pragma once

// Hafnians of complex symmetric matrices.
//
// Two independent evaluators share one interface:
//   * enumeration: sum over all (2k-1)!! perfect matchings, kept as the oracle;
//   * power_trace: inclusion-exclusion over subsets of row pairs,
//       haf(A) = sum_S (-1)^{k-|S|} [eta^k] exp( sum_j tr((XA)_S^j) eta^j / (2j) ),
//     which costs O(2^k k^4) and extends to repeated rows without expanding them.

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

#include "loopgbs/core.hpp"

namespace loopgbs {

enum class HafnianMethod { enumeration, power_trace };

inline constexpr int kDefaultHafnianPairLimit = 10;

namespace detail {

inline cplx hafnian_enumerate(const MatrixXc& a, std::vector<int>& idx) {
  if (idx.empty()) return {1.0, 0.0};
  const int first = idx.back();
  idx.pop_back();
  cplx total{0.0, 0.0};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const cplx w = a(first, idx[k]);
    if (w == cplx{}) continue;
    std::swap(idx[k], idx.back());
    const int partner = idx.back();
    idx.pop_back();
    total += w * hafnian_enumerate(a, idx);
    idx.push_back(partner);
    std::swap(idx[k], idx.back());
  }
  idx.push_back(first);
  return total;
}

inline void check_even_square(const MatrixXc& a) {
  require(a.rows() == a.cols(), ErrorKind::input, "hafnian needs a square matrix");
  require(a.rows() % 2 == 0, ErrorKind::input, "hafnian needs an even dimension");
}

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Coefficients [eta^0..eta^n_max] of exp(sum_j tr(Y^j) eta^j / (2j)) with
/// Y = (XA) restricted to the pairs with nu_i > 0 and weighted by nu.
inline std::vector<cplx> trace_series(const MatrixXc& z, std::span<const int> nu, int n_max) {
  const int d = static_cast<int>(z.rows() / 2);
  std::vector<int> active;
  for (int i = 0; i < d; ++i)
    if (nu[i] > 0) active.push_back(i);
  const int k = static_cast<int>(active.size());
  std::vector<cplx> series(static_cast<std::size_t>(n_max) + 1, cplx{});
  series[0] = 1.0;
  if (k == 0) return series;
  MatrixXc y(2 * k, 2 * k);
  for (int r = 0; r < 2 * k; ++r) {
    const int row = r < k ? active[r] : active[r - k] + d;
    for (int c = 0; c < 2 * k; ++c) {
      const int ci = c < k ? active[c] : active[c - k];
      y(r, c) = z(row, c < k ? ci : ci + d) * static_cast<double>(nu[ci]);
    }
  }
  std::vector<cplx> coeff(static_cast<std::size_t>(n_max) + 1);
  MatrixXc power = y;
  for (int j = 1; j <= n_max; ++j) {
    coeff[j] = power.trace() / (2.0 * j);
    if (j < n_max) power = power * y;
  }
  for (int q = 1; q <= n_max; ++q) {
    cplx acc{0.0, 0.0};
    for (int j = 1; j <= q; ++j) acc += static_cast<double>(j) * coeff[j] * series[q - j];
    series[q] = acc / static_cast<double>(q);
  }
  return series;
}

}  // namespace detail

/// Oracle: explicit sum over perfect matchings; the diagonal never contributes.
inline cplx hafnian_enumeration(const MatrixXc& a) {
  detail::check_even_square(a);
  std::vector<int> idx(static_cast<std::size_t>(a.rows()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(idx.size() - 1 - i);
  return detail::hafnian_enumerate(a, idx);
}

/// Hafnian of the matrix obtained from the 2d x 2d symmetric `a` by repeating
/// the row/column pair (i, i+d) reps[i] times. With all reps equal to 1 this is
/// haf(a) itself.
inline cplx hafnian_repeated(const MatrixXc& a, std::span<const int> reps) {
  detail::check_even_square(a);
  const int d = static_cast<int>(a.rows() / 2);
  require(static_cast<int>(reps.size()) == d, ErrorKind::input, "one repetition count per row pair required");
  int n = 0;
  for (int r : reps) {
    require(r >= 0, ErrorKind::input, "repetition counts must be non-negative");
    n += r;
  }
  if (n == 0) return {1.0, 0.0};

  // Z = X A, where X swaps row i with row i + d.
  MatrixXc z(2 * d, 2 * d);
  z.topRows(d) = a.bottomRows(d);
  z.bottomRows(d) = a.topRows(d);

  std::vector<int> nu(static_cast<std::size_t>(d), 0);
  cplx total{0.0, 0.0};
  while (true) {
    // advance the multiplicity odometer nu <= reps
    int pos = 0;
    while (pos < d && nu[pos] == reps[pos]) nu[pos++] = 0;
    if (pos == d) break;
    ++nu[pos];

    int chosen = 0;
    double weight = 1.0;
    for (int i = 0; i < d; ++i) {
      chosen += nu[i];
      weight *= detail::binomial(reps[i], nu[i]);
    }
    const double sign = ((n - chosen) % 2 == 0) ? 1.0 : -1.0;
    total += sign * weight * detail::trace_series(z, nu, n)[static_cast<std::size_t>(n)];
  }
  return total;
}

inline cplx hafnian_power_trace(const MatrixXc& a) {
  detail::check_even_square(a);
  const std::vector<int> reps(static_cast<std::size_t>(a.rows() / 2), 1);
  return hafnian_repeated(a, reps);
}

/// Hafnian of a complex symmetric 2k x 2k matrix; the empty matrix has hafnian 1.
inline cplx hafnian(const MatrixXc& a, HafnianMethod method = HafnianMethod::power_trace,
                    int max_pairs = kDefaultHafnianPairLimit) {
  detail::check_even_square(a);
  require(a.rows() / 2 <= max_pairs, ErrorKind::resource,
          "hafnian of size 2k=" + std::to_string(a.rows()) + " exceeds the pair limit " + std::to_string(max_pairs));
  return method == HafnianMethod::enumeration ? hafnian_enumeration(a) : hafnian_power_trace(a);
}

/// Number of perfect matchings of a simple graph given by its 0/1 adjacency
/// matrix, by exact integer dynamic programming over vertex subsets.
inline std::uint64_t perfect_matching_count(const Eigen::MatrixXi& adjacency) {
  require(adjacency.rows() == adjacency.cols(), ErrorKind::input, "adjacency matrix must be square");
  const int n = static_cast<int>(adjacency.rows());
  require(n <= 20, ErrorKind::resource, "perfect_matching_count supports at most 20 vertices");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      require(adjacency(i, j) == 0 || adjacency(i, j) == 1, ErrorKind::input, "adjacency entries must be 0 or 1");
      require(adjacency(i, j) == adjacency(j, i), ErrorKind::input, "adjacency matrix must be symmetric");
    }
  if (n % 2 != 0) {
    warn("perfect_matching_count: odd vertex count " + std::to_string(n) + ", returning 0");
    return 0;
  }
  if (n == 0) return 1;
  std::vector<std::uint32_t> nbr(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && adjacency(i, j)) nbr[i] |= (1u << j);

  const std::uint32_t full = (n == 32) ? ~0u : ((1u << n) - 1u);
  std::vector<std::uint64_t> ways(static_cast<std::size_t>(full) + 1, 0);
  ways[0] = 1;
  for (std::uint32_t mask = 1; mask <= full; ++mask) {
    if (std::popcount(mask) % 2 != 0) continue;
    const int low = std::countr_zero(mask);
    const std::uint32_t rest = mask & ~(1u << low);
    std::uint32_t cand = rest & nbr[low];
    std::uint64_t acc = 0;
    while (cand) {
      const int j = std::countr_zero(cand);
      cand &= cand - 1;
      acc += ways[rest & ~(1u << j)];
    }
    ways[mask] = acc;
  }
  return ways[full];
}

}  // namespace loopgbs
