#pragma once

// Orbits: output patterns up to mode permutation, written as partitions of the
// photon number. Feature vectors hold the conditional probabilities of
//   O1 = [1,1,...], O2 = [2,1,...], O3 = [2,2,1,...]
// among shots with a fixed total photon number.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "loopgbs/core.hpp"
#include "loopgbs/samplers.hpp"

namespace loopgbs {

using Orbit = std::vector<int>;  // weakly decreasing, zeros omitted

template <class T>
Orbit orbit_of(std::span<const T> counts) {
  Orbit o;
  for (T c : counts)
    if (c > 0) o.push_back(static_cast<int>(c));
  std::sort(o.begin(), o.end(), std::greater<>());
  return o;
}

inline Orbit orbit_of(const std::vector<int>& counts) { return orbit_of(std::span<const int>(counts)); }

/// Canonical axis order: more parts first; equal lengths compare
/// lexicographically with smaller leading parts first, so that
/// [1^n] < [2,1^(n-2)] < [2,2,1^(n-4)] < [3,1^(n-3)] < ...
inline bool canonical_less(const Orbit& a, const Orbit& b) {
  if (a.size() != b.size()) return a.size() > b.size();
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

inline std::string orbit_to_string(const Orbit& o) {
  std::string s = "[";
  for (std::size_t i = 0; i < o.size(); ++i) s += (i ? "," : "") + std::to_string(o[i]);
  return s + "]";
}

inline Orbit orbit_from_string(const std::string& text) {
  require(text.size() >= 2 && text.front() == '[' && text.back() == ']', ErrorKind::input,
          "orbit text must look like [2,1,1]");
  Orbit o;
  std::stringstream ss(text.substr(1, text.size() - 2));
  std::string part;
  while (std::getline(ss, part, ',')) {
    const int v = std::stoi(part);
    require(v > 0, ErrorKind::input, "orbit parts must be positive");
    o.push_back(v);
  }
  require(std::is_sorted(o.begin(), o.end(), std::greater<>()), ErrorKind::input, "orbit parts must not increase");
  return o;
}

/// All partitions of n in canonical order.
inline std::vector<Orbit> partitions(int n) {
  require(n >= 0, ErrorKind::input, "partitions need n >= 0");
  std::vector<Orbit> out;
  Orbit cur;
  auto rec = [&](auto&& self, int rest, int max_part) -> void {
    if (rest == 0) {
      out.push_back(cur);
      return;
    }
    for (int p = std::min(rest, max_part); p >= 1; --p) {
      cur.push_back(p);
      self(self, rest - p, p);
      cur.pop_back();
    }
  };
  rec(rec, n, n);
  std::sort(out.begin(), out.end(), canonical_less);
  return out;
}

/// Orbit class of one shot: 1, 2, 3 for O1..O3, 0 for anything else.
template <class T>
int orbit_class(std::span<const T> counts) {
  int twos = 0;
  for (T c : counts) {
    if (c >= 3) return 0;
    if (c == 2) ++twos;
  }
  return twos <= 2 ? twos + 1 : 0;
}

struct OrbitHistogram {
  int n = 0;
  std::size_t support = 0;
  std::vector<std::pair<Orbit, double>> entries;  // canonical order
};

inline OrbitHistogram orbit_histogram(const SampleSet& samples, int n) {
  require(n >= 0, ErrorKind::input, "photon number must be non-negative");
  std::map<Orbit, std::size_t, decltype(&canonical_less)> counts(&canonical_less);
  OrbitHistogram h;
  h.n = n;
  for (std::size_t s = 0; s < samples.shots(); ++s) {
    if (samples.total(s) != n) continue;
    ++h.support;
    ++counts[orbit_of(std::span<const std::uint8_t>(samples.row(s), static_cast<std::size_t>(samples.modes)))];
  }
  if (h.support == 0) {
    warn("orbit_histogram: no shots with " + std::to_string(n) + " photons");
    return h;
  }
  for (const auto& [o, c] : counts) h.entries.emplace_back(o, static_cast<double>(c) / static_cast<double>(h.support));
  return h;
}

/// Shot counts per (photon number, orbit class) cell, the sufficient
/// statistics of every feature vector and of their bootstrap.
struct OrbitTally {
  int n_min = 0;
  int n_max = -1;
  std::size_t shots = 0;
  // cells[n - n_min] = {other, O1, O2, O3}
  std::vector<std::array<std::size_t, 4>> cells;

  std::size_t support(int n) const {
    const auto& c = cells[static_cast<std::size_t>(n - n_min)];
    return c[0] + c[1] + c[2] + c[3];
  }
};

inline OrbitTally tally_orbits(const SampleSet& samples, int n_min, int n_max) {
  require(n_min <= n_max, ErrorKind::input, "n_min must not exceed n_max");
  require(n_min >= 0, ErrorKind::input, "n_min must be non-negative");
  OrbitTally t;
  t.n_min = n_min;
  t.n_max = n_max;
  t.shots = samples.shots();
  t.cells.assign(static_cast<std::size_t>(n_max - n_min + 1), {0, 0, 0, 0});
  const auto m = static_cast<std::size_t>(samples.modes);
  for (std::size_t s = 0; s < samples.shots(); ++s) {
    const int n = samples.total(s);
    if (n < n_min || n > n_max) continue;
    ++t.cells[static_cast<std::size_t>(n - n_min)][orbit_class(std::span<const std::uint8_t>(samples.row(s), m))];
  }
  return t;
}

struct FeatureVector {
  int n = 0;
  double o1 = 0, o2 = 0, o3 = 0;
  double e1 = 0, e2 = 0, e3 = 0;
  std::size_t support = 0;

  std::array<double, 3> point() const { return {o1, o2, o3}; }
};

inline constexpr std::size_t kMinFeatureSupport = 100;

struct FeatureOptions {
  std::size_t min_support = kMinFeatureSupport;
  int pool_width = 1;  // >1 pools consecutive photon numbers into one vector
};

inline FeatureVector feature_vector_from_counts(int n, std::size_t support, std::size_t k1, std::size_t k2,
                                                std::size_t k3) {
  FeatureVector f;
  f.n = n;
  f.support = support;
  const double s = static_cast<double>(support);
  f.o1 = static_cast<double>(k1) / s;
  f.o2 = static_cast<double>(k2) / s;
  f.o3 = static_cast<double>(k3) / s;
  f.e1 = std::sqrt(f.o1 * (1 - f.o1) / s);
  f.e2 = std::sqrt(f.o2 * (1 - f.o2) / s);
  f.e3 = std::sqrt(f.o3 * (1 - f.o3) / s);
  return f;
}

/// Feature vectors from a tally (vectors below the support threshold are skipped).
inline std::vector<FeatureVector> feature_vectors(const OrbitTally& t, const FeatureOptions& opts = {}) {
  require(opts.pool_width >= 1, ErrorKind::input, "pool_width must be at least 1");
  std::vector<FeatureVector> out;
  for (int n0 = t.n_min; n0 <= t.n_max; n0 += opts.pool_width) {
    std::size_t support = 0, k[4] = {0, 0, 0, 0};
    for (int n = n0; n < n0 + opts.pool_width && n <= t.n_max; ++n) {
      const auto& c = t.cells[static_cast<std::size_t>(n - t.n_min)];
      for (int q = 0; q < 4; ++q) k[q] += c[static_cast<std::size_t>(q)];
      support += t.support(n);
    }
    if (support < std::max<std::size_t>(opts.min_support, 1)) continue;
    out.push_back(feature_vector_from_counts(n0, support, k[1], k[2], k[3]));
  }
  return out;
}

inline std::vector<FeatureVector> feature_vectors(const SampleSet& samples, int n_min, int n_max,
                                                  const FeatureOptions& opts = {}) {
  return feature_vectors(tally_orbits(samples, n_min, n_max), opts);
}

inline void write_feature_csv(std::ostream& os, const std::vector<FeatureVector>& fv) {
  os << "n,o1,o2,o3,e1,e2,e3,support\n";
  for (const auto& f : fv)
    os << f.n << ',' << format_double(f.o1) << ',' << format_double(f.o2) << ',' << format_double(f.o3) << ','
       << format_double(f.e1) << ',' << format_double(f.e2) << ',' << format_double(f.e3) << ',' << f.support << '\n';
}

inline std::vector<FeatureVector> read_feature_csv(std::istream& is) {
  std::string line;
  std::getline(is, line);
  require(line == "n,o1,o2,o3,e1,e2,e3,support", ErrorKind::ingestion, "unexpected feature CSV header");
  std::vector<FeatureVector> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> f;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    require(f.size() == 8, ErrorKind::ingestion, "feature CSV rows need 8 fields");
    FeatureVector v;
    v.n = std::stoi(f[0]);
    v.o1 = std::stod(f[1]);
    v.o2 = std::stod(f[2]);
    v.o3 = std::stod(f[3]);
    v.e1 = std::stod(f[4]);
    v.e2 = std::stod(f[5]);
    v.e3 = std::stod(f[6]);
    v.support = std::stoull(f[7]);
    out.push_back(v);
  }
  return out;
}

inline void write_histogram_csv(std::ostream& os, const OrbitHistogram& h) {
  os << "orbit,frequency\n";
  for (const auto& [o, p] : h.entries) os << '"' << orbit_to_string(o) << "\"," << format_double(p) << '\n';
}

}  // namespace loopgbs
