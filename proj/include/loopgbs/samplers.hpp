#pragma once

// Photon-count samplers for every hypothesis, the SampleSet container and its
// text format.
//
// Every shot draws from its own KeyedRng streams, keyed by the global shot
// index, so output does not depend on thread count or sharding.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "loopgbs/core.hpp"
#include "loopgbs/gaussian_engine.hpp"
#include "loopgbs/gbs_probability.hpp"
#include "loopgbs/rng.hpp"
#include "loopgbs/tdm_compiler.hpp"

namespace loopgbs {

enum class Hypothesis { smsv, thermal, coherent, squashed, distinguishable };

inline const char* to_string(Hypothesis h) {
  switch (h) {
    case Hypothesis::smsv: return "smsv";
    case Hypothesis::thermal: return "thermal";
    case Hypothesis::coherent: return "coherent";
    case Hypothesis::squashed: return "squashed";
    case Hypothesis::distinguishable: return "distinguishable";
  }
  return "?";
}

inline Hypothesis hypothesis_from_string(const std::string& s) {
  for (auto h : {Hypothesis::smsv, Hypothesis::thermal, Hypothesis::coherent, Hypothesis::squashed,
                 Hypothesis::distinguishable})
    if (s == to_string(h)) return h;
  fail(ErrorKind::input, "unknown hypothesis '" + s + "'");
}

inline constexpr int kDefaultPnrCutoff = 7;

struct SampleMetadata {
  std::string hypothesis;
  std::string certificate_id;
  std::string program_hash;
  std::uint64_t seed = 0;
  int pnr_cutoff = kDefaultPnrCutoff;
  double squeezing = 0.0;
  std::string tool_version{kToolVersion};
  std::map<std::string, std::string> extra;

  bool operator==(const SampleMetadata&) const = default;
};

/// shots x modes photon counts, row-major.
struct SampleSet {
  SampleMetadata meta;
  int modes = 0;
  std::vector<std::uint8_t> counts;

  std::size_t shots() const { return modes == 0 ? 0 : counts.size() / static_cast<std::size_t>(modes); }
  const std::uint8_t* row(std::size_t shot) const { return counts.data() + shot * static_cast<std::size_t>(modes); }
  int at(std::size_t shot, int mode) const { return row(shot)[mode]; }

  int total(std::size_t shot) const {
    int n = 0;
    const auto* r = row(shot);
    for (int i = 0; i < modes; ++i) n += r[i];
    return n;
  }

  bool operator==(const SampleSet&) const = default;
};

struct SamplerOptions {
  std::size_t shots = 1000;
  std::uint64_t seed = 0;
  int pnr_cutoff = kDefaultPnrCutoff;
  unsigned threads = 1;
  std::uint64_t first_shot = 0;  // global index of the first shot (for shards)
  std::string certificate_id = "none";
  std::string program_hash = "none";

  void validate() const {
    require(shots >= 1, ErrorKind::input, "shots must be at least 1");
    require(pnr_cutoff >= 1 && pnr_cutoff <= 255, ErrorKind::input, "pnr_cutoff must lie in [1, 255]");
  }
};

namespace detail {

/// Box-Muller pair from two 53-bit uniforms.
inline std::pair<double, double> normal_pair(KeyedRng& rng) {
  double u1 = rng.uniform();
  while (u1 <= 0.0) u1 = rng.uniform();
  const double u2 = rng.uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return {r * std::cos(2.0 * kPi * u2), r * std::sin(2.0 * kPi * u2)};
}

/// min(N, cap) for N ~ Poisson(mu), by inversion from a single uniform.
inline int capped_poisson(double mu, double u, int cap) {
  if (mu <= 0.0) return 0;
  double p = std::exp(-mu);
  double cdf = p;
  int k = 0;
  while (k < cap && u >= cdf) {
    ++k;
    p *= mu / k;
    cdf += p;
  }
  return k;
}

inline SampleSet make_set(Hypothesis h, int modes, double s, const SamplerOptions& opts) {
  SampleSet out;
  out.modes = modes;
  out.meta.hypothesis = to_string(h);
  out.meta.certificate_id = opts.certificate_id;
  out.meta.program_hash = opts.program_hash;
  out.meta.seed = opts.seed;
  out.meta.pnr_cutoff = opts.pnr_cutoff;
  out.meta.squeezing = s;
  out.counts.assign(opts.shots * static_cast<std::size_t>(modes), 0);
  return out;
}

/// Runs body(begin, end) over contiguous shot ranges on up to `threads` workers.
template <class Body>
void parallel_shots(std::size_t shots, unsigned threads, Body body) {
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>((shots + 1023) / 1024)));
  if (workers == 1) {
    body(std::size_t{0}, shots);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (shots + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(shots, b + chunk);
    pool.emplace_back([&, w, b, e] {
      try {
        if (b < e) body(b, e);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// P-function sampler: each shot is a random coherent state drawn from the
/// input family's P-function, sent through the lossy circuit and detected with
/// Poisson statistics.
inline SampleSet sample_classical(InputKind kind, const EffectiveCircuit& circuit, double s,
                                  const SamplerOptions& opts) {
  opts.validate();
  require(kind == InputKind::thermal || kind == InputKind::coherent || kind == InputKind::squashed, ErrorKind::unsupported,
          std::string("no P-function sampler for '") + to_string(kind) + "' inputs; use the brute-force path");
  require(std::isfinite(s) && s >= 0.0, ErrorKind::input, "squeezing must be non-negative");
  const Hypothesis h = kind == InputKind::thermal ? Hypothesis::thermal
                       : kind == InputKind::coherent ? Hypothesis::coherent
                                                     : Hypothesis::squashed;
  const int n_in = circuit.n_inputs();
  const int n_out = circuit.n_outputs();
  SampleSet out = detail::make_set(h, n_out, s, opts);
  const double sh = std::sinh(s);
  const MatrixXc& l = circuit.matrix;

  // the coherent hypothesis has one fixed output amplitude vector
  VectorXd fixed_means;
  if (kind == InputKind::coherent) fixed_means = (l * VectorXc::Constant(n_in, cplx(sh, 0.0))).cwiseAbs2();

  constexpr std::size_t kBlock = 256;
  detail::parallel_shots(opts.shots, opts.threads, [&](std::size_t begin, std::size_t end) {
    MatrixXc alpha(n_in, static_cast<Eigen::Index>(kBlock));
    MatrixXd means(n_out, static_cast<Eigen::Index>(kBlock));
    for (std::size_t b0 = begin; b0 < end; b0 += kBlock) {
      const auto nb = static_cast<Eigen::Index>(std::min(kBlock, end - b0));
      if (kind != InputKind::coherent) {
        for (Eigen::Index c = 0; c < nb; ++c) {
          KeyedRng rng(opts.seed, opts.first_shot + b0 + static_cast<std::size_t>(c), RngStage::input_amplitudes);
          if (kind == InputKind::thermal) {
            // <|alpha|^2> = sinh^2 s
            const double scale = sh / std::sqrt(2.0);
            for (int j = 0; j < n_in; ++j) {
              const auto [g1, g2] = detail::normal_pair(rng);
              alpha(j, c) = cplx(scale * g1, scale * g2);
            }
          } else {
            for (int j = 0; j < n_in; j += 2) {
              const auto [g1, g2] = detail::normal_pair(rng);
              alpha(j, c) = cplx(0.0, sh * g1);
              if (j + 1 < n_in) alpha(j + 1, c) = cplx(0.0, sh * g2);
            }
          }
        }
        means.leftCols(nb) = (l * alpha.leftCols(nb)).cwiseAbs2();
      }
      for (Eigen::Index c = 0; c < nb; ++c) {
        const std::size_t shot = b0 + static_cast<std::size_t>(c);
        KeyedRng det(opts.seed, opts.first_shot + shot, RngStage::detection);
        std::uint8_t* row = out.counts.data() + shot * static_cast<std::size_t>(n_out);
        for (int i = 0; i < n_out; ++i) {
          const double mu = kind == InputKind::coherent ? fixed_means(i) : means(i, c);
          row[i] = static_cast<std::uint8_t>(detail::capped_poisson(mu, det.uniform(), opts.pnr_cutoff));
        }
      }
    }
  });
  return out;
}

inline SampleSet sample_classical(InputKind kind, const CircuitProgram& program, const LossModel& loss, double s,
                                  SamplerOptions opts) {
  if (opts.program_hash == "none") opts.program_hash = program_hash(program);
  return sample_classical(kind, effective_circuit(program, loss), s, opts);
}

/// Inverse-CDF sampling from an enumerated distribution, renormalized over its
/// captured mass. Counts above pnr_cutoff are capped.
inline SampleSet sample_from_distribution(const Distribution& dist, Hypothesis h, double s, const SamplerOptions& opts) {
  opts.validate();
  require(dist.captured_mass > 0.0, ErrorKind::input, "distribution carries no probability mass");
  std::vector<double> cdf(dist.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < dist.size(); ++k) cdf[k] = (acc += dist.probabilities[k]);
  SampleSet out = detail::make_set(h, dist.modes, s, opts);
  detail::parallel_shots(opts.shots, opts.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t shot = begin; shot < end; ++shot) {
      KeyedRng rng(opts.seed, opts.first_shot + shot, RngStage::bruteforce);
      const double u = rng.uniform() * acc;
      auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      if (it == cdf.end()) --it;
      // skip zero-probability patterns that share the CDF value
      while (dist.probabilities[static_cast<std::size_t>(it - cdf.begin())] == 0.0 && it != cdf.begin()) --it;
      const auto c = dist.pattern(static_cast<std::size_t>(it - cdf.begin()));
      std::uint8_t* row = out.counts.data() + shot * static_cast<std::size_t>(dist.modes);
      for (int i = 0; i < dist.modes; ++i) row[i] = static_cast<std::uint8_t>(std::min(c[i], opts.pnr_cutoff));
    }
  });
  return out;
}

/// Exact SMSV sampling at desk scale (at most 6 detected modes).
inline SampleSet sample_smsv_bruteforce(const EffectiveCircuit& circuit, double s, const SamplerOptions& opts,
                                        int cutoff = kMaxEnumerationCutoff) {
  require(circuit.n_outputs() <= kMaxEnumerationModes, ErrorKind::resource,
          "exact SMSV sampling is limited to " + std::to_string(kMaxEnumerationModes) + " modes, got " +
              std::to_string(circuit.n_outputs()));
  const auto state = output_state(circuit, InputKind::smsv, s);
  EnumerationOptions eo;
  eo.cutoff = cutoff;
  const auto dist = enumerate_distribution(state, circuit.n_outputs(), eo);
  return sample_from_distribution(dist, Hypothesis::smsv, s, opts);
}

inline SampleSet sample_smsv_bruteforce(const CircuitProgram& program, const LossModel& loss, double s,
                                        SamplerOptions opts, int cutoff = kMaxEnumerationCutoff) {
  require(program.n_logical_modes <= kMaxEnumerationModes, ErrorKind::resource,
          "exact SMSV sampling is limited to " + std::to_string(kMaxEnumerationModes) + " logical modes, got " +
              std::to_string(program.n_logical_modes));
  if (opts.program_hash == "none") opts.program_hash = program_hash(program);
  return sample_smsv_bruteforce(effective_circuit(program, loss), s, opts, cutoff);
}

/// Distinguishable-photon sampler: every input emits pairs with the SMSV pair
/// law, and each photon is routed on its own with probabilities |L_ji|^2.
inline SampleSet sample_distinguishable(const EffectiveCircuit& circuit, double s, const SamplerOptions& opts) {
  opts.validate();
  require(std::isfinite(s) && s >= 0.0, ErrorKind::input, "squeezing must be non-negative");
  const int n_in = circuit.n_inputs();
  const int n_out = circuit.n_outputs();
  SampleSet out = detail::make_set(Hypothesis::distinguishable, n_out, s, opts);
  // per input column: cumulative routing probabilities; the remainder is loss
  std::vector<std::vector<double>> cdf(static_cast<std::size_t>(n_in));
  for (int j = 0; j < n_in; ++j) {
    auto& c = cdf[static_cast<std::size_t>(j)];
    c.resize(static_cast<std::size_t>(n_out));
    double acc = 0.0;
    for (int i = 0; i < n_out; ++i) c[static_cast<std::size_t>(i)] = (acc += std::norm(circuit.matrix(i, j)));
    require(acc <= 1.0 + 1e-9, ErrorKind::input, "circuit column carries more than unit intensity");
  }
  const double t2 = std::tanh(s) * std::tanh(s);
  const double p0 = 1.0 / std::cosh(s);
  detail::parallel_shots(opts.shots, opts.threads, [&](std::size_t begin, std::size_t end) {
    std::vector<int> acc(static_cast<std::size_t>(n_out));
    for (std::size_t shot = begin; shot < end; ++shot) {
      KeyedRng pairs(opts.seed, opts.first_shot + shot, RngStage::pair_draw);
      KeyedRng route(opts.seed, opts.first_shot + shot, RngStage::routing);
      std::fill(acc.begin(), acc.end(), 0);
      for (int j = 0; j < n_in; ++j) {
        // P(k pairs) = p0 * prod_{q<=k} (2q-1)/(2q) t^2
        const double u = pairs.uniform();
        double p = p0, cum = p0;
        int k = 0;
        while (u >= cum && p > 0.0) {
          ++k;
          p *= (2.0 * k - 1.0) / (2.0 * k) * t2;
          cum += p;
        }
        const auto& c = cdf[static_cast<std::size_t>(j)];
        for (int ph = 0; ph < 2 * k; ++ph) {
          const double v = route.uniform();
          const auto it = std::upper_bound(c.begin(), c.end(), v);
          if (it != c.end()) ++acc[static_cast<std::size_t>(it - c.begin())];
        }
      }
      std::uint8_t* row = out.counts.data() + shot * static_cast<std::size_t>(n_out);
      for (int i = 0; i < n_out; ++i) row[i] = static_cast<std::uint8_t>(std::min(acc[static_cast<std::size_t>(i)], opts.pnr_cutoff));
    }
  });
  return out;
}

inline SampleSet sample_distinguishable(const CircuitProgram& program, const LossModel& loss, double s,
                                        SamplerOptions opts) {
  if (opts.program_hash == "none") opts.program_hash = program_hash(program);
  return sample_distinguishable(effective_circuit(program, loss), s, opts);
}

/// Sub-seed for shard k of a run.
inline std::uint64_t shard_seed(std::uint64_t seed, std::uint64_t shard) { return derive_seed(seed, shard); }

inline SampleSet concatenate(const SampleSet& a, const SampleSet& b) {
  require(a.modes == b.modes, ErrorKind::input, "cannot concatenate sample sets with different mode counts");
  SampleSet out = a;
  out.counts.insert(out.counts.end(), b.counts.begin(), b.counts.end());
  return out;
}

// ---------------------------------------------------------------------------
// Sample statistics

inline VectorXd sample_mean_photons(const SampleSet& set) {
  VectorXd mean = VectorXd::Zero(set.modes);
  for (std::size_t s = 0; s < set.shots(); ++s)
    for (int i = 0; i < set.modes; ++i) mean(i) += set.at(s, i);
  return mean / static_cast<double>(set.shots());
}

/// Per-shot total photon number.
inline std::vector<int> shot_totals(const SampleSet& set) {
  std::vector<int> n(set.shots());
  for (std::size_t s = 0; s < set.shots(); ++s) n[s] = set.total(s);
  return n;
}

/// Unbiased sample covariance of the photon counts, accumulated in blocks.
/// Optional per-shot weights (multinomial bootstrap multiplicities).
inline MatrixXd sample_photon_covariance(const SampleSet& set, const std::vector<double>* weights = nullptr) {
  const int m = set.modes;
  const std::size_t shots = set.shots();
  require(shots >= 2, ErrorKind::input, "covariance needs at least two shots");
  MatrixXd second = MatrixXd::Zero(m, m);
  VectorXd first = VectorXd::Zero(m);
  double wsum = 0.0;
  constexpr std::size_t kBlock = 4096;
  MatrixXd block(m, static_cast<Eigen::Index>(kBlock));
  for (std::size_t b0 = 0; b0 < shots; b0 += kBlock) {
    const auto nb = static_cast<Eigen::Index>(std::min(kBlock, shots - b0));
    for (Eigen::Index c = 0; c < nb; ++c) {
      const auto* r = set.row(b0 + static_cast<std::size_t>(c));
      // rows carry sqrt(weight) so the rank update accumulates weight * n n^T
      const double w = weights ? std::sqrt((*weights)[b0 + static_cast<std::size_t>(c)]) : 1.0;
      for (int i = 0; i < m; ++i) block(i, c) = w * r[i];
      first += w * block.col(c);
      wsum += w * w;
    }
    second.selfadjointView<Eigen::Lower>().rankUpdate(block.leftCols(nb));
  }
  const MatrixXd full = second.selfadjointView<Eigen::Lower>();
  const VectorXd mean = first / wsum;
  return (full - wsum * mean * mean.transpose()) / (wsum - 1.0);
}

/// Empirical pattern frequencies on the layout of an enumerated distribution;
/// shots outside the layout are dropped from the histogram.
inline std::vector<double> empirical_distribution(const SampleSet& set, const Distribution& layout) {
  require(set.modes == layout.modes, ErrorKind::input, "sample set and distribution differ in mode count");
  std::vector<double> freq(layout.size(), 0.0);
  for (std::size_t s = 0; s < set.shots(); ++s) {
    const auto idx = layout.index_of(set.row(s));
    if (idx) freq[*idx] += 1.0;
  }
  for (double& f : freq) f /= static_cast<double>(set.shots());
  return freq;
}

// ---------------------------------------------------------------------------
// File format: one header line of key=value fields, then one CSV row per shot.

namespace detail {

inline std::string escape_value(const std::string& v) {
  std::string out;
  for (unsigned char c : v) {
    if (c == '%' || c == ' ' || c == '=' || c == '\n' || c == '\r' || c == ',' || c < 0x20) {
      static const char* hex = "0123456789ABCDEF";
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 15];
    } else {
      out += static_cast<char>(c);
    }
  }
  return out;
}

inline std::string unescape_value(const std::string& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == '%') {
      require(i + 2 < v.size(), ErrorKind::ingestion, "truncated escape in header");
      out += static_cast<char>(std::stoi(v.substr(i + 1, 2), nullptr, 16));
      i += 2;
    } else {
      out += v[i];
    }
  }
  return out;
}

}  // namespace detail

inline constexpr std::string_view kSampleHeaderTag = "#loopgbs-samples";

inline void write_samples(std::ostream& os, const SampleSet& set) {
  const auto& m = set.meta;
  os << kSampleHeaderTag << " hypothesis=" << detail::escape_value(m.hypothesis)
     << " certificate=" << detail::escape_value(m.certificate_id)
     << " program_hash=" << detail::escape_value(m.program_hash) << " seed=" << m.seed
     << " pnr_cutoff=" << m.pnr_cutoff << " squeezing=" << format_double(m.squeezing)
     << " tool_version=" << detail::escape_value(m.tool_version) << " modes=" << set.modes
     << " shots=" << set.shots();
  for (const auto& [k, v] : m.extra) os << " x." << detail::escape_value(k) << '=' << detail::escape_value(v);
  os << '\n';
  std::string line;
  for (std::size_t s = 0; s < set.shots(); ++s) {
    line.clear();
    const auto* r = set.row(s);
    for (int i = 0; i < set.modes; ++i) {
      if (i) line += ',';
      line += std::to_string(r[i]);
    }
    line += '\n';
    os << line;
  }
}

inline SampleSet read_samples(std::istream& is) {
  std::string header;
  require(static_cast<bool>(std::getline(is, header)), ErrorKind::ingestion, "empty sample file");
  std::istringstream hs(header);
  std::string tag;
  hs >> tag;
  require(tag == kSampleHeaderTag, ErrorKind::ingestion, "missing sample-file header");
  std::map<std::string, std::string> kv;
  std::string field;
  while (hs >> field) {
    const auto eq = field.find('=');
    require(eq != std::string::npos, ErrorKind::ingestion, "malformed header field '" + field + "'");
    kv[field.substr(0, eq)] = field.substr(eq + 1);
  }
  const auto need = [&](const char* key) -> std::string {
    const auto it = kv.find(key);
    require(it != kv.end(), ErrorKind::ingestion, std::string(key) + ": missing key in sample header");
    return detail::unescape_value(it->second);
  };
  SampleSet set;
  std::size_t shots = 0;
  try {
    set.meta.hypothesis = need("hypothesis");
    set.meta.certificate_id = need("certificate");
    set.meta.program_hash = need("program_hash");
    set.meta.seed = std::stoull(need("seed"));
    set.meta.pnr_cutoff = std::stoi(need("pnr_cutoff"));
    set.meta.squeezing = std::stod(need("squeezing"));
    set.meta.tool_version = need("tool_version");
    set.modes = std::stoi(need("modes"));
    shots = std::stoull(need("shots"));
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const Error*>(&e)) throw;
    fail(ErrorKind::ingestion, std::string("bad numeric header value: ") + e.what());
  }
  for (const auto& [k, v] : kv)
    if (k.rfind("x.", 0) == 0) set.meta.extra[detail::unescape_value(k.substr(2))] = detail::unescape_value(v);
  require(set.modes > 0, ErrorKind::ingestion, "modes: must be positive");
  set.counts.reserve(shots * static_cast<std::size_t>(set.modes));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    int mode = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const auto next = std::min(line.find(',', pos), line.size());
      int v = -1;
      try {
        v = std::stoi(line.substr(pos, next - pos));
      } catch (const std::logic_error&) {
        fail(ErrorKind::ingestion, "non-integer count on shot " + std::to_string(rows));
      }
      require(v >= 0 && v <= set.meta.pnr_cutoff, ErrorKind::ingestion,
              "count " + std::to_string(v) + " outside [0, pnr_cutoff] on shot " + std::to_string(rows));
      set.counts.push_back(static_cast<std::uint8_t>(v));
      ++mode;
      pos = next + 1;
    }
    require(mode == set.modes, ErrorKind::ingestion, "shot " + std::to_string(rows) + " has the wrong number of modes");
    ++rows;
  }
  require(rows == shots, ErrorKind::ingestion, "shots: header announces " + std::to_string(shots) + " rows, found " +
                                                   std::to_string(rows));
  return set;
}

inline void save_samples(const SampleSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::input, "cannot write " + path);
  write_samples(out, set);
}

inline SampleSet load_samples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::input, "cannot open sample file " + path);
  return read_samples(in);
}

}  // namespace loopgbs
