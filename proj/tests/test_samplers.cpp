#include <gtest/gtest.h>

#include <sstream>

#include "loopgbs/samplers.hpp"
#include "test_util.hpp"

using namespace loopgbs;

namespace {

CircuitProgram four_mode_program(std::uint64_t seed) {
  LoopSpec spec;
  spec.delays = {1, 2};
  spec.static_phases = {0.4, -1.1};
  return random_program(spec, 4, 3, seed);
}

LossModel four_mode_loss() {
  LossModel loss;
  loss.common_efficiency = 0.6;
  loss.loop_efficiencies = {0.9, 0.85};
  loss.channel_efficiencies = {0.95, 0.9, 1.0, 0.85};
  return loss;
}

EffectiveCircuit identity_circuit(int m) { return {MatrixXc::Identity(m, m)}; }

std::vector<double> single_mode_histogram(const SampleSet& set, int cutoff) {
  std::vector<double> h(static_cast<std::size_t>(cutoff) + 1, 0.0);
  for (std::size_t s = 0; s < set.shots(); ++s) h[static_cast<std::size_t>(set.at(s, 0))] += 1.0 / set.shots();
  return h;
}

SamplerOptions opts(std::size_t shots, std::uint64_t seed) {
  SamplerOptions o;
  o.shots = shots;
  o.seed = seed;
  return o;
}

double total_mean(const SampleSet& set, double* se) {
  const auto n = shot_totals(set);
  double m = 0, m2 = 0;
  for (int v : n) {
    m += v;
    m2 += static_cast<double>(v) * v;
  }
  m /= n.size();
  m2 /= n.size();
  *se = std::sqrt((m2 - m * m) / n.size());
  return m;
}

}  // namespace

TEST(CappedPoisson, MatchesPmf) {
  const double mu = 1.7;
  std::vector<double> hist(8, 0.0);
  KeyedRng rng(3, 0, RngStage::detection);
  const int n = 400000;
  for (int i = 0; i < n; ++i) hist[detail::capped_poisson(mu, rng.uniform(), 7)] += 1.0 / n;
  double tail = 1.0;
  for (int k = 0; k < 7; ++k) {
    const double p = std::exp(-mu) * std::pow(mu, k) / std::tgamma(k + 1.0);
    tail -= p;
    EXPECT_NEAR(hist[k], p, 5 * std::sqrt(p / n));
  }
  EXPECT_NEAR(hist[7], tail, 5 * std::sqrt(tail / n) + 1e-4);
}

TEST(Classical, CoherentSingleModeIsPoisson) {
  const double s = 0.669, mu = std::sinh(s) * std::sinh(s);
  const auto set = sample_classical(InputKind::coherent, identity_circuit(1), s, opts(100000, 1));
  const auto h = single_mode_histogram(set, 7);
  std::vector<double> ref(8);
  for (int k = 0; k < 8; ++k) ref[k] = std::exp(-mu) * std::pow(mu, k) / std::tgamma(k + 1.0);
  EXPECT_LT(testutil::tvd(h, ref), 0.01);
}

TEST(Classical, FourModeTvdAgainstEnumeration) {
  const auto program = four_mode_program(5);
  const auto circuit = effective_circuit(program, four_mode_loss());
  const double s = 0.669;
  for (auto kind : {InputKind::thermal, InputKind::squashed, InputKind::coherent}) {
    const auto set = sample_classical(kind, circuit, s, opts(100000, 11));
    EnumerationOptions eo;
    eo.cutoff = 7;
    eo.max_total = 16;
    const auto dist = enumerate_distribution(output_state(circuit, kind, s), 4, eo);
    EXPECT_GT(dist.captured_mass, 0.999);
    const double d = testutil::tvd(empirical_distribution(set, dist), dist.probabilities);
    EXPECT_LT(d, 0.02) << to_string(kind);
  }
}

TEST(Classical, LosslessFamiliesShareMeanPhotons) {
  std::mt19937_64 gen(9);
  const EffectiveCircuit c{testutil::random_unitary(6, gen)};
  const double s = 0.5;
  const double expected = 6 * std::sinh(s) * std::sinh(s);
  for (auto kind : {InputKind::thermal, InputKind::squashed, InputKind::coherent}) {
    double se = 0;
    const double m = total_mean(sample_classical(kind, c, s, opts(60000, 4)), &se);
    EXPECT_NEAR(m, expected, 3 * se + 1e-3) << to_string(kind);
  }
}

TEST(Classical, RejectsSmsv) {
  try {
    sample_classical(InputKind::smsv, identity_circuit(1), 0.5, opts(10, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unsupported);
  }
}

TEST(Classical, CountsNeverExceedCutoff) {
  SamplerOptions o = opts(2000, 2);
  o.pnr_cutoff = 2;
  const auto set = sample_classical(InputKind::thermal, identity_circuit(3), 1.5, o);
  for (auto c : set.counts) EXPECT_LE(c, 2);
}

TEST(Classical, FullScaleMeansAndCovarianceMatchAnalytics) {
  const auto program = random_program(LoopSpec{}, 216, 43, 7);
  LossModel loss;
  loss.common_efficiency = 0.392;
  loss.loop_efficiencies = {0.88, 0.836, 0.734};
  const auto circuit = effective_circuit(program, loss);
  const double s = 0.669;
  for (auto kind : {InputKind::thermal, InputKind::squashed}) {
    SamplerOptions o = opts(250000, 21);
    const auto set = sample_classical(kind, circuit, s, o);
    const auto state = output_state(circuit, kind, s);
    const VectorXd mean = mean_photons(state);
    const MatrixXd analytic = photon_covariance(state);
    const VectorXd smean = sample_mean_photons(set);
    const MatrixXd scov = sample_photon_covariance(set);
    // standard errors from the fourth moments of the centred counts
    const auto shots = static_cast<double>(set.shots());
    MatrixXd dev(set.modes, static_cast<Eigen::Index>(set.shots()));
    for (std::size_t t = 0; t < set.shots(); ++t)
      for (int i = 0; i < set.modes; ++i) dev(i, static_cast<Eigen::Index>(t)) = set.at(t, i) - smean(i);
    const MatrixXd sq = dev.cwiseAbs2();
    const MatrixXd fourth = (sq * sq.transpose()) / shots;
    int mean_bad = 0, cov_bad = 0;
    for (int i = 0; i < set.modes; ++i) {
      const double se = std::sqrt(scov(i, i) / shots);
      if (std::abs(smean(i) - mean(i)) > 5 * se) ++mean_bad;
      for (int j = 0; j < set.modes; ++j) {
        const double se_c = std::sqrt(std::max(fourth(i, j) - scov(i, j) * scov(i, j), 1e-300) / shots);
        if (std::abs(scov(i, j) - analytic(i, j)) > 5 * se_c) ++cov_bad;
      }
    }
    EXPECT_EQ(mean_bad, 0) << to_string(kind);
    EXPECT_EQ(cov_bad, 0) << to_string(kind);
  }
}

TEST(Bruteforce, ZeroSqueezingIsVacuum) {
  const auto set = sample_smsv_bruteforce(four_mode_program(2), four_mode_loss(), 0.0, opts(500, 3));
  for (auto c : set.counts) EXPECT_EQ(c, 0);
}

TEST(Bruteforce, SingleModeClosedForm) {
  const double s = 0.669;
  const auto set = sample_smsv_bruteforce(identity_circuit(1), s, opts(100000, 5));
  const auto h = single_mode_histogram(set, 7);
  std::vector<double> ref(8, 0.0);
  const double t = std::tanh(s);
  for (int k = 0; 2 * k <= 7; ++k)
    ref[2 * k] = std::tgamma(2.0 * k + 1) * std::pow(t, 2 * k) / std::pow(std::pow(2.0, k) * std::tgamma(k + 1.0), 2) /
                 std::cosh(s);
  EXPECT_LT(testutil::tvd(h, ref), 0.01);
}

TEST(Bruteforce, FourModeTvd) {
  const auto circuit = effective_circuit(four_mode_program(8), four_mode_loss());
  const double s = 0.669;
  SamplerOptions o = opts(100000, 6);
  const auto set = sample_smsv_bruteforce(circuit, s, o, 7);
  EnumerationOptions eo;
  eo.cutoff = 7;
  const auto dist = enumerate_distribution(output_state(circuit, InputKind::smsv, s), 4, eo);
  EXPECT_LT(testutil::tvd(empirical_distribution(set, dist), dist.probabilities), 0.02);
}

TEST(Bruteforce, SizeLimit) {
  try {
    sample_smsv_bruteforce(random_program(LoopSpec{}, 8, 43, 1), LossModel{}, 0.5, opts(10, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::resource);
  }
}

TEST(Distinguishable, SingleModeFollowsPairLaw) {
  const double s = 0.669;
  const auto set = sample_distinguishable(identity_circuit(1), s, opts(100000, 7));
  const auto h = single_mode_histogram(set, 7);
  const auto dist = enumerate_distribution(prepare_input({InputKind::smsv, s, 1}), 1, {7, -1, {}});
  EXPECT_LT(testutil::tvd(h, dist.probabilities), 0.01);
}

TEST(Distinguishable, NoTwoPhotonInterference) {
  MatrixXc u(2, 2);
  const cplx I(0, 1);
  u << std::sqrt(0.5), I * std::sqrt(0.5), I * std::sqrt(0.5), std::sqrt(0.5);
  const EffectiveCircuit c{u};
  const double s = 0.35;
  const std::size_t shots = 100000;
  const auto set = sample_distinguishable(c, s, opts(shots, 8));
  const auto dist = enumerate_distribution(evolve(prepare_input({InputKind::smsv, s, 2}), u), 2, {7, -1, {}});
  const auto emp = empirical_distribution(set, dist);
  // the indistinguishable state never shows a (1, 1) coincidence from one pair
  // at a balanced splitter in this phase convention; the distinguishable one does
  const std::size_t k11 = *dist.index_of(std::vector<int>{1, 1});
  const double p = dist.probabilities[k11];
  const double sigma = std::sqrt(std::max(emp[k11], 1.0 / shots) / shots);
  EXPECT_GT(std::abs(emp[k11] - p), 5 * sigma);
  EXPECT_GT(testutil::tvd(emp, dist.probabilities), 5 * std::sqrt(1.0 / shots));
}

TEST(Distinguishable, ConservesMeanIntensity) {
  const auto program = random_program(LoopSpec{}, 216, 43, 3);
  LossModel loss;
  loss.common_efficiency = 0.392;
  loss.loop_efficiencies = {0.88, 0.836, 0.734};
  const auto circuit = effective_circuit(program, loss);
  const double s = 0.669;
  double se = 0;
  const double m = total_mean(sample_distinguishable(circuit, s, opts(40000, 9)), &se);
  const double analytic = mean_photons(output_state(circuit, InputKind::smsv, s)).sum();
  EXPECT_NEAR(m, analytic, 3 * se);
}

TEST(Reproducibility, SameSeedSameSamplesAnyThreadCount) {
  const auto circuit = effective_circuit(four_mode_program(3), four_mode_loss());
  SamplerOptions a = opts(5000, 42), b = a;
  b.threads = 3;
  EXPECT_EQ(sample_classical(InputKind::thermal, circuit, 0.9, a).counts,
            sample_classical(InputKind::thermal, circuit, 0.9, b).counts);
  EXPECT_EQ(sample_distinguishable(circuit, 0.9, a), sample_distinguishable(circuit, 0.9, b));
  EXPECT_EQ(sample_smsv_bruteforce(circuit, 0.9, a, 6), sample_smsv_bruteforce(circuit, 0.9, b, 6));
  SamplerOptions c = a;
  c.seed = 43;
  EXPECT_NE(sample_classical(InputKind::thermal, circuit, 0.9, a).counts,
            sample_classical(InputKind::thermal, circuit, 0.9, c).counts);
}

TEST(Reproducibility, ShardsByIndexConcatenateExactly) {
  const auto circuit = effective_circuit(four_mode_program(3), four_mode_loss());
  const auto whole = sample_classical(InputKind::squashed, circuit, 0.7, opts(3000, 5));
  SamplerOptions first = opts(1000, 5), second = opts(2000, 5);
  second.first_shot = 1000;
  const auto joined = concatenate(sample_classical(InputKind::squashed, circuit, 0.7, first),
                                  sample_classical(InputKind::squashed, circuit, 0.7, second));
  EXPECT_EQ(joined.counts, whole.counts);
}

TEST(Reproducibility, SubSeedShardsMatchSingleRunStatistics) {
  const auto program = random_program(LoopSpec{}, 216, 43, 7);
  LossModel loss;
  loss.common_efficiency = 0.392;
  loss.loop_efficiencies = {0.88, 0.836, 0.734};
  const auto circuit = effective_circuit(program, loss);
  const auto one = sample_classical(InputKind::thermal, circuit, 0.669, opts(250000, 100));
  const auto a = sample_classical(InputKind::thermal, circuit, 0.669, opts(125000, shard_seed(100, 0)));
  const auto b = sample_classical(InputKind::thermal, circuit, 0.669, opts(125000, shard_seed(100, 1)));
  const auto both = concatenate(a, b);
  const auto na = shot_totals(one), nb = shot_totals(both);
  EXPECT_GT(testutil::ks_pvalue(std::vector<double>(na.begin(), na.end()), std::vector<double>(nb.begin(), nb.end())),
            0.01);
}

TEST(SampleFile, RoundTripIsBitExact) {
  const auto circuit = effective_circuit(four_mode_program(3), four_mode_loss());
  SamplerOptions o = opts(700, 77);
  o.certificate_id = "jan 12=cert%";
  auto set = sample_classical(InputKind::thermal, circuit, 0.669, o);
  set.meta.extra["note"] = "a, b";
  std::stringstream s1;
  write_samples(s1, set);
  const auto back = read_samples(s1);
  EXPECT_EQ(back, set);
  std::stringstream s2;
  write_samples(s2, back);
  EXPECT_EQ(s1.str(), s2.str());
}

TEST(SampleFile, RejectsCorruptInput) {
  std::stringstream bad("#loopgbs-samples hypothesis=thermal\n0,1\n");
  try {
    read_samples(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ingestion);
  }
  SampleSet set;
  set.modes = 2;
  set.meta.pnr_cutoff = 3;
  set.counts = {0, 1, 2, 3};
  std::stringstream ss;
  write_samples(ss, set);
  std::string text = ss.str();
  text.replace(text.rfind('3'), 1, "9");
  std::stringstream tampered(text);
  EXPECT_THROW(read_samples(tampered), Error);
}

TEST(SampleStats, WeightedCovarianceMatchesDuplication) {
  SampleSet set;
  set.modes = 2;
  set.counts = {0, 1, 2, 2, 1, 0, 3, 1};
  const std::vector<double> w{2, 0, 1, 1};
  SampleSet dup;
  dup.modes = 2;
  dup.counts = {0, 1, 0, 1, 1, 0, 3, 1};
  EXPECT_LE((sample_photon_covariance(set, &w) - sample_photon_covariance(dup)).cwiseAbs().maxCoeff(), 1e-12);
}
