#include <gtest/gtest.h>

#include <sstream>

#include "fock_oracle.hpp"
#include "loopgbs/gaussian_engine.hpp"
#include "test_util.hpp"

using namespace loopgbs;

namespace {

MatrixXc beamsplitter(double t, double phi) {
  MatrixXc u(2, 2);
  const cplx I(0, 1);
  u << std::sqrt(t) * std::polar(1.0, phi), I * std::sqrt(1 - t), I * std::sqrt(1 - t) * std::polar(1.0, phi),
      std::sqrt(t);
  return u;
}

void expect_moments_match(const GaussianState& g, const fock::TwoMode& f, double tol) {
  const auto mom = second_moments(g);
  const MatrixXc a0 = f.ladder(0), a1 = f.ladder(1);
  const MatrixXc a[2] = {a0, a1};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      EXPECT_LE(std::abs(mom.n(i, j) - f.expect(a[i].adjoint() * a[j])), tol) << "N" << i << j;
      EXPECT_LE(std::abs(mom.m(i, j) - f.expect(a[i] * a[j])), tol) << "M" << i << j;
    }
  const MatrixXd c = photon_covariance(g);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const MatrixXc ni = a[i].adjoint() * a[i], nj = a[j].adjoint() * a[j];
      const double ref = (f.expect(ni * nj) - f.expect(ni) * f.expect(nj)).real();
      EXPECT_NEAR(c(i, j), ref, tol) << "C" << i << j;
    }
}

}  // namespace

TEST(Prepare, SmsvZeroIsVacuum) {
  const auto s = prepare_input({InputKind::smsv, 0.0, 3});
  EXPECT_LE((s.cov() - MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Prepare, EqualLosslessMeansAcrossFamilies) {
  for (double s : {0.0, 0.3, 0.669, 0.978, 1.149}) {
    const double target = std::sinh(s) * std::sinh(s);
    for (auto k : {InputKind::smsv, InputKind::thermal, InputKind::squashed, InputKind::coherent}) {
      const auto st = prepare_input({k, s, 4});
      for (int i = 0; i < 4; ++i) EXPECT_NEAR(mean_photons(st)(i), target, 1e-12) << to_string(k);
      EXPECT_TRUE(st.is_physical());
    }
  }
  const auto th = prepare_input({InputKind::thermal, 0.669, 216});
  EXPECT_NEAR(mean_photons(th).sum(), 112.0, 0.05);
  EXPECT_NEAR(mean_photons(th)(0), 0.5185, 1e-4);
}

TEST(Prepare, ClassicalFamiliesAreClassical) {
  for (auto k : {InputKind::thermal, InputKind::squashed, InputKind::coherent, InputKind::vacuum})
    EXPECT_TRUE(prepare_input({k, 0.8, 2}).is_classical()) << to_string(k);
  EXPECT_FALSE(prepare_input({InputKind::smsv, 0.8, 2}).is_classical());
  const auto sq = prepare_input({InputKind::squashed, 1.1, 1});
  EXPECT_EQ(sq.cov()(0, 0), 1.0);
}

TEST(Prepare, RejectsNegativeSqueezing) {
  try {
    prepare_input({InputKind::smsv, -0.1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::input);
  }
  EXPECT_THROW(input_kind_from_string("gaussian"), Error);
}

TEST(Evolve, VacuumStaysVacuum) {
  std::mt19937_64 gen(1);
  const MatrixXc t = 0.8 * testutil::random_unitary(5, gen);
  const auto out = evolve(GaussianState::vacuum(5), t);
  EXPECT_LE((out.cov() - MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Evolve, ScalarLossScalesIntensity) {
  const double s = 0.7, eta = 0.37;
  const auto st = prepare_input({InputKind::smsv, s, 1});
  MatrixXc t(1, 1);
  t(0, 0) = std::sqrt(eta);
  EXPECT_NEAR(mean_photons(evolve(st, t))(0), eta * std::sinh(s) * std::sinh(s), 1e-14);
}

TEST(Evolve, RejectsGain) {
  MatrixXc t(1, 1);
  t(0, 0) = 1.01;
  try {
    evolve(GaussianState::vacuum(1), t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::input);
  }
}

TEST(Evolve, ComposesForUnitaries) {
  std::mt19937_64 gen(3);
  const auto st = prepare_input({InputKind::smsv, 0.5, 4});
  const MatrixXc u1 = testutil::random_unitary(4, gen), u2 = testutil::random_unitary(4, gen);
  const auto a = evolve(evolve(st, u2), u1);
  const auto b = evolve(st, u1 * u2);
  EXPECT_LE((a.cov() - b.cov()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(a.uncertainty_margin(), 0.0, 1e-9);
}

TEST(Evolve, PhysicalityAndLossMonotone) {
  std::mt19937_64 gen(4);
  const auto st = prepare_input({InputKind::smsv, 1.0, 6});
  const MatrixXc t = testutil::random_unitary(6, gen);
  const auto out = evolve(st, t);
  std::vector<double> eta{0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
  const auto lossy = apply_loss(out, eta);
  EXPECT_TRUE(lossy.is_physical());
  for (int i = 0; i < 6; ++i) EXPECT_LE(mean_photons(lossy)(i), mean_photons(out)(i) + 1e-15);
  // loss through evolve with a diagonal map agrees with apply_loss
  MatrixXc d = MatrixXc::Zero(6, 6);
  for (int i = 0; i < 6; ++i) d(i, i) = std::sqrt(eta[i]);
  EXPECT_LE((evolve(out, d).cov() - lossy.cov()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Loss, IdentityAndThermalScaling) {
  const auto th = prepare_input({InputKind::thermal, 0.6, 2});
  EXPECT_EQ(apply_loss(th, {1.0, 1.0}).cov(), th.cov());
  const auto l = apply_loss(th, {0.25, 0.5});
  EXPECT_NEAR(mean_photons(l)(0), 0.25 * std::sinh(0.6) * std::sinh(0.6), 1e-14);
  EXPECT_NEAR(l.cov()(0, 1), 0.0, 0.0);
  EXPECT_THROW(apply_loss(th, {1.2, 0.5}), Error);
}

TEST(FockOracle, TwoModeSmsvThroughLossyBeamsplitter) {
  const int dim = 22;
  const double s0 = 0.4, s1 = 0.25;
  auto f = fock::TwoMode::product(fock::pure(fock::squeezed_vacuum(s0, dim)), fock::pure(fock::squeezed_vacuum(s1, dim)));
  const MatrixXc u = beamsplitter(0.5, 0.3);
  f.apply_passive(u);
  f.apply_loss(0, 0.7);
  f.apply_loss(1, 0.45);

  MatrixXd cov = MatrixXd::Identity(4, 4);
  cov(0, 0) = std::exp(-2 * s0);
  cov(2, 2) = std::exp(2 * s0);
  cov(1, 1) = std::exp(-2 * s1);
  cov(3, 3) = std::exp(2 * s1);
  auto g = evolve(GaussianState(VectorXd::Zero(4), cov), u);
  g = apply_loss(g, {0.7, 0.45});
  expect_moments_match(g, f, 1e-8);
}

TEST(FockOracle, ThermalThroughBeamsplitterHasNoAnomalousTerms) {
  const int dim = 24;
  const double s = 0.5;
  const double nbar = std::sinh(s) * std::sinh(s);
  auto f = fock::TwoMode::product(fock::thermal(nbar, dim), fock::thermal(nbar * 0.5, dim));
  const MatrixXc u = beamsplitter(0.3, -0.8);
  f.apply_passive(u);
  MatrixXd cov = MatrixXd::Identity(4, 4);
  cov(0, 0) = cov(2, 2) = 1 + 2 * nbar;
  cov(1, 1) = cov(3, 3) = 1 + nbar;
  const auto g = evolve(GaussianState(VectorXd::Zero(4), cov), u);
  EXPECT_LE(second_moments(g).m.cwiseAbs().maxCoeff(), 1e-15);
  expect_moments_match(g, f, 1e-6);
}

TEST(PhotonCovariance, RejectsDisplacedStates) {
  try {
    photon_covariance(prepare_input({InputKind::coherent, 0.5, 2}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unsupported);
  }
}

TEST(LossModel, DetectorAssignmentAndEffectiveCircuit) {
  LossModel loss;
  loss.common_efficiency = 0.5;
  loss.channel_efficiencies[3] = 0.8;
  loss.disabled_detectors = {5};
  EXPECT_EQ(loss.detector_of(21), 5);
  EXPECT_EQ(loss.channel_efficiency_for_mode(21), 0.0);
  EXPECT_EQ(loss.channel_efficiency_for_mode(19), 0.8);
  const auto p = uniform_program(LoopSpec{}, 40, 43, 1.0);
  const auto c = effective_circuit(p, loss);
  EXPECT_EQ(c.n_outputs(), 40);
  EXPECT_EQ(c.n_inputs(), 83);
  EXPECT_NEAR(std::abs(c.matrix(3, 46)), std::sqrt(0.4), 1e-15);
  EXPECT_EQ(std::abs(c.matrix(5, 48)), 0.0);
  const auto dark = effective_circuit(p, loss, FillInputs::dark);
  EXPECT_EQ(dark.n_inputs(), 40);
}

TEST(LossModel, UniformPlacementChargesEachLoopOnce) {
  LossModel loss;
  loss.loop_efficiencies = {0.9, 0.8, 0.7};
  loss.placement = LoopLossPlacement::uniform;
  const auto p = random_program(LoopSpec{}, 30, 43, 2);
  const auto c = effective_circuit(p, loss);
  const auto u = compile_unitary(p).entries.block(43, 0, 30, 73);
  EXPECT_LE((c.matrix - std::sqrt(0.9 * 0.8 * 0.7) * u).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(StateText, RoundTrip) {
  std::mt19937_64 gen(6);
  const auto st = evolve(prepare_input({InputKind::coherent, 0.4, 3}), testutil::random_unitary(3, gen));
  std::stringstream ss;
  write_state(ss, st);
  const auto back = read_state(ss);
  EXPECT_EQ(back.mean(), st.mean());
  EXPECT_EQ(back.cov(), st.cov());
}
