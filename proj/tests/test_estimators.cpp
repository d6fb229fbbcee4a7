#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "qlink/estimators.hpp"

using namespace qlink;

namespace {

// Hand-evaluated concurrence of the heralded two-memory state.
double closed_form_concurrence(const Probabilities& p, double v) {
  double d = v * (p.p01 + p.p10) / 2.0;
  return std::max(0.0, 2.0 * std::abs(d) - 2.0 * std::sqrt(p.p00 * p.p11));
}

Probabilities random_probabilities(std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  double a = e(rng), b = e(rng), c = e(rng), d = e(rng) * 0.1;
  double n = a + b + c + d;
  return {a / n, b / n, c / n, d / n};
}

}  // namespace

TEST(Concurrence, HandEvaluatedExample) {
  Probabilities p{0.986, 7e-3, 7e-3, 1.76e-6};
  ConcurrenceEstimate c = concurrence(ProbabilityEstimate::exact(p), {0.84, 0.0});
  EXPECT_NEAR(c.d, 5.88e-3, 1e-15);
  EXPECT_NEAR(c.concurrence.value, 0.84 * 7e-3 * 2 - 2 * std::sqrt(0.986 * 1.76e-6), 1e-15);
  EXPECT_NEAR(c.concurrence.value, 9.13e-3, 5e-6);
}

TEST(Concurrence, LimitingCases) {
  EXPECT_EQ(concurrence(Probabilities{0.9, 0.05, 0.05, 0.0}, 0.0), 0.0);
  EXPECT_NEAR(concurrence(Probabilities{0.0, 0.5, 0.5, 0.0}, 1.0), 1.0, 1e-15);
}

TEST(Concurrence, ClippedAtZero) {
  ConcurrenceEstimate c = concurrence(ProbabilityEstimate::exact({0.9, 1e-3, 1e-3, 0.01}), {0.5, 0.0});
  EXPECT_LT(c.unclipped, 0.0);
  EXPECT_EQ(c.concurrence.value, 0.0);
}

TEST(Concurrence, FirstOrderErrorMatchesNumericalPropagation) {
  ProbabilityEstimate p{{0.98, 1e-3}, {9e-3, 4e-4}, {8e-3, 3e-4}, {5e-6, 2e-6}, false};
  Measured v{0.8, 0.05};
  double base = concurrence(p, v).unclipped;
  auto shifted = [&](int which, double h) {
    ProbabilityEstimate q = p;
    Measured w = v;
    Measured* fields[] = {&q.p00, &q.p01, &q.p10, &q.p11, &w};
    fields[which]->value += h;
    return concurrence(q, w).unclipped;
  };
  double var = 0.0;
  Measured* errors[] = {&p.p00, &p.p01, &p.p10, &p.p11, &v};
  for (int k = 0; k < 5; ++k) {
    double h = 1e-9;
    double g = (shifted(k, h) - shifted(k, -h)) / (2 * h);
    var += std::pow(g * errors[k]->error, 2);
  }
  EXPECT_NEAR(concurrence(p, v).concurrence.error, std::sqrt(var), 1e-6 * std::sqrt(var));
  EXPECT_NEAR(base, 2 * 0.4 * 17e-3 - 2 * std::sqrt(0.98 * 5e-6), 1e-15);
}

TEST(H2c, Definition) {
  Probabilities p{0.98, 9e-3, 8e-3, 0.0};
  p.p11 = 0.036 * p.p01 * p.p10;
  EXPECT_NEAR(h2c(p), 0.036, 1e-15);
  EXPECT_EQ(h2c(Probabilities{0.98, 0.01, 0.01, 0.0}), 0.0);
}

TEST(H2c, InsufficientSingles) {
  try {
    h2c(Probabilities{0.99, 0.0, 0.01, 0.0});
    FAIL() << "expected EstimationError";
  } catch (const EstimationError& e) {
    EXPECT_NE(std::string(e.what()).find("insufficient single counts"), std::string::npos);
  }
}

TEST(EffectiveFidelity, PaperLimit) {
  EXPECT_NEAR(effective_fidelity_closed_form({0.98, 0.01, 0.01, 0.0}, 0.84), 0.92, 1e-15);
  EXPECT_NEAR(effective_fidelity_closed_form({0.0, 0.5, 0.5, 0.0}, 1.0), 1.0, 1e-15);
}

TEST(EffectiveFidelity, RoutesAgreeOnExample) {
  Probabilities p{0.986, 7e-3, 7e-3, 1.76e-6};
  EXPECT_NEAR(effective_fidelity_matrix(p, 0.84), effective_fidelity_closed_form(p, 0.84), 1e-9);
}

TEST(EffectiveFidelity, RoutesAgreeRandomized) {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    Probabilities p = random_probabilities(rng);
    double v = u(rng);
    double phase = 6.283185307179586 * u(rng);
    if (v * (p.p01 + p.p10) / 2 > std::sqrt(p.p01 * p.p10)) continue;
    EXPECT_NEAR(effective_fidelity_matrix(p, v, phase), effective_fidelity_closed_form(p, v), 1e-9);
  }
}

TEST(DensityMatrix, IdealBellState) {
  DensityMatrix dm = density_matrix({0.0, 0.5, 0.5, 0.0}, 0.5);
  Eigen::Vector4cd psi(0.0, 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0), 0.0);
  EXPECT_LT((dm.rho - psi * psi.adjoint()).norm(), 1e-15);
  EXPECT_FALSE(dm.clipped);
  EXPECT_NEAR(wootters_concurrence(dm.rho), 1.0, 1e-9);
}

TEST(DensityMatrix, ZeroCoherenceIsDiagonal) {
  DensityMatrix dm = density_matrix({0.9, 0.04, 0.05, 0.01}, 0.0);
  Eigen::Matrix4cd off = dm.rho;
  off.diagonal().setZero();
  EXPECT_EQ(off.norm(), 0.0);
}

TEST(DensityMatrix, ClipsUnphysicalCoherence) {
  DensityMatrix dm = density_matrix({0.9, 0.01, 0.04, 0.05}, 0.1);
  EXPECT_TRUE(dm.clipped);
  EXPECT_NEAR(std::abs(dm.rho(1, 2)), std::sqrt(0.01 * 0.04), 1e-15);
}

TEST(Wootters, MatchesClosedFormOnCalibratedInputs) {
  Probabilities p{0.98234, 0.008826, 0.008826, 2.8e-6};
  p.p00 = 1.0 - p.p01 - p.p10 - p.p11;
  double v = 0.84;
  DensityMatrix dm = density_matrix(p, v * (p.p01 + p.p10) / 2);
  EXPECT_NEAR(wootters_concurrence(dm.rho), closed_form_concurrence(p, v), 1e-9);
}

TEST(Wootters, MatchesClosedFormRandomized) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    Probabilities p = random_probabilities(rng);
    double v = u(rng);
    DensityMatrix dm = density_matrix(p, v * (p.p01 + p.p10) / 2, 6.283185307179586 * u(rng));
    if (dm.clipped) continue;
    EXPECT_NEAR(wootters_concurrence(dm.rho), closed_form_concurrence(p, v), 1e-9);
  }
}

TEST(Uhlmann, PureStates) {
  Eigen::Vector4cd a(1.0, 0.0, 0.0, 0.0), b(std::sqrt(0.5), std::sqrt(0.5), 0.0, 0.0);
  Eigen::Matrix4cd ra = a * a.adjoint(), rb = b * b.adjoint();
  EXPECT_NEAR(uhlmann_fidelity(ra, ra), 1.0, 1e-12);
  EXPECT_NEAR(uhlmann_fidelity(ra, rb), 0.5, 1e-12);
}

TEST(Backtrace, UnitEfficiencyIsIdentity) {
  ProbabilityEstimate p = ProbabilityEstimate::exact({1.0 - 0.019003, 0.01, 0.009, 3e-6});
  BacktraceResult bt = backtrace(p, {0.84, 0.0}, 1.0, 1.0);
  EXPECT_NEAR(bt.probabilities.p01.value, 0.01, 1e-16);
  EXPECT_NEAR(bt.concurrence.concurrence.value, concurrence(p, {0.84, 0.0}).concurrence.value, 1e-15);
}

TEST(Backtrace, ScalesInverselyWithEfficiencyWithoutDoubles) {
  ProbabilityEstimate p = ProbabilityEstimate::exact({0.98, 0.01, 0.01, 0.0});
  double c = concurrence(p, {0.84, 0.0}).concurrence.value;
  BacktraceResult bt = backtrace(p, {0.84, 0.0}, 0.2, 0.2);
  EXPECT_NEAR(bt.concurrence.concurrence.value, c / 0.2, 1e-12);
}

TEST(Backtrace, InconsistentEfficiency) {
  ProbabilityEstimate p = ProbabilityEstimate::exact({0.8, 0.1, 0.1, 0.0});
  EXPECT_THROW(backtrace(p, {0.84, 0.0}, 0.05, 0.05), EstimationError);
}

TEST(Backtrace, CalibrationHitsRatio) {
  Probabilities p{0.98234, 0.00882, 0.00882, 2.8e-6};
  p.p00 = 1.0 - p.p01 - p.p10 - p.p11;
  const double ratio = 7.3 / 1.15;
  double eta = calibrate_backtrace_efficiency(p, 0.84, ratio);
  // Nearly 1 / ratio because double excitations are rare.
  EXPECT_NEAR(eta, 1.0 / ratio, 0.01);
  BacktraceResult bt = backtrace(ProbabilityEstimate::exact(p), {0.84, 0.0}, eta, eta);
  EXPECT_NEAR(bt.concurrence.concurrence.value / concurrence(p, 0.84), ratio, 1e-9);
}
