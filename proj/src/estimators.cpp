#include "qlink/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include <Eigen/Eigenvalues>
#include <boost/math/tools/roots.hpp>

namespace qlink {

namespace {

using Matrix4cd = Eigen::Matrix4cd;

Matrix4cd psd_sqrt(const Matrix4cd& m) {
  Eigen::SelfAdjointEigenSolver<Matrix4cd> es(0.5 * (m + m.adjoint()));
  Eigen::Vector4d ev = es.eigenvalues();
  double cutoff = 1e-14 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (int i = 0; i < 4; ++i) ev(i) = ev(i) > cutoff ? std::sqrt(ev(i)) : 0.0;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().adjoint();
}

// Error of 2 sqrt(p00 p11) with respect to p11; finite when p11 = 0.
double sqrt_term_error(double p00, double p11, double s00, double s11) {
  double v = 0.0;
  if (p11 > 0.0) {
    v += std::pow(std::sqrt(p00 / p11) * s11, 2);
  } else {
    v += 4.0 * p00 * s11;
  }
  if (p00 > 0.0) {
    v += std::pow(std::sqrt(p11 / p00) * s00, 2);
  } else {
    v += 4.0 * p11 * s00;
  }
  return v;
}

}  // namespace

ProbabilityEstimate ProbabilityEstimate::exact(const Probabilities& p) {
  return {{p.p00, 0.0}, {p.p01, 0.0}, {p.p10, 0.0}, {p.p11, 0.0}, false};
}

ConcurrenceEstimate concurrence(const ProbabilityEstimate& p, Measured v) {
  ConcurrenceEstimate out;
  double s = p.p01.value + p.p10.value;
  out.d = v.value * s / 2.0;
  out.unclipped = 2.0 * std::abs(out.d) - 2.0 * std::sqrt(p.p00.value * p.p11.value);
  double var = std::pow(s * v.error, 2) +
               v.value * v.value * (p.p01.error * p.p01.error + p.p10.error * p.p10.error) +
               sqrt_term_error(p.p00.value, p.p11.value, p.p00.error, p.p11.error);
  out.concurrence = {std::max(0.0, out.unclipped), std::sqrt(var)};
  return out;
}

double concurrence(const Probabilities& p, double visibility) {
  return concurrence(ProbabilityEstimate::exact(p), {visibility, 0.0}).concurrence.value;
}

Measured h2c(const ProbabilityEstimate& p) {
  double denom = p.p01.value * p.p10.value;
  if (!(denom > 0.0)) throw EstimationError("insufficient single counts: p01 * p10 = 0");
  double h = p.p11.value / denom;
  double err;
  if (p.p11.value > 0.0) {
    err = h * std::sqrt(std::pow(p.p11.error / p.p11.value, 2) + std::pow(p.p01.error / p.p01.value, 2) +
                        std::pow(p.p10.error / p.p10.value, 2));
  } else {
    err = p.p11.error / denom;
  }
  return {h, err};
}

double h2c(const Probabilities& p) { return h2c(ProbabilityEstimate::exact(p)).value; }

double effective_fidelity_closed_form(const Probabilities& p, double v) {
  double s = p.p01 + p.p10;
  double norm = s + p.p11;
  if (!(norm > 0.0)) throw EstimationError("effective fidelity undefined: no one- or two-excitation events");
  return 0.5 * s * (1.0 + v) / norm;
}

double effective_fidelity_matrix(const Probabilities& p, double v, double phase) {
  double norm = p.p01 + p.p10 + p.p11;
  if (!(norm > 0.0)) throw EstimationError("effective fidelity undefined: no one- or two-excitation events");
  DensityMatrix dm = density_matrix(p, v * (p.p01 + p.p10) / 2.0, phase);
  Matrix4cd rho = dm.rho;
  rho(0, 0) = 0.0;
  rho /= norm;
  Eigen::Vector4cd psi = Eigen::Vector4cd::Zero();
  psi(1) = 1.0 / std::sqrt(2.0);
  psi(2) = std::polar(1.0 / std::sqrt(2.0), phase);
  return uhlmann_fidelity(rho, psi * psi.adjoint());
}

Measured effective_fidelity(const ProbabilityEstimate& p, Measured v) {
  double s = p.p01.value + p.p10.value;
  double n = s + p.p11.value;
  double f = effective_fidelity_closed_form(p.values(), v.value);
  double d_v = s / (2.0 * n);
  double d_single = 0.5 * (1.0 + v.value) * p.p11.value / (n * n);
  double d_double = -0.5 * s * (1.0 + v.value) / (n * n);
  double var = std::pow(d_v * v.error, 2) +
               d_single * d_single * (p.p01.error * p.p01.error + p.p10.error * p.p10.error) +
               std::pow(d_double * p.p11.error, 2);
  return {f, std::sqrt(var)};
}

BacktraceResult backtrace(const ProbabilityEstimate& p, Measured v, double eta_a, double eta_b) {
  if (!(eta_a > 0.0 && eta_a <= 1.0 && eta_b > 0.0 && eta_b <= 1.0)) {
    throw EstimationError("backtrace efficiencies must lie in (0, 1]");
  }
  BacktraceResult out;
  ProbabilityEstimate& q = out.probabilities;
  q.one_sided = p.one_sided;
  q.p01 = {p.p01.value / eta_b, p.p01.error / eta_b};
  q.p10 = {p.p10.value / eta_a, p.p10.error / eta_a};
  q.p11 = {p.p11.value / (eta_a * eta_b), p.p11.error / (eta_a * eta_b)};
  double rest = q.p01.value + q.p10.value + q.p11.value;
  if (q.p01.value > 1.0 || q.p10.value > 1.0 || q.p11.value > 1.0 || rest > 1.0 + 1e-12) {
    throw EstimationError("efficiency inconsistent with data: backtraced probabilities exceed 1");
  }
  q.p00 = {std::max(0.0, 1.0 - rest),
           std::sqrt(q.p01.error * q.p01.error + q.p10.error * q.p10.error + q.p11.error * q.p11.error)};
  out.concurrence = concurrence(q, v);
  return out;
}

double calibrate_backtrace_efficiency(const Probabilities& p, double v, double target_ratio) {
  double c = concurrence(p, v);
  if (!(c > 0.0)) throw EstimationError("cannot calibrate a backtrace efficiency for zero concurrence");
  double s = p.p01 + p.p10;
  // Smallest efficiency that keeps the backtraced probabilities normalized.
  double eta_min = (s + std::sqrt(s * s + 4.0 * p.p11)) / 2.0;
  auto ratio = [&](double eta) {
    Probabilities q{0.0, p.p01 / eta, p.p10 / eta, p.p11 / (eta * eta)};
    q.p00 = std::max(0.0, 1.0 - q.p01 - q.p10 - q.p11);
    return concurrence(q, v) / c - target_ratio;
  };
  double lo = eta_min * (1.0 + 1e-12);
  double hi = 1.0;
  if (ratio(hi) > 0.0 || ratio(lo) < 0.0) {
    throw EstimationError("target concurrence ratio not reachable with an efficiency in (0, 1]");
  }
  std::uintmax_t iterations = 200;
  auto [a, b] = boost::math::tools::toms748_solve(ratio, lo, hi, boost::math::tools::eps_tolerance<double>(52),
                                                  iterations);
  return 0.5 * (a + b);
}

DensityMatrix density_matrix(const Probabilities& p, double d, double phase) {
  DensityMatrix out;
  out.rho = Matrix4cd::Zero();
  out.rho(0, 0) = p.p00;
  out.rho(1, 1) = p.p01;
  out.rho(2, 2) = p.p10;
  out.rho(3, 3) = p.p11;
  double limit = std::sqrt(std::max(0.0, p.p01 * p.p10));
  double mag = std::abs(d);
  if (mag > limit) {
    mag = limit;
    out.clipped = true;
  }
  // <01|rho|10> for the ket |01> + e^{i phase}|10>.
  out.rho(1, 2) = std::polar(mag, -phase);
  out.rho(2, 1) = std::polar(mag, phase);
  return out;
}

double wootters_concurrence(const Matrix4cd& rho) {
  Matrix4cd yy = Matrix4cd::Zero();
  yy(0, 3) = -1.0;
  yy(1, 2) = 1.0;
  yy(2, 1) = 1.0;
  yy(3, 0) = -1.0;
  Matrix4cd flipped = yy * rho.conjugate() * yy;
  Matrix4cd root = psd_sqrt(rho);
  Matrix4cd r = root * flipped * root;
  Eigen::SelfAdjointEigenSolver<Matrix4cd> es(0.5 * (r + r.adjoint()), Eigen::EigenvaluesOnly);
  Eigen::Vector4d lam;
  for (int i = 0; i < 4; ++i) lam(i) = std::sqrt(std::max(0.0, es.eigenvalues()(i)));
  std::sort(lam.data(), lam.data() + 4, std::greater<>());
  return std::max(0.0, lam(0) - lam(1) - lam(2) - lam(3));
}

double uhlmann_fidelity(const Matrix4cd& rho, const Matrix4cd& sigma) {
  Matrix4cd root = psd_sqrt(rho);
  Matrix4cd m = root * sigma * root;
  Eigen::SelfAdjointEigenSolver<Matrix4cd> es(0.5 * (m + m.adjoint()), Eigen::EigenvaluesOnly);
  double cutoff = 1e-13 * std::max(1e-300, es.eigenvalues().cwiseAbs().maxCoeff());
  double tr = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (es.eigenvalues()(i) > cutoff) tr += std::sqrt(es.eigenvalues()(i));
  }
  return tr * tr;
}

}  // namespace qlink
