#include "qlink/fock.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/KroneckerProduct>

namespace qlink {

namespace {

int ipow(int base, int exp) {
  int r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  return std::round(std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0)));
}

double factorial(int n) { return std::tgamma(n + 1.0); }

Complex ipow(Complex z, int n) {
  Complex r = 1.0;
  for (int i = 0; i < n; ++i) r *= z;
  return r;
}

double ipow(double x, int n) {
  double r = 1.0;
  for (int i = 0; i < n; ++i) r *= x;
  return r;
}

void check_mode(const BosonicState& s, int mode) {
  if (mode < 0 || mode >= s.mode_count()) {
    throw std::out_of_range("mode index " + std::to_string(mode) + " out of range for a " +
                            std::to_string(s.mode_count()) + "-mode state");
  }
}

// Partial trace over `mode` with a photon-number dependent weight.
ComplexMatrix weighted_partial_trace(const BosonicState& s, int mode, const std::vector<double>& weight) {
  const int d = s.n_max() + 1;
  const int stride = s.stride(mode);
  const int outer = s.dimension() / (stride * d);
  const int reduced = s.dimension() / d;
  const ComplexMatrix& rho = s.density_matrix();
  ComplexMatrix out = ComplexMatrix::Zero(reduced, reduced);
  auto reduce = [&](int full) { return (full / (stride * d)) * stride + full % stride; };
  for (int hi = 0; hi < outer; ++hi) {
    for (int lo = 0; lo < stride; ++lo) {
      for (int n = 0; n < d; ++n) {
        if (weight[n] == 0.0) continue;
        int row = hi * stride * d + n * stride + lo;
        for (int hj = 0; hj < outer; ++hj) {
          for (int lj = 0; lj < stride; ++lj) {
            int col = hj * stride * d + n * stride + lj;
            out(reduce(row), reduce(col)) += weight[n] * rho(row, col);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

BosonicState::BosonicState(int mode_count, int n_max, ComplexMatrix rho)
    : mode_count_(mode_count), n_max_(n_max), rho_(std::move(rho)) {
  if (mode_count < 0 || n_max < 0) throw std::invalid_argument("negative mode count or truncation");
  int dim = ipow(n_max + 1, mode_count);
  if (rho_.rows() != dim || rho_.cols() != dim) {
    throw std::invalid_argument("density matrix dimension does not match mode count and truncation");
  }
}

BosonicState BosonicState::vacuum(int mode_count, int n_max) {
  int dim = ipow(n_max + 1, mode_count);
  ComplexMatrix rho = ComplexMatrix::Zero(dim, dim);
  rho(0, 0) = 1.0;
  return BosonicState(mode_count, n_max, std::move(rho));
}

BosonicState BosonicState::fock(std::span<const int> occupations, int n_max) {
  BosonicState s = vacuum(static_cast<int>(occupations.size()), n_max);
  int idx = s.index_of(occupations);
  s.rho_(0, 0) = 0.0;
  s.rho_(idx, idx) = 1.0;
  return s;
}

BosonicState BosonicState::pure(int mode_count, int n_max, const Eigen::VectorXcd& ket) {
  Eigen::VectorXcd v = ket / ket.norm();
  return BosonicState(mode_count, n_max, v * v.adjoint());
}

int BosonicState::stride(int mode) const { return ipow(n_max_ + 1, mode_count_ - 1 - mode); }

int BosonicState::occupation(int index, int mode) const { return (index / stride(mode)) % (n_max_ + 1); }

std::vector<int> BosonicState::occupations(int index) const {
  std::vector<int> occ(mode_count_);
  for (int m = mode_count_ - 1; m >= 0; --m) {
    occ[m] = index % (n_max_ + 1);
    index /= n_max_ + 1;
  }
  return occ;
}

int BosonicState::index_of(std::span<const int> occ) const {
  if (static_cast<int>(occ.size()) != mode_count_) throw std::invalid_argument("occupation length mismatch");
  int idx = 0;
  for (int n : occ) {
    if (n < 0 || n > n_max_) throw std::out_of_range("occupation exceeds truncation");
    idx = idx * (n_max_ + 1) + n;
  }
  return idx;
}

Complex BosonicState::element(std::span<const int> row, std::span<const int> col) const {
  return rho_(index_of(row), index_of(col));
}

double BosonicState::probability(std::span<const int> occ) const {
  int i = index_of(occ);
  return rho_(i, i).real();
}

std::vector<double> BosonicState::photon_distribution(int mode) const {
  check_mode(*this, mode);
  std::vector<double> p(n_max_ + 1, 0.0);
  for (int i = 0; i < dimension(); ++i) p[occupation(i, mode)] += rho_(i, i).real();
  return p;
}

double BosonicState::mean_photon_number(int mode) const {
  auto p = photon_distribution(mode);
  double m = 0.0;
  for (int n = 0; n <= n_max_; ++n) m += n * p[n];
  return m;
}

double BosonicState::trace() const { return rho_.trace().real(); }

double BosonicState::hermiticity_error() const { return (rho_ - rho_.adjoint()).cwiseAbs().maxCoeff(); }

double BosonicState::min_eigenvalue() const {
  ComplexMatrix h = 0.5 * (rho_ + rho_.adjoint());
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(h, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

BosonicState BosonicState::tensor(const BosonicState& other) const {
  if (other.n_max_ != n_max_) {
    return with_truncation(std::max(n_max_, other.n_max_))
        .tensor(other.with_truncation(std::max(n_max_, other.n_max_)));
  }
  return BosonicState(mode_count_ + other.mode_count_, n_max_, Eigen::kroneckerProduct(rho_, other.rho_));
}

BosonicState BosonicState::with_truncation(int n_max) const {
  if (n_max == n_max_) return *this;
  BosonicState out = BosonicState(mode_count_, n_max,
                                  ComplexMatrix::Zero(ipow(n_max + 1, mode_count_), ipow(n_max + 1, mode_count_)));
  std::vector<int> map(dimension(), -1);
  for (int i = 0; i < dimension(); ++i) {
    auto occ = occupations(i);
    if (std::all_of(occ.begin(), occ.end(), [&](int n) { return n <= n_max; })) map[i] = out.index_of(occ);
  }
  for (int i = 0; i < dimension(); ++i) {
    if (map[i] < 0) continue;
    for (int j = 0; j < dimension(); ++j) {
      if (map[j] >= 0) out.rho_(map[i], map[j]) = rho_(i, j);
    }
  }
  return out;
}

int BosonicState::max_occupied() const {
  int m = 0;
  for (int i = 0; i < dimension(); ++i) {
    if (rho_(i, i).real() == 0.0) continue;
    for (int n : occupations(i)) m = std::max(m, n);
  }
  return m;
}

double pair_number_probability(double p, int n, PairStatistics statistics) {
  if (statistics == PairStatistics::thermal) return std::pow(p, n) / std::pow(1.0 + p, n + 1);
  return std::exp(-p) * std::pow(p, n) / factorial(n);
}

BosonicState tmsv(double p, int n_max, PairStatistics statistics) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("mean pair probability out of range [0, 1)");
  BosonicState vac = BosonicState::vacuum(2, n_max);
  Eigen::VectorXcd ket = Eigen::VectorXcd::Zero(vac.dimension());
  for (int n = 0; n <= n_max; ++n) {
    std::array<int, 2> occ{n, n};
    ket(vac.index_of(occ)) = std::sqrt(pair_number_probability(p, n, statistics));
  }
  return BosonicState::pure(2, n_max, ket);
}

BosonicState apply_loss(const BosonicState& state, int mode, double eta) {
  check_mode(state, mode);
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("transmission out of range [0, 1]");
  if (eta == 1.0) return state;
  const int nmax = state.n_max();
  const int stride = state.stride(mode);
  // kraus[n][k]: amplitude for losing k of n photons.
  std::vector<std::vector<double>> kraus(nmax + 1, std::vector<double>(nmax + 1, 0.0));
  for (int n = 0; n <= nmax; ++n) {
    for (int k = 0; k <= n; ++k) {
      kraus[n][k] = std::sqrt(binomial(n, k) * ipow(eta, n - k) * ipow(1.0 - eta, k));
    }
  }
  const ComplexMatrix& rho = state.density_matrix();
  ComplexMatrix out = ComplexMatrix::Zero(rho.rows(), rho.cols());
  const int dim = state.dimension();
  for (int i = 0; i < dim; ++i) {
    int ni = state.occupation(i, mode);
    for (int j = 0; j < dim; ++j) {
      int nj = state.occupation(j, mode);
      Complex v = rho(i, j);
      if (v == 0.0) continue;
      for (int k = 0; k <= std::min(ni, nj); ++k) {
        out(i - k * stride, j - k * stride) += kraus[ni][k] * kraus[nj][k] * v;
      }
    }
  }
  return BosonicState(state.mode_count(), nmax, std::move(out));
}

Complex beam_splitter_amplitude(int total, int out_a, int in_a, double r, double phase) {
  const double t = std::sqrt(1.0 - r);
  const double s = std::sqrt(r);
  const Complex ea = std::polar(s, phase);    // b+ coefficient in the image of a+
  const Complex eb = -std::polar(s, -phase);  // a+ coefficient in the image of b+
  const int in_b = total - in_a;
  Complex sum = 0.0;
  // (t a+ + ea b+)^in_a (eb a+ + t b+)^in_b, collect a+^out_a.
  for (int i = std::max(0, out_a - in_b); i <= std::min(in_a, out_a); ++i) {
    int j = out_a - i;
    sum += binomial(in_a, i) * ipow(t, i) * ipow(ea, in_a - i) * binomial(in_b, j) * ipow(eb, j) *
           ipow(t, in_b - j);
  }
  return sum * std::sqrt(factorial(out_a) * factorial(total - out_a) / (factorial(in_a) * factorial(in_b)));
}

BosonicState apply_beam_splitter(const BosonicState& input, int mode_a, int mode_b, double r, double phase) {
  check_mode(input, mode_a);
  check_mode(input, mode_b);
  if (mode_a == mode_b) throw std::invalid_argument("beam splitter needs two distinct modes");
  if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("reflectivity out of range [0, 1]");

  int needed = 0;
  for (int i = 0; i < input.dimension(); ++i) {
    if (input.density_matrix()(i, i).real() == 0.0) continue;
    needed = std::max(needed, input.occupation(i, mode_a) + input.occupation(i, mode_b));
  }
  const BosonicState state = input.with_truncation(std::max(input.n_max(), needed));
  const int nmax = state.n_max();
  const int sa = state.stride(mode_a);
  const int sb = state.stride(mode_b);

  // Sector tables: amp[N][k][m] = <k, N-k|U|m, N-m>.
  std::vector<std::vector<std::vector<Complex>>> amp(2 * nmax + 1);
  for (int total = 0; total <= 2 * nmax; ++total) {
    amp[total].assign(total + 1, std::vector<Complex>(total + 1));
    for (int k = 0; k <= total; ++k) {
      for (int m = 0; m <= total; ++m) amp[total][k][m] = beam_splitter_amplitude(total, k, m, r, phase);
    }
  }

  const int dim = state.dimension();
  struct Entry {
    int index;
    Complex amplitude;
  };
  // Column j of U lists where basis state j is sent.
  std::vector<std::vector<Entry>> images(dim);
  for (int j = 0; j < dim; ++j) {
    int na = state.occupation(j, mode_a);
    int nb = state.occupation(j, mode_b);
    int total = na + nb;
    int base = j - na * sa - nb * sb;
    for (int k = 0; k <= total; ++k) {
      if (k > nmax || total - k > nmax) continue;
      Complex u = amp[total][k][na];
      if (u == 0.0) continue;
      images[j].push_back({base + k * sa + (total - k) * sb, u});
    }
  }

  const ComplexMatrix& rho = state.density_matrix();
  ComplexMatrix left = ComplexMatrix::Zero(dim, dim);
  for (int i = 0; i < dim; ++i) {
    if (rho.row(i).isZero(0.0)) continue;
    for (const auto& e : images[i]) left.row(e.index) += e.amplitude * rho.row(i);
  }
  ComplexMatrix out = ComplexMatrix::Zero(dim, dim);
  for (int j = 0; j < dim; ++j) {
    if (left.col(j).isZero(0.0)) continue;
    for (const auto& e : images[j]) out.col(e.index) += std::conj(e.amplitude) * left.col(j);
  }
  return BosonicState(state.mode_count(), nmax, std::move(out));
}

BosonicState apply_phase(const BosonicState& state, int mode, double phase) {
  check_mode(state, mode);
  const int d = state.n_max() + 1;
  std::vector<Complex> ph(2 * d - 1);
  for (int k = -(d - 1); k <= d - 1; ++k) ph[k + d - 1] = std::polar(1.0, k * phase);
  ComplexMatrix out = state.density_matrix();
  for (int i = 0; i < state.dimension(); ++i) {
    int ni = state.occupation(i, mode);
    for (int j = 0; j < state.dimension(); ++j) {
      int nj = state.occupation(j, mode);
      if (ni != nj) out(i, j) *= ph[ni - nj + d - 1];
    }
  }
  return BosonicState(state.mode_count(), state.n_max(), std::move(out));
}

DetectionOutcome detect_threshold(const BosonicState& state, int mode, const DetectorParams& det) {
  check_mode(state, mode);
  const int d = state.n_max() + 1;
  std::vector<double> no_click(d), click(d);
  for (int n = 0; n < d; ++n) {
    no_click[n] = (1.0 - det.dark_click_probability) * std::pow(1.0 - det.efficiency, n);
    click[n] = 1.0 - no_click[n];
  }
  ComplexMatrix rc = weighted_partial_trace(state, mode, click);
  ComplexMatrix rn = weighted_partial_trace(state, mode, no_click);
  double pc = rc.trace().real();
  double pn = rn.trace().real();
  double total = pc + pn;
  DetectionOutcome out;
  out.click_probability = pc / total;
  if (pc > 0.0) out.conditional_state_click = BosonicState(state.mode_count() - 1, state.n_max(), rc / pc);
  if (pn > 0.0) out.conditional_state_no_click = BosonicState(state.mode_count() - 1, state.n_max(), rn / pn);
  return out;
}

BosonicState trace_out(const BosonicState& state, int mode) {
  check_mode(state, mode);
  ComplexMatrix r = weighted_partial_trace(state, mode, std::vector<double>(state.n_max() + 1, 1.0));
  double tr = r.trace().real();
  if (tr > 0.0) r /= tr;
  return BosonicState(state.mode_count() - 1, state.n_max(), std::move(r));
}

BosonicState dephase(const BosonicState& state, double weight) {
  ComplexMatrix out = weight * state.density_matrix();
  for (int i = 0; i < state.dimension(); ++i) out(i, i) = state.density_matrix()(i, i);
  return BosonicState(state.mode_count(), state.n_max(), std::move(out));
}

void write_state_csv(const BosonicState& state, std::ostream& out) {
  out << "row,col,re,im\n";
  out.precision(17);
  const auto& rho = state.density_matrix();
  for (int i = 0; i < state.dimension(); ++i) {
    for (int j = 0; j < state.dimension(); ++j) {
      out << i << ',' << j << ',' << rho(i, j).real() << ',' << rho(i, j).imag() << '\n';
    }
  }
}

}  // namespace qlink
