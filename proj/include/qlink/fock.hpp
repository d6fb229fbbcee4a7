#pragma once

#include <complex>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "qlink/config.hpp"

namespace qlink {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;

/// Density operator over `mode_count` bosonic modes, each truncated at
/// `n_max` photons. Basis index is mixed-radix with mode 0 as the most
/// significant digit.
class BosonicState {
 public:
  BosonicState(int mode_count, int n_max, ComplexMatrix rho);

  static BosonicState vacuum(int mode_count, int n_max);
  static BosonicState fock(std::span<const int> occupations, int n_max);
  static BosonicState pure(int mode_count, int n_max, const Eigen::VectorXcd& ket);

  int mode_count() const { return mode_count_; }
  int n_max() const { return n_max_; }
  int dimension() const { return static_cast<int>(rho_.rows()); }
  const ComplexMatrix& density_matrix() const { return rho_; }

  int occupation(int index, int mode) const;
  std::vector<int> occupations(int index) const;
  int index_of(std::span<const int> occupations) const;
  /// Stride of `mode` in the flattened basis index.
  int stride(int mode) const;

  Complex element(std::span<const int> row, std::span<const int> col) const;
  double probability(std::span<const int> occupations) const;
  /// Marginal photon-number distribution of one mode.
  std::vector<double> photon_distribution(int mode) const;
  double mean_photon_number(int mode) const;

  double trace() const;
  double hermiticity_error() const;
  double min_eigenvalue() const;

  /// Joint state with `other`'s modes appended after this state's modes.
  BosonicState tensor(const BosonicState& other) const;
  /// Re-embeds the state with a different per-mode truncation. Shrinking
  /// drops any population above the new cutoff.
  BosonicState with_truncation(int n_max) const;
  /// Largest occupation of any mode carrying a non-zero diagonal element.
  int max_occupied() const;

 private:
  int mode_count_;
  int n_max_;
  ComplexMatrix rho_;
};

struct DetectionOutcome {
  double click_probability = 0.0;
  // Empty when the branch has zero probability.
  std::optional<BosonicState> conditional_state_click;
  std::optional<BosonicState> conditional_state_no_click;
};

/// Two-mode squeezed vacuum sum_n c_n |n, n>, renormalized after truncation.
BosonicState tmsv(double mean_pair_probability, int n_max,
                  PairStatistics statistics = PairStatistics::thermal);

/// Pair-number distribution P(n) before truncation.
double pair_number_probability(double mean_pair_probability, int n, PairStatistics statistics);

/// Beam splitter with a vacuum ancilla that is traced out.
BosonicState apply_loss(const BosonicState& state, int mode, double transmission);

/// Mixes two modes: a+ -> sqrt(1-r) a+ + sqrt(r) e^{i phase} b+,
/// b+ -> -sqrt(r) e^{-i phase} a+ + sqrt(1-r) b+. The truncation grows when
/// needed so that the map stays exactly unitary.
BosonicState apply_beam_splitter(const BosonicState& state, int mode_a, int mode_b,
                                 double reflectivity, double phase);

/// Matrix element <k, N-k| U |m, N-m> of the beam-splitter unitary.
Complex beam_splitter_amplitude(int total, int out_a, int in_a, double reflectivity, double phase);

BosonicState apply_phase(const BosonicState& state, int mode, double phase);

/// Threshold detector: no-click element (1 - dark)(1 - efficiency)^n. The
/// detected mode is removed from both conditional states.
DetectionOutcome detect_threshold(const BosonicState& state, int mode, const DetectorParams& detector);

BosonicState trace_out(const BosonicState& state, int mode);

/// weight * rho + (1 - weight) * diag(rho): removes a fraction of every
/// coherence between distinct Fock configurations.
BosonicState dephase(const BosonicState& state, double coherence_weight);

/// Writes `row,col,re,im` lines for every element.
void write_state_csv(const BosonicState& state, std::ostream& out);

}  // namespace qlink
