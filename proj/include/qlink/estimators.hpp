#pragma once

#include <stdexcept>

#include <Eigen/Dense>

namespace qlink {

struct Measured {
  double value = 0.0;
  double error = 0.0;
};

/// Joint click probabilities of the two memories: first index arm A,
/// second index arm B (p10 = only A clicked).
struct Probabilities {
  double p00 = 0.0, p01 = 0.0, p10 = 0.0, p11 = 0.0;
};

struct ProbabilityEstimate {
  Measured p00, p01, p10, p11;
  // Set when some count was zero and its error is a one-sided upper bound.
  bool one_sided = false;

  Probabilities values() const { return {p00.value, p01.value, p10.value, p11.value}; }
  static ProbabilityEstimate exact(const Probabilities& p);
};

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConcurrenceEstimate {
  double d = 0.0;              // coherence V (p01 + p10) / 2
  double unclipped = 0.0;      // 2|d| - 2 sqrt(p00 p11) before max[0, .]
  Measured concurrence;        // clipped value, error from the unclipped expression
};

ConcurrenceEstimate concurrence(const ProbabilityEstimate& p, Measured visibility);
double concurrence(const Probabilities& p, double visibility);

/// p11 / (p10 p01). Throws EstimationError when p10 p01 = 0.
Measured h2c(const ProbabilityEstimate& p);
double h2c(const Probabilities& p);

/// Closed form (1/2)(p01 + p10)(1 + V) / (p01 + p10 + p11).
double effective_fidelity_closed_form(const Probabilities& p, double visibility);
/// Uhlmann fidelity of the reconstructed matrix with its vacuum element
/// removed against (|01> + e^{i phase}|10>)/sqrt(2).
double effective_fidelity_matrix(const Probabilities& p, double visibility, double phase = 0.0);
/// Closed-form value with first-order error.
Measured effective_fidelity(const ProbabilityEstimate& p, Measured visibility);

struct BacktraceResult {
  ProbabilityEstimate probabilities;
  ConcurrenceEstimate concurrence;
};

/// Rescales probabilities by the downstream efficiency of each arm and
/// recomputes the concurrence with the same visibility.
BacktraceResult backtrace(const ProbabilityEstimate& p, Measured visibility, double efficiency_a,
                          double efficiency_b);

/// Symmetric efficiency for which backtraced C / measured C = target_ratio.
double calibrate_backtrace_efficiency(const Probabilities& p, double visibility, double target_ratio);

struct DensityMatrix {
  Eigen::Matrix4cd rho;  // basis |00>, |01>, |10>, |11>
  bool clipped = false;  // |d| exceeded sqrt(p01 p10)
};

DensityMatrix density_matrix(const Probabilities& p, double d, double phase = 0.0);

/// Wootters concurrence of a two-qubit density matrix.
double wootters_concurrence(const Eigen::Matrix4cd& rho);

/// (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2
double uhlmann_fidelity(const Eigen::Matrix4cd& rho, const Eigen::Matrix4cd& sigma);

}  // namespace qlink
