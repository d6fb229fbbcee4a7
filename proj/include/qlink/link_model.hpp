#pragma once

#include <array>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "qlink/config.hpp"
#include "qlink/estimators.hpp"
#include "qlink/fock.hpp"

namespace qlink {

/// Mode layout of the pre-herald state.
inline constexpr int kMemoryA = 0;
inline constexpr int kIdlerA = 1;
inline constexpr int kMemoryB = 2;
inline constexpr int kIdlerB = 3;

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HeraldOutcome {
  double herald_probability_per_mode = 0.0;
  BosonicState conditional_memory_state;  // memory A, memory B
  HeraldPort heralding_detector = HeraldPort::plus;
};

/// One of the four joint outcomes of the two herald detectors.
struct HeraldBranch {
  bool plus_click = false;
  bool minus_click = false;
  double probability = 0.0;
  std::optional<BosonicState> memory_state;
};

/// Joint click probabilities of the two readout detectors; the first index
/// is arm A (or interference output 1).
using ClickPattern = Probabilities;

/// Everything between a stored excitation and the readout detectors.
struct ReadoutChannel {
  std::array<double, 2> transmission{1.0, 1.0};  // retrieval efficiency x signal path
  std::array<double, 2> static_phase{0.0, 0.0};
  std::array<DetectorParams, 2> detectors;
  // Mutual coherence of the two retrieved modes that survives at the
  // recombining beam splitter.
  double coherence_factor = 1.0;
};

/// Real trigonometric polynomial sum_k c_k e^{i k theta}, |k| <= degree.
class PhaseSeries {
 public:
  PhaseSeries() = default;
  /// Exact harmonic decomposition of `f`, which must be a trigonometric
  /// polynomial of at most the given degree.
  static PhaseSeries from_samples(const std::function<double(double)>& f, int degree);

  double operator()(double theta) const;
  int degree() const { return degree_; }
  Complex coefficient(int k) const { return coefficients_[k + degree_]; }

 private:
  int degree_ = 0;
  std::vector<Complex> coefficients_{Complex(0.0)};
};

struct ReadoutProbabilities {
  ClickPattern direct;  // per-arm detection without interference
  ClickPattern fringe;  // outputs of the recombining beam splitter at theta
  double output_1_click = 0.0;
  double output_2_click = 0.0;
};

struct VisibilityBudget {
  double phase_noise_factor = 1.0;
  double idler_overlap_factor = 1.0;
  double echo_overlap_factor = 1.0;
  double total = 1.0;
};

struct PredictedStats {
  Probabilities p;
  double visibility = 0.0;           // output 1 fringe (max - min) / (max + min)
  double visibility_output_2 = 0.0;
  double d = 0.0;
  double concurrence = 0.0;
  double concurrence_unclipped = 0.0;
  double h2c = 0.0;  // NaN when p01 p10 = 0
  double effective_fidelity = 0.0;
  double herald_probability_per_mode = 0.0;
  double herald_rate = 0.0;  // Hz
  VisibilityBudget budget;
  // Values rescaled by the signal-path efficiency of each arm; empty when
  // the rescaling is inconsistent with the probabilities.
  std::optional<Probabilities> backtraced_p;
  double backtraced_concurrence = 0.0;
  double backtraced_effective_fidelity = 0.0;
};

BosonicState build_pre_herald_state(const ValidatedConfig& config);

/// Interferes the idlers on a balanced beam splitter and conditions on a
/// click at `port`. Partial idler distinguishability keeps only the
/// fraction `idler_overlap` of the heralded coherences.
HeraldOutcome herald(const BosonicState& pre_herald, HeraldPort port,
                     const std::array<DetectorParams, 2>& detectors, double idler_overlap);

/// Joint outcomes of both herald detectors, ordered (no, no), (no, yes),
/// (yes, no), (yes, yes) for (plus, minus).
std::array<HeraldBranch, 4> herald_branches(const BosonicState& pre_herald,
                                            const std::array<DetectorParams, 2>& detectors,
                                            double idler_overlap);

ReadoutChannel readout_channel(const ValidatedConfig& config, bool include_phase_noise);

ClickPattern direct_readout(const BosonicState& memories, const ReadoutChannel& channel);
ClickPattern fringe_readout(const BosonicState& memories, const ReadoutChannel& channel, double theta);
/// Fringe click patterns as exact functions of the analysis phase, in the
/// order p00, p01, p10, p11.
std::array<PhaseSeries, 4> fringe_series(const BosonicState& memories, const ReadoutChannel& channel);

ReadoutProbabilities readout_probabilities(const HeraldOutcome& outcome, double theta,
                                           const ValidatedConfig& config);

/// (max - min) / (max + min) of a non-negative series.
double fringe_visibility(const PhaseSeries& series);

VisibilityBudget visibility_budget(const ValidatedConfig& config);
/// Time average of exp(-sigma^2(t)/2) with sigma^2(t) = 2 residual^2 + D t
/// over one measure window.
double phase_noise_factor(double lock_residual, double total_diffusion, double window);
/// |<psi_A|psi_B>| for Gaussian amplitude envelopes with intensity rms widths.
double echo_overlap(double center_a, double width_a, double center_b, double width_b);

/// Signal-path efficiency downstream of each crystal (channel x detector).
std::array<double, 2> signal_path_efficiency(const ValidatedConfig& config);

PredictedStats predict_stats(const ValidatedConfig& config);

}  // namespace qlink
