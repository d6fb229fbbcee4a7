#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qlink/estimators.hpp"
#include "qlink/event_sim.hpp"

namespace qlink {

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Herald-conditioned outcomes of the direct-detection cycles. Index i of
/// n_ij is readout channel 1 (arm A), j is channel 2 (arm B).
struct CoincidenceStats {
  std::uint64_t herald_count = 0;
  std::uint64_t n00 = 0, n01 = 0, n10 = 0, n11 = 0;
  double integration_time = 0.0;  // s of stream covered

  // Bookkeeping over the whole stream.
  std::uint64_t total_heralds = 0;      // on the heralding channel, any cycle
  std::uint64_t discarded_heralds = 0;  // window reached past the measure stage
  std::array<std::uint64_t, 2> readout_events{0, 0};
  std::array<std::uint64_t, 2> in_window_events{0, 0};
  double measure_time = 0.0;  // s of measure stage covered
  double window_time = 0.0;   // s covered by coincidence windows

  CoincidenceStats& operator+=(const CoincidenceStats& other);
};

struct FringePoint {
  double theta = 0.0;
  std::uint64_t counts_out1 = 0;
  std::uint64_t counts_out2 = 0;
  std::uint64_t heralds = 0;
  std::uint64_t counts_both = 0;  // both outputs clicked
};

struct FringeScan {
  std::vector<FringePoint> points;  // sorted by theta

  /// Adds counts to the point at `theta`, creating it when needed.
  FringePoint& at(double theta);
  FringeScan& operator+=(const FringeScan& other);
};

struct CoincidenceResult {
  CoincidenceStats direct;
  FringeScan fringe;

  CoincidenceResult& operator+=(const CoincidenceResult& other);
};

struct CoincidenceOptions {
  std::optional<std::uint64_t> window_ps;  // overrides the stream's coincidence window
};

/// One herald on the heralding channel with the readout channels that
/// clicked inside its coincidence window.
struct HeraldClass {
  std::uint64_t time_ps = 0;
  std::uint32_t trial = 0;
  std::uint16_t mode = 0;
  std::uint64_t cycle = 0;
  bool discarded = false;  // window not contained in the measure stage
  std::array<bool, 2> click{false, false};
};

struct ClassifiedHeralds {
  CoincidenceStats bookkeeping;  // stream-level fields only, no outcome counts
  std::vector<HeraldClass> heralds;
};

/// Classifies readout events in [h + tau - w/2, h + tau + w/2) after every
/// herald on the heralding channel. Heralds whose window is not contained
/// in the measure stage (or the stream) are marked discarded.
ClassifiedHeralds classify_heralds(const EventStream& stream, const CoincidenceOptions& options = {});

/// Adds one non-discarded herald to the direct counts or the fringe scan,
/// depending on the cycle's scheduled measurement.
void tally(const StreamHeader& header, const HeraldClass& herald, CoincidenceResult& result);

CoincidenceResult count_coincidences(const EventStream& stream, const CoincidenceOptions& options = {});

/// Counts of a simulated run. Runs longer than one stream can hold are split
/// into consecutive segments with seeds derived from `seed`; shorter runs
/// equal count_coincidences(simulate(config, seed, duration)).
CoincidenceResult count_simulated(const ValidatedConfig& config, std::uint64_t seed, double duration,
                                  const CoincidenceOptions& options = {}, const SimulationOptions& sim = {});

void write_fringe_csv(const FringeScan& scan, std::ostream& out);
FringeScan read_fringe_csv(std::istream& in);

enum class FringeOutput { out1, out2 };

struct FringeFit {
  Measured visibility;
  double phase_offset = 0.0;  // phi0 of A (1 + V sin(theta + phi0))
  double amplitude = 0.0;     // A, as a rate per herald
  double chi2 = 0.0;
  int dof = 0;
};

/// Weighted least squares of rate = A (1 + V sin(theta + phi0)) with Poisson
/// weights from the model, iterated to convergence.
FringeFit fit_fringe(const FringeScan& scan, FringeOutput output = FringeOutput::out1);

struct EstimateOptions {
  // First-order correction for uncorrelated readout clicks, given the
  // probability of an accidental click per window on each channel.
  std::optional<std::array<double, 2>> accidental_probability;
};

/// Per-window accidental click probability on each readout channel from the
/// rate of readout events outside every coincidence window.
std::array<double, 2> accidental_probability(const CoincidenceStats& stats, double window);

ProbabilityEstimate estimate_probabilities(const CoincidenceStats& stats, const EstimateOptions& options = {});

struct Tomography {
  ProbabilityEstimate p;
  Measured visibility;  // inverse-variance mean of both outputs
  FringeFit fit_out1;
  FringeFit fit_out2;
  double d = 0.0;
  Measured concurrence;
  double concurrence_unclipped = 0.0;
  std::optional<Measured> h2c;  // empty when p01 p10 = 0
  std::optional<Measured> effective_fidelity;
  std::optional<double> effective_fidelity_matrix;

  std::optional<std::array<double, 2>> backtrace_efficiency;
  std::optional<ProbabilityEstimate> backtraced_p;
  std::optional<Measured> backtraced_concurrence;
  std::optional<Measured> backtraced_effective_fidelity;
  std::optional<std::string> backtrace_error;

  std::uint64_t heralds = 0;
  Measured herald_rate;  // Hz
  std::string error_method = "first-order";
  std::uint64_t config_digest = 0;
};

struct TomographyOptions {
  EstimateOptions estimate;
  std::optional<std::array<double, 2>> backtrace_efficiency;
  // Replaces first-order errors by the spread over this many resamples.
  int bootstrap_resamples = 0;
  std::uint64_t bootstrap_seed = 1;
};

Tomography tomography(const CoincidenceResult& counts, const TomographyOptions& options = {},
                      std::uint64_t config_digest = 0);

void write_tomography_json(const Tomography& t, std::ostream& out);

}  // namespace qlink
