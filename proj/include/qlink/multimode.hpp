#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "qlink/analysis.hpp"
#include "qlink/event_sim.hpp"

namespace qlink {

class MultimodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Which heralds of one communication trial are used.
enum class ModePolicy {
  first,  // the earliest heralded mode establishes the link
  all,    // every herald counts
};

ModePolicy parse_mode_policy(std::string_view text);
const char* to_string(ModePolicy policy);

/// Re-tags every record with trial = floor(t / trial_length) and
/// mode = floor((t mod trial_length) / mode_duration). Heralds in the
/// incomplete tail of a trial (past the last full mode) are dropped.
EventStream assign_modes(const EventStream& stream, double trial_length, double mode_duration);

struct ModeRow {
  int n_modes = 0;
  double rate = 0.0;  // Hz
  double rate_error = 0.0;
  double concurrence = 0.0;  // NaN when the subset cannot be analyzed
  double concurrence_error = 0.0;
  std::uint64_t heralds_used = 0;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

struct ModeReport {
  ModePolicy policy = ModePolicy::first;
  std::vector<ModeRow> rows;  // n_modes = 1 .. N_max
  LinearFit rate_fit;          // rate against n_modes
};

ModeReport rate_vs_modes(const EventStream& tagged, ModePolicy policy = ModePolicy::first,
                         std::optional<int> max_modes = std::nullopt);

/// Ordinary least squares y = intercept + slope x.
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

/// Chi-square of the values against their inverse-variance mean and its
/// upper-tail probability. Rows without a finite value are skipped.
struct Compatibility {
  double chi2 = 0.0;
  int dof = 0;
  double p_value = 1.0;
};
Compatibility compatibility(const std::vector<double>& values, const std::vector<double>& errors);

void write_mode_report_csv(const ModeReport& report, std::ostream& out);

}  // namespace qlink
