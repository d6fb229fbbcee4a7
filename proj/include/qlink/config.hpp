#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qlink {

enum class PairStatistics { thermal, poissonian };

/// Which output port of the central idler beam splitter announces the link.
enum class HeraldPort { plus, minus };

struct SourceParams {
  double mean_pair_probability_per_mode = 0.0;
  double biphoton_bandwidth = 1.8e6;  // Hz, metadata only
  double signal_wavelength = 606.0;   // nm, metadata only
  double idler_wavelength = 1436.0;   // nm, metadata only
  PairStatistics statistics = PairStatistics::thermal;
};

struct ChannelParams {
  double transmission = 1.0;
  // When set, takes precedence over `transmission`; cleared by validate().
  std::optional<double> loss_db;
  double static_phase = 0.0;     // rad
  double phase_diffusion = 0.0;  // rad^2 / s
  double propagation_delay = 0.0;
};

/// One (storage time, value) sample of a per-storage-time lookup table.
struct TablePoint {
  double storage_time = 0.0;
  double value = 0.0;
};

struct MemoryParams {
  double storage_time = 2e-6;
  double comb_period = 0.0;  // Hz, derived: 1 / storage_time

  // Efficiency at the configured storage time. Resolution order: table,
  // explicit value, exponential model efficiency0 * exp(-tau / decay_time).
  std::optional<double> efficiency;
  double efficiency0 = 1.0;
  double decay_time = std::numeric_limits<double>::infinity();
  std::vector<TablePoint> efficiency_table;

  double echo_center_offset = 0.0;
  std::vector<TablePoint> echo_offset_table;
  double echo_rms_width = 50e-9;

  double efficiency_at(double tau) const;
  double echo_offset_at(double tau) const;
  double retrieval_efficiency() const { return efficiency_at(storage_time); }
  double echo_offset() const { return echo_offset_at(storage_time); }
};

struct DetectorParams {
  double efficiency = 1.0;
  double dark_click_probability = 0.0;  // per coincidence window
  double dead_time = 0.0;
};

struct TimingConfig {
  double mode_duration = 400e-9;
  double coincidence_window = 400e-9;
  double duty_cycle = 0.43;
  double cycle_period = 20e-3;  // one lock stage followed by one measure stage
  double lock_residual = 0.05;  // rad, rms phase error right after locking
  double communication_time = 0.0;

  // Alternative specification of the lock/measure alternation; when both
  // are set validate() derives cycle_period and duty_cycle from them.
  std::optional<double> lock_period_input;
  std::optional<double> measure_period_input;

  double lock_period() const { return (1.0 - duty_cycle) * cycle_period; }
  double measure_period() const { return duty_cycle * cycle_period; }
  /// Length of one communication trial; a single mode when t_com is zero.
  double trial_length() const {
    return communication_time > 0.0 ? communication_time : mode_duration;
  }
  int modes_per_trial() const;
  double mode_attempt_rate() const { return modes_per_trial() / trial_length(); }
};

/// Which measurement each lock/measure cycle performs. The schedule repeats
/// `direct_weight` direct-detection cycles followed by one interference
/// cycle, once per fringe phase.
struct ReadoutPlan {
  int direct_weight = 1;
  std::vector<double> fringe_phases;
};

struct LinkConfig {
  SourceParams source_a, source_b;
  ChannelParams idler_channel_a, idler_channel_b;
  ChannelParams signal_channel_a, signal_channel_b;
  MemoryParams memory_a, memory_b;
  std::array<DetectorParams, 2> herald_detectors;   // plus, minus
  std::array<DetectorParams, 2> readout_detectors;  // arm A / output 1, arm B / output 2
  TimingConfig timing;
  double idler_mode_overlap = 1.0;
  HeraldPort herald_port = HeraldPort::plus;
  int truncation = 2;
  ReadoutPlan readout;

  LinkConfig();
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// A LinkConfig that passed validate(); immutable afterwards.
class ValidatedConfig {
 public:
  const LinkConfig& get() const { return config_; }
  const LinkConfig* operator->() const { return &config_; }
  std::uint64_t digest() const { return digest_; }
  std::string digest_hex() const;

 private:
  friend ValidatedConfig validate(const LinkConfig& config);
  ValidatedConfig(LinkConfig config, std::uint64_t digest)
      : config_(std::move(config)), digest_(digest) {}

  LinkConfig config_;
  std::uint64_t digest_;
};

/// Normalizes (dB to linear, comb period from storage time, lock/measure
/// periods to duty cycle) and checks every invariant. Throws ConfigError
/// listing each violation with its field path.
ValidatedConfig validate(const LinkConfig& config);

double db_to_transmission(double loss_db);
double transmission_to_db(double transmission);

/// Parses the sectioned key-value format (`[section]` then `key = value`).
LinkConfig parse_config(std::istream& in, std::string_view source_name = "<stream>");
LinkConfig load_config(const std::string& path);

/// Sets one field addressed as `section.key`, e.g. `idler_channel_a.transmission_db`.
void apply_override(LinkConfig& config, std::string_view key, std::string_view value);
/// Accepts `section.key=value`.
void apply_override(LinkConfig& config, std::string_view assignment);

/// Canonical text form; parse_config(serialize_config(c)) reproduces c.
std::string serialize_config(const LinkConfig& config);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);
std::string to_hex(std::uint64_t value);

const char* to_string(HeraldPort port);
HeraldPort parse_herald_port(std::string_view text);

}  // namespace qlink
