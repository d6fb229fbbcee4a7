#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "qlink/config.hpp"

namespace qlink {

enum class Channel : std::uint8_t { herald_plus = 0, herald_minus = 1, readout_1 = 2, readout_2 = 3 };

const char* to_string(Channel channel);

struct EventRecord {
  std::uint64_t time_ps = 0;
  Channel channel = Channel::herald_plus;
  std::uint32_t trial = 0;
  std::uint16_t mode = 0;

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

enum class ReadoutKind : std::uint8_t { direct = 0, fringe = 1 };

/// Measurement performed during the measure stage of one lock/measure cycle.
struct ScheduleEntry {
  ReadoutKind kind = ReadoutKind::direct;
  double theta = 0.0;  // analysis phase, fringe cycles only

  friend bool operator==(const ScheduleEntry&, const ScheduleEntry&) = default;
};

/// Expands a readout plan into the per-cycle schedule; cycle c uses entry
/// c mod size.
std::vector<ScheduleEntry> readout_schedule(const ReadoutPlan& plan);

struct StreamHeader {
  std::uint32_t version = 0;
  std::uint64_t seed = 0;
  std::uint64_t duration_ps = 0;
  std::uint64_t config_digest = 0;
  std::uint64_t storage_time_ps = 0;
  std::uint64_t coincidence_window_ps = 0;
  std::uint64_t mode_duration_ps = 0;
  std::uint64_t trial_length_ps = 0;
  std::uint64_t cycle_period_ps = 0;
  std::uint64_t lock_period_ps = 0;  // each cycle starts with its lock stage
  std::uint32_t modes_per_trial = 1;
  HeraldPort herald_port = HeraldPort::plus;
  std::vector<ScheduleEntry> schedule;

  /// Header fields derived from a configuration; seed and duration unset.
  static StreamHeader from_config(const ValidatedConfig& config);

  std::uint64_t cycle_of(std::uint64_t time_ps) const { return time_ps / cycle_period_ps; }
  std::uint64_t measure_start(std::uint64_t cycle) const { return cycle * cycle_period_ps + lock_period_ps; }
  std::uint64_t measure_end(std::uint64_t cycle) const { return (cycle + 1) * cycle_period_ps; }
  bool in_lock_stage(std::uint64_t time_ps) const { return time_ps % cycle_period_ps < lock_period_ps; }
  const ScheduleEntry& schedule_at(std::uint64_t cycle) const { return schedule[cycle % schedule.size()]; }
  std::uint64_t trials_per_cycle() const { return (cycle_period_ps - lock_period_ps) / trial_length_ps; }

  friend bool operator==(const StreamHeader&, const StreamHeader&) = default;
};

struct EventStream {
  StreamHeader header;
  std::vector<EventRecord> records;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

class StreamError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kStreamVersion = 1;
/// Seed used when none is given.
inline constexpr std::uint64_t kDefaultSeed = 1;

struct SimulationOptions {
  // 0 selects std::thread::hardware_concurrency(); the output does not depend on it.
  unsigned threads = 0;
};

/// Monte Carlo event generation over `duration` seconds of wall time.
EventStream simulate(const ValidatedConfig& config, std::uint64_t seed, double duration,
                     const SimulationOptions& options = {});

/// Longest whole number of lock/measure cycles, in s, whose trial indices
/// fit the 32-bit field of the stream format.
double max_stream_duration(const ValidatedConfig& config);

/// Relative idler and signal phases sampled at the start of every temporal
/// mode of the measure stages.
struct PhaseTrajectory {
  std::vector<double> time;          // s
  std::vector<double> idler_phase;   // rad
  std::vector<double> signal_phase;  // rad
  std::vector<double> since_lock;    // s elapsed since the end of the last lock stage
};

PhaseTrajectory phase_trajectory(const ValidatedConfig& config, std::uint64_t seed, double duration);

void write_stream(const EventStream& stream, std::ostream& out);
void write_stream(const EventStream& stream, const std::string& path);
EventStream read_stream(std::istream& in);
EventStream read_stream(const std::string& path);
/// `time_ps,channel,trial,mode` with the channel as its numeric code.
void write_stream_csv(const EventStream& stream, std::ostream& out);

}  // namespace qlink
