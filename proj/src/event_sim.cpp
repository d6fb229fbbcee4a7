#include "qlink/event_sim.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <optional>
#include <random>
#include <thread>
#include <tuple>

#include "qlink/link_model.hpp"

namespace qlink {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent generator for one (seed, cycle, purpose) triple.
std::mt19937_64 cycle_engine(std::uint64_t seed, std::uint64_t cycle, std::uint64_t purpose) {
  std::uint64_t key = splitmix64(splitmix64(seed) ^ splitmix64(cycle * 4 + purpose));
  return std::mt19937_64(key);
}

constexpr std::uint64_t kEventPurpose = 0;
constexpr std::uint64_t kTrajectoryPurpose = 1;

std::uint64_t to_ps(double seconds) { return static_cast<std::uint64_t>(std::llround(seconds * 1e12)); }

// Outcome distribution of one herald branch.
struct BranchModel {
  bool plus = false;
  bool minus = false;
  double probability = 0.0;
  std::optional<ClickPattern> direct;
  std::array<PhaseSeries, 4> fringe;
};

struct Phases {
  double idler = 0.0;
  double signal = 0.0;
  std::uint64_t idler_time = 0;
  std::uint64_t signal_time = 0;
};

class Walker {
 public:
  Walker(double residual, double idler_diffusion, double signal_diffusion)
      : residual_(residual), idler_diffusion_(idler_diffusion), signal_diffusion_(signal_diffusion) {}

  Phases start(std::mt19937_64& rng, std::uint64_t t) const {
    std::normal_distribution<double> g(0.0, 1.0);
    Phases p;
    p.idler = residual_ * g(rng);
    p.signal = residual_ * g(rng);
    p.idler_time = p.signal_time = t;
    return p;
  }

  void advance(std::mt19937_64& rng, Phases& p, std::uint64_t idler_t, std::uint64_t signal_t) const {
    std::normal_distribution<double> g(0.0, 1.0);
    p.idler += std::sqrt(idler_diffusion_ * (idler_t - p.idler_time) * 1e-12) * g(rng);
    p.signal += std::sqrt(signal_diffusion_ * (signal_t - p.signal_time) * 1e-12) * g(rng);
    p.idler_time = idler_t;
    p.signal_time = signal_t;
  }

 private:
  double residual_;
  double idler_diffusion_;
  double signal_diffusion_;
};

struct Echo {
  double offset = 0.0;
  double width = 0.0;
};

bool record_less(const EventRecord& a, const EventRecord& b) {
  return std::tie(a.time_ps, a.channel, a.trial, a.mode) < std::tie(b.time_ps, b.channel, b.trial, b.mode);
}

}  // namespace

const char* to_string(Channel channel) {
  switch (channel) {
    case Channel::herald_plus:
      return "herald_plus";
    case Channel::herald_minus:
      return "herald_minus";
    case Channel::readout_1:
      return "readout_1";
    case Channel::readout_2:
      return "readout_2";
  }
  return "unknown";
}

std::vector<ScheduleEntry> readout_schedule(const ReadoutPlan& plan) {
  std::vector<ScheduleEntry> out;
  for (double theta : plan.fringe_phases) {
    for (int i = 0; i < plan.direct_weight; ++i) out.push_back({ReadoutKind::direct, 0.0});
    out.push_back({ReadoutKind::fringe, theta});
  }
  if (out.empty()) {
    for (int i = 0; i < std::max(1, plan.direct_weight); ++i) out.push_back({ReadoutKind::direct, 0.0});
  }
  return out;
}

StreamHeader StreamHeader::from_config(const ValidatedConfig& config) {
  const LinkConfig& c = config.get();
  StreamHeader h;
  h.version = kStreamVersion;
  h.config_digest = config.digest();
  h.storage_time_ps = to_ps(c.memory_a.storage_time);
  h.coincidence_window_ps = to_ps(c.timing.coincidence_window);
  h.mode_duration_ps = to_ps(c.timing.mode_duration);
  h.trial_length_ps = to_ps(c.timing.trial_length());
  h.cycle_period_ps = to_ps(c.timing.cycle_period);
  h.lock_period_ps = to_ps(c.timing.lock_period());
  int modes = c.timing.modes_per_trial();
  if (modes > std::numeric_limits<std::uint16_t>::max()) {
    throw SimulationError("modes per trial exceed the 16-bit mode index");
  }
  h.modes_per_trial = static_cast<std::uint32_t>(modes);
  h.herald_port = c.herald_port;
  h.schedule = readout_schedule(c.readout);
  return h;
}

double max_stream_duration(const ValidatedConfig& config) {
  StreamHeader h = StreamHeader::from_config(config);
  const std::uint64_t trials = h.trial_length_ps ? h.trials_per_cycle() : 0;
  if (trials == 0) return std::numeric_limits<double>::infinity();
  const std::uint64_t cycles = (std::uint64_t{std::numeric_limits<std::uint32_t>::max()} + 1) / trials;
  return static_cast<double>(cycles * h.cycle_period_ps) * 1e-12;
}

EventStream simulate(const ValidatedConfig& config, std::uint64_t seed, double duration,
                     const SimulationOptions& options) {
  if (!(duration > 0.0) || !std::isfinite(duration)) throw SimulationError("duration must be positive and finite");
  const LinkConfig& c = config.get();

  EventStream stream;
  StreamHeader& h = stream.header;
  h = StreamHeader::from_config(config);
  h.seed = seed;
  h.duration_ps = to_ps(duration);
  if (h.trial_length_ps == 0 || h.cycle_period_ps <= h.lock_period_ps) {
    throw SimulationError("timing leaves no room for a measure stage");
  }

  const std::uint64_t cycles = (h.duration_ps + h.cycle_period_ps - 1) / h.cycle_period_ps;
  const std::uint64_t trials = h.trials_per_cycle();
  if (trials == 0) return stream;
  if (cycles * trials - 1 > std::numeric_limits<std::uint32_t>::max()) {
    throw SimulationError("trial index exceeds the 32-bit range; shorten the duration");
  }

  // Exact per-mode outcome distributions.
  BosonicState pre = build_pre_herald_state(config);
  auto branches = herald_branches(pre, c.herald_detectors, c.idler_mode_overlap);
  ReadoutChannel channel = readout_channel(config, false);
  std::vector<BranchModel> models;
  double any_click = 0.0;
  for (int b = 1; b < 4; ++b) {
    BranchModel m;
    m.plus = branches[b].plus_click;
    m.minus = branches[b].minus_click;
    m.probability = branches[b].probability;
    if (branches[b].memory_state) {
      m.direct = direct_readout(*branches[b].memory_state, channel);
      m.fringe = fringe_series(*branches[b].memory_state, channel);
    }
    any_click += m.probability;
    models.push_back(std::move(m));
  }
  if (!(any_click > 0.0)) return stream;

  const Walker walker(c.timing.lock_residual, c.idler_channel_a.phase_diffusion + c.idler_channel_b.phase_diffusion,
                      c.signal_channel_a.phase_diffusion + c.signal_channel_b.phase_diffusion);
  const std::array<Echo, 2> echo{Echo{c.memory_a.echo_offset(), c.memory_a.echo_rms_width},
                                 Echo{c.memory_b.echo_offset(), c.memory_b.echo_rms_width}};
  const Echo mean_echo{0.5 * (echo[0].offset + echo[1].offset), 0.5 * (echo[0].width + echo[1].width)};
  const std::uint64_t modes = h.modes_per_trial;
  const double any_click_capped = std::min(any_click, 1.0);

  auto run_cycle = [&](std::uint64_t cycle, std::vector<EventRecord>& out) {
    std::mt19937_64 rng = cycle_engine(seed, cycle, kEventPurpose);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::geometric_distribution<std::uint64_t> skip(any_click_capped);

    const std::uint64_t start = h.measure_start(cycle);
    const std::uint64_t stop = std::min(h.measure_end(cycle), h.duration_ps);
    if (stop <= start) return;
    const std::uint64_t active = std::min(trials, (stop - start) / h.trial_length_ps);
    const std::uint64_t slots = active * modes;
    const ScheduleEntry& plan = h.schedule_at(cycle);
    Phases phases = walker.start(rng, start);

    auto emit = [&](double t, Channel ch, std::uint32_t trial, std::uint16_t mode) {
      if (t < 0.0) t = 0.0;
      auto ps = static_cast<std::uint64_t>(std::llround(t));
      if (ps >= h.duration_ps || h.in_lock_stage(ps)) return;
      out.push_back({ps, ch, trial, mode});
    };

    std::uint64_t slot = 0;
    for (bool first = true;; first = false) {
      std::uint64_t gap = skip(rng);
      if (gap >= slots) break;
      slot += gap + (first ? 0 : 1);
      if (slot >= slots) break;
      const std::uint64_t k = slot / modes;
      const auto mode = static_cast<std::uint16_t>(slot % modes);
      const auto trial = static_cast<std::uint32_t>(cycle * trials + k);
      const std::uint64_t mode_start = start + k * h.trial_length_ps + mode * h.mode_duration_ps;
      const std::uint64_t t0 =
          mode_start + std::min<std::uint64_t>(h.mode_duration_ps - 1,
                                               static_cast<std::uint64_t>(uniform(rng) * h.mode_duration_ps));

      double u = uniform(rng) * any_click;
      const BranchModel* branch = &models.back();
      for (const auto& m : models) {
        if (u < m.probability) {
          branch = &m;
          break;
        }
        u -= m.probability;
      }
      if (branch->plus) out.push_back({t0, Channel::herald_plus, trial, mode});
      if (branch->minus) out.push_back({t0, Channel::herald_minus, trial, mode});
      if (!branch->direct) continue;

      Probabilities p;
      std::array<Echo, 2> timing = echo;
      if (plan.kind == ReadoutKind::direct) {
        p = *branch->direct;
      } else {
        walker.advance(rng, phases, t0, t0 + h.storage_time_ps);
        double psi = plan.theta + phases.idler + phases.signal;
        p = {branch->fringe[0](psi), branch->fringe[1](psi), branch->fringe[2](psi), branch->fringe[3](psi)};
        timing = {mean_echo, mean_echo};
      }
      double r = uniform(rng) * (p.p00 + p.p01 + p.p10 + p.p11);
      bool click_1 = false, click_2 = false;
      if (r < p.p00) {
      } else if (r < p.p00 + p.p01) {
        click_2 = true;
      } else if (r < p.p00 + p.p01 + p.p10) {
        click_1 = true;
      } else {
        click_1 = click_2 = true;
      }
      const double base = static_cast<double>(t0 + h.storage_time_ps);
      if (click_1) emit(base + (timing[0].offset + timing[0].width * gauss(rng)) * 1e12, Channel::readout_1, trial, mode);
      if (click_2) emit(base + (timing[1].offset + timing[1].width * gauss(rng)) * 1e12, Channel::readout_2, trial, mode);
    }
  };

  unsigned threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::uint64_t>(threads, cycles));
  std::vector<std::vector<EventRecord>> parts(threads);
  std::vector<std::exception_ptr> errors(threads);
  auto worker = [&](unsigned id) {
    try {
      std::uint64_t begin = cycles * id / threads;
      std::uint64_t end = cycles * (id + 1) / threads;
      for (std::uint64_t cyc = begin; cyc < end; ++cyc) run_cycle(cyc, parts[id]);
    } catch (...) {
      errors[id] = std::current_exception();
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned id = 0; id < threads; ++id) pool.emplace_back(worker, id);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<EventRecord> all;
  std::size_t total = 0;
  for (const auto& part : parts) total += part.size();
  all.reserve(total);
  for (auto& part : parts) all.insert(all.end(), part.begin(), part.end());
  std::sort(all.begin(), all.end(), record_less);

  const std::array<std::uint64_t, 4> dead{to_ps(c.herald_detectors[0].dead_time), to_ps(c.herald_detectors[1].dead_time),
                                          to_ps(c.readout_detectors[0].dead_time),
                                          to_ps(c.readout_detectors[1].dead_time)};
  std::array<std::optional<std::uint64_t>, 4> last;
  stream.records.reserve(all.size());
  for (const auto& r : all) {
    auto ch = static_cast<std::size_t>(r.channel);
    if (last[ch] && r.time_ps - *last[ch] < dead[ch]) continue;
    last[ch] = r.time_ps;
    stream.records.push_back(r);
  }
  return stream;
}

PhaseTrajectory phase_trajectory(const ValidatedConfig& config, std::uint64_t seed, double duration) {
  if (!(duration > 0.0) || !std::isfinite(duration)) throw SimulationError("duration must be positive and finite");
  const LinkConfig& c = config.get();
  StreamHeader h = StreamHeader::from_config(config);
  const std::uint64_t duration_ps = to_ps(duration);
  const std::uint64_t cycles = (duration_ps + h.cycle_period_ps - 1) / h.cycle_period_ps;
  const std::uint64_t per_cycle = (h.cycle_period_ps - h.lock_period_ps) / h.mode_duration_ps;
  constexpr std::uint64_t kMaxSamples = 50'000'000;
  if (cycles * per_cycle > kMaxSamples) throw SimulationError("phase trajectory too long; shorten the duration");

  const Walker walker(c.timing.lock_residual, c.idler_channel_a.phase_diffusion + c.idler_channel_b.phase_diffusion,
                      c.signal_channel_a.phase_diffusion + c.signal_channel_b.phase_diffusion);
  PhaseTrajectory out;
  for (std::uint64_t cycle = 0; cycle < cycles; ++cycle) {
    std::mt19937_64 rng = cycle_engine(seed, cycle, kTrajectoryPurpose);
    const std::uint64_t start = h.measure_start(cycle);
    Phases phases = walker.start(rng, start);
    for (std::uint64_t j = 0; j < per_cycle; ++j) {
      std::uint64_t t = start + j * h.mode_duration_ps;
      if (t >= duration_ps) break;
      walker.advance(rng, phases, t, t);
      out.time.push_back(t * 1e-12);
      out.idler_phase.push_back(phases.idler);
      out.signal_phase.push_back(phases.signal);
      out.since_lock.push_back((t - start) * 1e-12);
    }
  }
  return out;
}

}  // namespace qlink
