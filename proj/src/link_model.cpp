#include "qlink/link_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/tools/minima.hpp>

namespace qlink {

namespace {

constexpr double kBalanced = 0.5;
constexpr double kBeamSplitterPhase = std::numbers::pi;

// Joint threshold-click probabilities of two modes of a two-mode state,
// read from the diagonal.
ClickPattern joint_clicks(const BosonicState& s, const std::array<DetectorParams, 2>& det) {
  const int d = s.n_max() + 1;
  std::array<std::vector<double>, 2> silent;
  for (int m = 0; m < 2; ++m) {
    silent[m].resize(d);
    for (int n = 0; n < d; ++n) {
      silent[m][n] = (1.0 - det[m].dark_click_probability) * std::pow(1.0 - det[m].efficiency, n);
    }
  }
  ClickPattern p;
  for (int i = 0; i < s.dimension(); ++i) {
    double w = s.density_matrix()(i, i).real();
    if (w == 0.0) continue;
    double qa = silent[0][s.occupation(i, 0)];
    double qb = silent[1][s.occupation(i, 1)];
    p.p00 += w * qa * qb;
    p.p01 += w * qa * (1.0 - qb);
    p.p10 += w * (1.0 - qa) * qb;
    p.p11 += w * (1.0 - qa) * (1.0 - qb);
  }
  double total = p.p00 + p.p01 + p.p10 + p.p11;
  if (total > 0.0) {
    p.p00 /= total;
    p.p01 /= total;
    p.p10 /= total;
    p.p11 /= total;
  }
  return p;
}

BosonicState attenuate(const BosonicState& memories, const ReadoutChannel& channel) {
  BosonicState s = apply_loss(memories, 0, channel.transmission[0]);
  return apply_loss(s, 1, channel.transmission[1]);
}

BosonicState finish_memory_state(const BosonicState& s, int n_max, double idler_overlap) {
  return dephase(s.with_truncation(n_max), idler_overlap);
}

double golden_extremum(const PhaseSeries& f, double center, double half_width, bool maximize) {
  auto objective = [&](double x) { return maximize ? -f(x) : f(x); };
  auto r = boost::math::tools::brent_find_minima(objective, center - half_width, center + half_width,
                                                 std::numeric_limits<double>::digits);
  return f(r.first);
}

}  // namespace

PhaseSeries PhaseSeries::from_samples(const std::function<double(double)>& f, int degree) {
  if (degree < 0) throw std::invalid_argument("phase series degree must be non-negative");
  PhaseSeries out;
  out.degree_ = degree;
  const int n = 2 * degree + 1;
  std::vector<double> samples(n);
  for (int j = 0; j < n; ++j) samples[j] = f(2.0 * std::numbers::pi * j / n);
  out.coefficients_.assign(n, Complex(0.0));
  for (int k = -degree; k <= degree; ++k) {
    Complex sum = 0.0;
    for (int j = 0; j < n; ++j) sum += samples[j] * std::polar(1.0, -2.0 * std::numbers::pi * k * j / n);
    out.coefficients_[k + degree] = sum / static_cast<double>(n);
  }
  return out;
}

double PhaseSeries::operator()(double theta) const {
  double v = coefficients_[degree_].real();
  for (int k = 1; k <= degree_; ++k) v += 2.0 * (coefficients_[k + degree_] * std::polar(1.0, k * theta)).real();
  return v;
}

BosonicState build_pre_herald_state(const ValidatedConfig& config) {
  const LinkConfig& c = config.get();
  const int n = c.truncation;
  BosonicState a = tmsv(c.source_a.mean_pair_probability_per_mode, n, c.source_a.statistics);
  BosonicState b = tmsv(c.source_b.mean_pair_probability_per_mode, n, c.source_b.statistics);
  BosonicState s = a.tensor(b);
  s = apply_loss(s, kIdlerA, c.idler_channel_a.transmission);
  s = apply_loss(s, kIdlerB, c.idler_channel_b.transmission);
  s = apply_phase(s, kIdlerA, c.idler_channel_a.static_phase);
  s = apply_phase(s, kIdlerB, c.idler_channel_b.static_phase);
  return s;
}

HeraldOutcome herald(const BosonicState& pre, HeraldPort port, const std::array<DetectorParams, 2>& detectors,
                     double idler_overlap) {
  if (pre.mode_count() != 4) throw std::invalid_argument("herald expects a four-mode pre-herald state");
  BosonicState mixed = apply_beam_splitter(pre, kIdlerA, kIdlerB, kBalanced, kBeamSplitterPhase);
  const bool plus = port == HeraldPort::plus;
  DetectionOutcome det = detect_threshold(mixed, plus ? kIdlerA : kIdlerB, detectors[plus ? 0 : 1]);
  if (!(det.click_probability > 0.0) || !det.conditional_state_click) {
    throw ModelError("unheraldable configuration: herald click probability is zero");
  }
  // Remaining modes: memA, memB, idlerB (plus) or memA, idlerA, memB (minus).
  BosonicState memories = trace_out(*det.conditional_state_click, plus ? 2 : 1);
  return {det.click_probability, finish_memory_state(memories, pre.n_max(), idler_overlap), port};
}

std::array<HeraldBranch, 4> herald_branches(const BosonicState& pre, const std::array<DetectorParams, 2>& detectors,
                                            double idler_overlap) {
  if (pre.mode_count() != 4) throw std::invalid_argument("herald expects a four-mode pre-herald state");
  BosonicState mixed = apply_beam_splitter(pre, kIdlerA, kIdlerB, kBalanced, kBeamSplitterPhase);
  DetectionOutcome first = detect_threshold(mixed, kIdlerA, detectors[0]);
  std::array<HeraldBranch, 4> out;
  for (int plus = 0; plus < 2; ++plus) {
    const auto& cond = plus ? first.conditional_state_click : first.conditional_state_no_click;
    double p_plus = plus ? first.click_probability : 1.0 - first.click_probability;
    // Remaining modes: memA, memB, idlerB.
    std::optional<DetectionOutcome> second;
    if (cond) second = detect_threshold(*cond, 2, detectors[1]);
    for (int minus = 0; minus < 2; ++minus) {
      HeraldBranch& b = out[2 * plus + minus];
      b.plus_click = plus;
      b.minus_click = minus;
      if (!second) continue;
      double p_minus = minus ? second->click_probability : 1.0 - second->click_probability;
      b.probability = p_plus * p_minus;
      const auto& state = minus ? second->conditional_state_click : second->conditional_state_no_click;
      if (b.probability > 0.0 && state) b.memory_state = finish_memory_state(*state, pre.n_max(), idler_overlap);
    }
  }
  return out;
}

ReadoutChannel readout_channel(const ValidatedConfig& config, bool include_phase_noise) {
  const LinkConfig& c = config.get();
  ReadoutChannel ch;
  ch.transmission = {c.memory_a.retrieval_efficiency() * c.signal_channel_a.transmission,
                     c.memory_b.retrieval_efficiency() * c.signal_channel_b.transmission};
  ch.static_phase = {c.signal_channel_a.static_phase, c.signal_channel_b.static_phase};
  ch.detectors = c.readout_detectors;
  VisibilityBudget budget = visibility_budget(config);
  ch.coherence_factor = budget.echo_overlap_factor * (include_phase_noise ? budget.phase_noise_factor : 1.0);
  return ch;
}

ClickPattern direct_readout(const BosonicState& memories, const ReadoutChannel& channel) {
  if (memories.mode_count() != 2) throw std::invalid_argument("readout expects a two-mode memory state");
  return joint_clicks(attenuate(memories, channel), channel.detectors);
}

ClickPattern fringe_readout(const BosonicState& memories, const ReadoutChannel& channel, double theta) {
  if (memories.mode_count() != 2) throw std::invalid_argument("readout expects a two-mode memory state");
  BosonicState s = dephase(attenuate(memories, channel), channel.coherence_factor);
  s = apply_phase(s, 0, theta + channel.static_phase[0]);
  s = apply_phase(s, 1, channel.static_phase[1]);
  s = apply_beam_splitter(s, 0, 1, kBalanced, kBeamSplitterPhase);
  return joint_clicks(s, channel.detectors);
}

std::array<PhaseSeries, 4> fringe_series(const BosonicState& memories, const ReadoutChannel& channel) {
  const int degree = memories.n_max();
  std::array<PhaseSeries, 4> out;
  std::vector<ClickPattern> cache;
  const int n = 2 * degree + 1;
  for (int j = 0; j < n; ++j) cache.push_back(fringe_readout(memories, channel, 2.0 * std::numbers::pi * j / n));
  auto lookup = [&](double (*field)(const ClickPattern&)) {
    return PhaseSeries::from_samples(
        [&](double theta) {
          int j = static_cast<int>(std::lround(theta * n / (2.0 * std::numbers::pi)));
          return field(cache[j]);
        },
        degree);
  };
  out[0] = lookup([](const ClickPattern& p) { return p.p00; });
  out[1] = lookup([](const ClickPattern& p) { return p.p01; });
  out[2] = lookup([](const ClickPattern& p) { return p.p10; });
  out[3] = lookup([](const ClickPattern& p) { return p.p11; });
  return out;
}

ReadoutProbabilities readout_probabilities(const HeraldOutcome& outcome, double theta, const ValidatedConfig& config) {
  ReadoutChannel ch = readout_channel(config, true);
  ReadoutProbabilities out;
  out.direct = direct_readout(outcome.conditional_memory_state, ch);
  out.fringe = fringe_readout(outcome.conditional_memory_state, ch, theta);
  out.output_1_click = out.fringe.p10 + out.fringe.p11;
  out.output_2_click = out.fringe.p01 + out.fringe.p11;
  return out;
}

double fringe_visibility(const PhaseSeries& f) {
  constexpr int kGrid = 720;
  const double step = 2.0 * std::numbers::pi / kGrid;
  int imax = 0, imin = 0;
  std::vector<double> values(kGrid);
  for (int j = 0; j < kGrid; ++j) {
    values[j] = f(j * step);
    if (values[j] > values[imax]) imax = j;
    if (values[j] < values[imin]) imin = j;
  }
  double hi = std::max(values[imax], golden_extremum(f, imax * step, step, true));
  double lo = std::min(values[imin], golden_extremum(f, imin * step, step, false));
  if (!(hi + lo > 0.0)) return 0.0;
  return (hi - lo) / (hi + lo);
}

double phase_noise_factor(double lock_residual, double total_diffusion, double window) {
  double x = 0.5 * total_diffusion * window;
  double average = x > 0.0 ? -std::expm1(-x) / x : 1.0;
  return std::exp(-lock_residual * lock_residual) * average;
}

double echo_overlap(double center_a, double width_a, double center_b, double width_b) {
  if (!(width_a > 0.0 && width_b > 0.0)) throw std::invalid_argument("echo widths must be positive");
  double s2 = width_a * width_a + width_b * width_b;
  double dt = center_a - center_b;
  return std::sqrt(2.0 * width_a * width_b / s2) * std::exp(-dt * dt / (4.0 * s2));
}

VisibilityBudget visibility_budget(const ValidatedConfig& config) {
  const LinkConfig& c = config.get();
  VisibilityBudget b;
  double diffusion = c.idler_channel_a.phase_diffusion + c.idler_channel_b.phase_diffusion +
                     c.signal_channel_a.phase_diffusion + c.signal_channel_b.phase_diffusion;
  b.phase_noise_factor = phase_noise_factor(c.timing.lock_residual, diffusion, c.timing.measure_period());
  b.idler_overlap_factor = c.idler_mode_overlap;
  b.echo_overlap_factor =
      echo_overlap(c.memory_a.echo_offset(), c.memory_a.echo_rms_width, c.memory_b.echo_offset(), c.memory_b.echo_rms_width);
  b.total = b.phase_noise_factor * b.idler_overlap_factor * b.echo_overlap_factor;
  return b;
}

std::array<double, 2> signal_path_efficiency(const ValidatedConfig& config) {
  const LinkConfig& c = config.get();
  return {c.signal_channel_a.transmission * c.readout_detectors[0].efficiency,
          c.signal_channel_b.transmission * c.readout_detectors[1].efficiency};
}

PredictedStats predict_stats(const ValidatedConfig& config) {
  const LinkConfig& c = config.get();
  HeraldOutcome outcome = herald(build_pre_herald_state(config), c.herald_port, c.herald_detectors, c.idler_mode_overlap);
  ReadoutChannel ch = readout_channel(config, true);

  PredictedStats s;
  s.herald_probability_per_mode = outcome.herald_probability_per_mode;
  s.herald_rate = outcome.herald_probability_per_mode * c.timing.mode_attempt_rate() * c.timing.duty_cycle;
  s.budget = visibility_budget(config);
  s.p = direct_readout(outcome.conditional_memory_state, ch);

  auto series = fringe_series(outcome.conditional_memory_state, ch);
  PhaseSeries out1 = PhaseSeries::from_samples([&](double t) { return series[2](t) + series[3](t); }, series[0].degree());
  PhaseSeries out2 = PhaseSeries::from_samples([&](double t) { return series[1](t) + series[3](t); }, series[0].degree());
  s.visibility = fringe_visibility(out1);
  s.visibility_output_2 = fringe_visibility(out2);

  ConcurrenceEstimate ce = concurrence(ProbabilityEstimate::exact(s.p), {s.visibility, 0.0});
  s.d = ce.d;
  s.concurrence = ce.concurrence.value;
  s.concurrence_unclipped = ce.unclipped;
  s.h2c = s.p.p01 * s.p.p10 > 0.0 ? h2c(s.p) : std::numeric_limits<double>::quiet_NaN();
  s.effective_fidelity = s.p.p01 + s.p.p10 + s.p.p11 > 0.0 ? effective_fidelity_closed_form(s.p, s.visibility) : 0.0;

  auto eta = signal_path_efficiency(config);
  if (eta[0] > 0.0 && eta[1] > 0.0) {
    try {
      BacktraceResult bt = backtrace(ProbabilityEstimate::exact(s.p), {s.visibility, 0.0}, eta[0], eta[1]);
      s.backtraced_p = bt.probabilities.values();
      s.backtraced_concurrence = bt.concurrence.concurrence.value;
      s.backtraced_effective_fidelity = effective_fidelity_closed_form(*s.backtraced_p, s.visibility);
    } catch (const EstimationError&) {
      s.backtraced_p.reset();
    }
  }
  return s;
}

}  // namespace qlink
