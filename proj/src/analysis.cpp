#include "qlink/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

namespace qlink {

namespace {

double wrap_phase(double theta) {
  double t = std::fmod(theta, 2.0 * std::numbers::pi);
  return t < 0.0 ? t + 2.0 * std::numbers::pi : t;
}

struct Fit {
  Eigen::Vector3d beta;  // a, b (sin), c (cos)
  Eigen::Matrix3d covariance;
  double chi2 = 0.0;
};

// Weighted fit of rate = a + b sin(theta) + c cos(theta) with inverse
// variances heralds / model, iterated from a flat model.
Fit fit_harmonic(const std::vector<double>& theta, const std::vector<double>& counts,
                 const std::vector<double>& heralds) {
  const int n = static_cast<int>(theta.size());
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n);
  double total_counts = 0.0, total_heralds = 0.0;
  for (int j = 0; j < n; ++j) {
    x(j, 0) = 1.0;
    x(j, 1) = std::sin(theta[j]);
    x(j, 2) = std::cos(theta[j]);
    y(j) = counts[j] / heralds[j];
    total_counts += counts[j];
    total_heralds += heralds[j];
  }
  const double mean = total_counts / total_heralds;
  Eigen::VectorXd model = Eigen::VectorXd::Constant(n, mean);
  Fit fit;
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::VectorXd w(n);
    for (int j = 0; j < n; ++j) {
      double floor = std::max(1e-3 * mean, 0.1 / heralds[j]);
      w(j) = heralds[j] / std::max(model(j), floor);
    }
    Eigen::Matrix3d normal = x.transpose() * w.asDiagonal() * x;
    Eigen::Vector3d rhs = x.transpose() * w.asDiagonal() * y;
    Eigen::Vector3d beta = normal.ldlt().solve(rhs);
    Eigen::VectorXd next = x * beta;
    double change = (next - model).cwiseAbs().maxCoeff();
    model = next;
    fit.beta = beta;
    fit.covariance = normal.inverse();
    fit.chi2 = ((y - model).array().square() * w.array()).sum();
    if (change <= 1e-13 * std::max(mean, 1e-300)) break;
  }
  return fit;
}

std::uint64_t count(const FringePoint& p, FringeOutput output) {
  return output == FringeOutput::out1 ? p.counts_out1 : p.counts_out2;
}

Measured combine(const Measured& a, const Measured& b) {
  if (!(a.error > 0.0) || !(b.error > 0.0)) return {0.5 * (a.value + b.value), std::max(a.error, b.error)};
  double wa = 1.0 / (a.error * a.error);
  double wb = 1.0 / (b.error * b.error);
  return {(wa * a.value + wb * b.value) / (wa + wb), 1.0 / std::sqrt(wa + wb)};
}

Measured binomial_estimate(std::uint64_t k, std::uint64_t n, bool& one_sided) {
  double nn = static_cast<double>(n);
  double p = k / nn;
  if (k == 0 || k == n) {
    // 68.27 % one-sided limit on the unobserved side.
    one_sided = true;
    return {p, 1.0 - std::pow(1.0 - 0.6827, 1.0 / nn)};
  }
  return {p, std::sqrt(p * (1.0 - p) / nn)};
}

nlohmann::ordered_json to_json(const Measured& m) { return {{"value", m.value}, {"error", m.error}}; }

nlohmann::ordered_json to_json(const ProbabilityEstimate& p) {
  return {{"p00", to_json(p.p00)}, {"p01", to_json(p.p01)}, {"p10", to_json(p.p10)}, {"p11", to_json(p.p11)},
          {"one_sided", p.one_sided}};
}

nlohmann::ordered_json to_json(const FringeFit& f) {
  return {{"visibility", to_json(f.visibility)},
          {"phase_offset_rad", f.phase_offset},
          {"amplitude", f.amplitude},
          {"chi2", f.chi2},
          {"dof", f.dof}};
}

// Counts of one resample, drawn as multinomial outcomes of every herald.
CoincidenceResult resample(const CoincidenceResult& c, std::mt19937_64& rng) {
  auto multinomial = [&](std::uint64_t n, std::array<std::uint64_t, 4> k) {
    std::array<std::uint64_t, 4> out{0, 0, 0, 0};
    std::uint64_t remaining = n;
    std::uint64_t left = n;
    for (int i = 0; i < 3 && remaining > 0; ++i) {
      double p = left > 0 ? static_cast<double>(k[i]) / left : 0.0;
      std::binomial_distribution<std::uint64_t> b(remaining, std::min(1.0, std::max(0.0, p)));
      out[i] = b(rng);
      remaining -= out[i];
      left -= k[i];
    }
    out[3] = remaining;
    return out;
  };
  CoincidenceResult r = c;
  const CoincidenceStats& d = c.direct;
  auto k = multinomial(d.herald_count, {d.n00, d.n01, d.n10, d.n11});
  r.direct.n00 = k[0];
  r.direct.n01 = k[1];
  r.direct.n10 = k[2];
  r.direct.n11 = k[3];
  for (auto& p : r.fringe.points) {
    std::uint64_t only1 = p.counts_out1 - p.counts_both;
    std::uint64_t only2 = p.counts_out2 - p.counts_both;
    auto f = multinomial(p.heralds, {p.heralds - only1 - only2 - p.counts_both, only1, only2, p.counts_both});
    p.counts_out1 = f[1] + f[3];
    p.counts_out2 = f[2] + f[3];
    p.counts_both = f[3];
  }
  return r;
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= v.size();
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / (v.size() - 1));
}

}  // namespace

CoincidenceStats& CoincidenceStats::operator+=(const CoincidenceStats& o) {
  herald_count += o.herald_count;
  n00 += o.n00;
  n01 += o.n01;
  n10 += o.n10;
  n11 += o.n11;
  integration_time += o.integration_time;
  total_heralds += o.total_heralds;
  discarded_heralds += o.discarded_heralds;
  for (int k = 0; k < 2; ++k) {
    readout_events[k] += o.readout_events[k];
    in_window_events[k] += o.in_window_events[k];
  }
  measure_time += o.measure_time;
  window_time += o.window_time;
  return *this;
}

FringePoint& FringeScan::at(double theta) {
  auto it = std::lower_bound(points.begin(), points.end(), theta,
                             [](const FringePoint& p, double t) { return p.theta < t - 1e-12; });
  if (it != points.end() && std::abs(it->theta - theta) <= 1e-12) return *it;
  FringePoint p;
  p.theta = theta;
  return *points.insert(it, p);
}

FringeScan& FringeScan::operator+=(const FringeScan& o) {
  for (const auto& p : o.points) {
    FringePoint& q = at(p.theta);
    q.counts_out1 += p.counts_out1;
    q.counts_out2 += p.counts_out2;
    q.heralds += p.heralds;
    q.counts_both += p.counts_both;
  }
  return *this;
}

CoincidenceResult& CoincidenceResult::operator+=(const CoincidenceResult& o) {
  direct += o.direct;
  fringe += o.fringe;
  return *this;
}

ClassifiedHeralds classify_heralds(const EventStream& stream, const CoincidenceOptions& options) {
  const StreamHeader& h = stream.header;
  if (h.cycle_period_ps == 0 || h.schedule.empty()) throw AnalysisError("stream header lacks cycle timing");
  const std::int64_t w = static_cast<std::int64_t>(options.window_ps.value_or(h.coincidence_window_ps));
  const std::int64_t tau = static_cast<std::int64_t>(h.storage_time_ps);
  const Channel herald_channel = h.herald_port == HeraldPort::plus ? Channel::herald_plus : Channel::herald_minus;

  ClassifiedHeralds out;
  CoincidenceStats& s = out.bookkeeping;
  s.integration_time = h.duration_ps * 1e-12;
  for (std::uint64_t c = 0; c * h.cycle_period_ps < h.duration_ps; ++c) {
    std::uint64_t a = h.measure_start(c);
    std::uint64_t b = std::min(h.measure_end(c), h.duration_ps);
    if (b > a) s.measure_time += (b - a) * 1e-12;
  }

  std::array<std::vector<std::int64_t>, 2> readout;
  std::uint64_t previous = 0;
  for (const auto& r : stream.records) {
    if (r.time_ps < previous) throw AnalysisError("non-monotonic timestamps");
    previous = r.time_ps;
    if (r.channel == Channel::readout_1) readout[0].push_back(static_cast<std::int64_t>(r.time_ps));
    if (r.channel == Channel::readout_2) readout[1].push_back(static_cast<std::int64_t>(r.time_ps));
  }
  s.readout_events = {readout[0].size(), readout[1].size()};

  std::array<std::size_t, 2> lo_index{0, 0}, hi_index{0, 0}, marked{0, 0};
  for (const auto& r : stream.records) {
    if (r.channel != herald_channel) continue;
    ++s.total_heralds;
    HeraldClass hc;
    hc.time_ps = r.time_ps;
    hc.trial = r.trial;
    hc.mode = r.mode;
    hc.cycle = h.cycle_of(r.time_ps);
    const std::int64_t lo = static_cast<std::int64_t>(r.time_ps) + tau - w / 2;
    const std::int64_t hi = lo + w;
    if (h.in_lock_stage(r.time_ps) ||
        hi > static_cast<std::int64_t>(std::min(h.measure_end(hc.cycle), h.duration_ps))) {
      ++s.discarded_heralds;
      hc.discarded = true;
      out.heralds.push_back(hc);
      continue;
    }
    for (int k = 0; k < 2; ++k) {
      const auto& t = readout[k];
      while (lo_index[k] < t.size() && t[lo_index[k]] < lo) ++lo_index[k];
      hi_index[k] = std::max(hi_index[k], lo_index[k]);
      while (hi_index[k] < t.size() && t[hi_index[k]] < hi) ++hi_index[k];
      hc.click[k] = hi_index[k] > lo_index[k];
      std::size_t from = std::max(lo_index[k], marked[k]);
      if (hi_index[k] > from) s.in_window_events[k] += hi_index[k] - from;
      marked[k] = std::max(marked[k], hi_index[k]);
    }
    s.window_time += w * 1e-12;
    out.heralds.push_back(hc);
  }
  return out;
}

void tally(const StreamHeader& header, const HeraldClass& hc, CoincidenceResult& result) {
  if (hc.discarded) return;
  const ScheduleEntry& entry = header.schedule_at(hc.cycle);
  if (entry.kind == ReadoutKind::direct) {
    CoincidenceStats& s = result.direct;
    ++s.herald_count;
    if (hc.click[0] && hc.click[1]) {
      ++s.n11;
    } else if (hc.click[0]) {
      ++s.n10;
    } else if (hc.click[1]) {
      ++s.n01;
    } else {
      ++s.n00;
    }
  } else {
    FringePoint& p = result.fringe.at(entry.theta);
    ++p.heralds;
    p.counts_out1 += hc.click[0];
    p.counts_out2 += hc.click[1];
    p.counts_both += hc.click[0] && hc.click[1];
  }
}

CoincidenceResult count_coincidences(const EventStream& stream, const CoincidenceOptions& options) {
  ClassifiedHeralds classified = classify_heralds(stream, options);
  CoincidenceResult result;
  result.direct = classified.bookkeeping;
  for (const auto& hc : classified.heralds) tally(stream.header, hc, result);
  return result;
}

CoincidenceResult count_simulated(const ValidatedConfig& config, std::uint64_t seed, double duration,
                                  const CoincidenceOptions& options, const SimulationOptions& sim) {
  const double limit = max_stream_duration(config);
  if (!(duration > limit)) return count_coincidences(simulate(config, seed, duration, sim), options);
  const double cycle = config.get().timing.cycle_period;
  const double segment = std::floor(limit / cycle) * cycle;
  CoincidenceResult total;
  double done = 0.0;
  for (std::uint64_t k = 0; done < duration; ++k) {
    const double len = std::min(segment, duration - done);
    const std::uint64_t s = fnv1a64(std::to_string(seed) + "/" + std::to_string(k));
    total += count_coincidences(simulate(config, s, len, sim), options);
    done += len;
  }
  return total;
}

void write_fringe_csv(const FringeScan& scan, std::ostream& out) {
  out << "theta_rad,counts_out1,counts_out2,heralds\n";
  std::ostringstream line;
  line.precision(17);
  for (const auto& p : scan.points) {
    line.str("");
    line << p.theta << ',' << p.counts_out1 << ',' << p.counts_out2 << ',' << p.heralds << '\n';
    out << line.str();
  }
}

FringeScan read_fringe_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw AnalysisError("empty fringe file");
  FringeScan scan;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(fields, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) throw AnalysisError("fringe row " + std::to_string(row) + ": expected 4 columns");
    double theta = std::stod(cells[0]);
    std::array<long long, 3> v{};
    for (int k = 0; k < 3; ++k) {
      v[k] = std::stoll(cells[k + 1]);
      if (v[k] < 0) throw AnalysisError("negative counts in fringe row " + std::to_string(row));
    }
    FringePoint& p = scan.at(theta);
    p.counts_out1 += v[0];
    p.counts_out2 += v[1];
    p.heralds += v[2];
  }
  return scan;
}

FringeFit fit_fringe(const FringeScan& scan, FringeOutput output) {
  std::vector<double> theta, counts, heralds, distinct;
  for (const auto& p : scan.points) {
    if (p.heralds == 0) continue;
    if (count(p, output) > p.heralds) throw AnalysisError("fringe counts exceed heralds");
    theta.push_back(p.theta);
    counts.push_back(static_cast<double>(count(p, output)));
    heralds.push_back(static_cast<double>(p.heralds));
    double t = wrap_phase(p.theta);
    bool seen = false;
    for (double d : distinct) seen = seen || std::abs(d - t) < 1e-9 || std::abs(std::abs(d - t) - 2 * std::numbers::pi) < 1e-9;
    if (!seen) distinct.push_back(t);
  }
  if (distinct.size() < 4) throw AnalysisError("degenerate fringe scan: need at least 4 distinct phases");
  double total = 0.0;
  for (double c : counts) total += c;
  if (!(total > 0.0)) throw AnalysisError("fringe scan has no counts");

  Fit f = fit_harmonic(theta, counts, heralds);
  const double a = f.beta(0), b = f.beta(1), c = f.beta(2);
  const double r = std::hypot(b, c);
  FringeFit out;
  out.amplitude = a;
  out.phase_offset = std::atan2(c, b);
  out.chi2 = f.chi2;
  out.dof = static_cast<int>(theta.size()) - 3;
  double v = a > 0.0 ? r / a : 1.0;
  double var;
  if (r > 0.0 && a > 0.0) {
    Eigen::Vector3d g(-r / (a * a), b / (a * r), c / (a * r));
    var = g.dot(f.covariance * g);
  } else {
    var = 0.5 * (f.covariance(1, 1) + f.covariance(2, 2)) / std::max(a * a, 1e-300);
  }
  out.visibility = {std::clamp(v, 0.0, 1.0), std::sqrt(std::max(0.0, var))};
  return out;
}

std::array<double, 2> accidental_probability(const CoincidenceStats& s, double window) {
  std::array<double, 2> out{0.0, 0.0};
  double free_time = s.measure_time - s.window_time;
  if (!(free_time > 0.0)) return out;
  for (int k = 0; k < 2; ++k) {
    double outside = static_cast<double>(s.readout_events[k] - std::min(s.readout_events[k], s.in_window_events[k]));
    out[k] = std::clamp(outside / free_time * window, 0.0, 0.5);
  }
  return out;
}

ProbabilityEstimate estimate_probabilities(const CoincidenceStats& s, const EstimateOptions& options) {
  if (s.herald_count == 0) throw AnalysisError("zero heralds: probabilities undefined");
  if (s.n00 + s.n01 + s.n10 + s.n11 != s.herald_count) throw AnalysisError("outcome counts do not sum to heralds");
  ProbabilityEstimate p;
  p.p00 = binomial_estimate(s.n00, s.herald_count, p.one_sided);
  p.p01 = binomial_estimate(s.n01, s.herald_count, p.one_sided);
  p.p10 = binomial_estimate(s.n10, s.herald_count, p.one_sided);
  p.p11 = binomial_estimate(s.n11, s.herald_count, p.one_sided);
  if (s.n00 == s.herald_count) {
    p.p00.error = 0.0;
  }
  if (options.accidental_probability) {
    // Invert independent accidental clicks on the no-click marginals.
    auto [a1, a2] = *options.accidental_probability;
    double q1 = 1.0 - a1, q2 = 1.0 - a2;
    double silent = p.p00.value / (q1 * q2);
    double silent_1 = (p.p00.value + p.p01.value) / q1;  // channel 1 silent
    double silent_2 = (p.p00.value + p.p10.value) / q2;
    Probabilities t;
    t.p00 = std::clamp(silent, 0.0, 1.0);
    t.p01 = std::max(0.0, silent_1 - silent);
    t.p10 = std::max(0.0, silent_2 - silent);
    t.p11 = std::max(0.0, 1.0 - t.p00 - t.p01 - t.p10);
    double scale = 1.0 / (q1 * q2);
    p.p00 = {t.p00, p.p00.error * scale};
    p.p01 = {t.p01, p.p01.error * scale};
    p.p10 = {t.p10, p.p10.error * scale};
    p.p11 = {t.p11, p.p11.error * scale};
  }
  return p;
}

Tomography tomography(const CoincidenceResult& counts, const TomographyOptions& options, std::uint64_t digest) {
  Tomography t;
  t.config_digest = digest;
  t.p = estimate_probabilities(counts.direct, options.estimate);
  t.fit_out1 = fit_fringe(counts.fringe, FringeOutput::out1);
  t.fit_out2 = fit_fringe(counts.fringe, FringeOutput::out2);
  t.visibility = combine(t.fit_out1.visibility, t.fit_out2.visibility);

  ConcurrenceEstimate ce = concurrence(t.p, t.visibility);
  t.d = ce.d;
  t.concurrence = ce.concurrence;
  t.concurrence_unclipped = ce.unclipped;
  try {
    t.h2c = h2c(t.p);
  } catch (const EstimationError&) {
    t.h2c.reset();
  }
  if (t.p.p01.value + t.p.p10.value + t.p.p11.value > 0.0) {
    t.effective_fidelity = effective_fidelity(t.p, t.visibility);
    t.effective_fidelity_matrix = effective_fidelity_matrix(t.p.values(), t.visibility.value);
  }
  if (options.backtrace_efficiency) {
    t.backtrace_efficiency = options.backtrace_efficiency;
    try {
      BacktraceResult bt =
          backtrace(t.p, t.visibility, (*options.backtrace_efficiency)[0], (*options.backtrace_efficiency)[1]);
      t.backtraced_p = bt.probabilities;
      t.backtraced_concurrence = bt.concurrence.concurrence;
      t.backtraced_effective_fidelity = effective_fidelity(bt.probabilities, t.visibility);
    } catch (const EstimationError& e) {
      t.backtrace_error = e.what();
    }
  }

  t.heralds = counts.direct.herald_count;
  for (const auto& p : counts.fringe.points) t.heralds += p.heralds;
  if (counts.direct.integration_time > 0.0) {
    double n = static_cast<double>(counts.direct.total_heralds);
    t.herald_rate = {n / counts.direct.integration_time, std::sqrt(n) / counts.direct.integration_time};
  }

  if (options.bootstrap_resamples > 0) {
    std::mt19937_64 rng(options.bootstrap_seed);
    std::vector<double> p00, p01, p10, p11, v, c, h, f, bc;
    for (int i = 0; i < options.bootstrap_resamples; ++i) {
      CoincidenceResult r = resample(counts, rng);
      try {
        ProbabilityEstimate q = estimate_probabilities(r.direct, options.estimate);
        Measured vis = combine(fit_fringe(r.fringe, FringeOutput::out1).visibility,
                               fit_fringe(r.fringe, FringeOutput::out2).visibility);
        p00.push_back(q.p00.value);
        p01.push_back(q.p01.value);
        p10.push_back(q.p10.value);
        p11.push_back(q.p11.value);
        v.push_back(vis.value);
        c.push_back(concurrence(q, vis).concurrence.value);
        if (q.p01.value * q.p10.value > 0.0) h.push_back(h2c(q.values()));
        if (q.p01.value + q.p10.value + q.p11.value > 0.0) {
          f.push_back(effective_fidelity_closed_form(q.values(), vis.value));
        }
        if (options.backtrace_efficiency) {
          try {
            bc.push_back(backtrace(q, vis, (*options.backtrace_efficiency)[0], (*options.backtrace_efficiency)[1])
                             .concurrence.concurrence.value);
          } catch (const EstimationError&) {
          }
        }
      } catch (const AnalysisError&) {
      }
    }
    t.p.p00.error = stddev(p00);
    t.p.p01.error = stddev(p01);
    t.p.p10.error = stddev(p10);
    t.p.p11.error = stddev(p11);
    t.visibility.error = stddev(v);
    t.concurrence.error = stddev(c);
    if (t.h2c) t.h2c->error = stddev(h);
    if (t.effective_fidelity) t.effective_fidelity->error = stddev(f);
    if (t.backtraced_concurrence) t.backtraced_concurrence->error = stddev(bc);
    t.error_method = "bootstrap " + std::to_string(options.bootstrap_resamples);
  }
  return t;
}

void write_tomography_json(const Tomography& t, std::ostream& out) {
  nlohmann::ordered_json j;
  j["config_digest"] = to_hex(t.config_digest);
  j["error_method"] = t.error_method;
  j["heralds"] = t.heralds;
  j["herald_rate_hz"] = to_json(t.herald_rate);
  j["probabilities"] = to_json(t.p);
  j["visibility"] = to_json(t.visibility);
  j["fringe_out1"] = to_json(t.fit_out1);
  j["fringe_out2"] = to_json(t.fit_out2);
  j["d"] = t.d;
  j["concurrence"] = to_json(t.concurrence);
  j["concurrence_unclipped"] = t.concurrence_unclipped;
  j["h2c"] = t.h2c ? to_json(*t.h2c) : nlohmann::ordered_json(nullptr);
  j["effective_fidelity"] = t.effective_fidelity ? to_json(*t.effective_fidelity) : nlohmann::ordered_json(nullptr);
  j["effective_fidelity_matrix"] =
      t.effective_fidelity_matrix ? nlohmann::ordered_json(*t.effective_fidelity_matrix) : nlohmann::ordered_json(nullptr);
  if (t.backtrace_efficiency) {
    nlohmann::ordered_json b;
    b["efficiency"] = {(*t.backtrace_efficiency)[0], (*t.backtrace_efficiency)[1]};
    if (t.backtraced_p) {
      b["probabilities"] = to_json(*t.backtraced_p);
      b["concurrence"] = to_json(*t.backtraced_concurrence);
      b["effective_fidelity"] = to_json(*t.backtraced_effective_fidelity);
    } else {
      b["error"] = t.backtrace_error.value_or("");
    }
    j["backtrace"] = b;
  }
  out << j.dump(2) << '\n';
}

}  // namespace qlink
