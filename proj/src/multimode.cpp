#include "qlink/multimode.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

namespace qlink {

ModePolicy parse_mode_policy(std::string_view text) {
  if (text == "first") return ModePolicy::first;
  if (text == "all") return ModePolicy::all;
  throw MultimodeError("unknown mode policy '" + std::string(text) + "' (expected first or all)");
}

const char* to_string(ModePolicy policy) { return policy == ModePolicy::first ? "first" : "all"; }

EventStream assign_modes(const EventStream& stream, double trial_length, double mode_duration) {
  if (!(trial_length > 0.0)) throw MultimodeError("communication time must be positive");
  if (!(mode_duration > 0.0)) throw MultimodeError("mode duration must be positive");
  if (mode_duration > trial_length * (1.0 + 1e-12)) {
    throw MultimodeError("mode duration exceeds the communication time");
  }
  const auto trial_ps = static_cast<std::uint64_t>(std::llround(trial_length * 1e12));
  const auto mode_ps = static_cast<std::uint64_t>(std::llround(mode_duration * 1e12));
  const std::uint64_t modes = std::max<std::uint64_t>(1, trial_ps / mode_ps);
  if (modes > std::numeric_limits<std::uint16_t>::max()) throw MultimodeError("too many modes per trial");

  EventStream out;
  out.header = stream.header;
  out.header.trial_length_ps = trial_ps;
  out.header.mode_duration_ps = mode_ps;
  out.header.modes_per_trial = static_cast<std::uint32_t>(modes);
  out.records.reserve(stream.records.size());
  for (EventRecord r : stream.records) {
    std::uint64_t trial = r.time_ps / trial_ps;
    std::uint64_t mode = (r.time_ps % trial_ps) / mode_ps;
    if (trial > std::numeric_limits<std::uint32_t>::max()) throw MultimodeError("trial index exceeds the 32-bit range");
    bool herald = r.channel == Channel::herald_plus || r.channel == Channel::herald_minus;
    if (mode >= modes) {
      if (herald) continue;
      mode = modes - 1;
    }
    r.trial = static_cast<std::uint32_t>(trial);
    r.mode = static_cast<std::uint16_t>(mode);
    out.records.push_back(r);
  }
  return out;
}

ModeReport rate_vs_modes(const EventStream& tagged, ModePolicy policy, std::optional<int> max_modes) {
  if (tagged.records.empty()) throw MultimodeError("empty stream");
  const int n_max = max_modes.value_or(static_cast<int>(tagged.header.modes_per_trial));
  if (n_max < 1) throw MultimodeError("at least one mode is required");

  ClassifiedHeralds classified = classify_heralds(tagged);
  // by_mode[m]: accepted heralds whose mode is m; prefix sums give N = m + 1.
  std::vector<CoincidenceResult> by_mode(n_max);
  std::vector<std::uint64_t> accepted(n_max, 0);
  std::optional<std::uint32_t> current_trial;
  for (const auto& hc : classified.heralds) {
    if (hc.mode >= n_max) continue;
    if (policy == ModePolicy::first) {
      if (current_trial && *current_trial == hc.trial) continue;
      current_trial = hc.trial;
    }
    ++accepted[hc.mode];
    tally(tagged.header, hc, by_mode[hc.mode]);
  }

  ModeReport report;
  report.policy = policy;
  const double t = classified.bookkeeping.integration_time;
  CoincidenceResult running;
  running.direct = classified.bookkeeping;
  std::uint64_t used = 0;
  std::vector<double> x, y;
  for (int n = 1; n <= n_max; ++n) {
    running += by_mode[n - 1];
    used += accepted[n - 1];
    ModeRow row;
    row.n_modes = n;
    row.heralds_used = used;
    row.rate = used / t;
    row.rate_error = std::sqrt(static_cast<double>(used)) / t;
    try {
      Tomography tomo = tomography(running);
      row.concurrence = tomo.concurrence.value;
      row.concurrence_error = tomo.concurrence.error;
    } catch (const std::exception&) {
      row.concurrence = std::numeric_limits<double>::quiet_NaN();
      row.concurrence_error = std::numeric_limits<double>::quiet_NaN();
    }
    report.rows.push_back(row);
    x.push_back(n);
    y.push_back(row.rate);
  }
  if (n_max >= 2) report.rate_fit = fit_line(x, y);
  return report;
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw MultimodeError("line fit needs at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw MultimodeError("line fit needs distinct abscissae");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

Compatibility compatibility(const std::vector<double>& values, const std::vector<double>& errors) {
  double sw = 0.0, swx = 0.0;
  std::vector<std::pair<double, double>> used;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) || !(errors[i] > 0.0) || !std::isfinite(errors[i])) continue;
    used.emplace_back(values[i], errors[i]);
    double w = 1.0 / (errors[i] * errors[i]);
    sw += w;
    swx += w * values[i];
  }
  Compatibility c;
  if (used.size() < 2) return c;
  double mean = swx / sw;
  for (auto [v, e] : used) c.chi2 += (v - mean) * (v - mean) / (e * e);
  c.dof = static_cast<int>(used.size()) - 1;
  c.p_value = boost::math::gamma_q(0.5 * c.dof, 0.5 * c.chi2);
  return c;
}

void write_mode_report_csv(const ModeReport& report, std::ostream& out) {
  out << "n_modes,rate_hz,rate_err,concurrence,concurrence_err\n";
  std::ostringstream line;
  line.precision(10);
  for (const auto& r : report.rows) {
    line.str("");
    line << r.n_modes << ',' << r.rate << ',' << r.rate_error << ',' << r.concurrence << ',' << r.concurrence_error
         << '\n';
    out << line.str();
  }
}

}  // namespace qlink
