// One PASS/FAIL line per acceptance criterion; exit status 0 only when all pass.

#include <array>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "qlink/analysis.hpp"
#include "qlink/link_model.hpp"
#include "qlink/multimode.hpp"

using namespace qlink;

namespace {

int failures = 0;

std::string config_path(const std::string& name) { return std::string(QLINK_CONFIG_DIR) + "/" + name; }

ValidatedConfig load(const std::string& name) { return validate(load_config(config_path(name))); }

std::string fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* format, ...) {
  char buf[1024];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

void verdict(int id, bool pass, const std::string& detail) {
  failures += !pass;
  std::cout << "criterion " << id << ' ' << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

void info(const std::string& text) { std::cout << "    " << text << std::endl; }

bool within(double value, double target, double tolerance) { return std::abs(value - target) <= tolerance; }

std::string measured(const Measured& m) { return fmt("%.4g +- %.2g", m.value, m.error); }

Tomography analyze(const CoincidenceResult& counts, const ValidatedConfig& config) {
  TomographyOptions opt;
  opt.backtrace_efficiency = signal_path_efficiency(config);
  return tomography(counts, opt, config.digest());
}

// Reference scalars of the calibrated two-node link.
constexpr double kVisibility = 0.84, kVisibilityTol = 0.03;
constexpr double kH2c = 0.036, kH2cTol = 0.012;
constexpr double kConcurrence = 1.15e-2, kConcurrenceRelTol = 0.30;
constexpr double kRate = 1430.0, kRateRelTol = 0.05;
constexpr double kFidelity = 0.92, kFidelityTol = 0.02;
constexpr double kBacktracedConcurrence = 7.3e-2;

void criteria_1_and_2() {
  ValidatedConfig config = load("fig2.cfg");
  auto start = std::chrono::steady_clock::now();
  CoincidenceResult counts = count_coincidences(simulate(config, kDefaultSeed, 60.0));
  Tomography t = analyze(counts, config);
  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  bool v_ok = within(t.visibility.value, kVisibility, kVisibilityTol);
  bool h_ok = t.h2c && within(t.h2c->value, kH2c, kH2cTol);
  bool c_ok = within(t.concurrence.value, kConcurrence, kConcurrenceRelTol * kConcurrence);
  bool r_ok = within(t.herald_rate.value, kRate, kRateRelTol * kRate);
  bool time_ok = seconds < 120.0;
  verdict(1, v_ok && h_ok && c_ok && r_ok && time_ok,
          fmt("fig2 60 s seed %llu: V %s [%s], h2c %s [%s] (n11 = %llu), C %s [%s], rate %s Hz [%s], %.2f s [%s]",
              static_cast<unsigned long long>(kDefaultSeed), measured(t.visibility).c_str(), v_ok ? "ok" : "out",
              t.h2c ? measured(*t.h2c).c_str() : "undefined", h_ok ? "ok" : "out",
              static_cast<unsigned long long>(counts.direct.n11), measured(t.concurrence).c_str(),
              c_ok ? "ok" : "out", measured(t.herald_rate).c_str(), r_ok ? "ok" : "out", seconds,
              time_ok ? "ok" : "slow"));
  PredictedStats pred = predict_stats(config);
  info(fmt("model: V %.4f, h2c %.4f, C %.5f, rate %.1f Hz; expected n11 in 60 s = %.2f", pred.visibility, pred.h2c,
           pred.concurrence, pred.herald_rate, pred.p.p11 * counts.direct.herald_count));

  bool f_ok = t.effective_fidelity && within(t.effective_fidelity->value, kFidelity, kFidelityTol);
  double route_gap = (t.effective_fidelity && t.effective_fidelity_matrix)
                         ? std::abs(*t.effective_fidelity_matrix - t.effective_fidelity->value)
                         : NAN;
  bool route_ok = route_gap <= 1e-9;
  verdict(2, f_ok && route_ok,
          fmt("same run: F_eff %s [%s], closed form vs density matrix differ by %.2g [%s]",
              t.effective_fidelity ? measured(*t.effective_fidelity).c_str() : "undefined", f_ok ? "ok" : "out",
              route_gap, route_ok ? "ok" : "out"));
  info(fmt("model: F_eff %.4f", pred.effective_fidelity));

  // The same estimators on a longer run, for context only.
  const int segments = 200;
  CoincidenceResult total;
  for (int k = 1; k <= segments; ++k) total += count_coincidences(simulate(config, kDefaultSeed + k, 60.0));
  Tomography x = analyze(total, config);
  info(fmt("context, %d independent 60 s runs pooled: V %s, h2c %s, C %s, rate %s Hz, F_eff %s", segments,
           measured(x.visibility).c_str(), x.h2c ? measured(*x.h2c).c_str() : "undefined",
           measured(x.concurrence).c_str(), measured(x.herald_rate).c_str(),
           x.effective_fidelity ? measured(*x.effective_fidelity).c_str() : "undefined"));
}

void criterion_3() {
  LinkConfig base = load_config(config_path("fig3a.cfg"));
  const std::vector<double> losses{0.0, 1.3, 2.6, 3.9, 5.2, 6.5};
  const double duration = 3600.0;
  std::vector<double> analytic, c, c_err;
  std::vector<Measured> rates;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    LinkConfig l = base;
    double t = db_to_transmission(losses[i]);
    l.idler_channel_a.transmission *= t;
    l.idler_channel_b.transmission *= t;
    ValidatedConfig config = validate(l);
    analytic.push_back(predict_stats(config).concurrence);
    Tomography tomo = analyze(count_simulated(config, kDefaultSeed + i, duration), config);
    c.push_back(tomo.concurrence.value);
    c_err.push_back(tomo.concurrence.error);
    rates.push_back(tomo.herald_rate);
    info(fmt("%.1f dB: analytic C %.8f, simulated C %s, rate %s Hz", losses[i], analytic.back(),
             measured(tomo.concurrence).c_str(), measured(tomo.herald_rate).c_str()));
  }
  double spread = 0.0;
  for (double a : analytic) spread = std::max(spread, std::abs(a - analytic.front()));
  bool analytic_ok = spread <= 1e-10;
  Compatibility flat = compatibility(c, c_err);
  bool flat_ok = flat.p_value > 0.01;
  const Measured& r0 = rates.front();
  const Measured& r1 = rates.back();
  double ratio = r1.value / r0.value;
  double ratio_err = ratio * std::hypot(r0.error / r0.value, r1.error / r1.value);
  double expected = std::pow(10.0, -0.65);
  bool rate_ok = within(ratio, expected, 3 * ratio_err);
  verdict(3, analytic_ok && flat_ok && rate_ok,
          fmt("idler loss 0-6.5 dB, dark 0, %.0f s per point: analytic C spread %.3g (%.2f%%) [%s], simulated C "
              "chi2 %.2f / %d, p %.3f [%s], rate ratio %.5f +- %.5f vs %.5f [%s]",
              duration, spread, 100 * spread / analytic.front(), analytic_ok ? "ok" : "out", flat.chi2, flat.dof,
              flat.p_value, flat_ok ? "ok" : "out", ratio, ratio_err, expected, rate_ok ? "ok" : "out"));
}

void criterion_4() {
  ValidatedConfig config = load("fig2.cfg");
  PredictedStats s = predict_stats(config);
  auto eta = signal_path_efficiency(config);
  double ratio = s.backtraced_concurrence / s.concurrence;
  double target = kBacktracedConcurrence / kConcurrence;
  bool ok = s.backtraced_p && std::abs(ratio - target) <= 1e-9;
  verdict(4, ok,
          fmt("back-traced / measured C = %.12f vs %.12f (gap %.2g) with eta = %.6f, %.6f", ratio, target,
              std::abs(ratio - target), eta[0], eta[1]));
}

void criterion_5() {
  ValidatedConfig config = load("fig4.cfg");
  const double duration = 2000.0;
  EventStream tagged = assign_modes(simulate(config, kDefaultSeed, duration), 25e-6, 400e-9);
  ModeReport r = rate_vs_modes(tagged, ModePolicy::first);
  const ModeRow& one = r.rows.front();
  double slope_ratio = r.rate_fit.slope / one.rate;
  bool modes_ok = tagged.header.modes_per_trial == 62 && r.rows.size() == 62;
  bool slope_ok = std::abs(slope_ratio - 1.0) <= 0.05;
  bool r2_ok = r.rate_fit.r_squared > 0.99;
  std::vector<double> c, e;
  for (const auto& row : r.rows) {
    c.push_back(row.concurrence);
    e.push_back(row.concurrence_error);
  }
  Compatibility compat = compatibility(c, e);
  bool compat_ok = compat.p_value > 0.01;
  verdict(5, modes_ok && slope_ok && r2_ok && compat_ok,
          fmt("fig4 %.0f s, %zu modes, first herald per trial: slope / rate(1) = %.4f [%s], R^2 %.5f [%s], per-N C "
              "chi2 %.2f / %d, p %.3f [%s]",
              duration, r.rows.size(), slope_ratio, slope_ok ? "ok" : "out", r.rate_fit.r_squared,
              r2_ok ? "ok" : "out", compat.chi2, compat.dof, compat.p_value, compat_ok ? "ok" : "out"));
  info(fmt("rate(1) %.3f +- %.3f Hz, rate(62) %.2f Hz, C(1) %.4f +- %.4f, C(62) %.4f +- %.4f", one.rate,
           one.rate_error, r.rows.back().rate, one.concurrence, one.concurrence_error, r.rows.back().concurrence,
           r.rows.back().concurrence_error));
  ModeReport all = rate_vs_modes(tagged, ModePolicy::all);
  info(fmt("every herald counted: slope / rate(1) = %.4f, R^2 %.5f", all.rate_fit.slope / all.rows.front().rate,
           all.rate_fit.r_squared));
}

// A valid link in the regime of at most a few excitations per mode.
LinkConfig random_config(std::mt19937_64& rng, const LinkConfig& base) {
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  LinkConfig c = base;
  for (SourceParams* s : {&c.source_a, &c.source_b}) {
    s->mean_pair_probability_per_mode = u(2e-3, 2e-2);
    s->statistics = u(0, 1) < 0.5 ? PairStatistics::thermal : PairStatistics::poissonian;
  }
  for (ChannelParams* ch : {&c.idler_channel_a, &c.idler_channel_b}) {
    ch->transmission = u(0.05, 0.4);
    ch->phase_diffusion = u(0.0, 50.0);
  }
  for (ChannelParams* ch : {&c.signal_channel_a, &c.signal_channel_b}) {
    ch->transmission = u(0.3, 0.8);
    ch->phase_diffusion = u(0.0, 50.0);
  }
  for (MemoryParams* m : {&c.memory_a, &c.memory_b}) {
    m->efficiency = u(0.2, 0.6);
    m->echo_center_offset = u(0.0, 50e-9);
  }
  for (auto& d : c.herald_detectors) {
    d.efficiency = u(0.5, 0.95);
    d.dark_click_probability = u(0.0, 1e-5);
  }
  for (auto& d : c.readout_detectors) {
    d.efficiency = u(0.6, 0.95);
    d.dark_click_probability = u(0.0, 1e-5);
  }
  c.timing.lock_residual = u(0.0, 0.15);
  c.idler_mode_overlap = u(0.8, 1.0);
  c.herald_port = u(0, 1) < 0.5 ? HeraldPort::plus : HeraldPort::minus;
  return c;
}

BosonicState random_state(std::mt19937_64& rng, int modes, int n_max) {
  int dim = 1;
  for (int m = 0; m < modes; ++m) dim *= n_max + 1;
  std::normal_distribution<double> g;
  ComplexMatrix a(dim, dim);
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) a(i, j) = Complex(g(rng), g(rng));
  }
  ComplexMatrix rho = a * a.adjoint();
  rho /= rho.trace().real();
  return BosonicState(modes, n_max, rho);
}

void criterion_6() {
  const int configs = 20;
  const double heralds_target = 1e6;
  LinkConfig base = load_config(config_path("fig2.cfg"));
  std::mt19937_64 rng(kDefaultSeed);
  int outside = 0, compared = 0;
  double worst = 0.0;
  for (int i = 0; i < configs; ++i) {
    ValidatedConfig config = validate(random_config(rng, base));
    PredictedStats pred = predict_stats(config);
    double duration = heralds_target / pred.herald_rate;
    CoincidenceResult counts = count_simulated(config, kDefaultSeed + i, duration);
    Tomography t = tomography(counts);
    std::uint64_t heralds = counts.direct.herald_count;
    for (const auto& q : counts.fringe.points) heralds += q.heralds;
    // Prediction for the inverse-variance combination of both fringe outputs.
    double w1 = 1 / std::pow(t.fit_out1.visibility.error, 2), w2 = 1 / std::pow(t.fit_out2.visibility.error, 2);
    double v_pred = (w1 * pred.visibility + w2 * pred.visibility_output_2) / (w1 + w2);
    std::vector<std::pair<Measured, double>> pairs{{t.p.p00, pred.p.p00},
                                                   {t.p.p01, pred.p.p01},
                                                   {t.p.p10, pred.p.p10},
                                                   {t.p.p11, pred.p.p11},
                                                   {t.visibility, v_pred}};
    if (t.h2c) pairs.push_back({*t.h2c, pred.h2c});
    std::string pulls;
    for (const auto& [m, p] : pairs) {
      double pull = (m.value - p) / m.error;
      worst = std::max(worst, std::abs(pull));
      outside += !(std::abs(pull) <= 3.0);
      ++compared;
      pulls += fmt(" %+.2f", pull);
    }
    info(fmt("config %2d: %llu heralds in %.0f s, pulls p00 p01 p10 p11 V h2c:%s", i + 1,
             static_cast<unsigned long long>(heralds), duration, pulls.c_str()));
  }

  std::mt19937_64 srng(kDefaultSeed + 100);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int fock_bad = 0;
  const int states = 1000;
  std::array<int, 2> one_one{1, 1};
  for (int i = 0; i < states; ++i) {
    BosonicState s = random_state(srng, 2, 2);
    double e1 = u(srng), e2 = u(srng), r = u(srng), phi = 2 * std::numbers::pi * u(srng);
    bool ok = true;
    for (const BosonicState& out : {apply_loss(s, 0, e1), apply_beam_splitter(s, 0, 1, r, phi), apply_phase(s, 1, phi),
                                    dephase(s, e2)}) {
      ok = ok && std::abs(out.trace() - 1.0) <= 1e-10 && out.hermiticity_error() <= 1e-10 &&
           out.min_eigenvalue() >= -1e-10;
    }
    BosonicState ab = apply_loss(apply_loss(s, 0, e1), 1, e2);
    BosonicState ba = apply_loss(apply_loss(s, 1, e2), 0, e1);
    ok = ok && (ab.density_matrix() - ba.density_matrix()).norm() <= 1e-10;
    BosonicState hom = apply_beam_splitter(BosonicState::fock(one_one, 1), 0, 1, 0.5, phi);
    ok = ok && hom.probability(one_one) <= 1e-10;
    fock_bad += !ok;
  }
  verdict(6, outside == 0 && fock_bad == 0,
          fmt("%d random links, %d comparisons: %d outside 3 sigma (largest |pull| %.2f); %d of %d random states "
              "violate trace, Hermiticity, positivity, HOM or loss commutation",
              configs, compared, outside, worst, fock_bad, states));
}

}  // namespace

int main() {
  criteria_1_and_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  std::cout << "criterion 7 EXCLUDED  absolute hardware numbers without model inputs (memory efficiency per storage "
               "time, lock residuals) are configuration inputs here, not predictions"
            << std::endl;
  std::cout << (failures ? fmt("%d criteria failed", failures) : std::string("all criteria passed")) << std::endl;
  return failures ? 1 : 0;
}
