// Solves the free parameters of a link configuration so that the analytic
// prediction hits target statistics, then prints the completed configuration.
//
//   qlink_calibrate --config base.cfg --h2c 0.036 --rate 1430 --concurrence 0.0115
//                   --visibility 0.84 --backtrace-ratio 6.347826
//
// Solved parameters: pair probability (both sources), idler transmission
// (both arms), memory efficiency (both memories), signal phase diffusion
// (split evenly over the signal channels), and the split of the readout
// efficiency between memory and signal path.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <boost/math/tools/roots.hpp>

#include "qlink/config.hpp"
#include "qlink/estimators.hpp"
#include "qlink/link_model.hpp"

namespace {

double solve(const std::function<double(double)>& f, double lo, double hi) {
  std::uintmax_t iterations = 200;
  auto r = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(50), iterations);
  return 0.5 * (r.first + r.second);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibrate a link configuration against target statistics"};
  std::string path;
  double target_h2c = 0.036, target_rate = 1430.0, target_c = 0.0115, target_v = 0.84;
  double ratio = 7.3 / 1.15;
  app.add_option("--config", path, "base configuration")->required();
  app.add_option("--h2c", target_h2c);
  app.add_option("--rate", target_rate, "herald rate in Hz");
  app.add_option("--concurrence", target_c);
  app.add_option("--visibility", target_v);
  app.add_option("--backtrace-ratio", ratio, "back-traced over measured concurrence");
  CLI11_PARSE(app, argc, argv);

  using namespace qlink;
  try {
    LinkConfig c = load_config(path);
    auto stats = [&]() { return predict_stats(validate(c)); };
    auto set_p = [&](double p) {
      c.source_a.mean_pair_probability_per_mode = p;
      c.source_b.mean_pair_probability_per_mode = p;
    };
    auto set_idler = [&](double t) {
      c.idler_channel_a.transmission = c.idler_channel_b.transmission = t;
      c.idler_channel_a.loss_db.reset();
      c.idler_channel_b.loss_db.reset();
    };
    auto set_memory = [&](double e) { c.memory_a.efficiency = c.memory_b.efficiency = e; };
    auto set_diffusion = [&](double d) { c.signal_channel_a.phase_diffusion = c.signal_channel_b.phase_diffusion = d / 2; };

    for (int sweep = 0; sweep < 40; ++sweep) {
      set_p(solve([&](double p) { set_p(p); return stats().h2c - target_h2c; }, 1e-4, 0.2));
      set_idler(solve([&](double t) { set_idler(t); return stats().herald_rate - target_rate; }, 1e-4, 1.0));
      set_memory(solve([&](double e) { set_memory(e); return stats().concurrence - target_c; }, 1e-3, 1.0));
      set_diffusion(solve([&](double d) { set_diffusion(d); return stats().visibility - target_v; }, 0.0, 1e4));
    }

    PredictedStats s = stats();
    // Only the product memory x signal x detector enters the model; split it
    // so the signal-path efficiency reproduces the back-trace ratio.
    double eta = calibrate_backtrace_efficiency(s.p, s.visibility, ratio);
    double readout = *c.memory_a.efficiency * c.signal_channel_a.transmission * c.readout_detectors[0].efficiency;
    c.signal_channel_a.transmission = c.signal_channel_b.transmission = eta / c.readout_detectors[0].efficiency;
    set_memory(readout / eta);

    s = stats();
    std::cerr.precision(10);
    std::cerr << "# V=" << s.visibility << " h2c=" << s.h2c << " C=" << s.concurrence << " rate=" << s.herald_rate
              << " backtraced C=" << s.backtraced_concurrence << " ratio=" << s.backtraced_concurrence / s.concurrence
              << " F_eff=" << s.effective_fidelity << " eta=" << eta << '\n';
    std::cout << serialize_config(c);
  } catch (const ConfigError& e) {
    for (const auto& v : e.violations()) std::cerr << "config error: " << v << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
