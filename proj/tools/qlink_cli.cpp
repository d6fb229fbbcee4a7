// qlink: command-line front end for the link model, the event simulator and
// the analysis chain.
//
// Exit codes: 0 ok, 1 usage or internal error, 2 configuration error,
// 3 data error, 4 check failure.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qlink/analysis.hpp"
#include "qlink/config.hpp"
#include "qlink/event_sim.hpp"
#include "qlink/link_model.hpp"
#include "qlink/multimode.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace qlink;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kError = 1, kConfigError = 2, kDataError = 3, kCheckFailed = 4 };

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string now_iso() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return to_hex(fnv1a64(buffer.str()));
}

json measured(const Measured& m) { return {{"value", m.value}, {"error", m.error}}; }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// Collects outputs of one command and writes the run manifest.
class Run {
 public:
  Run(std::string command, std::vector<std::string> args, fs::path out)
      : command_(std::move(command)), args_(std::move(args)), out_(std::move(out)), start_(now_iso()) {
    fs::create_directories(out_);
  }

  fs::path path(const std::string& name) const { return out_ / name; }

  void write(const std::string& name, const std::string& content) {
    std::ofstream f(path(name), std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path(name).string());
    f << content;
    if (!f) throw std::runtime_error("failed writing " + path(name).string());
    outputs_.push_back(name);
  }

  void record(const std::string& name) { outputs_.push_back(name); }
  void set_config_digest(std::uint64_t d) { digest_ = d; }
  void set_seed(std::uint64_t s) { seed_ = s; }

  void finish() const {
    json m;
    m["command"] = command_;
    m["args"] = args_;
    m["cwd"] = fs::current_path().string();
    m["tool_version"] = kVersion;
    m["config_digest"] = digest_ ? json(to_hex(*digest_)) : json(nullptr);
    m["seed"] = seed_ ? json(*seed_) : json(nullptr);
    m["start_time"] = start_;
    m["end_time"] = now_iso();
    json outputs = json::array();
    for (const auto& name : outputs_) {
      outputs.push_back({{"path", name}, {"digest", file_digest(path(name))}, {"bytes", fs::file_size(path(name))}});
    }
    m["outputs"] = outputs;
    std::ofstream f(path("manifest.json"));
    f << m.dump(2) << '\n';
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  fs::path out_;
  std::string start_;
  std::optional<std::uint64_t> digest_;
  std::optional<std::uint64_t> seed_;
  std::vector<std::string> outputs_;
};

ValidatedConfig load(const std::string& path, const std::vector<std::string>& overrides) {
  LinkConfig c = load_config(path);
  for (const auto& o : overrides) apply_override(c, o);
  return validate(c);
}

json predicted_json(const PredictedStats& s, const ValidatedConfig& config) {
  json j;
  j["config_digest"] = config.digest_hex();
  j["probabilities"] = {{"p00", s.p.p00}, {"p01", s.p.p01}, {"p10", s.p.p10}, {"p11", s.p.p11}};
  j["visibility"] = s.visibility;
  j["visibility_output_2"] = s.visibility_output_2;
  j["d"] = s.d;
  j["concurrence"] = s.concurrence;
  j["concurrence_unclipped"] = s.concurrence_unclipped;
  j["h2c"] = number_or_null(s.h2c);
  j["effective_fidelity"] = s.effective_fidelity;
  j["herald_probability_per_mode"] = s.herald_probability_per_mode;
  j["herald_rate_hz"] = s.herald_rate;
  j["visibility_budget"] = {{"phase_noise_factor", s.budget.phase_noise_factor},
                            {"idler_overlap_factor", s.budget.idler_overlap_factor},
                            {"echo_overlap_factor", s.budget.echo_overlap_factor},
                            {"total", s.budget.total}};
  auto eta = signal_path_efficiency(config);
  json b;
  b["efficiency"] = {eta[0], eta[1]};
  if (s.backtraced_p) {
    b["probabilities"] = {{"p00", s.backtraced_p->p00},
                          {"p01", s.backtraced_p->p01},
                          {"p10", s.backtraced_p->p10},
                          {"p11", s.backtraced_p->p11}};
    b["concurrence"] = s.backtraced_concurrence;
    b["effective_fidelity"] = s.backtraced_effective_fidelity;
  } else {
    b["error"] = "efficiency inconsistent with the predicted probabilities";
  }
  j["backtrace"] = b;
  return j;
}

json coincidence_json(const CoincidenceResult& c) {
  const CoincidenceStats& s = c.direct;
  json j;
  j["herald_count"] = s.herald_count;
  j["n00"] = s.n00;
  j["n01"] = s.n01;
  j["n10"] = s.n10;
  j["n11"] = s.n11;
  j["integration_time_s"] = s.integration_time;
  j["total_heralds"] = s.total_heralds;
  j["discarded_heralds"] = s.discarded_heralds;
  j["readout_events"] = s.readout_events;
  j["in_window_events"] = s.in_window_events;
  j["measure_time_s"] = s.measure_time;
  std::uint64_t fringe = 0;
  for (const auto& p : c.fringe.points) fringe += p.heralds;
  j["fringe_heralds"] = fringe;
  return j;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad number '" + item + "'");
    out.push_back(v);
  }
  return out;
}

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = kDefaultSeed;
  double duration = 60.0;
  std::string out = "qlink_out";
  std::string stream;
  std::string policy = "first";
  std::optional<double> window;
  int bootstrap = 0;
  bool accidentals = false;
  bool csv = false;
  bool state = false;
  std::string axis;
  std::string values;
  bool predict_only = false;
  std::optional<double> t_com;
  std::optional<double> mode_duration;
  std::optional<int> max_modes;
  std::string backtrace;
  unsigned threads = 0;
};

int cmd_predict(const Options& o, Run& run) {
  ValidatedConfig config = load(o.config, o.overrides);
  run.set_config_digest(config.digest());
  PredictedStats s = predict_stats(config);
  run.write("predict.json", predicted_json(s, config).dump(2) + "\n");
  if (o.state) {
    const LinkConfig& c = config.get();
    HeraldOutcome h = herald(build_pre_herald_state(config), c.herald_port, c.herald_detectors, c.idler_mode_overlap);
    std::ostringstream csv;
    write_state_csv(h.conditional_memory_state, csv);
    run.write("memory_state.csv", csv.str());
  }
  std::cout << std::setprecision(6) << "V = " << s.visibility << "  C = " << s.concurrence << "  h2c = " << s.h2c
            << "  F_eff = " << s.effective_fidelity << "  herald rate = " << s.herald_rate << " Hz\n";
  return kOk;
}

int cmd_simulate(const Options& o, Run& run) {
  ValidatedConfig config = load(o.config, o.overrides);
  run.set_config_digest(config.digest());
  run.set_seed(o.seed);
  EventStream stream;
  try {
    stream = simulate(config, o.seed, o.duration, {o.threads});
  } catch (const SimulationError& e) {
    throw DataError(e.what());
  }
  write_stream(stream, run.path("events.qlnk").string());
  run.record("events.qlnk");
  if (o.csv) {
    std::ostringstream csv;
    write_stream_csv(stream, csv);
    run.write("events.csv", csv.str());
  }
  std::uint64_t heralds = 0;
  Channel port = config->herald_port == HeraldPort::plus ? Channel::herald_plus : Channel::herald_minus;
  for (const auto& r : stream.records) heralds += r.channel == port;
  std::cout << stream.records.size() << " events, " << heralds << " heralds on the " << to_string(config->herald_port)
            << " port in " << o.duration << " s\n";
  return kOk;
}

std::optional<std::array<double, 2>> backtrace_option(const Options& o, std::optional<ValidatedConfig>& config) {
  if (!o.backtrace.empty()) {
    auto v = parse_list(o.backtrace);
    if (v.size() == 1) v.push_back(v[0]);
    if (v.size() != 2) throw std::invalid_argument("--backtrace expects one or two efficiencies");
    return std::array<double, 2>{v[0], v[1]};
  }
  if (config) return signal_path_efficiency(*config);
  return std::nullopt;
}

Tomography analyze_counts(const CoincidenceResult& counts, std::uint64_t window_ps, std::uint64_t digest,
                          const Options& o, std::optional<ValidatedConfig>& config) {
  TomographyOptions topts;
  if (o.accidentals) topts.estimate.accidental_probability = accidental_probability(counts.direct, window_ps * 1e-12);
  topts.backtrace_efficiency = backtrace_option(o, config);
  topts.bootstrap_resamples = o.bootstrap;
  topts.bootstrap_seed = o.seed;
  return tomography(counts, topts, digest);
}

CoincidenceOptions coincidence_options(const Options& o) {
  CoincidenceOptions copts;
  if (o.window) copts.window_ps = static_cast<std::uint64_t>(std::llround(*o.window * 1e12));
  return copts;
}

Tomography analyze_stream(const EventStream& stream, const Options& o, std::optional<ValidatedConfig>& config,
                          CoincidenceResult& counts) {
  CoincidenceOptions copts = coincidence_options(o);
  counts = count_coincidences(stream, copts);
  return analyze_counts(counts, copts.window_ps.value_or(stream.header.coincidence_window_ps),
                        stream.header.config_digest, o, config);
}

int cmd_analyze(const Options& o, Run& run) {
  std::optional<ValidatedConfig> config;
  if (!o.config.empty()) config = load(o.config, o.overrides);
  EventStream stream;
  try {
    stream = read_stream(o.stream);
  } catch (const StreamError& e) {
    throw DataError(o.stream + ": " + e.what());
  }
  run.set_config_digest(stream.header.config_digest);
  run.set_seed(stream.header.seed);
  if (config && config->digest() != stream.header.config_digest) {
    std::cerr << "warning: stream was generated from config " << to_hex(stream.header.config_digest) << ", not "
              << config->digest_hex() << '\n';
  }
  CoincidenceResult counts;
  std::ostringstream out;
  try {
    Tomography t = analyze_stream(stream, o, config, counts);
    write_tomography_json(t, out);
    std::cout << std::setprecision(6) << "V = " << t.visibility.value << " +- " << t.visibility.error
              << "  C = " << t.concurrence.value << " +- " << t.concurrence.error;
    if (t.h2c) std::cout << "  h2c = " << t.h2c->value << " +- " << t.h2c->error;
    std::cout << "  heralds = " << t.heralds << '\n';
  } catch (const AnalysisError& e) {
    // Too little data for estimates: report the counts alone.
    counts = count_coincidences(stream);
    json j;
    j["config_digest"] = to_hex(stream.header.config_digest);
    j["error"] = e.what();
    j["counts"] = coincidence_json(counts);
    out << j.dump(2) << '\n';
    std::cout << "no estimates: " << e.what() << '\n';
  }
  run.write("tomography.json", out.str());
  run.write("coincidences.json", coincidence_json(counts).dump(2) + "\n");
  std::ostringstream fringe;
  write_fringe_csv(counts.fringe, fringe);
  run.write("fringe.csv", fringe.str());
  return kOk;
}

void set_axis(LinkConfig& c, const std::string& axis, double value) {
  if (axis == "idler_loss_db") {
    double t = db_to_transmission(value);
    c.idler_channel_a.transmission *= t;
    c.idler_channel_b.transmission *= t;
  } else if (axis == "storage_time") {
    c.memory_a.storage_time = value;
    c.memory_b.storage_time = value;
  } else {
    throw std::invalid_argument("unknown sweep axis '" + axis + "' (expected idler_loss_db or storage_time)");
  }
}

int cmd_sweep(const Options& o, Run& run) {
  LinkConfig base = load_config(o.config);
  for (const auto& ov : o.overrides) apply_override(base, ov);
  base = validate(base).get();
  run.set_config_digest(validate(base).digest());
  run.set_seed(o.seed);
  std::vector<double> values = parse_list(o.values);
  if (values.empty()) throw std::invalid_argument("--values is empty");
  if (o.axis != "idler_loss_db" && o.axis != "storage_time") set_axis(base, o.axis, 0.0);

  std::ostringstream csv;
  csv.precision(10);
  csv << o.axis << ",predicted_rate_hz,predicted_concurrence,predicted_visibility,predicted_h2c,"
      << "rate_hz,rate_err,concurrence,concurrence_err,visibility,visibility_err,h2c,h2c_err,heralds,status\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    csv << values[i];
    int fields = 1;
    try {
      LinkConfig c = base;
      set_axis(c, o.axis, values[i]);
      ValidatedConfig config = validate(c);
      PredictedStats s = predict_stats(config);
      csv << ',' << s.herald_rate << ',' << s.concurrence << ',' << s.visibility << ',' << s.h2c;
      fields = 5;
      if (o.predict_only) {
        csv << ",,,,,,,,,,ok\n";
        continue;
      }
      std::optional<ValidatedConfig> cfg = config;
      CoincidenceOptions copts = coincidence_options(o);
      CoincidenceResult counts = count_simulated(config, o.seed + i, o.duration, copts, {o.threads});
      const std::uint64_t window = copts.window_ps.value_or(StreamHeader::from_config(config).coincidence_window_ps);
      Tomography t = analyze_counts(counts, window, config.digest(), o, cfg);
      csv << ',' << t.herald_rate.value << ',' << t.herald_rate.error << ',' << t.concurrence.value << ','
          << t.concurrence.error << ',' << t.visibility.value << ',' << t.visibility.error << ','
          << (t.h2c ? t.h2c->value : NAN) << ',' << (t.h2c ? t.h2c->error : NAN) << ',' << t.heralds << ",ok\n";
    } catch (const std::exception& e) {
      std::string msg = e.what();
      for (char& ch : msg) {
        if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
      }
      std::cerr << "point " << values[i] << ": " << msg << '\n';
      csv << std::string(15 - fields, ',') << msg << '\n';
    }
  }
  run.write("sweep.csv", csv.str());
  std::cout << "wrote " << run.path("sweep.csv").string() << '\n';
  return kOk;
}

int cmd_multimode(const Options& o, Run& run) {
  EventStream stream;
  try {
    stream = read_stream(o.stream);
  } catch (const StreamError& e) {
    throw DataError(o.stream + ": " + e.what());
  }
  run.set_config_digest(stream.header.config_digest);
  run.set_seed(stream.header.seed);
  double t_com = o.t_com.value_or(stream.header.trial_length_ps * 1e-12);
  double mode = o.mode_duration.value_or(stream.header.mode_duration_ps * 1e-12);
  ModeReport report;
  try {
    EventStream tagged = assign_modes(stream, t_com, mode);
    report = rate_vs_modes(tagged, parse_mode_policy(o.policy), o.max_modes);
  } catch (const MultimodeError& e) {
    throw DataError(e.what());
  } catch (const AnalysisError& e) {
    throw DataError(e.what());
  }
  std::ostringstream csv;
  write_mode_report_csv(report, csv);
  run.write("modes.csv", csv.str());

  std::vector<double> c, e;
  for (const auto& r : report.rows) {
    c.push_back(r.concurrence);
    e.push_back(r.concurrence_error);
  }
  Compatibility comp = compatibility(c, e);
  json j;
  j["policy"] = to_string(report.policy);
  j["n_max"] = report.rows.size();
  j["rate_1_hz"] = report.rows.front().rate;
  j["slope_hz_per_mode"] = report.rate_fit.slope;
  j["intercept_hz"] = report.rate_fit.intercept;
  j["r_squared"] = report.rate_fit.r_squared;
  j["slope_over_rate_1"] = report.rate_fit.slope / report.rows.front().rate;
  j["concurrence_chi2"] = comp.chi2;
  j["concurrence_dof"] = comp.dof;
  j["concurrence_p_value"] = comp.p_value;
  run.write("modes_fit.json", j.dump(2) + "\n");
  std::cout << report.rows.size() << " modes, slope " << report.rate_fit.slope << " Hz/mode, R^2 "
            << report.rate_fit.r_squared << '\n';
  return kOk;
}

int run_command(std::vector<std::string> args);

int cmd_check(const Options& o) {
  fs::path dir = o.out;
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no manifest.json in " + dir.string());
  json m = json::parse(in);
  std::vector<std::string> args = m["args"].get<std::vector<std::string>>();

  char pattern[] = "/tmp/qlink_check_XXXXXX";
  if (!mkdtemp(pattern)) throw std::runtime_error("cannot create a temporary directory");
  fs::path scratch = pattern;
  // Re-run with the outputs redirected.
  std::vector<std::string> rerun;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out" && i + 1 < args.size()) {
      ++i;
      continue;
    }
    if (args[i].rfind("--out=", 0) == 0) continue;
    rerun.push_back(args[i]);
  }
  rerun.push_back("--out");
  rerun.push_back(scratch.string());
  fs::path here = fs::current_path();
  fs::current_path(m["cwd"].get<std::string>());
  int code = run_command(rerun);
  fs::current_path(here);
  if (code != kOk) throw CheckFailure("re-run exited with code " + std::to_string(code));

  int mismatches = 0;
  for (const auto& out : m["outputs"]) {
    std::string name = out["path"];
    std::string fresh = fs::exists(scratch / name) ? file_digest(scratch / name) : "missing";
    bool ok = fresh == out["digest"].get<std::string>() && file_digest(dir / name) == fresh;
    std::cout << (ok ? "ok       " : "MISMATCH ") << name << '\n';
    mismatches += !ok;
  }
  fs::remove_all(scratch);
  if (mismatches) throw CheckFailure(std::to_string(mismatches) + " output(s) differ from recomputation");
  return kOk;
}

int run_command(std::vector<std::string> args) {
  CLI::App app{"qlink: heralded entanglement link between two multimode memories"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;

  auto config_opts = [&](CLI::App* sub, bool required) {
    auto* opt = sub->add_option(required ? "config,--config" : "--config", o.config, "link configuration file");
    if (required) opt->required();
    sub->add_option("--set", o.overrides, "override section.key=value")->take_all();
  };
  auto out_opt = [&](CLI::App* sub) { sub->add_option("--out", o.out, "output directory")->capture_default_str(); };

  auto* predict = app.add_subcommand("predict", "analytic prediction of every figure of merit");
  config_opts(predict, true);
  out_opt(predict);
  predict->add_flag("--state", o.state, "also write the heralded memory state");

  auto* sim = app.add_subcommand("simulate", "Monte Carlo event stream");
  config_opts(sim, true);
  out_opt(sim);
  sim->add_option("--seed", o.seed)->capture_default_str();
  sim->add_option("--duration", o.duration, "wall time in s")->capture_default_str();
  sim->add_option("--threads", o.threads, "worker threads (0: all cores)");
  sim->add_flag("--csv", o.csv, "also export the stream as CSV");

  auto analysis_opts = [&](CLI::App* sub) {
    sub->add_option("--window", o.window, "coincidence window in s (default: from the stream)");
    sub->add_option("--bootstrap", o.bootstrap, "bootstrap resamples replacing first-order errors");
    sub->add_flag("--accidentals", o.accidentals, "subtract accidental readout clicks");
    sub->add_option("--backtrace", o.backtrace, "signal-path efficiency per arm, e.g. 0.16,0.16");
  };

  auto* analyze = app.add_subcommand("analyze", "tomography from an event stream");
  config_opts(analyze, false);
  out_opt(analyze);
  analyze->add_option("stream,--stream", o.stream, "event stream file")->required();
  analyze->add_option("--seed", o.seed, "bootstrap seed")->capture_default_str();
  analysis_opts(analyze);

  auto* sweep = app.add_subcommand("sweep", "predict, simulate and analyze along one axis");
  config_opts(sweep, true);
  out_opt(sweep);
  sweep->add_option("--axis", o.axis, "idler_loss_db or storage_time")->required();
  sweep->add_option("--values", o.values, "comma-separated axis values")->required();
  sweep->add_option("--seed", o.seed, "seed of the first point; point i uses seed + i")->capture_default_str();
  sweep->add_option("--duration", o.duration, "wall time per point in s")->capture_default_str();
  sweep->add_option("--threads", o.threads);
  sweep->add_flag("--predict-only", o.predict_only);
  analysis_opts(sweep);

  auto* mm = app.add_subcommand("multimode", "herald rate and concurrence against the number of modes");
  out_opt(mm);
  mm->add_option("stream,--stream", o.stream, "event stream file")->required();
  mm->add_option("--t-com", o.t_com, "communication time in s (default: from the stream)");
  mm->add_option("--mode-duration", o.mode_duration, "mode duration in s (default: from the stream)");
  mm->add_option("--max-modes", o.max_modes);
  mm->add_option("--policy", o.policy, "first or all")->capture_default_str();

  auto* check = app.add_subcommand("check", "re-run the command recorded in <out>/manifest.json and compare outputs");
  out_opt(check);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    if (sub == check) return cmd_check(o);
    Run run(sub->get_name(), args, o.out);
    int code = kOk;
    if (sub == predict) code = cmd_predict(o, run);
    if (sub == sim) code = cmd_simulate(o, run);
    if (sub == analyze) code = cmd_analyze(o, run);
    if (sub == sweep) code = cmd_sweep(o, run);
    if (sub == mm) code = cmd_multimode(o, run);
    run.finish();
    return code;
  } catch (const ConfigError& e) {
    for (const auto& v : e.violations()) std::cerr << "config error: " << v << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const CheckFailure& e) {
    std::cerr << "check failed: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const ModelError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kError;
  }
}

}  // namespace

int main(int argc, char** argv) { return run_command(std::vector<std::string>(argv + 1, argv + argc)); }
