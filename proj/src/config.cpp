#include "qlink/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace qlink {

namespace {

double interpolate(const std::vector<TablePoint>& table, double tau) {
  if (tau <= table.front().storage_time) return table.front().value;
  if (tau >= table.back().storage_time) return table.back().value;
  auto hi = std::upper_bound(table.begin(), table.end(), tau,
                             [](double t, const TablePoint& p) { return t < p.storage_time; });
  auto lo = hi - 1;
  double f = (tau - lo->storage_time) / (hi->storage_time - lo->storage_time);
  return lo->value + f * (hi->value - lo->value);
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double parse_number(std::string_view key, std::string_view text) {
  std::string t = trim(text);
  try {
    std::size_t used = 0;
    double v = std::stod(t, &used);
    if (used == t.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError({std::string(key) + ": expected a number, got '" + t + "'"});
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::vector<double> parse_list(std::string_view key, std::string_view text) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  for (const auto& item : split(text, ',')) out.push_back(parse_number(key, item));
  return out;
}

std::vector<TablePoint> parse_table(std::string_view key, std::string_view text) {
  std::vector<TablePoint> out;
  if (trim(text).empty()) return out;
  for (const auto& item : split(text, ',')) {
    auto parts = split(item, ':');
    if (parts.size() != 2) {
      throw ConfigError({std::string(key) + ": table entries must be storage_time:value"});
    }
    out.push_back({parse_number(key, parts[0]), parse_number(key, parts[1])});
  }
  return out;
}

std::string format_list(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += format_number(values[i]);
  }
  return out;
}

std::string format_table(const std::vector<TablePoint>& table) {
  std::string out;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (i) out += ", ";
    out += format_number(table[i].storage_time) + ":" + format_number(table[i].value);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::optional<std::string>(const LinkConfig&)> get;
  std::function<void(LinkConfig&, std::string_view)> set;
};

template <class Access>
Field number(std::string key, Access access) {
  return {key,
          [access](const LinkConfig& c) -> std::optional<std::string> {
            return format_number(access(const_cast<LinkConfig&>(c)));
          },
          [access, key](LinkConfig& c, std::string_view v) { access(c) = parse_number(key, v); }};
}

template <class Access>
Field optional_number(std::string key, Access access) {
  return {key,
          [access](const LinkConfig& c) -> std::optional<std::string> {
            const std::optional<double>& v = access(const_cast<LinkConfig&>(c));
            if (!v) return std::nullopt;
            return format_number(*v);
          },
          [access, key](LinkConfig& c, std::string_view v) { access(c) = parse_number(key, v); }};
}

template <class Access>
Field table(std::string key, Access access) {
  return {key,
          [access](const LinkConfig& c) -> std::optional<std::string> {
            const auto& t = access(const_cast<LinkConfig&>(c));
            if (t.empty()) return std::nullopt;
            return format_table(t);
          },
          [access, key](LinkConfig& c, std::string_view v) { access(c) = parse_table(key, v); }};
}

void add_source(std::vector<Field>& f, const std::string& s, SourceParams& (*sec)(LinkConfig&)) {
  f.push_back(number(s + ".mean_pair_probability_per_mode",
                     [sec](LinkConfig& c) -> double& { return sec(c).mean_pair_probability_per_mode; }));
  f.push_back(number(s + ".biphoton_bandwidth",
                     [sec](LinkConfig& c) -> double& { return sec(c).biphoton_bandwidth; }));
  f.push_back(number(s + ".signal_wavelength",
                     [sec](LinkConfig& c) -> double& { return sec(c).signal_wavelength; }));
  f.push_back(number(s + ".idler_wavelength",
                     [sec](LinkConfig& c) -> double& { return sec(c).idler_wavelength; }));
  std::string key = s + ".statistics";
  f.push_back({key,
               [sec](const LinkConfig& c) -> std::optional<std::string> {
                 return sec(const_cast<LinkConfig&>(c)).statistics == PairStatistics::thermal
                            ? "thermal"
                            : "poissonian";
               },
               [sec, key](LinkConfig& c, std::string_view v) {
                 std::string t = trim(v);
                 if (t == "thermal") {
                   sec(c).statistics = PairStatistics::thermal;
                 } else if (t == "poissonian") {
                   sec(c).statistics = PairStatistics::poissonian;
                 } else {
                   throw ConfigError({key + ": expected thermal or poissonian"});
                 }
               }});
}

void add_channel(std::vector<Field>& f, const std::string& s, ChannelParams& (*sec)(LinkConfig&)) {
  f.push_back(number(s + ".transmission", [sec](LinkConfig& c) -> double& { return sec(c).transmission; }));
  f.push_back(optional_number(s + ".transmission_db",
                              [sec](LinkConfig& c) -> std::optional<double>& { return sec(c).loss_db; }));
  f.push_back(number(s + ".static_phase", [sec](LinkConfig& c) -> double& { return sec(c).static_phase; }));
  f.push_back(
      number(s + ".phase_diffusion", [sec](LinkConfig& c) -> double& { return sec(c).phase_diffusion; }));
  f.push_back(number(s + ".propagation_delay",
                     [sec](LinkConfig& c) -> double& { return sec(c).propagation_delay; }));
}

void add_memory(std::vector<Field>& f, const std::string& s, MemoryParams& (*sec)(LinkConfig&)) {
  f.push_back(number(s + ".storage_time", [sec](LinkConfig& c) -> double& { return sec(c).storage_time; }));
  f.push_back(optional_number(s + ".efficiency",
                              [sec](LinkConfig& c) -> std::optional<double>& { return sec(c).efficiency; }));
  f.push_back(number(s + ".efficiency0", [sec](LinkConfig& c) -> double& { return sec(c).efficiency0; }));
  f.push_back(number(s + ".decay_time", [sec](LinkConfig& c) -> double& { return sec(c).decay_time; }));
  f.push_back(table(s + ".efficiency_table",
                    [sec](LinkConfig& c) -> std::vector<TablePoint>& { return sec(c).efficiency_table; }));
  f.push_back(number(s + ".echo_center_offset",
                     [sec](LinkConfig& c) -> double& { return sec(c).echo_center_offset; }));
  f.push_back(table(s + ".echo_offset_table",
                    [sec](LinkConfig& c) -> std::vector<TablePoint>& { return sec(c).echo_offset_table; }));
  f.push_back(number(s + ".echo_rms_width", [sec](LinkConfig& c) -> double& { return sec(c).echo_rms_width; }));
}

void add_detector(std::vector<Field>& f, const std::string& s, DetectorParams& (*sec)(LinkConfig&)) {
  f.push_back(number(s + ".efficiency", [sec](LinkConfig& c) -> double& { return sec(c).efficiency; }));
  f.push_back(number(s + ".dark_click_probability",
                     [sec](LinkConfig& c) -> double& { return sec(c).dark_click_probability; }));
  f.push_back(number(s + ".dead_time", [sec](LinkConfig& c) -> double& { return sec(c).dead_time; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    add_source(f, "source_a", [](LinkConfig& c) -> SourceParams& { return c.source_a; });
    add_source(f, "source_b", [](LinkConfig& c) -> SourceParams& { return c.source_b; });
    add_channel(f, "idler_channel_a", [](LinkConfig& c) -> ChannelParams& { return c.idler_channel_a; });
    add_channel(f, "idler_channel_b", [](LinkConfig& c) -> ChannelParams& { return c.idler_channel_b; });
    add_channel(f, "signal_channel_a", [](LinkConfig& c) -> ChannelParams& { return c.signal_channel_a; });
    add_channel(f, "signal_channel_b", [](LinkConfig& c) -> ChannelParams& { return c.signal_channel_b; });
    add_memory(f, "memory_a", [](LinkConfig& c) -> MemoryParams& { return c.memory_a; });
    add_memory(f, "memory_b", [](LinkConfig& c) -> MemoryParams& { return c.memory_b; });
    add_detector(f, "herald_detector_plus",
                 [](LinkConfig& c) -> DetectorParams& { return c.herald_detectors[0]; });
    add_detector(f, "herald_detector_minus",
                 [](LinkConfig& c) -> DetectorParams& { return c.herald_detectors[1]; });
    add_detector(f, "readout_detector_1",
                 [](LinkConfig& c) -> DetectorParams& { return c.readout_detectors[0]; });
    add_detector(f, "readout_detector_2",
                 [](LinkConfig& c) -> DetectorParams& { return c.readout_detectors[1]; });

    f.push_back(number("timing.mode_duration", [](LinkConfig& c) -> double& { return c.timing.mode_duration; }));
    f.push_back(number("timing.coincidence_window",
                       [](LinkConfig& c) -> double& { return c.timing.coincidence_window; }));
    f.push_back(number("timing.duty_cycle", [](LinkConfig& c) -> double& { return c.timing.duty_cycle; }));
    f.push_back(number("timing.cycle_period", [](LinkConfig& c) -> double& { return c.timing.cycle_period; }));
    f.push_back(number("timing.lock_residual", [](LinkConfig& c) -> double& { return c.timing.lock_residual; }));
    f.push_back(number("timing.communication_time",
                       [](LinkConfig& c) -> double& { return c.timing.communication_time; }));
    f.push_back(optional_number("timing.lock_period", [](LinkConfig& c) -> std::optional<double>& {
      return c.timing.lock_period_input;
    }));
    f.push_back(optional_number("timing.measure_period", [](LinkConfig& c) -> std::optional<double>& {
      return c.timing.measure_period_input;
    }));

    f.push_back(number("link.idler_mode_overlap", [](LinkConfig& c) -> double& { return c.idler_mode_overlap; }));
    f.push_back({"link.herald_port",
                 [](const LinkConfig& c) -> std::optional<std::string> { return to_string(c.herald_port); },
                 [](LinkConfig& c, std::string_view v) { c.herald_port = parse_herald_port(trim(v)); }});
    f.push_back({"link.truncation",
                 [](const LinkConfig& c) -> std::optional<std::string> { return std::to_string(c.truncation); },
                 [](LinkConfig& c, std::string_view v) {
                   double n = parse_number("link.truncation", v);
                   if (n != std::floor(n)) throw ConfigError({"link.truncation: expected an integer"});
                   c.truncation = static_cast<int>(n);
                 }});
    f.push_back({"readout.direct_weight",
                 [](const LinkConfig& c) -> std::optional<std::string> {
                   return std::to_string(c.readout.direct_weight);
                 },
                 [](LinkConfig& c, std::string_view v) {
                   double n = parse_number("readout.direct_weight", v);
                   if (n != std::floor(n)) throw ConfigError({"readout.direct_weight: expected an integer"});
                   c.readout.direct_weight = static_cast<int>(n);
                 }});
    f.push_back({"readout.fringe_phases",
                 [](const LinkConfig& c) -> std::optional<std::string> {
                   return format_list(c.readout.fringe_phases);
                 },
                 [](LinkConfig& c, std::string_view v) {
                   c.readout.fringe_phases = parse_list("readout.fringe_phases", v);
                 }});
    return f;
  }();
  return all;
}

const Field* find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

void check_unit(std::vector<std::string>& errs, const std::string& path, double v) {
  if (!(v >= 0.0 && v <= 1.0)) errs.push_back(path + " out of range [0, 1]");
}

void check_table(std::vector<std::string>& errs, const std::string& path,
                 const std::vector<TablePoint>& t, bool unit_values) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(t[i].storage_time > 0.0)) errs.push_back(path + " storage times must be positive");
    if (i > 0 && !(t[i].storage_time > t[i - 1].storage_time)) {
      errs.push_back(path + " storage times must be strictly increasing");
    }
    if (unit_values) check_unit(errs, path + " value", t[i].value);
    if (!std::isfinite(t[i].value)) errs.push_back(path + " values must be finite");
  }
}

}  // namespace

double MemoryParams::efficiency_at(double tau) const {
  if (!efficiency_table.empty()) return interpolate(efficiency_table, tau);
  if (efficiency) return *efficiency;
  return efficiency0 * std::exp(-tau / decay_time);
}

double MemoryParams::echo_offset_at(double tau) const {
  if (!echo_offset_table.empty()) return interpolate(echo_offset_table, tau);
  return echo_center_offset;
}

int TimingConfig::modes_per_trial() const {
  // Guard against 25e-6 / 400e-9 landing a hair under an integer.
  return static_cast<int>(std::floor(trial_length() / mode_duration * (1.0 + 1e-12)));
}

LinkConfig::LinkConfig() {
  for (int k = 0; k < 8; ++k) readout.fringe_phases.push_back(k * std::numbers::pi / 4.0);
}

ConfigError::ConfigError(std::vector<std::string> violations)
    : std::runtime_error([&] {
        std::string msg = "invalid configuration:";
        for (const auto& v : violations) msg += "\n  " + v;
        return msg;
      }()),
      violations_(std::move(violations)) {}

std::string ValidatedConfig::digest_hex() const { return to_hex(digest_); }

double db_to_transmission(double loss_db) { return std::pow(10.0, -loss_db / 10.0); }

double transmission_to_db(double transmission) { return -10.0 * std::log10(transmission); }

ValidatedConfig validate(const LinkConfig& input) {
  LinkConfig c = input;
  std::vector<std::string> errs;

  auto source = [&](const std::string& p, const SourceParams& s) {
    if (!(s.mean_pair_probability_per_mode >= 0.0 && s.mean_pair_probability_per_mode < 1.0)) {
      errs.push_back(p + ".mean_pair_probability_per_mode out of range [0, 1)");
    }
    if (!(s.biphoton_bandwidth > 0.0)) errs.push_back(p + ".biphoton_bandwidth must be positive");
  };
  source("source_a", c.source_a);
  source("source_b", c.source_b);

  auto channel = [&](const std::string& p, ChannelParams& ch) {
    if (ch.loss_db) {
      if (!(*ch.loss_db >= 0.0) || !std::isfinite(*ch.loss_db)) {
        errs.push_back(p + ".transmission_db must be a finite non-negative loss");
      } else {
        ch.transmission = db_to_transmission(*ch.loss_db);
      }
      ch.loss_db.reset();
    }
    check_unit(errs, p + ".transmission", ch.transmission);
    if (!std::isfinite(ch.static_phase)) errs.push_back(p + ".static_phase must be finite");
    if (!(ch.phase_diffusion >= 0.0)) errs.push_back(p + ".phase_diffusion must be non-negative");
    if (!(ch.propagation_delay >= 0.0)) errs.push_back(p + ".propagation_delay must be non-negative");
  };
  channel("idler_channel_a", c.idler_channel_a);
  channel("idler_channel_b", c.idler_channel_b);
  channel("signal_channel_a", c.signal_channel_a);
  channel("signal_channel_b", c.signal_channel_b);

  auto memory = [&](const std::string& p, MemoryParams& m) {
    if (!(m.storage_time > 0.0) || !std::isfinite(m.storage_time)) {
      errs.push_back(p + ".storage_time must be positive");
      return;
    }
    m.comb_period = 1.0 / m.storage_time;
    if (m.efficiency) check_unit(errs, p + ".efficiency", *m.efficiency);
    check_unit(errs, p + ".efficiency0", m.efficiency0);
    if (!(m.decay_time > 0.0)) errs.push_back(p + ".decay_time must be positive");
    check_table(errs, p + ".efficiency_table", m.efficiency_table, true);
    check_table(errs, p + ".echo_offset_table", m.echo_offset_table, false);
    if (!(m.echo_rms_width > 0.0)) errs.push_back(p + ".echo_rms_width must be positive");
    if (!std::isfinite(m.echo_center_offset)) errs.push_back(p + ".echo_center_offset must be finite");
  };
  memory("memory_a", c.memory_a);
  memory("memory_b", c.memory_b);
  if (c.memory_a.storage_time > 0.0 && c.memory_b.storage_time > 0.0 &&
      std::abs(c.memory_a.storage_time - c.memory_b.storage_time) >
          1e-12 * c.memory_a.storage_time) {
    errs.push_back("memory_b.storage_time must equal memory_a.storage_time");
  }

  auto detector = [&](const std::string& p, const DetectorParams& d) {
    check_unit(errs, p + ".efficiency", d.efficiency);
    check_unit(errs, p + ".dark_click_probability", d.dark_click_probability);
    if (!(d.dead_time >= 0.0)) errs.push_back(p + ".dead_time must be non-negative");
  };
  detector("herald_detector_plus", c.herald_detectors[0]);
  detector("herald_detector_minus", c.herald_detectors[1]);
  detector("readout_detector_1", c.readout_detectors[0]);
  detector("readout_detector_2", c.readout_detectors[1]);

  TimingConfig& t = c.timing;
  if (t.lock_period_input || t.measure_period_input) {
    if (!t.lock_period_input || !t.measure_period_input) {
      errs.push_back("timing.lock_period and timing.measure_period must be given together");
    } else if (!(*t.lock_period_input >= 0.0) || !(*t.measure_period_input > 0.0)) {
      errs.push_back("timing.lock_period must be non-negative and timing.measure_period positive");
    } else {
      t.cycle_period = *t.lock_period_input + *t.measure_period_input;
      t.duty_cycle = *t.measure_period_input / t.cycle_period;
    }
    t.lock_period_input.reset();
    t.measure_period_input.reset();
  }
  if (!(t.mode_duration > 0.0)) errs.push_back("timing.mode_duration must be positive");
  if (!(t.coincidence_window > 0.0)) errs.push_back("timing.coincidence_window must be positive");
  if (!(t.duty_cycle > 0.0 && t.duty_cycle <= 1.0)) errs.push_back("timing.duty_cycle out of range");
  if (!(t.cycle_period > 0.0) || !std::isfinite(t.cycle_period)) {
    errs.push_back("timing.cycle_period must be positive");
  }
  if (!(t.lock_residual >= 0.0)) errs.push_back("timing.lock_residual must be non-negative");
  if (!(t.communication_time >= 0.0)) errs.push_back("timing.communication_time must be non-negative");
  if (t.mode_duration > 0.0 && t.modes_per_trial() < 1) {
    errs.push_back("timing.mode_duration must not exceed timing.communication_time");
  }

  check_unit(errs, "link.idler_mode_overlap", c.idler_mode_overlap);
  if (c.truncation < 1 || c.truncation > 6) errs.push_back("link.truncation out of range [1, 6]");
  if (c.readout.direct_weight < 0) errs.push_back("readout.direct_weight must be non-negative");
  if (c.readout.direct_weight == 0 && c.readout.fringe_phases.empty()) {
    errs.push_back("readout plan is empty: set readout.direct_weight or readout.fringe_phases");
  }
  for (double ph : c.readout.fringe_phases) {
    if (!std::isfinite(ph)) errs.push_back("readout.fringe_phases must be finite");
  }

  if (!errs.empty()) throw ConfigError(std::move(errs));
  std::uint64_t digest = fnv1a64(serialize_config(c));
  return ValidatedConfig(std::move(c), digest);
}

LinkConfig parse_config(std::istream& in, std::string_view source_name) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError({std::string(source_name) + ":" + std::to_string(e.line()) + ": " + e.message()});
  }
  LinkConfig config;
  std::vector<std::string> errs;
  for (const auto& [section, keys] : tree) {
    if (keys.empty()) {
      errs.push_back(std::string(source_name) + ": key '" + section + "' outside of a section");
      continue;
    }
    for (const auto& [key, node] : keys) {
      try {
        apply_override(config, section + "." + key, node.data());
      } catch (const ConfigError& e) {
        for (const auto& v : e.violations()) errs.push_back(std::string(source_name) + ": " + v);
      }
    }
  }
  if (!errs.empty()) throw ConfigError(std::move(errs));
  return config;
}

LinkConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open configuration file '" + path + "'"});
  return parse_config(in, path);
}

void apply_override(LinkConfig& config, std::string_view key, std::string_view value) {
  const Field* f = find_field(trim(key));
  if (!f) throw ConfigError({"unknown configuration key '" + trim(key) + "'"});
  f->set(config, value);
}

void apply_override(LinkConfig& config, std::string_view assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError({"override '" + std::string(assignment) + "' is not of the form key=value"});
  }
  apply_override(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::string serialize_config(const LinkConfig& config) {
  std::ostringstream out;
  std::string current;
  for (const auto& f : fields()) {
    auto value = f.get(config);
    if (!value) continue;
    auto dot = f.key.find('.');
    std::string section = f.key.substr(0, dot);
    if (section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << section << "]\n";
      current = section;
    }
    out << f.key.substr(dot + 1) << " = " << *value << '\n';
  }
  return out.str();
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

const char* to_string(HeraldPort port) { return port == HeraldPort::plus ? "plus" : "minus"; }

HeraldPort parse_herald_port(std::string_view text) {
  if (text == "plus") return HeraldPort::plus;
  if (text == "minus") return HeraldPort::minus;
  throw ConfigError({"herald port must be plus or minus, got '" + std::string(text) + "'"});
}

}  // namespace qlink
