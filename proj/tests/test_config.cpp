#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "qlink/config.hpp"

using namespace qlink;

namespace {

std::string config_path(const std::string& name) { return std::string(QLINK_CONFIG_DIR) + "/" + name; }

bool mentions(const ConfigError& e, const std::string& needle) {
  for (const auto& v : e.violations()) {
    if (v.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST(Config, DecibelToLinear) {
  EXPECT_NEAR(db_to_transmission(6.5), std::pow(10.0, -0.65), 1e-15);
  EXPECT_NEAR(db_to_transmission(6.5), 0.2239, 1e-4);
  EXPECT_DOUBLE_EQ(db_to_transmission(0.0), 1.0);
}

TEST(Config, DecibelRoundTrip) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 60.0);
  for (int i = 0; i < 1000; ++i) {
    double db = u(rng);
    EXPECT_NEAR(transmission_to_db(db_to_transmission(db)), db, 1e-12 * std::max(db, 1.0));
    double t = db_to_transmission(db);
    EXPECT_NEAR(db_to_transmission(transmission_to_db(t)), t, 1e-12 * t);
  }
}

TEST(Config, LossDbTakesPrecedence) {
  LinkConfig c;
  c.source_a.mean_pair_probability_per_mode = 0.01;
  apply_override(c, "idler_channel_a.transmission_db=6.5");
  ValidatedConfig v = validate(c);
  EXPECT_NEAR(v->idler_channel_a.transmission, 0.22387211385683395, 1e-12);
  EXPECT_FALSE(v->idler_channel_a.loss_db.has_value());
}

TEST(Config, CombPeriodFromStorageTime) {
  LinkConfig c;
  c.memory_a.storage_time = c.memory_b.storage_time = 2e-6;
  ValidatedConfig v = validate(c);
  EXPECT_NEAR(v->memory_a.comb_period, 500e3, 1e-6);
}

TEST(Config, DutyCycleOutOfRange) {
  LinkConfig c;
  c.timing.duty_cycle = 1.3;
  try {
    validate(c);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_TRUE(mentions(e, "duty_cycle out of range"));
  }
}

TEST(Config, ListsEveryViolation) {
  LinkConfig c;
  c.timing.duty_cycle = 1.3;
  c.source_a.mean_pair_probability_per_mode = -0.1;
  c.readout_detectors[1].efficiency = 2.0;
  try {
    validate(c);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.violations().size(), 3u);
    EXPECT_TRUE(mentions(e, "source_a.mean_pair_probability_per_mode"));
    EXPECT_TRUE(mentions(e, "readout_detector_2.efficiency"));
  }
}

TEST(Config, MismatchedStorageTimes) {
  LinkConfig c;
  c.memory_b.storage_time = 3e-6;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Config, LockAndMeasurePeriods) {
  LinkConfig c;
  apply_override(c, "timing.lock_period=0.01");
  apply_override(c, "timing.measure_period=0.01");
  ValidatedConfig v = validate(c);
  EXPECT_NEAR(v->timing.cycle_period, 0.02, 1e-15);
  EXPECT_NEAR(v->timing.duty_cycle, 0.5, 1e-15);
}

TEST(Config, ModesPerTrial) {
  LinkConfig c;
  c.timing.communication_time = 25e-6;
  c.timing.mode_duration = 400e-9;
  EXPECT_EQ(validate(c)->timing.modes_per_trial(), 62);
  c.timing.communication_time = 0.0;
  EXPECT_EQ(validate(c)->timing.modes_per_trial(), 1);
}

TEST(Config, EfficiencyTableInterpolates) {
  MemoryParams m;
  m.efficiency_table = {{2e-6, 0.1}, {4e-6, 0.05}};
  EXPECT_NEAR(m.efficiency_at(2e-6), 0.1, 1e-15);
  EXPECT_NEAR(m.efficiency_at(3e-6), 0.075, 1e-12);
  m.efficiency_table.clear();
  m.efficiency = 0.3;
  EXPECT_DOUBLE_EQ(m.efficiency_at(1e-5), 0.3);
  m.efficiency.reset();
  m.efficiency0 = 0.5;
  m.decay_time = 1e-5;
  EXPECT_NEAR(m.efficiency_at(1e-5), 0.5 * std::exp(-1.0), 1e-15);
}

TEST(Config, SerializeRoundTrip) {
  LinkConfig c = load_config(config_path("fig2.cfg"));
  std::string text = serialize_config(c);
  std::istringstream in(text);
  LinkConfig back = parse_config(in);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(validate(back).digest(), validate(c).digest());
}

TEST(Config, DigestTracksContent) {
  LinkConfig c = load_config(config_path("fig2.cfg"));
  auto d0 = validate(c).digest();
  c.timing.lock_residual += 1e-3;
  EXPECT_NE(validate(c).digest(), d0);
}

TEST(Config, ShippedConfigsValidate) {
  for (const char* name : {"fig2.cfg", "fig3a.cfg", "fig3b.cfg", "fig4.cfg"}) {
    EXPECT_NO_THROW(validate(load_config(config_path(name)))) << name;
  }
}

TEST(Config, MissingFileNamesPath) {
  try {
    load_config("/nonexistent/link.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_TRUE(mentions(e, "/nonexistent/link.cfg"));
  }
}

TEST(Config, UnknownKeyRejected) {
  std::istringstream in("[source_a]\nbogus = 1\n");
  EXPECT_THROW(parse_config(in), ConfigError);
  LinkConfig c;
  EXPECT_THROW(apply_override(c, "timing.nonsense=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "no_equals_sign"), ConfigError);
}

TEST(Config, ParsesComments) {
  std::istringstream in("# comment\n[source_a]\n; another\nmean_pair_probability_per_mode = 0.02\n");
  LinkConfig c = parse_config(in);
  EXPECT_DOUBLE_EQ(c.source_a.mean_pair_probability_per_mode, 0.02);
}

TEST(Config, HeraldPortParsing) {
  EXPECT_EQ(parse_herald_port("minus"), HeraldPort::minus);
  EXPECT_THROW(parse_herald_port("left"), ConfigError);
}
