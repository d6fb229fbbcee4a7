#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>
#include <sys/wait.h>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string config_path(const std::string& name) { return std::string(QLINK_CONFIG_DIR) + "/" + name; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    char pattern[] = "/tmp/qlink_test_XXXXXX";
    ASSERT_NE(mkdtemp(pattern), nullptr);
    dir_ = pattern;
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the tool with stdout and stderr captured in `output_`.
  int run(const std::string& args) {
    fs::path log = dir_ / "log.txt";
    std::string cmd = std::string(QLINK_CLI) + " " + args + " > " + log.string() + " 2>&1";
    int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream s;
    s << in.rdbuf();
    output_ = s.str();
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string out(const std::string& name) const { return (dir_ / name).string(); }

  static json read_json(const std::string& path) {
    std::ifstream in(path);
    return json::parse(in);
  }

  static std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }

  static std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::stringstream s(line);
      std::string cell;
      while (std::getline(s, cell, ',')) cells.push_back(cell);
      rows.push_back(cells);
    }
    return rows;
  }

  fs::path dir_;
  std::string output_;
};

}  // namespace

TEST_F(Cli, PredictFig2) {
  ASSERT_EQ(run("predict " + config_path("fig2.cfg") + " --out " + out("p")), 0) << output_;
  json j = read_json(out("p/predict.json"));
  EXPECT_NEAR(j["visibility"].get<double>(), 0.84, 0.02);
  EXPECT_NEAR(j["herald_rate_hz"].get<double>(), 1430, 1);
  json m = read_json(out("p/manifest.json"));
  EXPECT_EQ(m["command"], "predict");
  EXPECT_EQ(m["config_digest"], j["config_digest"]);
  EXPECT_EQ(m["outputs"][0]["path"], "predict.json");
}

TEST_F(Cli, PredictOverride) {
  ASSERT_EQ(run("predict " + config_path("fig2.cfg") + " --out " + out("a")), 0) << output_;
  ASSERT_EQ(run("predict --config " + config_path("fig2.cfg") +
                " --set idler_channel_a.transmission_db=6.5 --set idler_channel_b.transmission_db=6.5 --out " +
                out("b")),
            0)
      << output_;
  json a = read_json(out("a/predict.json")), b = read_json(out("b/predict.json"));
  EXPECT_NE(a["config_digest"], b["config_digest"]);
  EXPECT_NE(a["herald_rate_hz"], b["herald_rate_hz"]);
}

TEST_F(Cli, MissingConfigIsExit2) {
  EXPECT_EQ(run("predict " + out("nope.cfg") + " --out " + out("p")), 2);
  EXPECT_NE(output_.find(out("nope.cfg")), std::string::npos) << output_;
}

TEST_F(Cli, InvalidOverrideIsExit2) {
  EXPECT_EQ(run("predict " + config_path("fig2.cfg") + " --set timing.duty_cycle=1.5 --out " + out("p")), 2);
  EXPECT_NE(output_.find("duty_cycle"), std::string::npos) << output_;
}

TEST_F(Cli, SimulateZeroDurationIsError) {
  EXPECT_NE(run("simulate " + config_path("fig2.cfg") + " --duration 0 --out " + out("s")), 0);
}

TEST_F(Cli, SimulateIsDeterministic) {
  for (const char* d : {"a", "b"}) {
    ASSERT_EQ(run("simulate " + config_path("fig2.cfg") + " --seed 5 --duration 2 --out " + out(d)), 0) << output_;
  }
  json a = read_json(out("a/manifest.json")), b = read_json(out("b/manifest.json"));
  EXPECT_EQ(a["outputs"][0]["digest"], b["outputs"][0]["digest"]);
  EXPECT_EQ(read_file(out("a/events.qlnk")), read_file(out("b/events.qlnk")));
  EXPECT_EQ(a["seed"], 5);
}

TEST_F(Cli, SimulateAnalyzeRoundTrip) {
  ASSERT_EQ(run("predict " + config_path("fig2.cfg") + " --out " + out("p")), 0) << output_;
  ASSERT_EQ(run("simulate " + config_path("fig2.cfg") + " --seed 3 --duration 600 --out " + out("s")), 0) << output_;
  ASSERT_EQ(run("analyze " + out("s/events.qlnk") + " --config " + config_path("fig2.cfg") + " --out " + out("a")), 0)
      << output_;
  json p = read_json(out("p/predict.json"));
  json t = read_json(out("a/tomography.json"));
  auto within = [&](const json& m, double predicted) {
    double v = m["value"].get<double>(), e = m["error"].get<double>();
    EXPECT_NEAR(v, predicted, 3 * e);
  };
  within(t["visibility"], p["visibility"].get<double>());
  within(t["concurrence"], p["concurrence"].get<double>());
  within(t["herald_rate_hz"], p["herald_rate_hz"].get<double>());
  within(t["probabilities"]["p01"], p["probabilities"]["p01"].get<double>());
  within(t["probabilities"]["p10"], p["probabilities"]["p10"].get<double>());
  EXPECT_TRUE(fs::exists(out("a/fringe.csv")));
  EXPECT_TRUE(fs::exists(out("a/coincidences.json")));
}

TEST_F(Cli, AnalyzeEmptyStreamGivesZeroStats) {
  ASSERT_EQ(run("simulate " + config_path("fig2.cfg") +
                " --set source_a.mean_pair_probability_per_mode=0 --set source_b.mean_pair_probability_per_mode=0"
                " --set herald_detector_plus.dark_click_probability=0"
                " --set herald_detector_minus.dark_click_probability=0"
                " --set readout_detector_1.dark_click_probability=0"
                " --set readout_detector_2.dark_click_probability=0 --duration 1 --out " +
                out("s")),
            0)
      << output_;
  ASSERT_EQ(run("analyze " + out("s/events.qlnk") + " --out " + out("a")), 0) << output_;
  json c = read_json(out("a/coincidences.json"));
  EXPECT_EQ(c["herald_count"], 0);
  json t = read_json(out("a/tomography.json"));
  EXPECT_TRUE(t.contains("error"));
}

TEST_F(Cli, CorruptedStreamIsExit3) {
  ASSERT_EQ(run("simulate " + config_path("fig2.cfg") + " --duration 1 --out " + out("s")), 0) << output_;
  std::string bytes = read_file(out("s/events.qlnk"));
  std::ofstream(out("bad.qlnk"), std::ios::binary) << bytes.substr(0, bytes.size() / 2 + 3);
  EXPECT_EQ(run("analyze " + out("bad.qlnk") + " --out " + out("a")), 3);
  EXPECT_NE(output_.find("unexpected end of stream"), std::string::npos) << output_;
  EXPECT_EQ(run("analyze " + out("missing.qlnk") + " --out " + out("a")), 3);
}

TEST_F(Cli, LossSweep) {
  ASSERT_EQ(run("sweep " + config_path("fig3a.cfg") + " --axis idler_loss_db --values 0,6.5 --duration 300 --out " +
                out("w")),
            0)
      << output_;
  auto rows = read_csv(out("w/sweep.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0][0], "idler_loss_db");
  EXPECT_EQ(rows[0][5], "rate_hz");
  double r0 = std::stod(rows[1][5]), e0 = std::stod(rows[1][6]);
  double r1 = std::stod(rows[2][5]), e1 = std::stod(rows[2][6]);
  double ratio = r1 / r0;
  double err = ratio * std::hypot(e0 / r0, e1 / r1);
  EXPECT_NEAR(ratio, std::pow(10.0, -0.65), 3 * err);
  double c0 = std::stod(rows[1][7]), ce0 = std::stod(rows[1][8]);
  double c1 = std::stod(rows[2][7]), ce1 = std::stod(rows[2][8]);
  EXPECT_NEAR(c0, c1, 3 * std::hypot(ce0, ce1));
  EXPECT_EQ(rows[1].back(), "ok");
}

TEST_F(Cli, StorageSweepEndpointSignificant) {
  ASSERT_EQ(run("sweep " + config_path("fig3b.cfg") + " --axis storage_time --values 25e-6 --duration 5000 --out " +
                out("w")),
            0)
      << output_;
  auto rows = read_csv(out("w/sweep.csv"));
  ASSERT_EQ(rows.size(), 2u);
  double c = std::stod(rows[1][7]), e = std::stod(rows[1][8]);
  EXPECT_GT(c, 5 * e) << c << " +- " << e;
}

TEST_F(Cli, SweepRecordsFailedPoints) {
  ASSERT_EQ(run("sweep " + config_path("fig3a.cfg") + " --axis storage_time --values -1,2e-6 --predict-only --out " +
                out("w")),
            0)
      << output_;
  auto rows = read_csv(out("w/sweep.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_NE(rows[1].back(), "ok");
  EXPECT_EQ(rows[2].back(), "ok");
}

TEST_F(Cli, SinglePointSweepMatchesPredictAndAnalyze) {
  ASSERT_EQ(run("sweep " + config_path("fig2.cfg") + " --axis idler_loss_db --values 0 --seed 9 --duration 30 --out " +
                out("w")),
            0)
      << output_;
  ASSERT_EQ(run("simulate " + config_path("fig2.cfg") + " --seed 9 --duration 30 --out " + out("s")), 0) << output_;
  ASSERT_EQ(run("analyze " + out("s/events.qlnk") + " --out " + out("a")), 0) << output_;
  ASSERT_EQ(run("predict " + config_path("fig2.cfg") + " --out " + out("p")), 0) << output_;
  auto rows = read_csv(out("w/sweep.csv"));
  json t = read_json(out("a/tomography.json"));
  json p = read_json(out("p/predict.json"));
  EXPECT_NEAR(std::stod(rows[1][1]), p["herald_rate_hz"].get<double>(), 1e-6);
  EXPECT_NEAR(std::stod(rows[1][5]), t["herald_rate_hz"]["value"].get<double>(), 1e-6);
  EXPECT_NEAR(std::stod(rows[1][7]), t["concurrence"]["value"].get<double>(), 1e-9);
}

TEST_F(Cli, Multimode) {
  ASSERT_EQ(run("simulate " + config_path("fig4.cfg") + " --duration 20 --out " + out("s")), 0) << output_;
  ASSERT_EQ(run("multimode " + out("s/events.qlnk") + " --t-com 25e-6 --mode-duration 400e-9 --out " + out("m")), 0)
      << output_;
  auto rows = read_csv(out("m/modes.csv"));
  ASSERT_EQ(rows.size(), 63u);
  EXPECT_EQ(rows[0][0], "n_modes");
  json f = read_json(out("m/modes_fit.json"));
  EXPECT_EQ(f["n_max"], 62);
  EXPECT_EQ(f["policy"], "first");
  EXPECT_GT(f["r_squared"].get<double>(), 0.99);

  ASSERT_EQ(run("multimode " + out("s/events.qlnk") + " --t-com 25e-6 --mode-duration 25e-6 --out " + out("one")), 0)
      << output_;
  EXPECT_EQ(read_csv(out("one/modes.csv")).size(), 2u);
  EXPECT_EQ(run("multimode " + out("s/events.qlnk") + " --policy most --out " + out("x")), 3);
}

TEST_F(Cli, CheckReproducesOutputs) {
  ASSERT_EQ(run("simulate " + config_path("fig2.cfg") + " --duration 2 --out " + out("s")), 0) << output_;
  EXPECT_EQ(run("check --out " + out("s")), 0) << output_;
  ASSERT_EQ(run("analyze " + out("s/events.qlnk") + " --out " + out("a")), 0) << output_;
  EXPECT_EQ(run("check --out " + out("a")), 0) << output_;

  std::ofstream(out("a/fringe.csv"), std::ios::app) << "0,1,1,1\n";
  EXPECT_EQ(run("check --out " + out("a")), 4);
  EXPECT_NE(output_.find("MISMATCH fringe.csv"), std::string::npos) << output_;
}
