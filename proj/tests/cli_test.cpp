#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"
#include "pcdal/pool.hpp"
#include "pcdal/ptns.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using pcdal::Tensor;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           (std::string("pcdal_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  // Runs the CLI with stdout captured to out.txt and stderr to err.txt; returns the exit status.
  int run(const std::string& args) {
    const std::string cmd = std::string("'") + PCDAL_CLI_PATH + "' " + args + " > '" + (dir_ / "out.txt").string() +
                            "' 2> '" + (dir_ / "err.txt").string() + "'";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string out() const { return slurp(dir_ / "out.txt"); }
  std::string err() const { return slurp(dir_ / "err.txt"); }
  std::string path(const std::string& name) const { return "'" + (dir_ / name).string() + "'"; }

  // Two classification samples: one with identical members, one with disagreeing members.
  void write_score_manifest(bool with_missing = false) {
    pcdal::write_tensor(Tensor({3}, {0.2, 0.3, 0.5}), dir_ / "a_id.ptns");
    pcdal::write_tensor(Tensor({3}, {0.2, 0.3, 0.5}), dir_ / "a_h.ptns");
    pcdal::write_tensor(Tensor({2}, {0.75, 0.25}), dir_ / "b_id.ptns");
    pcdal::write_tensor(Tensor({2}, {0.25, 0.75}), dir_ / "b_h.ptns");
    json m = json::array();
    for (const char* id : {"a", "b"})
      m.push_back({{"sample_id", id},
                   {"task", "classification"},
                   {"predictions",
                    {{{"perturbation", "identity"}, {"path", std::string(id) + "_id.ptns"}},
                     {{"perturbation", "flip_h"}, {"path", std::string(id) + "_h.ptns"}}}}});
    if (with_missing)
      m.push_back({{"sample_id", "c"},
                   {"task", "classification"},
                   {"predictions", {{{"perturbation", "identity"}, {"path", "absent.ptns"}}}}});
    spit(dir_ / "manifest.json", m.dump());
  }

  fs::path dir_;
};

TEST_F(Cli, ScoreJsonLines) {
  write_score_manifest();
  ASSERT_EQ(run("score --manifest " + path("manifest.json")), 0) << err();
  std::istringstream lines(out());
  std::string line;
  std::getline(lines, line);
  auto a = json::parse(line);
  EXPECT_EQ(a["sample_id"], "a");
  EXPECT_EQ(a["score"].get<double>(), 0.0);
  EXPECT_EQ(a["n_predictions"], 2);
  std::getline(lines, line);
  auto b = json::parse(line);
  EXPECT_EQ(b["sample_id"], "b");
  // mean (0.5, 0.5); every deviation is 0.25
  EXPECT_DOUBLE_EQ(b["score"].get<double>(), 0.0625);
}

TEST_F(Cli, ScoreCsvAndDispersionChoice) {
  write_score_manifest();
  ASSERT_EQ(run("score --format csv --dispersion l1 --manifest " + path("manifest.json")), 0) << err();
  EXPECT_EQ(out(), "sample_id,score,n_predictions\na,0,2\nb,0.25,2\n");
}

TEST_F(Cli, ScoreFailureIsReportedPerSample) {
  write_score_manifest(true);
  EXPECT_EQ(run("score --manifest " + path("manifest.json") + " --out " + path("scores.jsonl")), 1);
  const auto text = slurp(dir_ / "scores.jsonl");
  EXPECT_NE(text.find("\"sample_id\":\"a\""), std::string::npos);
  EXPECT_NE(text.find("\"error\""), std::string::npos);
  EXPECT_NE(err().find("error: c:"), std::string::npos);
}

TEST_F(Cli, ScorePerturbationSetMismatch) {
  write_score_manifest();
  EXPECT_EQ(run("score --perturbations identity,flip_h,flip_v --manifest " + path("manifest.json")), 1);
}

TEST_F(Cli, SplitSelectAdvance) {
  std::string labels = "sample_id,label\n";
  for (int i = 0; i < 20; ++i) labels += "s" + std::to_string(i) + "," + std::to_string(i % 2) + "\n";
  spit(dir_ / "labels.csv", labels);
  ASSERT_EQ(run("split --labels " + path("labels.csv") + " --k 5 --seed 3 --pool-out " + path("pool.json")), 0)
      << err();
  std::istringstream folds(out());
  std::string line;
  std::getline(folds, line);
  EXPECT_EQ(line, "sample_id,fold");
  std::vector<int> per_fold(5, 0);
  while (std::getline(folds, line)) ++per_fold[static_cast<std::size_t>(std::stoi(line.substr(line.find(',') + 1)))];
  for (int n : per_fold) EXPECT_EQ(n, 4);

  const auto pool = pcdal::pool::PoolState::from_json(json::parse(slurp(dir_ / "pool.json")));
  EXPECT_EQ(pool.labeled().size(), 4u);
  EXPECT_EQ(pool.unlabeled().size(), 16u);

  std::string scores;
  double v = 0.0;
  for (const auto& id : pool.unlabeled()) scores += json{{"sample_id", id}, {"score", v += 1.0}, {"n_predictions", 4}}.dump() + "\n";
  spit(dir_ / "scores.jsonl", scores);
  ASSERT_EQ(run("select --strategy hpi --budget 3 --scores " + path("scores.jsonl") + " --pool " + path("pool.json") +
                " --out " + path("picked.txt")),
            0)
      << err();
  const std::vector<std::string> unl(pool.unlabeled().begin(), pool.unlabeled().end());
  EXPECT_EQ(slurp(dir_ / "picked.txt"), unl[15] + "\n" + unl[14] + "\n" + unl[13] + "\n");

  ASSERT_EQ(run("advance --pool " + path("pool.json") + " --selected " + path("picked.txt") + " --strategy hpi"), 0)
      << err();
  const auto next = pcdal::pool::PoolState::from_json(json::parse(slurp(dir_ / "pool.json")));
  EXPECT_EQ(next.labeled().size(), 7u);
  EXPECT_EQ(next.unlabeled().size(), 13u);
  EXPECT_EQ(next.rounds().size(), pool.rounds().size() + 1);
  EXPECT_TRUE(next.labeled().count(unl[15]));

  // selecting an already-labeled id is rejected
  EXPECT_EQ(run("advance --pool " + path("pool.json") + " --selected " + path("picked.txt") + " --strategy hpi"), 1);
}

TEST_F(Cli, RandomSelectNeedsNoScoresAndIsSeeded) {
  const pcdal::pool::PoolState pool({"a", "b", "c", "d", "e", "f"}, {"a"}, 9);
  spit(dir_ / "pool.json", pool.to_json().dump());
  ASSERT_EQ(run("select --strategy random --budget 2 --seed 4 --pool " + path("pool.json")), 0) << err();
  const auto first = out();
  ASSERT_EQ(run("select --strategy random --budget 2 --seed 4 --pool " + path("pool.json")), 0);
  EXPECT_EQ(out(), first);
  EXPECT_EQ(std::count(first.begin(), first.end(), '\n'), 2);
  EXPECT_NE(run("select --strategy hpi --budget 2 --pool " + path("pool.json")), 0);
}

TEST_F(Cli, SegmentationMetrics) {
  auto truth = Tensor::zeros({5, 5}), pred = Tensor::zeros({5, 5});
  truth[12] = 1.0;
  pred[12] = 1.0;
  pred[14] = 1.0;
  pcdal::write_tensor(pred, dir_ / "p.ptns");
  pcdal::write_tensor(truth, dir_ / "t.ptns");
  pcdal::write_tensor(Tensor::zeros({5, 5}), dir_ / "empty.ptns");
  json m{{"task", "segmentation-2d"}, {"samples", {{{"sample_id", "x"}, {"pred", "p.ptns"}, {"truth", "t.ptns"}}}}};
  spit(dir_ / "m.json", m.dump());
  ASSERT_EQ(run("metrics --manifest " + path("m.json") + " --percentile 100"), 0) << err();
  // dice 2/3, one mismatched pixel of 25, farthest surface point 2 away
  EXPECT_EQ(out(), "sample_id,dice,pa,hd95\nx,0.6666666666666666,0.96,2\nmean,0.6666666666666666,0.96,2\n");

  m["samples"].push_back({{"sample_id", "y"}, {"pred", "empty.ptns"}, {"truth", "t.ptns"}});
  spit(dir_ / "m.json", m.dump());
  EXPECT_EQ(run("metrics --manifest " + path("m.json")), 1);
  EXPECT_NE(err().find("y:"), std::string::npos);
  ASSERT_EQ(run("metrics --skip-empty --manifest " + path("m.json")), 0) << err();
  EXPECT_NE(out().find("\ny,0,0.96,\n"), std::string::npos) << out();
}

TEST_F(Cli, ClassificationMetrics) {
  json m{{"task", "classification"}, {"classes", 2}, {"samples", json::array()}};
  const double pred[] = {1, 1, 0, 1}, truth[] = {1, 0, 0, 1};
  for (int i = 0; i < 4; ++i) {
    const auto id = std::to_string(i);
    pcdal::write_tensor(Tensor({1}, {pred[i]}), dir_ / ("p" + id + ".ptns"));
    pcdal::write_tensor(Tensor({1}, {truth[i]}), dir_ / ("t" + id + ".ptns"));
    m["samples"].push_back({{"sample_id", id}, {"pred", "p" + id + ".ptns"}, {"truth", "t" + id + ".ptns"}});
  }
  spit(dir_ / "m.json", m.dump());
  ASSERT_EQ(run("metrics --manifest " + path("m.json")), 0) << err();
  // class 0: 1 of 1 predicted correct; class 1: 2 of 3
  EXPECT_EQ(out(), "sample_id,acc,pre\naggregate,0.75,0.8333333333333333\nclass0,,1\nclass1,,0.6666666666666666\n");
}

TEST_F(Cli, SimulateWritesReports) {
  json cfg{{"task", "classification"},
           {"dataset", {{"samples_per_class", 20}}},
           {"strategies", {"hpi", "random"}},
           {"repeats", 1},
           {"learner", {{"epochs", 2}}}};
  spit(dir_ / "cfg.json", cfg.dump());
  ASSERT_EQ(run("simulate --config " + path("cfg.json") + " --out-dir " + path("run")), 0) << err();
  for (const char* f : {"report.csv", "report.json", "summary.csv"}) EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  const auto csv = slurp(dir_ / "run" / "report.csv");
  EXPECT_EQ(csv.rfind("strategy,repeat,round,fraction,metric,value\n", 0), 0u);
}

TEST_F(Cli, BundledConfigsParse) {
  for (const char* name : {"classification.json", "segmentation.json"}) {
    const auto text = slurp(fs::path(PCDAL_CONFIG_DIR) / name);
    ASSERT_FALSE(text.empty()) << name;
    auto j = json::parse(text);
    j["repeats"] = 1;
    j["schedule"] = {{"initial", 0.5}, {"step", 0.5}, {"final", 1.0}};
    j["learner"]["epochs"] = 1;
    spit(dir_ / name, j.dump());
    EXPECT_EQ(run(std::string("simulate --config ") + path(name) + " --out-dir " + path("out")), 0) << name << err();
  }
}

TEST_F(Cli, BadInvocations) {
  EXPECT_NE(run(""), 0);
  EXPECT_NE(run("frobnicate"), 0);
  EXPECT_NE(run("simulate"), 0);
  EXPECT_NE(run("simulate --config " + path("nope.json")), 0);
  spit(dir_ / "bad.json", "{\"repeats\": 1, \"colour\": \"red\"}");
  EXPECT_EQ(run("simulate --config " + path("bad.json")), 1);
  EXPECT_NE(err().find("colour"), std::string::npos) << err();
  EXPECT_NE(run("select --strategy best --budget 1 --pool " + path("bad.json")), 0);
  EXPECT_EQ(run("--version"), 0);
  EXPECT_EQ(out(), std::string(PCDAL_VERSION) + "\n");
}

}  // namespace
