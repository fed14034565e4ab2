#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "pcdal/learners.hpp"
#include "pcdal/metrics.hpp"
#include "pcdal/simulator.hpp"

namespace {

namespace sim = pcdal::sim;
using pcdal::Tensor;
using pcdal::pool::Strategy;

sim::SimulationConfig small_classification() {
  sim::SimulationConfig cfg;
  cfg.classification.samples_per_class = 60;
  cfg.repeats = 2;
  cfg.learner.epochs = 8;
  cfg.strategies = {Strategy::HPI, Strategy::Random, Strategy::LPI, Strategy::MaxEntropy};
  return cfg;
}

sim::SimulationConfig small_segmentation() {
  sim::SimulationConfig cfg;
  cfg.task = pcdal::Task::Segmentation2D;
  cfg.segmentation.images = 30;
  cfg.segmentation.height = 16;
  cfg.segmentation.width = 16;
  cfg.repeats = 1;
  cfg.learner.epochs = 3;
  cfg.learner.learning_rate = 0.5;
  cfg.learner.batch_size = 256;
  cfg.initial_fraction = 0.2;
  cfg.step_fraction = 0.2;
  cfg.final_fraction = 0.6;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Synth, ClassificationDeterministicAndBalanced) {
  sim::ClassificationSpec spec;
  const auto a = sim::synth_classification(spec, 3);
  const auto b = sim::synth_classification(spec, 3);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(sim::synth_classification(spec, 4).inputs, a.inputs);
  ASSERT_EQ(a.ids.size(), 1000u);
  std::vector<int> counts(4, 0);
  for (int y : a.labels) {
    ASSERT_GE(y, 0);
    ASSERT_LT(y, 4);
    ++counts[static_cast<std::size_t>(y)];
  }
  for (int c : counts) EXPECT_EQ(c, 250);
  EXPECT_EQ(a.train.size() + a.test.size(), 1000u);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  all.insert(a.test.begin(), a.test.end());
  EXPECT_EQ(all.size(), 1000u);
}

TEST(Synth, NoRareClustersIsPlainMixture) {
  sim::ClassificationSpec spec;
  spec.rare_fraction = 0.0;
  spec.noise = 0.0;
  const auto d = sim::synth_classification(spec, 1);
  // without noise every image is one of four orientations of its class prototype
  for (int c = 0; c < 4; ++c) {
    std::set<std::vector<double>> distinct;
    for (std::size_t i = 0; i < d.inputs.size(); ++i)
      if (d.labels[i] == c) distinct.emplace(d.inputs[i].values().begin(), d.inputs[i].values().end());
    EXPECT_LE(distinct.size(), 4u);
  }
}

TEST(Synth, SegmentationForegroundFraction) {
  sim::SegmentationSpec spec;
  spec.height = spec.width = 64;
  spec.images = 40;
  const auto d = sim::synth_segmentation(spec, 5);
  for (const auto& m : d.masks) {
    double fg = 0.0;
    for (double v : m.values()) fg += v;
    const double frac = fg / static_cast<double>(m.size());
    EXPECT_GT(frac, 0.0);
    EXPECT_LT(frac, 0.5);
  }
  const auto again = sim::synth_segmentation(spec, 5);
  EXPECT_EQ(again.inputs, d.inputs);
  EXPECT_EQ(again.masks, d.masks);
}

TEST(Synth, SegmentationVolumes) {
  sim::SegmentationSpec spec;
  spec.images = 6;
  spec.depth = 8;
  spec.height = spec.width = 12;
  const auto d = sim::synth_segmentation(spec, 2);
  EXPECT_EQ(d.task, pcdal::Task::Segmentation3D);
  EXPECT_EQ(d.inputs[0].shape(), (pcdal::Shape{8, 12, 12}));
}

TEST(Synth, NoiselessHighContrastIsLearnable) {
  sim::SegmentationSpec spec;
  spec.images = 40;
  spec.noise = 0.0;
  spec.contrast_min = 0.8;
  spec.contrast_max = 1.0;
  const auto d = sim::synth_segmentation(spec, 6);
  std::vector<Tensor> images, masks;
  for (auto i : d.train) {
    images.push_back(d.inputs[i]);
    masks.push_back(d.masks[i]);
  }
  pcdal::learn::LearnerConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.epochs = 10;
  cfg.batch_size = 256;
  const auto m = pcdal::learn::segmenter_fit(images, masks, cfg);
  double dice = 0.0;
  for (auto i : d.test) {
    const auto p = pcdal::learn::segmenter_predict_proba(m, d.inputs[i]);
    const std::size_t n = d.inputs[i].size();
    auto pred = Tensor::zeros(d.inputs[i].shape());
    for (std::size_t k = 0; k < n; ++k) pred[k] = p[n + k] > p[k] ? 1.0 : 0.0;
    dice += pcdal::metrics::dice(pred, d.masks[i]);
  }
  EXPECT_GE(dice / static_cast<double>(d.test.size()), 0.95);
}

TEST(Simulation, ScheduleOverThousandSamples) {
  sim::SimulationConfig cfg;
  cfg.classification.samples_per_class = 357;  // 250 train per class after the 30% test split
  cfg.repeats = 1;
  cfg.learner.epochs = 1;
  cfg.strategies = {Strategy::Random};
  const auto rep = sim::run_simulation(cfg);
  ASSERT_EQ(rep.rounds, 5u);
  for (std::size_t r = 0; r < 5; ++r)
    EXPECT_DOUBLE_EQ(rep.at(0, 0, r, 0).fraction, 0.1 * static_cast<double>(r + 1));
}

TEST(Simulation, WholePoolInRoundOneEqualizesStrategies) {
  auto cfg = small_classification();
  cfg.strategies = {Strategy::HPI, Strategy::LPI};
  cfg.initial_fraction = 0.1;
  cfg.step_fraction = 0.9;
  cfg.final_fraction = 1.0;
  const auto rep = sim::run_simulation(cfg);
  ASSERT_EQ(rep.rounds, 2u);
  for (std::size_t k = 0; k < cfg.repeats; ++k) {
    EXPECT_EQ(rep.value("hpi", k, 1, "acc"), rep.value("lpi", k, 1, "acc"));
    EXPECT_EQ(rep.value("hpi", k, 1, "pre"), rep.value("lpi", k, 1, "pre"));
    EXPECT_EQ(rep.at(0, k, 1, 0).fraction, 1.0);
  }
}

TEST(Simulation, RoundZeroIdenticalAcrossStrategies) {
  for (const auto& cfg : {small_classification(), small_segmentation()}) {
    const auto rep = sim::run_simulation(cfg);
    for (std::size_t k = 0; k < cfg.repeats; ++k)
      for (std::size_t s = 1; s < rep.strategies.size(); ++s)
        for (std::size_t m = 0; m < rep.metrics.size(); ++m) {
          const double a = rep.at(0, k, 0, m).value, b = rep.at(s, k, 0, m).value;
          EXPECT_TRUE(a == b || (std::isnan(a) && std::isnan(b))) << rep.metrics[m];
        }
  }
}

TEST(Simulation, LaterRoundsDivergeBetweenStrategies) {
  const auto rep = sim::run_simulation(small_classification());
  bool differs = false;
  for (std::size_t r = 1; r < rep.rounds; ++r)
    differs = differs || rep.value("hpi", 0, r, "acc") != rep.value("lpi", 0, r, "acc");
  EXPECT_TRUE(differs);
}

TEST(Simulation, RowCardinalityAndSummary) {
  const auto cfg = small_classification();
  const auto rep = sim::run_simulation(cfg);
  EXPECT_EQ(rep.rows.size(), rep.strategies.size() * cfg.repeats * rep.rounds * rep.metrics.size());
  const auto summary = rep.summary();
  EXPECT_EQ(summary.size(), rep.strategies.size() * rep.rounds * rep.metrics.size());
  for (const auto& s : summary) EXPECT_GE(s.std, 0.0);

  auto single = cfg;
  single.repeats = 1;
  for (const auto& s : sim::run_simulation(single).summary()) EXPECT_EQ(s.std, 0.0);
}

TEST(Simulation, SummaryIsSampleMeanAndStd) {
  const auto rep = sim::run_simulation(small_classification());
  const auto summary = rep.summary();
  const auto& row = summary[rep.metrics.size() * 2];  // first strategy, round 2, first metric
  const double a = rep.at(0, 0, 2, 0).value, b = rep.at(0, 1, 2, 0).value;
  EXPECT_DOUBLE_EQ(row.mean, (a + b) / 2.0);
  EXPECT_NEAR(row.std, std::abs(a - b) / std::sqrt(2.0), 1e-15);
}

TEST(Simulation, SegmentationMetricsPresent) {
  const auto rep = sim::run_simulation(small_segmentation());
  EXPECT_EQ(rep.metrics, (std::vector<std::string>{"dice", "pa", "hd95", "hd95_skipped"}));
  for (const auto& r : rep.rows) {
    if (r.metric == "dice" || r.metric == "pa") {
      EXPECT_GE(r.value, 0.0);
      EXPECT_LE(r.value, 1.0);
    }
  }
}

TEST(Simulation, EmissionIsByteIdentical) {
  const auto base = std::filesystem::temp_directory_path() / "pcdal_sim_emit";
  std::filesystem::remove_all(base);
  const auto cfg = small_classification();
  sim::emit_report(sim::run_simulation(cfg), base / "a");
  sim::emit_report(sim::run_simulation(cfg), base / "b");
  auto threaded = cfg;
  threaded.threads = 3;
  sim::emit_report(sim::run_simulation(threaded), base / "c");
  for (const char* f : {"report.csv", "report.json", "summary.csv"}) {
    const auto a = slurp(base / "a" / f);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(base / "b" / f)) << f;
  }
  EXPECT_EQ(slurp(base / "a" / "report.csv"), slurp(base / "c" / "report.csv"));
  const auto csv = slurp(base / "a" / "report.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "strategy,repeat,round,fraction,metric,value");
}

TEST(Config, JsonRoundTripAndValidation) {
  auto cfg = small_segmentation();
  cfg.dispersion.kind = pcdal::DispersionFn::Kind::Huber;
  cfg.dispersion.delta = 0.3;
  const auto j = cfg.to_json();
  EXPECT_EQ(sim::SimulationConfig::from_json(j).to_json(), j);

  auto unknown = j;
  unknown["learner"]["momentum"] = 0.9;
  EXPECT_THROW(sim::SimulationConfig::from_json(unknown), pcdal::FormatError);
  auto zero = j;
  zero["repeats"] = 0;
  EXPECT_THROW(sim::SimulationConfig::from_json(zero), pcdal::InvalidArgument);
  auto none = j;
  none["strategies"] = nlohmann::json::array();
  EXPECT_THROW(sim::SimulationConfig::from_json(none), pcdal::InvalidArgument);
  auto bad_schedule = j;
  bad_schedule["schedule"]["final"] = 0.1;
  EXPECT_THROW(sim::SimulationConfig::from_json(bad_schedule), pcdal::InvalidArgument);
}

TEST(Simulation, TinyDatasetRuns) {
  auto cfg = small_classification();
  cfg.strategies = {Strategy::HPI};
  cfg.classification.samples_per_class = 4;
  cfg.initial_fraction = 0.5;
  cfg.step_fraction = 0.5;
  cfg.final_fraction = 1.0;
  EXPECT_NO_THROW(sim::run_simulation(cfg));
}

}  // namespace
