// Command-line front end: simulate, score, select, split, advance, metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pcdal/error.hpp"
#include "pcdal/io.hpp"
#include "pcdal/metrics.hpp"
#include "pcdal/pcem.hpp"
#include "pcdal/pool.hpp"
#include "pcdal/ptns.hpp"
#include "pcdal/simulator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-")
    std::cout << text;
  else
    pcdal::io::write_text(out, text);
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw pcdal::IoError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<std::size_t> threads;
};

int run_simulate(const SimulateArgs& a) {
  auto cfg = pcdal::sim::SimulationConfig::from_json(pcdal::io::read_json(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (!a.out_dir.empty()) cfg.output_dir = a.out_dir;
  if (a.threads) cfg.threads = *a.threads;
  cfg.validate();
  const auto report = pcdal::sim::run_simulation(cfg);
  pcdal::sim::emit_report(report, cfg.output_dir);
  std::cerr << "wrote " << report.rows.size() << " rows to " << (fs::path(cfg.output_dir) / "report.csv").string()
            << "\n";
  return 0;
}

struct ScoreArgs {
  std::string manifest;
  std::string dispersion = "mse";
  double delta = 1.0;
  double epsilon = 1e-12;
  double margin = 0.1;
  std::string perturbations;
  std::string format = "jsonl";
  std::string out;
  std::size_t threads = 1;
  bool entropy = false;
};

// Entropy of each sample's identity member.
std::vector<pcdal::BatchEntry> entropy_batch(const std::vector<pcdal::SampleDescriptor>& manifest) {
  std::vector<pcdal::BatchEntry> out;
  for (const auto& d : manifest) {
    pcdal::BatchEntry e{d.sample_id, std::nullopt, {}};
    try {
      const auto it = std::find_if(d.predictions.begin(), d.predictions.end(),
                                   [](const pcdal::PredictionRef& r) { return r.perturbation.is_identity(); });
      if (it == d.predictions.end()) throw pcdal::InvalidArgument("no identity prediction");
      e.record = pcdal::ScoreRecord{d.sample_id, pcdal::entropy_score(pcdal::read_tensor(it->path), d.task), 1};
    } catch (const std::exception& ex) {
      e.error = ex.what();
    }
    out.push_back(std::move(e));
  }
  return out;
}

int run_score(const ScoreArgs& a) {
  const auto manifest =
      pcdal::io::parse_score_manifest(pcdal::io::read_json(a.manifest), fs::path(a.manifest).parent_path());
  std::vector<pcdal::BatchEntry> entries;
  if (a.entropy) {
    entries = entropy_batch(manifest);
  } else {
    const pcdal::DispersionFn f{pcdal::parse_dispersion_kind(a.dispersion), a.delta, a.epsilon, a.margin};
    std::optional<pcdal::PerturbationSet> set;
    if (!a.perturbations.empty()) set = pcdal::PerturbationSet::parse(split_commas(a.perturbations));
    entries = pcdal::score_batch(manifest, set, f, a.threads);
  }
  if (a.format == "csv")
    emit(pcdal::io::scores_csv(entries), a.out);
  else
    emit(pcdal::io::scores_jsonl(entries), a.out);
  std::size_t failed = 0;
  for (const auto& e : entries) {
    if (e.ok()) continue;
    ++failed;
    std::cerr << "error: " << e.sample_id << ": " << e.error << "\n";
  }
  return failed ? 1 : 0;
}

struct SelectArgs {
  std::string strategy;
  std::size_t budget = 0;
  std::string scores;
  std::string pool;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int run_select(const SelectArgs& a) {
  const auto strategy = pcdal::pool::parse_strategy(a.strategy);
  const auto state = pcdal::pool::PoolState::from_json(pcdal::io::read_json(a.pool));
  std::vector<pcdal::ScoreRecord> scores;
  if (strategy != pcdal::pool::Strategy::Random) {
    if (a.scores.empty()) throw pcdal::InvalidArgument("--scores is required for strategy " + a.strategy);
    scores = pcdal::io::read_scores_jsonl(a.scores);
  }
  const auto seed = a.seed.value_or(pcdal::derive_seed(state.seed(), state.rounds().size() + 1));
  std::string text;
  for (const auto& id : pcdal::pool::select(strategy, scores, state, a.budget, seed)) text += id + "\n";
  emit(text, a.out);
  return 0;
}

struct SplitArgs {
  std::string labels;
  std::size_t k = 5;
  std::uint64_t seed = 0;
  std::size_t labeled_fold = 0;
  std::string pool_out;
  std::string out;
};

// Labels file: CSV with header, columns sample_id,label.
int run_split(const SplitArgs& a) {
  const auto lines = read_lines(a.labels);
  if (lines.empty()) throw pcdal::FormatError(a.labels + ": empty labels file");
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto comma = lines[i].find(',');
    if (comma == std::string::npos) throw pcdal::FormatError(a.labels + ":" + std::to_string(i + 1) + ": expected id,label");
    ids.push_back(lines[i].substr(0, comma));
    try {
      labels.push_back(std::stoi(lines[i].substr(comma + 1)));
    } catch (const std::exception&) {
      throw pcdal::FormatError(a.labels + ":" + std::to_string(i + 1) + ": label is not an integer");
    }
  }
  const auto folds = pcdal::pool::stratified_kfold(ids, labels, a.k, a.seed);
  if (folds.uneven_strata) std::cerr << "warning: some class has fewer than " << a.k << " samples; strata are uneven\n";
  std::map<std::string, std::size_t> fold_of;
  for (std::size_t f = 0; f < folds.folds.size(); ++f)
    for (const auto& id : folds.folds[f]) fold_of[id] = f;
  std::string text = "sample_id,fold\n";
  for (const auto& id : ids) text += id + "," + std::to_string(fold_of.at(id)) + "\n";
  emit(text, a.out);
  if (!a.pool_out.empty()) {
    if (a.labeled_fold >= a.k) throw pcdal::InvalidArgument("--labeled-fold must be < k");
    const pcdal::pool::PoolState state(ids, folds.folds[a.labeled_fold], a.seed);
    pcdal::io::write_text(a.pool_out, state.to_json().dump(2) + "\n");
  }
  return 0;
}

struct AdvanceArgs {
  std::string pool;
  std::string selected;
  std::string strategy;
  std::string scores_path;
  std::string out;
};

int run_advance(const AdvanceArgs& a) {
  const auto state = pcdal::pool::PoolState::from_json(pcdal::io::read_json(a.pool));
  const auto next = pcdal::pool::advance_round(state, pcdal::pool::parse_strategy(a.strategy), read_lines(a.selected),
                                               a.scores_path);
  pcdal::io::write_text(a.out.empty() ? a.pool : a.out, next.to_json().dump(2) + "\n");
  std::cerr << "labeled " << next.labeled().size() << ", unlabeled " << next.unlabeled().size() << "\n";
  return 0;
}

struct MetricsArgs {
  std::string manifest;
  double percentile = 95.0;
  std::string pooling = "pooled";
  std::string spacing;
  bool skip_empty = false;
  std::string out;
};

std::string num(double v) { return std::isnan(v) ? "" : pcdal::io::format_double(v); }

// Manifest: {"task", "classes"?, "samples": [{"sample_id", "pred", "truth"}]} with PTNS paths.
int run_metrics(const MetricsArgs& a) {
  namespace m = pcdal::metrics;
  const auto doc = pcdal::io::read_json(a.manifest);
  const auto base = fs::path(a.manifest).parent_path();
  std::string task_name;
  std::vector<std::array<std::string, 3>> samples;
  std::size_t classes = 2;
  try {
    task_name = doc.value("task", std::string("segmentation-2d"));
    classes = doc.value("classes", std::size_t{2});
    for (const auto& s : doc.at("samples"))
      samples.push_back({s.at("sample_id").get<std::string>(), pcdal::io::resolve(base, s.at("pred").get<std::string>()).string(),
                         pcdal::io::resolve(base, s.at("truth").get<std::string>()).string()});
  } catch (const nlohmann::json::exception& e) {
    throw pcdal::FormatError(std::string("metrics manifest: ") + e.what());
  }
  const auto task = pcdal::parse_task(task_name);

  if (task == pcdal::Task::Classification) {
    std::vector<double> pred, truth;
    for (const auto& [id, p, t] : samples) {
      const auto pt = pcdal::read_tensor(p), tt = pcdal::read_tensor(t);
      if (pt.size() != 1 || tt.size() != 1) throw pcdal::ShapeError(id + ": classification labels must be scalars");
      pred.push_back(pt[0]);
      truth.push_back(tt[0]);
    }
    if (pred.empty()) throw pcdal::InvalidArgument("metrics manifest has no samples");
    const auto c = m::confusion(pcdal::Tensor({pred.size()}, pred), pcdal::Tensor({truth.size()}, truth), classes);
    std::string text = "sample_id,acc,pre\n";
    text += "aggregate," + num(m::accuracy(c)) + "," + num(m::precision_macro(c)) + "\n";
    for (std::size_t k = 0; k < classes; ++k) {
      double pre = std::nan("");
      try {
        pre = m::precision(c, k);
      } catch (const pcdal::UndefinedMetric&) {
      }
      text += "class" + std::to_string(k) + ",," + num(pre) + "\n";
    }
    emit(text, a.out);
    return 0;
  }

  m::HausdorffOptions opt;
  opt.percentile = a.percentile;
  if (a.pooling == "per-side-max")
    opt.pooling = m::HausdorffOptions::Pooling::PerSideMax;
  else if (a.pooling != "pooled")
    throw pcdal::InvalidArgument("unknown pooling '" + a.pooling + "'");
  for (const auto& s : split_commas(a.spacing)) opt.spacing.push_back(std::stod(s));

  std::string text = "sample_id,dice,pa,hd95\n";
  double dice = 0.0, pa = 0.0, hd = 0.0;
  std::size_t hd_n = 0, skipped = 0;
  for (const auto& [id, p, t] : samples) {
    const auto pt = pcdal::read_tensor(p), tt = pcdal::read_tensor(t);
    const double d = m::dice(pt, tt), acc = m::pixel_accuracy(pt, tt);
    double h = std::nan("");
    try {
      h = m::hausdorff(pt, tt, opt);
      hd += h;
      ++hd_n;
    } catch (const pcdal::UndefinedMetric& e) {
      if (!a.skip_empty) throw pcdal::UndefinedMetric(id + ": " + e.what());
      ++skipped;
    }
    dice += d;
    pa += acc;
    text += id + "," + num(d) + "," + num(acc) + "," + num(h) + "\n";
  }
  if (samples.empty()) throw pcdal::InvalidArgument("metrics manifest has no samples");
  const double n = static_cast<double>(samples.size());
  text += "mean," + num(dice / n) + "," + num(pa / n) + "," + num(hd_n ? hd / static_cast<double>(hd_n) : std::nan("")) +
          "\n";
  emit(text, a.out);
  if (skipped) std::cerr << "hd95 skipped for " << skipped << " sample(s) with an empty mask\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perturbation-consistency active learning toolkit"};
  app.set_version_flag("--version", std::string(PCDAL_VERSION));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run an active-learning simulation and write reports");
  simulate->add_option("--config", sim.config, "Simulation config JSON")->required()->check(CLI::ExistingFile);
  simulate->add_option("--seed", sim.seed, "Override the config seed");
  simulate->add_option("--out-dir", sim.out_dir, "Override the output directory");
  simulate->add_option("--threads", sim.threads, "Worker threads for independent lanes");

  ScoreArgs sc;
  auto* score = app.add_subcommand("score", "Score prediction sets from a manifest of PTNS files");
  score->add_option("--manifest", sc.manifest, "Score manifest JSON")->required()->check(CLI::ExistingFile);
  score->add_option("--dispersion", sc.dispersion, "mse, l1, smooth_l1, huber, kl or hinge")->capture_default_str();
  score->add_option("--delta", sc.delta, "Delta for smooth_l1 and huber")->capture_default_str();
  score->add_option("--epsilon", sc.epsilon, "Epsilon for kl")->capture_default_str();
  score->add_option("--margin", sc.margin, "Margin for hinge")->capture_default_str();
  score->add_option("--perturbations", sc.perturbations, "Comma-separated perturbation set every sample must match");
  score->add_option("--format", sc.format, "jsonl or csv")->check(CLI::IsMember({"jsonl", "csv"}))->capture_default_str();
  score->add_option("--out", sc.out, "Output file (default stdout)");
  score->add_option("--threads", sc.threads, "Worker threads")->capture_default_str();
  score->add_flag("--entropy", sc.entropy, "Score by entropy of the identity prediction instead");

  SelectArgs se;
  auto* select = app.add_subcommand("select", "Choose the next annotation batch");
  select->add_option("--strategy", se.strategy, "hpi, lpi, random or max-entropy")
      ->required()
      ->check(CLI::IsMember({"hpi", "lpi", "random", "max-entropy"}));
  select->add_option("--budget", se.budget, "Number of samples to select")->required();
  select->add_option("--scores", se.scores, "Score JSON lines");
  select->add_option("--pool", se.pool, "Pool manifest JSON")->required()->check(CLI::ExistingFile);
  select->add_option("--seed", se.seed, "Seed for the random strategy");
  select->add_option("--out", se.out, "Output file (default stdout)");

  SplitArgs sp;
  auto* split = app.add_subcommand("split", "Stratified k-fold split of a labels CSV");
  split->add_option("--labels", sp.labels, "CSV with header sample_id,label")->required()->check(CLI::ExistingFile);
  split->add_option("--k", sp.k, "Number of folds")->capture_default_str();
  split->add_option("--seed", sp.seed, "Shuffle seed")->capture_default_str();
  split->add_option("--labeled-fold", sp.labeled_fold, "Fold that seeds the labeled pool")->capture_default_str();
  split->add_option("--pool-out", sp.pool_out, "Write an initial pool manifest");
  split->add_option("--out", sp.out, "Fold assignment CSV (default stdout)");

  AdvanceArgs ad;
  auto* advance = app.add_subcommand("advance", "Move selected samples into the labeled pool");
  advance->add_option("--pool", ad.pool, "Pool manifest JSON")->required()->check(CLI::ExistingFile);
  advance->add_option("--selected", ad.selected, "File with one sample id per line")->required()->check(CLI::ExistingFile);
  advance->add_option("--strategy", ad.strategy, "Strategy recorded for the round")->required();
  advance->add_option("--scores-path", ad.scores_path, "Score file recorded for the round");
  advance->add_option("--out", ad.out, "Output manifest (default: overwrite --pool)");

  MetricsArgs me;
  auto* metrics = app.add_subcommand("metrics", "Evaluate predicted masks or labels against ground truth");
  metrics->add_option("--manifest", me.manifest, "Metrics manifest JSON")->required()->check(CLI::ExistingFile);
  metrics->add_option("--percentile", me.percentile, "Surface-distance percentile")
      ->check(CLI::Range(0.0, 100.0))
      ->capture_default_str();
  metrics->add_option("--pooling", me.pooling, "pooled or per-side-max")->capture_default_str();
  metrics->add_option("--spacing", me.spacing, "Comma-separated voxel spacing");
  metrics->add_flag("--skip-empty", me.skip_empty, "Leave hd95 blank for empty masks instead of failing");
  metrics->add_option("--out", me.out, "Output CSV (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) return run_simulate(sim);
    if (score->parsed()) return run_score(sc);
    if (select->parsed()) return run_select(se);
    if (split->parsed()) return run_split(sp);
    if (advance->parsed()) return run_advance(ad);
    if (metrics->parsed()) return run_metrics(me);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
