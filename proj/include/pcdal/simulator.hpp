#ifndef PCDAL_SIMULATOR_HPP
#define PCDAL_SIMULATOR_HPP

// Desk-scale active-learning simulator: synthetic datasets, the
// fit -> perturb -> score -> select -> annotate round loop, and reports.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pcdal/error.hpp"
#include "pcdal/io.hpp"
#include "pcdal/learners.hpp"
#include "pcdal/metrics.hpp"
#include "pcdal/parallel.hpp"
#include "pcdal/pcem.hpp"
#include "pcdal/perturbation.hpp"
#include "pcdal/pool.hpp"
#include "pcdal/random.hpp"
#include "pcdal/tensor.hpp"

namespace pcdal::sim {

/// Gaussian-mixture images: every class owns one common and `rare_clusters`
/// rare prototype images; each sample is a prototype under a random flip plus
/// pixel noise, so class identity is invariant under the flip group.
struct ClassificationSpec {
  std::size_t classes = 4;
  std::size_t samples_per_class = 250;
  std::size_t image_size = 8;
  double noise = 0.5;
  double rare_fraction = 0.2;
  std::size_t rare_clusters = 2;
  double test_fraction = 0.3;

  void validate() const {
    if (classes < 2) throw InvalidArgument("classification dataset needs >= 2 classes");
    if (samples_per_class < 2) throw InvalidArgument("samples_per_class must be >= 2");
    if (image_size < 2) throw InvalidArgument("image_size must be >= 2");
    if (!(noise >= 0.0)) throw InvalidArgument("noise must be >= 0");
    if (!(rare_fraction >= 0.0 && rare_fraction < 1.0)) throw InvalidArgument("rare_fraction must be in [0, 1)");
    if (rare_fraction > 0.0 && rare_clusters == 0) throw InvalidArgument("rare_fraction > 0 needs rare_clusters >= 1");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidArgument("test_fraction must be in (0, 1)");
  }
};

/// Bright ellipses/rectangles (ellipsoids/boxes when depth > 0) over a
/// random background with pixel noise.
struct SegmentationSpec {
  std::size_t images = 120;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t depth = 0;
  std::size_t max_shapes = 2;
  double contrast_min = 0.3;
  double contrast_max = 1.0;
  double noise = 0.1;
  double test_fraction = 0.3;
  std::size_t strata = 4;

  void validate() const {
    if (images < 4) throw InvalidArgument("segmentation dataset needs >= 4 images");
    if (height < 8 || width < 8 || (depth != 0 && depth < 8))
      throw InvalidArgument("segmentation extents must be >= 8");
    if (max_shapes < 1) throw InvalidArgument("max_shapes must be >= 1");
    if (!(contrast_min > 0.0 && contrast_min <= contrast_max)) throw InvalidArgument("need 0 < contrast_min <= contrast_max");
    if (!(noise >= 0.0)) throw InvalidArgument("noise must be >= 0");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidArgument("test_fraction must be in (0, 1)");
    if (strata < 1) throw InvalidArgument("strata must be >= 1");
  }
};

struct Dataset {
  Task task = Task::Classification;
  std::size_t classes = 2;
  std::vector<std::string> ids;
  std::vector<Tensor> inputs;  // H x W images or D x H x W volumes
  std::vector<Tensor> masks;   // segmentation only
  std::vector<int> labels;     // class labels, or foreground-area strata for segmentation
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

namespace detail {

inline std::string sample_id(std::size_t i) {
  std::string s = std::to_string(i);
  return "s" + std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

/// Per-stratum split: the first round(test_fraction * n) shuffled members go to test.
inline void stratified_split(Dataset& d, double test_fraction, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < d.labels.size(); ++i) by_label[d.labels[i]].push_back(i);
  Pcg32 rng(seed);
  std::vector<bool> is_test(d.labels.size(), false);
  for (auto& [label, members] : by_label) {
    rng.shuffle(members);
    auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(members.size()) + 0.5));
    n_test = std::min(n_test, members.size() - 1);
    for (std::size_t j = 0; j < n_test; ++j) is_test[members[j]] = true;
  }
  for (std::size_t i = 0; i < is_test.size(); ++i) (is_test[i] ? d.test : d.train).push_back(i);
}

}  // namespace detail

inline Dataset synth_classification(const ClassificationSpec& spec, std::uint64_t seed) {
  spec.validate();
  Pcg32 rng(derive_seed(seed, 0xC1A55));
  const std::size_t s = spec.image_size;
  const std::size_t clusters = 1 + spec.rare_clusters;

  std::vector<Tensor> prototypes;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t k = 0; k < clusters; ++k) {
      std::vector<double> px(s * s);
      for (auto& v : px) v = rng.normal();
      prototypes.emplace_back(Shape{s, s}, std::move(px));
    }
  }
  const std::array<Perturbation, 4> orientations{Perturbation{PerturbationKind::Identity},
                                                 Perturbation{PerturbationKind::FlipH},
                                                 Perturbation{PerturbationKind::FlipV},
                                                 Perturbation{PerturbationKind::FlipHV}};
  Dataset d;
  d.task = Task::Classification;
  d.classes = spec.classes;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t j = 0; j < spec.samples_per_class; ++j) {
      std::size_t cluster = 0;
      if (spec.rare_fraction > 0.0 && rng.uniform() < spec.rare_fraction)
        cluster = 1 + rng.bounded(static_cast<std::uint32_t>(spec.rare_clusters));
      const auto& orient = orientations[rng.bounded(4)];
      Tensor img = apply(orient, prototypes[c * clusters + cluster], AxisRoles::image());
      for (auto& v : img.values()) v += spec.noise * rng.normal();
      d.ids.push_back(detail::sample_id(d.inputs.size()));
      d.inputs.push_back(std::move(img));
      d.labels.push_back(static_cast<int>(c));
    }
  }
  detail::stratified_split(d, spec.test_fraction, derive_seed(seed, 0x5B117));
  return d;
}

inline Dataset synth_segmentation(const SegmentationSpec& spec, std::uint64_t seed) {
  spec.validate();
  Pcg32 rng(derive_seed(seed, 0x5E6));
  const bool volumetric = spec.depth > 0;
  const Shape shape = volumetric ? Shape{spec.depth, spec.height, spec.width} : Shape{spec.height, spec.width};
  const std::size_t rank = shape.size();

  Dataset d;
  d.task = volumetric ? Task::Segmentation3D : Task::Segmentation2D;
  d.classes = 2;
  std::vector<double> areas;
  for (std::size_t n = 0; n < spec.images; ++n) {
    const double background = rng.uniform(0.0, 0.3);
    const double contrast = rng.uniform(spec.contrast_min, spec.contrast_max);
    const std::size_t shapes = 1 + rng.bounded(static_cast<std::uint32_t>(spec.max_shapes));

    std::vector<double> mask(shape_volume(shape), 0.0);
    for (std::size_t k = 0; k < shapes; ++k) {
      const bool ellipse = rng.uniform() < 0.5;
      std::array<double, 3> centre{}, radius{};
      for (std::size_t a = 0; a < rank; ++a) {
        const double ext = static_cast<double>(shape[a]);
        radius[a] = rng.uniform(std::max(2.0, ext / 10.0), ext / 4.0);
        centre[a] = rng.uniform(radius[a], ext - 1.0 - radius[a]);
      }
      std::array<std::size_t, 3> idx{};
      for (std::size_t flat = 0; flat < mask.size(); ++flat) {
        double acc = 0.0;
        bool inside = true;
        for (std::size_t a = 0; a < rank; ++a) {
          const double u = (static_cast<double>(idx[a]) - centre[a]) / radius[a];
          acc += u * u;
          inside = inside && std::abs(u) <= 1.0;
        }
        if (ellipse ? acc <= 1.0 : inside) mask[flat] = 1.0;
        for (std::size_t a = rank; a-- > 0;) {
          if (++idx[a] < shape[a]) break;
          idx[a] = 0;
        }
      }
    }
    std::vector<double> image(mask.size());
    double area = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i) {
      image[i] = background + contrast * mask[i] + spec.noise * rng.normal();
      area += mask[i];
    }
    areas.push_back(area / static_cast<double>(mask.size()));
    d.ids.push_back(detail::sample_id(n));
    d.inputs.emplace_back(shape, std::move(image));
    d.masks.emplace_back(shape, std::move(mask));
  }
  // strata: foreground-area quantile bins
  std::vector<std::size_t> order(areas.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return areas[a] < areas[b]; });
  d.labels.assign(areas.size(), 0);
  for (std::size_t r = 0; r < order.size(); ++r)
    d.labels[order[r]] = static_cast<int>(r * spec.strata / order.size());
  detail::stratified_split(d, spec.test_fraction, derive_seed(seed, 0x5B117));
  return d;
}

// ---------------------------------------------------------------------------
// Configuration

struct SimulationConfig {
  Task task = Task::Classification;
  std::uint64_t seed = 0;
  ClassificationSpec classification;
  SegmentationSpec segmentation;
  std::vector<std::string> perturbations{"identity", "flip_h", "flip_v", "flip_hv"};
  DispersionFn dispersion;
  std::vector<pool::Strategy> strategies{pool::Strategy::HPI, pool::Strategy::Random, pool::Strategy::LPI};
  double initial_fraction = 0.1;
  double step_fraction = 0.1;
  double final_fraction = 0.5;
  std::size_t repeats = 5;
  learn::LearnerConfig learner;
  std::string output_dir = "pcdal-out";
  std::size_t threads = 1;

  void validate() const {
    if (repeats < 1) throw InvalidArgument("repeats must be >= 1");
    if (strategies.empty()) throw InvalidArgument("at least one strategy is required");
    if (task == Task::Classification)
      classification.validate();
    else
      segmentation.validate();
    if (task == Task::Segmentation3D && segmentation.depth == 0)
      throw InvalidArgument("segmentation-3d needs dataset.depth > 0");
    if (task == Task::Segmentation2D && segmentation.depth != 0)
      throw InvalidArgument("segmentation-2d needs dataset.depth == 0");
    PerturbationSet::parse(perturbations);
    dispersion.validate();
    learner.validate();
    pool::budget_schedule(100, initial_fraction, step_fraction, final_fraction);
  }

  nlohmann::json to_json() const {
    nlohmann::json dataset;
    if (task == Task::Classification) {
      const auto& c = classification;
      dataset = {{"classes", c.classes},         {"samples_per_class", c.samples_per_class},
                 {"image_size", c.image_size},   {"noise", c.noise},
                 {"rare_fraction", c.rare_fraction}, {"rare_clusters", c.rare_clusters},
                 {"test_fraction", c.test_fraction}};
    } else {
      const auto& s = segmentation;
      dataset = {{"images", s.images},
                 {"height", s.height},
                 {"width", s.width},
                 {"depth", s.depth},
                 {"max_shapes", s.max_shapes},
                 {"contrast_min", s.contrast_min},
                 {"contrast_max", s.contrast_max},
                 {"noise", s.noise},
                 {"test_fraction", s.test_fraction},
                 {"strata", s.strata}};
    }
    std::vector<std::string> strategy_names;
    for (auto s : strategies) strategy_names.push_back(pool::to_string(s));
    return {{"task", to_string(task)},
            {"seed", seed},
            {"dataset", dataset},
            {"perturbations", perturbations},
            {"dispersion",
             {{"kind", to_string(dispersion.kind)},
              {"delta", dispersion.delta},
              {"epsilon", dispersion.epsilon},
              {"margin", dispersion.margin}}},
            {"strategies", strategy_names},
            {"schedule", {{"initial", initial_fraction}, {"step", step_fraction}, {"final", final_fraction}}},
            {"repeats", repeats},
            {"learner",
             {{"learning_rate", learner.learning_rate},
              {"epochs", learner.epochs},
              {"batch_size", learner.batch_size},
              {"l2", learner.l2},
              {"seed", learner.seed}}},
            {"output_dir", output_dir},
            {"threads", threads}};
  }

  /// Missing keys keep their defaults; unknown keys are rejected.
  static SimulationConfig from_json(const nlohmann::json& j) {
    SimulationConfig c;
    auto reject_unknown = [](const nlohmann::json& obj, std::initializer_list<const char*> known, const char* where) {
      for (const auto& [key, value] : obj.items())
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
          throw FormatError(std::string("unknown key '") + key + "' in " + where);
    };
    try {
      reject_unknown(j,
                     {"task", "seed", "dataset", "perturbations", "dispersion", "strategies", "schedule", "repeats",
                      "learner", "output_dir", "threads"},
                     "simulation config");
      if (j.contains("task")) c.task = parse_task(j["task"].get<std::string>());
      c.seed = j.value("seed", c.seed);
      if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        if (c.task == Task::Classification) {
          reject_unknown(d,
                         {"classes", "samples_per_class", "image_size", "noise", "rare_fraction", "rare_clusters",
                          "test_fraction"},
                         "dataset");
          auto& s = c.classification;
          s.classes = d.value("classes", s.classes);
          s.samples_per_class = d.value("samples_per_class", s.samples_per_class);
          s.image_size = d.value("image_size", s.image_size);
          s.noise = d.value("noise", s.noise);
          s.rare_fraction = d.value("rare_fraction", s.rare_fraction);
          s.rare_clusters = d.value("rare_clusters", s.rare_clusters);
          s.test_fraction = d.value("test_fraction", s.test_fraction);
        } else {
          reject_unknown(d,
                         {"images", "height", "width", "depth", "max_shapes", "contrast_min", "contrast_max", "noise",
                          "test_fraction", "strata"},
                         "dataset");
          auto& s = c.segmentation;
          s.images = d.value("images", s.images);
          s.height = d.value("height", s.height);
          s.width = d.value("width", s.width);
          s.depth = d.value("depth", s.depth);
          s.max_shapes = d.value("max_shapes", s.max_shapes);
          s.contrast_min = d.value("contrast_min", s.contrast_min);
          s.contrast_max = d.value("contrast_max", s.contrast_max);
          s.noise = d.value("noise", s.noise);
          s.test_fraction = d.value("test_fraction", s.test_fraction);
          s.strata = d.value("strata", s.strata);
        }
      }
      if (j.contains("perturbations")) c.perturbations = j["perturbations"].get<std::vector<std::string>>();
      if (j.contains("dispersion")) {
        const auto& f = j["dispersion"];
        reject_unknown(f, {"kind", "delta", "epsilon", "margin"}, "dispersion");
        if (f.contains("kind")) c.dispersion.kind = parse_dispersion_kind(f["kind"].get<std::string>());
        c.dispersion.delta = f.value("delta", c.dispersion.delta);
        c.dispersion.epsilon = f.value("epsilon", c.dispersion.epsilon);
        c.dispersion.margin = f.value("margin", c.dispersion.margin);
      }
      if (j.contains("strategies")) {
        c.strategies.clear();
        for (const auto& s : j["strategies"]) c.strategies.push_back(pool::parse_strategy(s.get<std::string>()));
      }
      if (j.contains("schedule")) {
        const auto& s = j["schedule"];
        reject_unknown(s, {"initial", "step", "final"}, "schedule");
        c.initial_fraction = s.value("initial", c.initial_fraction);
        c.step_fraction = s.value("step", c.step_fraction);
        c.final_fraction = s.value("final", c.final_fraction);
      }
      c.repeats = j.value("repeats", c.repeats);
      if (j.contains("learner")) {
        const auto& l = j["learner"];
        reject_unknown(l, {"learning_rate", "epochs", "batch_size", "l2", "seed"}, "learner");
        c.learner.learning_rate = l.value("learning_rate", c.learner.learning_rate);
        c.learner.epochs = l.value("epochs", c.learner.epochs);
        c.learner.batch_size = l.value("batch_size", c.learner.batch_size);
        c.learner.l2 = l.value("l2", c.learner.l2);
        c.learner.seed = l.value("seed", c.learner.seed);
      }
      c.output_dir = j.value("output_dir", c.output_dir);
      c.threads = j.value("threads", c.threads);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("simulation config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Report

struct ReportRow {
  std::string strategy;
  std::size_t repeat = 0;
  std::size_t round = 0;
  double fraction = 0.0;
  std::string metric;
  double value = 0.0;
};

struct SummaryRow {
  std::string strategy;
  std::size_t round = 0;
  double fraction = 0.0;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

struct SimulationReport {
  nlohmann::json config;
  std::vector<std::string> strategies;
  std::vector<std::string> metrics;
  std::size_t repeats = 0;
  std::size_t rounds = 0;
  std::vector<ReportRow> rows;  // strategy-major, then repeat, round, metric

  const ReportRow& at(std::size_t strategy, std::size_t repeat, std::size_t round, std::size_t metric) const {
    return rows.at(((strategy * repeats + repeat) * rounds + round) * metrics.size() + metric);
  }

  double value(const std::string& strategy, std::size_t repeat, std::size_t round, const std::string& metric) const {
    const auto s = std::find(strategies.begin(), strategies.end(), strategy) - strategies.begin();
    const auto m = std::find(metrics.begin(), metrics.end(), metric) - metrics.begin();
    if (s == static_cast<std::ptrdiff_t>(strategies.size()) || m == static_cast<std::ptrdiff_t>(metrics.size()))
      throw InvalidArgument("no report cell for " + strategy + "/" + metric);
    return at(static_cast<std::size_t>(s), repeat, round, static_cast<std::size_t>(m)).value;
  }

  /// Mean and sample standard deviation over repeats (0 for a single repeat).
  std::vector<SummaryRow> summary() const {
    std::vector<SummaryRow> out;
    for (std::size_t s = 0; s < strategies.size(); ++s) {
      for (std::size_t r = 0; r < rounds; ++r) {
        for (std::size_t m = 0; m < metrics.size(); ++m) {
          double sum = 0.0;
          double fraction = 0.0;
          for (std::size_t k = 0; k < repeats; ++k) {
            sum += at(s, k, r, m).value;
            fraction += at(s, k, r, m).fraction;
          }
          const double n = static_cast<double>(repeats);
          const double mean = sum / n;
          double var = 0.0;
          for (std::size_t k = 0; k < repeats; ++k) {
            const double d = at(s, k, r, m).value - mean;
            var += d * d;
          }
          const double sd = repeats > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
          out.push_back(SummaryRow{strategies[s], r, fraction / n, metrics[m], mean, sd, repeats});
        }
      }
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Simulation

namespace detail {

struct Lane {
  const SimulationConfig& cfg;
  const Dataset& data;
  const PerturbationSet& perturbations;

  AxisRoles input_roles() const {
    return data.task == Task::Segmentation3D ? AxisRoles::volume() : AxisRoles::image();
  }

  static Tensor flat_row(const Tensor& image) { return image.reshaped({1, image.size()}); }

  learn::LogisticModel fit(const std::vector<std::size_t>& idx) const {
    if (data.task == Task::Classification) {
      const std::size_t nf = data.inputs.front().size();
      std::vector<double> rows;
      rows.reserve(idx.size() * nf);
      std::vector<int> labels;
      for (auto i : idx) {
        rows.insert(rows.end(), data.inputs[i].values().begin(), data.inputs[i].values().end());
        labels.push_back(data.labels[i]);
      }
      return learn::logistic_fit(Tensor({idx.size(), nf}, std::move(rows)), labels, data.classes, cfg.learner);
    }
    std::vector<Tensor> images, masks;
    for (auto i : idx) {
      images.push_back(data.inputs[i]);
      masks.push_back(data.masks[i]);
    }
    return learn::segmenter_fit(images, masks, cfg.learner, data.classes);
  }

  /// Canonical-orientation probability prediction for one (possibly perturbed) input.
  Tensor predict(const learn::LogisticModel& m, const Tensor& input, const Transform& tr) const {
    const Tensor moved = apply(tr, input, input_roles());
    if (data.task == Task::Classification)
      return learn::logistic_predict_proba(m, flat_row(moved)).reshaped({data.classes});
    return realign(tr, learn::segmenter_predict_proba(m, moved), prediction_roles(data.task));
  }

  std::vector<ScoreRecord> score_unlabeled(const learn::LogisticModel& m, const pool::PoolState& pool,
                                           pool::Strategy strategy, const std::map<std::string, std::size_t>& by_id) const {
    std::vector<ScoreRecord> out;
    for (const auto& id : pool.unlabeled()) {
      const auto& input = data.inputs[by_id.at(id)];
      if (strategy == pool::Strategy::MaxEntropy) {
        out.push_back(ScoreRecord{id, entropy_score(predict(m, input, Transform{}), data.task), 1});
        continue;
      }
      PredictionSet set{id, data.task, {}};
      for (const auto& tr : perturbations.members()) set.predictions.emplace_back(tr, predict(m, input, tr));
      out.push_back(score(set, cfg.dispersion));
    }
    return out;
  }

  std::vector<double> evaluate(const learn::LogisticModel& m) const {
    if (data.task == Task::Classification) {
      std::vector<double> pred, truth;
      for (auto i : data.test) {
        const auto p = predict(m, data.inputs[i], Transform{});
        const auto best = std::max_element(p.values().begin(), p.values().end()) - p.values().begin();
        pred.push_back(static_cast<double>(best));
        truth.push_back(static_cast<double>(data.labels[i]));
      }
      const auto n = pred.size();
      const auto c = metrics::confusion(Tensor({n}, pred), Tensor({n}, truth), data.classes);
      return {metrics::accuracy(c), metrics::precision_macro(c)};
    }
    double dice = 0.0, pa = 0.0, hd = 0.0;
    std::size_t hd_defined = 0;
    for (auto i : data.test) {
      const auto p = predict(m, data.inputs[i], Transform{});
      const std::size_t n = data.inputs[i].size();
      std::vector<double> mask(n);
      for (std::size_t k = 0; k < n; ++k) mask[k] = p[n + k] > p[k] ? 1.0 : 0.0;
      const Tensor pm(data.inputs[i].shape(), std::move(mask));
      dice += metrics::dice(pm, data.masks[i]);
      pa += metrics::pixel_accuracy(pm, data.masks[i]);
      try {
        hd += metrics::hd95(pm, data.masks[i]);
        ++hd_defined;
      } catch (const UndefinedMetric&) {
        // skipped and counted
      }
    }
    const double n = static_cast<double>(data.test.size());
    const double hd_mean = hd_defined ? hd / static_cast<double>(hd_defined) : std::nan("");
    return {dice / n, pa / n, hd_mean, static_cast<double>(data.test.size() - hd_defined)};
  }
};

inline std::vector<std::string> metric_names(Task t) {
  if (t == Task::Classification) return {"acc", "pre"};
  return {"dice", "pa", "hd95", "hd95_skipped"};
}

/// Initial labeled pool for one repeat: one fold of a seeded stratified split,
/// trimmed or topped up from the next folds to exactly `count` ids.
inline std::vector<std::string> initial_pool(const Dataset& d, std::size_t count, double initial_fraction,
                                             std::uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (auto i : d.train) {
    ids.push_back(d.ids[i]);
    labels.push_back(d.labels[i]);
  }
  const auto k = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(1.0 / initial_fraction + 0.5)));
  const auto folds = pool::stratified_kfold(ids, labels, k, seed);
  std::vector<std::string> out;
  for (const auto& fold : folds.folds) {
    for (const auto& id : fold) {
      if (out.size() == count) return out;
      out.push_back(id);
    }
  }
  return out;
}

}  // namespace detail

inline Dataset make_dataset(const SimulationConfig& cfg) {
  return cfg.task == Task::Classification ? synth_classification(cfg.classification, cfg.seed)
                                          : synth_segmentation(cfg.segmentation, cfg.seed);
}

/// Runs every (repeat, strategy) lane. Within a repeat all strategies share
/// the initial pool; the learner is refit from scratch on the id-sorted
/// labeled set every round.
inline SimulationReport run_simulation(const SimulationConfig& cfg) {
  cfg.validate();
  const Dataset data = make_dataset(cfg);
  const PerturbationSet perturbations = PerturbationSet::parse(cfg.perturbations);
  const auto schedule =
      pool::budget_schedule(data.train.size(), cfg.initial_fraction, cfg.step_fraction, cfg.final_fraction);

  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < data.ids.size(); ++i) by_id[data.ids[i]] = i;
  std::vector<std::string> train_ids;
  for (auto i : data.train) train_ids.push_back(data.ids[i]);

  SimulationReport report;
  report.config = cfg.to_json();
  for (auto s : cfg.strategies) report.strategies.push_back(pool::to_string(s));
  report.metrics = detail::metric_names(cfg.task);
  report.repeats = cfg.repeats;
  report.rounds = schedule.size();

  const std::size_t n_strategies = cfg.strategies.size();
  const std::size_t per_lane = report.rounds * report.metrics.size();
  report.rows.resize(n_strategies * cfg.repeats * per_lane);

  std::vector<std::vector<std::string>> initial(cfg.repeats);
  for (std::size_t r = 0; r < cfg.repeats; ++r)
    initial[r] = detail::initial_pool(data, schedule.front(), cfg.initial_fraction, derive_seed(cfg.seed, 1000 + r));

  const detail::Lane lane{cfg, data, perturbations};
  parallel_for(n_strategies * cfg.repeats, cfg.threads, [&](std::size_t job) {
    const std::size_t s = job / cfg.repeats;
    const std::size_t r = job % cfg.repeats;
    const auto strategy = cfg.strategies[s];
    const std::uint64_t lane_seed = derive_seed(cfg.seed, r);
    pool::PoolState state(train_ids, initial[r], lane_seed);
    std::size_t round = 0;
    try {
      std::optional<learn::LogisticModel> model;
      for (round = 0; round < report.rounds; ++round) {
        if (round > 0 && schedule[round] > 0) {
          std::vector<ScoreRecord> scores;
          if (strategy != pool::Strategy::Random) scores = lane.score_unlabeled(*model, state, strategy, by_id);
          const auto picked =
              pool::select(strategy, scores, state, schedule[round], derive_seed(lane_seed, round));
          state = pool::advance_round(state, strategy, picked);
        }
        std::vector<std::size_t> idx;
        for (const auto& id : state.labeled()) idx.push_back(by_id.at(id));
        model = lane.fit(idx);
        const auto values = lane.evaluate(*model);
        const double fraction =
            static_cast<double>(state.labeled().size()) / static_cast<double>(train_ids.size());
        for (std::size_t m = 0; m < values.size(); ++m)
          report.rows[job * per_lane + round * report.metrics.size() + m] =
              ReportRow{report.strategies[s], r, round, fraction, report.metrics[m], values[m]};
        if (state.labeled().size() + state.unlabeled().size() != train_ids.size())
          throw Error("pool conservation violated");
      }
    } catch (const std::exception& e) {
      throw Error("strategy " + report.strategies[s] + ", repeat " + std::to_string(r) + ", round " +
                  std::to_string(round) + ": " + e.what());
    }
  });
  return report;
}

// ---------------------------------------------------------------------------
// Emission

namespace detail {

inline std::string csv_number(double v) { return std::isnan(v) ? "nan" : io::format_double(v); }

inline nlohmann::json json_number(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

}  // namespace detail

inline std::string report_csv(const SimulationReport& rep) {
  std::string out = "strategy,repeat,round,fraction,metric,value\n";
  for (const auto& r : rep.rows)
    out += r.strategy + "," + std::to_string(r.repeat) + "," + std::to_string(r.round) + "," +
           io::format_double(r.fraction) + "," + r.metric + "," + detail::csv_number(r.value) + "\n";
  return out;
}

inline std::string summary_csv(const SimulationReport& rep) {
  std::string out = "strategy,round,fraction,metric,mean,std,n\n";
  for (const auto& r : rep.summary())
    out += r.strategy + "," + std::to_string(r.round) + "," + io::format_double(r.fraction) + "," + r.metric + "," +
           detail::csv_number(r.mean) + "," + detail::csv_number(r.std) + "," + std::to_string(r.n) + "\n";
  return out;
}

inline std::string report_json(const SimulationReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"strategy", r.strategy},
                    {"repeat", r.repeat},
                    {"round", r.round},
                    {"fraction", r.fraction},
                    {"metric", r.metric},
                    {"value", detail::json_number(r.value)}});
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& r : rep.summary())
    summary.push_back({{"strategy", r.strategy},
                       {"round", r.round},
                       {"fraction", r.fraction},
                       {"metric", r.metric},
                       {"mean", detail::json_number(r.mean)},
                       {"std", detail::json_number(r.std)},
                       {"n", r.n}});
  nlohmann::json doc{{"config", rep.config},  {"strategies", rep.strategies}, {"metrics", rep.metrics},
                     {"repeats", rep.repeats}, {"rounds", rep.rounds},         {"rows", rows},
                     {"summary", summary}};
  return doc.dump(2) + "\n";
}

/// Writes report.csv, report.json and summary.csv into `dir`.
inline void emit_report(const SimulationReport& rep, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  io::write_text(dir / "report.csv", report_csv(rep));
  io::write_text(dir / "report.json", report_json(rep));
  io::write_text(dir / "summary.csv", summary_csv(rep));
}

}  // namespace pcdal::sim

#endif  // PCDAL_SIMULATOR_HPP
