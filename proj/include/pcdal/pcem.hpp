#ifndef PCDAL_PCEM_HPP
#define PCDAL_PCEM_HPP

// Perturbation-consistency scoring. A sample is scored from M probability
// predictions, one per perturbation, all in canonical orientation:
//
//   mean      = (1/M) sum_i P_i
//   cls score = (1/C) sum_c (1/M) sum_i f(P_i[c] - mean[c])
//   seg score = (1/N) sum_pos cls score at pos
//
// with f the squared deviation by default.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pcdal/error.hpp"
#include "pcdal/parallel.hpp"
#include "pcdal/perturbation.hpp"
#include "pcdal/ptns.hpp"
#include "pcdal/tensor.hpp"

namespace pcdal {

enum class Task { Classification, Segmentation2D, Segmentation3D };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::Classification: return "classification";
    case Task::Segmentation2D: return "segmentation-2d";
    case Task::Segmentation3D: return "segmentation-3d";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  if (s == "classification") return Task::Classification;
  if (s == "segmentation-2d") return Task::Segmentation2D;
  if (s == "segmentation-3d") return Task::Segmentation3D;
  throw InvalidArgument("unknown task '" + std::string(s) + "'");
}

inline bool is_segmentation(Task t) { return t != Task::Classification; }

/// Axis layout of prediction tensors: class vectors, C x H x W, or C x D x H x W.
inline AxisRoles prediction_roles(Task t) {
  switch (t) {
    case Task::Classification: return AxisRoles::vector();
    case Task::Segmentation2D: return AxisRoles::map2d();
    case Task::Segmentation3D: return AxisRoles::map3d();
  }
  return {};
}

/// Class count and spatial position count for a prediction tensor of `task`.
inline std::pair<std::size_t, std::size_t> class_position_counts(Task task, const Shape& shape) {
  if (task == Task::Classification) {
    // 1 x n tensors are accepted as well as plain n-vectors
    if (shape.size() > 2 || (shape.size() == 2 && shape[0] != 1))
      throw ShapeError("classification prediction must be n or 1xn, got " + shape_to_string(shape));
    return {shape.back(), 1};
  }
  const std::size_t want = task == Task::Segmentation2D ? 3 : 4;
  if (shape.size() != want)
    throw ShapeError(to_string(task) + " prediction must have rank " + std::to_string(want) + ", got " +
                     shape_to_string(shape));
  return {shape[0], shape_volume(shape) / shape[0]};
}

struct DispersionFn {
  enum class Kind { MSE, L1, SmoothL1, Huber, KL, Hinge };

  Kind kind = Kind::MSE;
  double delta = 1.0;
  double epsilon = 1e-12;
  double margin = 0.1;

  void validate() const {
    if (!(delta > 0.0)) throw InvalidArgument("dispersion delta must be > 0");
    if (!(epsilon > 0.0)) throw InvalidArgument("dispersion epsilon must be > 0");
    if (!(margin >= 0.0)) throw InvalidArgument("dispersion margin must be >= 0");
  }

  /// Pointwise penalty of a deviation d for every kind except KL.
  double penalty(double d) const {
    const double a = std::abs(d);
    switch (kind) {
      case Kind::MSE: return d * d;
      case Kind::L1: return a;
      case Kind::SmoothL1: return a < delta ? 0.5 * d * d / delta : a - 0.5 * delta;
      case Kind::Huber: return a <= delta ? 0.5 * d * d : delta * (a - 0.5 * delta);
      case Kind::Hinge: return std::max(0.0, a - margin);
      case Kind::KL: break;
    }
    throw InvalidArgument("KL has no pointwise penalty");
  }
};

inline constexpr std::array<std::pair<DispersionFn::Kind, std::string_view>, 6> kDispersionNames{{
    {DispersionFn::Kind::MSE, "mse"},
    {DispersionFn::Kind::L1, "l1"},
    {DispersionFn::Kind::SmoothL1, "smooth_l1"},
    {DispersionFn::Kind::Huber, "huber"},
    {DispersionFn::Kind::KL, "kl"},
    {DispersionFn::Kind::Hinge, "hinge"},
}};

inline std::string to_string(DispersionFn::Kind k) {
  for (const auto& [kind, name] : kDispersionNames)
    if (kind == k) return std::string(name);
  return "?";
}

inline DispersionFn::Kind parse_dispersion_kind(std::string_view s) {
  for (const auto& [kind, name] : kDispersionNames)
    if (name == s) return kind;
  throw InvalidArgument("unknown dispersion function '" + std::string(s) + "'");
}

struct ScoreRecord {
  std::string sample_id;
  double score = 0.0;
  std::size_t n_predictions = 0;

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

struct PredictionSet {
  std::string sample_id;
  Task task = Task::Classification;
  std::vector<std::pair<Transform, Tensor>> predictions;

  /// Checks member count, shape agreement and class-axis normalization.
  void validate(double tolerance = 1e-6) const;
};

namespace detail {

/// Mean over members at flat index k. Exact when all members agree.
inline double member_mean(std::span<const std::span<const double>> members, std::size_t k) {
  double lo = members[0][k], hi = lo, sum = 0.0;
  for (const auto& m : members) {
    const double v = m[k];
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  return lo == hi ? lo : sum / static_cast<double>(members.size());
}

}  // namespace detail

/// Dispersion of M members laid out class-major (index = c * positions + pos),
/// without any normalization checks. Positions are averaged, classes are
/// averaged for pointwise kinds and summed for KL.
inline double score_members(std::span<const std::span<const double>> members, std::size_t classes,
                            std::size_t positions, const DispersionFn& f) {
  f.validate();
  if (members.size() < 2) throw InvalidArgument("at least two predictions are required");
  const std::size_t n = classes * positions;
  for (const auto& m : members)
    if (m.size() != n) throw ShapeError("prediction members differ in size");

  const double inv_m = 1.0 / static_cast<double>(members.size());
  const bool kl = f.kind == DispersionFn::Kind::KL;
  double total = 0.0;
  for (std::size_t pos = 0; pos < positions; ++pos) {
    double here = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const std::size_t k = c * positions + pos;
      const double mean = detail::member_mean(members, k);
      double acc = 0.0;
      for (const auto& m : members) {
        const double p = m[k];
        if (kl) {
          if (p != mean) acc += p * std::log((p + f.epsilon) / (mean + f.epsilon));
        } else {
          acc += f.penalty(p - mean);
        }
      }
      here += acc * inv_m;
    }
    total += kl ? here : here / static_cast<double>(classes);
  }
  return std::max(0.0, total / static_cast<double>(positions));
}

inline void PredictionSet::validate(double tolerance) const {
  if (predictions.size() < 2)
    throw InvalidArgument(sample_id + ": a prediction set needs at least two members");
  const auto& first = predictions.front().second;
  for (const auto& [tr, t] : predictions)
    if (t.shape() != first.shape())
      throw ShapeError(sample_id + ": member " + to_string(tr) + " has shape " + shape_to_string(t.shape()) +
                       ", expected " + shape_to_string(first.shape()));
  const auto [classes, positions] = class_position_counts(task, first.shape());
  for (const auto& [tr, t] : predictions) {
    const auto v = t.values();
    for (std::size_t pos = 0; pos < positions; ++pos) {
      double sum = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        const double p = v[c * positions + pos];
        if (!(p >= 0.0)) throw InvalidArgument(sample_id + ": negative or NaN probability in " + to_string(tr));
        sum += p;
      }
      if (std::abs(sum - 1.0) > tolerance)
        throw InvalidArgument(sample_id + ": member " + to_string(tr) + " is not normalized along the class axis");
    }
  }
}

/// Elementwise mean of the members.
inline Tensor mean_prediction(const PredictionSet& s) {
  if (s.predictions.empty()) throw InvalidArgument("empty prediction set");
  const auto& first = s.predictions.front().second;
  std::vector<std::span<const double>> members;
  for (const auto& [tr, t] : s.predictions) {
    if (t.shape() != first.shape()) throw ShapeError(s.sample_id + ": prediction members differ in shape");
    members.push_back(t.values());
  }
  std::vector<double> out(first.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = detail::member_mean(members, k);
  return Tensor(first.shape(), std::move(out));
}

namespace detail {

inline ScoreRecord score_set(const PredictionSet& s, const DispersionFn& f) {
  s.validate();
  const auto [classes, positions] = class_position_counts(s.task, s.predictions.front().second.shape());
  std::vector<std::span<const double>> members;
  for (const auto& [tr, t] : s.predictions) members.push_back(t.values());
  return ScoreRecord{s.sample_id, score_members(members, classes, positions, f), s.predictions.size()};
}

}  // namespace detail

inline ScoreRecord classification_score(const PredictionSet& s, const DispersionFn& f = {}) {
  if (s.task != Task::Classification)
    throw InvalidArgument(s.sample_id + ": classification_score on a " + to_string(s.task) + " set");
  return detail::score_set(s, f);
}

inline ScoreRecord segmentation_score(const PredictionSet& s, const DispersionFn& f = {}) {
  if (!is_segmentation(s.task))
    throw InvalidArgument(s.sample_id + ": segmentation_score on a classification set");
  return detail::score_set(s, f);
}

inline ScoreRecord score(const PredictionSet& s, const DispersionFn& f = {}) {
  return is_segmentation(s.task) ? segmentation_score(s, f) : classification_score(s, f);
}

inline constexpr double kEntropyEpsilon = 1e-12;

/// Shannon entropy -sum p ln(p + eps) of a class vector, or the mean per-position
/// entropy of a segmentation map.
inline double entropy_score(const Tensor& p, Task task = Task::Classification, double tolerance = 1e-6) {
  const auto [classes, positions] = class_position_counts(task, p.shape());
  const auto v = p.values();
  double total = 0.0;
  for (std::size_t pos = 0; pos < positions; ++pos) {
    double h = 0.0, sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double q = v[c * positions + pos];
      if (!(q >= 0.0)) throw InvalidArgument("entropy of a negative or NaN probability");
      sum += q;
      h -= q * std::log(q + kEntropyEpsilon);
    }
    if (std::abs(sum - 1.0) > tolerance) throw InvalidArgument("entropy of a non-normalized distribution");
    total += std::max(0.0, h);
  }
  return total / static_cast<double>(positions);
}

// ---------------------------------------------------------------------------
// Batch scoring from a manifest of PTNS files.

struct PredictionRef {
  Transform perturbation;
  std::filesystem::path path;
  bool realigned = true;
};

struct SampleDescriptor {
  std::string sample_id;
  Task task = Task::Classification;
  std::vector<PredictionRef> predictions;
};

struct BatchEntry {
  std::string sample_id;
  std::optional<ScoreRecord> record;
  std::string error;

  bool ok() const { return record.has_value(); }
};

/// Loads a descriptor's tensors and realigns members not yet in canonical orientation.
inline PredictionSet load_prediction_set(const SampleDescriptor& d) {
  PredictionSet s{d.sample_id, d.task, {}};
  const auto roles = prediction_roles(d.task);
  for (const auto& ref : d.predictions) {
    Tensor t = read_tensor(ref.path);
    if (!ref.realigned && is_segmentation(d.task)) t = realign(ref.perturbation, t, roles);
    s.predictions.emplace_back(ref.perturbation, std::move(t));
  }
  return s;
}

/// Scores every sample; failures are recorded per entry and do not stop the
/// batch. When `set` is given, each sample must carry exactly its members.
inline std::vector<BatchEntry> score_batch(const std::vector<SampleDescriptor>& manifest,
                                           const std::optional<PerturbationSet>& set, const DispersionFn& f,
                                           std::size_t threads = 1) {
  f.validate();
  std::vector<BatchEntry> out(manifest.size());
  parallel_for(manifest.size(), threads, [&](std::size_t i) {
    const auto& d = manifest[i];
    out[i].sample_id = d.sample_id;
    try {
      if (set) {
        auto want = set->names();
        std::vector<std::string> have;
        for (const auto& r : d.predictions) have.push_back(to_string(r.perturbation));
        std::sort(want.begin(), want.end());
        std::sort(have.begin(), have.end());
        if (want != have) throw InvalidArgument("perturbations do not match the configured set");
      }
      out[i].record = score(load_prediction_set(d), f);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

}  // namespace pcdal

#endif  // PCDAL_PCEM_HPP
