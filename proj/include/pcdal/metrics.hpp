#ifndef PCDAL_METRICS_HPP
#define PCDAL_METRICS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pcdal/error.hpp"
#include "pcdal/tensor.hpp"

namespace pcdal::metrics {

/// One-vs-rest counts for each class.
struct ConfusionCounts {
  std::vector<std::uint64_t> tp, tn, fp, fn;
  std::uint64_t total = 0;

  std::size_t classes() const noexcept { return tp.size(); }
};

namespace detail {

inline std::size_t as_label(double v, std::size_t n_classes) {
  if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(n_classes))
    throw InvalidArgument("label " + std::to_string(v) + " outside [0, " + std::to_string(n_classes) + ")");
  return static_cast<std::size_t>(v);
}

inline bool as_binary(double v) {
  if (v == 0.0) return false;
  if (v == 1.0) return true;
  throw InvalidArgument("mask value " + std::to_string(v) + " is not binary");
}

inline void same_shape(const Tensor& a, const Tensor& b) {
  if (a.empty() || b.empty()) throw ShapeError("metric inputs must be non-empty");
  if (a.shape() != b.shape())
    throw ShapeError("shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
}

}  // namespace detail

inline ConfusionCounts confusion(const Tensor& pred, const Tensor& truth, std::size_t n_classes) {
  if (n_classes < 1) throw InvalidArgument("n_classes must be >= 1");
  detail::same_shape(pred, truth);
  ConfusionCounts c;
  c.tp.assign(n_classes, 0);
  c.tn.assign(n_classes, 0);
  c.fp.assign(n_classes, 0);
  c.fn.assign(n_classes, 0);
  c.total = pred.size();
  std::vector<std::uint64_t> pred_count(n_classes, 0), truth_count(n_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = detail::as_label(pred[i], n_classes);
    const auto t = detail::as_label(truth[i], n_classes);
    ++pred_count[p];
    ++truth_count[t];
    if (p == t) ++c.tp[p];
  }
  for (std::size_t k = 0; k < n_classes; ++k) {
    c.fp[k] = pred_count[k] - c.tp[k];
    c.fn[k] = truth_count[k] - c.tp[k];
    c.tn[k] = c.total - c.tp[k] - c.fp[k] - c.fn[k];
  }
  return c;
}

/// Fraction of correctly labeled elements.
inline double accuracy(const ConfusionCounts& c) {
  if (c.total == 0) throw UndefinedMetric("accuracy of zero elements");
  std::uint64_t correct = 0;
  for (auto v : c.tp) correct += v;
  return static_cast<double>(correct) / static_cast<double>(c.total);
}

inline double precision(const ConfusionCounts& c, std::size_t cls) {
  const auto denom = c.tp.at(cls) + c.fp.at(cls);
  if (denom == 0) throw UndefinedMetric("class " + std::to_string(cls) + " was never predicted");
  return static_cast<double>(c.tp[cls]) / static_cast<double>(denom);
}

/// Mean of per-class precision over classes that were predicted at least once.
inline double precision_macro(const ConfusionCounts& c) {
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t k = 0; k < c.classes(); ++k) {
    if (c.tp[k] + c.fp[k] == 0) continue;
    sum += precision(c, k);
    ++defined;
  }
  if (defined == 0) throw UndefinedMetric("precision undefined for every class");
  return sum / static_cast<double>(defined);
}

/// 2TP / (2TP + FP + FN); two empty masks score 1.
inline double dice(const Tensor& pred, const Tensor& truth) {
  detail::same_shape(pred, truth);
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = detail::as_binary(pred[i]);
    const bool t = detail::as_binary(truth[i]);
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

inline double pixel_accuracy(const Tensor& pred, const Tensor& truth) {
  detail::same_shape(pred, truth);
  std::uint64_t agree = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    agree += detail::as_binary(pred[i]) == detail::as_binary(truth[i]);
  return static_cast<double>(agree) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Surface distances

using Coord = std::array<std::size_t, kMaxRank>;

/// Foreground elements with at least one face neighbour in the background.
/// Positions outside the grid count as background.
struct SurfaceSet {
  Shape shape;
  std::vector<double> spacing;
  std::vector<Coord> points;

  bool empty() const noexcept { return points.empty(); }
  std::size_t size() const noexcept { return points.size(); }
};

inline std::vector<double> resolve_spacing(const Shape& shape, std::vector<double> spacing) {
  if (spacing.empty()) spacing.assign(shape.size(), 1.0);
  if (spacing.size() != shape.size()) throw InvalidArgument("spacing must give one value per axis");
  for (double s : spacing)
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("spacing must be positive and finite");
  return spacing;
}

inline SurfaceSet extract_surface(const Tensor& mask, std::vector<double> spacing = {}) {
  if (mask.empty()) throw ShapeError("mask must be non-empty");
  SurfaceSet s{mask.shape(), resolve_spacing(mask.shape(), std::move(spacing)), {}};
  const auto& shape = mask.shape();
  const auto strides = mask.strides();
  const std::size_t rank = mask.rank();
  std::vector<bool> fg(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) fg[i] = detail::as_binary(mask[i]);

  Coord idx{};
  for (std::size_t flat = 0; flat < mask.size(); ++flat) {
    if (fg[flat]) {
      bool boundary = false;
      for (std::size_t a = 0; a < rank && !boundary; ++a) {
        if (idx[a] == 0 || idx[a] + 1 == shape[a])
          boundary = true;
        else
          boundary = !fg[flat - strides[a]] || !fg[flat + strides[a]];
      }
      if (boundary) s.points.push_back(idx);
    }
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  return s;
}

namespace detail {

// Exact squared Euclidean distance transform (Felzenszwalb-Huttenlocher),
// one lower-envelope-of-parabolas pass per axis. Seeds start at 0, all other
// cells at +inf.
inline void squared_edt_1d(std::vector<double>& f, double step, std::vector<double>& out,
                           std::vector<std::size_t>& v, std::vector<double>& z) {
  const std::size_t n = f.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    const double xq = static_cast<double>(q) * step;
    if (!any) {
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      k = 0;
      any = true;
      continue;
    }
    double s = 0.0;
    while (true) {
      const double xv = static_cast<double>(v[k]) * step;
      s = ((f[q] + xq * xq) - (f[v[k]] + xv * xv)) / (2.0 * (xq - xv));
      if (s > z[k]) break;
      --k;  // z[0] is -inf, so this never leaves the envelope empty
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (!any) {
    std::fill(out.begin(), out.end(), inf);
    return;
  }
  std::size_t j = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const double xp = static_cast<double>(p) * step;
    while (z[j + 1] < xp) ++j;
    const double d = static_cast<double>(p > v[j] ? p - v[j] : v[j] - p) * step;
    out[p] = f[v[j]] + d * d;
  }
}

inline std::vector<double> squared_distance_to(const SurfaceSet& seeds) {
  const auto& shape = seeds.shape;
  const std::size_t total = shape_volume(shape);
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(total, inf);
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  for (const auto& p : seeds.points) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < shape.size(); ++a) off += p[a] * strides[a];
    grid[off] = 0.0;
  }
  for (std::size_t axis = 0; axis < shape.size(); ++axis) {
    const std::size_t n = shape[axis];
    const std::size_t stride = strides[axis];
    std::vector<double> line(n), out(n), z(n + 1);
    std::vector<std::size_t> v(n);
    const std::size_t outer = total / (n * stride);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t inner = 0; inner < stride; ++inner) {
        const std::size_t base = o * n * stride + inner;
        for (std::size_t i = 0; i < n; ++i) line[i] = grid[base + i * stride];
        squared_edt_1d(line, seeds.spacing[axis], out, v, z);
        for (std::size_t i = 0; i < n; ++i) grid[base + i * stride] = out[i];
      }
    }
  }
  return grid;
}

}  // namespace detail

/// Distance from every point of `from` to the nearest point of `to`, in `from` order.
inline std::vector<double> directed_distances(const SurfaceSet& from, const SurfaceSet& to) {
  if (from.shape != to.shape) throw ShapeError("surface sets come from different grids");
  if (to.empty()) throw UndefinedMetric("distance to an empty surface");
  const auto grid = detail::squared_distance_to(to);
  Shape strides(from.shape.size(), 1);
  for (std::size_t i = from.shape.size(); i-- > 1;) strides[i - 1] = strides[i] * from.shape[i];
  std::vector<double> out;
  out.reserve(from.size());
  for (const auto& p : from.points) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < from.shape.size(); ++a) off += p[a] * strides[a];
    out.push_back(std::sqrt(grid[off]));
  }
  return out;
}

/// Percentile with linear interpolation between order statistics.
inline double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw UndefinedMetric("percentile of an empty sample");
  if (!(pct >= 0.0 && pct <= 100.0)) throw InvalidArgument("percentile must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= values.size() || frac == 0.0) return values[lo];
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

struct HausdorffOptions {
  /// Pooled: one percentile over d(a->b) and d(b->a) together.
  /// PerSideMax: max of the two directed percentiles.
  enum class Pooling { Pooled, PerSideMax };

  double percentile = 95.0;
  Pooling pooling = Pooling::Pooled;
  std::vector<double> spacing;
};

/// Percentile surface distance; percentile 100 gives the classical Hausdorff distance.
inline double hausdorff(const Tensor& a, const Tensor& b, const HausdorffOptions& opt = {}) {
  detail::same_shape(a, b);
  const auto sa = extract_surface(a, opt.spacing);
  const auto sb = extract_surface(b, opt.spacing);
  if (sa.empty() && sb.empty()) throw UndefinedMetric("hd95 undefined: both masks are empty");
  if (sa.empty()) throw UndefinedMetric("hd95 undefined: first mask is empty");
  if (sb.empty()) throw UndefinedMetric("hd95 undefined: second mask is empty");
  auto ab = directed_distances(sa, sb);
  auto ba = directed_distances(sb, sa);
  if (opt.pooling == HausdorffOptions::Pooling::PerSideMax)
    return std::max(percentile(std::move(ab), opt.percentile), percentile(std::move(ba), opt.percentile));
  ab.insert(ab.end(), ba.begin(), ba.end());
  return percentile(std::move(ab), opt.percentile);
}

inline double hd95(const Tensor& a, const Tensor& b, std::vector<double> spacing = {}) {
  HausdorffOptions opt;
  opt.spacing = std::move(spacing);
  return hausdorff(a, b, opt);
}

}  // namespace pcdal::metrics

#endif  // PCDAL_METRICS_HPP
