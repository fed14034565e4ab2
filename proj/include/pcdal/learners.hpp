#ifndef PCDAL_LEARNERS_HPP
#define PCDAL_LEARNERS_HPP

// Reference learners: multinomial logistic regression trained with mini-batch
// gradient descent, and a per-pixel segmenter built on the same model.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcdal/error.hpp"
#include "pcdal/ptns.hpp"
#include "pcdal/random.hpp"
#include "pcdal/tensor.hpp"

namespace pcdal::learn {

struct LearnerConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double l2 = 1e-3;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be > 0");
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
    if (!(l2 >= 0.0)) throw InvalidArgument("l2 penalty must be >= 0");
  }
};

struct LogisticModel {
  std::size_t classes = 0;
  std::size_t features = 0;
  std::vector<double> weights;  // classes x features, row-major
  std::vector<double> bias;     // classes

  static LogisticModel zeros(std::size_t classes, std::size_t features) {
    return LogisticModel{classes, features, std::vector<double>(classes * features, 0.0),
                         std::vector<double>(classes, 0.0)};
  }

  std::size_t parameter_count() const { return weights.size() + bias.size(); }

  friend bool operator==(const LogisticModel&, const LogisticModel&) = default;
};

namespace detail {

inline void check_design(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("feature matrix must be rank 2 (samples x features)");
  for (double v : x.values())
    if (!std::isfinite(v)) throw InvalidArgument("feature matrix contains NaN or infinite values");
}

/// Writes softmax(W x + b) into `out`.
inline void forward(const LogisticModel& m, std::span<const double> x, std::span<double> out) {
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < m.classes; ++c) {
    double z = m.bias[c];
    const double* w = m.weights.data() + c * m.features;
    for (std::size_t f = 0; f < m.features; ++f) z += w[f] * x[f];
    out[c] = z;
    peak = std::max(peak, z);
  }
  double total = 0.0;
  for (std::size_t c = 0; c < m.classes; ++c) {
    out[c] = std::exp(out[c] - peak);
    total += out[c];
  }
  for (std::size_t c = 0; c < m.classes; ++c) out[c] /= total;
}

}  // namespace detail

/// Mean cross-entropy over `rows` plus 0.5 * l2 * ||W||^2. When gradient
/// buffers are given they receive d(loss)/dW and d(loss)/db.
inline double loss_and_gradient(const LogisticModel& m, const Tensor& x, std::span<const int> labels,
                                std::span<const std::size_t> rows, double l2, std::vector<double>* grad_w = nullptr,
                                std::vector<double>* grad_b = nullptr) {
  const std::size_t nf = m.features;
  std::vector<double> p(m.classes);
  if (grad_w) grad_w->assign(m.weights.size(), 0.0);
  if (grad_b) grad_b->assign(m.bias.size(), 0.0);
  double loss = 0.0;
  const auto data = x.values();
  for (auto r : rows) {
    const auto xr = data.subspan(r * nf, nf);
    detail::forward(m, xr, p);
    const auto y = static_cast<std::size_t>(labels[r]);
    loss -= std::log(std::max(p[y], 1e-300));
    if (!grad_w) continue;
    for (std::size_t c = 0; c < m.classes; ++c) {
      const double g = p[c] - (c == y ? 1.0 : 0.0);
      (*grad_b)[c] += g;
      double* gw = grad_w->data() + c * nf;
      for (std::size_t f = 0; f < nf; ++f) gw[f] += g * xr[f];
    }
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  loss *= inv;
  double sq = 0.0;
  for (double w : m.weights) sq += w * w;
  loss += 0.5 * l2 * sq;
  if (grad_w) {
    for (std::size_t i = 0; i < grad_w->size(); ++i) (*grad_w)[i] = (*grad_w)[i] * inv + l2 * m.weights[i];
    for (auto& g : *grad_b) g *= inv;
  }
  return loss;
}

inline double full_loss(const LogisticModel& m, const Tensor& x, std::span<const int> labels, double l2) {
  std::vector<std::size_t> rows(x.extent(0));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return loss_and_gradient(m, x, labels, rows, l2);
}

/// Mini-batch gradient descent from a zero initialization. Each epoch visits
/// the samples in an order drawn from Pcg32(derive_seed(seed, epoch)).
/// `epoch_losses`, when given, receives the full training loss after every epoch.
inline LogisticModel logistic_fit(const Tensor& x, std::span<const int> labels, std::size_t classes,
                                  const LearnerConfig& cfg, std::vector<double>* epoch_losses = nullptr) {
  cfg.validate();
  detail::check_design(x);
  const std::size_t n = x.extent(0);
  const std::size_t nf = x.extent(1);
  if (n == 0 || labels.empty()) throw InvalidArgument("empty training set");
  if (labels.size() != n) throw ShapeError("label count does not match feature rows");
  if (classes < 2) throw InvalidArgument("need at least two classes");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw InvalidArgument("label out of range");

  auto m = LogisticModel::zeros(classes, nf);
  std::vector<std::size_t> order(n);
  std::vector<double> gw, gb;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Pcg32 rng(derive_seed(cfg.seed, epoch));
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      loss_and_gradient(m, x, labels, std::span(order).subspan(start, stop - start), cfg.l2, &gw, &gb);
      for (std::size_t i = 0; i < m.weights.size(); ++i) m.weights[i] -= cfg.learning_rate * gw[i];
      for (std::size_t c = 0; c < classes; ++c) m.bias[c] -= cfg.learning_rate * gb[c];
    }
    if (epoch_losses) epoch_losses->push_back(full_loss(m, x, labels, cfg.l2));
  }
  return m;
}

/// Row-wise class probabilities, samples x classes.
inline Tensor logistic_predict_proba(const LogisticModel& m, const Tensor& x) {
  detail::check_design(x);
  if (x.extent(1) != m.features)
    throw ShapeError("model expects " + std::to_string(m.features) + " features, got " + std::to_string(x.extent(1)));
  const std::size_t n = x.extent(0);
  std::vector<double> out(n * m.classes);
  for (std::size_t r = 0; r < n; ++r)
    detail::forward(m, x.values().subspan(r * m.features, m.features),
                    std::span(out).subspan(r * m.classes, m.classes));
  return Tensor({n, m.classes}, std::move(out));
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradientCheckConfig {
  std::size_t classes = 3;
  std::size_t features = 5;
  std::size_t samples = 16;
  double l2 = 1e-2;
  double step = 1e-5;
  std::uint64_t seed = 0;
};

/// Largest relative error between analytic and central-difference gradients,
/// evaluated at the zero model and at a random model.
inline double gradient_check(const GradientCheckConfig& cfg) {
  Pcg32 rng(cfg.seed);
  std::vector<double> xs(cfg.samples * cfg.features);
  for (auto& v : xs) v = rng.normal();
  const Tensor x({cfg.samples, cfg.features}, std::move(xs));
  std::vector<int> y(cfg.samples);
  for (auto& v : y) v = static_cast<int>(rng.bounded(static_cast<std::uint32_t>(cfg.classes)));
  std::vector<std::size_t> rows(cfg.samples);
  std::iota(rows.begin(), rows.end(), std::size_t{0});

  auto random_model = LogisticModel::zeros(cfg.classes, cfg.features);
  for (auto& w : random_model.weights) w = rng.normal(0.0, 0.5);
  for (auto& b : random_model.bias) b = rng.normal(0.0, 0.5);

  double worst = 0.0;
  for (const auto& start : {LogisticModel::zeros(cfg.classes, cfg.features), random_model}) {
    std::vector<double> gw, gb;
    loss_and_gradient(start, x, y, rows, cfg.l2, &gw, &gb);
    auto probe = start;
    auto compare = [&](double& param, double analytic) {
      const double keep = param;
      param = keep + cfg.step;
      const double up = loss_and_gradient(probe, x, y, rows, cfg.l2);
      param = keep - cfg.step;
      const double down = loss_and_gradient(probe, x, y, rows, cfg.l2);
      param = keep;
      const double numeric = (up - down) / (2.0 * cfg.step);
      const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / scale);
    };
    for (std::size_t i = 0; i < probe.weights.size(); ++i) compare(probe.weights[i], gw[i]);
    for (std::size_t c = 0; c < probe.bias.size(); ++c) compare(probe.bias[c], gb[c]);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Per-pixel segmenter

inline constexpr std::size_t kPixelFeatures = 4;

/// Per-pixel features of an H x W image or D x H x W volume, one row per
/// element in row-major order: intensity, mean over the in-bounds 3x3 (3x3x3)
/// neighbourhood, forward-difference gradient magnitude, constant 1.
inline Tensor pixel_features(const Tensor& image) {
  if (image.rank() != 2 && image.rank() != 3) throw ShapeError("segmenter input must be H x W or D x H x W");
  for (double v : image.values())
    if (!std::isfinite(v)) throw InvalidArgument("image contains NaN or infinite values");
  const auto& shape = image.shape();
  const auto strides = image.strides();
  const std::size_t rank = image.rank();
  const std::size_t n = image.size();
  std::vector<double> out(n * kPixelFeatures);
  std::array<std::size_t, 3> idx{};
  for (std::size_t flat = 0; flat < n; ++flat) {
    double* row = out.data() + flat * kPixelFeatures;
    const double v = image[flat];

    std::array<std::size_t, 3> lo{}, hi{};
    for (std::size_t a = 0; a < rank; ++a) {
      lo[a] = idx[a] == 0 ? 0 : idx[a] - 1;
      hi[a] = std::min(shape[a] - 1, idx[a] + 1);
    }
    double sum = 0.0;
    std::size_t count = 0;
    if (rank == 2) {
      for (auto i = lo[0]; i <= hi[0]; ++i)
        for (auto j = lo[1]; j <= hi[1]; ++j, ++count) sum += image[i * strides[0] + j];
    } else {
      for (auto d = lo[0]; d <= hi[0]; ++d)
        for (auto i = lo[1]; i <= hi[1]; ++i)
          for (auto j = lo[2]; j <= hi[2]; ++j, ++count) sum += image[d * strides[0] + i * strides[1] + j];
    }

    double g2 = 0.0;
    for (std::size_t a = 0; a < rank; ++a) {
      if (idx[a] + 1 < shape[a]) {
        const double d = image[flat + strides[a]] - v;
        g2 += d * d;
      }
    }
    row[0] = v;
    row[1] = sum / static_cast<double>(count);
    row[2] = std::sqrt(g2);
    row[3] = 1.0;

    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  return Tensor({n, kPixelFeatures}, std::move(out));
}

/// Fits a per-pixel classifier on the pooled pixels of all images. Masks hold
/// integer labels in [0, classes).
inline LogisticModel segmenter_fit(std::span<const Tensor> images, std::span<const Tensor> masks,
                                   const LearnerConfig& cfg, std::size_t classes = 2) {
  if (images.size() != masks.size()) throw ShapeError("image and mask counts differ");
  if (images.empty()) throw InvalidArgument("empty training set");
  std::vector<double> rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != masks[i].shape())
      throw ShapeError("image " + std::to_string(i) + " shape " + shape_to_string(images[i].shape()) +
                       " does not match its mask " + shape_to_string(masks[i].shape()));
    const auto f = pixel_features(images[i]);
    rows.insert(rows.end(), f.values().begin(), f.values().end());
    for (double m : masks[i].values()) labels.push_back(static_cast<int>(m));
  }
  const Tensor x({labels.size(), kPixelFeatures}, std::move(rows));
  return logistic_fit(x, labels, classes, cfg);
}

/// Class-probability map, classes x (spatial shape of `image`).
inline Tensor segmenter_predict_proba(const LogisticModel& m, const Tensor& image) {
  const auto probs = logistic_predict_proba(m, pixel_features(image));
  const std::size_t n = image.size();
  std::vector<double> out(m.classes * n);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < m.classes; ++c) out[c * n + p] = probs[p * m.classes + c];
  Shape shape{m.classes};
  shape.insert(shape.end(), image.shape().begin(), image.shape().end());
  return Tensor(std::move(shape), std::move(out));
}

// ---------------------------------------------------------------------------
// Checkpoints: <stem>.weights.ptns, <stem>.bias.ptns, <stem>.json

inline void save_model(const LogisticModel& m, const std::filesystem::path& stem, const std::string& feature_stack) {
  const auto base = stem.string();
  write_tensor(Tensor({m.classes, m.features}, m.weights), base + ".weights.ptns");
  write_tensor(Tensor({m.classes}, m.bias), base + ".bias.ptns");
  const nlohmann::json sidecar{{"model", "logistic"},
                               {"classes", m.classes},
                               {"features", m.features},
                               {"feature_stack", feature_stack},
                               {"weights", stem.filename().string() + ".weights.ptns"},
                               {"bias", stem.filename().string() + ".bias.ptns"}};
  std::ofstream out(base + ".json");
  if (!out) throw IoError("cannot write " + base + ".json");
  out << sidecar.dump(2) << "\n";
}

inline LogisticModel load_model(const std::filesystem::path& stem) {
  const auto base = stem.string();
  std::ifstream in(base + ".json");
  if (!in) throw IoError("cannot open " + base + ".json");
  nlohmann::json sidecar;
  try {
    in >> sidecar;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(base + ".json: " + e.what());
  }
  const auto w = read_tensor(base + ".weights.ptns");
  const auto b = read_tensor(base + ".bias.ptns");
  const auto classes = sidecar.at("classes").get<std::size_t>();
  const auto features = sidecar.at("features").get<std::size_t>();
  if (w.shape() != Shape{classes, features} || b.shape() != Shape{classes})
    throw ShapeError("checkpoint tensors do not match sidecar dimensions");
  return LogisticModel{classes, features, std::vector<double>(w.values().begin(), w.values().end()),
                       std::vector<double>(b.values().begin(), b.values().end())};
}

}  // namespace pcdal::learn

#endif  // PCDAL_LEARNERS_HPP
