// Scores one sample under four flips, picks a batch from a toy pool, and
// evaluates a mask against its ground truth.

#include <iostream>
#include <vector>

#include "pcdal/metrics.hpp"
#include "pcdal/pcem.hpp"
#include "pcdal/pool.hpp"

int main() {
  using pcdal::Perturbation;
  using pcdal::PerturbationKind;
  using pcdal::Tensor;

  // one 2-class, 2x2 segmentation map per perturbation, already realigned
  pcdal::PredictionSet sample{"case-001", pcdal::Task::Segmentation2D, {}};
  const std::vector<std::vector<double>> foreground{
      {0.9, 0.2, 0.6, 0.1}, {0.8, 0.3, 0.4, 0.1}, {0.9, 0.1, 0.7, 0.2}, {0.7, 0.2, 0.5, 0.1}};
  const PerturbationKind kinds[] = {PerturbationKind::Identity, PerturbationKind::FlipH, PerturbationKind::FlipV,
                                    PerturbationKind::FlipHV};
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> map;
    for (double p : foreground[i]) map.push_back(1.0 - p);
    map.insert(map.end(), foreground[i].begin(), foreground[i].end());
    sample.predictions.emplace_back(Perturbation{kinds[i]}, Tensor({2, 2, 2}, map));
  }
  const auto record = pcdal::score(sample);
  std::cout << record.sample_id << " consistency score " << record.score << "\n";

  const pcdal::pool::PoolState pool({"a", "b", "c", "d"}, {"a"}, 7);
  const std::vector<pcdal::ScoreRecord> scores{{"b", 0.02, 4}, {"c", 0.11, 4}, {"d", 0.05, 4}};
  const auto picked = pcdal::pool::select(pcdal::pool::Strategy::HPI, scores, pool, 2, 0);
  const auto next = pcdal::pool::advance_round(pool, pcdal::pool::Strategy::HPI, picked);
  std::cout << "selected";
  for (const auto& id : picked) std::cout << " " << id;
  std::cout << " -> " << next.labeled().size() << " labeled\n";

  auto pred = Tensor::zeros({6, 6}), truth = Tensor::zeros({6, 6});
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t c = 1; c < 4; ++c) {
      pred[r * 6 + c] = 1.0;
      truth[(r + 1) * 6 + c] = 1.0;
    }
  std::cout << "dice " << pcdal::metrics::dice(pred, truth) << ", pa " << pcdal::metrics::pixel_accuracy(pred, truth)
            << ", hd95 " << pcdal::metrics::hd95(pred, truth) << "\n";
  return 0;
}
