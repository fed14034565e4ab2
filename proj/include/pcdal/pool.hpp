#ifndef PCDAL_POOL_HPP
#define PCDAL_POOL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pcdal/error.hpp"
#include "pcdal/pcem.hpp"
#include "pcdal/random.hpp"

namespace pcdal::pool {

enum class Strategy { HPI, LPI, Random, MaxEntropy };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::HPI: return "hpi";
    case Strategy::LPI: return "lpi";
    case Strategy::Random: return "random";
    case Strategy::MaxEntropy: return "max-entropy";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "hpi") return Strategy::HPI;
  if (s == "lpi") return Strategy::LPI;
  if (s == "random") return Strategy::Random;
  if (s == "max-entropy") return Strategy::MaxEntropy;
  throw InvalidArgument("unknown strategy '" + std::string(s) + "'");
}

struct RoundRecord {
  std::size_t round = 0;
  std::string strategy;
  std::size_t budget = 0;
  std::vector<std::string> selected;
  std::string scores_path;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

/// Labeled/unlabeled partition of a training split plus its acquisition history.
class PoolState {
 public:
  PoolState() = default;

  PoolState(std::vector<std::string> all_ids, const std::vector<std::string>& labeled, std::uint64_t seed)
      : all_ids_(std::move(all_ids)), seed_(seed) {
    std::set<std::string> seen;
    for (const auto& id : all_ids_)
      if (!seen.insert(id).second) throw InvalidArgument("duplicate sample id '" + id + "'");
    for (const auto& id : labeled) {
      if (!seen.count(id)) throw InvalidArgument("labeled id '" + id + "' is not in the pool");
      labeled_.insert(id);
    }
    for (const auto& id : all_ids_)
      if (!labeled_.count(id)) unlabeled_.insert(id);
  }

  const std::vector<std::string>& all_ids() const noexcept { return all_ids_; }
  const std::set<std::string>& labeled() const noexcept { return labeled_; }
  const std::set<std::string>& unlabeled() const noexcept { return unlabeled_; }
  const std::vector<RoundRecord>& rounds() const noexcept { return rounds_; }
  std::uint64_t seed() const noexcept { return seed_; }

  bool is_labeled(const std::string& id) const { return labeled_.count(id) != 0; }

  /// Moves `selected` from unlabeled to labeled and logs the round.
  PoolState advanced(Strategy strategy, const std::vector<std::string>& selected,
                     std::string scores_path = {}) const {
    PoolState next = *this;
    std::set<std::string> batch;
    for (const auto& id : selected) {
      if (labeled_.count(id)) throw InvalidArgument("sample '" + id + "' is already labeled");
      if (!unlabeled_.count(id)) throw InvalidArgument("sample '" + id + "' is not in the pool");
      if (!batch.insert(id).second) throw InvalidArgument("sample '" + id + "' selected twice");
    }
    for (const auto& id : selected) {
      next.unlabeled_.erase(id);
      next.labeled_.insert(id);
    }
    next.rounds_.push_back(
        RoundRecord{rounds_.size() + 1, to_string(strategy), selected.size(), selected, std::move(scores_path)});
    return next;
  }

  nlohmann::json to_json() const {
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& r : rounds_)
      rounds.push_back({{"round", r.round},
                        {"strategy", r.strategy},
                        {"budget", r.budget},
                        {"selected", r.selected},
                        {"scores_path", r.scores_path}});
    return {{"seed", seed_},
            {"all_ids", all_ids_},
            {"labeled_ids", std::vector<std::string>(labeled_.begin(), labeled_.end())},
            {"rounds", rounds}};
  }

  /// Reconstructs a state from its manifest and re-checks every invariant.
  static PoolState from_json(const nlohmann::json& j) {
    try {
      PoolState s(j.at("all_ids").get<std::vector<std::string>>(),
                  j.at("labeled_ids").get<std::vector<std::string>>(), j.at("seed").get<std::uint64_t>());
      std::set<std::string> picked;
      for (const auto& r : j.value("rounds", nlohmann::json::array())) {
        RoundRecord rec{r.at("round").get<std::size_t>(), r.at("strategy").get<std::string>(),
                        r.at("budget").get<std::size_t>(), r.at("selected").get<std::vector<std::string>>(),
                        r.value("scores_path", std::string{})};
        for (const auto& id : rec.selected) {
          if (!s.labeled_.count(id)) throw FormatError("round selection '" + id + "' is not labeled");
          if (!picked.insert(id).second) throw FormatError("sample '" + id + "' selected in two rounds");
        }
        s.rounds_.push_back(std::move(rec));
      }
      return s;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("pool manifest: ") + e.what());
    }
  }

  friend bool operator==(const PoolState&, const PoolState&) = default;

 private:
  std::vector<std::string> all_ids_;
  std::set<std::string> labeled_;
  std::set<std::string> unlabeled_;
  std::vector<RoundRecord> rounds_;
  std::uint64_t seed_ = 0;
};

inline PoolState advance_round(const PoolState& pool, Strategy strategy, const std::vector<std::string>& selected,
                               std::string scores_path = {}) {
  return pool.advanced(strategy, selected, std::move(scores_path));
}

struct Folds {
  std::vector<std::vector<std::string>> folds;
  /// Some class has fewer members than there are folds.
  bool uneven_strata = false;
};

/// Per-class shuffled round-robin assignment: within every class the fold
/// counts differ by at most one. Fold contents keep input order.
inline Folds stratified_kfold(const std::vector<std::string>& ids, const std::vector<int>& labels, std::size_t k,
                              std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("stratified k-fold needs k >= 2");
  if (ids.size() != labels.size()) throw InvalidArgument("ids and labels differ in length");
  if (ids.empty()) throw InvalidArgument("no samples to split");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ids.size(); ++i) by_class[labels[i]].push_back(i);

  Folds out;
  Pcg32 rng(seed);
  std::vector<std::size_t> fold_of(ids.size());
  std::size_t offset = 0;
  for (auto& [label, members] : by_class) {
    if (members.size() < k) out.uneven_strata = true;
    rng.shuffle(members);
    for (std::size_t j = 0; j < members.size(); ++j) fold_of[members[j]] = (offset + j) % k;
    offset += members.size();
  }
  out.folds.resize(k);
  for (std::size_t i = 0; i < ids.size(); ++i) out.folds[fold_of[i]].push_back(ids[i]);
  return out;
}

/// Picks the next annotation batch from the unlabeled pool.
///
/// HPI takes the highest scores, LPI the lowest, MaxEntropy the highest
/// entropy values (the scores then hold entropies); ties go to the smaller
/// sample id. Random draws uniformly without replacement with Pcg32(seed) over
/// the id-sorted pool. Returns min(budget, |unlabeled|) ids.
inline std::vector<std::string> select(Strategy strategy, const std::vector<ScoreRecord>& scores,
                                       const PoolState& pool, std::size_t budget, std::uint64_t seed) {
  if (budget < 1) throw InvalidArgument("selection budget must be >= 1");
  const std::vector<std::string> candidates(pool.unlabeled().begin(), pool.unlabeled().end());
  const std::size_t take = std::min(budget, candidates.size());

  if (strategy == Strategy::Random) {
    auto order = candidates;
    Pcg32 rng(seed);
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = i + rng.bounded(static_cast<std::uint32_t>(order.size() - i));
      std::swap(order[i], order[j]);
    }
    order.resize(take);
    return order;
  }

  std::unordered_map<std::string, double> by_id;
  for (const auto& r : scores) {
    if (!std::isfinite(r.score)) throw InvalidArgument("non-finite score for '" + r.sample_id + "'");
    if (!by_id.emplace(r.sample_id, r.score).second)
      throw InvalidArgument("duplicate score for '" + r.sample_id + "'");
  }
  std::vector<std::pair<double, std::string>> ranked;
  ranked.reserve(candidates.size());
  for (const auto& id : candidates) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InvalidArgument("no score for unlabeled sample '" + id + "'");
    ranked.emplace_back(it->second, id);
  }
  const bool descending = strategy != Strategy::LPI;
  std::sort(ranked.begin(), ranked.end(), [descending](const auto& a, const auto& b) {
    if (a.first != b.first) return descending ? a.first > b.first : a.first < b.first;
    return a.second < b.second;
  });
  std::vector<std::string> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(ranked[i].second);
  return out;
}

/// Per-round annotation counts: the initial pool, then one entry per step
/// while the cumulative fraction stays within `final_fraction`. Cumulative
/// targets are fraction * total rounded half-up.
inline std::vector<std::size_t> budget_schedule(std::size_t total, double initial_fraction, double step_fraction,
                                                double final_fraction) {
  if (total == 0) throw InvalidArgument("budget schedule over an empty pool");
  if (!(initial_fraction > 0.0) || !(initial_fraction <= final_fraction) || !(final_fraction <= 1.0))
    throw InvalidArgument("budget fractions must satisfy 0 < initial <= final <= 1");
  if (!(step_fraction > 0.0)) throw InvalidArgument("budget step fraction must be > 0");

  constexpr double slack = 1e-9;
  std::vector<std::size_t> out;
  std::size_t previous = 0;
  for (std::size_t r = 0;; ++r) {
    const double fraction = initial_fraction + static_cast<double>(r) * step_fraction;
    if (fraction > final_fraction + slack) break;
    const auto cumulative =
        static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 0.5 + slack));
    const auto capped = std::min(cumulative, total);
    out.push_back(capped - previous);
    previous = capped;
  }
  return out;
}

}  // namespace pcdal::pool

#endif  // PCDAL_POOL_HPP
