#include "amcn/metrics.hpp"

#include <algorithm>
#include <functional>

#include "amcn/errors.hpp"

namespace amcn {

double auroc(const ScoredSet& s) {
  if (s.id_scores.empty() || s.ood_scores.empty()) throw EmptyScoreSet("auroc needs ID and OOD scores");
  std::vector<double> ood = s.ood_scores;
  std::sort(ood.begin(), ood.end());
  // Integer arithmetic in half-pair units keeps the sum exact.
  std::uint64_t twice_wins = 0;
  for (double x : s.id_scores) {
    const auto lo = std::lower_bound(ood.begin(), ood.end(), x);
    const auto hi = std::upper_bound(lo, ood.end(), x);
    twice_wins += 2 * static_cast<std::uint64_t>(lo - ood.begin()) + static_cast<std::uint64_t>(hi - lo);
  }
  const double pairs = static_cast<double>(s.id_scores.size()) * static_cast<double>(ood.size());
  return static_cast<double>(twice_wins) / (2.0 * pairs);
}

std::optional<double> fpr95(const ScoredSet& s) {
  if (s.id_scores.empty()) throw EmptyScoreSet("fpr95 needs ID scores");
  if (s.ood_scores.empty()) return std::nullopt;
  std::vector<double> id = s.id_scores;
  std::sort(id.begin(), id.end(), std::greater<>());
  const std::size_t n = id.size();
  const std::size_t k = (95 * n + 99) / 100;  // ceil(0.95 n)
  const double t = id[k - 1];
  const auto above = std::count_if(s.ood_scores.begin(), s.ood_scores.end(), [t](double v) { return v >= t; });
  return static_cast<double>(above) / static_cast<double>(s.ood_scores.size());
}

double baseline_score(const UnitEmbedding& x, const EncodedBank& enc) {
  double best = -1.0;
  for (std::uint32_t c = 0; c < enc.C; ++c) best = std::max(best, cosine(x, enc.id_prototype(c)));
  return best;
}

double baseline_score(const UnitEmbedding& x, const PromptBank& bank, const DeskEncoder& enc,
                      const HyperParams&) {
  return baseline_score(x, encode_bank(bank, enc));
}

}  // namespace amcn
