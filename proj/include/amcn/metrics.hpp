// Threshold-free detection metrics. Scores follow one convention: larger
// means more in-distribution.
#pragma once

#include <optional>
#include <vector>

#include "amcn/hyperparams.hpp"
#include "amcn/prompt_bank.hpp"
#include "amcn/vecmath.hpp"

namespace amcn {

struct ScoredSet {
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
};

// P(id > ood) + 0.5 P(id == ood) over all pairs. Throws EmptyScoreSet when
// either side is empty.
double auroc(const ScoredSet& s);

// Fraction of OOD scores >= t, where t is the largest score that keeps at
// least 95% of ID scores >= t. nullopt when there are no OOD scores; throws
// EmptyScoreSet when there are no ID scores.
std::optional<double> fpr95(const ScoredSet& s);

// max_c cos(x, idproto_c)
double baseline_score(const UnitEmbedding& x, const EncodedBank& enc);
double baseline_score(const UnitEmbedding& x, const PromptBank& bank, const DeskEncoder& enc,
                      const HyperParams& hp);

}  // namespace amcn
