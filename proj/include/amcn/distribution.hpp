// Class-wise score statistics, adaptive thresholds and the ID/OOD decision.
//
// For class c and sample x:
//   o_c(x) = cos(x, idproto_c) / sigma
//   S_c(x) = exp(o_c(x)) / (tau0 + M_c)
//   P_c    = lambda * mu_c + (1 - lambda) * sd_c
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "amcn/hyperparams.hpp"
#include "amcn/prompt_bank.hpp"
#include "amcn/vecmath.hpp"

namespace amcn {

// Literal: a class rejects x when S_c(x) > P_c.
// Flipped: a class rejects x when S_c(x) < P_c.
// A score equal to P_c is always accepted by the class.
enum class Polarity : std::uint8_t { Literal, Flipped };

const char* to_string(Polarity p);
// Accepts "literal" / "flipped"; throws InvalidConfig otherwise.
Polarity parse_polarity(std::string_view s);

struct ClassStats {
  double mu = 0.0;
  double sd = 0.0;
  double p_score = 0.0;
  double m_pse = 0.0;
  std::uint64_t ood_count = 0;

  bool operator==(const ClassStats&) const = default;
};

struct DetectionOutcome {
  bool is_ood = false;
  std::optional<std::uint32_t> predicted_class;
  // Larger means more ID under either polarity.
  double score = 0.0;
};

double p_score(double mu, double sd, double lambda);

// mu, sd (K - 1 denominator) and p_score; m_pse and ood_count stay zero.
// Throws InsufficientSamples when fewer than two scores are given.
ClassStats class_stats(std::span<const double> scores, double lambda);

// Throws DegenerateDenominator when tau0 + m_pse <= 0.
double dist_score(double logit, double tau0, double m_pse);

// true = pseudo-OOD for this class.
bool pseudo_ood_filter(double score, double p_score, Polarity polarity);

// Running-average update of m_pse, taken when branch_score <= p_score.
// Otherwise returns the stats unchanged.
ClassStats update_mpse(const ClassStats& stats, double logit, double branch_score);

// o_c(x) for every class.
std::vector<double> class_logits(const UnitEmbedding& x, const EncodedBank& enc, const HyperParams& hp);

// Pure detection against fixed statistics.
DetectionOutcome detect(const UnitEmbedding& x, const EncodedBank& enc, const std::vector<ClassStats>& stats,
                        const HyperParams& hp, Polarity polarity);

// As above; unless frozen, every class's m_pse is then updated with the
// sample's logit and score. Throws MissingStats on a class count mismatch.
DetectionOutcome detect(const UnitEmbedding& x, const EncodedBank& enc, std::vector<ClassStats>& stats,
                        const HyperParams& hp, Polarity polarity, bool frozen);

DetectionOutcome detect(const UnitEmbedding& x, const PromptBank& bank, const DeskEncoder& enc,
                        std::vector<ClassStats>& stats, const HyperParams& hp, Polarity polarity, bool frozen);

// Per-class statistics from the training shots (shots[c] holds class c).
// m_pse starts as the mean exp(o_c) over the shots of every other class and
// ood_count as their number; mu/sd/p_score come from class c's own scores.
// Throws InsufficientSamples when a class has fewer than two shots.
std::vector<ClassStats> fit_stats(const std::vector<std::vector<UnitEmbedding>>& shots, const EncodedBank& enc,
                                  const HyperParams& hp);

// One non-frozen detect over every shot (class-major order). p_score is not
// recomputed.
void momentum_pass(const std::vector<std::vector<UnitEmbedding>>& shots, const EncodedBank& enc,
                   std::vector<ClassStats>& stats, const HyperParams& hp, Polarity polarity);

// Stats file "AMCNSTA1": magic, u32 C, then per class f64 mu, sd, p_score,
// m_pse and u64 ood_count, little-endian. Written atomically.
void write_stats(const std::filesystem::path& path, const std::vector<ClassStats>& stats);
std::vector<ClassStats> read_stats(const std::filesystem::path& path);

}  // namespace amcn
