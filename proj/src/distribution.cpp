#include "amcn/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "amcn/errors.hpp"
#include "amcn/losses.hpp"
#include "binary_io.hpp"

namespace amcn {

namespace {
constexpr std::string_view kStatsMagic = "AMCNSTA1";
constexpr std::size_t kStatsRecordBytes = 4 * 8 + 8;
}  // namespace

const char* to_string(Polarity p) { return p == Polarity::Literal ? "literal" : "flipped"; }

Polarity parse_polarity(std::string_view s) {
  if (s == "literal") return Polarity::Literal;
  if (s == "flipped") return Polarity::Flipped;
  throw InvalidConfig("polarity must be 'literal' or 'flipped', got '" + std::string(s) + "'");
}

double p_score(double mu, double sd, double lambda) { return lambda * mu + (1.0 - lambda) * sd; }

ClassStats class_stats(std::span<const double> scores, double lambda) {
  const std::size_t k = scores.size();
  if (k < 2) throw InsufficientSamples("class_stats needs at least 2 scores, got " + std::to_string(k));
  double sum = 0.0;
  for (double s : scores) sum += s;
  const double mu = sum / static_cast<double>(k);
  double ss = 0.0;
  for (double s : scores) ss += (s - mu) * (s - mu);
  ClassStats out;
  out.mu = mu;
  out.sd = std::sqrt(ss / static_cast<double>(k - 1));
  out.p_score = p_score(out.mu, out.sd, lambda);
  return out;
}

double dist_score(double logit, double tau0, double m_pse) {
  const double den = tau0 + m_pse;
  if (!(den > 0.0)) throw DegenerateDenominator("tau0 + m_pse must be positive, got " + std::to_string(den));
  return std::exp(logit) / den;
}

bool pseudo_ood_filter(double score, double p, Polarity polarity) {
  return polarity == Polarity::Literal ? score > p : score < p;
}

ClassStats update_mpse(const ClassStats& stats, double logit, double branch_score) {
  if (branch_score > stats.p_score) return stats;
  ClassStats out = stats;
  const double o = static_cast<double>(stats.ood_count);
  out.m_pse = (std::exp(logit) + o * stats.m_pse) / (o + 1.0);
  // Keep the result inside the convex hull despite rounding.
  const double lo = std::min(std::exp(logit), stats.m_pse);
  const double hi = std::max(std::exp(logit), stats.m_pse);
  out.m_pse = std::clamp(out.m_pse, lo, hi);
  out.ood_count = stats.ood_count + 1;
  return out;
}

std::vector<double> class_logits(const UnitEmbedding& x, const EncodedBank& enc, const HyperParams& hp) {
  std::vector<double> out(enc.C);
  for (std::uint32_t c = 0; c < enc.C; ++c) out[c] = class_logit(x, enc, c, hp);
  return out;
}

namespace {

struct Evaluated {
  DetectionOutcome outcome;
  std::vector<double> logits;
  std::vector<double> scores;
};

Evaluated evaluate_sample(const UnitEmbedding& x, const EncodedBank& enc, const std::vector<ClassStats>& stats,
                          const HyperParams& hp, Polarity polarity) {
  if (stats.size() != enc.C) {
    throw MissingStats("have stats for " + std::to_string(stats.size()) + " classes, bank has " +
                       std::to_string(enc.C));
  }
  Evaluated ev;
  ev.logits = class_logits(x, enc, hp);
  ev.scores.resize(enc.C);
  double best_margin = -std::numeric_limits<double>::infinity();
  std::optional<std::uint32_t> best;
  for (std::uint32_t c = 0; c < enc.C; ++c) {
    const double s = dist_score(ev.logits[c], hp.tau0, stats[c].m_pse);
    ev.scores[c] = s;
    const double margin = polarity == Polarity::Flipped ? s - stats[c].p_score : stats[c].p_score - s;
    best_margin = std::max(best_margin, margin);
    if (!pseudo_ood_filter(s, stats[c].p_score, polarity)) {
      if (!best || ev.logits[c] > ev.logits[*best]) best = c;
    }
  }
  ev.outcome.is_ood = !best.has_value();
  ev.outcome.predicted_class = best;
  ev.outcome.score = best_margin;
  return ev;
}

}  // namespace

DetectionOutcome detect(const UnitEmbedding& x, const EncodedBank& enc, const std::vector<ClassStats>& stats,
                        const HyperParams& hp, Polarity polarity) {
  return evaluate_sample(x, enc, stats, hp, polarity).outcome;
}

DetectionOutcome detect(const UnitEmbedding& x, const EncodedBank& enc, std::vector<ClassStats>& stats,
                        const HyperParams& hp, Polarity polarity, bool frozen) {
  auto ev = evaluate_sample(x, enc, stats, hp, polarity);
  if (!frozen) {
    for (std::uint32_t c = 0; c < enc.C; ++c) stats[c] = update_mpse(stats[c], ev.logits[c], ev.scores[c]);
  }
  return ev.outcome;
}

DetectionOutcome detect(const UnitEmbedding& x, const PromptBank& bank, const DeskEncoder& enc,
                        std::vector<ClassStats>& stats, const HyperParams& hp, Polarity polarity, bool frozen) {
  return detect(x, encode_bank(bank, enc), stats, hp, polarity, frozen);
}

std::vector<ClassStats> fit_stats(const std::vector<std::vector<UnitEmbedding>>& shots, const EncodedBank& enc,
                                  const HyperParams& hp) {
  if (shots.size() != enc.C) {
    throw InsufficientSamples("fit_stats got shots for " + std::to_string(shots.size()) + " classes, bank has " +
                              std::to_string(enc.C));
  }
  for (std::uint32_t c = 0; c < enc.C; ++c) {
    if (shots[c].size() < 2) {
      throw InsufficientSamples("class " + std::to_string(c) + " has " + std::to_string(shots[c].size()) +
                                " shots, need at least 2");
    }
  }
  // logits[c'][i][c]
  std::vector<std::vector<std::vector<double>>> logits(enc.C);
  for (std::uint32_t c = 0; c < enc.C; ++c) {
    for (const auto& x : shots[c]) logits[c].push_back(class_logits(x, enc, hp));
  }
  std::vector<ClassStats> out(enc.C);
  for (std::uint32_t c = 0; c < enc.C; ++c) {
    double sum = 0.0;
    std::uint64_t n = 0;
    for (std::uint32_t other = 0; other < enc.C; ++other) {
      if (other == c) continue;
      for (const auto& l : logits[other]) {
        sum += std::exp(l[c]);
        ++n;
      }
    }
    const double m = n > 0 ? sum / static_cast<double>(n) : 0.0;
    std::vector<double> scores;
    for (const auto& l : logits[c]) scores.push_back(dist_score(l[c], hp.tau0, m));
    out[c] = class_stats(scores, hp.lambda);
    out[c].m_pse = m;
    out[c].ood_count = n;
  }
  return out;
}

void momentum_pass(const std::vector<std::vector<UnitEmbedding>>& shots, const EncodedBank& enc,
                   std::vector<ClassStats>& stats, const HyperParams& hp, Polarity polarity) {
  for (const auto& cls : shots) {
    for (const auto& x : cls) detect(x, enc, stats, hp, polarity, false);
  }
}

void write_stats(const std::filesystem::path& path, const std::vector<ClassStats>& stats) {
  detail::ByteWriter w;
  w.raw(kStatsMagic);
  w.u32(static_cast<std::uint32_t>(stats.size()));
  for (const auto& s : stats) {
    w.f64(s.mu);
    w.f64(s.sd);
    w.f64(s.p_score);
    w.f64(s.m_pse);
    w.u64(s.ood_count);
  }
  detail::write_file_atomic(path, w.bytes());
}

std::vector<ClassStats> read_stats(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  detail::ByteReader r(bytes, path.string());
  r.expect_magic(kStatsMagic);
  const std::uint32_t c = r.u32();
  r.require(static_cast<std::size_t>(c) * kStatsRecordBytes);
  std::vector<ClassStats> out(c);
  for (auto& s : out) {
    s.mu = r.f64();
    s.sd = r.f64();
    s.p_score = r.f64();
    s.m_pse = r.f64();
    s.ood_count = r.u64();
  }
  if (r.remaining() != 0) throw DimensionMismatch(path.string() + ": trailing bytes after stats records");
  return out;
}

}  // namespace amcn
