#include "amcn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "amcn/errors.hpp"
#include "amcn/hashing.hpp"
#include "amcn/metrics.hpp"

namespace amcn {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw InvalidConfig("optimizer lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw InvalidConfig("optimizer beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw InvalidConfig("optimizer beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) throw InvalidConfig("optimizer eps must be positive");
  if (!(weight_decay >= 0.0)) throw InvalidConfig("optimizer weight_decay must be >= 0");
}

OptimizerState OptimizerState::init(const PromptBank& bank, const OptimizerConfig& cfg) {
  OptimizerState s;
  s.cfg = cfg;
  for (const auto& key : bank.census()) {
    s.m[key].assign(bank.d_tok, 0.0);
    s.v[key].assign(bank.d_tok, 0.0);
  }
  return s;
}

void optimizer_step(OptimizerState& state, PromptBank& bank, const GradientSet& grads) {
  if (!grads.all_finite()) {
    throw NonFiniteGradient("non-finite gradient at optimizer step " + std::to_string(state.step_count + 1));
  }
  const auto census = bank.census();
  if (grads.entries.size() != census.size() || state.m.size() != census.size()) {
    throw CensusViolation("gradient or optimizer state does not cover the trainable census");
  }
  for (const auto& key : census) {
    if (!grads.entries.count(key) || !state.m.count(key)) {
      throw CensusViolation("missing gradient or moment for " + key.name());
    }
  }

  const auto& c = state.cfg;
  const std::uint64_t t = state.step_count + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (const auto& key : census) {
    const Vec& g = grads.entries.at(key);
    Vec& m = state.m.at(key);
    Vec& v = state.v.at(key);
    Vec& theta = bank.token(key).values;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * theta[i]);
    }
    if (!all_finite(theta)) throw NonFiniteGradient("parameter " + key.name() + " became non-finite");
  }
  state.step_count = t;
}

LabeledSet labeled_set(const EmbeddingFile& file, std::optional<std::uint32_t> num_classes) {
  if (!file.has_labels) throw InvalidConfig("training embeddings need labels");
  file.validate(num_classes);
  LabeledSet out;
  out.rows = unit_rows(file);
  std::int32_t max_label = -1;
  for (auto l : file.labels) {
    out.labels.push_back(static_cast<std::uint32_t>(l));
    max_label = std::max(max_label, l);
  }
  out.num_classes = num_classes.value_or(static_cast<std::uint32_t>(max_label + 1));
  return out;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidConfig("batch_size must be positive");
  if (shots < 2) throw InvalidConfig("shots must be at least 2");
  hp.validate();
  optimizer.validate();
}

std::vector<std::string> default_class_names(std::uint32_t n) {
  std::vector<std::string> out;
  for (std::uint32_t i = 0; i < n; ++i) out.push_back("id_" + std::to_string(i));
  return out;
}

std::vector<std::string> default_ood_names(std::uint32_t n) {
  std::vector<std::string> out;
  for (std::uint32_t i = 0; i < n; ++i) out.push_back("ood_" + std::to_string(i));
  return out;
}

namespace {

struct FrozenParts {
  std::vector<TokenVector> class_labels;
  std::vector<TokenVector> lfop_labels;
  bool operator==(const FrozenParts&) const = default;
};

FrozenParts frozen_parts(const PromptBank& b) { return {b.class_label_tokens, b.lfop_label_tokens}; }

void accumulate(LossReport& acc, const LossReport& r, double w) {
  acc.l_c += w * r.l_c;
  acc.l_i1 += w * r.l_i1;
  acc.l_i2 += w * r.l_i2;
  acc.l2 += w * r.l2;
  acc.l3 += w * r.l3;
  acc.l4 += w * r.l4;
}

}  // namespace

TrainResult train(const LabeledSet& data, const TrainConfig& cfg, const EpochObserver& observer,
                  const std::optional<std::filesystem::path>& checkpoint_dir) {
  cfg.validate();
  if (data.rows.empty()) throw InsufficientSamples("training set is empty");
  if (data.rows.size() != data.labels.size()) throw DimensionMismatch("training rows and labels differ in count");
  const std::uint32_t C = data.num_classes;
  const auto d = static_cast<std::uint32_t>(data.rows.front().dim());
  const HyperParams& hp = cfg.hp;

  // K-shot selection, fixed for the whole run.
  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    if (data.labels[i] >= C) throw LabelOutOfRange("label " + std::to_string(data.labels[i]) + " >= " + std::to_string(C));
    if (data.rows[i].dim() != d) throw DimensionMismatch("training rows differ in dimension");
    by_class[data.labels[i]].push_back(i);
  }
  std::mt19937_64 shot_rng(mix_seed(cfg.seed, 3));
  TrainResult result;
  std::vector<std::vector<UnitEmbedding>> shots(C);
  std::vector<UnitEmbedding> rows;
  std::vector<std::uint32_t> labels;
  for (std::uint32_t c = 0; c < C; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < cfg.shots) {
      throw InsufficientSamples("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                " samples, need " + std::to_string(cfg.shots));
    }
    std::shuffle(idx.begin(), idx.end(), shot_rng);
    idx.resize(cfg.shots);
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) {
      result.shot_indices.push_back(i);
      shots[c].push_back(data.rows[i]);
      rows.push_back(data.rows[i]);
      labels.push_back(c);
    }
  }
  const std::size_t n = rows.size();
  if (cfg.batch_size > n) {
    throw InvalidConfig("batch_size " + std::to_string(cfg.batch_size) + " exceeds the " + std::to_string(n) +
                        " training shots");
  }

  const std::uint32_t d_tok = hp.d_tok.value_or(d);
  result.bank = init_bank(hp, mix_seed(cfg.seed, 1), default_class_names(C),
                          default_ood_names(std::max(hp.S, hp.Z)), d_tok);
  result.enc = DeskEncoder::random(d_tok, d, mix_seed(cfg.seed, 2));
  const FrozenParts before = frozen_parts(result.bank);

  OptimizerState opt = OptimizerState::init(result.bank, cfg.optimizer);
  std::mt19937_64 order_rng(mix_seed(cfg.seed, 4));
  std::vector<std::size_t> order(n);
  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);
    LossReport acc;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      Batch batch;
      for (std::size_t i = start; i < std::min(n, start + cfg.batch_size); ++i) {
        batch.images.push_back(rows[order[i]]);
        batch.labels.push_back(labels[order[i]]);
        batch.ids.push_back(order[i]);
      }
      const auto report = loss_total(batch, result.bank, result.enc, hp);
      accumulate(acc, report, static_cast<double>(batch.size()) / static_cast<double>(n));
      GradientSet grads;
      try {
        grads = grad_total(batch, result.bank, result.enc, hp);
      } catch (const NonFiniteGradient& e) {
        throw NonFiniteGradient(std::string(e.what()) + " (optimizer step " + std::to_string(opt.step_count + 1) +
                                ")");
      }
      optimizer_step(opt, result.bank, grads);
    }
    const auto epoch_report = assemble_report(acc.l_c, acc.l_i1, acc.l_i2, acc.l2, acc.l3, acc.l4, hp);
    result.epochs.push_back(epoch_report);
    if (observer) observer(epoch, epoch_report, result.bank, encode_bank(result.bank, result.enc));
    if (checkpoint_dir && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      write_bank(*checkpoint_dir / ("bank_epoch_" + std::to_string(epoch + 1) + ".bin"), result.bank, result.enc);
    }
  }
  result.optimizer_steps = opt.step_count;
  if (!(frozen_parts(result.bank) == before)) {
    throw CensusViolation("a non-trainable token changed during training");
  }

  const auto encoded = encode_bank(result.bank, result.enc);
  result.stats = fit_stats(shots, encoded, hp);
  momentum_pass(shots, encoded, result.stats, hp, cfg.polarity);
  return result;
}

EvalScores score_sets(const EncodedBank& enc, const std::vector<ClassStats>& stats,
                      const std::vector<UnitEmbedding>& test_id, const std::vector<UnitEmbedding>& test_ood,
                      const HyperParams& hp, Polarity polarity, bool frozen) {
  EvalScores out;
  std::vector<ClassStats> live = stats;
  for (const auto& x : test_id) out.id.push_back(detect(x, enc, live, hp, polarity, frozen));
  for (const auto& x : test_ood) out.ood.push_back(detect(x, enc, live, hp, polarity, frozen));
  return out;
}

namespace {

ScoredSet to_scored(const EvalScores& s) {
  ScoredSet out;
  for (const auto& o : s.id) out.id_scores.push_back(o.score);
  for (const auto& o : s.ood) out.ood_scores.push_back(o.score);
  return out;
}

}  // namespace

EvalMetrics evaluate(const PromptBank& bank, const DeskEncoder& enc, const std::vector<ClassStats>& stats,
                     const LabeledSet& test_id, const std::vector<UnitEmbedding>& test_ood, const TrainConfig& cfg,
                     bool frozen) {
  const auto encoded = encode_bank(bank, enc);
  if (stats.size() != encoded.C) throw MissingStats("evaluation needs stats for every class");
  if (test_id.rows.empty()) throw EmptyScoreSet("evaluation needs ID samples");
  const auto scores = score_sets(encoded, stats, test_id.rows, test_ood, cfg.hp, cfg.polarity, frozen);

  EvalMetrics m;
  m.id_count = test_id.rows.size();
  m.ood_count = test_ood.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.id.size(); ++i) {
    const auto& o = scores.id[i];
    if (o.is_ood) {
      ++m.id_rejected;
    } else if (i < test_id.labels.size() && *o.predicted_class == test_id.labels[i]) {
      ++correct;
    }
  }
  for (const auto& o : scores.ood) m.ood_rejected += o.is_ood;
  const std::size_t accepted = m.id_count - m.id_rejected;
  m.id_accuracy = accepted == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(accepted);

  std::vector<ClassStats> fixed = stats;
  double mean_p = 0.0;
  for (const auto& s : stats) mean_p += s.p_score;
  mean_p /= static_cast<double>(stats.size());
  for (auto& s : fixed) s.p_score = mean_p;
  const auto fixed_scores = score_sets(encoded, fixed, test_id.rows, test_ood, cfg.hp, cfg.polarity, frozen);

  ScoredSet base;
  for (const auto& x : test_id.rows) base.id_scores.push_back(baseline_score(x, encoded));
  for (const auto& x : test_ood) base.ood_scores.push_back(baseline_score(x, encoded));

  const auto main_set = to_scored(scores);
  const auto fixed_set = to_scored(fixed_scores);
  m.fpr95 = fpr95(main_set);
  m.fixed_fpr95 = fpr95(fixed_set);
  m.baseline_fpr95 = fpr95(base);
  if (!test_ood.empty()) {
    m.auroc = auroc(main_set);
    m.fixed_auroc = auroc(fixed_set);
    m.baseline_auroc = auroc(base);
  }
  return m;
}

}  // namespace amcn
