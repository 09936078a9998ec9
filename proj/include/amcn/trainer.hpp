// Prompt-bank optimization and evaluation.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "amcn/distribution.hpp"
#include "amcn/embedding_io.hpp"
#include "amcn/hyperparams.hpp"
#include "amcn/losses.hpp"
#include "amcn/prompt_bank.hpp"

namespace amcn {

struct OptimizerConfig {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const;
};

// AdamW moments for every trainable token.
struct OptimizerState {
  OptimizerConfig cfg;
  std::map<ParamKey, Vec> m;
  std::map<ParamKey, Vec> v;
  std::uint64_t step_count = 0;

  static OptimizerState init(const PromptBank& bank, const OptimizerConfig& cfg = {});
};

// One decoupled-weight-decay Adam step. Throws NonFiniteGradient (nothing
// is modified) and CensusViolation when grads or state do not match the
// bank's trainable census.
void optimizer_step(OptimizerState& state, PromptBank& bank, const GradientSet& grads);

// ID training data; labels index classes 0..num_classes-1.
struct LabeledSet {
  std::vector<UnitEmbedding> rows;
  std::vector<std::uint32_t> labels;
  std::uint32_t num_classes = 0;
};

// Rows re-normalized; num_classes defaults to max label + 1.
LabeledSet labeled_set(const EmbeddingFile& file, std::optional<std::uint32_t> num_classes = std::nullopt);

struct TrainConfig {
  std::uint32_t epochs = 100;
  std::uint32_t batch_size = 64;
  std::uint64_t seed = 0;
  std::uint32_t shots = 8;
  HyperParams hp;
  Polarity polarity = Polarity::Literal;
  std::uint32_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  OptimizerConfig optimizer;

  void validate() const;
};

// Called after every epoch (0-based index) with the epoch-averaged losses and the bank
// state at the end of the epoch.
using EpochObserver =
    std::function<void(std::uint32_t epoch, const LossReport& report, const PromptBank& bank, const EncodedBank& enc)>;

struct TrainResult {
  PromptBank bank;
  DeskEncoder enc;
  std::vector<ClassStats> stats;
  std::vector<LossReport> epochs;
  // Dataset indices of the K shots, class-major.
  std::vector<std::size_t> shot_indices;
  std::uint64_t optimizer_steps = 0;
};

// Class names are "id_<c>"; OOD label names are "ood_<k>".
std::vector<std::string> default_class_names(std::uint32_t n);
std::vector<std::string> default_ood_names(std::uint32_t n);

// Shot selection, epochs x ceil(C K / B) optimizer steps, then fit_stats and
// one momentum pass over the shots. Each epoch's report is the batch-size
// weighted mean of the per-batch reports. With checkpoint_every > 0 and a
// checkpoint_dir, bank_epoch_<n>.bin is written every that many epochs.
TrainResult train(const LabeledSet& data, const TrainConfig& cfg, const EpochObserver& observer = {},
                  const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt);

struct EvalMetrics {
  std::optional<double> auroc;
  std::optional<double> fpr95;
  double id_accuracy = 0.0;  // among ID samples not rejected
  std::size_t id_count = 0;
  std::size_t ood_count = 0;
  std::size_t id_rejected = 0;
  std::size_t ood_rejected = 0;
  // Same detector with every P_c replaced by the mean of all P_c.
  std::optional<double> fixed_auroc;
  std::optional<double> fixed_fpr95;
  // Prototype-cosine baseline.
  std::optional<double> baseline_auroc;
  std::optional<double> baseline_fpr95;
};

struct EvalScores {
  std::vector<DetectionOutcome> id, ood;
};

// Scores every sample. Frozen statistics are left untouched; otherwise a
// private copy is updated sample by sample (ID rows first).
EvalScores score_sets(const EncodedBank& enc, const std::vector<ClassStats>& stats,
                      const std::vector<UnitEmbedding>& test_id, const std::vector<UnitEmbedding>& test_ood,
                      const HyperParams& hp, Polarity polarity, bool frozen = true);

EvalMetrics evaluate(const PromptBank& bank, const DeskEncoder& enc, const std::vector<ClassStats>& stats,
                     const LabeledSet& test_id, const std::vector<UnitEmbedding>& test_ood, const TrainConfig& cfg,
                     bool frozen = true);

}  // namespace amcn
