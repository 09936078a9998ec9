// Training objectives and their analytic gradients.
//
// Notation per sample x with label y, class c and OOD prompt k:
//   A_c   = exp(x . idproto_c / sigma)
//   O     = sum_k exp(x . e_k / sigma)
//   s_id  = tau1 * A_c,  s_ood = (1 - tau1) * O,  m = s_id + s_ood
//   r_c   = s_id / m,    q_c = s_ood / m = 1 - r_c
//
//   L_C   = mean_i -log r_y
//   L_I1  = sum_c (max(0, eps1 - sum_{y_i=c} r)^2 + max(0, sum_{y_i=c} q - eps2)^2)
//   L_I2  = mean_i (max(0, eps3 - sum_c r_c)^2 + max(0, sum_c q_c - eps4)^2)
//   L_2   = mean_i max(0, |x - idproto_y| - |x - oodproto|)
//   L_3   = | tau2 * laopproto - (1 - tau2) * lfopproto |^2
//   L_4   = mean_i -log(tau3 S_op / ((1 - tau3) S_lip + tau3 S_op))
//   total = L_C + L_I1 + L_I2 + a1 L_2 + a2 L_3 + a3 L_4
#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "amcn/hyperparams.hpp"
#include "amcn/prompt_bank.hpp"
#include "amcn/vecmath.hpp"

namespace amcn {

// A mini-batch of ID image embeddings. `ids` optionally carries the global
// sample index of each row; when present, every reduction runs in ascending
// id order so the losses do not depend on row order.
struct Batch {
  std::vector<UnitEmbedding> images;
  std::vector<std::uint32_t> labels;
  std::vector<std::size_t> ids;

  std::size_t size() const { return images.size(); }
  void validate(std::uint32_t num_classes) const;
};

struct LossReport {
  double l_c = 0.0;
  double l_i1 = 0.0;
  double l_i2 = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  double l4 = 0.0;
  double total = 0.0;
};

struct GradientSet {
  std::map<ParamKey, Vec> entries;

  bool all_finite() const;
  double max_abs() const;
};

struct SampleMass {
  double s_id;
  double s_ood;
  double m;
};

// cos(x, idproto_c) / sigma
double class_logit(const UnitEmbedding& x, const EncodedBank& enc, std::uint32_t cls,
                   const HyperParams& hp);
double class_logit(const UnitEmbedding& x, const PromptBank& bank, const DeskEncoder& enc,
                   std::uint32_t cls, const HyperParams& hp);

SampleMass sample_mass(const UnitEmbedding& x, const EncodedBank& enc, std::uint32_t label,
                       const HyperParams& hp);
SampleMass sample_mass(const UnitEmbedding& x, const PromptBank& bank, const DeskEncoder& enc,
                       std::uint32_t label, const HyperParams& hp);

double loss_classification(const Batch& batch, const EncodedBank& enc, const HyperParams& hp);
double loss_intra(const Batch& batch, const EncodedBank& enc, const HyperParams& hp);
double loss_inter(const Batch& batch, const EncodedBank& enc, const HyperParams& hp);
double loss_l1(const Batch& batch, const EncodedBank& enc, const HyperParams& hp);
double loss_separation(const Batch& batch, const EncodedBank& enc, const HyperParams& hp);
double loss_alignment(const EncodedBank& enc, const HyperParams& hp);
double loss_ood_contrastive(const Batch& batch, const EncodedBank& enc, const HyperParams& hp);
LossReport loss_total(const Batch& batch, const EncodedBank& enc, const HyperParams& hp);

// Fills l1 and total from the six components.
LossReport assemble_report(double l_c, double l_i1, double l_i2, double l2, double l3, double l4,
                           const HyperParams& hp);

LossReport loss_total(const Batch& batch, const PromptBank& bank, const DeskEncoder& enc,
                      const HyperParams& hp);

// Gradient of loss_total.total w.r.t. every trainable token. Hinge kinks
// and zero distances take the zero subgradient. Throws NonFiniteGradient.
GradientSet grad_total(const Batch& batch, const PromptBank& bank, const DeskEncoder& enc,
                       const HyperParams& hp);

// How many hinge terms are strictly active for a batch.
struct HingeActivity {
  std::size_t intra_id = 0;     // classes with eps1 - R_c > 0
  std::size_t intra_ood = 0;    // classes with Q_c - eps2 > 0
  std::size_t inter_id = 0;     // samples with eps3 - sum_c r_c > 0
  std::size_t inter_ood = 0;    // samples with sum_c q_c - eps4 > 0
  std::size_t separation = 0;   // samples with e_id - e_ood > 0

  bool all_active() const {
    return intra_id > 0 && intra_ood > 0 && inter_id > 0 && inter_ood > 0 && separation > 0;
  }
};
HingeActivity hinge_activity(const Batch& batch, const EncodedBank& enc, const HyperParams& hp);

struct GradCheckEntry {
  ParamKey key;
  std::uint32_t coord;
  double analytic;
  double numeric;
  double rel_error;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// Compares grad_total against central differences of loss_total with the
// given step on every trainable scalar. Relative error uses the denominator
// max(|analytic|, |numeric|, 1e-8).
GradCheckReport grad_check(const Batch& batch, const PromptBank& bank, const DeskEncoder& enc,
                           const HyperParams& hp, double step);

}  // namespace amcn
