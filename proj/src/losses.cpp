#include "amcn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "amcn/errors.hpp"

namespace amcn {

namespace {

// Per-sample similarity terms against every prompt of the snapshot.
struct SampleTerms {
  Vec A;  // exp(x . idproto_c / sigma), per class
  Vec E;  // exp(x . e_k / sigma), per OOD prompt
  double O = 0.0;
  Vec r;  // s_id / m, per class
  Vec q;  // s_ood / m, per class
};

SampleTerms sample_terms(const UnitEmbedding& x, const EncodedBank& enc, const HyperParams& hp) {
  SampleTerms t;
  t.A.resize(enc.C);
  for (std::uint32_t c = 0; c < enc.C; ++c) {
    t.A[c] = std::exp(dot(x, enc.id_prototypes[c].unit) / hp.sigma);
  }
  t.E.resize(enc.ood_prompts.size());
  for (std::size_t k = 0; k < enc.ood_prompts.size(); ++k) {
    t.E[k] = std::exp(dot(x, enc.ood_prompts[k].unit) / hp.sigma);
    t.O += t.E[k];
  }
  const double s_ood = (1.0 - hp.tau1) * t.O;
  t.r.resize(enc.C);
  t.q.resize(enc.C);
  for (std::uint32_t c = 0; c < enc.C; ++c) {
    const double s_id = hp.tau1 * t.A[c];
    const double m = s_id + s_ood;
    if (!(m > 0.0) || !std::isfinite(m)) {
      throw DegenerateRatio("similarity mass is zero or non-finite");
    }
    t.r[c] = s_id / m;
    t.q[c] = s_ood / m;
  }
  return t;
}

// Row visiting order: ascending sample id when ids are given.
std::vector<std::size_t> canonical_order(const Batch& batch) {
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!batch.ids.empty()) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return batch.ids[a] < batch.ids[b]; });
  }
  return order;
}

void check_batch(const Batch& batch, const EncodedBank& enc) {
  batch.validate(enc.C);
  for (const auto& x : batch.images) {
    if (x.dim() != enc.id_prototypes.front().unit.dim()) {
      throw DimensionMismatch("image embedding width does not match the prompt space");
    }
  }
}

double hinge(double v) { return v > 0.0 ? v : 0.0; }

double neg_log_ratio(double ratio) {
  if (!(ratio > 0.0)) throw DegenerateRatio("contrastive ratio underflowed to zero");
  return -std::log(ratio);
}

struct IntraSums {
  Vec R, Q;
};

IntraSums intra_sums(const Batch& batch, const std::vector<SampleTerms>& terms,
                     const std::vector<std::size_t>& order, std::uint32_t C) {
  IntraSums s{Vec(C, 0.0), Vec(C, 0.0)};
  for (std::size_t i : order) {
    const std::uint32_t y = batch.labels[i];
    s.R[y] += terms[i].r[y];
    s.Q[y] += terms[i].q[y];
  }
  return s;
}

std::vector<SampleTerms> all_terms(const Batch& batch, const EncodedBank& enc, const HyperParams& hp) {
  std::vector<SampleTerms> terms;
  terms.reserve(batch.size());
  for (const auto& x : batch.images) terms.push_back(sample_terms(x, enc, hp));
  return terms;
}

double sum_in_order(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

struct L4Terms {
  double s_op, s_lip, ratio;
};

L4Terms l4_terms(const UnitEmbedding& x, std::uint32_t y, const EncodedBank& enc, const HyperParams& hp) {
  L4Terms t{};
  t.s_op = std::exp(dot(x, enc.ood_prototype.unit) / hp.sigma);
  t.s_lip = std::exp(dot(x, enc.id_prototypes[y].unit) / hp.sigma);
  const double den = (1.0 - hp.tau3) * t.s_lip + hp.tau3 * t.s_op;
  if (!(den > 0.0)) throw DegenerateRatio("OOD contrastive denominator is zero");
  t.ratio = hp.tau3 * t.s_op / den;
  return t;
}

// Accumulates d(loss)/d(prompt embedding) and pushes it down to the tokens.
class Backprop {
 public:
  Backprop(const PromptBank& bank, const DeskEncoder& enc, const EncodedBank& eb)
      : bank_(bank), enc_(enc), eb_(eb) {
    const std::size_t d = enc.dim();
    g_id_proto.assign(eb.C, Vec(d, 0.0));
    g_ood_prompt.assign(eb.ood_prompts.size(), Vec(d, 0.0));
    g_ood_proto.assign(d, 0.0);
    g_lfop_proto.assign(d, 0.0);
    g_laop_proto.assign(d, 0.0);
  }

  std::vector<Vec> g_id_proto;    // per class prototype
  std::vector<Vec> g_ood_prompt;  // per OOD prompt embedding
  Vec g_ood_proto, g_lfop_proto, g_laop_proto;

  GradientSet finish() {
    GradientSet grads;
    for (const auto& key : bank_.census()) grads.entries.emplace(key, Vec(bank_.d_tok, 0.0));

    // Prototypes -> member prompt embeddings.
    std::vector<Vec> g_id_prompt(eb_.id_prompts.size(), Vec(enc_.dim(), 0.0));
    for (std::uint32_t c = 0; c < eb_.C; ++c) {
      const Vec g_mean = normalize_jacobian_vp(eb_.id_prototypes[c].mean, g_id_proto[c]);
      for (std::uint32_t p = 0; p < eb_.P; ++p) {
        axpy(1.0 / eb_.P, g_mean, g_id_prompt[static_cast<std::size_t>(c) * eb_.P + p]);
      }
    }
    const std::size_t n_ood = eb_.ood_prompts.size();
    const Vec g_all = normalize_jacobian_vp(eb_.ood_prototype.mean, g_ood_proto);
    const Vec g_fixed = normalize_jacobian_vp(eb_.lfop_prototype.mean, g_lfop_proto);
    const Vec g_adapt = normalize_jacobian_vp(eb_.laop_prototype.mean, g_laop_proto);
    for (std::size_t k = 0; k < n_ood; ++k) {
      axpy(1.0 / static_cast<double>(n_ood), g_all, g_ood_prompt[k]);
      if (k < eb_.S) {
        axpy(1.0 / eb_.S, g_fixed, g_ood_prompt[k]);
      } else {
        axpy(1.0 / eb_.Z, g_adapt, g_ood_prompt[k]);
      }
    }

    for (std::size_t i = 0; i < eb_.id_prompts.size(); ++i) push_prompt(eb_.id_prompts[i], g_id_prompt[i], grads);
    for (std::size_t k = 0; k < n_ood; ++k) push_prompt(eb_.ood_prompts[k], g_ood_prompt[k], grads);
    return grads;
  }

 private:
  // embedding -> projected -> pooled token mean -> each token
  void push_prompt(const EncodedPrompt& prompt, const Vec& g_unit, GradientSet& grads) const {
    const Vec g_proj = normalize_jacobian_vp(prompt.projected, g_unit);
    const Vec g_pooled = enc_.pullback(g_proj);
    const double share = 1.0 / static_cast<double>(prompt.keys.size());
    for (const auto& key : prompt.keys) {
      auto it = grads.entries.find(key);
      if (it != grads.entries.end()) axpy(share, g_pooled, it->second);
    }
  }

  const PromptBank& bank_;
  const DeskEncoder& enc_;
  const EncodedBank& eb_;
};

}  // namespace

void Batch::validate(std::uint32_t num_classes) const {
  if (images.empty()) throw InsufficientSamples("batch is empty");
  if (labels.size() != images.size()) throw DimensionMismatch("batch labels and images differ in count");
  if (!ids.empty() && ids.size() != images.size()) throw DimensionMismatch("batch ids and images differ in count");
  for (auto y : labels) {
    if (y >= num_classes) throw UnknownClass("batch label " + std::to_string(y) + " out of range");
  }
}

bool GradientSet::all_finite() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const auto& kv) { return amcn::all_finite(kv.second); });
}

double GradientSet::max_abs() const {
  double m = 0.0;
  for (const auto& [key, g] : entries) {
    for (double x : g) m = std::max(m, std::abs(x));
  }
  return m;
}

double class_logit(const UnitEmbedding& x, const EncodedBank& enc, std::uint32_t cls,
                   const HyperParams& hp) {
  // both sides are unit norm, so the dot product is the cosine
  return dot(x, enc.id_prototype(cls)) / hp.sigma;
}

double class_logit(const UnitEmbedding& x, const PromptBank& bank, const DeskEncoder& enc,
                   std::uint32_t cls, const HyperParams& hp) {
  return dot(x, id_prototype(bank, enc, cls)) / hp.sigma;
}

SampleMass sample_mass(const UnitEmbedding& x, const EncodedBank& enc, std::uint32_t label,
                       const HyperParams& hp) {
  if (label >= enc.C) throw UnknownClass("label " + std::to_string(label) + " out of range");
  double ood = 0.0;
  for (const auto& e : enc.ood_prompts) ood += std::exp(dot(x, e.unit) / hp.sigma);
  const double s_id = hp.tau1 * std::exp(dot(x, enc.id_prototypes[label].unit) / hp.sigma);
  const double s_ood = (1.0 - hp.tau1) * ood;
  return {s_id, s_ood, s_id + s_ood};
}

SampleMass sample_mass(const UnitEmbedding& x, const PromptBank& bank, const DeskEncoder& enc,
                       std::uint32_t label, const HyperParams& hp) {
  return sample_mass(x, encode_bank(bank, enc), label, hp);
}

double loss_classification(const Batch& batch, const EncodedBank& enc, const HyperParams& hp) {
  check_batch(batch, enc);
  double sum = 0.0;
  for (std::size_t i : canonical_order(batch)) {
    const auto t = sample_terms(batch.images[i], enc, hp);
    sum += neg_log_ratio(t.r[batch.labels[i]]);
  }
  return sum / static_cast<double>(batch.size());
}

double loss_intra(const Batch& batch, const EncodedBank& enc, const HyperParams& hp) {
  check_batch(batch, enc);
  const auto mg = hp.margins(batch.size(), enc.C);
  const auto terms = all_terms(batch, enc, hp);
  const auto s = intra_sums(batch, terms, canonical_order(batch), enc.C);
  double loss = 0.0;
  for (std::uint32_t c = 0; c < enc.C; ++c) {
    const double h1 = hinge(mg.eps1 - s.R[c]);
    const double h2 = hinge(s.Q[c] - mg.eps2);
    loss += h1 * h1 + h2 * h2;
  }
  return loss;
}

double loss_inter(const Batch& batch, const EncodedBank& enc, const HyperParams& hp) {
  check_batch(batch, enc);
  const auto mg = hp.margins(batch.size(), enc.C);
  double sum = 0.0;
  for (std::size_t i : canonical_order(batch)) {
    const auto t = sample_terms(batch.images[i], enc, hp);
    const double g1 = hinge(mg.eps3 - sum_in_order(t.r));
    const double g2 = hinge(sum_in_order(t.q) - mg.eps4);
    sum += g1 * g1 + g2 * g2;
  }
  return sum / static_cast<double>(batch.size());
}

double loss_l1(const Batch& batch, const EncodedBank& enc, const HyperParams& hp) {
  return loss_classification(batch, enc, hp) + loss_intra(batch, enc, hp) + loss_inter(batch, enc, hp);
}

double loss_separation(const Batch& batch, const EncodedBank& enc, const HyperParams& hp) {
  (void)hp;
  check_batch(batch, enc);
  double sum = 0.0;
  for (std::size_t i : canonical_order(batch)) {
    const auto& x = batch.images[i];
    const double e_ood = euclid(x, enc.ood_prototype.unit);
    const double e_id = euclid(x, enc.id_prototypes[batch.labels[i]].unit);
    sum += -std::min(0.0, e_ood - e_id);
  }
  return sum / static_cast<double>(batch.size());
}

double loss_alignment(const EncodedBank& enc, const HyperParams& hp) {
  const auto& a = enc.laop_prototype.unit;
  const auto& b = enc.lfop_prototype.unit;
  double s = 0.0;
  for (std::size_t j = 0; j < a.dim(); ++j) {
    const double v = hp.tau2 * a[j] - (1.0 - hp.tau2) * b[j];
    s += v * v;
  }
  return s;
}

double loss_ood_contrastive(const Batch& batch, const EncodedBank& enc, const HyperParams& hp) {
  check_batch(batch, enc);
  double sum = 0.0;
  for (std::size_t i : canonical_order(batch)) {
    sum += neg_log_ratio(l4_terms(batch.images[i], batch.labels[i], enc, hp).ratio);
  }
  return sum / static_cast<double>(batch.size());
}

LossReport assemble_report(double l_c, double l_i1, double l_i2, double l2, double l3, double l4,
                           const HyperParams& hp) {
  LossReport r;
  r.l_c = l_c;
  r.l_i1 = l_i1;
  r.l_i2 = l_i2;
  r.l1 = l_c + l_i1 + l_i2;
  r.l2 = l2;
  r.l3 = l3;
  r.l4 = l4;
  r.total = r.l1 + hp.alpha1 * l2 + hp.alpha2 * l3 + hp.alpha3 * l4;
  return r;
}

LossReport loss_total(const Batch& batch, const EncodedBank& enc, const HyperParams& hp) {
  return assemble_report(loss_classification(batch, enc, hp), loss_intra(batch, enc, hp),
                         loss_inter(batch, enc, hp), loss_separation(batch, enc, hp),
                         loss_alignment(enc, hp), loss_ood_contrastive(batch, enc, hp), hp);
}

LossReport loss_total(const Batch& batch, const PromptBank& bank, const DeskEncoder& enc,
                      const HyperParams& hp) {
  return loss_total(batch, encode_bank(bank, enc), hp);
}

HingeActivity hinge_activity(const Batch& batch, const EncodedBank& enc, const HyperParams& hp) {
  check_batch(batch, enc);
  const auto mg = hp.margins(batch.size(), enc.C);
  const auto terms = all_terms(batch, enc, hp);
  const auto order = canonical_order(batch);
  const auto s = intra_sums(batch, terms, order, enc.C);
  HingeActivity a;
  for (std::uint32_t c = 0; c < enc.C; ++c) {
    a.intra_id += mg.eps1 - s.R[c] > 0.0;
    a.intra_ood += s.Q[c] - mg.eps2 > 0.0;
  }
  for (std::size_t i : order) {
    a.inter_id += mg.eps3 - sum_in_order(terms[i].r) > 0.0;
    a.inter_ood += sum_in_order(terms[i].q) - mg.eps4 > 0.0;
    const auto& x = batch.images[i];
    a.separation += euclid(x, enc.id_prototypes[batch.labels[i]].unit) -
                        euclid(x, enc.ood_prototype.unit) > 0.0;
  }
  return a;
}

GradientSet grad_total(const Batch& batch, const PromptBank& bank, const DeskEncoder& enc,
                       const HyperParams& hp) {
  const EncodedBank eb = encode_bank(bank, enc);
  check_batch(batch, eb);
  const std::size_t B = batch.size();
  const double inv_b = 1.0 / static_cast<double>(B);
  const auto mg = hp.margins(B, eb.C);
  const auto terms = all_terms(batch, eb, hp);
  const auto order = canonical_order(batch);
  const auto sums = intra_sums(batch, terms, order, eb.C);

  Backprop bp(bank, enc, eb);

  // d total / d r_{i,c}; q = 1 - r is folded in with a sign flip.
  std::vector<Vec> d_r(B, Vec(eb.C, 0.0));
  for (std::size_t i : order) {
    const std::uint32_t y = batch.labels[i];
    const auto& t = terms[i];
    if (!(t.r[y] > 0.0)) throw DegenerateRatio("contrastive ratio underflowed to zero");
    d_r[i][y] += -inv_b / t.r[y];  // L_C

    const double h1 = hinge(mg.eps1 - sums.R[y]);
    const double h2 = hinge(sums.Q[y] - mg.eps2);
    d_r[i][y] += -2.0 * h1 - 2.0 * h2;  // L_I1

    const double g1 = hinge(mg.eps3 - sum_in_order(t.r));
    const double g2 = hinge(sum_in_order(t.q) - mg.eps4);
    for (std::uint32_t c = 0; c < eb.C; ++c) d_r[i][c] += inv_b * (-2.0 * g1 - 2.0 * g2);  // L_I2
  }

  // r_c = tau1 A_c / (tau1 A_c + (1 - tau1) O):
  //   dr_c/dA_c * dA_c/dproto_c = r_c q_c x / sigma
  //   dr_c/dO * dO/de_k         = -r_c q_c (E_k / O) x / sigma
  for (std::size_t i : order) {
    const auto& x = batch.images[i];
    const auto& t = terms[i];
    double ood_coef = 0.0;
    for (std::uint32_t c = 0; c < eb.C; ++c) {
      const double w = d_r[i][c] * t.r[c] * t.q[c];
      if (w == 0.0) continue;
      axpy(w / hp.sigma, x, bp.g_id_proto[c]);
      ood_coef -= w;
    }
    if (ood_coef != 0.0) {
      for (std::size_t k = 0; k < t.E.size(); ++k) {
        axpy(ood_coef * (t.E[k] / t.O) / hp.sigma, x, bp.g_ood_prompt[k]);
      }
    }
  }

  // L_2: d|x - u| / du = (u - x) / |x - u|
  if (hp.alpha1 != 0.0) {
    for (std::size_t i : order) {
      const auto& x = batch.images[i];
      const auto& p = eb.id_prototypes[batch.labels[i]].unit;
      const auto& op = eb.ood_prototype.unit;
      const double e_id = euclid(x, p);
      const double e_ood = euclid(x, op);
      if (!(e_id - e_ood > 0.0)) continue;
      const double w = hp.alpha1 * inv_b;
      if (e_id > 0.0) {
        for (std::size_t j = 0; j < x.dim(); ++j) bp.g_id_proto[batch.labels[i]][j] += w * (p[j] - x[j]) / e_id;
      }
      if (e_ood > 0.0) {
        for (std::size_t j = 0; j < x.dim(); ++j) bp.g_ood_proto[j] -= w * (op[j] - x[j]) / e_ood;
      }
    }
  }

  // L_3
  if (hp.alpha2 != 0.0) {
    const auto& a = eb.laop_prototype.unit;
    const auto& b = eb.lfop_prototype.unit;
    for (std::size_t j = 0; j < a.dim(); ++j) {
      const double v = hp.tau2 * a[j] - (1.0 - hp.tau2) * b[j];
      bp.g_laop_proto[j] += hp.alpha2 * 2.0 * hp.tau2 * v;
      bp.g_lfop_proto[j] -= hp.alpha2 * 2.0 * (1.0 - hp.tau2) * v;
    }
  }

  // L_4: -log rho with rho = tau3 S_op / den; d/dS_op = -(1-rho)/S_op,
  // d/dS_lip = (1-rho)/S_lip, and dS/du = S x / sigma.
  if (hp.alpha3 != 0.0) {
    for (std::size_t i : order) {
      const auto& x = batch.images[i];
      const auto t = l4_terms(x, batch.labels[i], eb, hp);
      const double den = (1.0 - hp.tau3) * t.s_lip + hp.tau3 * t.s_op;
      const double one_minus_rho = (1.0 - hp.tau3) * t.s_lip / den;
      const double w = hp.alpha3 * inv_b * one_minus_rho / hp.sigma;
      if (w == 0.0) continue;
      axpy(-w, x, bp.g_ood_proto);
      axpy(w, x, bp.g_id_proto[batch.labels[i]]);
    }
  }

  GradientSet grads = bp.finish();
  if (!grads.all_finite()) throw NonFiniteGradient("gradient contains non-finite entries");
  return grads;
}

GradCheckReport grad_check(const Batch& batch, const PromptBank& bank, const DeskEncoder& enc,
                           const HyperParams& hp, double step) {
  if (!(step > 0.0 && step <= 1e-2)) throw InvalidHyperParams("grad_check step must be in (0, 1e-2]");
  const GradientSet analytic = grad_total(batch, bank, enc, hp);
  PromptBank probe = bank;
  GradCheckReport report;
  double rel_sum = 0.0;
  for (const auto& [key, grad] : analytic.entries) {
    auto& values = probe.token(key).values;
    for (std::uint32_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + step;
      const double up = loss_total(batch, probe, enc, hp).total;
      values[j] = saved - step;
      const double down = loss_total(batch, probe, enc, hp).total;
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = grad[j];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-8});
      report.entries.push_back({key, j, a, numeric, rel});
      report.max_rel_error = std::max(report.max_rel_error, rel);
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      rel_sum += rel;
    }
  }
  if (!report.entries.empty()) report.mean_rel_error = rel_sum / static_cast<double>(report.entries.size());
  return report;
}

}  // namespace amcn
