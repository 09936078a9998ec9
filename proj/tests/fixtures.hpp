// Small seeded problem instances shared by the loss, distribution and
// acceptance tests.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "amcn/losses.hpp"
#include "amcn/prompt_bank.hpp"
#include "test_support.hpp"

namespace amcn::testing {

struct Instance {
  HyperParams hp;
  PromptBank bank;
  DeskEncoder enc;
  Batch batch;
};

inline std::vector<std::string> names(const std::string& stem, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(stem + std::to_string(i));
  return out;
}

struct InstanceShape {
  std::uint32_t d = 6;
  std::uint32_t C = 2;
  std::uint32_t S = 2;
  std::uint32_t Z = 2;
  std::size_t B = 3;
  std::uint32_t prefix_len = 16;
  std::uint32_t P = 1;
  bool per_class = false;
  // Scale of the trainable prefixes; larger values move prototypes away
  // from the label directions so hinges are not trivially decided.
  double prefix_scale = 0.0;
};

inline Instance make_instance(std::uint64_t seed, const InstanceShape& shape, HyperParams hp = {}) {
  hp.S = shape.S;
  hp.Z = shape.Z;
  hp.P = shape.P;
  hp.n_ip = hp.n_lfop = hp.n_laop = shape.prefix_len;
  hp.per_class_id_prefix = shape.per_class;
  Instance inst;
  inst.hp = hp;
  inst.bank = init_bank(hp, seed, names("class", shape.C), names("ood", std::max(shape.S, shape.Z)), shape.d);
  inst.enc = DeskEncoder::random(shape.d, shape.d, seed + 1000);
  std::mt19937_64 rng(seed * 7919 + 13);
  if (shape.prefix_scale > 0.0) {
    for (auto* g : {&inst.bank.id_prefixes, &inst.bank.lfop_prefix, &inst.bank.laop_prefix,
                    &inst.bank.laop_label_tokens}) {
      for (auto& t : *g) t.values = random_vec(rng, shape.d, shape.prefix_scale);
    }
  }
  std::uniform_int_distribution<std::uint32_t> label(0, shape.C - 1);
  for (std::size_t i = 0; i < shape.B; ++i) {
    inst.batch.images.push_back(random_unit(rng, shape.d));
    inst.batch.labels.push_back(label(rng));
    inst.batch.ids.push_back(i);
  }
  return inst;
}

}  // namespace amcn::testing

namespace amcn::testing {

// Bank whose prompts point exactly along the given directions: identity
// encoder, one zero prefix token per prompt, label token = direction.
struct GeometricBank {
  HyperParams hp;
  PromptBank bank;
  DeskEncoder enc;
  EncodedBank encoded() const { return encode_bank(bank, enc); }
};

inline GeometricBank geometric_bank(const std::vector<Vec>& class_dirs, const std::vector<Vec>& lfop_dirs,
                                    const std::vector<Vec>& laop_dirs, HyperParams hp = {}) {
  const auto d = static_cast<std::uint32_t>(class_dirs.front().size());
  hp.S = static_cast<std::uint32_t>(lfop_dirs.size());
  hp.Z = static_cast<std::uint32_t>(laop_dirs.size());
  hp.P = 1;
  hp.n_ip = hp.n_lfop = hp.n_laop = 1;
  hp.per_class_id_prefix = false;
  GeometricBank g;
  g.hp = hp;
  g.bank = init_bank(hp, 1, names("class", class_dirs.size()), names("ood", std::max(hp.S, hp.Z)), d);
  g.enc = DeskEncoder::identity(d);
  for (auto* grp : {&g.bank.id_prefixes, &g.bank.lfop_prefix, &g.bank.laop_prefix}) {
    for (auto& t : *grp) t.values.assign(d, 0.0);
  }
  for (std::size_t c = 0; c < class_dirs.size(); ++c) g.bank.class_label_tokens[c].values = class_dirs[c];
  for (std::size_t i = 0; i < lfop_dirs.size(); ++i) g.bank.lfop_label_tokens[i].values = lfop_dirs[i];
  for (std::size_t j = 0; j < laop_dirs.size(); ++j) g.bank.laop_label_tokens[j].values = laop_dirs[j];
  return g;
}

inline Batch make_batch(const std::vector<Vec>& rows, const std::vector<std::uint32_t>& labels) {
  Batch b;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    b.images.push_back(normalize(rows[i]));
    b.labels.push_back(labels[i]);
    b.ids.push_back(i);
  }
  return b;
}

}  // namespace amcn::testing
