#include "amcn/gradcheck.hpp"

#include <random>
#include <string>

#include "amcn/hashing.hpp"

namespace amcn {

GradProblem random_grad_problem(std::uint64_t seed, HyperParams hp, const GradProblemShape& shape) {
  hp.S = shape.S;
  hp.Z = shape.Z;
  hp.P = 1;
  hp.n_ip = hp.n_lfop = hp.n_laop = shape.prefix_len;
  hp.d_tok.reset();
  hp.validate();

  std::vector<std::string> classes, oods;
  for (std::uint32_t c = 0; c < shape.C; ++c) classes.push_back("class_" + std::to_string(c));
  for (std::uint32_t k = 0; k < std::max(shape.S, shape.Z); ++k) oods.push_back("ood_" + std::to_string(k));

  GradProblem p;
  p.hp = hp;
  p.bank = init_bank(hp, mix_seed(seed, 1), classes, oods, shape.d);
  p.enc = DeskEncoder::random(shape.d, shape.d, mix_seed(seed, 2));

  std::mt19937_64 rng(mix_seed(seed, 3));
  std::normal_distribution<double> tok(0.0, shape.token_scale), unit(0.0, 1.0);
  for (const auto& key : p.bank.census()) {
    for (double& v : p.bank.token(key).values) v = tok(rng);
  }
  std::uniform_int_distribution<std::uint32_t> label(0, shape.C - 1);
  for (std::uint32_t i = 0; i < shape.B; ++i) {
    Vec x(shape.d);
    for (double& v : x) v = unit(rng);
    p.batch.images.push_back(normalize(x));
    p.batch.labels.push_back(label(rng));
    p.batch.ids.push_back(i);
  }
  return p;
}

}  // namespace amcn
