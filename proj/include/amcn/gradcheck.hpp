// Small seeded problems for finite-difference gradient checks.
#pragma once

#include <cstdint>

#include "amcn/hyperparams.hpp"
#include "amcn/losses.hpp"
#include "amcn/prompt_bank.hpp"

namespace amcn {

struct GradProblemShape {
  std::uint32_t d = 6;
  std::uint32_t C = 2;
  std::uint32_t S = 2;
  std::uint32_t Z = 2;
  std::uint32_t B = 3;
  std::uint32_t prefix_len = 4;
  // Trainable tokens are redrawn with this scale so prompts are spread out.
  double token_scale = 0.4;
};

struct GradProblem {
  HyperParams hp;
  PromptBank bank;
  DeskEncoder enc;
  Batch batch;
};

// hp supplies everything except S, Z, P and the prefix lengths, which come
// from the shape.
GradProblem random_grad_problem(std::uint64_t seed, HyperParams hp = {}, const GradProblemShape& shape = {});

}  // namespace amcn
