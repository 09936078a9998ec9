#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>

namespace amcn {

// Every scalar knob of the AMCN objective and the prompt-bank layout.
//
// eps1..eps4 are optional: when unset they resolve per batch to
//   eps1 = 0.9 * B / C, eps2 = 0.1 * B / C, eps3 = 0.9, eps4 = 0.1 * C
// where B is the size of the batch being evaluated.
struct HyperParams {
  double sigma = 1.0;   // similarity temperature
  double tau0 = 1.0;    // distribution-score denominator offset
  double tau1 = 0.8;    // ID vs OOD weight in the classification ratio
  double tau2 = 0.5;    // OOD family alignment weight
  double tau3 = 0.8;    // OOD weight in the OOD contrastive ratio
  double lambda = 0.5;  // P-score mean/std balance
  std::optional<double> eps1;
  std::optional<double> eps2;
  std::optional<double> eps3;
  std::optional<double> eps4;
  double alpha1 = 0.4;  // separation loss weight
  double alpha2 = 0.2;  // alignment loss weight
  double alpha3 = 0.8;  // OOD contrastive loss weight

  std::uint32_t P = 1;   // ID prompts per class
  std::uint32_t S = 50;  // label-fixed OOD prompts
  std::uint32_t Z = 50;  // label-adaptive OOD prompts
  std::uint32_t n_ip = 16;
  std::uint32_t n_lfop = 16;
  std::uint32_t n_laop = 16;

  // Token width; unset means "same as the embedding dimension".
  std::optional<std::uint32_t> d_tok;
  // One ID prefix set per class instead of one shared set.
  bool per_class_id_prefix = false;

  // Throws InvalidHyperParams on any out-of-range field.
  void validate() const;

  struct Margins {
    double eps1, eps2, eps3, eps4;
  };
  Margins margins(std::size_t batch_size, std::size_t num_classes) const;
};

}  // namespace amcn
