#include "amcn/hyperparams.hpp"

#include <cmath>
#include <string>

#include "amcn/errors.hpp"

namespace amcn {

namespace {

void check(bool ok, const std::string& what) {
  if (!ok) throw InvalidHyperParams("hyperparameter out of range: " + what);
}

bool unit_interval(double x) { return x >= 0.0 && x <= 1.0; }

}  // namespace

void HyperParams::validate() const {
  check(std::isfinite(sigma) && sigma > 0.0, "sigma > 0");
  check(std::isfinite(tau0) && tau0 >= 0.0, "tau0 >= 0");
  check(unit_interval(tau1), "tau1 in [0,1]");
  check(unit_interval(tau2), "tau2 in [0,1]");
  check(unit_interval(tau3), "tau3 in [0,1]");
  check(unit_interval(lambda), "lambda in [0,1]");
  for (const auto& e : {eps1, eps2, eps3, eps4}) {
    check(!e || (std::isfinite(*e) && *e >= 0.0), "eps >= 0");
  }
  check(alpha1 >= 0.0 && alpha2 >= 0.0 && alpha3 >= 0.0, "alpha >= 0");
  check(P >= 1 && S >= 1 && Z >= 1, "P, S, Z >= 1");
  check(n_ip >= 1 && n_lfop >= 1 && n_laop >= 1, "prefix lengths >= 1");
  check(!d_tok || *d_tok >= 1, "d_tok >= 1");
}

HyperParams::Margins HyperParams::margins(std::size_t batch_size,
                                          std::size_t num_classes) const {
  const double b = static_cast<double>(batch_size);
  const double c = static_cast<double>(num_classes);
  return {eps1.value_or(0.9 * b / c), eps2.value_or(0.1 * b / c),
          eps3.value_or(0.9), eps4.value_or(0.1 * c)};
}

}  // namespace amcn
