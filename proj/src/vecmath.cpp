#include "amcn/vecmath.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "amcn/errors.hpp"

namespace amcn {

namespace {

void require_same_dim(ConstVecView a, ConstVecView b) {
  if (a.size() != b.size()) {
    std::ostringstream msg;
    msg << "dimension mismatch: " << a.size() << " vs " << b.size();
    throw DimensionMismatch(msg.str());
  }
}

double checked_norm(ConstVecView v) {
  const double n = norm2(v);
  if (!(n > kZeroNormTolerance)) {
    throw ZeroVector("vector norm is below 1e-12");
  }
  return n;
}

}  // namespace

Embedding::Embedding(Vec values) : values_(std::move(values)) {}

UnitEmbedding UnitEmbedding::adopt(Vec values) {
  const double n = norm2(values);
  if (!(std::abs(n - 1.0) <= kUnitNormTolerance)) {
    std::ostringstream msg;
    msg << "expected a unit vector, norm is " << n;
    throw NotUnitNorm(msg.str());
  }
  return UnitEmbedding(std::move(values));
}

double dot(ConstVecView a, ConstVecView b) {
  require_same_dim(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(ConstVecView v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

UnitEmbedding normalize(ConstVecView v) {
  const double n = checked_norm(v);
  Vec out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return UnitEmbedding(std::move(out));
}

double cosine(ConstVecView a, ConstVecView b) {
  require_same_dim(a, b);
  const double c = dot(a, b) / (checked_norm(a) * checked_norm(b));
  return std::clamp(c, -1.0, 1.0);
}

double similarity(ConstVecView a, ConstVecView b, double sigma) {
  if (!(sigma > 0.0)) throw NonPositiveTemperature("temperature must be > 0");
  return std::exp(cosine(a, b) / sigma);
}

double euclid(const UnitEmbedding& a, const UnitEmbedding& b) {
  require_same_dim(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return std::sqrt(s);
}

Vec normalize_jacobian_vp(ConstVecView z, ConstVecView g) {
  require_same_dim(z, g);
  const double n = checked_norm(z);
  // zhat . g, computed against z to avoid a temporary
  const double radial = dot(z, g) / n;
  Vec out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    out[i] = (g[i] - (z[i] / n) * radial) / n;
  }
  return out;
}

void axpy(double scale, ConstVecView v, std::span<double> out) {
  require_same_dim(v, ConstVecView(out.data(), out.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[i] += scale * v[i];
}

bool all_finite(ConstVecView v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace amcn
