// Vector primitives shared by every AMCN module.
//
// All math runs in double precision with plain left-to-right summation so
// that two runs over the same inputs produce bit-identical results.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace amcn {

using Vec = std::vector<double>;
using ConstVecView = std::span<const double>;

inline constexpr double kZeroNormTolerance = 1e-12;
inline constexpr double kUnitNormTolerance = 1e-9;

// Raw d-dimensional vector (encoder output, image feature before projection).
class Embedding {
 public:
  Embedding() = default;
  explicit Embedding(Vec values);

  ConstVecView values() const { return values_; }
  std::size_t dim() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  operator ConstVecView() const { return values_; }  // NOLINT(google-explicit-constructor)

 private:
  Vec values_;
};

// A vector on the unit hypersphere. Only constructible through normalize()
// or a checked adoption of values that are already unit norm.
class UnitEmbedding {
 public:
  UnitEmbedding() = default;

  // Throws NotUnitNorm when | ||values|| - 1 | > kUnitNormTolerance.
  static UnitEmbedding adopt(Vec values);

  ConstVecView values() const { return values_; }
  const Vec& vec() const { return values_; }
  std::size_t dim() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  operator ConstVecView() const { return values_; }  // NOLINT(google-explicit-constructor)

  friend bool operator==(const UnitEmbedding&, const UnitEmbedding&) = default;

 private:
  explicit UnitEmbedding(Vec values) : values_(std::move(values)) {}
  friend UnitEmbedding normalize(ConstVecView v);

  Vec values_;
};

double dot(ConstVecView a, ConstVecView b);
double norm2(ConstVecView v);

// z / ||z||; throws ZeroVector when ||z|| <= 1e-12.
UnitEmbedding normalize(ConstVecView v);

// Cosine of the angle between a and b, clamped to [-1, 1].
double cosine(ConstVecView a, ConstVecView b);

// exp(cos(a, b) / sigma).
double similarity(ConstVecView a, ConstVecView b, double sigma);

// ||a - b|| for unit inputs; lies in [0, 2].
double euclid(const UnitEmbedding& a, const UnitEmbedding& b);

// Vector-Jacobian product of z -> z/||z||: (I - zhat zhat^T) g / ||z||.
Vec normalize_jacobian_vp(ConstVecView z, ConstVecView g);

// out += scale * v
void axpy(double scale, ConstVecView v, std::span<double> out);

bool all_finite(ConstVecView v);

}  // namespace amcn
