#pragma once

#include "stad/error.hpp"
#include "stad/types.hpp"

#include <span>

namespace stad::math {

inline constexpr double kMinResultant = 1e-12;
inline constexpr double kMaxResultant = 1.0 - 1e-8;
inline constexpr double kMinKappa = 1e-6;
inline constexpr double kMaxKappa = 1e6;
inline constexpr double kZeroNorm = 1e-12;

/// A direction on the unit sphere S^{D-1}. Only obtainable through
/// normalize() or from_normalized(), which both check the invariant.
class UnitVector {
 public:
  static UnitVector from_normalized(Vector coords);

  const Vector& coords() const noexcept { return coords_; }
  Eigen::Index dim() const noexcept { return coords_.size(); }
  double operator[](Eigen::Index i) const { return coords_[i]; }

 private:
  explicit UnitVector(Vector coords) : coords_(std::move(coords)) {}
  Vector coords_;
};

/// log I_order(arg), the modified Bessel function of the first kind, in the
/// log domain. Stable for orders up to several thousand and arguments up to
/// 1e6 and beyond.
double log_bessel_i(double order, double arg);

/// A_D(kappa) = I_{D/2}(kappa) / I_{D/2-1}(kappa), the mean resultant length
/// of a vMF in dimension D. A_D(0) = 0.
double bessel_ratio(int dim, double kappa);

/// log C_D(kappa) with C_D(kappa) = kappa^{D/2-1} / ((2 pi)^{D/2} I_{D/2-1}(kappa)).
/// At kappa = 0 this is the log inverse surface area of S^{D-1}.
double log_vmf_norm_const(int dim, double kappa);

/// Closed-form concentration estimate (r D - r^3) / (1 - r^2), r in [0, 1).
double estimate_kappa(double r_bar, int dim);

double clamp_resultant(double r_bar);
double clamp_kappa(double kappa);

/// v / ||v||; throws ZeroVector when ||v|| <= 1e-12.
UnitVector normalize(const Eigen::Ref<const Vector>& v);

/// Row-wise normalization in place; throws ZeroVector naming the row.
void normalize_rows(Matrix& m);

/// log sum_i exp(values_i) with max shift. -inf entries are allowed.
double log_sum_exp(std::span<const double> values);

/// Normalizes a row of log-weights into probabilities in place.
void softmax_in_place(std::span<double> values);

/// Projects nonnegative weights onto the simplex with every entry >= floor:
/// entries that would fall below the floor are pinned to it and the rest
/// share the remaining mass in proportion to their weights.
Vector floor_simplex(const Vector& weights, double floor);

/// Angle between two vectors in degrees, cosine clamped to [-1, 1].
double angle_deg(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b);

}  // namespace stad::math
