#include "stad/mathcore.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace stad::math {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Below this order the uniform (Debye) expansion is not accurate enough; the
// power series and the large-argument Hankel expansion cover that corner.
constexpr double kDebyeMinOrder = 10.0;
constexpr int kDebyeTerms = 12;

struct KahanSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double x) {
    const double y = x - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

using Poly = std::vector<double>;

// Coefficients of the Debye polynomials u_k(t), generated by
//   u_{k+1}(t) = t^2 (1 - t^2) u_k'(t) / 2 + (1/8) int_0^t (1 - 5 s^2) u_k(s) ds.
std::array<Poly, kDebyeTerms> make_debye_polys() {
  std::array<Poly, kDebyeTerms> u;
  u[0] = {1.0};
  for (int k = 0; k + 1 < kDebyeTerms; ++k) {
    const Poly& p = u[k];
    Poly next(p.size() + 3, 0.0);
    for (std::size_t i = 1; i < p.size(); ++i) {
      const double d = static_cast<double>(i) * p[i];  // coefficient of t^{i-1}
      next[i + 1] += 0.5 * d;
      next[i + 3] -= 0.5 * d;
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      next[i + 1] += p[i] / (8.0 * static_cast<double>(i + 1));
      next[i + 3] -= 5.0 * p[i] / (8.0 * static_cast<double>(i + 3));
    }
    u[k + 1] = std::move(next);
  }
  return u;
}

double eval_poly(const Poly& p, double t) {
  double acc = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) acc = acc * t + *it;
  return acc;
}

double log_bessel_debye(double v, double x) {
  static const std::array<Poly, kDebyeTerms> polys = make_debye_polys();
  const double z = x / v;
  const double root = std::hypot(1.0, z);
  const double t = 1.0 / root;
  const double eta = root + std::log(z / (1.0 + root));
  double series = 0.0;
  double vpow = 1.0;
  for (int k = 0; k < kDebyeTerms; ++k) {
    series += eval_poly(polys[k], t) / vpow;
    vpow *= v;
  }
  return -0.5 * std::log(2.0 * std::numbers::pi * v) - 0.5 * std::log(root) + v * eta +
         std::log(series);
}

double log_bessel_hankel(double v, double x) {
  const double mu = 4.0 * v * v;
  double term = 1.0;
  KahanSum sum;
  sum.add(term);
  for (int k = 1; k < 500; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = -term * (mu - odd * odd) / (8.0 * k * x);
    if (std::abs(next) >= std::abs(term) && k > 1) break;  // series turned divergent
    term = next;
    sum.add(term);
    if (std::abs(term) < kEps * 1e-2 * std::abs(sum.sum)) break;
  }
  return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum.sum);
}

double log_bessel_series(double v, double x) {
  const double half = 0.5 * x;
  const double q = half * half;
  const double log_half = std::log(half);
  auto log_term = [&](double k) {
    return (2.0 * k + v) * log_half - std::lgamma(k + 1.0) - std::lgamma(k + v + 1.0);
  };
  auto ratio = [&](double k) { return q / ((k + 1.0) * (k + v + 1.0)); };

  // Sum outward from the largest term so every scaled term is <= 1.
  const double k_peak = std::max(0.0, std::ceil(0.5 * (std::sqrt(v * v + x * x) - (v + 2.0))));
  KahanSum sum;
  sum.add(1.0);
  double term = 1.0;
  for (double k = k_peak; k < k_peak + 100000.0; k += 1.0) {
    term *= ratio(k);
    sum.add(term);
    if (term < kEps * 1e-2 * sum.sum) break;
  }
  term = 1.0;
  for (double k = k_peak - 1.0; k >= 0.0; k -= 1.0) {
    term /= ratio(k);
    sum.add(term);
    if (term < kEps * 1e-2 * sum.sum) break;
  }
  return log_term(k_peak) + std::log(sum.sum);
}

void require_finite(double value, const char* name) {
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::kDomain, std::string(name) + " must be finite");
  }
}

void require_dim(int dim) {
  if (dim < 2) throw Error(ErrorCode::kDomain, "dimension must be >= 2, got " + std::to_string(dim));
}

}  // namespace

UnitVector UnitVector::from_normalized(Vector coords) {
  if (coords.size() < 2) throw Error(ErrorCode::kDomain, "unit vector needs D >= 2");
  if (std::abs(coords.norm() - 1.0) > 1e-9) {
    throw Error(ErrorCode::kDomain, "vector is not unit-norm");
  }
  return UnitVector(std::move(coords));
}

double log_bessel_i(double order, double arg) {
  require_finite(order, "order");
  require_finite(arg, "arg");
  if (order < 0.0 || arg < 0.0) {
    throw Error(ErrorCode::kDomain, "log_bessel_i requires order >= 0 and arg >= 0");
  }
  if (arg == 0.0) return order == 0.0 ? 0.0 : -kInf;
  if (order >= kDebyeMinOrder) return log_bessel_debye(order, arg);
  if (arg > std::max(60.0, 2.0 * order * order)) return log_bessel_hankel(order, arg);
  return log_bessel_series(order, arg);
}

double bessel_ratio(int dim, double kappa) {
  require_dim(dim);
  require_finite(kappa, "kappa");
  if (kappa < 0.0) throw Error(ErrorCode::kDomain, "kappa must be >= 0");
  if (kappa == 0.0) return 0.0;
  const double half = 0.5 * dim;
  const double ratio = std::exp(log_bessel_i(half, kappa) - log_bessel_i(half - 1.0, kappa));
  return std::min(ratio, std::nextafter(1.0, 0.0));
}

double log_vmf_norm_const(int dim, double kappa) {
  require_dim(dim);
  require_finite(kappa, "kappa");
  if (kappa < 0.0) throw Error(ErrorCode::kDomain, "kappa must be >= 0");
  const double half = 0.5 * dim;
  if (kappa == 0.0) {
    // 1 / |S^{D-1}| = Gamma(D/2) / (2 pi^{D/2})
    return std::lgamma(half) - std::numbers::ln2 - half * std::log(std::numbers::pi);
  }
  const double power = dim == 2 ? 0.0 : (half - 1.0) * std::log(kappa);
  return power - half * std::log(2.0 * std::numbers::pi) - log_bessel_i(half - 1.0, kappa);
}

double estimate_kappa(double r_bar, int dim) {
  require_dim(dim);
  if (!(r_bar >= 0.0 && r_bar < 1.0)) {
    throw Error(ErrorCode::kDomain, "r_bar must lie in [0, 1)");
  }
  return (r_bar * dim - r_bar * r_bar * r_bar) / (1.0 - r_bar * r_bar);
}

double clamp_resultant(double r_bar) { return std::clamp(r_bar, kMinResultant, kMaxResultant); }

double clamp_kappa(double kappa) { return std::clamp(kappa, kMinKappa, kMaxKappa); }

UnitVector normalize(const Eigen::Ref<const Vector>& v) {
  if (!v.allFinite()) throw Error(ErrorCode::kNonFinite, "cannot normalize a non-finite vector");
  const double n = v.norm();
  if (n <= kZeroNorm) throw Error(ErrorCode::kZeroVector, "cannot normalize a null vector");
  return UnitVector::from_normalized(v / n);
}

void normalize_rows(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (!m.row(i).allFinite()) {
      throw Error(ErrorCode::kNonFinite, "row " + std::to_string(i) + " has non-finite entries");
    }
    const double n = m.row(i).norm();
    if (n <= kZeroNorm) throw Error(ErrorCode::kZeroVector, "row " + std::to_string(i) + " is null");
    m.row(i) /= n;
  }
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kDomain, "log_sum_exp of an empty range");
  if (values.size() == 1) return values[0];
  const double peak = *std::max_element(values.begin(), values.end());
  if (peak == -kInf) return -kInf;
  double sum = 0.0;
  for (double x : values) sum += std::exp(x - peak);
  return peak + std::log(sum);
}

void softmax_in_place(std::span<double> values) {
  const double lse = log_sum_exp(values);
  for (double& x : values) x = std::exp(x - lse);
}

Vector floor_simplex(const Vector& weights, double floor) {
  const Eigen::Index k_count = weights.size();
  if (k_count == 0) throw Error(ErrorCode::kDomain, "empty weight vector");
  if (!(floor >= 0.0 && floor * static_cast<double>(k_count) < 1.0)) {
    throw Error(ErrorCode::kDomain, "floor must lie in [0, 1/K)");
  }
  if ((weights.array() < 0.0).any() || !weights.allFinite()) {
    throw Error(ErrorCode::kDomain, "weights must be finite and nonnegative");
  }
  Vector out(k_count);
  std::vector<bool> pinned(static_cast<std::size_t>(k_count), false);
  for (Eigen::Index pass = 0; pass <= k_count; ++pass) {
    double free_mass = 0.0;
    Eigen::Index n_pinned = 0;
    for (Eigen::Index k = 0; k < k_count; ++k) {
      if (pinned[k]) ++n_pinned;
      else free_mass += weights[k];
    }
    const double budget = 1.0 - floor * static_cast<double>(n_pinned);
    bool changed = false;
    for (Eigen::Index k = 0; k < k_count; ++k) {
      if (pinned[k]) {
        out[k] = floor;
        continue;
      }
      out[k] = free_mass > 0.0 ? weights[k] * budget / free_mass
                               : budget / static_cast<double>(k_count - n_pinned);
      if (out[k] < floor) {
        pinned[k] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return out;
}

double angle_deg(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double denom = a.norm() * b.norm();
  if (denom <= 0.0) throw Error(ErrorCode::kZeroVector, "angle with a null vector");
  const double c = std::clamp(a.dot(b) / denom, -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

}  // namespace stad::math
