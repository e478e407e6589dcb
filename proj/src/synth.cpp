#include "stad/synth.hpp"

#include "stad/mathcore.hpp"
#include "stad/stream.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

namespace stad::synth {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int kPlacementRestarts = 200;
constexpr int kAttemptsPerCenter = 2000;
constexpr std::uint64_t kOrderSeedSalt = 0x9e3779b97f4a7c15ULL;

// Fraction of the surface of S^{D-1} covered by a cap of angular radius r <= 90 deg.
double cap_fraction(double radius_rad, int dim) {
  const double s = std::sin(radius_rad);
  return 0.5 * boost::math::ibeta(0.5 * (dim - 1), 0.5, s * s);
}

Vector gaussian_vector(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  return v;
}

// Unit vector orthogonal to `u` (a unit vector), drawn uniformly.
Vector orthogonal_unit(const Vector& u, std::mt19937_64& rng) {
  for (;;) {
    Vector v = gaussian_vector(static_cast<int>(u.size()), rng);
    v -= v.dot(u) * u;
    const double n = v.norm();
    if (n > 1e-8) return v / n;
  }
}

Matrix well_separated_centers(int k, int dim, std::mt19937_64& rng) {
  const double min_cos = std::cos(required_separation_deg(k, dim) * kDeg);
  for (int restart = 0; restart < kPlacementRestarts; ++restart) {
    Matrix centers(k, dim);
    int placed = 0;
    for (int attempt = 0; placed < k && attempt < kAttemptsPerCenter * k; ++attempt) {
      const Vector c = random_unit_vector(dim, rng);
      bool ok = true;
      for (int j = 0; j < placed && ok; ++j) ok = centers.row(j).dot(c) <= min_cos;
      if (ok) centers.row(placed++) = c.transpose();
    }
    if (placed == k) return centers;
  }
  std::ostringstream msg;
  msg << "cannot place " << k << " directions on S^" << dim - 1 << " with pairwise angle >= "
      << required_separation_deg(k, dim) << " deg";
  throw Error(ErrorCode::kInfeasibleSeparation, msg.str());
}

Vector dirichlet(int k, double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  Vector p(k);
  for (int i = 0; i < k; ++i) p[i] = gamma(rng);
  const double s = p.sum();
  if (!(s > 0.0)) return Vector::Constant(k, 1.0 / k);
  return p / s;
}

Labels draw_labels(const DriftScenario& sc, std::mt19937_64& rng) {
  Labels y(static_cast<std::size_t>(sc.n_per_step));
  if (sc.labels.kind == LabelDistribution::Kind::kDirichlet) {
    const Vector p = dirichlet(sc.num_classes, sc.labels.alpha, rng);
    std::discrete_distribution<std::uint32_t> pick(p.data(), p.data() + p.size());
    for (auto& v : y) v = pick(rng);
  } else {
    std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(sc.num_classes - 1));
    for (auto& v : y) v = pick(rng);
  }
  return y;
}

float round_f32(double v) { return static_cast<float>(v); }

}  // namespace

LabelDistribution LabelDistribution::parse(const std::string& text) {
  LabelDistribution d;
  if (text == "uniform") return d;
  if (text == "ordered" || text == "class_ordered") {
    d.kind = Kind::kClassOrdered;
    return d;
  }
  const std::string prefix = "dirichlet:";
  if (text.rfind(prefix, 0) == 0) {
    d.kind = Kind::kDirichlet;
    try {
      std::size_t used = 0;
      const std::string tail = text.substr(prefix.size());
      d.alpha = std::stod(tail, &used);
      if (used != tail.size()) throw std::invalid_argument(tail);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidConfig, "bad dirichlet concentration in '" + text + "'");
    }
    if (!(d.alpha > 0.0) || !std::isfinite(d.alpha)) {
      throw Error(ErrorCode::kInvalidConfig, "dirichlet concentration must be positive");
    }
    return d;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown label distribution '" + text + "'");
}

std::string LabelDistribution::to_string() const {
  switch (kind) {
    case Kind::kUniform: return "uniform";
    case Kind::kClassOrdered: return "ordered";
    case Kind::kDirichlet: {
      std::ostringstream os;
      os << "dirichlet:" << alpha;
      return os.str();
    }
  }
  return "uniform";
}

void DriftScenario::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); };
  if (num_classes < 1) bad("K must be >= 1");
  if (steps < 1) bad("T must be >= 1");
  if (n_per_step < 1) bad("N must be >= 1");
  if (geometry == Geometry::kSphere) {
    if (dim < 2) bad("sphere geometry needs D >= 2");
    if (!(kappa_true > 0.0) || !std::isfinite(kappa_true)) bad("kappa_true must be positive");
    if (!(drift_deg_per_step >= 0.0) || !std::isfinite(drift_deg_per_step)) bad("drift must be >= 0");
    if (drift_deg_per_step > max_drift_deg) {
      bad("drift of " + std::to_string(drift_deg_per_step) + " deg/step exceeds the bound of " +
          std::to_string(max_drift_deg));
    }
  } else {
    if (dim < 1) bad("D must be >= 1");
    if (!(sigma_true > 0.0) || !std::isfinite(sigma_true)) bad("sigma_true must be positive");
    if (!(drift_vector_scale >= 0.0) || !std::isfinite(drift_vector_scale)) bad("drift scale must be >= 0");
  }
}

double required_separation_deg(int num_classes, int dim) {
  if (num_classes < 2) return 0.0;
  // Smallest angle theta at which K caps of radius theta/2 would cover the sphere.
  double lo = 0.0;
  double hi = std::numbers::pi;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (num_classes * cap_fraction(0.5 * mid, dim) < 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::min(60.0, hi / kDeg);
}

Vector random_unit_vector(int dim, std::mt19937_64& rng) {
  for (;;) {
    Vector v = gaussian_vector(dim, rng);
    const double n = v.norm();
    if (n > 1e-8) return v / n;
  }
}

Matrix sample_vmf(const Vector& mu, double kappa, int n, std::mt19937_64& rng) {
  const auto d = static_cast<int>(mu.size());
  if (d < 2) throw Error(ErrorCode::kDomain, "vMF sampling needs D >= 2");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw Error(ErrorCode::kDomain, "kappa must be finite and >= 0");
  const Vector m = math::normalize(mu).coords();
  const double dm1 = d - 1.0;
  // b written in its cancellation-free form.
  const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + dm1 * std::log1p(-x0 * x0);
  std::gamma_distribution<double> gamma(0.5 * dm1, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Matrix out(n, d);
  for (int i = 0; i < n; ++i) {
    double w = 0.0;
    for (;;) {
      const double g1 = gamma(rng);
      const double g2 = gamma(rng);
      const double z = g1 / (g1 + g2);
      w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
      const double u = unif(rng);
      if (kappa * w + dm1 * std::log1p(-x0 * w) - c >= std::log(u)) break;
    }
    const Vector v = orthogonal_unit(m, rng);
    out.row(i) = (w * m + std::sqrt(std::max(0.0, 1.0 - w * w)) * v).transpose();
  }
  return out;
}

SyntheticStream synth_drift(const DriftScenario& sc) {
  sc.validate();
  std::mt19937_64 rng(sc.seed);
  const int k = sc.num_classes;
  const int d = sc.dim;
  SyntheticStream out;

  // Per-class motion: a rotation plane (sphere) or a drift vector (euclidean).
  Matrix base;
  Matrix motion(k, d);
  if (sc.geometry == Geometry::kSphere) {
    base = well_separated_centers(k, d, rng);
    for (int c = 0; c < k; ++c) motion.row(c) = orthogonal_unit(base.row(c).transpose(), rng).transpose();
  } else {
    base.resize(k, d);
    for (int c = 0; c < k; ++c) base.row(c) = gaussian_vector(d, rng).transpose();
    for (int c = 0; c < k; ++c) motion.row(c) = sc.drift_vector_scale * random_unit_vector(d, rng).transpose();
  }

  auto centers_at = [&](int t) {
    if (sc.geometry == Geometry::kEuclidean) return Matrix(base + static_cast<double>(t) * motion);
    const double a = t * sc.drift_deg_per_step * kDeg;
    return Matrix(std::cos(a) * base + std::sin(a) * motion);
  };

  out.source_prototypes = centers_at(0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 1; t <= sc.steps; ++t) {
    const Matrix centers = centers_at(t);
    out.trajectory.push_back(centers);
    EmbeddingBatch b;
    b.t = t;
    const Labels y = draw_labels(sc, rng);
    b.features.resize(sc.n_per_step, d);
    for (int i = 0; i < sc.n_per_step; ++i) {
      const Eigen::Index c = y[static_cast<std::size_t>(i)];
      if (sc.geometry == Geometry::kSphere) {
        b.features.row(i) = sample_vmf(centers.row(c).transpose(), sc.kappa_true, 1, rng).row(0);
      } else {
        for (int j = 0; j < d; ++j) b.features(i, j) = centers(c, j) + sc.sigma_true * normal(rng);
      }
    }
    b.features = b.features.unaryExpr([](double v) { return static_cast<double>(round_f32(v)); });
    b.labels = y;
    out.batches.push_back(std::move(b));
  }

  if (sc.labels.kind == LabelDistribution::Kind::kClassOrdered) {
    out.batches = stream::make_label_shift(out.batches, sc.seed ^ kOrderSeedSalt, k);
  }
  return out;
}

}  // namespace stad::synth
