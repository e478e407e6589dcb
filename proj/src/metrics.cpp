#include "stad/evalbench.hpp"
#include "stad/mathcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace stad::eval {
namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

double clamped_angle(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na <= math::kZeroNorm || nb <= math::kZeroNorm) {
    throw Error(ErrorCode::kZeroVector, "angle of a zero vector");
  }
  return std::acos(std::clamp(a.dot(b) / (na * nb), -1.0, 1.0)) * kRadToDeg;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

template <typename T>
nlohmann::json opt_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

ClassCenters ground_truth_centers(const Matrix& features, const Labels& labels, int num_classes) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "labels and features differ in length");
  }
  ClassCenters out;
  out.centers = Matrix::Zero(num_classes, features.cols());
  out.counts = Vector::Zero(num_classes);
  out.present.assign(static_cast<std::size_t>(num_classes), false);
  Matrix sums = Matrix::Zero(num_classes, features.cols());
  for (Eigen::Index n = 0; n < features.rows(); ++n) {
    const std::uint32_t y = labels[static_cast<std::size_t>(n)];
    if (y >= static_cast<std::uint32_t>(num_classes)) throw Error(ErrorCode::kDomain, "label out of range");
    const double norm = features.row(n).norm();
    if (norm <= math::kZeroNorm) throw Error(ErrorCode::kZeroVector, "zero feature row " + std::to_string(n));
    sums.row(y) += features.row(n) / norm;
    out.counts[y] += 1.0;
  }
  bool any = false;
  for (int k = 0; k < num_classes; ++k) {
    const double norm = sums.row(k).norm();
    if (out.counts[k] > 0 && norm > math::kZeroNorm) {
      out.centers.row(k) = sums.row(k) / norm;
      out.present[static_cast<std::size_t>(k)] = true;
      any = true;
    }
  }
  if (!any) throw Error(ErrorCode::kMissingGroundTruth, "no class has samples");
  return out;
}

double angular_tracking_error(const Matrix& prototypes, const Matrix& centers, const std::vector<bool>* present,
                              const Vector* weights) {
  if (prototypes.rows() != centers.rows() || prototypes.cols() != centers.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "prototypes and ground truth differ in shape");
  }
  double total = 0.0;
  double mass = 0.0;
  for (Eigen::Index k = 0; k < prototypes.rows(); ++k) {
    if (present && !(*present)[static_cast<std::size_t>(k)]) continue;
    const double w = weights ? (*weights)[k] : 1.0;
    if (w <= 0.0) continue;
    total += w * clamped_angle(prototypes.row(k).transpose(), centers.row(k).transpose());
    mass += w;
  }
  if (mass <= 0.0) throw Error(ErrorCode::kMissingGroundTruth, "no class available for tracking error");
  return total / mass;
}

double dispersion(const Matrix& prototypes) {
  const Eigen::Index k = prototypes.rows();
  if (k < 2) throw Error(ErrorCode::kDomain, "dispersion needs K >= 2");
  double total = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i + 1; j < k; ++j) {
      total += clamped_angle(prototypes.row(i).transpose(), prototypes.row(j).transpose());
    }
  }
  return 2.0 * total / static_cast<double>(k * (k - 1));
}

double mean_entropy(const Matrix& probabilities) {
  if (probabilities.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index n = 0; n < probabilities.rows(); ++n) {
    for (Eigen::Index k = 0; k < probabilities.cols(); ++k) {
      const double p = probabilities(n, k);
      if (p > 0.0) total -= p * std::log(p);
    }
  }
  return std::max(0.0, total / static_cast<double>(probabilities.rows()));
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::kDomain, "pearson needs two equal series, n >= 2");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw Error(ErrorCode::kDomain, "pearson of a constant series");
  return sxy / std::sqrt(sxx * syy);
}

void write_metrics_csv(std::ostream& os, const std::vector<StepMetrics>& steps) {
  os << "t,n,accuracy,mean_entropy,dispersion_deg,tracking_err_deg,wall_time_ms\n";
  for (const StepMetrics& m : steps) {
    os << m.t << ',' << m.n << ',' << fmt(m.accuracy) << ',' << fmt(m.mean_entropy) << ','
       << fmt(m.dispersion_deg) << ',' << fmt(m.tracking_err_deg) << ',' << fmt(m.wall_time_ms) << '\n';
  }
}

nlohmann::json summary_to_json(const Summary& s) {
  return {
      {"method", to_string(s.method)},
      {"steps", s.steps},
      {"samples", s.samples},
      {"mean_accuracy", opt_json(s.mean_accuracy)},
      {"overall_accuracy", opt_json(s.overall_accuracy)},
      {"mean_entropy", s.mean_entropy},
      {"mean_dispersion_deg", s.mean_dispersion_deg},
      {"mean_tracking_err_deg", opt_json(s.mean_tracking_err_deg)},
      {"period_accuracy", s.period_accuracy},
      {"period_dispersion_deg", s.period_dispersion_deg},
      {"total_wall_time_ms", s.total_wall_time_ms},
      {"degenerate_messages", s.degenerate_messages},
  };
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j{
      {"method", to_string(c.method)},
      {"mode", to_string(c.mode)},
      {"batch_size", c.batch_size},
      {"count_weighted_tracking", c.count_weighted_tracking},
      {"num_periods", c.num_periods},
  };
  if (c.method == Method::kVmf || c.method == Method::kVmfStatic || c.method == Method::kSource) {
    j["vmf"] = {{"kappa_trans", c.vmf.kappa_trans}, {"kappa_ems", c.vmf.kappa_ems},
                {"kappa0", c.vmf.kappa0},           {"window", c.vmf.window},
                {"e_sweeps", c.vmf.e_sweeps},       {"learn_kappa_trans", c.vmf.learn_kappa_trans},
                {"learn_kappa_ems", c.vmf.learn_kappa_ems}, {"per_class_kappa", c.vmf.per_class_kappa},
                {"pi_floor", c.vmf.pi_floor}};
  }
  if (c.method == Method::kGauss) {
    j["gauss"] = {{"sigma_trans_scale", c.gauss.sigma_trans_scale},
                  {"sigma_ems_scale", c.gauss.sigma_ems_scale},
                  {"window", c.gauss.window},
                  {"e_sweeps", c.gauss.e_sweeps},
                  {"learn_A", c.gauss.learn_A},
                  {"learn_sigmas", c.gauss.learn_sigmas},
                  {"pi_floor", c.gauss.pi_floor},
                  {"predictive_assignments", c.gauss.predictive_assignments},
                  {"normalize_embeddings", c.gauss.normalize_embeddings},
                  {"prior_cov_scale", c.gauss.prior_cov_scale}};
  }
  return j;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "method,seed,kappa_trans,kappa_ems,window,batch_size,mean_accuracy,overall_accuracy,"
        "mean_dispersion_deg,mean_tracking_err_deg,wall_time_ms\n";
  for (const SweepRow& r : rows) {
    os << to_string(r.method) << ',' << r.seed << ',' << fmt(r.kappa_trans) << ',' << fmt(r.kappa_ems) << ','
       << r.window << ',' << r.batch_size << ',' << fmt(r.summary.mean_accuracy) << ','
       << fmt(r.summary.overall_accuracy) << ',' << fmt(r.summary.mean_dispersion_deg) << ','
       << fmt(r.summary.mean_tracking_err_deg) << ',' << fmt(r.summary.total_wall_time_ms) << '\n';
  }
}

}  // namespace stad::eval
