#include "stad/gauss_ssm.hpp"

#include "stad/mathcore.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

namespace stad::gauss {
namespace {

using ColMatrix = Eigen::MatrixXd;

constexpr double kEmptyCluster = 1e-8;

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

// Solves S X = rhs for symmetric positive (semi)definite S without forming
// an inverse. Falls back to LDLT for semidefinite systems.
Matrix spd_solve(const Matrix& s, const Matrix& rhs) {
  const ColMatrix sc = s;
  Eigen::LLT<ColMatrix> llt(sc);
  if (llt.info() == Eigen::Success) return llt.solve(ColMatrix(rhs));
  Eigen::LDLT<ColMatrix> ldlt(sc);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    ColMatrix x = ldlt.solve(ColMatrix(rhs));
    if (x.allFinite()) return x;
  }
  throw Error(ErrorCode::kSolverFailure, "system is not positive definite");
}

Vector uniform_pi(Eigen::Index k) { return Vector::Constant(k, 1.0 / static_cast<double>(k)); }

Matrix identity(int d) { return Matrix::Identity(d, d); }

void check_time(const GaussModelState& state, std::int64_t t) {
  if (state.last_t && t != *state.last_t + 1) {
    throw Error(ErrorCode::kNonContiguousTime,
                "expected t=" + std::to_string(*state.last_t + 1) + ", got " + std::to_string(t));
  }
}

Matrix ingest(const GaussModelState& state, const Matrix& features) {
  if (features.rows() == 0) throw Error(ErrorCode::kEmptyBatch, "batch has no rows");
  if (features.cols() != state.config.dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "batch has D=" + std::to_string(features.cols()) + ", model expects " +
                    std::to_string(state.config.dim));
  }
  if (!features.allFinite()) throw Error(ErrorCode::kNonFinite, "embeddings contain non-finite values");
  Matrix h = features;
  if (state.config.normalize_embeddings) math::normalize_rows(h);
  return h;
}

// Forward filter plus smoother for every class, given current
// responsibilities.
void filter_and_smooth(GaussModelState& state) {
  const Eigen::Index k_count = state.config.num_classes;
  const std::size_t steps = state.window.size();
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const Matrix& a = state.transition[static_cast<std::size_t>(k)];
    std::vector<Gaussian> filtered;
    filtered.reserve(steps);
    Gaussian prev = state.anchor.at(k);
    for (GaussStep& step : state.window) {
      const Gaussian pred = kf_predict(prev, a, state.sigma_trans);
      prev = kf_update_weighted(pred, step.features, step.lambda.col(k), state.sigma_ems);
      step.filtered.set(k, prev);
      filtered.push_back(prev);
    }
    const SmoothResult sm = kf_smooth(filtered, a, state.sigma_trans);
    for (std::size_t i = 0; i < steps; ++i) {
      GaussStep& step = state.window[i];
      step.smoothed.set(k, sm.smoothed[i]);
      step.lag_cross.resize(static_cast<std::size_t>(k_count));
      step.lag_cross[static_cast<std::size_t>(k)] = sm.lag_cross[i];
    }
  }
}

void apply_m_step(GaussModelState& state) {
  const GaussMStep m = gauss_m_step(state);
  for (std::size_t i = 0; i < state.window.size(); ++i) state.window[i].pi = m.pi[i];
  if (m.transition) state.transition = *m.transition;
  if (m.sigma_trans) state.sigma_trans = *m.sigma_trans;
  if (m.sigma_ems) state.sigma_ems = *m.sigma_ems;
}

}  // namespace

void GaussConfig::validate() const {
  if (dim < 1) throw Error(ErrorCode::kInvalidConfig, "D must be >= 1");
  if (num_classes < 1) throw Error(ErrorCode::kInvalidConfig, "K must be >= 1");
  if (window < 1) throw Error(ErrorCode::kInvalidConfig, "window must be >= 1");
  if (e_sweeps < 1) throw Error(ErrorCode::kInvalidConfig, "e_sweeps must be >= 1");
  if (!(sigma_trans_scale >= 0.0) || !(sigma_ems_scale > 0.0) || !(prior_cov_scale >= 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "covariance scales must be nonnegative (emission positive)");
  }
  if (!(pi_floor >= 0.0 && pi_floor < 1.0 / num_classes)) {
    throw Error(ErrorCode::kInvalidConfig, "pi_floor must lie in [0, 1/K)");
  }
  if (dim > max_dim && !allow_large_dim) {
    throw Error(ErrorCode::kInvalidConfig, "Gaussian model is limited to D <= " + std::to_string(max_dim) +
                                               " unless allow_large_dim is set");
  }
  if (normalize_embeddings && dim < 2) {
    throw Error(ErrorCode::kInvalidConfig, "normalized embeddings need D >= 2");
  }
}

void GaussBelief::set(Eigen::Index k, const Gaussian& g) {
  mean.row(k) = g.mean.transpose();
  cov[static_cast<std::size_t>(k)] = g.cov;
}

const GaussStep& GaussModelState::newest() const {
  if (window.empty()) throw Error(ErrorCode::kNotAdapted, "model has not processed any step");
  return window.back();
}

GaussModelState init_gauss(const Matrix& source_weights, const GaussConfig& config) {
  config.validate();
  if (source_weights.rows() != config.num_classes || source_weights.cols() != config.dim) {
    throw Error(ErrorCode::kDimensionMismatch, "source weights do not match K x D");
  }
  GaussModelState state;
  state.config = config;
  state.source_prototypes = source_weights;
  if (config.normalize_embeddings) math::normalize_rows(state.source_prototypes);
  const int d = config.dim;
  state.transition.assign(static_cast<std::size_t>(config.num_classes), identity(d));
  state.sigma_trans = config.sigma_trans_scale * identity(d);
  state.sigma_ems = config.sigma_ems_scale * identity(d);
  state.anchor.mean = state.source_prototypes;
  state.anchor.cov.assign(static_cast<std::size_t>(config.num_classes), config.prior_cov_scale * identity(d));
  return state;
}

Gaussian kf_predict(const Gaussian& belief, const Matrix& transition, const Matrix& sigma_trans) {
  const Eigen::Index d = belief.mean.size();
  if (belief.cov.rows() != d || belief.cov.cols() != d || transition.rows() != d ||
      transition.cols() != d || sigma_trans.rows() != d || sigma_trans.cols() != d) {
    throw Error(ErrorCode::kDimensionMismatch, "kf_predict shape mismatch");
  }
  return {transition * belief.mean,
          symmetrize(transition * belief.cov * transition.transpose() + sigma_trans)};
}

Gaussian kf_update_weighted(const Gaussian& predicted, const Matrix& features, const Vector& resp,
                            const Matrix& sigma_ems) {
  const Eigen::Index d = predicted.mean.size();
  if (features.cols() != d || resp.size() != features.rows() || sigma_ems.rows() != d) {
    throw Error(ErrorCode::kDimensionMismatch, "kf_update_weighted shape mismatch");
  }
  const double total = resp.sum();
  if (total <= kEmptyCluster) return predicted;
  const Vector observed = features.transpose() * resp / total;
  const Matrix innovation_cov = predicted.cov + sigma_ems / total;
  // G = P S^{-1}; with P and S symmetric, G^T = S^{-1} P.
  const Matrix gain = spd_solve(innovation_cov, predicted.cov).transpose();
  Gaussian out;
  out.mean = predicted.mean + gain * (observed - predicted.mean);
  out.cov = symmetrize(predicted.cov - gain * predicted.cov);
  return out;
}

SmoothResult kf_smooth(const std::vector<Gaussian>& filtered, const Matrix& transition,
                       const Matrix& sigma_trans) {
  if (filtered.empty()) throw Error(ErrorCode::kInsufficientHistory, "nothing to smooth");
  const std::size_t steps = filtered.size();
  SmoothResult out;
  out.smoothed = filtered;
  out.lag_cross.assign(steps, Matrix());
  for (std::size_t j = steps - 1; j-- > 0;) {
    const Gaussian& f = filtered[j];
    const Matrix pred_cov = symmetrize(transition * f.cov * transition.transpose() + sigma_trans);
    // J = P A^T Ppred^{-1}  =>  J^T = Ppred^{-1} A P
    const Matrix gain = spd_solve(pred_cov, transition * f.cov).transpose();
    const Gaussian& next = out.smoothed[j + 1];
    out.smoothed[j].mean = f.mean + gain * (next.mean - transition * f.mean);
    out.smoothed[j].cov = symmetrize(f.cov + gain * (next.cov - pred_cov) * gain.transpose());
    out.lag_cross[j + 1] = next.cov * gain.transpose();
  }
  return out;
}

Matrix gauss_e_step_assignments(const Matrix& features, const GaussBelief& belief, const Vector& pi,
                                const Matrix& sigma_ems, bool predictive) {
  const Eigen::Index k_count = belief.mean.rows();
  const Eigen::Index d = belief.mean.cols();
  if (features.cols() != d || pi.size() != k_count || sigma_ems.rows() != d) {
    throw Error(ErrorCode::kDimensionMismatch, "assignment inputs disagree on D or K");
  }
  Matrix logp(features.rows(), k_count);
  std::optional<Eigen::LLT<ColMatrix>> shared;
  if (!predictive) {
    shared.emplace(ColMatrix(sigma_ems));
    if (shared->info() != Eigen::Success) throw Error(ErrorCode::kSolverFailure, "Sigma_ems is not PD");
  }
  for (Eigen::Index k = 0; k < k_count; ++k) {
    Eigen::LLT<ColMatrix> local;
    const Eigen::LLT<ColMatrix>* chol = nullptr;
    if (predictive) {
      local.compute(ColMatrix(belief.cov[static_cast<std::size_t>(k)] + sigma_ems));
      if (local.info() != Eigen::Success) throw Error(ErrorCode::kSolverFailure, "predictive cov not PD");
      chol = &local;
    } else {
      chol = &*shared;
    }
    const ColMatrix diff = (features.rowwise() - belief.mean.row(k)).transpose();  // D x N
    const ColMatrix z = chol->matrixL().solve(diff);
    const double logdet = 2.0 * chol->matrixL().toDenseMatrix().diagonal().array().log().sum();
    logp.col(k) = (-0.5 * z.colwise().squaredNorm().array() - 0.5 * logdet + std::log(pi[k])).transpose();
  }
  for (Eigen::Index n = 0; n < logp.rows(); ++n) {
    auto row = logp.row(n);
    math::softmax_in_place(std::span<double>(row.data(), static_cast<std::size_t>(k_count)));
  }
  return logp;
}

Matrix learn_transition(const std::vector<Gaussian>& smoothed, const std::vector<Matrix>& lag_cross) {
  if (smoothed.size() < 2 || lag_cross.size() != smoothed.size()) {
    throw Error(ErrorCode::kInsufficientHistory, "transition estimate needs >= 2 steps");
  }
  const Eigen::Index d = smoothed.front().mean.size();
  Matrix lag = Matrix::Zero(d, d);
  Matrix prev = Matrix::Zero(d, d);
  for (std::size_t i = 1; i < smoothed.size(); ++i) {
    lag += lag_cross[i] + smoothed[i].mean * smoothed[i - 1].mean.transpose();
    prev += smoothed[i - 1].cov + smoothed[i - 1].mean * smoothed[i - 1].mean.transpose();
  }
  // A = lag prev^{-1}  =>  A^T = prev^{-1} lag^T
  return spd_solve(symmetrize(prev), lag.transpose()).transpose();
}

Matrix project_psd(const Matrix& m, double floor) {
  Eigen::SelfAdjointEigenSolver<ColMatrix> eig(ColMatrix(symmetrize(m)));
  if (eig.info() != Eigen::Success) throw Error(ErrorCode::kSolverFailure, "eigendecomposition failed");
  const Vector vals = eig.eigenvalues().cwiseMax(floor);
  const ColMatrix& vecs = eig.eigenvectors();
  return symmetrize(vecs * vals.asDiagonal() * vecs.transpose());
}

GaussMStep gauss_m_step(const GaussModelState& state) {
  const GaussConfig& cfg = state.config;
  const Eigen::Index k_count = cfg.num_classes;
  const std::size_t steps = state.window.size();
  const int d = cfg.dim;
  GaussMStep out;
  for (const GaussStep& step : state.window) {
    if (step.lambda.rows() != step.features.rows()) {
      throw Error(ErrorCode::kNotAdapted, "window step has no responsibilities yet");
    }
    out.pi.push_back(math::floor_simplex(step.lambda.colwise().mean().transpose(), cfg.pi_floor));
  }

  if (cfg.learn_A && steps >= 2) {
    std::vector<Matrix> a(static_cast<std::size_t>(k_count));
    for (Eigen::Index k = 0; k < k_count; ++k) {
      std::vector<Gaussian> sm;
      std::vector<Matrix> lag;
      for (const GaussStep& step : state.window) {
        sm.push_back(step.smoothed.at(k));
        lag.push_back(step.lag_cross.empty() ? Matrix() : step.lag_cross[static_cast<std::size_t>(k)]);
      }
      a[static_cast<std::size_t>(k)] = learn_transition(sm, lag);
    }
    out.transition = std::move(a);
  }

  if (cfg.learn_sigmas) {
    const std::vector<Matrix>& a = out.transition ? *out.transition : state.transition;
    if (steps >= 2) {
      Matrix q = Matrix::Zero(d, d);
      for (Eigen::Index k = 0; k < k_count; ++k) {
        const Matrix& ak = a[static_cast<std::size_t>(k)];
        for (std::size_t i = 1; i < steps; ++i) {
          const Gaussian cur = state.window[i].smoothed.at(k);
          const Gaussian prv = state.window[i - 1].smoothed.at(k);
          const Matrix s_cur = cur.cov + cur.mean * cur.mean.transpose();
          const Matrix s_prev = prv.cov + prv.mean * prv.mean.transpose();
          const Matrix s_lag = state.window[i].lag_cross[static_cast<std::size_t>(k)] +
                               cur.mean * prv.mean.transpose();
          q += s_cur - ak * s_lag.transpose() - s_lag * ak.transpose() + ak * s_prev * ak.transpose();
        }
      }
      out.sigma_trans = project_psd(q / static_cast<double>((steps - 1) * static_cast<std::size_t>(k_count)));
    }
    Matrix r = Matrix::Zero(d, d);
    double total = 0.0;
    for (const GaussStep& step : state.window) {
      for (Eigen::Index k = 0; k < k_count; ++k) {
        const Matrix diff = step.features.rowwise() - step.smoothed.mean.row(k);
        const Vector w = step.lambda.col(k);
        r += diff.transpose() * w.asDiagonal() * diff + w.sum() * step.smoothed.cov[static_cast<std::size_t>(k)];
      }
      total += static_cast<double>(step.features.rows());
    }
    out.sigma_ems = project_psd(r / total);
  }
  return out;
}

void gauss_adapt(GaussModelState& state, std::int64_t t, const Matrix& features) {
  check_time(state, t);
  GaussStep step;
  step.t = t;
  step.features = ingest(state, features);
  const GaussBelief& init = state.window.empty() ? state.anchor : state.window.back().smoothed;
  step.filtered = init;
  step.smoothed = init;
  step.pi = uniform_pi(state.config.num_classes);
  state.window.push_back(std::move(step));
  if (static_cast<int>(state.window.size()) > state.config.window) {
    state.anchor = std::move(state.window.front().filtered);
    state.window.pop_front();
  }
  for (int s = 0; s < state.config.e_sweeps; ++s) {
    for (GaussStep& st : state.window) {
      st.lambda = gauss_e_step_assignments(st.features, st.smoothed, st.pi, state.sigma_ems,
                                           state.config.predictive_assignments);
    }
    filter_and_smooth(state);
    apply_m_step(state);
  }
  state.last_t = t;
}

Matrix gauss_predict(const GaussModelState& state, const Matrix& features) {
  const GaussStep& step = state.newest();
  const Matrix h = ingest(state, features);
  Matrix probs = h * step.smoothed.mean.transpose();
  for (Eigen::Index n = 0; n < probs.rows(); ++n) {
    auto row = probs.row(n);
    math::softmax_in_place(std::span<double>(row.data(), static_cast<std::size_t>(probs.cols())));
  }
  return probs;
}

const Matrix& current_prototypes(const GaussModelState& state) { return state.newest().smoothed.mean; }

}  // namespace stad::gauss
