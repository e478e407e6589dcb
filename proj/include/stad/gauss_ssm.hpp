#pragma once

// Euclidean counterpart of the vMF model: each class prototype follows a
// linear-Gaussian random walk and the batch is a Gaussian mixture around the
// prototypes, i.e. a mixture of K Kalman filters fitted by EM over a window.

#include "stad/error.hpp"
#include "stad/types.hpp"

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

namespace stad::gauss {

struct GaussConfig {
  int dim = 0;
  int num_classes = 0;
  double sigma_trans_scale = 0.01;
  double sigma_ems_scale = 0.5;
  int window = 3;
  int e_sweeps = 2;
  bool learn_A = false;
  bool learn_sigmas = true;  // the scales above are initial values
  double pi_floor = 1e-4;
  // Use N(h; m_k, P_k + Sigma_ems) instead of the plug-in N(h; m_k, Sigma_ems).
  bool predictive_assignments = false;
  bool normalize_embeddings = true;
  // Covariance of the prototype prior at the source weights (before the
  // first transition). Zero means the first step sees exactly Sigma_trans.
  double prior_cov_scale = 0.0;
  int max_dim = 256;
  bool allow_large_dim = false;

  void validate() const;
};

struct Gaussian {
  Vector mean;
  Matrix cov;
};

struct GaussBelief {
  Matrix mean;              // K x D
  std::vector<Matrix> cov;  // K of D x D

  Gaussian at(Eigen::Index k) const { return {mean.row(k).transpose(), cov[static_cast<std::size_t>(k)]}; }
  void set(Eigen::Index k, const Gaussian& g);
};

struct GaussStep {
  std::int64_t t = 0;
  Matrix features;
  GaussBelief filtered;
  GaussBelief smoothed;
  // lag_cross[k] = Cov(w_t, w_{t-1}) under the smoother; empty at the
  // oldest window step.
  std::vector<Matrix> lag_cross;
  Matrix lambda;
  Vector pi;
};

struct GaussModelState {
  GaussConfig config;
  std::vector<Matrix> transition;  // A_k
  Matrix sigma_trans;
  Matrix sigma_ems;
  std::deque<GaussStep> window;
  GaussBelief anchor;
  Matrix source_prototypes;
  std::optional<std::int64_t> last_t;

  bool adapted() const { return !window.empty(); }
  const GaussStep& newest() const;
};

struct SmoothResult {
  std::vector<Gaussian> smoothed;
  std::vector<Matrix> lag_cross;  // lag_cross[0] is empty
};

struct GaussMStep {
  std::vector<Vector> pi;
  std::optional<std::vector<Matrix>> transition;
  std::optional<Matrix> sigma_trans;
  std::optional<Matrix> sigma_ems;
};

GaussModelState init_gauss(const Matrix& source_weights, const GaussConfig& config);

Gaussian kf_predict(const Gaussian& belief, const Matrix& transition, const Matrix& sigma_trans);

/// Folds the responsibility-weighted batch in as one pseudo-observation at
/// the weighted mean with noise Sigma_ems / sum(resp). Returns the prediction
/// unchanged when sum(resp) <= 1e-8.
Gaussian kf_update_weighted(const Gaussian& predicted, const Matrix& features, const Vector& resp,
                            const Matrix& sigma_ems);

/// Rauch-Tung-Striebel pass over one class's filtered window.
SmoothResult kf_smooth(const std::vector<Gaussian>& filtered, const Matrix& transition,
                       const Matrix& sigma_trans);

Matrix gauss_e_step_assignments(const Matrix& features, const GaussBelief& belief, const Vector& pi,
                                const Matrix& sigma_ems, bool predictive = false);

/// Least-squares transition from smoothed moments of one class:
/// A = (sum E[w_t w_{t-1}^T]) (sum E[w_{t-1} w_{t-1}^T])^{-1}.
Matrix learn_transition(const std::vector<Gaussian>& smoothed, const std::vector<Matrix>& lag_cross);

/// Symmetrizes and floors eigenvalues at `floor`.
Matrix project_psd(const Matrix& m, double floor = 1e-8);

GaussMStep gauss_m_step(const GaussModelState& state);

void gauss_adapt(GaussModelState& state, std::int64_t t, const Matrix& features);

/// Row-wise softmax(W_t^T h) with W_t the newest posterior means.
Matrix gauss_predict(const GaussModelState& state, const Matrix& features);

const Matrix& current_prototypes(const GaussModelState& state);

}  // namespace stad::gauss
