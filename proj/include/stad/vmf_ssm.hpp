#pragma once

// Hyperspherical state-space mixture: class prototypes live on S^{D-1},
// evolve through a vMF random walk, and emit embeddings through a vMF
// mixture. Inference is mean-field variational EM over a sliding window.

#include "stad/error.hpp"
#include "stad/mathcore.hpp"
#include "stad/types.hpp"

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

namespace stad::vmf {

struct VmfConfig {
  int dim = 0;
  int num_classes = 0;
  double kappa_trans = 100.0;
  double kappa_ems = 100.0;
  double kappa0 = 100.0;
  int window = 3;
  int e_sweeps = 2;
  bool learn_kappa_trans = false;
  bool learn_kappa_ems = false;
  bool per_class_kappa = false;
  double pi_floor = 1e-4;

  void validate() const;
};

/// Variational posterior q(w_k) = vMF(rho_k, gamma_k) for every class, with
/// the cached expectation E[w_k] = A_D(gamma_k) rho_k.
struct PrototypeBelief {
  Matrix rho;     // K x D, unit rows
  Vector gamma;   // K
  Matrix e_w;     // K x D

  static PrototypeBelief make(Matrix rho, Vector gamma);
  void refresh_expectations();
  Eigen::Index num_classes() const { return rho.rows(); }
  Eigen::Index dim() const { return rho.cols(); }
};

struct WindowStep {
  std::int64_t t = 0;
  Matrix features;  // N x D, unit rows
  PrototypeBelief belief;
  Matrix lambda;    // N x K responsibilities
  Vector pi;        // K
};

struct VmfModelState {
  VmfConfig config;
  std::deque<WindowStep> window;
  // Belief at the left boundary of the window. Until the first eviction it
  // is the source prior (rho = source prototypes, gamma = kappa0).
  PrototypeBelief anchor;
  bool anchor_is_prior = true;
  Matrix source_prototypes;
  // Per-class concentrations; all entries equal unless per_class_kappa.
  Vector kappa_trans;
  Vector kappa_ems;
  std::int64_t degenerate_messages = 0;
  std::optional<std::int64_t> last_t;

  bool adapted() const { return !window.empty(); }
  const WindowStep& newest() const;
  bool shared_kappa() const { return !config.per_class_kappa; }
};

/// A temporal neighbour's contribution to a prototype update. For the
/// initial prior the contribution is weight * direction exactly; for a
/// variational belief it is weight * A_D(gamma) * direction.
struct TemporalMessage {
  Vector direction;
  double weight = 0.0;
  std::optional<double> belief_gamma;

  Vector contribution() const;
};

struct BeliefUpdate {
  math::UnitVector rho;
  double gamma;
};

struct KappaEstimate {
  std::optional<Vector> kappa_trans;
  std::optional<Vector> kappa_ems;
};

struct Prediction {
  Matrix probabilities;  // N x K
  std::vector<int> labels;
};

VmfModelState init_vmf(const Matrix& source_weights, const VmfConfig& config);

/// lambda_nk proportional to pi_k C_D(kappa_k) exp(kappa_k <E[w_k], h_n>), in
/// the log domain. With a shared kappa the normalizer cancels and is skipped.
Matrix e_step_assignments(const Matrix& features, const PrototypeBelief& belief, const Vector& pi,
                          const Vector& kappa_ems, bool shared_kappa);

/// Mean-field update of one class prototype from its temporal neighbours and
/// the responsibility-weighted data term. Throws DegenerateMessage when the
/// natural parameter vanishes.
BeliefUpdate e_step_prototype(const std::optional<TemporalMessage>& past, const Vector& data_msg,
                              const std::optional<TemporalMessage>& future);

Vector expected_prototype(const math::UnitVector& rho, double gamma);

/// Column means of lambda, floored at pi_floor and renormalized.
Vector m_step_mixing(const Matrix& lambda, double pi_floor);

/// Closed-form concentration estimates from the current window. The
/// emission estimate pools every window step.
KappaEstimate m_step_kappa(const VmfModelState& state);

/// Ingests H_t (rows are re-normalized), runs e_sweeps coordinate-ascent
/// sweeps over the window, then updates mixing weights and, when enabled,
/// the concentrations.
void adapt(VmfModelState& state, std::int64_t t, const Matrix& features);

/// Ablation without dynamics: every step restarts from the source prior and
/// is fitted as an isolated mixture.
void static_variant_adapt(VmfModelState& state, std::int64_t t, const Matrix& features);

/// One forward coordinate-ascent sweep over the window (assignments then
/// prototypes, oldest step first). adapt() calls this e_sweeps times.
void run_sweep(VmfModelState& state);

/// Evidence lower bound of the current window under the variational
/// posterior, including the vMF and categorical entropies.
double elbo(const VmfModelState& state);

/// Cluster posterior with bias terms log C_D(kappa_k) + log pi_k (the bias
/// from C_D is dropped when kappa is shared since it cancels).
Matrix cluster_posterior(const Matrix& features, const Matrix& directions, const Vector& kappa_ems,
                         const Vector& pi, bool shared_kappa);

Prediction predict(const VmfModelState& state, const Matrix& features);

/// Current classifier weights W_t (newest step's mean directions).
const Matrix& current_prototypes(const VmfModelState& state);

}  // namespace stad::vmf
