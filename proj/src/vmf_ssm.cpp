#include "stad/vmf_ssm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace stad::vmf {
namespace {

constexpr double kDegenerateNorm = 1e-12;

Vector uniform_pi(Eigen::Index k) { return Vector::Constant(k, 1.0 / static_cast<double>(k)); }

void check_features(const VmfModelState& state, const Matrix& features) {
  if (features.rows() == 0) throw Error(ErrorCode::kEmptyBatch, "batch has no rows");
  if (features.cols() != state.config.dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "batch has D=" + std::to_string(features.cols()) + ", model expects " +
                    std::to_string(state.config.dim));
  }
}

void check_time(const VmfModelState& state, std::int64_t t) {
  if (state.last_t && t != *state.last_t + 1) {
    throw Error(ErrorCode::kNonContiguousTime,
                "expected t=" + std::to_string(*state.last_t + 1) + ", got " + std::to_string(t));
  }
}

Matrix ingest(const VmfModelState& state, const Matrix& features) {
  check_features(state, features);
  Matrix h = features;
  math::normalize_rows(h);
  return h;
}

// Message from the left boundary into the oldest window step.
TemporalMessage anchor_message(const VmfModelState& state, Eigen::Index k) {
  if (state.anchor_is_prior) {
    return {state.anchor.rho.row(k).transpose(), state.config.kappa0, std::nullopt};
  }
  return {state.anchor.rho.row(k).transpose(), state.kappa_trans[k], state.anchor.gamma[k]};
}

TemporalMessage belief_message(const PrototypeBelief& belief, double kappa, Eigen::Index k) {
  return {belief.rho.row(k).transpose(), kappa, belief.gamma[k]};
}

double categorical_entropy(const Matrix& lambda) {
  double h = 0.0;
  for (Eigen::Index n = 0; n < lambda.rows(); ++n) {
    for (Eigen::Index k = 0; k < lambda.cols(); ++k) {
      const double p = lambda(n, k);
      if (p > 0.0) h -= p * std::log(p);
    }
  }
  return h;
}

KappaEstimate estimate_kappas(const VmfModelState& state, bool want_trans, bool want_ems);

void finish_step(VmfModelState& state) {
  for (WindowStep& step : state.window) step.pi = m_step_mixing(step.lambda, state.config.pi_floor);
  const bool trans = state.config.learn_kappa_trans && state.window.size() >= 2;
  if (trans || state.config.learn_kappa_ems) {
    // Transition estimate needs two steps; skip it silently during warm-up.
    const KappaEstimate est = estimate_kappas(state, trans, state.config.learn_kappa_ems);
    if (est.kappa_trans) state.kappa_trans = *est.kappa_trans;
    if (est.kappa_ems) state.kappa_ems = *est.kappa_ems;
  }
}

}  // namespace

void VmfConfig::validate() const {
  if (dim < 2) throw Error(ErrorCode::kInvalidConfig, "D must be >= 2");
  if (num_classes < 1) throw Error(ErrorCode::kInvalidConfig, "K must be >= 1");
  if (window < 1) throw Error(ErrorCode::kInvalidConfig, "window must be >= 1");
  if (e_sweeps < 1) throw Error(ErrorCode::kInvalidConfig, "e_sweeps must be >= 1");
  for (double k : {kappa_trans, kappa_ems, kappa0}) {
    if (!(k >= 0.0) || !std::isfinite(k)) {
      throw Error(ErrorCode::kInvalidConfig, "concentrations must be finite and >= 0");
    }
  }
  if (!(pi_floor >= 0.0 && pi_floor < 1.0 / num_classes)) {
    throw Error(ErrorCode::kInvalidConfig, "pi_floor must lie in [0, 1/K)");
  }
}

PrototypeBelief PrototypeBelief::make(Matrix rho, Vector gamma) {
  PrototypeBelief b{std::move(rho), std::move(gamma), Matrix()};
  b.refresh_expectations();
  return b;
}

void PrototypeBelief::refresh_expectations() {
  const int d = static_cast<int>(rho.cols());
  e_w.resize(rho.rows(), rho.cols());
  for (Eigen::Index k = 0; k < rho.rows(); ++k) {
    e_w.row(k) = math::bessel_ratio(d, gamma[k]) * rho.row(k);
  }
}

const WindowStep& VmfModelState::newest() const {
  if (window.empty()) throw Error(ErrorCode::kNotAdapted, "model has not processed any step");
  return window.back();
}

Vector TemporalMessage::contribution() const {
  if (!belief_gamma) return weight * direction;
  return weight * math::bessel_ratio(static_cast<int>(direction.size()), *belief_gamma) * direction;
}

VmfModelState init_vmf(const Matrix& source_weights, const VmfConfig& config) {
  config.validate();
  if (source_weights.rows() != config.num_classes || source_weights.cols() != config.dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "source weights are " + std::to_string(source_weights.rows()) + "x" +
                    std::to_string(source_weights.cols()) + ", config expects " +
                    std::to_string(config.num_classes) + "x" + std::to_string(config.dim));
  }
  VmfModelState state;
  state.config = config;
  state.source_prototypes = source_weights;
  math::normalize_rows(state.source_prototypes);
  state.anchor = PrototypeBelief::make(state.source_prototypes,
                                       Vector::Constant(config.num_classes, config.kappa0));
  state.kappa_trans = Vector::Constant(config.num_classes, config.kappa_trans);
  state.kappa_ems = Vector::Constant(config.num_classes, config.kappa_ems);
  return state;
}

Matrix e_step_assignments(const Matrix& features, const PrototypeBelief& belief, const Vector& pi,
                          const Vector& kappa_ems, bool shared_kappa) {
  const Eigen::Index k_count = belief.num_classes();
  if (features.cols() != belief.dim() || pi.size() != k_count || kappa_ems.size() != k_count) {
    throw Error(ErrorCode::kDimensionMismatch, "assignment inputs disagree on D or K");
  }
  if (!features.allFinite()) throw Error(ErrorCode::kNonFinite, "embeddings contain non-finite values");

  Vector bias(k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    bias[k] = std::log(pi[k]);
    if (!shared_kappa) bias[k] += math::log_vmf_norm_const(static_cast<int>(belief.dim()), kappa_ems[k]);
  }
  Matrix lambda = features * belief.e_w.transpose();
  for (Eigen::Index n = 0; n < lambda.rows(); ++n) {
    auto row = lambda.row(n);
    for (Eigen::Index k = 0; k < k_count; ++k) row[k] = kappa_ems[k] * row[k] + bias[k];
    math::softmax_in_place(std::span<double>(row.data(), static_cast<std::size_t>(k_count)));
  }
  return lambda;
}

BeliefUpdate e_step_prototype(const std::optional<TemporalMessage>& past, const Vector& data_msg,
                              const std::optional<TemporalMessage>& future) {
  Vector numerator = data_msg;
  if (past) numerator += past->contribution();
  if (future) numerator += future->contribution();
  if (!numerator.allFinite()) throw Error(ErrorCode::kNonFinite, "prototype message is non-finite");
  const double gamma = numerator.norm();
  if (gamma <= kDegenerateNorm) {
    throw Error(ErrorCode::kDegenerateMessage, "prototype messages cancel exactly");
  }
  return {math::UnitVector::from_normalized(numerator / gamma), gamma};
}

Vector expected_prototype(const math::UnitVector& rho, double gamma) {
  return math::bessel_ratio(static_cast<int>(rho.dim()), gamma) * rho.coords();
}

Vector m_step_mixing(const Matrix& lambda, double pi_floor) {
  if (lambda.rows() == 0) throw Error(ErrorCode::kEmptyBatch, "no responsibilities to average");
  return math::floor_simplex(lambda.colwise().mean().transpose(), pi_floor);
}

KappaEstimate m_step_kappa(const VmfModelState& state) {
  return estimate_kappas(state, state.config.learn_kappa_trans, state.config.learn_kappa_ems);
}

namespace {

KappaEstimate estimate_kappas(const VmfModelState& state, bool want_trans, bool want_ems) {
  const VmfConfig& cfg = state.config;
  const Eigen::Index k_count = cfg.num_classes;
  const auto steps = static_cast<Eigen::Index>(state.window.size());
  KappaEstimate est;
  auto to_kappa = [&](double r) {
    return math::clamp_kappa(math::estimate_kappa(math::clamp_resultant(std::abs(r)), cfg.dim));
  };

  if (want_trans) {
    if (steps < 2) {
      throw Error(ErrorCode::kInsufficientHistory, "transition concentration needs >= 2 window steps");
    }
    Vector per_class = Vector::Zero(k_count);
    for (Eigen::Index i = 1; i < steps; ++i) {
      const Matrix& prev = state.window[i - 1].belief.e_w;
      const Matrix& cur = state.window[i].belief.e_w;
      for (Eigen::Index k = 0; k < k_count; ++k) per_class[k] += prev.row(k).dot(cur.row(k));
    }
    Vector out(k_count);
    if (cfg.per_class_kappa) {
      for (Eigen::Index k = 0; k < k_count; ++k) out[k] = to_kappa(per_class[k] / (steps - 1));
    } else {
      out.setConstant(to_kappa(per_class.sum() / static_cast<double>((steps - 1) * k_count)));
    }
    est.kappa_trans = out;
  }

  if (want_ems) {
    if (steps < 1) throw Error(ErrorCode::kInsufficientHistory, "no window steps");
    Vector per_class = Vector::Zero(k_count);
    Vector mass = Vector::Zero(k_count);
    double total = 0.0;
    for (const WindowStep& step : state.window) {
      if (step.lambda.rows() != step.features.rows()) continue;
      const Matrix proj = step.features * step.belief.e_w.transpose();  // N x K
      per_class += (step.lambda.array() * proj.array()).colwise().sum().matrix().transpose();
      mass += step.lambda.colwise().sum().transpose();
      total += static_cast<double>(step.features.rows());
    }
    if (total == 0.0) throw Error(ErrorCode::kInsufficientHistory, "no responsibilities in window");
    Vector out(k_count);
    if (cfg.per_class_kappa) {
      for (Eigen::Index k = 0; k < k_count; ++k) {
        out[k] = mass[k] > 0.0 ? to_kappa(per_class[k] / mass[k]) : state.kappa_ems[k];
      }
    } else {
      out.setConstant(to_kappa(per_class.sum() / total));
    }
    est.kappa_ems = out;
  }
  return est;
}

}  // namespace

void run_sweep(VmfModelState& state) {
  const Eigen::Index k_count = state.config.num_classes;
  const auto steps = static_cast<Eigen::Index>(state.window.size());
  const bool shared = state.shared_kappa();
  for (Eigen::Index i = 0; i < steps; ++i) {
    WindowStep& step = state.window[i];
    step.lambda = e_step_assignments(step.features, step.belief, step.pi, state.kappa_ems, shared);
    const Matrix weighted = step.lambda.transpose() * step.features;  // K x D
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const TemporalMessage past = i == 0
                                       ? anchor_message(state, k)
                                       : belief_message(state.window[i - 1].belief, state.kappa_trans[k], k);
      std::optional<TemporalMessage> future;
      if (i + 1 < steps) future = belief_message(state.window[i + 1].belief, state.kappa_trans[k], k);
      const Vector data = state.kappa_ems[k] * weighted.row(k).transpose();
      try {
        const BeliefUpdate upd = e_step_prototype(past, data, future);
        step.belief.rho.row(k) = upd.rho.coords().transpose();
        step.belief.gamma[k] = upd.gamma;
        step.belief.e_w.row(k) =
            math::bessel_ratio(state.config.dim, upd.gamma) * upd.rho.coords().transpose();
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDegenerateMessage) throw;
        ++state.degenerate_messages;
      }
    }
  }
}

void adapt(VmfModelState& state, std::int64_t t, const Matrix& features) {
  check_time(state, t);
  WindowStep step;
  step.t = t;
  step.features = ingest(state, features);
  if (state.window.empty()) {
    step.belief = state.anchor;
    // Before the first update E[w] starts at the source weights themselves.
    if (state.anchor_is_prior) step.belief.e_w = step.belief.rho;
  } else {
    step.belief = state.window.back().belief;
  }
  step.pi = uniform_pi(state.config.num_classes);
  state.window.push_back(std::move(step));
  if (static_cast<int>(state.window.size()) > state.config.window) {
    state.anchor = std::move(state.window.front().belief);
    state.anchor_is_prior = false;
    state.window.pop_front();
  }
  for (int s = 0; s < state.config.e_sweeps; ++s) run_sweep(state);
  finish_step(state);
  state.last_t = t;
}

void static_variant_adapt(VmfModelState& state, std::int64_t t, const Matrix& features) {
  check_time(state, t);
  WindowStep step;
  step.t = t;
  step.features = ingest(state, features);
  state.anchor = PrototypeBelief::make(state.source_prototypes,
                                       Vector::Constant(state.config.num_classes, state.config.kappa0));
  state.anchor_is_prior = true;
  step.belief = state.anchor;
  step.belief.e_w = step.belief.rho;
  step.pi = uniform_pi(state.config.num_classes);
  state.window.clear();
  state.window.push_back(std::move(step));
  for (int s = 0; s < state.config.e_sweeps; ++s) run_sweep(state);
  finish_step(state);
  state.last_t = t;
}

double elbo(const VmfModelState& state) {
  const VmfConfig& cfg = state.config;
  const int d = cfg.dim;
  const Eigen::Index k_count = cfg.num_classes;
  if (state.window.empty()) throw Error(ErrorCode::kNotAdapted, "empty window");
  double total = 0.0;

  const PrototypeBelief& first = state.window.front().belief;
  for (Eigen::Index k = 0; k < k_count; ++k) {
    if (state.anchor_is_prior) {
      total += math::log_vmf_norm_const(d, cfg.kappa0) +
               cfg.kappa0 * state.anchor.rho.row(k).dot(first.e_w.row(k));
    } else {
      total += math::log_vmf_norm_const(d, state.kappa_trans[k]) +
               state.kappa_trans[k] * state.anchor.e_w.row(k).dot(first.e_w.row(k));
    }
  }

  Vector log_c_ems(k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) log_c_ems[k] = math::log_vmf_norm_const(d, state.kappa_ems[k]);

  for (std::size_t i = 0; i < state.window.size(); ++i) {
    const WindowStep& step = state.window[i];
    if (step.lambda.rows() != step.features.rows()) {
      throw Error(ErrorCode::kNotAdapted, "window step has no responsibilities yet");
    }
    const Matrix proj = step.features * step.belief.e_w.transpose();
    for (Eigen::Index n = 0; n < proj.rows(); ++n) {
      for (Eigen::Index k = 0; k < k_count; ++k) {
        const double l = step.lambda(n, k);
        if (l > 0.0) total += l * (std::log(step.pi[k]) + log_c_ems[k] + state.kappa_ems[k] * proj(n, k));
      }
    }
    total += categorical_entropy(step.lambda);
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const double g = step.belief.gamma[k];
      total += -math::log_vmf_norm_const(d, g) - g * math::bessel_ratio(d, g);
      if (i > 0) {
        total += math::log_vmf_norm_const(d, state.kappa_trans[k]) +
                 state.kappa_trans[k] * state.window[i - 1].belief.e_w.row(k).dot(step.belief.e_w.row(k));
      }
    }
  }
  return total;
}

Matrix cluster_posterior(const Matrix& features, const Matrix& directions, const Vector& kappa_ems,
                         const Vector& pi, bool shared_kappa) {
  const Eigen::Index k_count = directions.rows();
  if (features.cols() != directions.cols() || kappa_ems.size() != k_count || pi.size() != k_count) {
    throw Error(ErrorCode::kDimensionMismatch, "posterior inputs disagree on D or K");
  }
  Vector bias(k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    bias[k] = std::log(pi[k]);
    if (!shared_kappa) {
      bias[k] += math::log_vmf_norm_const(static_cast<int>(directions.cols()), kappa_ems[k]);
    }
  }
  Matrix probs = features * directions.transpose();
  for (Eigen::Index n = 0; n < probs.rows(); ++n) {
    auto row = probs.row(n);
    for (Eigen::Index k = 0; k < k_count; ++k) row[k] = kappa_ems[k] * row[k] + bias[k];
    math::softmax_in_place(std::span<double>(row.data(), static_cast<std::size_t>(k_count)));
  }
  return probs;
}

Prediction predict(const VmfModelState& state, const Matrix& features) {
  const WindowStep& step = state.newest();
  const Matrix h = ingest(state, features);
  Prediction out;
  out.probabilities = cluster_posterior(h, step.belief.rho, state.kappa_ems, step.pi, state.shared_kappa());
  out.labels.resize(static_cast<std::size_t>(h.rows()));
  for (Eigen::Index n = 0; n < h.rows(); ++n) {
    Eigen::Index best = 0;
    out.probabilities.row(n).maxCoeff(&best);
    out.labels[static_cast<std::size_t>(n)] = static_cast<int>(best);
  }
  return out;
}

const Matrix& current_prototypes(const VmfModelState& state) { return state.newest().belief.rho; }

}  // namespace stad::vmf
