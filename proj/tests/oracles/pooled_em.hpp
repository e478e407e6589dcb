#pragma once

// Gaussian mixture EM with isotropic emission noise where every time step
// shares the same class means (a rigid chain). Per-step mixing weights are
// re-estimated after each mean update, floored and renormalized. The prior
// N(mu0, p0 I) enters the mean update exactly.

#include <algorithm>
#include <cmath>
#include <vector>

namespace oracle {

struct PooledEm {
  std::vector<std::vector<double>> means;  // K x D
};

inline std::vector<double> floored(std::vector<double> w, double floor) {
  // Pin entries at the floor until the rest stay above it.
  const std::size_t k = w.size();
  std::vector<bool> pinned(k, false);
  for (;;) {
    double free_mass = 0.0;
    std::size_t n_pinned = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (pinned[i]) ++n_pinned;
      else free_mass += w[i];
    }
    const double budget = 1.0 - floor * static_cast<double>(n_pinned);
    bool changed = false;
    std::vector<double> out(k);
    for (std::size_t i = 0; i < k; ++i) {
      out[i] = pinned[i] ? floor : (free_mass > 0 ? w[i] / free_mass * budget : budget / double(k - n_pinned));
      if (!pinned[i] && out[i] < floor) {
        pinned[i] = true;
        changed = true;
      }
    }
    if (!changed) return out;
  }
}

// steps[t][n][j]; sigma2 is the emission variance; iterations counts
// (responsibility, mean, weight) rounds.
inline PooledEm pooled_em(const std::vector<std::vector<std::vector<double>>>& steps,
                          const std::vector<std::vector<double>>& mu0, double p0, double sigma2,
                          double pi_floor, int iterations) {
  const std::size_t k = mu0.size();
  const std::size_t d = mu0[0].size();
  PooledEm r{mu0};
  std::vector<std::vector<double>> pi(steps.size(), std::vector<double>(k, 1.0 / double(k)));
  for (int it = 0; it < iterations; ++it) {
    std::vector<std::vector<double>> num(k, std::vector<double>(d, 0.0));
    std::vector<double> mass(k, 0.0);
    std::vector<std::vector<double>> step_mass(steps.size(), std::vector<double>(k, 0.0));
    for (std::size_t t = 0; t < steps.size(); ++t) {
      for (const auto& h : steps[t]) {
        std::vector<double> lp(k);
        double mx = -INFINITY;
        for (std::size_t c = 0; c < k; ++c) {
          double sq = 0.0;
          for (std::size_t j = 0; j < d; ++j) sq += (h[j] - r.means[c][j]) * (h[j] - r.means[c][j]);
          lp[c] = std::log(pi[t][c]) - 0.5 * sq / sigma2;
          mx = std::max(mx, lp[c]);
        }
        double z = 0.0;
        for (double v : lp) z += std::exp(v - mx);
        for (std::size_t c = 0; c < k; ++c) {
          const double l = std::exp(lp[c] - mx) / z;
          mass[c] += l;
          step_mass[t][c] += l;
          for (std::size_t j = 0; j < d; ++j) num[c][j] += l * h[j];
        }
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < d; ++j) {
        r.means[c][j] = (mu0[c][j] / p0 + num[c][j] / sigma2) / (1.0 / p0 + mass[c] / sigma2);
      }
    }
    for (std::size_t t = 0; t < steps.size(); ++t) {
      std::vector<double> w(k);
      for (std::size_t c = 0; c < k; ++c) w[c] = step_mass[t][c] / double(steps[t].size());
      pi[t] = floored(w, pi_floor);
    }
  }
  return r;
}

}  // namespace oracle
