#pragma once

#include "stad/error.hpp"
#include "stad/types.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testutil {

inline stad::Matrix random_unit_rows(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  stad::Matrix m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = g(rng);
    m.row(i).normalize();
  }
  return m;
}

inline stad::Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  stad::Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

inline stad::Matrix random_spd(int d, std::mt19937_64& rng, double ridge = 0.1) {
  const stad::Matrix b = random_matrix(d, d, rng);
  return b * b.transpose() + ridge * stad::Matrix::Identity(d, d);
}

template <typename F>
stad::ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const stad::Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected a stad::Error");
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("stad_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
