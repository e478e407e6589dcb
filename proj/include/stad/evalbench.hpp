#pragma once

// Experiment harness: replays an embedding stream through a model and scores
// it step by step.

#include "stad/error.hpp"
#include "stad/gauss_ssm.hpp"
#include "stad/types.hpp"
#include "stad/vmf_ssm.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace stad::eval {

enum class Method { kVmf, kGauss, kVmfStatic, kSource };
enum class EvalMode { kTransductive, kPrequential };

Method parse_method(const std::string& text);
std::string to_string(Method m);
EvalMode parse_mode(const std::string& text);
std::string to_string(EvalMode m);

struct StepMetrics {
  std::int64_t t = 0;
  std::int64_t n = 0;
  std::optional<double> accuracy;
  double mean_entropy = 0.0;
  double dispersion_deg = 0.0;
  std::optional<double> tracking_err_deg;
  double wall_time_ms = 0.0;
};

struct ExperimentConfig {
  Method method = Method::kVmf;
  // Transductive: adapt on H_t, then score H_t. Prequential: score with the
  // model fitted up to t-1, then adapt.
  EvalMode mode = EvalMode::kTransductive;
  // 0 keeps the stream's own steps.
  int batch_size = 0;
  vmf::VmfConfig vmf;
  gauss::GaussConfig gauss;
  // Weight classes by their sample count when averaging tracking error.
  bool count_weighted_tracking = false;
  bool record_timing = true;
  int num_periods = 5;
};

struct Summary {
  Method method = Method::kVmf;
  std::int64_t steps = 0;
  std::int64_t samples = 0;
  std::optional<double> mean_accuracy;     // mean over steps
  std::optional<double> overall_accuracy;  // pooled over samples
  double mean_entropy = 0.0;
  double mean_dispersion_deg = 0.0;
  std::optional<double> mean_tracking_err_deg;
  std::vector<double> period_accuracy;     // per-period means of step accuracy
  std::vector<double> period_dispersion_deg;
  double total_wall_time_ms = 0.0;
  std::int64_t degenerate_messages = 0;
};

struct ExperimentResult {
  std::vector<StepMetrics> steps;
  Summary summary;
  // Prototypes after the last step; absent for the source baseline.
  std::optional<Matrix> final_prototypes;
};

/// Re-cuts the stream into batches of `batch_size` rows, preserving sample
/// order and keeping a ragged final batch. `origin` receives, per new batch,
/// the original t of its last sample.
std::vector<EmbeddingBatch> rebatch(const std::vector<EmbeddingBatch>& stream, int batch_size,
                                    std::vector<std::int64_t>* origin = nullptr);

/// `ground_truth`, when given, holds the K x D true centers of each original
/// step; otherwise tracking error falls back to label-derived class centers.
ExperimentResult run_experiment(const std::vector<EmbeddingBatch>& stream, const Matrix& source_weights,
                                const ExperimentConfig& config,
                                const std::optional<std::vector<Matrix>>& ground_truth = std::nullopt);

struct ClassCenters {
  Matrix centers;              // K x D unit rows; zero rows where missing
  std::vector<bool> present;
  Vector counts;
};

ClassCenters ground_truth_centers(const Matrix& features, const Labels& labels, int num_classes);

/// Mean over classes of the angle between w_k and the true center, degrees.
/// Classes with present[k] == false are skipped; weights (if given) turn the
/// mean into a weighted one.
double angular_tracking_error(const Matrix& prototypes, const Matrix& centers,
                              const std::vector<bool>* present = nullptr, const Vector* weights = nullptr);

/// Mean pairwise angle between prototypes, degrees. Needs K >= 2.
double dispersion(const Matrix& prototypes);

/// Mean Shannon entropy (nats) of the rows of a probability matrix.
double mean_entropy(const Matrix& probabilities);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

void write_metrics_csv(std::ostream& os, const std::vector<StepMetrics>& steps);
nlohmann::json summary_to_json(const Summary& s);
nlohmann::json config_to_json(const ExperimentConfig& c);

struct SweepGrid {
  std::vector<Method> methods = {Method::kVmf};
  std::vector<double> kappa_trans;
  std::vector<double> kappa_ems;
  std::vector<int> windows;
  std::vector<int> batch_sizes;
};

struct SweepInput {
  std::uint64_t seed = 0;
  std::vector<EmbeddingBatch> stream;
  Matrix source_weights;
  std::optional<std::vector<Matrix>> ground_truth;
};

struct SweepRow {
  Method method = Method::kVmf;
  double kappa_trans = 0.0;
  double kappa_ems = 0.0;
  int window = 0;
  int batch_size = 0;
  std::uint64_t seed = 0;
  Summary summary;
};

/// Cross product of the grid (empty axes take the base config's value) over
/// every input stream. Cells run on up to `jobs` threads; rows come back in
/// grid order regardless.
std::vector<SweepRow> sensitivity_sweep(const std::vector<SweepInput>& inputs, const ExperimentConfig& base,
                                        const SweepGrid& grid, int jobs = 1);

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

}  // namespace stad::eval
