#include "stad/evalbench.hpp"
#include "stad/mathcore.hpp"

#include <atomic>
#include <chrono>
#include <memory>
#include <thread>

namespace stad::eval {
namespace {

// Source classifier: softmax(kappa * W0 h) on normalized h with the raw
// source weights, so the argmax is exactly that of W0^T h.
Matrix source_posterior(const Matrix& weights, const Matrix& features, double temperature) {
  Matrix h = features;
  math::normalize_rows(h);
  Matrix logits = temperature * (h * weights.transpose());
  for (Eigen::Index n = 0; n < logits.rows(); ++n) {
    auto row = logits.row(n);
    math::softmax_in_place(std::span<double>(row.data(), static_cast<std::size_t>(logits.cols())));
  }
  return logits;
}

class Runner {
 public:
  virtual ~Runner() = default;
  virtual void adapt(std::int64_t t, const Matrix& features) = 0;
  virtual Matrix predict(const Matrix& features) const = 0;
  virtual Matrix prototypes() const = 0;
  virtual std::int64_t degenerate_messages() const { return 0; }
};

class SourceRunner final : public Runner {
 public:
  SourceRunner(Matrix w, double temperature) : w_(std::move(w)), temperature_(temperature) {}
  void adapt(std::int64_t, const Matrix&) override {}
  Matrix predict(const Matrix& features) const override { return source_posterior(w_, features, temperature_); }
  Matrix prototypes() const override { return w_; }

 private:
  Matrix w_;
  double temperature_;
};

class VmfRunner final : public Runner {
 public:
  VmfRunner(const Matrix& w, const vmf::VmfConfig& cfg, bool is_static)
      : state_(vmf::init_vmf(w, cfg)), static_(is_static) {}
  void adapt(std::int64_t t, const Matrix& features) override {
    if (static_) {
      vmf::static_variant_adapt(state_, t, features);
    } else {
      vmf::adapt(state_, t, features);
    }
  }
  Matrix predict(const Matrix& features) const override {
    if (!state_.adapted()) return source_posterior(state_.source_prototypes, features, state_.config.kappa_ems);
    return vmf::predict(state_, features).probabilities;
  }
  Matrix prototypes() const override {
    return state_.adapted() ? vmf::current_prototypes(state_) : state_.source_prototypes;
  }
  std::int64_t degenerate_messages() const override { return state_.degenerate_messages; }

 private:
  vmf::VmfModelState state_;
  bool static_;
};

class GaussRunner final : public Runner {
 public:
  GaussRunner(const Matrix& w, const gauss::GaussConfig& cfg) : state_(gauss::init_gauss(w, cfg)) {}
  void adapt(std::int64_t t, const Matrix& features) override { gauss::gauss_adapt(state_, t, features); }
  Matrix predict(const Matrix& features) const override {
    if (state_.window.empty()) {
      Matrix h = features;
      if (state_.config.normalize_embeddings) math::normalize_rows(h);
      Matrix p = h * state_.source_prototypes.transpose();
      for (Eigen::Index n = 0; n < p.rows(); ++n) {
        auto row = p.row(n);
        math::softmax_in_place(std::span<double>(row.data(), static_cast<std::size_t>(p.cols())));
      }
      return p;
    }
    return gauss::gauss_predict(state_, features);
  }
  Matrix prototypes() const override {
    return state_.window.empty() ? state_.source_prototypes : gauss::current_prototypes(state_);
  }

 private:
  gauss::GaussModelState state_;
};

std::unique_ptr<Runner> make_runner(const Matrix& w, const ExperimentConfig& cfg, int dim, int k) {
  switch (cfg.method) {
    case Method::kSource:
      return std::make_unique<SourceRunner>(w, cfg.vmf.kappa_ems);
    case Method::kVmf:
    case Method::kVmfStatic: {
      vmf::VmfConfig v = cfg.vmf;
      v.dim = dim;
      v.num_classes = k;
      return std::make_unique<VmfRunner>(w, v, cfg.method == Method::kVmfStatic);
    }
    case Method::kGauss: {
      gauss::GaussConfig g = cfg.gauss;
      g.dim = dim;
      g.num_classes = k;
      return std::make_unique<GaussRunner>(w, g);
    }
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown method");
}

double accuracy_of(const Matrix& probs, const Labels& labels) {
  std::int64_t hits = 0;
  for (Eigen::Index n = 0; n < probs.rows(); ++n) {
    Eigen::Index best = 0;
    probs.row(n).maxCoeff(&best);
    if (static_cast<std::uint32_t>(best) == labels[static_cast<std::size_t>(n)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

template <typename Get>
std::vector<double> period_means(const std::vector<StepMetrics>& steps, int periods, Get get) {
  std::vector<double> out;
  const auto s = static_cast<std::int64_t>(steps.size());
  const std::int64_t p = std::min<std::int64_t>(std::max(periods, 1), s);
  for (std::int64_t i = 0; i < p; ++i) {
    double sum = 0.0;
    std::int64_t n = 0;
    for (std::int64_t j = i * s / p; j < (i + 1) * s / p; ++j) {
      if (auto v = get(steps[static_cast<std::size_t>(j)])) {
        sum += *v;
        ++n;
      }
    }
    if (n > 0) out.push_back(sum / static_cast<double>(n));
  }
  return out;
}

Summary summarize(const std::vector<StepMetrics>& steps, const ExperimentConfig& cfg, std::int64_t hits,
                  std::int64_t labeled) {
  Summary s;
  s.method = cfg.method;
  s.steps = static_cast<std::int64_t>(steps.size());
  double acc = 0.0, ent = 0.0, disp = 0.0, track = 0.0;
  std::int64_t n_acc = 0, n_track = 0;
  for (const StepMetrics& m : steps) {
    s.samples += m.n;
    if (m.accuracy) {
      acc += *m.accuracy;
      ++n_acc;
    }
    if (m.tracking_err_deg) {
      track += *m.tracking_err_deg;
      ++n_track;
    }
    ent += m.mean_entropy;
    disp += m.dispersion_deg;
    s.total_wall_time_ms += m.wall_time_ms;
  }
  const auto count = static_cast<double>(std::max<std::size_t>(steps.size(), 1));
  if (n_acc > 0) s.mean_accuracy = acc / static_cast<double>(n_acc);
  if (labeled > 0) s.overall_accuracy = static_cast<double>(hits) / static_cast<double>(labeled);
  if (n_track > 0) s.mean_tracking_err_deg = track / static_cast<double>(n_track);
  s.mean_entropy = ent / count;
  s.mean_dispersion_deg = disp / count;
  s.period_accuracy = period_means(steps, cfg.num_periods, [](const StepMetrics& m) { return m.accuracy; });
  s.period_dispersion_deg = period_means(steps, cfg.num_periods,
                                         [](const StepMetrics& m) { return std::optional(m.dispersion_deg); });
  return s;
}

}  // namespace

Method parse_method(const std::string& text) {
  if (text == "vmf") return Method::kVmf;
  if (text == "gauss") return Method::kGauss;
  if (text == "vmf-static" || text == "vmf_static") return Method::kVmfStatic;
  if (text == "source") return Method::kSource;
  throw Error(ErrorCode::kInvalidConfig, "unknown method '" + text + "'");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kVmf: return "vmf";
    case Method::kGauss: return "gauss";
    case Method::kVmfStatic: return "vmf-static";
    case Method::kSource: return "source";
  }
  return "?";
}

EvalMode parse_mode(const std::string& text) {
  if (text == "transductive") return EvalMode::kTransductive;
  if (text == "prequential") return EvalMode::kPrequential;
  throw Error(ErrorCode::kInvalidConfig, "unknown mode '" + text + "'");
}

std::string to_string(EvalMode m) { return m == EvalMode::kTransductive ? "transductive" : "prequential"; }

std::vector<EmbeddingBatch> rebatch(const std::vector<EmbeddingBatch>& stream, int batch_size,
                                    std::vector<std::int64_t>* origin) {
  if (batch_size < 0) throw Error(ErrorCode::kInvalidConfig, "batch size must be >= 1");
  if (origin) origin->clear();
  if (batch_size == 0) {
    if (origin) {
      for (const EmbeddingBatch& b : stream) origin->push_back(b.t);
    }
    return stream;
  }
  std::vector<EmbeddingBatch> out;
  if (stream.empty()) return out;
  const Eigen::Index d = stream.front().dim();
  bool labeled = true;
  for (const EmbeddingBatch& b : stream) {
    if (b.dim() != d) throw Error(ErrorCode::kDimensionMismatch, "t=" + std::to_string(b.t) + " changes D");
    labeled = labeled && b.labels.has_value();
  }
  EmbeddingBatch cur;
  std::int64_t cur_origin = 0;
  auto flush = [&]() {
    if (cur.features.rows() == 0) return;
    cur.t = static_cast<std::int64_t>(out.size()) + 1;
    out.push_back(std::move(cur));
    if (origin) origin->push_back(cur_origin);
    cur = EmbeddingBatch{};
  };
  for (const EmbeddingBatch& b : stream) {
    for (Eigen::Index i = 0; i < b.size();) {
      if (cur.features.rows() == 0) {
        cur.features.resize(0, d);
        if (labeled) cur.labels = Labels{};
      }
      const Eigen::Index take = std::min<Eigen::Index>(batch_size - cur.features.rows(), b.size() - i);
      const Eigen::Index old = cur.features.rows();
      cur.features.conservativeResize(old + take, d);
      cur.features.bottomRows(take) = b.features.middleRows(i, take);
      if (labeled) {
        cur.labels->insert(cur.labels->end(), b.labels->begin() + i, b.labels->begin() + i + take);
      }
      cur_origin = b.t;
      i += take;
      if (cur.features.rows() == batch_size) flush();
    }
  }
  flush();
  return out;
}

ExperimentResult run_experiment(const std::vector<EmbeddingBatch>& stream, const Matrix& source_weights,
                                const ExperimentConfig& config, const std::optional<std::vector<Matrix>>& ground_truth) {
  if (stream.empty()) throw Error(ErrorCode::kEmptyBatch, "stream has no steps");
  const auto dim = static_cast<int>(source_weights.cols());
  const auto k = static_cast<int>(source_weights.rows());
  for (const EmbeddingBatch& b : stream) {
    if (b.dim() != dim) {
      throw Error(ErrorCode::kDimensionMismatch, "step t=" + std::to_string(b.t) + " has D=" +
                                                     std::to_string(b.dim()) + " but the source weights have D=" +
                                                     std::to_string(dim));
    }
  }
  if (ground_truth) {
    if (ground_truth->size() < stream.size()) throw Error(ErrorCode::kDimensionMismatch, "ground truth shorter than stream");
    for (const Matrix& g : *ground_truth) {
      if (g.rows() != k || g.cols() != dim) throw Error(ErrorCode::kDimensionMismatch, "ground truth is not K x D");
    }
  }

  std::vector<std::int64_t> origin;
  const std::vector<EmbeddingBatch> batches = rebatch(stream, config.batch_size, &origin);
  std::unique_ptr<Runner> runner = make_runner(source_weights, config, dim, k);
  const std::int64_t first_t = stream.front().t;

  ExperimentResult result;
  std::int64_t hits = 0, labeled = 0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const EmbeddingBatch& b = batches[i];
    StepMetrics m;
    m.t = b.t;
    m.n = b.size();
    const auto start = std::chrono::steady_clock::now();
    Matrix probs;
    if (config.mode == EvalMode::kPrequential) {
      probs = runner->predict(b.features);
      runner->adapt(b.t, b.features);
    } else {
      runner->adapt(b.t, b.features);
      probs = runner->predict(b.features);
    }
    const auto stop = std::chrono::steady_clock::now();
    if (config.record_timing) m.wall_time_ms = std::chrono::duration<double, std::milli>(stop - start).count();

    const Matrix w = runner->prototypes();
    m.mean_entropy = mean_entropy(probs);
    m.dispersion_deg = k >= 2 ? dispersion(w) : 0.0;
    if (b.labels) {
      m.accuracy = accuracy_of(probs, *b.labels);
      const auto acc_hits = static_cast<std::int64_t>(std::llround(*m.accuracy * static_cast<double>(m.n)));
      hits += acc_hits;
      labeled += m.n;
    }
    std::optional<ClassCenters> centers;
    if (b.labels) centers = ground_truth_centers(b.features, *b.labels, k);
    const Vector* weights = (config.count_weighted_tracking && centers) ? &centers->counts : nullptr;
    if (ground_truth) {
      const Matrix& g = (*ground_truth)[static_cast<std::size_t>(origin[i] - first_t)];
      m.tracking_err_deg = angular_tracking_error(w, g, nullptr, weights);
    } else if (centers) {
      m.tracking_err_deg = angular_tracking_error(w, centers->centers, &centers->present, weights);
    }
    result.steps.push_back(m);
  }
  result.summary = summarize(result.steps, config, hits, labeled);
  result.summary.degenerate_messages = runner->degenerate_messages();
  if (config.method != Method::kSource) result.final_prototypes = runner->prototypes();
  return result;
}

std::vector<SweepRow> sensitivity_sweep(const std::vector<SweepInput>& inputs, const ExperimentConfig& base,
                                        const SweepGrid& grid, int jobs) {
  auto or_base = [](const auto& axis, auto fallback) {
    using T = std::decay_t<decltype(fallback)>;
    return axis.empty() ? std::vector<T>{fallback} : std::vector<T>(axis.begin(), axis.end());
  };
  const auto methods = or_base(grid.methods, base.method);
  const auto kts = or_base(grid.kappa_trans, base.vmf.kappa_trans);
  const auto kes = or_base(grid.kappa_ems, base.vmf.kappa_ems);
  const auto wins = or_base(grid.windows, base.vmf.window);
  const auto bss = or_base(grid.batch_sizes, base.batch_size);

  struct Cell {
    ExperimentConfig cfg;
    const SweepInput* input;
    SweepRow row;
  };
  std::vector<Cell> cells;
  for (Method m : methods) {
    for (double kt : kts) {
      for (double ke : kes) {
        for (int w : wins) {
          for (int bs : bss) {
            for (const SweepInput& in : inputs) {
              Cell c{base, &in, {}};
              c.cfg.method = m;
              c.cfg.vmf.kappa_trans = kt;
              c.cfg.vmf.kappa_ems = ke;
              c.cfg.vmf.window = w;
              c.cfg.gauss.window = w;
              c.cfg.batch_size = bs;
              c.row = SweepRow{m, kt, ke, w, bs, in.seed, {}};
              cells.push_back(std::move(c));
            }
          }
        }
      }
    }
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(cells.size());
  auto work = [&]() {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        Cell& c = cells[i];
        c.row.summary = run_experiment(c.input->stream, c.input->source_weights, c.cfg, c.input->ground_truth).summary;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(work);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<SweepRow> rows;
  rows.reserve(cells.size());
  for (Cell& c : cells) rows.push_back(std::move(c.row));
  return rows;
}

}  // namespace stad::eval
