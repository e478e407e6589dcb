#include "cli.hpp"

#include "stad/error.hpp"
#include "stad/evalbench.hpp"
#include "stad/stream.hpp"
#include "stad/synth.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace stad::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Expands `--config FILE` (a flat JSON object of option-name: value pairs, or
// a summary written by this tool, whose "config" object is used) into plain
// command-line options. Options already on the command line win, so the
// precedence is flags > config file > defaults. CLI11 only reads config
// files for the top-level app, hence the pre-pass.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::optional<std::string> path;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config needs a file");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (!path) return out;

  std::ifstream in(*path);
  if (!in) throw CLI::FileError::Missing(*path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
  }
  if (j.contains("config") && j["config"].is_object()) j = j["config"];
  if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");

  auto given = [&](const std::string& name) {
    const std::string flag = "--" + name;
    return std::any_of(out.begin(), out.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  std::vector<std::string> extra;
  for (const auto& [key, value] : j.items()) {
    if (value.is_null() || value.is_object() || given(key)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) extra.push_back("--" + key);
    } else if (value.is_array()) {
      for (const json& v : value) {
        extra.push_back("--" + key);
        extra.push_back(scalar(v));
      }
    } else {
      extra.push_back("--" + key);
      extra.push_back(scalar(value));
    }
  }
  out.insert(out.end(), extra.begin(), extra.end());
  return out;
}

template <typename T>
json to_echo(const T& v) {
  return json(v);
}
template <typename T>
json to_echo(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

// Binds options and remembers how to echo their effective values, so every
// summary carries a replayable config keyed by option name.
class Options {
 public:
  explicit Options(CLI::App& app) : app_(app) {}

  template <typename T>
  CLI::Option* add(const std::string& name, T& var, const std::string& help) {
    echo_.emplace_back(name, [&var] { return to_echo(var); });
    return app_.add_option("--" + name, var, help);
  }
  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    echo_.emplace_back(name, [&var] { return json(var); });
    return app_.add_flag("--" + name, var, help);
  }
  json echo() const {
    json j = json::object();
    for (const auto& [name, get] : echo_) j[name] = get();
    return j;
  }

 private:
  CLI::App& app_;
  std::vector<std::pair<std::string, std::function<json()>>> echo_;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int thread_cap(int requested) {
  int jobs = std::max(1, requested);
  if (const char* env = std::getenv("STAD_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) jobs = std::min(jobs, cap);
    } catch (const std::exception&) {
      throw UsageError("STAD_THREADS must be a positive integer");
    }
  }
  return jobs;
}

// ---- scenario flags (synth and synthetic sweeps) ----

struct ScenarioArgs {
  std::string geometry = "sphere";
  int d = 16;
  int k = 5;
  int t = 50;
  int n = 200;
  std::optional<double> kappa_true;
  std::optional<double> sigma_true;
  std::optional<double> drift_deg;
  std::optional<double> drift_scale;
  double max_drift_deg = 10.0;
  std::string labels = "uniform";

  void bind(Options& o) {
    o.add("geometry", geometry, "sphere or euclidean")->check(CLI::IsMember({"sphere", "euclidean"}));
    o.add("d", d, "embedding dimension")->check(CLI::PositiveNumber);
    o.add("k", k, "number of classes")->check(CLI::PositiveNumber);
    o.add("t", t, "number of time steps")->check(CLI::PositiveNumber);
    o.add("n", n, "samples per step")->check(CLI::PositiveNumber);
    o.add("kappa-true", kappa_true, "vMF concentration of the clusters (sphere)");
    o.add("sigma-true", sigma_true, "Gaussian noise scale of the clusters (euclidean)");
    o.add("drift-deg", drift_deg, "rotation per step in degrees (sphere)");
    o.add("drift-scale", drift_scale, "length of the per-step drift vector (euclidean)");
    o.add("max-drift-deg", max_drift_deg, "upper bound accepted for --drift-deg");
    o.add("labels", labels, "uniform | ordered | dirichlet:<alpha>");
  }

  synth::DriftScenario scenario(std::uint64_t seed) const {
    synth::DriftScenario s;
    s.geometry = geometry == "sphere" ? synth::Geometry::kSphere : synth::Geometry::kEuclidean;
    if (s.geometry == synth::Geometry::kSphere && (sigma_true || drift_scale)) {
      throw UsageError("--sigma-true and --drift-scale apply to --geometry euclidean only");
    }
    if (s.geometry == synth::Geometry::kEuclidean && (kappa_true || drift_deg)) {
      throw UsageError("--kappa-true and --drift-deg apply to --geometry sphere only");
    }
    s.dim = d;
    s.num_classes = k;
    s.steps = t;
    s.n_per_step = n;
    if (kappa_true) s.kappa_true = *kappa_true;
    if (sigma_true) s.sigma_true = *sigma_true;
    if (drift_deg) s.drift_deg_per_step = *drift_deg;
    if (drift_scale) s.drift_vector_scale = *drift_scale;
    s.max_drift_deg = max_drift_deg;
    try {
      s.labels = synth::LabelDistribution::parse(labels);
      s.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    s.seed = seed;
    return s;
  }
};

json scenario_json(const synth::DriftScenario& s) {
  json j{{"geometry", s.geometry == synth::Geometry::kSphere ? "sphere" : "euclidean"},
         {"D", s.dim},
         {"K", s.num_classes},
         {"T", s.steps},
         {"N_per_step", s.n_per_step},
         {"labels", s.labels.to_string()},
         {"seed", s.seed}};
  if (s.geometry == synth::Geometry::kSphere) {
    j["kappa_true"] = s.kappa_true;
    j["drift_deg_per_step"] = s.drift_deg_per_step;
  } else {
    j["sigma_true"] = s.sigma_true;
    j["drift_vector_scale"] = s.drift_vector_scale;
  }
  return j;
}

// ---- model flags (adapt and sweep) ----

struct ModelArgs {
  std::string model = "vmf";
  double kappa_trans = 100.0;
  double kappa_ems = 100.0;
  double kappa0 = 100.0;
  int window = 3;
  int sweeps = 2;
  bool learn_kappa = false;
  bool per_class_kappa = false;
  double pi_floor = 1e-4;
  double sigma_trans = 0.01;
  double sigma_ems = 0.5;
  bool learn_a = false;
  bool fixed_sigmas = false;
  int batch_size = 0;
  std::string mode = "transductive";
  bool no_timing = false;

  void bind(Options& o, bool with_model) {
    if (with_model) {
      o.add("model", model, "vmf | gauss | vmf-static | source")
          ->check(CLI::IsMember({"vmf", "gauss", "vmf-static", "source"}));
    }
    o.add("kappa-trans", kappa_trans, "transition concentration")->check(CLI::NonNegativeNumber);
    o.add("kappa-ems", kappa_ems, "emission concentration")->check(CLI::PositiveNumber);
    o.add("kappa0", kappa0, "concentration of the prior at the source weights")->check(CLI::PositiveNumber);
    o.add("window", window, "sliding window size")->check(CLI::PositiveNumber);
    o.add("sweeps", sweeps, "coordinate-ascent sweeps per step")->check(CLI::PositiveNumber);
    o.flag("learn-kappa", learn_kappa, "re-estimate kappa_trans and kappa_ems");
    o.flag("per-class-kappa", per_class_kappa, "one concentration per class");
    o.add("pi-floor", pi_floor, "lower bound on mixing weights")->check(CLI::Range(0.0, 1.0));
    o.add("sigma-trans", sigma_trans, "Gaussian model: transition covariance scale")->check(CLI::PositiveNumber);
    o.add("sigma-ems", sigma_ems, "Gaussian model: emission covariance scale")->check(CLI::PositiveNumber);
    o.flag("learn-a", learn_a, "Gaussian model: learn the transition matrices A_k");
    o.flag("fixed-sigmas", fixed_sigmas, "Gaussian model: keep the covariances at their initial scales");
    o.add("batch-size", batch_size, "re-batch the stream (0 keeps its steps)")->check(CLI::NonNegativeNumber);
    o.add("mode", mode, "transductive | prequential")->check(CLI::IsMember({"transductive", "prequential"}));
    o.flag("no-timing", no_timing, "write zero wall times (byte-stable outputs)");
  }

  eval::ExperimentConfig config() const {
    eval::ExperimentConfig c;
    c.method = eval::parse_method(model);
    c.mode = eval::parse_mode(mode);
    c.batch_size = batch_size;
    c.record_timing = !no_timing;
    c.vmf.kappa_trans = kappa_trans;
    c.vmf.kappa_ems = kappa_ems;
    c.vmf.kappa0 = kappa0;
    c.vmf.window = window;
    c.vmf.e_sweeps = sweeps;
    c.vmf.learn_kappa_trans = learn_kappa;
    c.vmf.learn_kappa_ems = learn_kappa;
    c.vmf.per_class_kappa = per_class_kappa;
    c.vmf.pi_floor = pi_floor;
    c.gauss.sigma_trans_scale = sigma_trans;
    c.gauss.sigma_ems_scale = sigma_ems;
    c.gauss.window = window;
    c.gauss.e_sweeps = sweeps;
    c.gauss.learn_A = learn_a;
    c.gauss.learn_sigmas = !fixed_sigmas;
    c.gauss.pi_floor = pi_floor;
    return c;
  }
};

struct LoadedStream {
  std::vector<EmbeddingBatch> batches;
  std::optional<Matrix> source_weights;
  std::optional<std::vector<Matrix>> ground_truth;
};

LoadedStream load_stream(const std::string& path, const std::optional<std::string>& weights_path) {
  LoadedStream s;
  if (fs::is_regular_file(path) && fs::path(path).extension() == ".csv") {
    s.batches = stream::read_csv_stream(path);
  } else {
    s.batches = stream::read_stream(path);
    const auto manifest = stream::read_manifest(path);
    s.ground_truth = stream::read_ground_truth(path, manifest);
    s.source_weights = stream::read_source_weights(path, manifest);
  }
  if (weights_path) s.source_weights = stream::read_matrix(*weights_path);
  if (!s.source_weights) {
    throw Error(ErrorCode::kMissingFile, "stream " + path + " carries no source weights; pass --source-weights");
  }
  const auto d = s.source_weights->cols();
  for (const EmbeddingBatch& b : s.batches) {
    if (b.dim() != d) {
      throw Error(ErrorCode::kDimensionMismatch, "step t=" + std::to_string(b.t) + " has D=" + std::to_string(b.dim()) +
                                                     " but the source weights have D=" + std::to_string(d));
    }
  }
  return s;
}

stream::ShiftGranularity parse_granularity(const std::string& g) {
  return g == "stream" ? stream::ShiftGranularity::kWholeStream : stream::ShiftGranularity::kPerStep;
}

// ---- subcommands ----

void cmd_synth(const ScenarioArgs& sc, std::uint64_t seed, const std::string& out_dir, const json& echo,
               std::ostream& out) {
  const synth::DriftScenario scenario = sc.scenario(seed);
  const synth::SyntheticStream s = synth::synth_drift(scenario);
  stream::StreamExtras extras;
  extras.ground_truth = s.trajectory;
  extras.source_weights = s.source_prototypes;
  extras.metadata["generator"] = "stad synth";
  extras.metadata["scenario"] = scenario_json(scenario).dump();
  stream::write_stream(out_dir, s.batches, scenario.num_classes, extras);
  write_json(fs::path(out_dir) / "synth_config.json",
             {{"command", "synth"}, {"config", echo}, {"scenario", scenario_json(scenario)}});
  out << "wrote " << s.batches.size() << " steps to " << out_dir << '\n';
}

void cmd_adapt(const ModelArgs& m, const std::string& stream_path, const std::optional<std::string>& weights,
               bool label_shift, const std::string& granularity, std::uint64_t seed, const std::string& out_dir,
               const json& echo, std::ostream& out) {
  const eval::ExperimentConfig cfg = m.config();
  LoadedStream s = load_stream(stream_path, weights);
  if (label_shift) {
    s.batches = stream::make_label_shift(s.batches, seed, static_cast<int>(s.source_weights->rows()),
                                         parse_granularity(granularity));
  }
  const eval::ExperimentResult r = eval::run_experiment(s.batches, *s.source_weights, cfg, s.ground_truth);

  fs::create_directories(out_dir);
  {
    std::ofstream csv(fs::path(out_dir) / "metrics.csv");
    if (!csv) throw Error(ErrorCode::kIo, "cannot write metrics.csv in " + out_dir);
    eval::write_metrics_csv(csv, r.steps);
  }
  json summary{{"command", "adapt"},
               {"config", echo},
               {"resolved", eval::config_to_json(cfg)},
               {"summary", eval::summary_to_json(r.summary)}};
  if (cfg.method != eval::Method::kSource && r.final_prototypes) {
    json protos = json::array();
    for (Eigen::Index k = 0; k < r.final_prototypes->rows(); ++k) {
      protos.push_back(std::vector<double>(r.final_prototypes->row(k).begin(), r.final_prototypes->row(k).end()));
    }
    summary["adaptation"] = {{"final_prototypes", protos}, {"degenerate_messages", r.summary.degenerate_messages}};
  }
  write_json(fs::path(out_dir) / "summary.json", summary);
  out << eval::to_string(cfg.method) << ": " << r.steps.size() << " steps";
  if (r.summary.mean_accuracy) out << ", mean accuracy " << *r.summary.mean_accuracy;
  out << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporal test-time adaptation with state-space prototype models", "stad"};
  app.require_subcommand(1);

  // synth
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic drifting embedding stream");
  Options synth_opts(*synth_cmd);
  ScenarioArgs synth_sc;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth_sc.bind(synth_opts);
  synth_opts.add("seed", synth_seed, "random seed");
  synth_opts.add("out", synth_out, "output stream directory")->required();
  synth_cmd->add_option("--config", "JSON file with option values");

  // adapt
  CLI::App* adapt_cmd = app.add_subcommand("adapt", "adapt a model along a stream and score it");
  Options adapt_opts(*adapt_cmd);
  ModelArgs adapt_m;
  std::string adapt_stream;
  std::optional<std::string> adapt_weights;
  bool adapt_shift = false;
  std::string adapt_granularity = "step";
  std::uint64_t adapt_seed = 0;
  std::string adapt_out;
  adapt_opts.add("stream", adapt_stream, "stream directory or CSV file")->required();
  adapt_opts.add("source-weights", adapt_weights, "K x D source classifier (feature file or CSV)");
  adapt_m.bind(adapt_opts, true);
  adapt_opts.flag("label-shift", adapt_shift, "reorder samples class-contiguously");
  adapt_opts.add("shift-granularity", adapt_granularity, "step | stream")->check(CLI::IsMember({"step", "stream"}));
  adapt_opts.add("seed", adapt_seed, "seed for the label-shift class order");
  adapt_opts.add("out", adapt_out, "output directory for metrics.csv and summary.json")->required();
  adapt_cmd->add_option("--config", "JSON file with option values (a previous summary.json works)");

  // sweep
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "batch-size or hyperparameter grid sweep");
  Options sweep_opts(*sweep_cmd);
  ModelArgs sweep_m;
  ScenarioArgs sweep_sc;
  std::vector<std::string> sweep_streams;
  std::optional<std::string> sweep_weights;
  std::vector<std::uint64_t> sweep_seeds;
  std::vector<std::string> sweep_methods;
  std::vector<int> sweep_batches;
  std::vector<double> sweep_kt;
  std::vector<double> sweep_ke;
  std::vector<int> sweep_windows;
  bool sweep_shift = false;
  int sweep_jobs = 1;
  std::string sweep_out;
  sweep_opts.add("stream", sweep_streams, "stream directories or CSV files (repeatable)");
  sweep_opts.add("source-weights", sweep_weights, "K x D source classifier for every --stream");
  sweep_opts.add("seeds", sweep_seeds, "synthesize one default-scenario stream per seed")->delimiter(',');
  sweep_sc.bind(sweep_opts);
  sweep_m.bind(sweep_opts, false);
  sweep_opts.add("methods", sweep_methods, "methods to run")->delimiter(',');
  sweep_opts.add("batch-sizes", sweep_batches, "batch sizes, e.g. 1,16,256")->delimiter(',');
  sweep_opts.add("kappa-trans-grid", sweep_kt, "kappa_trans values")->delimiter(',');
  sweep_opts.add("kappa-ems-grid", sweep_ke, "kappa_ems values")->delimiter(',');
  sweep_opts.add("windows", sweep_windows, "window sizes")->delimiter(',');
  sweep_opts.flag("label-shift", sweep_shift, "reorder every stream class-contiguously per step");
  sweep_opts.add("jobs", sweep_jobs, "parallel sweep cells (capped by STAD_THREADS)")->check(CLI::PositiveNumber);
  sweep_opts.add("out", sweep_out, "output directory for sweep.csv and summary.json")->required();
  sweep_cmd->add_option("--config", "JSON file with option values");

  try {
    std::vector<std::string> argv_tail =
        expand_config(std::vector<std::string>(args.size() > 1 ? args.begin() + 1 : args.end(), args.end()));
    std::reverse(argv_tail.begin(), argv_tail.end());
    app.parse(argv_tail);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) {
      cmd_synth(synth_sc, synth_seed, synth_out, synth_opts.echo(), out);
    } else if (adapt_cmd->parsed()) {
      cmd_adapt(adapt_m, adapt_stream, adapt_weights, adapt_shift, adapt_granularity, adapt_seed, adapt_out,
                adapt_opts.echo(), out);
    } else if (sweep_cmd->parsed()) {
      const bool grid_lists_empty_given =
          (sweep_cmd->count("--batch-sizes") && sweep_batches.empty()) ||
          (sweep_cmd->count("--methods") && sweep_methods.empty()) ||
          (sweep_cmd->count("--kappa-trans-grid") && sweep_kt.empty()) ||
          (sweep_cmd->count("--kappa-ems-grid") && sweep_ke.empty()) ||
          (sweep_cmd->count("--windows") && sweep_windows.empty());
      if (grid_lists_empty_given) throw UsageError("sweep lists must not be empty");
      if (sweep_batches.empty() && sweep_kt.empty() && sweep_ke.empty() && sweep_windows.empty()) {
        throw UsageError("sweep needs at least one of --batch-sizes, --kappa-trans-grid, --kappa-ems-grid, --windows");
      }
      if (sweep_streams.empty() == sweep_seeds.empty()) {
        throw UsageError("sweep needs exactly one of --stream or --seeds");
      }
      eval::SweepGrid grid;
      grid.methods.clear();
      for (const std::string& m : sweep_methods) {
        try {
          grid.methods.push_back(eval::parse_method(m));
        } catch (const Error& e) {
          throw UsageError(e.what());
        }
      }
      grid.batch_sizes = sweep_batches;
      grid.kappa_trans = sweep_kt;
      grid.kappa_ems = sweep_ke;
      grid.windows = sweep_windows;
      for (int b : sweep_batches) {
        if (b < 1) throw UsageError("--batch-sizes entries must be >= 1");
      }
      for (int w : sweep_windows) {
        if (w < 1) throw UsageError("--windows entries must be >= 1");
      }

      std::vector<eval::SweepInput> inputs;
      if (!sweep_seeds.empty()) {
        for (std::uint64_t seed : sweep_seeds) {
          const synth::SyntheticStream s = synth::synth_drift(sweep_sc.scenario(seed));
          eval::SweepInput in{seed, s.batches, s.source_prototypes, s.trajectory};
          if (sweep_shift) in.stream = stream::make_label_shift(in.stream, seed, sweep_sc.k);
          inputs.push_back(std::move(in));
        }
      } else {
        for (std::size_t i = 0; i < sweep_streams.size(); ++i) {
          LoadedStream s = load_stream(sweep_streams[i], sweep_weights);
          eval::SweepInput in{i, std::move(s.batches), *s.source_weights, std::move(s.ground_truth)};
          if (sweep_shift) {
            in.stream = stream::make_label_shift(in.stream, i, static_cast<int>(in.source_weights.rows()));
          }
          inputs.push_back(std::move(in));
        }
      }
      eval::ExperimentConfig base = sweep_m.config();
      if (grid.methods.empty()) grid.methods = {eval::Method::kVmf};
      const auto rows = eval::sensitivity_sweep(inputs, base, grid, thread_cap(sweep_jobs));
      fs::create_directories(sweep_out);
      {
        std::ofstream csv(fs::path(sweep_out) / "sweep.csv");
        if (!csv) throw Error(ErrorCode::kIo, "cannot write sweep.csv in " + sweep_out);
        eval::write_sweep_csv(csv, rows);
      }
      write_json(fs::path(sweep_out) / "summary.json",
                 {{"command", "sweep"}, {"config", sweep_opts.echo()}, {"resolved", eval::config_to_json(base)},
                  {"rows", rows.size()}});
      out << "wrote " << rows.size() << " sweep rows to " << sweep_out << '\n';
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::kInvalidConfig ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace stad::cli
