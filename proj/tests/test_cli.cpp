#include "doctest.h"
#include "helpers.hpp"

#include "cli.hpp"
#include "stad/stream.hpp"

#include "json.hpp"

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "stad");
  std::ostringstream out, err;
  const int code = stad::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small synthetic stream shared by several cases.
fs::path small_stream(const std::string& name, const std::string& seed = "3") {
  const fs::path dir = testutil::scratch(name);
  const Outcome o = run({"synth", "--t", "8", "--n", "40", "--seed", seed, "--out", dir.string()});
  REQUIRE(o.code == 0);
  return dir;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"adapt", "--help"}).code == 0);
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"synth", "--out", testutil::scratch("u1").string(), "--bogus"}).code == 2);
  CHECK(run({"synth"}).code == 2);  // --out is required
  CHECK(run({"synth", "--out", testutil::scratch("u2").string(), "--sigma-true", "0.1"}).code == 2);
  CHECK(run({"synth", "--out", testutil::scratch("u3").string(), "--geometry", "euclidean", "--kappa-true", "5"}).code == 2);
  CHECK(run({"synth", "--out", testutil::scratch("u4").string(), "--labels", "zipf"}).code == 2);
  CHECK(run({"synth", "--out", testutil::scratch("u5").string(), "--drift-deg", "30"}).code == 2);
}

TEST_CASE("synth: defaults produce a readable stream") {
  const fs::path dir = testutil::scratch("synth_default");
  const Outcome o = run({"synth", "--out", dir.string()});
  REQUIRE(o.code == 0);
  const auto batches = stad::stream::read_stream(dir);
  CHECK(batches.size() == 50);
  CHECK(batches[0].size() == 200);
  CHECK(batches[0].dim() == 16);
  const auto manifest = stad::stream::read_manifest(dir);
  CHECK(stad::stream::read_ground_truth(dir, manifest)->size() == 50);
  CHECK(stad::stream::read_source_weights(dir, manifest)->rows() == 5);
  CHECK(json::parse(slurp(dir / "synth_config.json"))["scenario"]["kappa_true"] == 50.0);
}

TEST_CASE("synth: a fixed seed gives bit-identical directories") {
  const fs::path a = small_stream("synth_a", "9");
  const fs::path b = small_stream("synth_b", "9");
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const std::string name = entry.path().filename().string();
    if (name == "synth_config.json") continue;  // echoes the output path
    CHECK(slurp(entry.path()) == slurp(b / name));
    ++files;
  }
  CHECK(files == 1 + 8 * 2 + 2);
}

TEST_CASE("synth: infeasible separation exits 1") {
  const Outcome o = run({"synth", "--k", "100", "--d", "3", "--t", "1", "--out", testutil::scratch("infeasible").string()});
  CHECK(o.code == 1);
  CHECK(o.err.find("InfeasibleSeparation") != std::string::npos);
}

TEST_CASE("adapt: outputs and source baseline") {
  const fs::path s = small_stream("adapt_stream");
  const fs::path out = testutil::scratch("adapt_vmf");
  REQUIRE(run({"adapt", "--stream", s.string(), "--out", out.string()}).code == 0);
  const std::string csv = slurp(out / "metrics.csv");
  CHECK(csv.rfind("t,n,accuracy,mean_entropy,dispersion_deg,tracking_err_deg,wall_time_ms\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
  const json vmf = json::parse(slurp(out / "summary.json"));
  CHECK(vmf["command"] == "adapt");
  CHECK(vmf["resolved"]["vmf"]["window"] == 3);
  CHECK(vmf["resolved"]["vmf"]["kappa_trans"] == 100.0);
  CHECK(vmf["resolved"]["vmf"]["kappa_ems"] == 100.0);
  CHECK(vmf.contains("adaptation"));
  CHECK(vmf["adaptation"]["final_prototypes"].size() == 5);

  const fs::path src = testutil::scratch("adapt_source");
  REQUIRE(run({"adapt", "--stream", s.string(), "--model", "source", "--out", src.string()}).code == 0);
  const json source = json::parse(slurp(src / "summary.json"));
  CHECK_FALSE(source.contains("adaptation"));
  CHECK(source["summary"]["method"] == "source");
}

TEST_CASE("adapt: every model and option combination runs") {
  const fs::path s = small_stream("adapt_models");
  for (const std::string m : {"vmf", "gauss", "vmf-static", "source"}) {
    CHECK(run({"adapt", "--stream", s.string(), "--model", m, "--mode", "prequential", "--batch-size", "16",
               "--label-shift", "--out", testutil::scratch("adapt_" + m).string()})
              .code == 0);
  }
  CHECK(run({"adapt", "--stream", s.string(), "--learn-kappa", "--per-class-kappa", "--shift-granularity", "stream",
             "--label-shift", "--out", testutil::scratch("adapt_learn").string()})
            .code == 0);
  CHECK(run({"adapt", "--stream", s.string(), "--model", "gauss", "--learn-a", "--fixed-sigmas", "--out",
             testutil::scratch("adapt_gauss_opts").string()})
            .code == 0);
}

TEST_CASE("adapt: runtime errors exit 1 with diagnostics") {
  const fs::path s = small_stream("adapt_err");
  const fs::path w = testutil::scratch("weights") / "w.csv";
  {
    std::ofstream f(w);
    f << "1,0,0\n0,1,0\n";
  }
  const Outcome dim = run({"adapt", "--stream", s.string(), "--source-weights", w.string(), "--out",
                           testutil::scratch("adapt_err_out").string()});
  CHECK(dim.code == 1);
  CHECK(dim.err.find("t=1") != std::string::npos);

  const fs::path csv = testutil::scratch("csv_stream") / "s.csv";
  {
    std::ofstream f(csv);
    f << "t,label,f0,f1,f2\n1,0,1,0,0\n1,1,0,1,0\n2,0,1,0.1,0\n";
  }
  CHECK(run({"adapt", "--stream", csv.string(), "--out", testutil::scratch("csv_out").string()}).code == 1);
  CHECK(run({"adapt", "--stream", csv.string(), "--source-weights", w.string(), "--model", "source", "--out",
             testutil::scratch("csv_out2").string()})
            .code == 0);
  CHECK(run({"adapt", "--stream", (s / "nope").string(), "--out", testutil::scratch("x").string()}).code == 1);
  CHECK(run({"adapt", "--stream", s.string(), "--model", "tent", "--out", testutil::scratch("x").string()}).code == 2);
  CHECK(run({"adapt", "--stream", s.string(), "--pi-floor", "0.5", "--out", testutil::scratch("x").string()}).code == 2);
}

TEST_CASE("adapt: replaying a summary reproduces metrics, CLI flags override the file") {
  const fs::path s = small_stream("replay_stream");
  const fs::path first = testutil::scratch("replay_1");
  REQUIRE(run({"adapt", "--stream", s.string(), "--kappa-trans", "300", "--window", "2", "--no-timing", "--out",
               first.string()})
              .code == 0);
  const fs::path second = testutil::scratch("replay_2");
  REQUIRE(run({"adapt", "--config", (first / "summary.json").string(), "--out", second.string()}).code == 0);
  CHECK(slurp(first / "metrics.csv") == slurp(second / "metrics.csv"));
  const json replay = json::parse(slurp(second / "summary.json"));
  CHECK(replay["resolved"]["vmf"]["kappa_trans"] == 300.0);
  CHECK(replay["resolved"]["vmf"]["window"] == 2);

  const fs::path third = testutil::scratch("replay_3");
  REQUIRE(run({"adapt", "--config", (first / "summary.json").string(), "--window", "4", "--out", third.string()}).code == 0);
  const json over = json::parse(slurp(third / "summary.json"));
  CHECK(over["resolved"]["vmf"]["window"] == 4);
  CHECK(over["resolved"]["vmf"]["kappa_trans"] == 300.0);
}

TEST_CASE("sweep: row counts and usage errors") {
  const fs::path out = testutil::scratch("sweep_bs");
  REQUIRE(run({"sweep", "--seeds", "0", "--t", "6", "--n", "32", "--batch-sizes", "1,16,256", "--methods", "vmf,source",
               "--out", out.string()})
              .code == 0);
  const std::string csv = slurp(out / "sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 6);

  const fs::path grid = testutil::scratch("sweep_grid");
  REQUIRE(run({"sweep", "--seeds", "1", "--t", "6", "--n", "32", "--kappa-trans-grid", "100,1000", "--kappa-ems-grid",
               "100,1000", "--no-timing", "--jobs", "3", "--out", grid.string()})
              .code == 0);
  const std::string g = slurp(grid / "sweep.csv");
  CHECK(std::count(g.begin(), g.end(), '\n') == 1 + 4);
  const fs::path grid2 = testutil::scratch("sweep_grid2");
  REQUIRE(run({"sweep", "--seeds", "1", "--t", "6", "--n", "32", "--kappa-trans-grid", "100,1000", "--kappa-ems-grid",
               "100,1000", "--no-timing", "--out", grid2.string()})
              .code == 0);
  CHECK(slurp(grid2 / "sweep.csv") == g);

  const fs::path s = small_stream("sweep_stream");
  CHECK(run({"sweep", "--stream", s.string(), "--windows", "1,2", "--out", testutil::scratch("sw").string()}).code == 0);

  const std::string o = testutil::scratch("sweep_bad").string();
  CHECK(run({"sweep", "--seeds", "0", "--batch-sizes", "", "--out", o}).code == 2);
  CHECK(run({"sweep", "--seeds", "0", "--out", o}).code == 2);
  CHECK(run({"sweep", "--batch-sizes", "4", "--out", o}).code == 2);
  CHECK(run({"sweep", "--seeds", "0", "--stream", s.string(), "--batch-sizes", "4", "--out", o}).code == 2);
  CHECK(run({"sweep", "--seeds", "0", "--batch-sizes", "0", "--out", o}).code == 2);
  CHECK(run({"sweep", "--seeds", "0", "--windows", "4", "--methods", "tent", "--out", o}).code == 2);
}

TEST_CASE("STAD_THREADS must be a positive integer") {
  ::setenv("STAD_THREADS", "zero", 1);
  CHECK(run({"sweep", "--seeds", "0", "--t", "3", "--n", "10", "--windows", "1", "--out",
             testutil::scratch("threads").string()})
            .code == 2);
  ::setenv("STAD_THREADS", "1", 1);
  CHECK(run({"sweep", "--seeds", "0", "--t", "3", "--n", "10", "--windows", "1", "--jobs", "8", "--out",
             testutil::scratch("threads").string()})
            .code == 0);
  ::unsetenv("STAD_THREADS");
}
