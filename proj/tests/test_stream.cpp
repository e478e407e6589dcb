#include "doctest.h"
#include "helpers.hpp"

#include "stad/stream.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>

using namespace stad;
using namespace stad::stream;
namespace fs = std::filesystem;

namespace {

// Values already representable in float32, so the stored payload is exact.
Matrix float_matrix(int r, int c, std::mt19937_64& rng) {
  return testutil::random_matrix(r, c, rng).cast<float>().cast<double>();
}

std::vector<EmbeddingBatch> random_stream(int steps, int d, int k, std::mt19937_64& rng, bool labeled = true) {
  std::vector<EmbeddingBatch> out;
  std::uniform_int_distribution<std::uint32_t> lab(0, static_cast<std::uint32_t>(k - 1));
  for (int t = 1; t <= steps; ++t) {
    EmbeddingBatch b;
    b.t = t;
    b.features = float_matrix(3 + t, d, rng);
    if (labeled) {
      Labels l(static_cast<std::size_t>(b.features.rows()));
      for (auto& v : l) v = lab(rng);
      b.labels = l;
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void put_bytes(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::multiset<std::pair<std::vector<double>, std::uint32_t>> pairs(const std::vector<EmbeddingBatch>& s) {
  std::multiset<std::pair<std::vector<double>, std::uint32_t>> out;
  for (const EmbeddingBatch& b : s)
    for (Eigen::Index n = 0; n < b.size(); ++n)
      out.emplace(std::vector<double>(b.features.row(n).data(), b.features.row(n).data() + b.dim()),
                  (*b.labels)[static_cast<std::size_t>(n)]);
  return out;
}

}  // namespace

TEST_CASE("feature file layout") {
  const fs::path dir = testutil::scratch("layout");
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, -0.5;
  write_feature_file(dir / "a.emb", m);
  const std::string b = bytes_of(dir / "a.emb");
  REQUIRE(b.size() == 16 + 6 * 4);
  CHECK(b.substr(0, 8) == "STADEMB1");
  CHECK(static_cast<unsigned char>(b[8]) == 2);
  CHECK(b[9] == 0);
  CHECK(static_cast<unsigned char>(b[12]) == 3);
  // 1.0f little-endian is 00 00 80 3f.
  CHECK(static_cast<unsigned char>(b[16 + 2]) == 0x80);
  CHECK(static_cast<unsigned char>(b[16 + 3]) == 0x3f);
  CHECK(read_feature_file(dir / "a.emb") == m);

  write_label_file(dir / "a.lbl", Labels{7, 256});
  const std::string l = bytes_of(dir / "a.lbl");
  REQUIRE(l.size() == 8);
  CHECK(l[0] == 7);
  CHECK(l[5] == 1);
  CHECK(read_label_file(dir / "a.lbl", 2) == Labels{7, 256});
}

TEST_CASE("round trip is bit-exact") {
  std::mt19937_64 rng(1);
  const fs::path dir = testutil::scratch("roundtrip");
  const auto stream = random_stream(5, 7, 3, rng);
  StreamExtras extras;
  extras.metadata["note"] = "x";
  extras.source_weights = float_matrix(3, 7, rng);
  std::vector<Matrix> truth;
  for (int t = 0; t < 5; ++t) truth.push_back(float_matrix(3, 7, rng));
  extras.ground_truth = truth;
  const StreamManifest m = write_stream(dir, stream, 3, extras);
  CHECK(m.steps.size() == 5);
  CHECK(m.steps[0].feature_path == "step_00001.emb");

  const auto back = read_stream(dir);
  REQUIRE(back.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back[i].t == stream[i].t);
    CHECK(back[i].features == stream[i].features);
    CHECK(back[i].labels == stream[i].labels);
  }
  CHECK(*read_source_weights(dir, m) == *extras.source_weights);
  const auto gt = read_ground_truth(dir, m);
  REQUIRE(gt);
  for (std::size_t i = 0; i < 5; ++i) CHECK((*gt)[i] == truth[i]);
  CHECK(read_manifest(dir).metadata.at("note") == "x");

  // Rewriting what was read reproduces the payload bytes.
  const fs::path again = testutil::scratch("roundtrip2");
  write_stream(again, back, 3);
  for (int t = 1; t <= 5; ++t) {
    const std::string name = m.steps[static_cast<std::size_t>(t - 1)].feature_path;
    CHECK(bytes_of(dir / name) == bytes_of(again / name));
  }
}

TEST_CASE("lazy reader walks steps in order") {
  std::mt19937_64 rng(2);
  const fs::path dir = testutil::scratch("lazy");
  write_stream(dir, random_stream(3, 4, 2, rng, false), 2);
  StreamReader reader(dir);
  int seen = 0;
  while (auto b = reader.next()) {
    CHECK(b->t == ++seen);
    CHECK_FALSE(b->labels);
  }
  CHECK(seen == 3);
  reader.rewind();
  CHECK(reader.next()->t == 1);
}

TEST_CASE("manifest validation") {
  std::mt19937_64 rng(3);
  const fs::path dir = testutil::scratch("gap");
  write_stream(dir, random_stream(3, 4, 2, rng), 2);
  auto j = nlohmann::json::parse(bytes_of(dir / kManifestName));
  j["steps"][1]["t"] = 5;
  put_bytes(dir / kManifestName, j.dump());
  CHECK(testutil::code_of([&] { read_stream(dir); }) == ErrorCode::kNonContiguousTime);

  j["steps"][1]["t"] = 2;
  j["format_version"] = 9;
  put_bytes(dir / kManifestName, j.dump());
  CHECK(testutil::code_of([&] { read_manifest(dir); }) == ErrorCode::kCorruptHeader);

  put_bytes(dir / kManifestName, "{not json");
  CHECK(testutil::code_of([&] { read_manifest(dir); }) == ErrorCode::kCorruptHeader);

  fs::remove(dir / kManifestName);
  CHECK(testutil::code_of([&] { read_manifest(dir); }) == ErrorCode::kMissingFile);
}

TEST_CASE("corrupt and truncated files raise distinct errors") {
  std::mt19937_64 rng(4);
  const fs::path dir = testutil::scratch("corrupt");
  write_stream(dir, random_stream(3, 4, 2, rng), 2);

  const std::string good = bytes_of(dir / "step_00002.emb");
  put_bytes(dir / "step_00002.emb", good.substr(0, good.size() - 3));
  try {
    read_stream(dir);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCorruptPayload);
    CHECK(std::string(e.what()).find("t=2") != std::string::npos);
  }

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  put_bytes(dir / "step_00002.emb", bad_magic);
  CHECK(testutil::code_of([&] { read_stream(dir); }) == ErrorCode::kCorruptHeader);
  put_bytes(dir / "step_00002.emb", good.substr(0, 10));
  CHECK(testutil::code_of([&] { read_stream(dir); }) == ErrorCode::kCorruptHeader);

  // A well-formed file of the wrong width.
  write_feature_file(dir / "step_00002.emb", Matrix::Ones(4, 5));
  CHECK(testutil::code_of([&] { read_stream(dir); }) == ErrorCode::kDimensionMismatch);

  put_bytes(dir / "step_00002.emb", good);
  const std::string lbl = bytes_of(dir / "step_00002.lbl");
  put_bytes(dir / "step_00002.lbl", lbl.substr(0, 4));
  CHECK(testutil::code_of([&] { read_stream(dir); }) == ErrorCode::kCorruptPayload);

  put_bytes(dir / "step_00002.lbl", lbl);
  fs::remove(dir / "step_00003.emb");
  CHECK(testutil::code_of([&] { read_stream(dir); }) == ErrorCode::kMissingFile);
}

TEST_CASE("non-finite payloads and out-of-range labels are rejected") {
  const fs::path dir = testutil::scratch("nonfinite");
  EmbeddingBatch b{1, Matrix::Ones(2, 2), Labels{0, 1}};
  write_stream(dir, std::vector<EmbeddingBatch>{b}, 2);
  Matrix bad = Matrix::Ones(2, 2);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  write_feature_file(dir / "step_00001.emb", bad);
  CHECK(testutil::code_of([&] { read_stream(dir); }) == ErrorCode::kNonFinite);

  b.labels = Labels{0, 2};
  CHECK(testutil::code_of([&] { write_stream(testutil::scratch("badlabel"), std::vector<EmbeddingBatch>{b}, 2); }) ==
        ErrorCode::kDomain);
}

TEST_CASE("write_stream preconditions") {
  std::mt19937_64 rng(5);
  auto s = random_stream(3, 4, 2, rng);
  s[2].t = 4;
  CHECK(testutil::code_of([&] { write_stream(testutil::scratch("w1"), s, 2); }) == ErrorCode::kNonContiguousTime);
  s[2].t = 3;
  s[1].features = Matrix::Ones(2, 5);
  CHECK(testutil::code_of([&] { write_stream(testutil::scratch("w2"), s, 2); }) == ErrorCode::kDimensionMismatch);
  s[1].features = Matrix(0, 4);
  s[1].labels = Labels{};
  CHECK(testutil::code_of([&] { write_stream(testutil::scratch("w3"), s, 2); }) == ErrorCode::kEmptyBatch);
}

TEST_CASE("CSV ingestion") {
  const fs::path dir = testutil::scratch("csv");
  put_bytes(dir / "s.csv", "t,label,f0,f1\n1,0,0.5,1\n1,1,2,3\n2,1,-1,0.25\n");
  const auto s = read_csv_stream(dir / "s.csv");
  REQUIRE(s.size() == 2);
  CHECK(s[0].size() == 2);
  CHECK(s[1].features(0, 1) == 0.25);
  CHECK(*s[0].labels == Labels{0, 1});

  put_bytes(dir / "u.csv", "t,label,f0\n1,,0.5\n2,,1\n");
  CHECK_FALSE(read_csv_stream(dir / "u.csv")[0].labels);

  put_bytes(dir / "gap.csv", "t,label,f0\n1,0,0.5\n3,0,1\n");
  CHECK(testutil::code_of([&] { read_csv_stream(dir / "gap.csv"); }) == ErrorCode::kNonContiguousTime);
  put_bytes(dir / "hdr.csv", "time,label,f0\n1,0,0.5\n");
  CHECK(testutil::code_of([&] { read_csv_stream(dir / "hdr.csv"); }) == ErrorCode::kCorruptHeader);
  put_bytes(dir / "width.csv", "t,label,f0,f1\n1,0,0.5\n");
  CHECK(testutil::code_of([&] { read_csv_stream(dir / "width.csv"); }) == ErrorCode::kDimensionMismatch);
  put_bytes(dir / "mixed.csv", "t,label,f0\n1,0,0.5\n1,,1\n");
  CHECK(testutil::code_of([&] { read_csv_stream(dir / "mixed.csv"); }) == ErrorCode::kMissingLabels);
  put_bytes(dir / "num.csv", "t,label,f0\n1,0,abc\n");
  CHECK(testutil::code_of([&] { read_csv_stream(dir / "num.csv"); }) == ErrorCode::kCorruptPayload);
}

TEST_CASE("read_matrix accepts both formats") {
  const fs::path dir = testutil::scratch("matrix");
  put_bytes(dir / "w.csv", "1,0,0\n0,0.5,2\n");
  Matrix expect(2, 3);
  expect << 1, 0, 0, 0, 0.5, 2;
  CHECK(read_matrix(dir / "w.csv") == expect);
  write_feature_file(dir / "w.emb", expect);
  CHECK(read_matrix(dir / "w.emb") == expect);
}

TEST_CASE("label shift: two-class step follows the drawn order") {
  EmbeddingBatch b;
  b.t = 1;
  b.features.resize(4, 1);
  b.features << 0, 1, 2, 3;
  b.labels = Labels{0, 1, 0, 1};
  bool saw_b_first = false;
  bool saw_a_first = false;
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    const auto out = make_label_shift({b}, seed, 2);
    const Labels& l = *out[0].labels;
    if (l == Labels{1, 1, 0, 0}) {
      saw_b_first = true;
      // Stable within a class: B samples keep their relative order.
      CHECK(out[0].features.col(0) == Eigen::Vector4d(1, 3, 0, 2));
    } else {
      CHECK(l == Labels{0, 0, 1, 1});
      CHECK(out[0].features.col(0) == Eigen::Vector4d(0, 2, 1, 3));
      saw_a_first = true;
    }
  }
  CHECK(saw_b_first);
  CHECK(saw_a_first);
}

TEST_CASE("label shift is a deterministic class-contiguous permutation") {
  std::mt19937_64 rng(6);
  const auto s = random_stream(6, 3, 4, rng);
  for (auto g : {ShiftGranularity::kPerStep, ShiftGranularity::kWholeStream}) {
    const auto out = make_label_shift(s, 11, 4, g);
    CHECK(pairs(out) == pairs(s));
    REQUIRE(out.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(out[i].t == s[i].t);
      CHECK(out[i].size() == s[i].size());
    }
    const auto again = make_label_shift(s, 11, 4, g);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(again[i].features == out[i].features);

    // Class contiguity: once a class ends it never reappears (per step, or
    // along the concatenated stream).
    auto contiguous = [](const Labels& l) {
      std::set<std::uint32_t> closed;
      for (std::size_t n = 0; n < l.size(); ++n) {
        if (closed.count(l[n])) return false;
        if (n + 1 < l.size() && l[n + 1] != l[n]) closed.insert(l[n]);
      }
      return true;
    };
    if (g == ShiftGranularity::kPerStep) {
      for (const auto& b : out) CHECK(contiguous(*b.labels));
    } else {
      Labels all;
      for (const auto& b : out) all.insert(all.end(), b.labels->begin(), b.labels->end());
      CHECK(contiguous(all));
    }
  }
  auto unlabeled = s;
  unlabeled[2].labels.reset();
  CHECK(testutil::code_of([&] { make_label_shift(unlabeled, 1, 4); }) == ErrorCode::kMissingLabels);
}
