#include "stad/stream.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <iomanip>
#include <sstream>

namespace stad::stream {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kHeaderBytes = 16;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void put(std::ostream& os, T v) {
  const T le = to_little(v);
  os.write(reinterpret_cast<const char*>(&le), sizeof(T));
}

template <typename T>
T get(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return to_little(v);
}

std::string where(const std::string& context, const fs::path& path) {
  return context.empty() ? path.string() : context + " (" + path.string() + ")";
}

std::string slurp(const fs::path& path, const std::string& context) {
  if (!fs::exists(path)) throw Error(ErrorCode::kMissingFile, "missing file " + where(context, path));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + where(context, path));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

std::string step_name(std::int64_t t) {
  std::ostringstream os;
  os << "step_" << std::setw(5) << std::setfill('0') << t;
  return os.str();
}

}  // namespace

void StreamManifest::validate() const {
  if (format_version != kFormatVersion) {
    throw Error(ErrorCode::kCorruptHeader, "unsupported format_version " + std::to_string(format_version));
  }
  if (dim < 1 || num_classes < 1) throw Error(ErrorCode::kCorruptHeader, "manifest needs D >= 1 and K >= 1");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto expected = static_cast<std::int64_t>(i + 1);
    if (steps[i].t != expected) {
      throw Error(ErrorCode::kNonContiguousTime,
                  "manifest step " + std::to_string(i) + " has t=" + std::to_string(steps[i].t) +
                      ", expected " + std::to_string(expected));
    }
    if (steps[i].count == 0) {
      throw Error(ErrorCode::kCorruptHeader, "step t=" + std::to_string(steps[i].t) + " has count 0");
    }
  }
}

std::string StreamManifest::to_json() const {
  json j;
  j["format_version"] = format_version;
  j["D"] = dim;
  j["K"] = num_classes;
  j["steps"] = json::array();
  for (const StepEntry& s : steps) {
    json e{{"t", s.t}, {"feature_path", s.feature_path}, {"count", s.count}};
    if (s.label_path) e["label_path"] = *s.label_path;
    j["steps"].push_back(std::move(e));
  }
  j["metadata"] = metadata;
  if (ground_truth_path) j["ground_truth_path"] = *ground_truth_path;
  if (source_weights_path) j["source_weights_path"] = *source_weights_path;
  return j.dump(2);
}

StreamManifest StreamManifest::from_json(const std::string& text) {
  StreamManifest m;
  try {
    const json j = json::parse(text);
    m.format_version = j.at("format_version").get<int>();
    m.dim = j.at("D").get<int>();
    m.num_classes = j.at("K").get<int>();
    for (const json& e : j.at("steps")) {
      StepEntry s;
      s.t = e.at("t").get<std::int64_t>();
      s.feature_path = e.at("feature_path").get<std::string>();
      s.count = e.at("count").get<std::uint64_t>();
      if (e.contains("label_path") && !e["label_path"].is_null()) s.label_path = e["label_path"].get<std::string>();
      m.steps.push_back(std::move(s));
    }
    if (j.contains("metadata")) {
      for (const auto& [key, value] : j["metadata"].items()) {
        m.metadata[key] = value.is_string() ? value.get<std::string>() : value.dump();
      }
    }
    if (j.contains("ground_truth_path")) m.ground_truth_path = j["ground_truth_path"].get<std::string>();
    if (j.contains("source_weights_path")) m.source_weights_path = j["source_weights_path"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptHeader, std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void write_feature_file(const fs::path& path, const Matrix& features) {
  if (features.rows() > 0xffffffffLL || features.cols() > 0xffffffffLL) {
    throw Error(ErrorCode::kDomain, "matrix too large for the feature format");
  }
  std::ofstream out = open_out(path);
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(features.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(features.cols()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) put<float>(out, static_cast<float>(features(i, j)));
  }
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

Matrix read_feature_file(const fs::path& path, const std::string& context) {
  const std::string bytes = slurp(path, context);
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kCorruptHeader, "bad feature header in " + where(context, path));
  }
  const auto rows = get<std::uint32_t>(bytes.data() + 8);
  const auto cols = get<std::uint32_t>(bytes.data() + 12);
  const std::uint64_t expected = kHeaderBytes + std::uint64_t{rows} * cols * sizeof(float);
  if (bytes.size() != expected) {
    throw Error(ErrorCode::kCorruptPayload, "payload of " + where(context, path) + " has " +
                                                std::to_string(bytes.size()) + " bytes, expected " +
                                                std::to_string(expected));
  }
  Matrix m(rows, cols);
  const char* p = bytes.data() + kHeaderBytes;
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j < cols; ++j, p += sizeof(float)) m(i, j) = get<float>(p);
  }
  return m;
}

void write_label_file(const fs::path& path, const Labels& labels) {
  std::ofstream out = open_out(path);
  for (std::uint32_t y : labels) put<std::uint32_t>(out, y);
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

Labels read_label_file(const fs::path& path, std::uint64_t expected_rows, const std::string& context) {
  const std::string bytes = slurp(path, context);
  if (bytes.size() != expected_rows * sizeof(std::uint32_t)) {
    throw Error(ErrorCode::kCorruptPayload, "label file " + where(context, path) + " has " +
                                                std::to_string(bytes.size()) + " bytes, expected " +
                                                std::to_string(expected_rows * 4));
  }
  Labels labels(expected_rows);
  for (std::uint64_t i = 0; i < expected_rows; ++i) labels[i] = get<std::uint32_t>(bytes.data() + 4 * i);
  return labels;
}

Matrix read_matrix(const fs::path& path) {
  if (path.extension() != ".csv") return read_feature_file(path, "matrix");
  const std::string text = slurp(path, "matrix");
  std::istringstream in(text);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(ErrorCode::kCorruptPayload, "non-numeric cell '" + cell + "' in " + path.string());
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorCode::kDimensionMismatch, "ragged CSV matrix " + path.string());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::kCorruptPayload, "empty matrix file " + path.string());
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

StreamManifest write_stream(const fs::path& dir, std::span<const EmbeddingBatch> batches, int num_classes,
                            const StreamExtras& extras) {
  if (batches.empty()) throw Error(ErrorCode::kEmptyBatch, "stream has no steps");
  fs::create_directories(dir);
  StreamManifest m;
  m.dim = static_cast<int>(batches.front().dim());
  m.num_classes = num_classes;
  m.metadata = extras.metadata;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const EmbeddingBatch& b = batches[i];
    if (b.t != static_cast<std::int64_t>(i + 1)) {
      throw Error(ErrorCode::kNonContiguousTime, "batch " + std::to_string(i) + " has t=" + std::to_string(b.t));
    }
    if (b.dim() != m.dim) throw Error(ErrorCode::kDimensionMismatch, "batch t=" + std::to_string(b.t) + " changes D");
    if (b.size() == 0) throw Error(ErrorCode::kEmptyBatch, "batch t=" + std::to_string(b.t) + " is empty");
    StepEntry e;
    e.t = b.t;
    e.count = static_cast<std::uint64_t>(b.size());
    e.feature_path = step_name(b.t) + ".emb";
    write_feature_file(dir / e.feature_path, b.features);
    if (b.labels) {
      if (b.labels->size() != e.count) throw Error(ErrorCode::kDimensionMismatch, "label count mismatch");
      for (std::uint32_t y : *b.labels) {
        if (y >= static_cast<std::uint32_t>(num_classes)) throw Error(ErrorCode::kDomain, "label out of range");
      }
      e.label_path = step_name(b.t) + ".lbl";
      write_label_file(dir / *e.label_path, *b.labels);
    }
    m.steps.push_back(std::move(e));
  }
  if (extras.ground_truth) {
    const auto& gt = *extras.ground_truth;
    if (gt.size() != batches.size()) throw Error(ErrorCode::kDimensionMismatch, "ground truth length != T");
    Matrix stacked(static_cast<Eigen::Index>(gt.size()) * num_classes, m.dim);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      stacked.middleRows(static_cast<Eigen::Index>(i) * num_classes, num_classes) = gt[i];
    }
    m.ground_truth_path = "ground_truth.emb";
    write_feature_file(dir / *m.ground_truth_path, stacked);
  }
  if (extras.source_weights) {
    m.source_weights_path = "source_weights.emb";
    write_feature_file(dir / *m.source_weights_path, *extras.source_weights);
  }
  m.validate();
  std::ofstream out = open_out(dir / kManifestName);
  out << m.to_json() << '\n';
  return m;
}

StreamManifest read_manifest(const fs::path& dir) {
  return StreamManifest::from_json(slurp(dir / kManifestName, "manifest"));
}

StreamReader::StreamReader(fs::path dir) : dir_(std::move(dir)), manifest_(read_manifest(dir_)) {}

std::optional<EmbeddingBatch> StreamReader::next() {
  if (cursor_ >= manifest_.steps.size()) return std::nullopt;
  const StepEntry& e = manifest_.steps[cursor_++];
  const std::string context = "step t=" + std::to_string(e.t);
  EmbeddingBatch b;
  b.t = e.t;
  b.features = read_feature_file(dir_ / e.feature_path, context);
  if (b.features.cols() != manifest_.dim || static_cast<std::uint64_t>(b.features.rows()) != e.count) {
    throw Error(ErrorCode::kDimensionMismatch,
                context + " is " + std::to_string(b.features.rows()) + "x" + std::to_string(b.features.cols()) +
                    ", manifest says " + std::to_string(e.count) + "x" + std::to_string(manifest_.dim));
  }
  if (!b.features.allFinite()) throw Error(ErrorCode::kNonFinite, context + " contains non-finite values");
  if (e.label_path) {
    b.labels = read_label_file(dir_ / *e.label_path, e.count, context);
    for (std::uint32_t y : *b.labels) {
      if (y >= static_cast<std::uint32_t>(manifest_.num_classes)) {
        throw Error(ErrorCode::kCorruptPayload, context + " has label " + std::to_string(y) + " >= K");
      }
    }
  }
  return b;
}

std::vector<EmbeddingBatch> read_stream(const fs::path& dir) {
  StreamReader reader(dir);
  std::vector<EmbeddingBatch> out;
  while (auto b = reader.next()) out.push_back(std::move(*b));
  return out;
}

std::optional<std::vector<Matrix>> read_ground_truth(const fs::path& dir, const StreamManifest& manifest) {
  if (!manifest.ground_truth_path) return std::nullopt;
  const Matrix stacked = read_feature_file(dir / *manifest.ground_truth_path, "ground truth");
  const auto k = static_cast<Eigen::Index>(manifest.num_classes);
  if (stacked.cols() != manifest.dim || stacked.rows() != k * static_cast<Eigen::Index>(manifest.steps.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "ground truth does not match T*K x D");
  }
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < manifest.steps.size(); ++i) {
    out.emplace_back(stacked.middleRows(static_cast<Eigen::Index>(i) * k, k));
  }
  return out;
}

std::optional<Matrix> read_source_weights(const fs::path& dir, const StreamManifest& manifest) {
  if (!manifest.source_weights_path) return std::nullopt;
  Matrix w = read_feature_file(dir / *manifest.source_weights_path, "source weights");
  if (w.rows() != manifest.num_classes || w.cols() != manifest.dim) {
    throw Error(ErrorCode::kDimensionMismatch, "source weights do not match K x D");
  }
  return w;
}

std::vector<EmbeddingBatch> read_csv_stream(const fs::path& path) {
  const std::string text = slurp(path, "csv stream");
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kCorruptHeader, "empty CSV " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 3 || header[0] != "t" || header[1] != "label") {
    throw Error(ErrorCode::kCorruptHeader, "CSV header must start with t,label,f0");
  }
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j + 2] != "f" + std::to_string(j)) {
      throw Error(ErrorCode::kCorruptHeader, "CSV column " + std::to_string(j + 2) + " should be f" + std::to_string(j));
    }
  }

  std::vector<EmbeddingBatch> out;
  std::vector<std::vector<double>> rows;
  Labels labels;
  std::optional<bool> labeled;
  std::int64_t current = 0;
  auto flush = [&]() {
    if (rows.empty()) return;
    EmbeddingBatch b;
    b.t = current;
    b.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) b.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    if (labeled.value_or(false)) b.labels = labels;
    out.push_back(std::move(b));
    rows.clear();
    labels.clear();
  };
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != d + 2) {
      throw Error(ErrorCode::kDimensionMismatch, "CSV line " + std::to_string(line_no) + " has " +
                                                     std::to_string(cells.size()) + " cells, expected " +
                                                     std::to_string(d + 2));
    }
    try {
      const std::int64_t t = std::stoll(cells[0]);
      if (rows.empty() && out.empty()) current = t;
      if (t != current) {
        flush();
        if (t != current + 1) {
          throw Error(ErrorCode::kNonContiguousTime, "CSV jumps from t=" + std::to_string(current) + " to t=" + std::to_string(t));
        }
        current = t;
      }
      const bool has_label = !cells[1].empty();
      if (labeled && *labeled != has_label) {
        throw Error(ErrorCode::kMissingLabels, "CSV mixes labeled and unlabeled rows");
      }
      labeled = has_label;
      if (has_label) labels.push_back(static_cast<std::uint32_t>(std::stoul(cells[1])));
      std::vector<double> row(d);
      for (std::size_t j = 0; j < d; ++j) row[j] = std::stod(cells[j + 2]);
      rows.push_back(std::move(row));
    } catch (const std::invalid_argument&) {
      throw Error(ErrorCode::kCorruptPayload, "non-numeric cell on CSV line " + std::to_string(line_no));
    } catch (const std::out_of_range&) {
      throw Error(ErrorCode::kCorruptPayload, "out-of-range cell on CSV line " + std::to_string(line_no));
    }
  }
  flush();
  if (out.empty()) throw Error(ErrorCode::kEmptyBatch, "CSV has no data rows");
  if (out.front().t != 1) {
    throw Error(ErrorCode::kNonContiguousTime, "CSV stream must start at t=1");
  }
  return out;
}

}  // namespace stad::stream
