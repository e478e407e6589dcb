#pragma once

// On-disk embedding streams.
//
// A stream directory holds a UTF-8 JSON manifest (manifest.json) and one
// feature file per time step. Feature files are a 16-byte header, the ASCII
// magic "STADEMB1" followed by rows and cols as little-endian uint32, then a
// row-major payload of little-endian IEEE-754 float32. Label files are one
// little-endian uint32 per row with no header.

#include "stad/error.hpp"
#include "stad/types.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stad::stream {

inline constexpr char kMagic[8] = {'S', 'T', 'A', 'D', 'E', 'M', 'B', '1'};
inline constexpr int kFormatVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

struct StepEntry {
  std::int64_t t = 0;
  std::string feature_path;
  std::optional<std::string> label_path;
  std::uint64_t count = 0;
};

struct StreamManifest {
  int format_version = kFormatVersion;
  int dim = 0;
  int num_classes = 0;
  std::vector<StepEntry> steps;
  std::map<std::string, std::string> metadata;
  // Optional companions, relative to the stream directory.
  std::optional<std::string> ground_truth_path;   // (T*K) x D, step-major
  std::optional<std::string> source_weights_path; // K x D

  void validate() const;
  std::string to_json() const;
  static StreamManifest from_json(const std::string& text);
};

void write_feature_file(const std::filesystem::path& path, const Matrix& features);
Matrix read_feature_file(const std::filesystem::path& path, const std::string& context = "");
void write_label_file(const std::filesystem::path& path, const Labels& labels);
Labels read_label_file(const std::filesystem::path& path, std::uint64_t expected_rows,
                       const std::string& context = "");

/// Reads a K x D matrix from a feature file or from a headerless CSV.
Matrix read_matrix(const std::filesystem::path& path);

struct StreamExtras {
  std::map<std::string, std::string> metadata;
  std::optional<std::vector<Matrix>> ground_truth;  // one K x D per step
  std::optional<Matrix> source_weights;
};

/// Writes batches (which must carry t = 1..T) into `dir`, creating it.
StreamManifest write_stream(const std::filesystem::path& dir, std::span<const EmbeddingBatch> batches,
                            int num_classes, const StreamExtras& extras = {});

StreamManifest read_manifest(const std::filesystem::path& dir);

/// Lazy reader: only the current step is held in memory.
class StreamReader {
 public:
  explicit StreamReader(std::filesystem::path dir);

  const StreamManifest& manifest() const { return manifest_; }
  std::optional<EmbeddingBatch> next();
  void rewind() { cursor_ = 0; }

 private:
  std::filesystem::path dir_;
  StreamManifest manifest_;
  std::size_t cursor_ = 0;
};

std::vector<EmbeddingBatch> read_stream(const std::filesystem::path& dir);
std::optional<std::vector<Matrix>> read_ground_truth(const std::filesystem::path& dir,
                                                     const StreamManifest& manifest);
std::optional<Matrix> read_source_weights(const std::filesystem::path& dir, const StreamManifest& manifest);

/// CSV with header `t,label,f0,...,f{D-1}`; rows grouped by t. An empty label
/// column means unlabeled.
std::vector<EmbeddingBatch> read_csv_stream(const std::filesystem::path& path);

enum class ShiftGranularity { kPerStep, kWholeStream };

/// Reorders samples class-contiguously with a seed-drawn class order.
/// Per-step mode draws one order per step; whole-stream mode sorts the
/// concatenated stream once and re-splits it with the original step sizes.
std::vector<EmbeddingBatch> make_label_shift(const std::vector<EmbeddingBatch>& stream, std::uint64_t seed,
                                             int num_classes,
                                             ShiftGranularity granularity = ShiftGranularity::kPerStep);

}  // namespace stad::stream
