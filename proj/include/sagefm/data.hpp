#pragma once

// Spot-level expression datasets: native on-disk layout, validation,
// CP10K + log1p normalization, and sample-granular splitting.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sagefm {

/// Row-major float matrix; one row per spot, one column per gene.
using ExpressionMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Ordered gene symbols with an inverse index.
class GeneVocabulary {
 public:
  GeneVocabulary() = default;
  /// Throws CorruptData on duplicate or empty symbols.
  explicit GeneVocabulary(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<std::size_t> find(std::string_view symbol) const;
  /// Throws UnknownGene when absent.
  std::size_t index_of(std::string_view symbol) const;
  /// Hex SHA-256 over the newline-joined symbols; identifies the vocabulary in checkpoints.
  std::string sha256() const;

  friend bool operator==(const GeneVocabulary& a, const GeneVocabulary& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Compressed sparse row matrix of nonnegative integer counts.
struct SparseCounts {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};  // rows + 1 entries
  std::vector<std::uint32_t> col_idx;
  std::vector<std::int64_t> values;

  std::size_t nnz() const { return values.size(); }
  std::int64_t row_total(std::size_t r) const;
  std::int64_t at(std::size_t r, std::size_t c) const;

  struct Entry {
    std::size_t row;
    std::size_t col;
    std::int64_t value;
  };
  /// Builds from unordered entries; duplicates are summed, zeros dropped.
  /// Throws CorruptData on out-of-range indices or negative values.
  static SparseCounts from_entries(std::size_t rows, std::size_t cols, std::vector<Entry> entries);
  static SparseCounts from_dense(const std::vector<std::vector<std::int64_t>>& dense);

  friend bool operator==(const SparseCounts&, const SparseCounts&) = default;
};

struct SpotPosition {
  double x_um = 0.0;
  double y_um = 0.0;
  friend bool operator==(const SpotPosition&, const SpotPosition&) = default;
};

struct GridIndex {
  int row = 0;
  int col = 0;
  friend bool operator==(const GridIndex&, const GridIndex&) = default;
  friend auto operator<=>(const GridIndex&, const GridIndex&) = default;
};

/// One tissue section.
struct SampleRecord {
  std::string sample_id;
  std::string tissue;
  std::vector<std::string> barcodes;
  std::vector<SpotPosition> spot_xy;
  std::vector<GridIndex> spot_rowcol;
  SparseCounts counts;

  std::size_t spot_count() const { return spot_xy.size(); }
  /// Throws CorruptData when coordinate rows and count rows disagree.
  void validate(std::size_t gene_count) const;
};

struct Dataset {
  GeneVocabulary vocab;
  std::vector<SampleRecord> samples;

  /// Throws LoadError when absent.
  const SampleRecord& sample(std::string_view id) const;
  std::size_t sample_index(std::string_view id) const;
  std::vector<std::string> sample_ids() const;
};

/// Reads the native layout rooted at `dir` (manifest.json, genes.tsv, one
/// directory per sample holding spots.tsv and matrix.mtx). A sample
/// directory may carry its own genes.tsv; it must match the shared list.
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes the native layout. Coordinates use shortest round-trip formatting,
/// so load_dataset(write_dataset(d)) reproduces d exactly.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

inline constexpr std::string_view kSchemeCp10kLog1p = "cp10k_log1p";

struct NormalizedMatrix {
  ExpressionMatrix values;
  std::string scheme;
};

/// ln(1 + 1e4 * c / T) per entry, T the row total; all-zero rows stay zero.
NormalizedMatrix normalize_cp10k_log1p(const SparseCounts& counts);

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

enum class SplitPart { kTrain, kValidation, kTest };

struct SplitAssignment {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  std::uint64_t seed = 0;

  const std::vector<std::string>& part(SplitPart p) const;
  std::optional<SplitPart> part_of(std::string_view id) const;
};

/// Shuffles ids with a seeded RNG, then slices. Validation and test sizes are
/// round(ratio * n), each at least one; training takes the remainder.
/// Throws TooFewSamples for n < 3 and InvalidArgument when ratios do not sum to 1.
SplitAssignment split_by_sample(std::vector<std::string> sample_ids, SplitRatios ratios,
                                std::uint64_t seed);

std::string_view to_string(SplitPart p);
SplitPart parse_split_part(std::string_view s);

}  // namespace sagefm
