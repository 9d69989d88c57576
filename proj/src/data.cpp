#include "sagefm/data.hpp"

#include "sagefm/errors.hpp"
#include "sagefm/random.hpp"
#include "sagefm/textio.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sagefm {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// GeneVocabulary

GeneVocabulary::GeneVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
  index_.reserve(names_.size());
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw CorruptData("empty gene symbol at position " + std::to_string(i));
    if (!index_.emplace(names_[i], i).second) throw CorruptData("duplicate gene symbol '" + names_[i] + "'");
  }
}

std::optional<std::size_t> GeneVocabulary::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t GeneVocabulary::index_of(std::string_view symbol) const {
  if (auto i = find(symbol)) return *i;
  throw UnknownGene("gene '" + std::string(symbol) + "' is not in the vocabulary");
}

std::string GeneVocabulary::sha256() const {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (const auto& n : names_) {
    EVP_DigestUpdate(ctx, n.data(), n.size());
    EVP_DigestUpdate(ctx, "\n", 1);
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SparseCounts

std::int64_t SparseCounts::row_total(std::size_t r) const {
  std::int64_t t = 0;
  for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) t += values[k];
  return t;
}

std::int64_t SparseCounts::at(std::size_t r, std::size_t c) const {
  auto begin = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[r]);
  auto end = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[r + 1]);
  auto it = std::lower_bound(begin, end, static_cast<std::uint32_t>(c));
  if (it == end || *it != c) return 0;
  return values[static_cast<std::size_t>(it - col_idx.begin())];
}

SparseCounts SparseCounts::from_entries(std::size_t rows, std::size_t cols, std::vector<Entry> entries) {
  for (const auto& e : entries) {
    if (e.row >= rows || e.col >= cols) {
      throw CorruptData("matrix entry (" + std::to_string(e.row + 1) + ", " + std::to_string(e.col + 1) +
                        ") outside " + std::to_string(rows) + " x " + std::to_string(cols));
    }
    if (e.value < 0) throw CorruptData("negative count at row " + std::to_string(e.row + 1));
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
  SparseCounts m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(rows + 1, 0);
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    std::int64_t v = 0;
    while (j < entries.size() && entries[j].row == entries[i].row && entries[j].col == entries[i].col) {
      v += entries[j].value;
      ++j;
    }
    if (v != 0) {
      m.col_idx.push_back(static_cast<std::uint32_t>(entries[i].col));
      m.values.push_back(v);
      ++m.row_ptr[entries[i].row + 1];
    }
    i = j;
  }
  std::partial_sum(m.row_ptr.begin(), m.row_ptr.end(), m.row_ptr.begin());
  return m;
}

SparseCounts SparseCounts::from_dense(const std::vector<std::vector<std::int64_t>>& dense) {
  std::size_t cols = dense.empty() ? 0 : dense.front().size();
  std::vector<Entry> entries;
  for (std::size_t r = 0; r < dense.size(); ++r) {
    if (dense[r].size() != cols) throw CorruptData("ragged dense matrix");
    for (std::size_t c = 0; c < cols; ++c) {
      if (dense[r][c] != 0) entries.push_back({r, c, dense[r][c]});
    }
  }
  return from_entries(dense.size(), cols, std::move(entries));
}

// ---------------------------------------------------------------------------
// SampleRecord / Dataset

void SampleRecord::validate(std::size_t gene_count) const {
  const std::size_t n = spot_xy.size();
  if (n == 0) throw CorruptData("sample '" + sample_id + "' has no spots");
  if (spot_rowcol.size() != n || barcodes.size() != n) {
    throw CorruptData("sample '" + sample_id + "': spot table columns disagree in length");
  }
  if (counts.rows != n) {
    throw CorruptData("sample '" + sample_id + "': matrix has " + std::to_string(counts.rows) +
                      " rows but spots.tsv lists " + std::to_string(n) + " spots");
  }
  if (counts.cols != gene_count) {
    throw CorruptData("sample '" + sample_id + "': matrix has " + std::to_string(counts.cols) +
                      " columns but the vocabulary has " + std::to_string(gene_count) + " genes");
  }
  for (auto v : counts.values) {
    if (v < 0) throw CorruptData("sample '" + sample_id + "': negative count");
  }
  for (const auto& p : spot_xy) {
    if (!std::isfinite(p.x_um) || !std::isfinite(p.y_um)) {
      throw CorruptData("sample '" + sample_id + "': non-finite coordinate");
    }
  }
}

const SampleRecord& Dataset::sample(std::string_view id) const { return samples[sample_index(id)]; }

std::size_t Dataset::sample_index(std::string_view id) const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].sample_id == id) return i;
  }
  throw LoadError("no sample named '" + std::string(id) + "'");
}

std::vector<std::string> Dataset::sample_ids() const {
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.sample_id);
  return ids;
}

namespace {

std::vector<std::string> read_gene_list(const fs::path& path) {
  std::vector<std::string> genes;
  for (auto& line : read_lines(path)) {
    if (line.empty()) continue;
    genes.push_back(std::move(line));
  }
  return genes;
}

void read_spots(const fs::path& path, SampleRecord& rec) {
  auto lines = read_lines(path);
  if (lines.empty()) throw CorruptData(path.string() + ": missing header");
  const auto header = split(lines[0], '\t');
  const std::vector<std::string> expected{"barcode", "x_um", "y_um", "array_row", "array_col"};
  if (header != expected) throw CorruptData(path.string() + ": unexpected header '" + lines[0] + "'");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split(lines[i], '\t');
    if (f.size() != 5) throw CorruptData(path.string() + ": line " + std::to_string(i + 1) + " has " +
                                         std::to_string(f.size()) + " fields");
    rec.barcodes.push_back(f[0]);
    rec.spot_xy.push_back({parse_double(f[1]), parse_double(f[2])});
    rec.spot_rowcol.push_back({static_cast<int>(parse_int(f[3])), static_cast<int>(parse_int(f[4]))});
  }
}

SparseCounts read_matrix_market(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("%%MatrixMarket", 0) != 0) {
    throw CorruptData(path.string() + ": missing MatrixMarket banner");
  }
  {
    std::istringstream banner(line);
    std::string tag, object, format, field, symmetry;
    banner >> tag >> object >> format >> field >> symmetry;
    if (object != "matrix" || format != "coordinate" || field != "integer" || symmetry != "general") {
      throw CorruptData(path.string() + ": only 'matrix coordinate integer general' is supported");
    }
  }
  while (std::getline(in, line) && (line.empty() || line[0] == '%')) {
  }
  std::size_t rows = 0, cols = 0, nnz = 0;
  {
    std::istringstream size_line(line);
    if (!(size_line >> rows >> cols >> nnz)) throw CorruptData(path.string() + ": bad size line");
  }
  std::vector<SparseCounts::Entry> entries;
  entries.reserve(nnz);
  for (std::size_t k = 0; k < nnz; ++k) {
    long long i = 0, j = 0, v = 0;
    if (!(in >> i >> j >> v)) throw CorruptData(path.string() + ": truncated after " + std::to_string(k) + " entries");
    if (i < 1 || j < 1) throw CorruptData(path.string() + ": indices are 1-based");
    if (v < 0) throw CorruptData(path.string() + ": negative count at entry " + std::to_string(k + 1));
    entries.push_back({static_cast<std::size_t>(i - 1), static_cast<std::size_t>(j - 1), v});
  }
  return SparseCounts::from_entries(rows, cols, std::move(entries));
}

void write_matrix_market(const fs::path& path, const SparseCounts& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "%%MatrixMarket matrix coordinate integer general\n";
  out << m.rows << ' ' << m.cols << ' ' << m.nnz() << '\n';
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t k = m.row_ptr[r]; k < m.row_ptr[r + 1]; ++k) {
      out << (r + 1) << ' ' << (m.col_idx[k] + 1) << ' ' << m.values[k] << '\n';
    }
  }
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw LoadError("missing " + manifest_path.string());
  json manifest;
  try {
    std::ifstream in(manifest_path);
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(manifest_path.string() + ": " + e.what());
  }
  if (!manifest.contains("genes") || !manifest.contains("samples")) {
    throw LoadError(manifest_path.string() + ": needs 'genes' and 'samples'");
  }
  const fs::path genes_path = dir / manifest["genes"].get<std::string>();
  if (!fs::exists(genes_path)) throw LoadError("missing " + genes_path.string());

  Dataset ds;
  ds.vocab = GeneVocabulary(read_gene_list(genes_path));
  for (const auto& entry : manifest["samples"]) {
    SampleRecord rec;
    rec.sample_id = entry.at("id").get<std::string>();
    rec.tissue = entry.at("tissue").get<std::string>();
    const fs::path sdir = dir / entry.at("dir").get<std::string>();
    const fs::path spots = sdir / "spots.tsv";
    const fs::path mtx = sdir / "matrix.mtx";
    if (!fs::exists(spots)) throw LoadError("missing " + spots.string());
    if (!fs::exists(mtx)) throw LoadError("missing " + mtx.string());
    if (fs::exists(sdir / "genes.tsv") && read_gene_list(sdir / "genes.tsv") != ds.vocab.names()) {
      throw VocabularyMismatch("sample '" + rec.sample_id + "' gene list differs from " + genes_path.string());
    }
    read_spots(spots, rec);
    rec.counts = read_matrix_market(mtx);
    rec.validate(ds.vocab.size());
    ds.samples.push_back(std::move(rec));
  }
  return ds;
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "genes.tsv", std::ios::binary);
    for (const auto& g : dataset.vocab.names()) out << g << '\n';
  }
  json manifest;
  manifest["genes"] = "genes.tsv";
  manifest["samples"] = json::array();
  for (const auto& s : dataset.samples) {
    s.validate(dataset.vocab.size());
    const std::string sub = "samples/" + s.sample_id;
    manifest["samples"].push_back({{"id", s.sample_id}, {"tissue", s.tissue}, {"dir", sub}});
    const fs::path sdir = dir / sub;
    fs::create_directories(sdir);
    std::ofstream spots(sdir / "spots.tsv", std::ios::binary);
    spots << "barcode\tx_um\ty_um\tarray_row\tarray_col\n";
    for (std::size_t i = 0; i < s.spot_count(); ++i) {
      spots << s.barcodes[i] << '\t' << format_double(s.spot_xy[i].x_um) << '\t'
            << format_double(s.spot_xy[i].y_um) << '\t' << s.spot_rowcol[i].row << '\t' << s.spot_rowcol[i].col
            << '\n';
    }
    write_matrix_market(sdir / "matrix.mtx", s.counts);
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Normalization

NormalizedMatrix normalize_cp10k_log1p(const SparseCounts& counts) {
  NormalizedMatrix out;
  out.scheme = std::string(kSchemeCp10kLog1p);
  out.values = ExpressionMatrix::Zero(static_cast<Eigen::Index>(counts.rows), static_cast<Eigen::Index>(counts.cols));
  for (std::size_t r = 0; r < counts.rows; ++r) {
    const std::int64_t total = counts.row_total(r);
    if (total == 0) continue;
    const double scale = 1e4 / static_cast<double>(total);
    for (std::size_t k = counts.row_ptr[r]; k < counts.row_ptr[r + 1]; ++k) {
      out.values(static_cast<Eigen::Index>(r), counts.col_idx[k]) =
          static_cast<float>(std::log1p(scale * static_cast<double>(counts.values[k])));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

const std::vector<std::string>& SplitAssignment::part(SplitPart p) const {
  switch (p) {
    case SplitPart::kTrain: return train;
    case SplitPart::kValidation: return validation;
    case SplitPart::kTest: return test;
  }
  return train;
}

std::optional<SplitPart> SplitAssignment::part_of(std::string_view id) const {
  for (auto p : {SplitPart::kTrain, SplitPart::kValidation, SplitPart::kTest}) {
    const auto& v = part(p);
    if (std::find(v.begin(), v.end(), id) != v.end()) return p;
  }
  return std::nullopt;
}

SplitAssignment split_by_sample(std::vector<std::string> sample_ids, SplitRatios ratios, std::uint64_t seed) {
  const std::size_t n = sample_ids.size();
  if (n < 3) throw TooFewSamples("need at least 3 samples to split, got " + std::to_string(n));
  if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9 || ratios.train < 0 ||
      ratios.validation < 0 || ratios.test < 0) {
    throw InvalidArgument("split ratios must be nonnegative and sum to 1");
  }
  {
    auto sorted = sample_ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw InvalidArgument("duplicate sample id in split input");
    }
    sample_ids = std::move(sorted);
  }
  auto bucket = [n](double r) {
    auto k = static_cast<std::size_t>(std::llround(r * static_cast<double>(n)));
    return std::max<std::size_t>(k, r > 0 ? 1 : 0);
  };
  const std::size_t n_val = bucket(ratios.validation);
  const std::size_t n_test = bucket(ratios.test);
  if (n_val + n_test >= n) throw TooFewSamples("split leaves no training samples");

  Rng rng(seed);
  std::shuffle(sample_ids.begin(), sample_ids.end(), rng);

  SplitAssignment out;
  out.seed = seed;
  const std::size_t n_train = n - n_val - n_test;
  auto it = sample_ids.begin();
  out.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  it += static_cast<std::ptrdiff_t>(n_train);
  out.validation.assign(it, it + static_cast<std::ptrdiff_t>(n_val));
  it += static_cast<std::ptrdiff_t>(n_val);
  out.test.assign(it, sample_ids.end());
  return out;
}

std::string_view to_string(SplitPart p) {
  switch (p) {
    case SplitPart::kTrain: return "train";
    case SplitPart::kValidation: return "validation";
    case SplitPart::kTest: return "test";
  }
  return "train";
}

SplitPart parse_split_part(std::string_view s) {
  if (s == "train") return SplitPart::kTrain;
  if (s == "validation" || s == "val") return SplitPart::kValidation;
  if (s == "test") return SplitPart::kTest;
  throw InvalidArgument("unknown split '" + std::string(s) + "'");
}

}  // namespace sagefm
