#pragma once

// Synthetic embedding banks with controllable per-class difficulty, and the
// EMB1 / labels / split file formats.
//
// EMB1 (little-endian): "EMB1" | u32 rows | u32 dim | rows*dim float32, row-major.
// Labels: text, header "index,label", then one "row_index,class_id" line per row.
// Split: text, header "index,partition", then one "row_index,train|test" line per row.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metaepi/diffcore.hpp"
#include "metaepi/model.hpp"

namespace metaepi {

struct EmbeddingBank {
  Matrix features;  // rows x D
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t rows() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }
  std::vector<std::size_t> per_class_counts() const;
  // Row indices of each class, ascending.
  std::vector<std::vector<std::size_t>> rows_by_class() const;
  // Checks label range, label count and finiteness.
  void validate() const;
  // Sub-bank of the given rows, in the given order.
  EmbeddingBank subset(std::span<const std::size_t> rows) const;
  friend bool operator==(const EmbeddingBank&, const EmbeddingBank&) = default;
};

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t dim = 32;
  std::vector<int> modes;       // per class, >= 1
  std::vector<double> spreads;  // per class, > 0
  double separation = 0.5;      // distance of each mode center from its class anchor
  std::size_t per_class = 40;
  std::uint64_t seed = 1;

  // 10 classes in 32 dims: classes 0-2 hard (3 modes, spread 0.6), 3-9 easy
  // (1 mode, spread 0.1), 40 rows per class.
  static SyntheticSpec desk(std::uint64_t seed = 1);
  // Same layout with every class easy.
  static SyntheticSpec easy(std::uint64_t seed = 1);
  // Same difficulty for every class.
  static SyntheticSpec uniform(std::size_t classes, std::size_t dim, int modes, double spread,
                               double separation, std::size_t per_class, std::uint64_t seed);

  void validate() const;
};

struct SyntheticData {
  EmbeddingBank bank;
  ClassPrototypes prototypes;
};

// Class anchors are Gram-Schmidt orthonormalized Gaussian draws (needs dim >=
// classes). Each class gets `modes[c]` centers at distance `separation` from
// its anchor; rows pick a center uniformly, add isotropic Gaussian noise with
// per-coordinate deviation `spreads[c]`, and are unit-normalized. Prototypes
// are the anchors.
SyntheticData generate(const SyntheticSpec& spec);

// Accuracy of nearest-prototype (cosine) classification over all classes, per class.
std::vector<double> zero_shot_accuracy(const EmbeddingBank& bank, const ClassPrototypes& prototypes);

std::vector<std::uint8_t> encode_embeddings(const Matrix& values);
Matrix decode_embeddings(std::span<const std::uint8_t> bytes);
void write_embeddings(const std::filesystem::path& path, const Matrix& values);
Matrix read_embeddings(const std::filesystem::path& path);

std::string format_labels(std::span<const int> labels);
std::vector<int> parse_labels(const std::string& text);
void write_labels(const std::filesystem::path& path, std::span<const int> labels);
std::vector<int> read_labels(const std::filesystem::path& path);

// Features in EMB1 plus labels file. read_bank infers class_count as max label + 1
// unless `class_count` is given.
void write_bank(const std::filesystem::path& features, const std::filesystem::path& labels,
                const EmbeddingBank& bank);
EmbeddingBank read_bank(const std::filesystem::path& features, const std::filesystem::path& labels,
                        std::size_t class_count = 0);

void write_prototypes(const std::filesystem::path& path, const ClassPrototypes& prototypes);
ClassPrototypes read_prototypes(const std::filesystem::path& path);

struct BankSplit {
  EmbeddingBank train;
  EmbeddingBank test;
  std::vector<std::size_t> train_rows;  // ascending indices into the source bank
  std::vector<std::size_t> test_rows;
};

// Stratified per-class split: round(test_fraction * n_c) rows of each class go
// to the test side (at least one row on each side). Deterministic in seed.
BankSplit train_test_split(const EmbeddingBank& bank, double test_fraction, std::uint64_t seed);
// Rebuilds a split from explicit row lists.
BankSplit split_from_rows(const EmbeddingBank& bank, std::vector<std::size_t> train_rows,
                          std::vector<std::size_t> test_rows);

void write_split(const std::filesystem::path& path, const BankSplit& split, std::size_t rows);
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> read_split(
    const std::filesystem::path& path);

}  // namespace metaepi
