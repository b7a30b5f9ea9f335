#include "metaepi/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>

#include "metaepi/errors.hpp"

namespace metaepi {

namespace {

constexpr std::uint8_t kMagic[4] = {0x45, 0x4D, 0x42, 0x31};  // "EMB1"
constexpr std::size_t kHeaderBytes = 12;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string slurp_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void dump_text(const std::filesystem::path& path, const std::string& text) {
  dump(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

// Parses "<uint>,<field>" csv lines after a fixed header. Calls on_row(index,
// field, byte offset of the line).
template <typename OnRow>
void parse_two_column(const std::string& text, std::string_view header, OnRow on_row) {
  std::size_t pos = 0;
  bool seen_header = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) {
      if (!seen_header) {
        if (line != header) throw ParseError("expected header '" + std::string(header) + "'", pos);
        seen_header = true;
      } else {
        const auto comma = line.find(',');
        if (comma == std::string_view::npos || comma == 0) {
          throw ParseError("expected '<index>,<value>'", pos);
        }
        std::size_t index = 0;
        for (char ch : line.substr(0, comma)) {
          if (ch < '0' || ch > '9') throw ParseError("row index is not an unsigned integer", pos);
          index = index * 10 + static_cast<std::size_t>(ch - '0');
        }
        on_row(index, line.substr(comma + 1), pos);
      }
    }
    pos = end + 1;
  }
  if (!seen_header) throw ParseError("missing header '" + std::string(header) + "'", 0);
}

}  // namespace

std::vector<std::size_t> EmbeddingBank::per_class_counts() const {
  std::vector<std::size_t> counts(class_count, 0);
  for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
  return counts;
}

std::vector<std::vector<std::size_t>> EmbeddingBank::rows_by_class() const {
  std::vector<std::vector<std::size_t>> out(class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) out.at(static_cast<std::size_t>(labels[i])).push_back(i);
  return out;
}

void EmbeddingBank::validate() const {
  if (labels.size() != features.rows()) {
    throw DimensionError("bank has " + std::to_string(features.rows()) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
      throw DimensionError("label " + std::to_string(l) + " outside class range " +
                           std::to_string(class_count));
    }
  }
  require_finite(features.values(), "embedding bank");
}

EmbeddingBank EmbeddingBank::subset(std::span<const std::size_t> rows) const {
  EmbeddingBank out;
  out.class_count = class_count;
  out.features = Matrix(rows.size(), dim());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = features.row(rows[i]);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.labels.push_back(labels.at(rows[i]));
  }
  return out;
}

SyntheticSpec SyntheticSpec::desk(std::uint64_t seed) {
  SyntheticSpec s;
  s.classes = 10;
  s.dim = 32;
  s.modes.assign(10, 1);
  s.spreads.assign(10, 0.1);
  for (std::size_t c = 0; c < 3; ++c) {
    s.modes[c] = 3;
    s.spreads[c] = 0.6;
  }
  s.per_class = 40;
  s.seed = seed;
  return s;
}

SyntheticSpec SyntheticSpec::easy(std::uint64_t seed) {
  SyntheticSpec s = desk(seed);
  s.modes.assign(s.classes, 1);
  s.spreads.assign(s.classes, 0.1);
  return s;
}

SyntheticSpec SyntheticSpec::uniform(std::size_t classes, std::size_t dim, int modes, double spread,
                                     double separation, std::size_t per_class, std::uint64_t seed) {
  SyntheticSpec s;
  s.classes = classes;
  s.dim = dim;
  s.modes.assign(classes, modes);
  s.spreads.assign(classes, spread);
  s.separation = separation;
  s.per_class = per_class;
  s.seed = seed;
  return s;
}

void SyntheticSpec::validate() const {
  if (classes == 0 || dim == 0 || per_class == 0) {
    throw ConfigError("synthetic spec counts must be positive");
  }
  if (modes.size() != classes || spreads.size() != classes) {
    throw ConfigError("synthetic spec needs one mode count and one spread per class");
  }
  for (int m : modes) {
    if (m < 1) throw ConfigError("every class needs at least one mode");
  }
  for (double s : spreads) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("class spreads must be finite and positive");
  }
  if (!(separation >= 0.0) || !std::isfinite(separation)) {
    throw ConfigError("separation must be finite and non-negative");
  }
  if (dim < classes) throw ConfigError("anchor orthogonalization impossible: dim < classes");
}

SyntheticData generate(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t d = spec.dim;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto gaussian_unit = [&] {
    Vector v(d);
    for (double& x : v) x = normal(rng);
    const double n = norm2(v);
    for (double& x : v) x /= n;
    return v;
  };

  // Modified Gram-Schmidt; a redraw handles the (measure-zero) dependent case.
  Matrix anchors(spec.classes, d);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (;;) {
      Vector v = gaussian_unit();
      for (std::size_t k = 0; k < c; ++k) axpy(-dot(v, anchors.row(k)), anchors.row(k), v);
      const double n = norm2(v);
      if (n < 1e-6) continue;
      for (std::size_t j = 0; j < d; ++j) anchors(c, j) = v[j] / n;
      break;
    }
  }

  SyntheticData out;
  out.bank.class_count = spec.classes;
  out.bank.features = Matrix(spec.classes * spec.per_class, d);
  out.bank.labels.reserve(spec.classes * spec.per_class);
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    std::vector<Vector> centers;
    for (int m = 0; m < spec.modes[c]; ++m) {
      Vector center(anchors.row(c).begin(), anchors.row(c).end());
      axpy(spec.separation, gaussian_unit(), center);
      centers.push_back(std::move(center));
    }
    std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
    for (std::size_t i = 0; i < spec.per_class; ++i, ++row) {
      const Vector& center = centers[pick(rng)];
      auto x = out.bank.features.row(row);
      for (std::size_t j = 0; j < d; ++j) x[j] = center[j] + spec.spreads[c] * normal(rng);
      const double n = norm2(x);
      if (!(n > 0.0)) throw NumericError("generated a zero-norm embedding");
      for (double& v : x) v /= n;
      out.bank.labels.push_back(static_cast<int>(c));
    }
  }
  out.prototypes = ClassPrototypes(anchors);
  return out;
}

std::vector<double> zero_shot_accuracy(const EmbeddingBank& bank, const ClassPrototypes& prototypes) {
  const Matrix scores = ops::cosine_scores(bank.features, prototypes.matrix(), {}, 1.0);
  const auto acc = accuracy_by_class(scores, bank.labels);
  std::vector<double> out(bank.class_count, 0.0);
  for (const auto& [c, a] : acc) out.at(static_cast<std::size_t>(c)) = a;
  return out;
}

std::vector<std::uint8_t> encode_embeddings(const Matrix& values) {
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  if (values.rows() > kMax || values.cols() > kMax) throw DimensionError("EMB1: matrix too large");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(kHeaderBytes + 4 * values.size());
  put_u32(out, static_cast<std::uint32_t>(values.rows()));
  put_u32(out, static_cast<std::uint32_t>(values.cols()));
  for (double v : values.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Matrix decode_embeddings(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw ParseError("bad magic, expected EMB1", 0);
  }
  if (bytes.size() < kHeaderBytes) throw ParseError("truncated header", bytes.size());
  const std::uint64_t rows = get_u32(bytes, 4);
  const std::uint64_t cols = get_u32(bytes, 8);
  const std::uint64_t count = rows * cols;  // < 2^64 for u32 factors
  if (count > (std::numeric_limits<std::size_t>::max() - kHeaderBytes) / 4) {
    throw ParseError("row count times dim overflows", 4);
  }
  const std::uint64_t expected = count * 4;
  const std::uint64_t actual = bytes.size() - kHeaderBytes;
  if (actual != expected) {
    throw ParseError("payload " + std::string(actual < expected ? "truncated" : "has trailing bytes") +
                         ": expected " + std::to_string(expected) + " bytes, found " +
                         std::to_string(actual),
                     kHeaderBytes + std::min(actual, expected));
  }
  Matrix m(rows, cols);
  auto v = m.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float f = std::bit_cast<float>(get_u32(bytes, kHeaderBytes + 4 * i));
    if (!std::isfinite(f)) throw ParseError("non-finite value", kHeaderBytes + 4 * i);
    v[i] = static_cast<double>(f);
  }
  return m;
}

void write_embeddings(const std::filesystem::path& path, const Matrix& values) {
  dump(path, encode_embeddings(values));
}

Matrix read_embeddings(const std::filesystem::path& path) { return decode_embeddings(slurp(path)); }

std::string format_labels(std::span<const int> labels) {
  std::string out = "index,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out += std::to_string(i) + "," + std::to_string(labels[i]) + "\n";
  }
  return out;
}

std::vector<int> parse_labels(const std::string& text) {
  std::vector<int> labels;
  parse_two_column(text, "index,label", [&](std::size_t index, std::string_view field, std::size_t at) {
    if (index != labels.size()) throw ParseError("label rows must be numbered 0, 1, 2, ...", at);
    int value = 0;
    if (field.empty()) throw ParseError("empty class id", at);
    for (char ch : field) {
      if (ch < '0' || ch > '9') throw ParseError("class id is not a non-negative integer", at);
      value = value * 10 + (ch - '0');
    }
    labels.push_back(value);
  });
  return labels;
}

void write_labels(const std::filesystem::path& path, std::span<const int> labels) {
  dump_text(path, format_labels(labels));
}

std::vector<int> read_labels(const std::filesystem::path& path) { return parse_labels(slurp_text(path)); }

void write_bank(const std::filesystem::path& features, const std::filesystem::path& labels,
                const EmbeddingBank& bank) {
  bank.validate();
  write_embeddings(features, bank.features);
  write_labels(labels, bank.labels);
}

EmbeddingBank read_bank(const std::filesystem::path& features, const std::filesystem::path& labels,
                        std::size_t class_count) {
  EmbeddingBank bank;
  bank.features = read_embeddings(features);
  bank.labels = read_labels(labels);
  if (class_count == 0 && !bank.labels.empty()) {
    class_count = static_cast<std::size_t>(*std::max_element(bank.labels.begin(), bank.labels.end())) + 1;
  }
  bank.class_count = class_count;
  bank.validate();
  return bank;
}

void write_prototypes(const std::filesystem::path& path, const ClassPrototypes& prototypes) {
  write_embeddings(path, prototypes.matrix());
}

ClassPrototypes read_prototypes(const std::filesystem::path& path) {
  return ClassPrototypes(read_embeddings(path));
}

BankSplit train_test_split(const EmbeddingBank& bank, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test fraction must lie strictly between 0 and 1");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  const auto by_class = bank.rows_by_class();
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto rows = by_class[c];
    const std::size_t n = rows.size();
    if (n < 2) {
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(n) +
                        " rows; cannot appear on both sides of the split");
    }
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
    std::shuffle(rows.begin(), rows.end(), rng);
    test.insert(test.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
  }
  return split_from_rows(bank, std::move(train), std::move(test));
}

BankSplit split_from_rows(const EmbeddingBank& bank, std::vector<std::size_t> train_rows,
                          std::vector<std::size_t> test_rows) {
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());
  std::vector<std::size_t> both;
  std::set_intersection(train_rows.begin(), train_rows.end(), test_rows.begin(), test_rows.end(),
                        std::back_inserter(both));
  if (!both.empty()) throw ConfigError("split sides overlap at row " + std::to_string(both.front()));
  for (auto rows : {&train_rows, &test_rows}) {
    if (!rows->empty() && rows->back() >= bank.rows()) throw DimensionError("split row outside bank");
  }
  BankSplit s;
  s.train = bank.subset(train_rows);
  s.test = bank.subset(test_rows);
  s.train_rows = std::move(train_rows);
  s.test_rows = std::move(test_rows);
  return s;
}

void write_split(const std::filesystem::path& path, const BankSplit& split, std::size_t rows) {
  std::vector<const char*> side(rows, nullptr);
  for (auto r : split.train_rows) side.at(r) = "train";
  for (auto r : split.test_rows) side.at(r) = "test";
  std::string text = "index,partition\n";
  for (std::size_t i = 0; i < rows; ++i) {
    if (side[i] == nullptr) continue;
    text += std::to_string(i) + "," + side[i] + "\n";
  }
  dump_text(path, text);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> read_split(
    const std::filesystem::path& path) {
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
  parse_two_column(slurp_text(path), "index,partition",
                   [&](std::size_t index, std::string_view field, std::size_t at) {
                     if (field == "train") {
                       out.first.push_back(index);
                     } else if (field == "test") {
                       out.second.push_back(index);
                     } else {
                       throw ParseError("partition must be 'train' or 'test'", at);
                     }
                   });
  return out;
}

}  // namespace metaepi
