#pragma once

// Schema, mixed-type table storage, standardization and categorical
// encodings.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rvae/nn.h"

namespace rvae {

enum class FeatureKind { kReal, kCategorical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kReal;
  std::vector<std::string> categories;  // empty for real features

  static FeatureSpec real(std::string name);
  static FeatureSpec categorical(std::string name, std::vector<std::string> labels);

  bool is_real() const { return kind == FeatureKind::kReal; }
  bool is_categorical() const { return kind == FeatureKind::kCategorical; }
  std::size_t cardinality() const { return categories.size(); }
  // Index of `label`, or nullopt.
  std::optional<std::size_t> category_index(std::string_view label) const;

  bool operator==(const FeatureSpec&) const = default;
};

class TableSchema {
 public:
  TableSchema() = default;
  // Validates: at least one feature, unique names, categorical features with
  // >= 2 unique labels.
  explicit TableSchema(std::vector<FeatureSpec> features);

  std::size_t size() const { return features_.size(); }
  const FeatureSpec& operator[](std::size_t d) const { return features_[d]; }
  const std::vector<FeatureSpec>& features() const { return features_; }
  std::optional<std::size_t> index_of(std::string_view name) const;

  std::size_t num_real() const;
  std::size_t num_categorical() const;

  nlohmann::json to_json() const;
  static TableSchema from_json(const nlohmann::json& doc);
  static TableSchema load(const std::string& path);

  // Human-readable description of the first difference, empty when equal.
  std::string describe_mismatch(const TableSchema& other) const;

  bool operator==(const TableSchema&) const = default;

 private:
  std::vector<FeatureSpec> features_;
};

// Per-feature affine statistics. Categorical features carry mean 0, std 1.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> std_dev;

  bool operator==(const Standardization&) const = default;
};

// N x D cells stored row-major as doubles; categorical cells hold their
// category index. A table either holds raw values or standardized values, in
// which case it carries the statistics used.
class MixedTable {
 public:
  MixedTable() = default;
  MixedTable(TableSchema schema, std::size_t rows);

  const TableSchema& schema() const { return schema_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return schema_.size(); }

  double value(std::size_t n, std::size_t d) const { return cells_[n * cols() + d]; }
  double real(std::size_t n, std::size_t d) const { return value(n, d); }
  std::size_t category(std::size_t n, std::size_t d) const {
    return static_cast<std::size_t>(value(n, d));
  }
  void set_real(std::size_t n, std::size_t d, double v) { cells_[n * cols() + d] = v; }
  void set_category(std::size_t n, std::size_t d, std::size_t c);
  // Raw write used when copying between tables of the same schema.
  void set_value(std::size_t n, std::size_t d, double v) { cells_[n * cols() + d] = v; }

  std::span<const double> row(std::size_t n) const {
    return {cells_.data() + n * cols(), cols()};
  }

  const std::optional<Standardization>& standardization() const { return stats_; }
  bool standardized() const { return stats_.has_value(); }
  void set_standardization(std::optional<Standardization> stats) { stats_ = std::move(stats); }

  // Cell text as written to CSV (label for categoricals).
  std::string cell_text(std::size_t n, std::size_t d) const;

  bool operator==(const MixedTable&) const = default;

 private:
  TableSchema schema_;
  std::size_t rows_ = 0;
  std::vector<double> cells_;
  std::optional<Standardization> stats_;
};

// Parses CSV text whose header must list the schema names in order.
MixedTable parse_csv_table(std::string_view text, const TableSchema& schema);
MixedTable load_csv(const std::string& csv_path, const std::string& schema_path);
MixedTable load_csv(const std::string& csv_path, const TableSchema& schema);

// Writes the header and the cells as stored (standardized tables are written
// in standardized units; call destandardize first for original units).
void write_csv(std::ostream& out, const MixedTable& table);
void save_csv(const std::string& path, const MixedTable& table);

// Population (1/N) mean and standard deviation of every real feature.
Standardization compute_statistics(const MixedTable& table);

// Standardizes real features with the table's own statistics. A table that
// already carries statistics is returned unchanged. Throws DataError on a
// constant real column.
MixedTable standardize(const MixedTable& table);
MixedTable standardize_with(const MixedTable& table, const Standardization& stats);
MixedTable destandardize(const MixedTable& table);

Vector one_hot(std::size_t index, std::size_t cardinality);

inline constexpr std::size_t kDefaultEmbeddingDim = 50;

// One matrix of unit-norm rows (C_d x dim) per categorical feature.
class EmbeddingBank {
 public:
  EmbeddingBank() = default;
  EmbeddingBank(const TableSchema& schema, std::size_t dim);  // zero rows
  static EmbeddingBank random_unit(const TableSchema& schema, std::size_t dim, Rng& rng);

  std::size_t dim() const { return dim_; }
  // Slot of feature d in matrices(), or -1 for real features.
  int slot(std::size_t d) const { return slot_of_feature_[d]; }
  Matrix& matrix(std::size_t d) { return matrices_[static_cast<std::size_t>(slot(d))]; }
  const Matrix& matrix(std::size_t d) const {
    return matrices_[static_cast<std::size_t>(slot(d))];
  }
  std::vector<Matrix>& matrices() { return matrices_; }
  const std::vector<Matrix>& matrices() const { return matrices_; }

  void renormalize();
  void set_zero();
  bool all_finite() const;
  void append_tensors(const TableSchema& schema, const std::string& prefix,
                      std::vector<TensorRef>& out);

 private:
  std::size_t dim_ = 0;
  std::vector<int> slot_of_feature_;
  std::vector<Matrix> matrices_;
};

// Width of the encoder input: one column per real feature plus `dim` per
// categorical feature.
std::size_t encoded_width(const TableSchema& schema, std::size_t embedding_dim);

// Row-major N x D flags (1 = set).
using CellMask = std::vector<std::uint8_t>;

// Encodes the listed rows of a standardized table. Cells flagged in
// `mean_imputed` (N x D over the whole table) are replaced by the mean
// behaviour: 0 for reals and a zero vector for categoricals.
Matrix encode_rows(const MixedTable& table, std::span<const std::size_t> rows,
                   const EmbeddingBank& embeddings,
                   const CellMask* mean_imputed = nullptr);
Vector encode_row(const MixedTable& table, std::size_t row,
                  const EmbeddingBank& embeddings);

// Scatters dLoss/dEncoded (rows x encoded width) back into per-category
// embedding gradients.
void accumulate_embedding_grads(const MixedTable& table,
                                std::span<const std::size_t> rows,
                                const Matrix& d_encoded,
                                EmbeddingBank& grads,
                                const CellMask* mean_imputed = nullptr);

}  // namespace rvae
