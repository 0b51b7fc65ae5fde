#include "rvae/table.h"

#include <cmath>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "rvae/csv.h"
#include "rvae/error.h"

namespace rvae {

FeatureSpec FeatureSpec::real(std::string name) {
  return FeatureSpec{std::move(name), FeatureKind::kReal, {}};
}

FeatureSpec FeatureSpec::categorical(std::string name, std::vector<std::string> labels) {
  return FeatureSpec{std::move(name), FeatureKind::kCategorical, std::move(labels)};
}

std::optional<std::size_t> FeatureSpec::category_index(std::string_view label) const {
  for (std::size_t c = 0; c < categories.size(); ++c) {
    if (categories[c] == label) return c;
  }
  return std::nullopt;
}

TableSchema::TableSchema(std::vector<FeatureSpec> features)
    : features_(std::move(features)) {
  if (features_.empty()) throw ConfigError("schema must have at least one feature");
  std::set<std::string> names;
  for (const auto& f : features_) {
    if (f.name.empty()) throw ConfigError("feature names must be non-empty");
    if (!names.insert(f.name).second) {
      throw ConfigError("duplicate feature name '" + f.name + "'");
    }
    if (f.is_categorical()) {
      if (f.categories.size() < 2) {
        throw ConfigError("categorical feature '" + f.name + "' needs at least 2 categories");
      }
      std::set<std::string> labels(f.categories.begin(), f.categories.end());
      if (labels.size() != f.categories.size()) {
        throw ConfigError("categorical feature '" + f.name + "' has duplicate labels");
      }
    } else if (!f.categories.empty()) {
      throw ConfigError("real feature '" + f.name + "' must not list categories");
    }
  }
}

std::optional<std::size_t> TableSchema::index_of(std::string_view name) const {
  for (std::size_t d = 0; d < features_.size(); ++d) {
    if (features_[d].name == name) return d;
  }
  return std::nullopt;
}

std::size_t TableSchema::num_real() const {
  std::size_t n = 0;
  for (const auto& f : features_) n += f.is_real() ? 1 : 0;
  return n;
}

std::size_t TableSchema::num_categorical() const { return size() - num_real(); }

nlohmann::json TableSchema::to_json() const {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& f : features_) {
    nlohmann::json item{{"name", f.name}};
    if (f.is_real()) {
      item["kind"] = "real";
    } else {
      item["kind"] = "categorical";
      item["categories"] = f.categories;
    }
    doc.push_back(std::move(item));
  }
  return doc;
}

TableSchema TableSchema::from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) throw ConfigError("schema must be a JSON array");
  std::vector<FeatureSpec> features;
  for (const auto& item : doc) {
    if (!item.is_object() || !item.contains("name") || !item.contains("kind") ||
        !item["name"].is_string() || !item["kind"].is_string()) {
      throw ConfigError("schema entries need string 'name' and 'kind'");
    }
    const std::string name = item["name"];
    const std::string kind = item["kind"];
    if (kind == "real") {
      features.push_back(FeatureSpec::real(name));
    } else if (kind == "categorical") {
      if (!item.contains("categories") || !item["categories"].is_array()) {
        throw ConfigError("categorical feature '" + name + "' needs a 'categories' array");
      }
      std::vector<std::string> labels;
      for (const auto& label : item["categories"]) {
        if (!label.is_string()) {
          throw ConfigError("categories of '" + name + "' must be strings");
        }
        labels.push_back(label.get<std::string>());
      }
      features.push_back(FeatureSpec::categorical(name, std::move(labels)));
    } else {
      throw ConfigError("unknown feature kind '" + kind + "' for '" + name + "'");
    }
  }
  return TableSchema(std::move(features));
}

TableSchema TableSchema::load(const std::string& path) {
  const std::string text = csv::read_text_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot parse schema " + path + ": " + e.what());
  }
  return from_json(doc);
}

std::string TableSchema::describe_mismatch(const TableSchema& other) const {
  if (size() != other.size()) {
    return "feature count " + std::to_string(size()) + " vs " + std::to_string(other.size());
  }
  for (std::size_t d = 0; d < size(); ++d) {
    const auto& a = features_[d];
    const auto& b = other.features_[d];
    if (a.name != b.name) {
      return "feature " + std::to_string(d) + " is '" + a.name + "' vs '" + b.name + "'";
    }
    if (a.kind != b.kind) return "feature '" + a.name + "' differs in kind";
    if (a.categories != b.categories) return "feature '" + a.name + "' differs in categories";
  }
  return {};
}

MixedTable::MixedTable(TableSchema schema, std::size_t rows)
    : schema_(std::move(schema)), rows_(rows), cells_(rows * schema_.size(), 0.0) {}

void MixedTable::set_category(std::size_t n, std::size_t d, std::size_t c) {
  if (c >= schema_[d].cardinality()) {
    throw DataError("category index " + std::to_string(c) + " out of range for '" +
                    schema_[d].name + "'");
  }
  cells_[n * cols() + d] = static_cast<double>(c);
}

std::string MixedTable::cell_text(std::size_t n, std::size_t d) const {
  const auto& f = schema_[d];
  if (f.is_categorical()) return f.categories[category(n, d)];
  return csv::format_double(real(n, d));
}

MixedTable parse_csv_table(std::string_view text, const TableSchema& schema) {
  const auto records = csv::parse(text);
  if (records.empty()) throw DataError("no header row");
  const auto& header = records.front();
  if (header.size() != schema.size()) {
    throw SchemaMismatch("header has " + std::to_string(header.size()) +
                         " columns, schema has " + std::to_string(schema.size()));
  }
  for (std::size_t d = 0; d < schema.size(); ++d) {
    if (header[d] != schema[d].name) {
      throw SchemaMismatch("header column " + std::to_string(d + 1) + " is '" + header[d] +
                           "', schema expects '" + schema[d].name + "'");
    }
  }
  if (records.size() < 2) throw DataError("no rows");

  MixedTable table(schema, records.size() - 1);
  for (std::size_t n = 0; n + 1 < records.size(); ++n) {
    const auto& rec = records[n + 1];
    const std::string where = "row " + std::to_string(n + 1);
    if (rec.size() != schema.size()) {
      throw DataError(where + ": expected " + std::to_string(schema.size()) +
                      " cells, found " + std::to_string(rec.size()));
    }
    for (std::size_t d = 0; d < schema.size(); ++d) {
      const auto& f = schema[d];
      const std::string& cell = rec[d];
      if (cell.empty()) {
        throw DataError(where + ", column '" + f.name + "': missing value");
      }
      if (f.is_real()) {
        double v = 0.0;
        if (!csv::parse_double(cell, v)) {
          throw DataError(where + ", column '" + f.name + "': non-numeric value '" + cell + "'");
        }
        table.set_real(n, d, v);
      } else {
        const auto idx = f.category_index(cell);
        if (!idx) {
          throw DataError(where + ", column '" + f.name + "': unknown category '" + cell + "'");
        }
        table.set_category(n, d, *idx);
      }
    }
  }
  return table;
}

MixedTable load_csv(const std::string& csv_path, const TableSchema& schema) {
  return parse_csv_table(csv::read_text_file(csv_path), schema);
}

MixedTable load_csv(const std::string& csv_path, const std::string& schema_path) {
  return load_csv(csv_path, TableSchema::load(schema_path));
}

void write_csv(std::ostream& out, const MixedTable& table) {
  csv::Record header;
  for (const auto& f : table.schema().features()) header.push_back(f.name);
  csv::write_record(out, header);
  csv::Record rec(table.cols());
  for (std::size_t n = 0; n < table.rows(); ++n) {
    for (std::size_t d = 0; d < table.cols(); ++d) rec[d] = table.cell_text(n, d);
    csv::write_record(out, rec);
  }
}

void save_csv(const std::string& path, const MixedTable& table) {
  std::ostringstream out;
  write_csv(out, table);
  csv::write_text_file(path, out.str());
}

Standardization compute_statistics(const MixedTable& table) {
  const std::size_t D = table.cols();
  Standardization stats{std::vector<double>(D, 0.0), std::vector<double>(D, 1.0)};
  if (table.rows() == 0) throw DataError("no rows");
  const double N = static_cast<double>(table.rows());
  for (std::size_t d = 0; d < D; ++d) {
    if (!table.schema()[d].is_real()) continue;
    double sum = 0.0;
    for (std::size_t n = 0; n < table.rows(); ++n) sum += table.real(n, d);
    const double mean = sum / N;
    double ss = 0.0;
    for (std::size_t n = 0; n < table.rows(); ++n) {
      const double r = table.real(n, d) - mean;
      ss += r * r;
    }
    stats.mean[d] = mean;
    stats.std_dev[d] = std::sqrt(ss / N);
  }
  return stats;
}

MixedTable standardize_with(const MixedTable& table, const Standardization& stats) {
  if (table.standardized()) {
    if (*table.standardization() == stats) return table;
    throw DataError("table is already standardized with different statistics");
  }
  const std::size_t D = table.cols();
  if (stats.mean.size() != D || stats.std_dev.size() != D) {
    throw SchemaMismatch("standardization statistics do not match the table width");
  }
  MixedTable out = table;
  for (std::size_t d = 0; d < D; ++d) {
    if (!table.schema()[d].is_real()) continue;
    if (!(stats.std_dev[d] > 0.0)) {
      throw DataError("real feature '" + table.schema()[d].name +
                      "' is constant and cannot be standardized");
    }
    for (std::size_t n = 0; n < table.rows(); ++n) {
      out.set_real(n, d, (table.real(n, d) - stats.mean[d]) / stats.std_dev[d]);
    }
  }
  out.set_standardization(stats);
  return out;
}

MixedTable standardize(const MixedTable& table) {
  if (table.standardized()) return table;
  return standardize_with(table, compute_statistics(table));
}

MixedTable destandardize(const MixedTable& table) {
  if (!table.standardized()) return table;
  const auto& stats = *table.standardization();
  MixedTable out = table;
  for (std::size_t d = 0; d < table.cols(); ++d) {
    if (!table.schema()[d].is_real()) continue;
    for (std::size_t n = 0; n < table.rows(); ++n) {
      out.set_real(n, d, table.real(n, d) * stats.std_dev[d] + stats.mean[d]);
    }
  }
  out.set_standardization(std::nullopt);
  return out;
}

Vector one_hot(std::size_t index, std::size_t cardinality) {
  if (index >= cardinality) {
    throw DataError("one_hot: index " + std::to_string(index) + " out of range for " +
                    std::to_string(cardinality) + " categories");
  }
  Vector v = Vector::Zero(static_cast<Eigen::Index>(cardinality));
  v[static_cast<Eigen::Index>(index)] = 1.0;
  return v;
}

EmbeddingBank::EmbeddingBank(const TableSchema& schema, std::size_t dim) : dim_(dim) {
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
  for (std::size_t d = 0; d < schema.size(); ++d) {
    if (schema[d].is_categorical()) {
      slot_of_feature_.push_back(static_cast<int>(matrices_.size()));
      matrices_.push_back(Matrix::Zero(static_cast<Eigen::Index>(schema[d].cardinality()),
                                       static_cast<Eigen::Index>(dim)));
    } else {
      slot_of_feature_.push_back(-1);
    }
  }
}

EmbeddingBank EmbeddingBank::random_unit(const TableSchema& schema, std::size_t dim,
                                         Rng& rng) {
  EmbeddingBank bank(schema, dim);
  for (auto& m : bank.matrices_) m = rng.normal_matrix(m.rows(), m.cols());
  bank.renormalize();
  return bank;
}

void EmbeddingBank::renormalize() {
  for (auto& m : matrices_) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const double norm = m.row(r).norm();
      if (norm > 0.0) m.row(r) /= norm;
    }
  }
}

void EmbeddingBank::set_zero() {
  for (auto& m : matrices_) m.setZero();
}

bool EmbeddingBank::all_finite() const {
  for (const auto& m : matrices_) {
    if (!m.allFinite()) return false;
  }
  return true;
}

void EmbeddingBank::append_tensors(const TableSchema& schema, const std::string& prefix,
                                   std::vector<TensorRef>& out) {
  for (std::size_t d = 0; d < schema.size(); ++d) {
    if (slot(d) >= 0) out.push_back({prefix + "." + schema[d].name, &matrix(d)});
  }
}

std::size_t encoded_width(const TableSchema& schema, std::size_t embedding_dim) {
  return schema.num_real() + embedding_dim * schema.num_categorical();
}

Matrix encode_rows(const MixedTable& table, std::span<const std::size_t> rows,
                   const EmbeddingBank& embeddings, const CellMask* mean_imputed) {
  const auto& schema = table.schema();
  const std::size_t dim = embeddings.dim();
  Matrix out(static_cast<Eigen::Index>(rows.size()),
             static_cast<Eigen::Index>(encoded_width(schema, dim)));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t n = rows[i];
    const auto r = static_cast<Eigen::Index>(i);
    Eigen::Index col = 0;
    for (std::size_t d = 0; d < schema.size(); ++d) {
      const bool imputed = mean_imputed && (*mean_imputed)[n * table.cols() + d] != 0;
      if (schema[d].is_real()) {
        out(r, col) = imputed ? 0.0 : table.real(n, d);
        col += 1;
      } else {
        const auto width = static_cast<Eigen::Index>(dim);
        if (imputed) {
          out.block(r, col, 1, width).setZero();
        } else {
          out.block(r, col, 1, width) =
              embeddings.matrix(d).row(static_cast<Eigen::Index>(table.category(n, d)));
        }
        col += width;
      }
    }
  }
  return out;
}

Vector encode_row(const MixedTable& table, std::size_t row, const EmbeddingBank& embeddings) {
  const std::size_t rows[] = {row};
  return encode_rows(table, rows, embeddings).row(0).transpose();
}

void accumulate_embedding_grads(const MixedTable& table, std::span<const std::size_t> rows,
                                const Matrix& d_encoded, EmbeddingBank& grads,
                                const CellMask* mean_imputed) {
  const auto& schema = table.schema();
  const auto dim = static_cast<Eigen::Index>(grads.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t n = rows[i];
    Eigen::Index col = 0;
    for (std::size_t d = 0; d < schema.size(); ++d) {
      if (schema[d].is_real()) {
        col += 1;
        continue;
      }
      const bool imputed = mean_imputed && (*mean_imputed)[n * table.cols() + d] != 0;
      if (!imputed) {
        grads.matrix(d).row(static_cast<Eigen::Index>(table.category(n, d))) +=
            d_encoded.block(static_cast<Eigen::Index>(i), col, 1, dim);
      }
      col += dim;
    }
  }
}

}  // namespace rvae
