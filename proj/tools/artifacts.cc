#include "artifacts.h"

#include <cmath>
#include <limits>
#include <ostream>

#include "rvae/csv.h"
#include "rvae/error.h"

namespace rvae::cli {

namespace {

std::size_t parse_row(const std::string& text, std::size_t rows, const std::string& where) {
  double v = 0.0;
  if (!csv::parse_double(text, v) || v < 0 || v != std::floor(v) || v >= static_cast<double>(rows)) {
    throw IoError(where + ": bad row id '" + text + "'");
  }
  return static_cast<std::size_t>(v);
}

double parse_value(const std::string& text, const std::string& where) {
  double v = 0.0;
  if (!csv::parse_double(text, v)) throw IoError(where + ": '" + text + "' is not a finite number");
  return v;
}

}  // namespace

void write_scores(std::ostream& out, const TableSchema& schema, const ScoreReport& report) {
  const std::string rule = to_string(report.rule);
  csv::write_record(out, {"row_id", "feature", "rule", "score"});
  for (Eigen::Index n = 0; n < report.cell.rows(); ++n) {
    const std::string id = std::to_string(n);
    for (std::size_t d = 0; d < schema.size(); ++d) {
      csv::write_record(out, {id, schema[d].name, rule,
                              csv::format_double(report.cell(n, static_cast<Eigen::Index>(d)))});
    }
    csv::write_record(out, {id, kRowScoreName, rule, csv::format_double(report.row(n))});
  }
}

ScoreReport read_scores(const std::string& path, const TableSchema& schema, std::size_t rows) {
  const auto records = csv::read_file(path);
  if (records.empty() || records[0] != csv::Record{"row_id", "feature", "rule", "score"}) {
    throw IoError("'" + path + "' is not a score file (expected header row_id,feature,rule,score)");
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  ScoreReport report;
  report.cell = Matrix::Constant(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(schema.size()), nan);
  report.row = Vector::Constant(static_cast<Eigen::Index>(rows), nan);
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    const std::string where = path + " line " + std::to_string(i + 1);
    if (rec.size() != 4) throw IoError(where + ": expected 4 fields");
    const auto n = static_cast<Eigen::Index>(parse_row(rec[0], rows, where));
    report.rule = parse_score_rule(rec[2]);
    const double v = parse_value(rec[3], where);
    if (rec[1] == kRowScoreName) {
      report.row(n) = v;
    } else if (const auto d = schema.index_of(rec[1])) {
      report.cell(n, static_cast<Eigen::Index>(*d)) = v;
    } else {
      throw SchemaMismatch(where + ": unknown feature '" + rec[1] + "'");
    }
  }
  if (report.cell.hasNaN()) throw IoError("'" + path + "' does not cover every cell");
  if (report.row.hasNaN()) report.row = report.cell.rowwise().sum();
  return report;
}

void write_simplex(std::ostream& out, const TableSchema& schema, const std::vector<Matrix>& simplex) {
  csv::write_record(out, {"row_id", "feature", "category", "probability"});
  if (simplex.empty()) return;
  Eigen::Index rows = 0;
  for (const auto& m : simplex) rows = std::max(rows, m.rows());
  for (Eigen::Index n = 0; n < rows; ++n) {
    for (std::size_t d = 0; d < schema.size(); ++d) {
      if (!schema[d].is_categorical() || simplex[d].size() == 0) continue;
      for (std::size_t c = 0; c < schema[d].cardinality(); ++c) {
        csv::write_record(out, {std::to_string(n), schema[d].name, schema[d].categories[c],
                                csv::format_double(simplex[d](n, static_cast<Eigen::Index>(c)))});
      }
    }
  }
}

std::vector<Matrix> read_simplex(const std::string& path, const TableSchema& schema,
                                 std::size_t rows) {
  const auto records = csv::read_file(path);
  if (records.empty() || records[0] != csv::Record{"row_id", "feature", "category", "probability"}) {
    throw IoError("'" + path +
                  "' is not a simplex file (expected header row_id,feature,category,probability)");
  }
  std::vector<Matrix> simplex(schema.size());
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    const std::string where = path + " line " + std::to_string(i + 1);
    if (rec.size() != 4) throw IoError(where + ": expected 4 fields");
    const auto n = static_cast<Eigen::Index>(parse_row(rec[0], rows, where));
    const auto d = schema.index_of(rec[1]);
    if (!d || !schema[*d].is_categorical()) {
      throw SchemaMismatch(where + ": '" + rec[1] + "' is not a categorical feature");
    }
    const auto c = schema[*d].category_index(rec[2]);
    if (!c) throw SchemaMismatch(where + ": unknown category '" + rec[2] + "'");
    Matrix& m = simplex[*d];
    if (m.size() == 0) {
      m = Matrix::Constant(static_cast<Eigen::Index>(rows),
                           static_cast<Eigen::Index>(schema[*d].cardinality()),
                           std::numeric_limits<double>::quiet_NaN());
    }
    m(n, static_cast<Eigen::Index>(*c)) = parse_value(rec[3], where);
  }
  for (std::size_t d = 0; d < schema.size(); ++d) {
    if (simplex[d].size() > 0 && simplex[d].hasNaN()) {
      throw IoError("'" + path + "' does not cover every category of '" + schema[d].name + "'");
    }
  }
  return simplex;
}

}  // namespace rvae::cli
