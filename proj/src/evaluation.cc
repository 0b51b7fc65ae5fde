#include "rvae/evaluation.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "rvae/csv.h"
#include "rvae/error.h"

namespace rvae {

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw DataError("average precision needs finite scores");
    if (labels[i]) ++positives;
  }
  if (positives == 0) throw DataError("average precision is undefined without positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  double recall_prev = 0.0;
  std::size_t tp = 0;
  std::size_t seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == threshold; ++i, ++seen) {
      if (labels[order[i]]) ++tp;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    ap += (recall - recall_prev) * static_cast<double>(tp) / static_cast<double>(seen);
    recall_prev = recall;
  }
  return ap;
}

double smse(std::span<const double> truth, std::span<const double> repaired) {
  if (truth.size() != repaired.size()) throw DataError("truth and repair differ in length");
  if (truth.empty()) throw DataError("SMSE needs at least one cell");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    num += (truth[i] - repaired[i]) * (truth[i] - repaired[i]);
    den += truth[i] * truth[i];
  }
  if (!(den > 0.0)) throw DataError("SMSE is undefined: every true value equals the mean");
  return num / den;
}

double brier(std::span<const std::size_t> truth, const Matrix& predicted) {
  if (static_cast<Eigen::Index>(truth.size()) != predicted.rows()) {
    throw DataError("truth and simplex rows differ in count");
  }
  if (truth.empty()) throw DataError("Brier score needs at least one cell");
  double total = 0.0;
  for (Eigen::Index n = 0; n < predicted.rows(); ++n) {
    const double sum = predicted.row(n).sum();
    if (std::abs(sum - 1.0) > 1e-6 || (predicted.row(n).array() < 0.0).any()) {
      throw DataError("row " + std::to_string(n) + " is not a probability simplex");
    }
    const auto t = static_cast<Eigen::Index>(truth[static_cast<std::size_t>(n)]);
    if (t >= predicted.cols()) throw DataError("true category outside the simplex");
    for (Eigen::Index c = 0; c < predicted.cols(); ++c) {
      const double diff = (c == t ? 1.0 : 0.0) - predicted(n, c);
      total += diff * diff;
    }
  }
  return total / (2.0 * static_cast<double>(truth.size()));
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json features_json = nlohmann::json::array();
  for (const auto& f : features) {
    features_json.push_back({{"name", f.name},
                             {"type", f.kind == FeatureKind::kReal ? "real" : "categorical"},
                             {"corrupted_cells", f.corrupted},
                             {"cell_avpr", optional_json(f.cell_avpr)},
                             {"smse", optional_json(f.smse)},
                             {"brier", optional_json(f.brier)}});
  }
  return {{"scenario", scenario},
          {"row_avpr", optional_json(row_avpr)},
          {"cell_avpr",
           {{"macro", optional_json(cell_avpr_macro)},
            {"real", optional_json(cell_avpr_real)},
            {"categorical", optional_json(cell_avpr_categorical)},
            {"features_excluded", features_excluded}}},
          {"repair",
           {{"smse_real", optional_json(smse_real)},
            {"brier_categorical", optional_json(brier_categorical)}}},
          {"features", features_json}};
}

void EvalReport::write_csv(std::ostream& out) const {
  csv::write_record(out, {"scope", "feature", "metric", "value"});
  auto emit = [&](const std::string& scope, const std::string& feature, const std::string& metric,
                  const std::optional<double>& v) {
    if (v) csv::write_record(out, {scope, feature, metric, csv::format_double(*v)});
  };
  emit("table", "", "row_avpr", row_avpr);
  emit("table", "", "cell_avpr_macro", cell_avpr_macro);
  emit("table", "", "cell_avpr_real", cell_avpr_real);
  emit("table", "", "cell_avpr_categorical", cell_avpr_categorical);
  emit("table", "", "smse_real", smse_real);
  emit("table", "", "brier_categorical", brier_categorical);
  for (const auto& f : features) {
    emit("feature", f.name, "cell_avpr", f.cell_avpr);
    emit("feature", f.name, "smse", f.smse);
    emit("feature", f.name, "brier", f.brier);
  }
}

EvalReport evaluate(const MixedTable& dirty, const CorruptionRecord& record,
                    const EvalInputs& inputs) {
  const auto& schema = dirty.schema();
  const std::size_t N = dirty.rows();
  const std::size_t D = dirty.cols();
  if (record.rows != N || record.cols != D) {
    throw SchemaMismatch("corruption record shape " + std::to_string(record.rows) + "x" +
                         std::to_string(record.cols) + " does not match the table " +
                         std::to_string(N) + "x" + std::to_string(D));
  }
  if (record.count() == 0) throw DataError("the corruption record has no corrupted cells");

  EvalReport report;
  report.scenario = {{"rows", N},
                     {"columns", D},
                     {"row_fraction", record.row_fraction},
                     {"feature_fraction", record.feature_fraction},
                     {"seed", record.seed},
                     {"noise", record.noise},
                     {"corrupted_cells", record.count()}};

  if (inputs.cell_scores) {
    const Matrix& cells = *inputs.cell_scores;
    if (cells.rows() != static_cast<Eigen::Index>(N) || cells.cols() != static_cast<Eigen::Index>(D)) {
      throw SchemaMismatch("cell scores do not match the table shape");
    }
  }
  if (inputs.row_scores && inputs.row_scores->size() != static_cast<Eigen::Index>(N)) {
    throw SchemaMismatch("row scores do not match the table length");
  }

  // Row detection.
  std::optional<Vector> row_scores;
  if (inputs.row_scores) {
    row_scores = *inputs.row_scores;
  } else if (inputs.cell_scores) {
    row_scores = inputs.cell_scores->rowwise().sum();
  }
  if (row_scores) {
    std::vector<int> labels(N, 0);
    for (const auto& cell : record.cells) labels[cell.row] = 1;
    report.row_avpr = average_precision({row_scores->data(), N}, labels);
  }

  // Repair inputs in raw units, compared after dividing by the feature std.
  const Standardization stats =
      dirty.standardized() ? *dirty.standardization() : compute_statistics(dirty);
  std::optional<MixedTable> repaired;
  if (inputs.repaired) {
    if (const auto diff = schema.describe_mismatch(inputs.repaired->schema()); !diff.empty()) {
      throw SchemaMismatch("repaired table: " + diff);
    }
    if (inputs.repaired->rows() != N) throw SchemaMismatch("repaired table has the wrong length");
    repaired = inputs.repaired->standardized() ? destandardize(*inputs.repaired) : *inputs.repaired;
  }
  if (inputs.simplex && inputs.simplex->size() != D) {
    throw SchemaMismatch("simplex list does not match the schema");
  }

  std::vector<double> avpr_all, avpr_real, avpr_cat, smse_all, brier_all;
  for (std::size_t d = 0; d < D; ++d) {
    FeatureMetrics f;
    f.name = schema[d].name;
    f.kind = schema[d].kind;
    std::vector<int> labels(N, 0);
    std::vector<double> truth, fixed;
    std::vector<std::size_t> truth_cat, masked_rows;
    for (const auto& cell : record.cells) {
      if (cell.col != d) continue;
      labels[cell.row] = 1;
      masked_rows.push_back(cell.row);
      if (schema[d].is_real()) {
        truth.push_back((cell.original - stats.mean[d]) / stats.std_dev[d]);
        if (repaired) fixed.push_back((repaired->real(cell.row, d) - stats.mean[d]) / stats.std_dev[d]);
      } else {
        truth_cat.push_back(static_cast<std::size_t>(cell.original));
      }
    }
    f.corrupted = masked_rows.size();
    if (f.corrupted == 0) {
      ++report.features_excluded;
      report.features.push_back(f);
      continue;
    }
    if (inputs.cell_scores) {
      const Vector column = inputs.cell_scores->col(static_cast<Eigen::Index>(d));
      f.cell_avpr = average_precision({column.data(), N}, labels);
      avpr_all.push_back(*f.cell_avpr);
      (schema[d].is_real() ? avpr_real : avpr_cat).push_back(*f.cell_avpr);
    }
    if (schema[d].is_real() && repaired) {
      f.smse = smse(truth, fixed);
      smse_all.push_back(*f.smse);
    } else if (schema[d].is_categorical() &&
               (repaired || (inputs.simplex && (*inputs.simplex)[d].size() > 0))) {
      const auto C = static_cast<Eigen::Index>(schema[d].cardinality());
      Matrix p(static_cast<Eigen::Index>(masked_rows.size()), C);
      const bool have_simplex = inputs.simplex && (*inputs.simplex)[d].size() > 0;
      if (have_simplex && ((*inputs.simplex)[d].rows() != static_cast<Eigen::Index>(N) ||
                           (*inputs.simplex)[d].cols() != C)) {
        throw SchemaMismatch("simplex for feature '" + f.name + "' has the wrong shape");
      }
      for (std::size_t i = 0; i < masked_rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        if (have_simplex) {
          p.row(r) = (*inputs.simplex)[d].row(static_cast<Eigen::Index>(masked_rows[i]));
        } else {
          p.row(r) = one_hot(repaired->category(masked_rows[i], d), schema[d].cardinality()).transpose();
        }
      }
      f.brier = brier(truth_cat, p);
      brier_all.push_back(*f.brier);
    }
    report.features.push_back(f);
  }
  report.cell_avpr_macro = mean_of(avpr_all);
  report.cell_avpr_real = mean_of(avpr_real);
  report.cell_avpr_categorical = mean_of(avpr_cat);
  report.smse_real = mean_of(smse_all);
  report.brier_categorical = mean_of(brier_all);
  return report;
}

}  // namespace rvae
