#pragma once

// Detection and repair metrics against a corruption record.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvae/corruption.h"
#include "rvae/table.h"

namespace rvae {

// Step-interpolated average precision: sum_k (R_k - R_{k-1}) P_k over
// descending score thresholds, equal scores forming one threshold. Throws
// DataError without positives or on non-finite scores.
double average_precision(std::span<const double> scores, std::span<const int> labels);

// sum (x - xhat)^2 / sum x^2 on standardized values (the mean is taken as 0).
double smse(std::span<const double> truth, std::span<const double> repaired);

// (1 / 2N) sum_n sum_c (onehot_nc - p_nc)^2; `predicted` is N x C with rows
// summing to 1 within 1e-6.
double brier(std::span<const std::size_t> truth, const Matrix& predicted);

struct FeatureMetrics {
  std::string name;
  FeatureKind kind = FeatureKind::kReal;
  std::size_t corrupted = 0;
  std::optional<double> cell_avpr;
  std::optional<double> smse;   // real features
  std::optional<double> brier;  // categorical features
};

struct EvalReport {
  nlohmann::json scenario;
  std::optional<double> row_avpr;
  std::optional<double> cell_avpr_macro;
  std::optional<double> cell_avpr_real;
  std::optional<double> cell_avpr_categorical;
  std::size_t features_excluded = 0;  // no corrupted cells, AVPR undefined
  std::optional<double> smse_real;
  std::optional<double> brier_categorical;
  std::vector<FeatureMetrics> features;

  nlohmann::json to_json() const;
  // Long format: scope,feature,metric,value.
  void write_csv(std::ostream& out) const;
};

// Any subset may be supplied. Scores are N x D cell scores and N row scores
// (row scores default to the row sums of the cell scores). The repaired table
// may be raw or standardized; simplexes are per feature N x C_d, and a
// categorical feature without one is scored with the one-hot of its repaired
// category.
struct EvalInputs {
  const Matrix* cell_scores = nullptr;
  const Vector* row_scores = nullptr;
  const MixedTable* repaired = nullptr;
  const std::vector<Matrix>* simplex = nullptr;
};

// `dirty` is the corrupted table the detector saw; its statistics (its own,
// or the ones it carries) define the standardized units of the repair
// metrics. Row labels mark rows with at least one corrupted cell.
EvalReport evaluate(const MixedTable& dirty, const CorruptionRecord& record,
                    const EvalInputs& inputs);

}  // namespace rvae
