#pragma once

// Marginal-distribution baseline: an independent model per feature, a 1-D
// Gaussian mixture selected by BIC for reals and category frequencies for
// categoricals.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rvae/checkpoint.h"
#include "rvae/scoring.h"
#include "rvae/table.h"

namespace rvae {

struct Gmm1d {
  std::vector<double> weight;
  std::vector<double> mean;
  std::vector<double> std_dev;
  double log_lik = 0.0;  // total over the fitted sample

  std::size_t components() const { return weight.size(); }
  double log_density(double x) const;
  // Component with the largest weight * density at x (ties to the lowest index).
  std::size_t most_responsible(double x) const;
  // -2 log L + (3k - 1) ln N
  double bic(std::size_t n) const;
};

struct GmmOptions {
  std::size_t max_components = 40;
  std::size_t restarts_small = 10;  // k <= 5
  std::size_t restarts_large = 3;   // k > 5
  int max_iters = 100;
  double tolerance = 1e-5;  // on the change of the mean log-likelihood
  double std_floor = 1e-4;
  std::uint64_t seed = 0;
};

// One EM run from a k-means++ initialization. When `trace` is given it
// receives the total log-likelihood after every iteration.
Gmm1d fit_gmm(std::span<const double> x, std::size_t k, Rng& rng, const GmmOptions& options,
              std::vector<double>* trace = nullptr);

// Best of the restarts for every k = 1..max_components; lowest BIC wins.
Gmm1d select_gmm(std::span<const double> x, const GmmOptions& options);

struct MarginalModel {
  TableSchema schema;
  Standardization stats;
  std::size_t rows = 0;                        // fitted sample size
  std::vector<Gmm1d> gmm;                      // per feature, empty for categoricals
  std::vector<std::vector<double>> frequency;  // per feature, empty for reals

  // Probability used for category c of feature d, with the floor
  // 1 / (N + C_d) for categories never seen during fitting.
  double category_probability(std::size_t d, std::size_t c) const;
};

// Fits on a table (standardized with its own statistics when raw); features
// are fitted in parallel on `threads` workers.
MarginalModel fit_marginals(const MixedTable& table, const GmmOptions& options = {},
                            std::size_t threads = 1);

// Cell score = -log marginal density (standardized units) or probability.
ScoreReport marginal_score(const MarginalModel& model, const MixedTable& table);

// Repairs cells flagged in `mask` (all cells when null): reals to the mean of
// the most responsible component, categoricals to the most frequent category
// with the frequency vector as simplex. Unflagged cells keep their values and
// a one-hot simplex.
RepairResult marginal_repair(const MarginalModel& model, const MixedTable& table,
                             const CellMask* mask = nullptr);

Container to_container(const MarginalModel& model);
MarginalModel marginal_from_container(const Container& container);
void save_marginal(const MarginalModel& model, const std::string& path);
MarginalModel load_marginal(const std::string& path);

// Kind tag stored in a container's metadata ("rvae-model" or "marginal-model").
std::string container_kind(const Container& container);

}  // namespace rvae
