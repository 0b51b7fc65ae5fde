#pragma once

// Cell and row outlier scores, MAP repair and pseudo-Gibbs repair.
//
// Every row draws from its own random stream derived from (seed, row index)
// and rows are processed in fixed-size blocks, so results do not depend on
// the number of worker threads.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rvae/table.h"
#include "rvae/training.h"

namespace rvae {

enum class ScoreRule { kNll, kPi };

std::string to_string(ScoreRule rule);
ScoreRule parse_score_rule(const std::string& text);

struct ScoreReport {
  ScoreRule rule = ScoreRule::kNll;
  Matrix cell;  // N x D, higher means more likely an outlier
  Vector row;   // N, sum of the row's cell scores
};

struct ScoreOptions {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// nll: -log p(x_nd | z) with one posterior sample per row.
// pi:  -log pi_nd with gates from the coordinate update (CVI, one posterior
//      sample) or from the pi-encoder (AVI). Throws UnsupportedOperation for
//      a plain VAE.
// The table must be standardized with the model's statistics.
ScoreReport score(const RvaeModel& model, const MixedTable& table, ScoreRule rule,
                  const ScoreOptions& options = {});

// N x D gate probabilities as used by the pi rule.
Matrix infer_gates(const RvaeModel& model, const MixedTable& table,
                   const ScoreOptions& options = {});

enum class RepairMethod { kMap, kOneStage, kTwoStage, kMarginal };

std::string to_string(RepairMethod method);
RepairMethod parse_repair_method(const std::string& text);

struct RepairResult {
  RepairMethod method = RepairMethod::kMap;
  // Repaired cells in standardized units (the table carries the statistics).
  MixedTable repaired;
  // simplex[d] is N x C_d for categorical feature d, empty for reals.
  std::vector<Matrix> simplex;
  // N x D gates for the pseudo-Gibbs methods; empty otherwise.
  Matrix pi;

  MixedTable in_original_units() const { return destandardize(repaired); }
};

struct RepairOptions {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  // MAP: draw z from the posterior instead of using its mean.
  bool sample_latent = false;
  int gibbs_iters = 5;
};

// Mode of the clean component given z: m_d(z) for reals, the most probable
// category (ties to the lowest index) for categoricals.
RepairResult repair_map(const RvaeModel& model, const MixedTable& table,
                        const RepairOptions& options = {});

// Pseudo-Gibbs chain over whole rows for gibbs_iters rounds. The repair is
// the mode of p(x | z) at the final latent (decoder mean for reals, most
// probable category); the gates are computed on the observed cells with the
// same latent. Cells flagged in
// `mean_init` start from the mean behaviour instead of the observed value.
RepairResult repair_one_stage(const RvaeModel& model, const MixedTable& table,
                              const RepairOptions& options = {},
                              const CellMask* mean_init = nullptr);

// One-stage gates, then a clamped pseudo-Gibbs chain in which cells sampled
// as clean keep their observed values.
RepairResult repair_two_stage(const RvaeModel& model, const MixedTable& table,
                              const RepairOptions& options = {});

// Second stage only, with caller-supplied N x D gates.
RepairResult repair_two_stage_with_gates(const RvaeModel& model, const MixedTable& table,
                                         const Matrix& pi, const RepairOptions& options = {});

}  // namespace rvae
