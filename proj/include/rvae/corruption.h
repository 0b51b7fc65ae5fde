#pragma once

// Seeded cell-level corruption with a ground-truth record.
//
// Rows are selected first, then a fixed number of distinct features inside
// every selected row. Real cells receive additive noise scaled by the clean
// feature's standard deviation; categorical cells are resampled from the
// tempered marginal with the clean category excluded.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rvae/nn.h"
#include "rvae/table.h"

namespace rvae {

enum class RealNoise { kGaussian, kLaplace, kLogNormal, kGaussMix };

struct MixComponent {
  double mean = 0.0;
  double k = 1.0;
  double weight = 0.5;
};

// Grammar: `gauss:K | laplace:K | lognorm:K | gmix:M1,K1,W1,M2,K2,W2`
// joined with `cat:BETA` by a comma, e.g. "gauss:5,cat:0". A missing clause
// keeps its default (gauss:5, cat:0).
struct NoiseSpec {
  RealNoise real = RealNoise::kGaussian;
  double k = 5.0;  // scale multiplier of the clean feature std
  std::array<MixComponent, 2> mix{};
  double beta = 0.0;

  void validate() const;
  std::string to_string() const;
  static NoiseSpec parse(const std::string& text);
};

inline constexpr double kDefaultFeatureFraction = 0.2;

// floor(x + 0.5)
std::size_t round_half_up(double x);

// Number of features corrupted per selected row: round_half_up(feat_frac * D),
// at least 1.
std::size_t features_per_row(std::size_t D, double feat_frac);

// N x D mask with round_half_up(row_frac * N) distinct rows and
// features_per_row(D, feat_frac) distinct features inside each, redrawn per
// row. row_frac = 0 gives an empty mask.
CellMask select_cells(std::size_t N, std::size_t D, double row_frac, double feat_frac, Rng& rng);

// value + zeta, zeta drawn from the real process with scales k * sigma.
double corrupt_real(double value, const NoiseSpec& spec, double sigma, Rng& rng);

// Category != clean drawn with probability proportional to marginal[c]^beta.
std::size_t corrupt_categorical(std::size_t clean, double beta, std::span<const double> marginal,
                                Rng& rng);

// Tempered, clean-excluded, normalized distribution (entry `clean` is 0).
std::vector<double> tempered_distribution(std::size_t clean, double beta,
                                          std::span<const double> marginal);

struct CorruptedCell {
  std::size_t row = 0;
  std::size_t col = 0;
  double original = 0.0;  // raw value, or category index
};

struct CorruptionRecord {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double row_fraction = 0.0;
  double feature_fraction = kDefaultFeatureFraction;
  std::uint64_t seed = 0;
  std::string noise;
  CellMask mask;                     // rows x cols
  std::vector<CorruptedCell> cells;  // row-major order

  bool masked(std::size_t n, std::size_t d) const { return mask[n * cols + d] != 0; }
  std::size_t count() const { return cells.size(); }

  // "# {json header}" line followed by a row,column,original_value CSV with
  // feature names and cell text.
  void write(std::ostream& out, const TableSchema& schema) const;
  static CorruptionRecord read(std::string_view text, const TableSchema& schema);
  void save(const std::string& path, const TableSchema& schema) const;
  static CorruptionRecord load(const std::string& path, const TableSchema& schema);
};

struct Scenario {
  MixedTable dirty;
  CorruptionRecord record;
};

// Corrupts a raw (unstandardized) table. Noise scales use the population std
// of each clean real column; categorical marginals are the clean column
// frequencies.
Scenario make_scenario(const MixedTable& clean, double row_frac, const NoiseSpec& noise,
                       std::uint64_t seed, double feat_frac = kDefaultFeatureFraction);

// Writes the record's originals back into `dirty`.
MixedTable apply_originals(const MixedTable& dirty, const CorruptionRecord& record);

}  // namespace rvae
