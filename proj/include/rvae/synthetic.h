#pragma once

// Seeded mixed-type data with strong dependence between features, used for
// tests, demos and the experiment sweep.

#include <cstddef>
#include <cstdint>

#include "rvae/table.h"

namespace rvae {

struct SyntheticOptions {
  std::size_t rows = 2000;
  std::uint64_t seed = 0;
  double label_noise = 0.05;  // probability of replacing a categorical with a uniform draw
};

// Four real features from a two-component Gaussian mixture (a binary cluster
// plus a shared Gaussian factor), and two categorical features with skewed
// marginals that are near-deterministic functions of the same factors (3 and
// 4 categories). Values are raw (unstandardized).
MixedTable make_synthetic(const SyntheticOptions& options = {});

TableSchema synthetic_schema();

}  // namespace rvae
