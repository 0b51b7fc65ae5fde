#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "rvae/table.h"
#include "rvae/training.h"

namespace rvae::testing {

inline TableSchema mixed_schema() {
  return TableSchema({FeatureSpec::real("a"), FeatureSpec::categorical("b", {"x", "y", "z"}),
                      FeatureSpec::real("c"), FeatureSpec::categorical("d", {"p", "q"})});
}

// Raw table with loosely dependent columns.
inline MixedTable random_table(const TableSchema& schema, std::size_t rows, std::uint64_t seed) {
  Rng rng(seed);
  MixedTable t(schema, rows);
  for (std::size_t n = 0; n < rows; ++n) {
    const double h = rng.normal();
    for (std::size_t d = 0; d < schema.size(); ++d) {
      if (schema[d].is_real()) {
        t.set_real(n, d, 3.0 * h + static_cast<double>(d) + 0.5 * rng.normal());
      } else {
        const std::size_t C = schema[d].cardinality();
        const std::size_t c = rng.uniform() < 0.8 ? (h > 0 ? 0 : C - 1) : rng.uniform_index(C);
        t.set_category(n, d, c);
      }
    }
  }
  return t;
}

inline TrainConfig tiny_config(ModelKind kind, std::uint64_t seed = 1) {
  TrainConfig c;
  c.kind = kind;
  c.epochs = 3;
  c.hidden = 8;
  c.latent = 3;
  c.embedding_dim = 4;
  c.batch_size = 16;
  c.seed = seed;
  return c;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rvae_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace rvae::testing
