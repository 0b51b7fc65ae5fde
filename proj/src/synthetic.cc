#include "rvae/synthetic.h"

#include "rvae/nn.h"

namespace rvae {

TableSchema synthetic_schema() {
  return TableSchema({FeatureSpec::real("r0"), FeatureSpec::real("r1"), FeatureSpec::real("r2"),
                      FeatureSpec::real("r3"), FeatureSpec::categorical("c0", {"a", "b", "c"}),
                      FeatureSpec::categorical("c1", {"w", "x", "y", "z"})});
}

MixedTable make_synthetic(const SyntheticOptions& options) {
  MixedTable table(synthetic_schema(), options.rows);
  Rng rng(options.seed);
  for (std::size_t n = 0; n < options.rows; ++n) {
    const double c = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const double h = rng.normal();
    table.set_real(n, 0, 2.0 * h + 3.0 * c + 0.3 * rng.normal());
    table.set_real(n, 1, 50.0 + 10.0 * (-h + 0.5 * c + 0.3 * rng.normal()));
    table.set_real(n, 2, 1.5 * h - 2.0 * c + 0.3 * rng.normal());
    table.set_real(n, 3, 0.01 * (0.8 * h + 3.0 * c + 0.2 * rng.normal()));

    // Marginals roughly [0.60, 0.25, 0.15] and [0.40, 0.10, 0.40, 0.10].
    std::size_t c0 = h < 0.253 ? 0 : (h < 1.036 ? 1 : 2);
    std::size_t c1 = 2 * static_cast<std::size_t>(c) + (h < 0.842 ? 0 : 1);
    if (rng.uniform() < options.label_noise) c0 = rng.uniform_index(3);
    if (rng.uniform() < options.label_noise) c1 = rng.uniform_index(4);
    table.set_category(n, 4, c0);
    table.set_category(n, 5, c1);
  }
  return table;
}

}  // namespace rvae
