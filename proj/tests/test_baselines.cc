#include <doctest.h>

#include <cmath>

#include "rvae/baselines.h"
#include "rvae/error.h"
#include "support.h"

using namespace rvae;

namespace {

MarginalModel hand_model(const Gmm1d& g, std::vector<double> freq) {
  MarginalModel m;
  std::vector<std::string> labels;
  for (std::size_t c = 0; c < freq.size(); ++c) labels.push_back("c" + std::to_string(c));
  m.schema = TableSchema({FeatureSpec::real("x"), FeatureSpec::categorical("k", labels)});
  m.stats = Standardization{{0.0, 0.0}, {1.0, 1.0}};
  m.rows = 100;
  m.gmm = {g, Gmm1d{}};
  m.frequency = {{}, std::move(freq)};
  return m;
}

std::vector<double> gaussian_sample(std::size_t n, Rng& rng, double mean = 0.0, double sd = 1.0) {
  std::vector<double> x(n);
  for (double& v : x) v = mean + sd * rng.normal();
  return x;
}

}  // namespace

TEST_CASE("mixture density and responsibilities") {
  const Gmm1d unit{{1.0}, {0.0}, {1.0}, 0.0};
  CHECK(-unit.log_density(0.0) == doctest::Approx(0.91894).epsilon(1e-5));
  const Gmm1d two{{0.5, 0.5}, {-3.0, 3.0}, {1.0, 1.0}, 0.0};
  CHECK(two.most_responsible(2.5) == 1);
  CHECK(two.most_responsible(-0.5) == 0);
  CHECK(two.most_responsible(0.0) == 0);
  CHECK(std::exp(two.log_density(3.0)) ==
        doctest::Approx(0.5 * (std::exp(-0.5 * 36) + 1.0) / std::sqrt(2 * std::numbers::pi)));
  Gmm1d ll = unit;
  ll.log_lik = -100.0;
  CHECK(ll.bic(50) == doctest::Approx(200.0 + 2.0 * std::log(50.0)));
}

TEST_CASE("EM increases the log-likelihood") {
  Rng data_rng(1);
  std::vector<double> x = gaussian_sample(800, data_rng, -2.0, 0.5);
  const auto more = gaussian_sample(400, data_rng, 1.5, 1.2);
  x.insert(x.end(), more.begin(), more.end());
  for (std::size_t k : {1, 2, 3, 5}) {
    Rng rng(k);
    std::vector<double> trace;
    GmmOptions o;
    fit_gmm(x, k, rng, o, &trace);
    REQUIRE(trace.size() >= 2);
    for (std::size_t i = 1; i < trace.size(); ++i) {
      CHECK(trace[i] >= trace[i - 1] - 1e-9 * std::abs(trace[i - 1]));
    }
  }
  Rng rng(0);
  CHECK_THROWS_AS(fit_gmm(std::vector<double>{1.0}, 1, rng, GmmOptions{}), DataError);
}

TEST_CASE("BIC model selection") {
  GmmOptions o;
  o.max_components = 6;
  int picked_one = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 50);
    o.seed = seed;
    picked_one += select_gmm(gaussian_sample(2000, rng), o).components() == 1;
  }
  CHECK(picked_one >= 8);

  Rng rng(7);
  std::vector<double> x = gaussian_sample(1000, rng, -4.0, 0.5);
  const auto right = gaussian_sample(1000, rng, 4.0, 0.5);
  x.insert(x.end(), right.begin(), right.end());
  const Gmm1d g = select_gmm(x, o);
  REQUIRE(g.components() == 2);
  const double lo = std::min(g.mean[0], g.mean[1]);
  const double hi = std::max(g.mean[0], g.mean[1]);
  CHECK(lo == doctest::Approx(-4.0).epsilon(0.02));
  CHECK(hi == doctest::Approx(4.0).epsilon(0.02));
}

TEST_CASE("marginal scores") {
  MarginalModel m = hand_model(Gmm1d{{1.0}, {0.0}, {1.0}, 0.0}, {0.7, 0.3, 0.0});
  MixedTable t(m.schema, 4);
  t.set_real(0, 0, 0.0);
  t.set_real(1, 0, 0.0);
  t.set_real(2, 0, 2.0);
  t.set_category(0, 1, 0);
  t.set_category(1, 1, 1);
  t.set_category(2, 1, 2);
  const ScoreReport r = marginal_score(m, t);
  CHECK(r.cell(0, 0) == doctest::Approx(0.91894).epsilon(1e-5));
  CHECK(r.cell(0, 0) == r.cell(1, 0));
  CHECK(r.cell(2, 0) > r.cell(0, 0));
  CHECK(r.cell(0, 1) < r.cell(1, 1));
  CHECK(r.cell(2, 1) == doctest::Approx(std::log(103.0)));
  CHECK((r.row - r.cell.rowwise().sum()).isZero());
  CHECK(m.category_probability(1, 2) == doctest::Approx(1.0 / 103.0));
}

TEST_CASE("marginal repair") {
  const MarginalModel m = hand_model(Gmm1d{{0.5, 0.5}, {-3.0, 3.0}, {1.0, 1.0}, 0.0}, {0.7, 0.3});
  MixedTable t(m.schema, 3);
  t.set_real(0, 0, 2.5);
  t.set_real(1, 0, -10.0);
  t.set_real(2, 0, 0.7);
  t.set_category(0, 1, 1);
  t.set_category(1, 1, 0);
  t.set_category(2, 1, 1);
  const RepairResult r = marginal_repair(m, t);
  CHECK(r.repaired.real(0, 0) == 3.0);
  CHECK(r.repaired.real(1, 0) == -3.0);
  for (std::size_t n = 0; n < 3; ++n) {
    CHECK(r.repaired.category(n, 1) == 0);
    CHECK(r.simplex[1](static_cast<Eigen::Index>(n), 0) == 0.7);
  }
  CHECK(r.method == RepairMethod::kMarginal);

  const MarginalModel one = hand_model(Gmm1d{{1.0}, {0.4}, {2.0}, 0.0}, {0.5, 0.5});
  const RepairResult r1 = marginal_repair(one, t);
  for (std::size_t n = 0; n < 3; ++n) CHECK(r1.repaired.real(n, 0) == 0.4);

  CellMask mask(6, 0);
  mask[0 * 2 + 0] = 1;
  const RepairResult partial = marginal_repair(m, t, &mask);
  CHECK(partial.repaired.real(0, 0) == 3.0);
  CHECK(partial.repaired.real(2, 0) == 0.7);
  CHECK(partial.repaired.category(0, 1) == 1);
  CHECK(partial.simplex[1](0, 1) == 1.0);
  CellMask short_mask(2, 0);
  CHECK_THROWS_AS(marginal_repair(m, t, &short_mask), DataError);
}

TEST_CASE("fitting, thread invariance and persistence") {
  const TableSchema s({FeatureSpec::real("a"), FeatureSpec::categorical("k", {"u", "v"}),
                       FeatureSpec::real("b")});
  MixedTable raw(s, 100);
  Rng rng(3);
  for (std::size_t n = 0; n < 100; ++n) {
    raw.set_real(n, 0, 10 + 2 * rng.normal());
    raw.set_category(n, 1, n < 70 ? 0 : 1);
    raw.set_real(n, 2, rng.normal());
  }
  GmmOptions o;
  o.max_components = 4;
  o.seed = 9;
  const MarginalModel m = fit_marginals(raw, o, 1);
  CHECK(m.frequency[1] == std::vector<double>{0.7, 0.3});
  CHECK(m.rows == 100);
  CHECK(m.stats == compute_statistics(raw));
  const MarginalModel m2 = fit_marginals(raw, o, 2);
  CHECK(to_container(m2).tensors.size() == to_container(m).tensors.size());
  CHECK(serialize_container(to_container(m)) == serialize_container(to_container(m2)));
  CHECK(marginal_score(m, raw).cell == marginal_score(m, standardize(raw)).cell);

  const auto dir = testing::scratch_dir("marginal");
  const std::string path = (dir / "m.ckpt").string();
  save_marginal(m, path);
  const MarginalModel back = load_marginal(path);
  CHECK(container_kind(read_container(path)) == "marginal-model");
  CHECK(marginal_score(back, raw).cell == marginal_score(m, raw).cell);
  CHECK(marginal_repair(back, raw).repaired == marginal_repair(m, raw).repaired);

  Container not_marginal;
  not_marginal.metadata = {{"kind", "rvae-model"}};
  CHECK_THROWS_AS(marginal_from_container(not_marginal), IoError);
  CHECK_THROWS_AS(marginal_score(m, testing::random_table(testing::mixed_schema(), 3, 1)),
                  SchemaMismatch);
}
