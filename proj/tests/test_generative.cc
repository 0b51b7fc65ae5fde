#include <doctest.h>

#include <cmath>
#include <numbers>

#include "gradcheck.h"
#include "rvae/error.h"
#include "rvae/generative.h"
#include "support.h"

using namespace rvae;

namespace {

// A model whose decoder ignores z and outputs `bias`.
ModelParams constant_decoder(const TableSchema& schema, const Vector& bias) {
  Rng rng(0);
  ModelShape shape;
  shape.hidden = 2;
  shape.latent = 1;
  shape.embedding_dim = 2;
  ModelParams p = ModelParams::init(schema, shape, rng);
  p.decoder.layers().back().weight.setZero();
  p.decoder.layers().back().bias = bias.transpose();
  return p;
}

}  // namespace

TEST_CASE("clean and outlier log-likelihoods") {
  const TableSchema s({FeatureSpec::real("r"),
                       FeatureSpec::categorical("c", {"a", "b", "c", "d"})});
  const ModelParams p = constant_decoder(s, Vector::Zero(5));
  const Vector z = Vector::Zero(1);
  CHECK(log_lik_clean(p, s, z, 0.0, 0) == doctest::Approx(-0.91894).epsilon(1e-5));
  CHECK(log_lik_clean(p, s, z, 2.0, 1) == doctest::Approx(-1.38629).epsilon(1e-5));
  const double peak = log_lik_clean(p, s, z, 0.0, 0);
  for (double dx : {-0.1, 1e-3, 0.5}) CHECK(log_lik_clean(p, s, z, dx, 0) < peak);

  const OutlierModel o{2.0};
  CHECK(log_lik_outlier(o, s[0], 0.0) == doctest::Approx(-1.61209).epsilon(1e-5));
  CHECK(log_lik_outlier(o, s[0], 1.7) == log_lik_outlier(o, s[0], -1.7));
  std::vector<std::string> ten;
  for (int i = 0; i < 10; ++i) ten.push_back(std::to_string(i));
  CHECK(log_lik_outlier(o, FeatureSpec::categorical("t", ten), 3.0) ==
        doctest::Approx(-2.30259).epsilon(1e-5));
}

TEST_CASE("kl terms and the gate update") {
  CHECK(kl_gaussian(Vector::Zero(3), Vector::Ones(3)) == 0.0);
  CHECK(kl_gaussian(Vector::Ones(1), Vector::Ones(1)) == doctest::Approx(0.5));
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const Vector mu = Vector::Random(3);
    const Vector sd = (Vector::Random(3).array() + 1.5).matrix();
    CHECK(kl_gaussian(mu, sd) >= 0.0);
  }
  for (double a : {0.1, 0.5, 0.95}) CHECK(kl_bernoulli(a, a) == doctest::Approx(0.0));
  CHECK(kl_bernoulli(1.0, 0.5) == doctest::Approx(std::log(2.0)));
  CHECK(kl_bernoulli(0.0, 0.95) == doctest::Approx(std::log(20.0)));

  for (double a : {0.3, 0.5, 0.95}) CHECK(pi_update(0.0, a) == doctest::Approx(a).epsilon(1e-15));
  CHECK(pi_update(-2.94444, 0.95) == doctest::Approx(0.5).epsilon(1e-5));
  CHECK(pi_update(2.0, 0.95) == doctest::Approx(0.99294).epsilon(1e-5));
  CHECK(pi_update(1e6, 0.95) == pi_update(30.0, 0.95));
  CHECK(clamp_log_sigma(-100) == kLogSigmaMin);
  CHECK(clamp_log_sigma(100) == kLogSigmaMax);

  // Shifting both log-likelihoods by a constant leaves the gates unchanged.
  const Matrix clean = Matrix::Random(4, 3) * 5;
  const Matrix outl = Matrix::Random(4, 3) * 5;
  const Matrix g0 = gate_probabilities(clean, outl, 0.9);
  const Matrix g1 = gate_probabilities(clean.array() + 7.25, outl.array() + 7.25, 0.9);
  CHECK((g0 - g1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("batch elbo composes per-cell terms") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto p = testing::random_problem(seed, false);
    ObjectiveSpec spec;
    const BatchObjective obj = evaluate_batch(p.params, p.table, p.rows,
                                              std::span<const Matrix>(p.noise.data(), 1), spec);
    const Matrix x = encode_rows(p.table, p.rows, p.params.embeddings);
    const Posterior post = encode_posterior(p.params, x);
    for (std::size_t i = 0; i < p.rows.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const Vector mu = post.mean.row(r).transpose();
      const Vector sd = post.std_dev.row(r).transpose();
      const Vector z = mu + sd.cwiseProduct(p.noise[0].row(r).transpose());
      double want = -kl_gaussian(mu, sd);
      for (std::size_t d = 0; d < p.schema.size(); ++d) {
        want += log_lik_clean(p.params, p.schema, z, p.table.value(p.rows[i], d), d);
      }
      CHECK(obj.row_elbo[r] == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK(obj.loss == doctest::Approx(-obj.row_elbo.mean()));
  }
}

TEST_CASE("robust elbo with all gates at one") {
  auto p = testing::random_problem(9, false);
  const double alpha = 0.8;
  for (std::size_t n = 0; n < p.table.rows(); ++n) {
    Rng a(n), b(n);
    const double vae = elbo_vae(p.params, p.table, n, a);
    const double rvae =
        elbo_rvae(p.params, p.table, n, Vector::Ones(static_cast<Eigen::Index>(p.schema.size())),
                  alpha, OutlierModel{}, b);
    CHECK(rvae == doctest::Approx(vae - static_cast<double>(p.schema.size()) *
                                            kl_bernoulli(1.0, alpha))
                      .epsilon(1e-12));
  }
  Rng r(0);
  CHECK_THROWS_AS(elbo_rvae(p.params, p.table, 0, Vector::Constant(p.schema.size(), 1.5), alpha,
                            OutlierModel{}, r),
                  ConfigError);
}

TEST_CASE("gradients match finite differences") {
  for (std::uint64_t seed = 100; seed < 106; ++seed) {
    auto p = testing::random_problem(seed, false);
    ObjectiveSpec vae;
    auto r = testing::check_gradients(p, vae);
    CHECK_MESSAGE(r.failures == 0, "vae seed " << seed << " worst " << r.worst_tensor);

    ObjectiveSpec coord;
    coord.mode = GateMode::kCoordinate;
    coord.alpha = 0.9;
    const Matrix pi = evaluate_batch(p.params, p.table, p.rows, p.noise, coord).pi;
    ModelParams g_coord = p.params.zeros_like();
    evaluate_batch(p.params, p.table, p.rows, p.noise, coord, &g_coord);
    ObjectiveSpec fixed = coord;
    fixed.mode = GateMode::kFixed;
    fixed.fixed_pi = &pi;
    ModelParams g_fixed = p.params.zeros_like();
    evaluate_batch(p.params, p.table, p.rows, p.noise, fixed, &g_fixed);
    auto a = g_coord.tensors(p.schema);
    auto b = g_fixed.tensors(p.schema);
    for (std::size_t t = 0; t < a.size(); ++t) CHECK(*a[t].value == *b[t].value);
    r = testing::check_gradients(p, fixed);
    CHECK_MESSAGE(r.failures == 0, "fixed seed " << seed << " worst " << r.worst_tensor);

    auto q = testing::random_problem(seed, true);
    ObjectiveSpec amortized;
    amortized.mode = GateMode::kAmortized;
    amortized.alpha = 0.7;
    r = testing::check_gradients(q, amortized);
    CHECK_MESSAGE(r.failures == 0, "amortized seed " << seed << " worst " << r.worst_tensor);
  }
}

TEST_CASE("a closed gate blocks the clean term's gradient") {
  const TableSchema s({FeatureSpec::real("a"), FeatureSpec::real("b")});
  const MixedTable t = standardize(testing::random_table(s, 8, 3));
  Rng rng(2);
  ModelShape shape;
  shape.hidden = 5;
  shape.latent = 2;
  const ModelParams params = ModelParams::init(s, shape, rng);
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4};
  const std::vector<Matrix> noise{rng.normal_matrix(5, 2)};
  Matrix pi = Matrix::Constant(5, 2, 0.7);
  pi.col(1).setZero();
  ObjectiveSpec spec;
  spec.mode = GateMode::kFixed;
  spec.fixed_pi = &pi;
  ModelParams g = params.zeros_like();
  evaluate_batch(params, t, rows, noise, spec, &g);
  CHECK(g.decoder.layers().back().weight.col(1).isZero());
  CHECK(g.decoder.layers().back().bias(0, 1) == 0.0);
  CHECK(g.log_sigma(0, 1) == 0.0);
  CHECK_FALSE(g.decoder.layers().back().weight.col(0).isZero());
}

TEST_CASE("coordinate gates are optimal") {
  for (std::uint64_t seed = 200; seed < 220; ++seed) {
    auto p = testing::random_problem(seed, false);
    Rng rng(seed);
    ObjectiveSpec coord;
    coord.mode = GateMode::kCoordinate;
    coord.alpha = 0.05 + 0.9 * rng.uniform();
    const std::vector<Matrix> one{p.noise[0]};
    const Matrix pi = evaluate_batch(p.params, p.table, p.rows, one, coord).pi;
    ObjectiveSpec fixed = coord;
    fixed.mode = GateMode::kFixed;
    fixed.fixed_pi = &pi;
    const Vector base = evaluate_batch(p.params, p.table, p.rows, one, fixed).row_elbo;
    for (Eigen::Index i = 0; i < pi.rows(); ++i) {
      for (Eigen::Index d = 0; d < pi.cols(); ++d) {
        for (double delta : {-0.1, -0.01, 0.01, 0.1}) {
          Matrix moved = pi;
          moved(i, d) = std::clamp(pi(i, d) + delta, 0.0, 1.0);
          fixed.fixed_pi = &moved;
          const Vector e = evaluate_batch(p.params, p.table, p.rows, one, fixed).row_elbo;
          CHECK(e[i] <= base[i] + 1e-9);
        }
      }
    }
  }
}

TEST_CASE("objective preconditions") {
  auto p = testing::random_problem(3, false);
  ObjectiveSpec amortized;
  amortized.mode = GateMode::kAmortized;
  CHECK_THROWS_AS(evaluate_batch(p.params, p.table, p.rows, p.noise, amortized), ConfigError);
  ObjectiveSpec fixed;
  fixed.mode = GateMode::kFixed;
  CHECK_THROWS_AS(evaluate_batch(p.params, p.table, p.rows, p.noise, fixed), ConfigError);
  ObjectiveSpec bad_alpha;
  bad_alpha.mode = GateMode::kCoordinate;
  bad_alpha.alpha = 1.0;
  CHECK_THROWS_AS(evaluate_batch(p.params, p.table, p.rows, p.noise, bad_alpha), ConfigError);
  CHECK_THROWS_AS(evaluate_batch(p.params, p.table, {}, p.noise, ObjectiveSpec{}), ConfigError);
}
