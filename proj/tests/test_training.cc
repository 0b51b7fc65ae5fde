#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rvae/checkpoint.h"
#include "rvae/corruption.h"
#include "rvae/error.h"
#include "rvae/synthetic.h"
#include "rvae/training.h"
#include "support.h"

using namespace rvae;

TEST_CASE("config defaults, validation and json") {
  const TrainConfig c;
  CHECK(c.alpha == 0.95);
  CHECK(c.epochs == 100);
  CHECK(c.learning_rate == 0.001);
  CHECK(c.latent == 20);
  CHECK(c.hidden == 400);
  CHECK(c.batch_size == 150);
  CHECK(c.embedding_dim == 50);
  CHECK(c.outlier_scale == 2.0);
  CHECK_NOTHROW(c.validate());

  auto bad = [](auto mutate) {
    TrainConfig t;
    mutate(t);
    CHECK_THROWS_AS(t.validate(), ConfigError);
  };
  bad([](TrainConfig& t) { t.alpha = 1.5; });
  bad([](TrainConfig& t) { t.alpha = 0.0; });
  bad([](TrainConfig& t) { t.epochs = 0; });
  bad([](TrainConfig& t) { t.learning_rate = -1; });
  bad([](TrainConfig& t) { t.batch_size = 0; });
  bad([](TrainConfig& t) { t.outlier_scale = 0.5; });
  bad([](TrainConfig& t) { t.l2 = -1; });
  bad([](TrainConfig& t) { t.mc_samples = 0; });

  TrainConfig v;
  v.kind = ModelKind::kVae;
  v.l2 = 10;
  v.seed = 42;
  const TrainConfig back = TrainConfig::from_json(v.to_json());
  CHECK(back.kind == ModelKind::kVae);
  CHECK(back.l2 == 10);
  CHECK(back.seed == 42);
  CHECK(parse_model_kind(to_string(ModelKind::kRvaeAvi)) == ModelKind::kRvaeAvi);
  CHECK_THROWS_AS(parse_model_kind("gan"), ConfigError);
}

TEST_CASE("training improves the vae objective") {
  const TableSchema s({FeatureSpec::real("u"), FeatureSpec::real("v")});
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    MixedTable raw(s, 200);
    for (std::size_t n = 0; n < 200; ++n) {
      const double h = rng.normal();
      raw.set_real(n, 0, h + 0.1 * rng.normal());
      raw.set_real(n, 1, 2 * h + 0.1 * rng.normal());
    }
    TrainConfig c;
    c.kind = ModelKind::kVae;
    c.hidden = 32;
    c.latent = 2;
    c.seed = seed;
    const TrainResult r = train(standardize(raw), c);
    REQUIRE(r.log.epochs.size() == 100);
    CHECK(r.log.epochs.back().mean_elbo >= r.log.epochs.front().mean_elbo);
    CHECK(std::isnan(r.log.epochs.back().mean_pi));
    CHECK(r.model.params.all_finite());
  }
}

TEST_CASE("robust training gates clean data as clean") {
  const MixedTable data = standardize(make_synthetic({.rows = 500, .seed = 3}));
  TrainConfig c;
  c.hidden = 64;
  c.epochs = 30;
  c.seed = 3;
  const TrainResult r = train(data, c);
  CHECK(r.log.epochs.back().mean_pi > 0.9);

  TrainConfig a = c;
  a.kind = ModelKind::kRvaeAvi;
  a.epochs = 5;
  const TrainResult ra = train(data, a);
  CHECK(ra.model.params.pi_encoder.has_value());
  CHECK(ra.model.params.all_finite());
}

TEST_CASE("training preconditions") {
  const auto schema = testing::mixed_schema();
  const MixedTable raw = testing::random_table(schema, 20, 1);
  CHECK_THROWS_AS(train(raw, testing::tiny_config(ModelKind::kVae)), ConfigError);
  TrainConfig bad = testing::tiny_config(ModelKind::kVae);
  bad.alpha = 2.0;
  CHECK_THROWS_AS(train(standardize(raw), bad), ConfigError);

  TrainConfig c = testing::tiny_config(ModelKind::kRvaeCvi);
  RvaeModel m = init_model(TableSchema({FeatureSpec::real("a")}),
                           Standardization{{0.0}, {1.0}}, c);
  CHECK_THROWS_AS(train_model(m, standardize(raw)), SchemaMismatch);
}

TEST_CASE("training is deterministic and the log is written") {
  const auto schema = testing::mixed_schema();
  const MixedTable data = standardize(testing::random_table(schema, 50, 2));
  const auto c = testing::tiny_config(ModelKind::kRvaeAvi, 5);
  const TrainResult a = train(data, c);
  const TrainResult b = train(data, c);
  CHECK(serialize_container(to_container(a.model)) == serialize_container(to_container(b.model)));
  std::ostringstream log;
  a.log.write_csv(log);
  const std::string text = log.str();
  CHECK(text.rfind("epoch,", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + c.epochs);
}

TEST_CASE("checkpoint round trip") {
  const auto schema = testing::mixed_schema();
  const MixedTable data = standardize(testing::random_table(schema, 40, 7));
  const RvaeModel model = train(data, testing::tiny_config(ModelKind::kRvaeAvi)).model;
  const auto dir = testing::scratch_dir("ckpt");
  const std::string path = (dir / "m.ckpt").string();
  save_model(model, path);
  const RvaeModel back = load_model(path, schema);
  CHECK(back.schema == model.schema);
  CHECK(back.stats == model.stats);
  CHECK(back.config.to_json() == model.config.to_json());
  const Matrix x = encode_rows(data, std::vector<std::size_t>{0, 1, 2}, model.params.embeddings);
  CHECK(model.params.encoder.predict(x) == back.params.encoder.predict(x));
  CHECK(model.params.pi_encoder->predict(x) == back.params.pi_encoder->predict(x));
  const Matrix z = Matrix::Random(2, static_cast<Eigen::Index>(model.params.latent()));
  CHECK(decode_outputs(model.params, z) == decode_outputs(back.params, z));
  CHECK(model.params.log_sigma == back.params.log_sigma);

  try {
    load_model(path, TableSchema({FeatureSpec::real("a"), FeatureSpec::real("zz")}));
    FAIL("expected a mismatch");
  } catch (const SchemaMismatch& e) {
    CHECK(std::string(e.what()).find("mismatch") != std::string::npos);
  }

  std::string bytes = serialize_container(to_container(model));
  bytes[0] = 'X';
  CHECK_THROWS_AS(deserialize_container(bytes), IoError);
  CHECK_THROWS_AS(deserialize_container(bytes.substr(0, 12)), IoError);
  Container c = deserialize_container(serialize_container(to_container(model)));
  CHECK_THROWS_AS(c.tensor("missing"), IoError);
}
