#include <doctest.h>

#include <cmath>
#include <sstream>

#include "rvae/csv.h"
#include "rvae/error.h"
#include "rvae/table.h"
#include "support.h"

using namespace rvae;

TEST_CASE("csv parsing and formatting") {
  const auto recs = csv::parse("a,\"b,c\",\"say \"\"hi\"\"\"\r\n\n1,2,3\n");
  REQUIRE(recs.size() == 2);
  CHECK(recs[0] == csv::Record{"a", "b,c", "say \"hi\""});
  CHECK(recs[1] == csv::Record{"1", "2", "3"});
  CHECK_THROWS_AS(csv::parse("\"open"), IoError);
  CHECK(csv::escape("plain") == "plain");
  CHECK(csv::escape("a,b") == "\"a,b\"");
  CHECK(csv::escape("q\"") == "\"q\"\"\"");

  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.125, 0.0}) {
    double back = 0;
    REQUIRE(csv::parse_double(csv::format_double(v), back));
    CHECK(back == v);
  }
  double out = 0;
  CHECK_FALSE(csv::parse_double("1.5x", out));
  CHECK_FALSE(csv::parse_double("", out));
  CHECK_FALSE(csv::parse_double("nan", out));
  CHECK_FALSE(csv::parse_double("inf", out));
}

TEST_CASE("schema validation and json") {
  CHECK_THROWS_AS(TableSchema(std::vector<FeatureSpec>{}), ConfigError);
  CHECK_THROWS_AS(TableSchema({FeatureSpec::real("a"), FeatureSpec::real("a")}), ConfigError);
  CHECK_THROWS_AS(TableSchema({FeatureSpec::categorical("c", {"only"})}), ConfigError);
  CHECK_THROWS_AS(TableSchema({FeatureSpec::categorical("c", {"u", "u"})}), ConfigError);
  const TableSchema s = testing::mixed_schema();
  CHECK(TableSchema::from_json(s.to_json()) == s);
  CHECK(s.num_real() == 2);
  CHECK(s.num_categorical() == 2);
  CHECK(s.index_of("c") == 2u);
  CHECK_FALSE(s.index_of("nope").has_value());
  const TableSchema other({FeatureSpec::real("a")});
  CHECK_FALSE(s.describe_mismatch(other).empty());
  CHECK(s.describe_mismatch(s).empty());
  CHECK_THROWS_AS(TableSchema::from_json(nlohmann::json::parse(R"([{"name":"a","kind":"int"}])")),
                  ConfigError);
}

TEST_CASE("csv table loading") {
  const TableSchema s({FeatureSpec::real("x"), FeatureSpec::categorical("k", {"a", "b"})});
  const MixedTable t = parse_csv_table("x,k\n1.5,b\n-2,a\n", s);
  CHECK(t.rows() == 2);
  CHECK(t.real(0, 0) == 1.5);
  CHECK(t.category(0, 1) == 1);
  CHECK(t.cell_text(1, 1) == "a");

  try {
    parse_csv_table("x,k\n1,a\n2,banana\n", s);
    FAIL("expected an error");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("banana") != std::string::npos);
    CHECK(msg.find("'k'") != std::string::npos);
    CHECK(msg.find("row 2") != std::string::npos);
  }
  CHECK_THROWS_WITH_AS(parse_csv_table("x,k\n", s), "no rows", DataError);
  CHECK_THROWS_AS(parse_csv_table("k,x\n1,a\n", s), SchemaMismatch);
  CHECK_THROWS_AS(parse_csv_table("x,k\nabc,a\n", s), DataError);
  CHECK_THROWS_AS(parse_csv_table("x,k\n,a\n", s), DataError);

  std::ostringstream out;
  write_csv(out, t);
  CHECK(parse_csv_table(out.str(), s) == t);
}

TEST_CASE("standardization") {
  const TableSchema s({FeatureSpec::real("x"), FeatureSpec::categorical("k", {"a", "b"})});
  MixedTable t(s, 2);
  t.set_real(0, 0, 1.0);
  t.set_real(1, 0, 3.0);
  t.set_category(0, 1, 1);
  const Standardization st = compute_statistics(t);
  CHECK(st.mean[0] == 2.0);
  CHECK(st.std_dev[0] == 1.0);
  CHECK(st.mean[1] == 0.0);
  CHECK(st.std_dev[1] == 1.0);

  const MixedTable z = standardize(t);
  CHECK(z.real(0, 0) == -1.0);
  CHECK(z.real(1, 0) == 1.0);
  CHECK(z.category(0, 1) == 1);
  CHECK(standardize(z) == z);
  const MixedTable again = standardize(destandardize(z));
  CHECK(std::abs(again.real(0, 0) - z.real(0, 0)) < 1e-9);
  CHECK(destandardize(z) == t);

  MixedTable flat(s, 2);
  flat.set_real(0, 0, 4.0);
  flat.set_real(1, 0, 4.0);
  CHECK_THROWS_AS(standardize(flat), DataError);
}

TEST_CASE("one-hot and encodings") {
  CHECK(one_hot(1, 3) == Vector::Unit(3, 1));
  CHECK(one_hot(0, 2) == Vector::Unit(2, 0));
  CHECK_THROWS_AS(one_hot(3, 3), DataError);

  const TableSchema mixed({FeatureSpec::real("r1"), FeatureSpec::real("r2"), FeatureSpec::real("r3"),
                           FeatureSpec::categorical("c1", {"a", "b"}),
                           FeatureSpec::categorical("c2", {"u", "v", "w"})});
  CHECK(encoded_width(mixed, 50) == 103);

  const TableSchema reals({FeatureSpec::real("p"), FeatureSpec::real("q")});
  const MixedTable rt = standardize(testing::random_table(reals, 10, 4));
  Rng rng(1);
  const EmbeddingBank none = EmbeddingBank::random_unit(reals, 5, rng);
  const Vector er = encode_row(rt, 3, none);
  CHECK(er.size() == 2);
  CHECK(er[0] == rt.real(3, 0));
  CHECK(er[1] == rt.real(3, 1));

  const TableSchema cat({FeatureSpec::categorical("k", {"a", "b", "c"})});
  MixedTable ct(cat, 1);
  ct.set_category(0, 0, 2);
  ct.set_standardization(compute_statistics(ct));
  const EmbeddingBank bank = EmbeddingBank::random_unit(cat, 4, rng);
  CHECK(encode_row(ct, 0, bank) == bank.matrix(0).row(2).transpose());
  for (Eigen::Index c = 0; c < 3; ++c) CHECK(bank.matrix(0).row(c).norm() == doctest::Approx(1.0));

  const std::size_t rows[] = {0};
  const CellMask mask{1};
  CHECK(encode_rows(ct, rows, bank, &mask).isZero());
}
