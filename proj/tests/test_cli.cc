#include <doctest.h>

#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "artifacts.h"
#include "commands.h"
#include "manifest.h"
#include "rvae/corruption.h"
#include "rvae/csv.h"
#include "rvae/evaluation.h"
#include "support.h"

using namespace rvae;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return csv::read_text_file(p.string()); }

nlohmann::json manifest_of(const fs::path& p) {
  return nlohmann::json::parse(slurp(p.string() + ".manifest.json"));
}

const std::vector<std::string> kSmallNet{"--epochs", "2", "--hidden", "8", "--latent", "2",
                                         "--embedding-dim", "4", "--batch", "32"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("cli corrupt") {
  const fs::path dir = testing::scratch_dir("cli_corrupt");
  std::vector<FeatureSpec> f;
  for (int d = 0; d < 10; ++d) {
    const std::string name = "f" + std::to_string(d);
    f.push_back(d < 7 ? FeatureSpec::real(name) : FeatureSpec::categorical(name, {"a", "b", "c"}));
  }
  const TableSchema schema(f);
  save_csv((dir / "clean.csv").string(), testing::random_table(schema, 1000, 1));
  csv::write_text_file((dir / "schema.json").string(), schema.to_json().dump());
  auto args = [&](const std::string& tag, const std::string& rows) {
    return std::vector<std::string>{"corrupt", "--input", (dir / "clean.csv").string(), "--schema",
                                    (dir / "schema.json").string(), "--rows", rows, "--noise",
                                    "gauss:5,cat:0", "--seed", "3", "--out-dirty",
                                    (dir / (tag + ".csv")).string(), "--out-record",
                                    (dir / (tag + ".rec.csv")).string()};
  };
  const Run a = invoke(args("a", "0.05"));
  REQUIRE(a.code == 0);
  REQUIRE(invoke(args("b", "0.05")).code == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(slurp(dir / "a.rec.csv") == slurp(dir / "b.rec.csv"));
  const auto rec = CorruptionRecord::load((dir / "a.rec.csv").string(), schema);
  CHECK(rec.count() == 100);

  const nlohmann::json m = manifest_of(dir / "a.csv");
  CHECK(m["tool"] == "rvae");
  CHECK(m["version"] == cli::kToolVersion);
  CHECK(m["command"] == "corrupt");
  CHECK(m["seeds"]["seed"] == 3);
  CHECK(m["outputs"][0]["sha256"] == cli::sha256_file((dir / "a.csv").string()));
  CHECK(m["inputs"].size() == 2);
  CHECK(m.contains("wall_seconds"));

  const Run zero = invoke(args("z", "0"));
  CHECK(zero.code == cli::kExitConfig);
  CHECK(zero.err.find("row fraction must be positive") != std::string::npos);
  CHECK(invoke(with(args("z", "0.1"), {"--noise", "nope:1"})).code == cli::kExitConfig);
  auto missing = args("z", "0.1");
  missing[2] = (dir / "absent.csv").string();
  CHECK(invoke(missing).code == cli::kExitIo);
}

TEST_CASE("cli pipeline") {
  const fs::path dir = testing::scratch_dir("cli_pipeline");
  const std::string data = (dir / "clean.csv").string();
  const std::string schema = (dir / "schema.json").string();
  REQUIRE(invoke({"synth", "--rows", "300", "--seed", "2", "--out", data, "--out-schema", schema}).code == 0);
  const std::string dirty = (dir / "dirty.csv").string();
  const std::string record = (dir / "record.csv").string();
  REQUIRE(invoke({"corrupt", "--input", data, "--schema", schema, "--rows", "0.2", "--seed", "4",
               "--out-dirty", dirty, "--out-record", record})
              .code == 0);

  auto train = [&](const std::string& model, const std::string& out) {
    return invoke(with({"train", "--input", dirty, "--schema", schema, "--model", model, "--seed", "5",
                     "--out", (dir / out).string()},
                    kSmallNet));
  };
  REQUIRE(train("rvae-cvi", "cvi1.ckpt").code == 0);
  REQUIRE(train("rvae-cvi", "cvi2.ckpt").code == 0);
  CHECK(slurp(dir / "cvi1.ckpt") == slurp(dir / "cvi2.ckpt"));
  CHECK(fs::exists(dir / "cvi1.ckpt.log.csv"));
  CHECK(manifest_of(dir / "cvi1.ckpt")["config"]["alpha"] == 0.95);
  REQUIRE(train("vae", "vae.ckpt").code == 0);
  REQUIRE(invoke(with({"train", "--input", dirty, "--schema", schema, "--model", "vae", "--l2", "10",
                    "--out", (dir / "vae_l2.ckpt").string()},
                   kSmallNet))
              .code == 0);
  CHECK(manifest_of(dir / "vae_l2.ckpt")["config"]["l2"] == 10.0);
  CHECK(invoke(with({"train", "--input", dirty, "--schema", schema, "--alpha", "1.5", "--out",
                  (dir / "bad.ckpt").string()},
                 kSmallNet))
            .code == cli::kExitConfig);
  REQUIRE(invoke({"train", "--input", dirty, "--schema", schema, "--model", "marginal",
               "--max-components", "2", "--out", (dir / "marg.ckpt").string()})
              .code == 0);

  auto score = [&](const std::string& model, const std::string& rule, const std::string& out) {
    return invoke({"score", "--model", (dir / model).string(), "--input", dirty, "--schema", schema,
                "--rule", rule, "--seed", "1", "--out", (dir / out).string()});
  };
  REQUIRE(score("cvi1.ckpt", "pi", "s1.csv").code == 0);
  REQUIRE(score("cvi1.ckpt", "pi", "s2.csv").code == 0);
  CHECK(slurp(dir / "s1.csv") == slurp(dir / "s2.csv"));
  CHECK(score("cvi1.ckpt", "nll", "s3.csv").code == 0);
  CHECK(score("vae.ckpt", "pi", "s4.csv").code == cli::kExitUnsupported);
  CHECK(score("marg.ckpt", "nll", "s5.csv").code == 0);
  CHECK(score("marg.ckpt", "pi", "s6.csv").code == cli::kExitUnsupported);

  const std::string other_schema = (dir / "other.json").string();
  csv::write_text_file(other_schema, R"([{"name":"x","kind":"real"}])");
  CHECK(invoke({"score", "--model", (dir / "cvi1.ckpt").string(), "--input", data, "--schema",
             other_schema, "--out", (dir / "s7.csv").string()})
            .code == cli::kExitSchema);
  CHECK(score("missing.ckpt", "nll", "s8.csv").code == cli::kExitIo);

  auto repair = [&](const std::string& model, const std::string& method, const std::string& out) {
    return invoke({"repair", "--model", (dir / model).string(), "--input", dirty, "--schema", schema,
                "--method", method, "--gibbs-iters", "5", "--seed", "1", "--out", (dir / out).string()});
  };
  REQUIRE(repair("cvi1.ckpt", "two-stage", "r1.csv").code == 0);
  REQUIRE(repair("cvi1.ckpt", "two-stage", "r2.csv").code == 0);
  CHECK(slurp(dir / "r1.csv") == slurp(dir / "r2.csv"));
  CHECK(slurp(dir / "r1.csv.simplex.csv") == slurp(dir / "r2.csv.simplex.csv"));
  CHECK(manifest_of(dir / "r1.csv")["config"]["gibbs_iters"] == 5);
  CHECK(repair("cvi1.ckpt", "map", "r3.csv").code == 0);
  CHECK(repair("cvi1.ckpt", "one-stage", "r4.csv").code == 0);
  CHECK(repair("vae.ckpt", "one-stage", "r5.csv").code == cli::kExitUnsupported);
  CHECK(repair("marg.ckpt", "map", "r6.csv").code == 0);
  CHECK(repair("cvi1.ckpt", "magic", "r7.csv").code == cli::kExitConfig);

  // An oracle detector scores perfectly.
  const TableSchema ts = TableSchema::load(schema);
  const CorruptionRecord rec = CorruptionRecord::load(record, ts);
  ScoreReport oracle;
  oracle.cell = Matrix::Zero(300, static_cast<Eigen::Index>(ts.size()));
  for (const auto& c : rec.cells) oracle.cell(c.row, c.col) = 1.0;
  oracle.row = oracle.cell.rowwise().sum();
  {
    std::ostringstream o;
    cli::write_scores(o, ts, oracle);
    csv::write_text_file((dir / "oracle.csv").string(), o.str());
  }
  const std::string report = (dir / "report.json").string();
  REQUIRE(invoke({"evaluate", "--schema", schema, "--dirty", dirty, "--record", record, "--scores",
               (dir / "oracle.csv").string(), "--repair", (dir / "r1.csv").string(), "--simplex",
               (dir / "r1.csv.simplex.csv").string(), "--out", report, "--csv",
               (dir / "report.csv").string()})
              .code == 0);
  const auto doc = nlohmann::json::parse(slurp(report));
  CHECK(doc["row_avpr"] == 1.0);
  CHECK(doc["cell_avpr"]["macro"] == 1.0);
  CHECK(doc["repair"]["smse_real"].is_number());
  CHECK(fs::exists(dir / "report.csv"));
  CHECK(invoke({"evaluate", "--schema", schema, "--dirty", dirty, "--record", record, "--scores",
             (dir / "r1.csv").string(), "--out", report})
            .code == cli::kExitIo);

  const ScoreReport back = cli::read_scores((dir / "s1.csv").string(), ts, 300);
  CHECK(back.rule == ScoreRule::kPi);
  CHECK((back.row - back.cell.rowwise().sum()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("cli experiment and argument errors") {
  const fs::path dir = testing::scratch_dir("cli_experiment");
  const std::string data = (dir / "clean.csv").string();
  const std::string schema = (dir / "schema.json").string();
  REQUIRE(invoke({"synth", "--rows", "200", "--out", data, "--out-schema", schema}).code == 0);
  const std::string out = (dir / "exp.csv").string();
  const Run r = invoke(with({"experiment", "--input", data, "--schema", schema, "--fractions", "0.1,0.2",
                          "--models", "rvae-cvi,marginal", "--repeats", "1", "--max-components", "2",
                          "--out", out},
                         kSmallNet));
  REQUIRE(r.code == 0);
  const auto rows = csv::read_file(out);
  REQUIRE(rows.size() == 1 + 2 * 3);  // cvi: nll + pi, marginal: nll
  CHECK(rows[0] == csv::Record{"row_fraction", "model", "rule", "runs", "row_avpr", "cell_avpr",
                               "cell_avpr_real", "cell_avpr_categorical", "smse_real",
                               "brier_categorical"});
  CHECK(invoke({"experiment", "--input", data, "--schema", schema, "--fractions", "0", "--out", out}).code ==
        cli::kExitConfig);

  CHECK(invoke({"--help"}).code == 0);
  CHECK(invoke({"frobnicate"}).code == cli::kExitConfig);
  CHECK(invoke({"train", "--input", data}).code == cli::kExitConfig);
  CHECK(invoke({}).code == cli::kExitConfig);
}
