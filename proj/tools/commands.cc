#include "commands.h"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "artifacts.h"
#include "manifest.h"
#include "rvae/baselines.h"
#include "rvae/corruption.h"
#include "rvae/csv.h"
#include "rvae/error.h"
#include "rvae/evaluation.h"
#include "rvae/scoring.h"
#include "rvae/synthetic.h"
#include "rvae/training.h"

namespace rvae::cli {

namespace {

const std::vector<double> kDefaultFractions{0.01, 0.05, 0.1, 0.2, 0.5};

std::string manifest_path(const std::string& primary) { return primary + ".manifest.json"; }

void save_stream(const std::string& path, const std::function<void(std::ostream&)>& fill) {
  std::ostringstream buffer;
  fill(buffer);
  csv::write_text_file(path, buffer.str());
}

struct TrainArgs {
  std::string model = "rvae-cvi";
  TrainConfig config;
  std::size_t max_components = 40;
};

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--alpha", a.config.alpha, "Prior probability that a cell is clean")
      ->capture_default_str();
  cmd->add_option("--epochs", a.config.epochs)->capture_default_str();
  cmd->add_option("--lr", a.config.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--batch", a.config.batch_size)->capture_default_str();
  cmd->add_option("--latent", a.config.latent)->capture_default_str();
  cmd->add_option("--hidden", a.config.hidden)->capture_default_str();
  cmd->add_option("--embedding-dim", a.config.embedding_dim)->capture_default_str();
  cmd->add_option("--s", a.config.outlier_scale, "Std of the broad outlier Gaussian")
      ->capture_default_str();
  cmd->add_option("--l2", a.config.l2, "Weight decay coefficient")->capture_default_str();
  cmd->add_option("--mc-samples", a.config.mc_samples)->capture_default_str();
  cmd->add_option("--max-components", a.max_components, "Marginal baseline: largest mixture")
      ->capture_default_str();
}

// A loaded checkpoint of either kind.
struct LoadedModel {
  std::optional<RvaeModel> rvae;
  std::optional<MarginalModel> marginal;

  const TableSchema& schema() const { return rvae ? rvae->schema : marginal->schema; }
  std::string kind() const { return rvae ? to_string(rvae->kind()) : "marginal"; }
};

LoadedModel load_any_model(const std::string& path, const TableSchema& expected) {
  const Container container = read_container(path);
  LoadedModel m;
  if (container_kind(container) == "marginal-model") {
    m.marginal = marginal_from_container(container);
  } else {
    m.rvae = from_container(container);
  }
  if (const auto diff = m.schema().describe_mismatch(expected); !diff.empty()) {
    throw SchemaMismatch("checkpoint '" + path + "' does not match the schema: " + diff);
  }
  return m;
}

GmmOptions gmm_options(const TrainArgs& a) {
  GmmOptions o;
  o.max_components = a.max_components;
  o.seed = a.config.seed;
  return o;
}

// Trains, scores and repairs one model on a dirty raw table.
std::vector<std::pair<ScoreReport, RepairResult>> run_model(const std::string& model,
                                                            const MixedTable& dirty,
                                                            const CorruptionRecord& record,
                                                            TrainArgs args, std::uint64_t seed,
                                                            std::size_t threads) {
  args.config.seed = seed;
  std::vector<std::pair<ScoreReport, RepairResult>> out;
  if (model == "marginal") {
    const MarginalModel m = fit_marginals(dirty, gmm_options(args), threads);
    out.emplace_back(marginal_score(m, dirty), marginal_repair(m, dirty, &record.mask));
    return out;
  }
  args.config.kind = parse_model_kind(model);
  const MixedTable data = standardize(dirty);
  const RvaeModel trained = train(data, args.config).model;
  const ScoreOptions so{seed, threads};
  RepairOptions ro;
  ro.seed = seed;
  ro.threads = threads;
  const RepairResult repaired = repair_map(trained, data, ro);
  out.emplace_back(score(trained, data, ScoreRule::kNll, so), repaired);
  if (trained.kind() != ModelKind::kVae) {
    out.emplace_back(score(trained, data, ScoreRule::kPi, so), repaired);
  }
  return out;
}

std::vector<double> parse_fraction_list(const std::string& text) {
  std::vector<double> values;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    double v = 0.0;
    if (!csv::parse_double(item, v)) throw ConfigError("bad row fraction '" + item + "'");
    values.push_back(v);
  }
  if (values.empty()) throw ConfigError("no row fractions given");
  return values;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

std::string optional_text(const std::optional<double>& v) {
  return v ? csv::format_double(*v) : std::string();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cell-level outlier detection and repair for mixed-type tables", "rvae"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::vector<std::string> argv{"rvae"};
  argv.insert(argv.end(), args.begin(), args.end());
  std::function<void()> action;

  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string input, schema_path, out_path;

  // corrupt
  auto* corrupt = app.add_subcommand("corrupt", "Inject seeded cell-level noise into a clean table");
  double row_frac = 0.0;
  double feat_frac = kDefaultFeatureFraction;
  std::string noise_text = "gauss:5,cat:0";
  std::string out_dirty, out_record;
  corrupt->add_option("--input", input, "Clean CSV")->required();
  corrupt->add_option("--schema", schema_path, "Schema JSON")->required();
  corrupt->add_option("--rows", row_frac, "Fraction of rows to corrupt")->required();
  corrupt->add_option("--features", feat_frac, "Fraction of features per corrupted row")
      ->capture_default_str();
  corrupt->add_option("--noise", noise_text, "Noise spec, e.g. gauss:5,cat:0")->capture_default_str();
  corrupt->add_option("--seed", seed)->capture_default_str();
  corrupt->add_option("--out-dirty", out_dirty)->required();
  corrupt->add_option("--out-record", out_record)->required();
  corrupt->callback([&] {
    action = [&] {
      if (!(row_frac > 0.0 && row_frac <= 1.0)) {
        throw ConfigError("row fraction must be positive and at most 1");
      }
      const NoiseSpec noise = NoiseSpec::parse(noise_text);
      const TableSchema schema = TableSchema::load(schema_path);
      const MixedTable clean = load_csv(input, schema);
      const Scenario s = make_scenario(clean, row_frac, noise, seed, feat_frac);
      save_csv(out_dirty, s.dirty);
      s.record.save(out_record, schema);
      RunManifest m("corrupt", argv);
      m.set_config({{"row_fraction", row_frac},
                    {"feature_fraction", feat_frac},
                    {"noise", noise.to_string()}});
      m.add_seed("seed", seed);
      m.add_input(input);
      m.add_input(schema_path);
      m.add_output(out_dirty);
      m.add_output(out_record);
      m.finish(manifest_path(out_dirty));
      out << "corrupted " << s.record.count() << " of " << clean.rows() * clean.cols()
          << " cells in " << clean.rows() << " rows\n";
    };
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "Fit a model on a (possibly dirty) table");
  TrainArgs targs;
  std::string log_path;
  train_cmd->add_option("--input", input)->required();
  train_cmd->add_option("--schema", schema_path)->required();
  train_cmd->add_option("--model", targs.model, "vae | rvae-cvi | rvae-avi | marginal")
      ->capture_default_str();
  add_train_options(train_cmd, targs);
  train_cmd->add_option("--seed", seed)->capture_default_str();
  train_cmd->add_option("--threads", threads, "Marginal baseline: features fitted in parallel")
      ->capture_default_str();
  train_cmd->add_option("--out", out_path, "Checkpoint path")->required();
  train_cmd->add_option("--log", log_path, "Training log CSV (default <out>.log.csv)");
  train_cmd->callback([&] {
    action = [&] {
      targs.config.seed = seed;
      const TableSchema schema = TableSchema::load(schema_path);
      RunManifest m("train", argv);
      m.add_seed("seed", seed);
      m.add_input(input);
      m.add_input(schema_path);
      if (targs.model == "marginal") {
        if (targs.max_components < 1) throw ConfigError("--max-components must be >= 1");
        const MarginalModel model = fit_marginals(load_csv(input, schema), gmm_options(targs), threads);
        save_marginal(model, out_path);
        m.set_config({{"model", "marginal"}, {"max_components", targs.max_components}});
        m.add_output(out_path);
        m.finish(manifest_path(out_path));
        out << "fitted marginal baseline on " << model.rows << " rows\n";
        return;
      }
      targs.config.kind = parse_model_kind(targs.model);
      targs.config.validate();
      const MixedTable data = standardize(load_csv(input, schema));
      const TrainResult result = train(data, targs.config);
      save_model(result.model, out_path);
      if (log_path.empty()) log_path = out_path + ".log.csv";
      save_stream(log_path, [&](std::ostream& o) { result.log.write_csv(o); });
      m.set_config(targs.config.to_json());
      m.add_output(out_path);
      m.add_output(log_path);
      m.finish(manifest_path(out_path));
      out << "trained " << targs.model << " for " << targs.config.epochs << " epochs, final mean ELBO "
          << csv::format_double(result.log.epochs.back().mean_elbo) << '\n';
    };
  });

  // score
  auto* score_cmd = app.add_subcommand("score", "Cell and row outlier scores");
  std::string model_path, rule_text = "nll";
  score_cmd->add_option("--model", model_path, "Checkpoint")->required();
  score_cmd->add_option("--input", input)->required();
  score_cmd->add_option("--schema", schema_path)->required();
  score_cmd->add_option("--rule", rule_text, "nll | pi")->capture_default_str();
  score_cmd->add_option("--seed", seed)->capture_default_str();
  score_cmd->add_option("--threads", threads)->capture_default_str();
  score_cmd->add_option("--out", out_path, "Score CSV")->required();
  score_cmd->callback([&] {
    action = [&] {
      const ScoreRule rule = parse_score_rule(rule_text);
      const TableSchema schema = TableSchema::load(schema_path);
      const LoadedModel model = load_any_model(model_path, schema);
      const MixedTable table = load_csv(input, schema);
      ScoreReport report;
      if (model.marginal) {
        if (rule == ScoreRule::kPi) {
          throw UnsupportedOperation("the pi rule is undefined for the marginal baseline");
        }
        report = marginal_score(*model.marginal, table);
      } else {
        report = score(*model.rvae, table, rule, {seed, threads});
      }
      save_stream(out_path, [&](std::ostream& o) { write_scores(o, schema, report); });
      RunManifest m("score", argv);
      m.set_config({{"rule", rule_text}, {"model_kind", model.kind()}, {"threads", threads}});
      m.add_seed("seed", seed);
      m.add_input(model_path);
      m.add_input(input);
      m.add_input(schema_path);
      m.add_output(out_path);
      m.finish(manifest_path(out_path));
      out << "scored " << table.rows() << " rows with the " << rule_text << " rule\n";
    };
  });

  // repair
  auto* repair_cmd = app.add_subcommand("repair", "Repair cells with a trained model");
  std::string method_text = "map", simplex_path, record_path;
  RepairOptions ropts;
  repair_cmd->add_option("--model", model_path, "Checkpoint")->required();
  repair_cmd->add_option("--input", input)->required();
  repair_cmd->add_option("--schema", schema_path)->required();
  repair_cmd->add_option("--method", method_text, "map | one-stage | two-stage")
      ->capture_default_str();
  repair_cmd->add_option("--gibbs-iters", ropts.gibbs_iters)->capture_default_str();
  repair_cmd->add_flag("--sample-latent", ropts.sample_latent,
                       "MAP: sample z from the posterior instead of its mean");
  repair_cmd->add_option("--record", record_path,
                         "Marginal baseline: repair only the recorded cells");
  repair_cmd->add_option("--seed", seed)->capture_default_str();
  repair_cmd->add_option("--threads", threads)->capture_default_str();
  repair_cmd->add_option("--out", out_path, "Repaired CSV")->required();
  repair_cmd->add_option("--out-simplex", simplex_path, "Simplex CSV (default <out>.simplex.csv)");
  repair_cmd->callback([&] {
    action = [&] {
      const TableSchema schema = TableSchema::load(schema_path);
      const LoadedModel model = load_any_model(model_path, schema);
      const MixedTable table = load_csv(input, schema);
      ropts.seed = seed;
      ropts.threads = threads;
      RepairResult result;
      std::optional<CorruptionRecord> record;
      if (!record_path.empty()) record = CorruptionRecord::load(record_path, schema);
      if (model.marginal) {
        result = marginal_repair(*model.marginal, table, record ? &record->mask : nullptr);
      } else {
        switch (parse_repair_method(method_text)) {
          case RepairMethod::kMap:
            result = repair_map(*model.rvae, table, ropts);
            break;
          case RepairMethod::kOneStage:
            result = repair_one_stage(*model.rvae, table, ropts);
            break;
          default:
            result = repair_two_stage(*model.rvae, table, ropts);
            break;
        }
      }
      if (simplex_path.empty()) simplex_path = out_path + ".simplex.csv";
      save_csv(out_path, result.in_original_units());
      save_stream(simplex_path, [&](std::ostream& o) { write_simplex(o, schema, result.simplex); });
      RunManifest m("repair", argv);
      m.set_config({{"method", model.marginal ? "marginal" : method_text},
                    {"model_kind", model.kind()},
                    {"gibbs_iters", ropts.gibbs_iters},
                    {"sample_latent", ropts.sample_latent},
                    {"threads", threads}});
      m.add_seed("seed", seed);
      m.add_input(model_path);
      m.add_input(input);
      m.add_input(schema_path);
      if (record) m.add_input(record_path);
      m.add_output(out_path);
      m.add_output(simplex_path);
      m.finish(manifest_path(out_path));
      out << "repaired " << table.rows() << " rows with " << to_string(result.method) << '\n';
    };
  });

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Detection and repair metrics against a record");
  std::string dirty_path, scores_path, repair_path, csv_path;
  eval_cmd->add_option("--schema", schema_path)->required();
  eval_cmd->add_option("--dirty", dirty_path, "Corrupted CSV the model saw")->required();
  eval_cmd->add_option("--record", record_path)->required();
  eval_cmd->add_option("--scores", scores_path, "Score CSV");
  eval_cmd->add_option("--repair", repair_path, "Repaired CSV");
  eval_cmd->add_option("--simplex", simplex_path, "Simplex CSV");
  eval_cmd->add_option("--out", out_path, "Report JSON")->required();
  eval_cmd->add_option("--csv", csv_path, "Also write a flat CSV report");
  eval_cmd->add_option("--threads", threads, "Accepted for uniformity; evaluation is serial");
  eval_cmd->callback([&] {
    action = [&] {
      if (scores_path.empty() && repair_path.empty() && simplex_path.empty()) {
        throw ConfigError("nothing to evaluate: give --scores and/or --repair/--simplex");
      }
      const TableSchema schema = TableSchema::load(schema_path);
      const MixedTable dirty = load_csv(dirty_path, schema);
      const CorruptionRecord record = CorruptionRecord::load(record_path, schema);
      RunManifest m("evaluate", argv);
      m.add_input(schema_path);
      m.add_input(dirty_path);
      m.add_input(record_path);
      EvalInputs inputs;
      std::optional<ScoreReport> scores;
      std::optional<MixedTable> repaired;
      std::optional<std::vector<Matrix>> simplex;
      if (!scores_path.empty()) {
        scores = read_scores(scores_path, schema, dirty.rows());
        inputs.cell_scores = &scores->cell;
        inputs.row_scores = &scores->row;
        m.add_input(scores_path);
      }
      if (!repair_path.empty()) {
        repaired = load_csv(repair_path, schema);
        inputs.repaired = &*repaired;
        m.add_input(repair_path);
      }
      if (!simplex_path.empty()) {
        simplex = read_simplex(simplex_path, schema, dirty.rows());
        inputs.simplex = &*simplex;
        m.add_input(simplex_path);
      }
      const EvalReport report = evaluate(dirty, record, inputs);
      csv::write_text_file(out_path, report.to_json().dump(2) + "\n");
      m.add_output(out_path);
      if (!csv_path.empty()) {
        save_stream(csv_path, [&](std::ostream& o) { report.write_csv(o); });
        m.add_output(csv_path);
      }
      m.finish(manifest_path(out_path));
      out << "row AVPR " << optional_text(report.row_avpr) << ", cell AVPR "
          << optional_text(report.cell_avpr_macro) << ", SMSE " << optional_text(report.smse_real)
          << ", Brier " << optional_text(report.brier_categorical) << '\n';
    };
  });

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "Sweep row-corruption levels and tabulate metrics");
  TrainArgs eargs;
  std::string fractions_text, models_text = "rvae-cvi,vae,marginal";
  std::size_t repeats = 1;
  exp_cmd->add_option("--input", input, "Clean CSV")->required();
  exp_cmd->add_option("--schema", schema_path)->required();
  exp_cmd->add_option("--noise", noise_text)->capture_default_str();
  exp_cmd->add_option("--fractions", fractions_text, "Comma-separated row fractions")
      ->default_str("0.01,0.05,0.1,0.2,0.5");
  exp_cmd->add_option("--models", models_text, "Comma-separated model kinds")->capture_default_str();
  exp_cmd->add_option("--repeats", repeats, "Seeds per level (seed, seed+1, ...)")
      ->capture_default_str();
  add_train_options(exp_cmd, eargs);
  exp_cmd->add_option("--seed", seed)->capture_default_str();
  exp_cmd->add_option("--threads", threads)->capture_default_str();
  exp_cmd->add_option("--out", out_path, "Aggregate CSV")->required();
  exp_cmd->callback([&] {
    action = [&] {
      const auto fractions = fractions_text.empty() ? kDefaultFractions : parse_fraction_list(fractions_text);
      for (double f : fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("row fraction must be positive and at most 1");
      }
      const auto models = split_list(models_text);
      for (const auto& name : models) {
        if (name != "marginal") parse_model_kind(name);
      }
      if (repeats < 1) throw ConfigError("--repeats must be >= 1");
      const NoiseSpec noise = NoiseSpec::parse(noise_text);
      eargs.config.kind = ModelKind::kRvaeCvi;
      eargs.config.validate();
      const TableSchema schema = TableSchema::load(schema_path);
      const MixedTable clean = load_csv(input, schema);

      struct Sum {
        std::size_t runs = 0;
        std::map<std::string, std::pair<double, std::size_t>> metric;
        void add(const std::string& name, const std::optional<double>& v) {
          if (!v) return;
          metric[name].first += *v;
          metric[name].second += 1;
        }
      };
      std::map<std::tuple<double, std::string, std::string>, Sum> table;
      for (double f : fractions) {
        for (std::size_t r = 0; r < repeats; ++r) {
          const std::uint64_t run_seed = seed + r;
          const Scenario s = make_scenario(clean, f, noise, run_seed);
          for (const auto& name : models) {
            for (const auto& [scores, repaired] : run_model(name, s.dirty, s.record, eargs, run_seed, threads)) {
              EvalInputs inputs;
              inputs.cell_scores = &scores.cell;
              inputs.row_scores = &scores.row;
              inputs.repaired = &repaired.repaired;
              inputs.simplex = &repaired.simplex;
              const EvalReport e = evaluate(s.dirty, s.record, inputs);
              Sum& acc = table[{f, name, to_string(scores.rule)}];
              acc.runs += 1;
              acc.add("row_avpr", e.row_avpr);
              acc.add("cell_avpr", e.cell_avpr_macro);
              acc.add("cell_avpr_real", e.cell_avpr_real);
              acc.add("cell_avpr_categorical", e.cell_avpr_categorical);
              acc.add("smse_real", e.smse_real);
              acc.add("brier_categorical", e.brier_categorical);
            }
            out << "row fraction " << f << ", seed " << run_seed << ": " << name << " done\n";
          }
        }
      }
      const std::vector<std::string> metrics{"row_avpr",  "cell_avpr",  "cell_avpr_real",
                                             "cell_avpr_categorical", "smse_real", "brier_categorical"};
      save_stream(out_path, [&](std::ostream& o) {
        csv::Record header{"row_fraction", "model", "rule", "runs"};
        header.insert(header.end(), metrics.begin(), metrics.end());
        csv::write_record(o, header);
        for (const auto& [key, acc] : table) {
          csv::Record row{csv::format_double(std::get<0>(key)), std::get<1>(key), std::get<2>(key),
                          std::to_string(acc.runs)};
          for (const auto& name : metrics) {
            const auto it = acc.metric.find(name);
            row.push_back(it == acc.metric.end()
                              ? std::string()
                              : csv::format_double(it->second.first / static_cast<double>(it->second.second)));
          }
          csv::write_record(o, row);
        }
      });
      RunManifest m("experiment", argv);
      nlohmann::json config = eargs.config.to_json();
      config.erase("model");
      config.erase("seed");
      config["models"] = models;
      config["fractions"] = fractions;
      config["noise"] = noise.to_string();
      config["repeats"] = repeats;
      config["max_components"] = eargs.max_components;
      m.set_config(config);
      m.add_seed("seed", seed);
      m.add_input(input);
      m.add_input(schema_path);
      m.add_output(out_path);
      m.finish(manifest_path(out_path));
    };
  });

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write the built-in synthetic dataset");
  SyntheticOptions sopts;
  std::string out_schema;
  synth_cmd->add_option("--rows", sopts.rows)->capture_default_str();
  synth_cmd->add_option("--seed", seed)->capture_default_str();
  synth_cmd->add_option("--out", out_path, "Data CSV")->required();
  synth_cmd->add_option("--out-schema", out_schema, "Schema JSON")->required();
  synth_cmd->callback([&] {
    action = [&] {
      if (sopts.rows < 2) throw ConfigError("--rows must be >= 2");
      sopts.seed = seed;
      const MixedTable table = make_synthetic(sopts);
      save_csv(out_path, table);
      csv::write_text_file(out_schema, table.schema().to_json().dump(2) + "\n");
      RunManifest m("synth", argv);
      m.set_config({{"rows", sopts.rows}, {"label_noise", sopts.label_noise}});
      m.add_seed("seed", seed);
      m.add_output(out_path);
      m.add_output(out_schema);
      m.finish(manifest_path(out_path));
      out << "wrote " << table.rows() << " synthetic rows\n";
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (action) action();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitIo;
  } catch (const TrainingError& e) {
    err << "training error: " << e.what() << '\n';
    return kExitTraining;
  } catch (const SchemaMismatch& e) {
    err << "schema mismatch: " << e.what() << '\n';
    return kExitSchema;
  } catch (const UnsupportedOperation& e) {
    err << "unsupported: " << e.what() << '\n';
    return kExitUnsupported;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace rvae::cli
