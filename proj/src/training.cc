#include "rvae/training.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "rvae/csv.h"
#include "rvae/error.h"

namespace rvae {

namespace {

constexpr const char* kModelContainerKind = "rvae-model";

GateMode gate_mode(ModelKind kind) {
  switch (kind) {
    case ModelKind::kVae:
      return GateMode::kNone;
    case ModelKind::kRvaeCvi:
      return GateMode::kCoordinate;
    case ModelKind::kRvaeAvi:
      return GateMode::kAmortized;
  }
  return GateMode::kNone;
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kVae:
      return "vae";
    case ModelKind::kRvaeCvi:
      return "rvae-cvi";
    case ModelKind::kRvaeAvi:
      return "rvae-avi";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& text) {
  if (text == "vae") return ModelKind::kVae;
  if (text == "rvae-cvi") return ModelKind::kRvaeCvi;
  if (text == "rvae-avi") return ModelKind::kRvaeAvi;
  throw ConfigError("unknown model kind '" + text + "' (expected vae, rvae-cvi or rvae-avi)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be positive");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (!(outlier_scale > 1.0) || !std::isfinite(outlier_scale)) {
    throw ConfigError("outlier scale S must be > 1");
  }
  if (latent < 1 || hidden < 1 || embedding_dim < 1) {
    throw ConfigError("latent, hidden and embedding sizes must be >= 1");
  }
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ConfigError("l2 coefficient must be >= 0");
  if (mc_samples < 1) throw ConfigError("Monte Carlo sample count must be >= 1");
}

ModelShape TrainConfig::shape() const {
  ModelShape s;
  s.embedding_dim = embedding_dim;
  s.hidden = hidden;
  s.latent = latent;
  s.pi_encoder = kind == ModelKind::kRvaeAvi;
  return s;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"model", to_string(kind)},   {"epochs", epochs},
          {"learning_rate", learning_rate}, {"batch_size", batch_size},
          {"alpha", alpha},             {"outlier_scale", outlier_scale},
          {"latent", latent},           {"hidden", hidden},
          {"embedding_dim", embedding_dim}, {"l2", l2},
          {"mc_samples", mc_samples},   {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) {
  TrainConfig c;
  try {
    c.kind = parse_model_kind(doc.at("model").get<std::string>());
    c.epochs = doc.at("epochs").get<int>();
    c.learning_rate = doc.at("learning_rate").get<double>();
    c.batch_size = doc.at("batch_size").get<std::size_t>();
    c.alpha = doc.at("alpha").get<double>();
    c.outlier_scale = doc.at("outlier_scale").get<double>();
    c.latent = doc.at("latent").get<std::size_t>();
    c.hidden = doc.at("hidden").get<std::size_t>();
    c.embedding_dim = doc.at("embedding_dim").get<std::size_t>();
    c.l2 = doc.at("l2").get<double>();
    c.mc_samples = doc.at("mc_samples").get<std::size_t>();
    c.seed = doc.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed training config: ") + e.what());
  }
  return c;
}

void TrainLog::write_csv(std::ostream& out) const {
  out << "epoch,mean_elbo,mean_pi,seconds\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << csv::format_double(e.mean_elbo) << ','
        << (std::isnan(e.mean_pi) ? std::string() : csv::format_double(e.mean_pi)) << ','
        << csv::format_double(e.seconds) << '\n';
  }
}

RvaeModel init_model(const TableSchema& schema, const Standardization& stats,
                     const TrainConfig& config) {
  config.validate();
  Rng rng(Rng::derive(config.seed, 0));
  return RvaeModel{schema, config, stats, ModelParams::init(schema, config.shape(), rng)};
}

TrainLog train_model(RvaeModel& model, const MixedTable& table) {
  const TrainConfig& config = model.config;
  config.validate();
  if (!table.standardized()) throw ConfigError("training requires a standardized table");
  if (const auto diff = model.schema.describe_mismatch(table.schema()); !diff.empty()) {
    throw SchemaMismatch("table does not match model schema: " + diff);
  }

  const auto start = std::chrono::steady_clock::now();
  Rng rng(Rng::derive(config.seed, 1));
  Adam optimizer(AdamOptions{.learning_rate = config.learning_rate, .weight_decay = config.l2});

  ModelParams& params = model.params;
  ModelParams grads = params.zeros_like();
  const auto param_refs = params.tensors(model.schema);
  const auto grad_refs = grads.tensors(model.schema);

  ObjectiveSpec spec;
  spec.mode = gate_mode(config.kind);
  spec.alpha = config.alpha;
  spec.outliers = model.outliers();

  const std::size_t N = table.rows();
  const auto K = static_cast<Eigen::Index>(params.latent());
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainLog log;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng.engine());
    double elbo_sum = 0.0;
    double pi_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < N; begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(N, begin + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const auto M = static_cast<Eigen::Index>(rows.size());
      std::vector<Matrix> noise;
      for (std::size_t s = 0; s < config.mc_samples; ++s) noise.push_back(rng.normal_matrix(M, K));

      grads.set_zero();
      const BatchObjective obj = evaluate_batch(params, table, rows, noise, spec, &grads);
      if (!std::isfinite(obj.loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      try {
        optimizer.step(param_refs, grad_refs);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(batch_index));
      }
      params.embeddings.renormalize();
      elbo_sum += obj.row_elbo.sum();
      if (obj.pi.size() > 0) pi_sum += obj.pi.sum();
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_elbo = elbo_sum / static_cast<double>(N);
    stats.mean_pi = spec.mode == GateMode::kNone
                        ? std::numeric_limits<double>::quiet_NaN()
                        : pi_sum / static_cast<double>(N * table.cols());
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    log.epochs.push_back(stats);
  }
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

TrainResult train(const MixedTable& table, const TrainConfig& config) {
  if (!table.standardized()) throw ConfigError("training requires a standardized table");
  TrainResult result{init_model(table.schema(), *table.standardization(), config), {}};
  result.log = train_model(result.model, table);
  return result;
}

Container to_container(const RvaeModel& model) {
  Container c;
  c.metadata = {{"kind", kModelContainerKind},
                {"schema", model.schema.to_json()},
                {"config", model.config.to_json()},
                {"seed", model.config.seed}};
  RvaeModel copy = model;
  for (const auto& ref : copy.params.tensors(copy.schema)) c.tensors.push_back({ref.name, *ref.value});
  const auto D = static_cast<Eigen::Index>(model.schema.size());
  c.tensors.push_back({"standardization.mean",
                       Eigen::Map<const Matrix>(model.stats.mean.data(), 1, D)});
  c.tensors.push_back({"standardization.std",
                       Eigen::Map<const Matrix>(model.stats.std_dev.data(), 1, D)});
  return c;
}

RvaeModel from_container(const Container& container) {
  if (container.metadata.value("kind", "") != kModelContainerKind) {
    throw IoError("checkpoint does not hold an RVAE/VAE model");
  }
  const TableSchema schema = TableSchema::from_json(container.metadata.at("schema"));
  const TrainConfig config = TrainConfig::from_json(container.metadata.at("config"));
  RvaeModel model = init_model(schema, {}, config);
  for (const auto& ref : model.params.tensors(model.schema)) {
    const Matrix& stored = container.tensor(ref.name);
    if (stored.rows() != ref.value->rows() || stored.cols() != ref.value->cols()) {
      throw IoError("tensor '" + ref.name + "' has the wrong shape");
    }
    *ref.value = stored;
  }
  const Matrix& mean = container.tensor("standardization.mean");
  const Matrix& sd = container.tensor("standardization.std");
  if (mean.size() != static_cast<Eigen::Index>(schema.size()) || sd.size() != mean.size()) {
    throw IoError("standardization tensors have the wrong shape");
  }
  model.stats.mean.assign(mean.data(), mean.data() + mean.size());
  model.stats.std_dev.assign(sd.data(), sd.data() + sd.size());
  return model;
}

void save_model(const RvaeModel& model, const std::string& path) {
  write_container(path, to_container(model));
}

RvaeModel load_model(const std::string& path) { return from_container(read_container(path)); }

RvaeModel load_model(const std::string& path, const TableSchema& expected) {
  RvaeModel model = load_model(path);
  if (const auto diff = model.schema.describe_mismatch(expected); !diff.empty()) {
    throw SchemaMismatch("checkpoint schema mismatch: " + diff);
  }
  return model;
}

}  // namespace rvae
