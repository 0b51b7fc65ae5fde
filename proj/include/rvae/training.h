#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvae/checkpoint.h"
#include "rvae/generative.h"
#include "rvae/table.h"

namespace rvae {

enum class ModelKind { kVae, kRvaeCvi, kRvaeAvi };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

struct TrainConfig {
  ModelKind kind = ModelKind::kRvaeCvi;
  int epochs = 100;
  double learning_rate = 1e-3;
  std::size_t batch_size = 150;
  double alpha = 0.95;
  double outlier_scale = 2.0;  // S, standard deviation of the broad Gaussian
  std::size_t latent = 20;
  std::size_t hidden = 400;
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  double l2 = 0.0;
  std::size_t mc_samples = 1;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
  ModelShape shape() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& doc);
};

struct RvaeModel {
  TableSchema schema;
  TrainConfig config;
  Standardization stats;
  ModelParams params;

  ModelKind kind() const { return config.kind; }
  OutlierModel outliers() const { return OutlierModel{config.outlier_scale}; }
};

struct EpochStats {
  int epoch = 0;
  double mean_elbo = 0.0;
  double mean_pi = 0.0;  // NaN for the plain VAE
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  double wall_seconds = 0.0;

  void write_csv(std::ostream& out) const;
};

struct TrainResult {
  RvaeModel model;
  TrainLog log;
};

// Freshly initialized model (deterministic in config.seed).
RvaeModel init_model(const TableSchema& schema, const Standardization& stats,
                     const TrainConfig& config);

// Mini-batch training on a standardized table. Each step evaluates the
// likelihoods on one reparameterized sample, sets the gates (coordinate
// update, pi-encoder, or none for the VAE) and takes one Adam step on the
// negative ELBO. Embedding rows are renormalized after every step.
TrainResult train(const MixedTable& table, const TrainConfig& config);

// Continues training an initialized model for config.epochs.
TrainLog train_model(RvaeModel& model, const MixedTable& table);

Container to_container(const RvaeModel& model);
RvaeModel from_container(const Container& container);

void save_model(const RvaeModel& model, const std::string& path);
RvaeModel load_model(const std::string& path);
// Also checks the stored schema against `expected` (SchemaMismatch).
RvaeModel load_model(const std::string& path, const TableSchema& expected);

}  // namespace rvae
