#pragma once

// Per-feature likelihoods, outlier components, KL terms and the two
// variational objectives (plain VAE and the robust gated mixture), with
// analytic gradients.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rvae/nn.h"
#include "rvae/table.h"

namespace rvae {

inline constexpr double kPiLogRatioClamp = 30.0;

// z-independent components that absorb outlier cells: a broad Gaussian
// N(0, std = real_scale) for standardized reals and a uniform distribution over
// the C_d categories for categoricals.
struct OutlierModel {
  double real_scale = 2.0;
};

struct ModelShape {
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  std::size_t hidden = 400;
  std::size_t latent = 20;
  bool pi_encoder = false;
};

// Column layout of the decoder output: one mean column per real feature and
// C_d logit columns per categorical feature, in schema order.
struct OutputLayout {
  explicit OutputLayout(const TableSchema& schema);

  std::vector<Eigen::Index> offset;  // first output column of feature d
  std::vector<int> real_slot;        // index into log_sigma, -1 for categoricals
  Eigen::Index width = 0;
};

// All learnable parameters.
//   encoder:    encoded row -> hidden (ReLU) -> [mu (K) | log std (K)]
//   decoder:    z -> hidden (ReLU) -> OutputLayout columns
//   log_sigma:  1 x (#real) per-feature log standard deviations
//   pi_encoder: encoded row -> hidden (ReLU) -> D gate logits (amortized only)
struct ModelParams {
  DenseNet encoder;
  DenseNet decoder;
  Matrix log_sigma;
  EmbeddingBank embeddings;
  std::optional<DenseNet> pi_encoder;

  static ModelParams init(const TableSchema& schema, const ModelShape& shape, Rng& rng);

  std::size_t latent() const { return decoder.input_size(); }
  ModelShape shape() const;
  ModelParams zeros_like() const;
  void set_zero();
  bool all_finite() const;

  // Every parameter tensor in a fixed order with stable names.
  std::vector<TensorRef> tensors(const TableSchema& schema);
};

// Clean component log-likelihood of one cell given decoder outputs for its
// row: Gaussian log-density for reals, log-softmax probability for
// categoricals.
double log_lik_clean(const ModelParams& params, const TableSchema& schema,
                     const Vector& z, double cell, std::size_t d);
double log_lik_outlier(const OutlierModel& outliers, const FeatureSpec& feature, double cell);

double gaussian_log_density(double x, double mean, double std_dev);

// 0.5 * sum(mu^2 + sigma^2 - 1 - ln sigma^2)
double kl_gaussian(const Vector& mu, const Vector& sigma);
// KL(Bernoulli(pi) || Bernoulli(alpha)) with 0 ln 0 = 0.
double kl_bernoulli(double pi, double alpha);
// Exact coordinate optimum of the gate: sigmoid(clamp(r) + logit(alpha)).
double pi_update(double log_ratio, double alpha);

double clamp_log_sigma(double raw);

struct Posterior {
  Matrix mean;     // M x K
  Matrix std_dev;  // M x K
};

Posterior encode_posterior(const ModelParams& params, const Matrix& encoded);
Matrix decode_outputs(const ModelParams& params, const Matrix& z);

// M x D clean log-likelihoods of table rows `rows` under decoder outputs
// (row i of `outputs` belongs to rows[i]).
Matrix clean_log_lik(const ModelParams& params, const MixedTable& table,
                     std::span<const std::size_t> rows, const Matrix& outputs);
Matrix outlier_log_lik(const MixedTable& table, std::span<const std::size_t> rows,
                       const OutlierModel& outliers);
// Elementwise pi_update over (clean - outlier).
Matrix gate_probabilities(const Matrix& clean_ll, const Matrix& outlier_ll, double alpha);

enum class GateMode {
  kNone,        // plain VAE objective
  kCoordinate,  // gates from the exact coordinate update, held constant
  kAmortized,   // gates from the pi-encoder, trained jointly
  kFixed,       // gates supplied by the caller
};

struct ObjectiveSpec {
  GateMode mode = GateMode::kNone;
  double alpha = 0.95;
  OutlierModel outliers;
  const Matrix* fixed_pi = nullptr;  // M x D, required for kFixed
};

struct BatchObjective {
  double loss = 0.0;   // -(1/M) * sum of row ELBOs
  Vector row_elbo;     // M
  Matrix clean_ll;     // M x D, Monte Carlo mean over samples
  Matrix outlier_ll;   // M x D
  Matrix pi;           // M x D; empty for kNone
  Vector kl_latent;    // M
  Vector kl_gate;      // M
};

// Evaluates the objective on table rows `rows` using one M x K standard
// normal matrix per Monte Carlo sample. When `grads` is non-null, gradients
// of `loss` are accumulated into it (it must be params.zeros_like() shaped).
// Under kCoordinate the gates are computed from the same samples and treated
// as constants.
BatchObjective evaluate_batch(const ModelParams& params, const MixedTable& table,
                              std::span<const std::size_t> rows,
                              std::span<const Matrix> noise, const ObjectiveSpec& spec,
                              ModelParams* grads = nullptr);

// Single-row ELBOs with one reparameterized sample drawn from `rng`.
double elbo_vae(const ModelParams& params, const MixedTable& table, std::size_t row, Rng& rng);
double elbo_rvae(const ModelParams& params, const MixedTable& table, std::size_t row,
                 const Vector& pi, double alpha, const OutlierModel& outliers, Rng& rng);

}  // namespace rvae
