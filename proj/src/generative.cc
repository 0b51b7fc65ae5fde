#include "rvae/generative.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rvae/error.h"

namespace rvae {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

double logit(double p) { return std::log(p) - std::log1p(-p); }

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
}

bool log_sigma_active(double raw) { return raw >= kLogSigmaMin && raw <= kLogSigmaMax; }

// x ln(x / a) with 0 ln 0 = 0.
double xlogx_over(double x, double a) { return x > 0.0 ? x * std::log(x / a) : 0.0; }

}  // namespace

OutputLayout::OutputLayout(const TableSchema& schema) {
  int next_real = 0;
  for (const auto& f : schema.features()) {
    offset.push_back(width);
    if (f.is_real()) {
      real_slot.push_back(next_real++);
      width += 1;
    } else {
      real_slot.push_back(-1);
      width += static_cast<Eigen::Index>(f.cardinality());
    }
  }
}

ModelParams ModelParams::init(const TableSchema& schema, const ModelShape& shape, Rng& rng) {
  if (shape.hidden == 0 || shape.latent == 0 || shape.embedding_dim == 0) {
    throw ConfigError("model sizes must be positive");
  }
  const std::size_t in = encoded_width(schema, shape.embedding_dim);
  const OutputLayout layout(schema);
  const Activation acts[] = {Activation::kRelu, Activation::kIdentity};

  ModelParams p;
  p.embeddings = EmbeddingBank::random_unit(schema, shape.embedding_dim, rng);
  const std::size_t enc_sizes[] = {in, shape.hidden, 2 * shape.latent};
  p.encoder = DenseNet::he_initialized(enc_sizes, acts, rng);
  const std::size_t dec_sizes[] = {shape.latent, shape.hidden,
                                   static_cast<std::size_t>(layout.width)};
  p.decoder = DenseNet::he_initialized(dec_sizes, acts, rng);
  p.log_sigma = Matrix::Zero(1, static_cast<Eigen::Index>(schema.num_real()));
  if (shape.pi_encoder) {
    const std::size_t pi_sizes[] = {in, shape.hidden, schema.size()};
    p.pi_encoder = DenseNet::he_initialized(pi_sizes, acts, rng);
  }
  return p;
}

ModelShape ModelParams::shape() const {
  ModelShape s;
  s.embedding_dim = embeddings.dim() > 0 ? embeddings.dim() : kDefaultEmbeddingDim;
  s.hidden = static_cast<std::size_t>(encoder.layers().front().weight.cols());
  s.latent = latent();
  s.pi_encoder = pi_encoder.has_value();
  return s;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out = *this;
  out.set_zero();
  return out;
}

void ModelParams::set_zero() {
  encoder.set_zero();
  decoder.set_zero();
  log_sigma.setZero();
  embeddings.set_zero();
  if (pi_encoder) pi_encoder->set_zero();
}

bool ModelParams::all_finite() const {
  return encoder.all_finite() && decoder.all_finite() && log_sigma.allFinite() &&
         embeddings.all_finite() && (!pi_encoder || pi_encoder->all_finite());
}

std::vector<TensorRef> ModelParams::tensors(const TableSchema& schema) {
  std::vector<TensorRef> out;
  encoder.append_tensors("encoder", out);
  decoder.append_tensors("decoder", out);
  out.push_back({"decoder.log_sigma", &log_sigma});
  embeddings.append_tensors(schema, "embedding", out);
  if (pi_encoder) pi_encoder->append_tensors("pi_encoder", out);
  return out;
}

double gaussian_log_density(double x, double mean, double std_dev) {
  const double u = (x - mean) / std_dev;
  return -kHalfLog2Pi - std::log(std_dev) - 0.5 * u * u;
}

double clamp_log_sigma(double raw) { return std::clamp(raw, kLogSigmaMin, kLogSigmaMax); }

double log_lik_clean(const ModelParams& params, const TableSchema& schema, const Vector& z,
                     double cell, std::size_t d) {
  const OutputLayout layout(schema);
  const Vector out = params.decoder.predict(z);
  const auto& f = schema[d];
  if (f.is_real()) {
    const double ls = clamp_log_sigma(params.log_sigma(0, layout.real_slot[d]));
    return gaussian_log_density(cell, out[layout.offset[d]], std::exp(ls));
  }
  const auto c = static_cast<Eigen::Index>(cell);
  const Vector logits = out.segment(layout.offset[d], static_cast<Eigen::Index>(f.cardinality()));
  return log_softmax(logits)[c];
}

double log_lik_outlier(const OutlierModel& outliers, const FeatureSpec& feature, double cell) {
  if (feature.is_real()) return gaussian_log_density(cell, 0.0, outliers.real_scale);
  return -std::log(static_cast<double>(feature.cardinality()));
}

double kl_gaussian(const Vector& mu, const Vector& sigma) {
  double kl = 0.0;
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    const double s2 = sigma[k] * sigma[k];
    kl += mu[k] * mu[k] + s2 - 1.0 - std::log(s2);
  }
  return 0.5 * kl;
}

double kl_bernoulli(double pi, double alpha) {
  return xlogx_over(pi, alpha) + xlogx_over(1.0 - pi, 1.0 - alpha);
}

double pi_update(double log_ratio, double alpha) {
  check_alpha(alpha);
  const double r = std::clamp(log_ratio, -kPiLogRatioClamp, kPiLogRatioClamp);
  // sigmoid(r + logit(alpha)), written to return alpha exactly at r = 0.
  return alpha * std::exp(r) / (1.0 + alpha * std::expm1(r));
}

Posterior encode_posterior(const ModelParams& params, const Matrix& encoded) {
  const Matrix h = params.encoder.predict(encoded);
  const Eigen::Index K = static_cast<Eigen::Index>(params.latent());
  Posterior post;
  post.mean = h.leftCols(K);
  post.std_dev = h.rightCols(K).unaryExpr([](double v) { return std::exp(clamp_log_sigma(v)); });
  return post;
}

Matrix decode_outputs(const ModelParams& params, const Matrix& z) {
  return params.decoder.predict(z);
}

Matrix clean_log_lik(const ModelParams& params, const MixedTable& table,
                     std::span<const std::size_t> rows, const Matrix& outputs) {
  const auto& schema = table.schema();
  const OutputLayout layout(schema);
  const auto M = static_cast<Eigen::Index>(rows.size());
  const auto D = static_cast<Eigen::Index>(schema.size());
  Matrix ll(M, D);
  for (std::size_t d = 0; d < schema.size(); ++d) {
    const auto& f = schema[d];
    const auto col = static_cast<Eigen::Index>(d);
    if (f.is_real()) {
      const double sd = std::exp(clamp_log_sigma(params.log_sigma(0, layout.real_slot[d])));
      for (Eigen::Index i = 0; i < M; ++i) {
        ll(i, col) = gaussian_log_density(table.real(rows[static_cast<std::size_t>(i)], d),
                                          outputs(i, layout.offset[d]), sd);
      }
    } else {
      const auto C = static_cast<Eigen::Index>(f.cardinality());
      for (Eigen::Index i = 0; i < M; ++i) {
        const auto block = outputs.block(i, layout.offset[d], 1, C);
        const double m = block.maxCoeff();
        const double lse = m + std::log((block.array() - m).exp().sum());
        const auto c = static_cast<Eigen::Index>(table.category(rows[static_cast<std::size_t>(i)], d));
        ll(i, col) = block(0, c) - lse;
      }
    }
  }
  return ll;
}

Matrix outlier_log_lik(const MixedTable& table, std::span<const std::size_t> rows,
                       const OutlierModel& outliers) {
  const auto& schema = table.schema();
  Matrix ll(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(schema.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t d = 0; d < schema.size(); ++d) {
      ll(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) =
          log_lik_outlier(outliers, schema[d], table.value(rows[i], d));
    }
  }
  return ll;
}

Matrix gate_probabilities(const Matrix& clean_ll, const Matrix& outlier_ll, double alpha) {
  check_alpha(alpha);
  Matrix pi(clean_ll.rows(), clean_ll.cols());
  for (Eigen::Index i = 0; i < pi.rows(); ++i) {
    for (Eigen::Index d = 0; d < pi.cols(); ++d) {
      pi(i, d) = pi_update(clean_ll(i, d) - outlier_ll(i, d), alpha);
    }
  }
  return pi;
}

BatchObjective evaluate_batch(const ModelParams& params, const MixedTable& table,
                              std::span<const std::size_t> rows, std::span<const Matrix> noise,
                              const ObjectiveSpec& spec, ModelParams* grads) {
  const auto& schema = table.schema();
  const OutputLayout layout(schema);
  const auto M = static_cast<Eigen::Index>(rows.size());
  const auto D = static_cast<Eigen::Index>(schema.size());
  const auto K = static_cast<Eigen::Index>(params.latent());
  const auto S = static_cast<Eigen::Index>(noise.size());
  if (M == 0) throw ConfigError("empty batch");
  if (S == 0) throw ConfigError("at least one Monte Carlo sample is required");
  for (const auto& eps : noise) {
    if (eps.rows() != M || eps.cols() != K) throw DataError("noise matrix has the wrong shape");
  }
  if (spec.mode != GateMode::kNone) check_alpha(spec.alpha);
  if (spec.mode == GateMode::kAmortized && !params.pi_encoder) {
    throw ConfigError("amortized gates need a pi-encoder");
  }
  if (spec.mode == GateMode::kFixed &&
      (spec.fixed_pi == nullptr || spec.fixed_pi->rows() != M || spec.fixed_pi->cols() != D)) {
    throw ConfigError("fixed gates must be an M x D matrix");
  }

  // Encoder and reparameterized samples, stacked sample-major: row s*M + i.
  const Matrix x = encode_rows(table, rows, params.embeddings);
  ForwardCache enc_cache;
  const Matrix h = params.encoder.forward(x, enc_cache);
  const Matrix mu = h.leftCols(K);
  const Matrix raw_ls = h.rightCols(K);
  const Matrix ls = raw_ls.unaryExpr([](double v) { return clamp_log_sigma(v); });
  const Matrix sd = ls.array().exp().matrix();

  Matrix z(S * M, K);
  for (Eigen::Index s = 0; s < S; ++s) {
    z.middleRows(s * M, M) = mu + sd.cwiseProduct(noise[static_cast<std::size_t>(s)]);
  }
  ForwardCache dec_cache;
  const Matrix out = params.decoder.forward(z, dec_cache);

  std::vector<std::size_t> stacked_rows;
  stacked_rows.reserve(static_cast<std::size_t>(S * M));
  for (Eigen::Index s = 0; s < S; ++s) stacked_rows.insert(stacked_rows.end(), rows.begin(), rows.end());
  const Matrix ll_samples = clean_log_lik(params, table, stacked_rows, out);

  BatchObjective obj;
  obj.clean_ll = Matrix::Zero(M, D);
  for (Eigen::Index s = 0; s < S; ++s) obj.clean_ll += ll_samples.middleRows(s * M, M);
  obj.clean_ll /= static_cast<double>(S);
  obj.outlier_ll = outlier_log_lik(table, rows, spec.outliers);

  obj.kl_latent = 0.5 * (mu.cwiseAbs2() + sd.cwiseAbs2() - 2.0 * ls).rowwise().sum();
  obj.kl_latent.array() -= 0.5 * static_cast<double>(K);

  ForwardCache pi_cache;
  Matrix gate_logits;
  switch (spec.mode) {
    case GateMode::kNone:
      break;
    case GateMode::kCoordinate:
      obj.pi = gate_probabilities(obj.clean_ll, obj.outlier_ll, spec.alpha);
      break;
    case GateMode::kAmortized:
      gate_logits = params.pi_encoder->forward(x, pi_cache);
      obj.pi = gate_logits.unaryExpr([](double u) { return sigmoid(u); });
      break;
    case GateMode::kFixed:
      obj.pi = *spec.fixed_pi;
      break;
  }

  obj.kl_gate = Vector::Zero(M);
  if (spec.mode == GateMode::kNone) {
    obj.row_elbo = obj.clean_ll.rowwise().sum() - obj.kl_latent;
  } else {
    const double log_a = std::log(spec.alpha);
    const double log_1ma = std::log1p(-spec.alpha);
    for (Eigen::Index i = 0; i < M; ++i) {
      double kl = 0.0;
      for (Eigen::Index d = 0; d < D; ++d) {
        if (spec.mode == GateMode::kAmortized) {
          // log pi and log(1 - pi) straight from the logit for stability.
          const double u = gate_logits(i, d);
          const double p = obj.pi(i, d);
          kl += p * (-softplus(-u) - log_a) + (1.0 - p) * (-softplus(u) - log_1ma);
        } else {
          kl += kl_bernoulli(obj.pi(i, d), spec.alpha);
        }
      }
      obj.kl_gate[i] = kl;
    }
    const Matrix mixed = obj.pi.cwiseProduct(obj.clean_ll) +
                         (Matrix::Ones(M, D) - obj.pi).cwiseProduct(obj.outlier_ll);
    obj.row_elbo = mixed.rowwise().sum() - obj.kl_latent - obj.kl_gate;
  }
  obj.loss = -obj.row_elbo.mean();

  if (grads == nullptr) return obj;

  // Gradients of loss = -(1/M) sum_n ELBO_n.
  const double w = 1.0 / static_cast<double>(M);
  const Matrix d_mean_ll =
      spec.mode == GateMode::kNone ? Matrix::Constant(M, D, -w) : Matrix(-w * obj.pi);

  Matrix d_out = Matrix::Zero(S * M, layout.width);
  for (std::size_t d = 0; d < schema.size(); ++d) {
    const auto& f = schema[d];
    const auto col = static_cast<Eigen::Index>(d);
    const Eigen::Index off = layout.offset[d];
    if (f.is_real()) {
      const int slot = layout.real_slot[d];
      const double raw = params.log_sigma(0, slot);
      const double sigma = std::exp(clamp_log_sigma(raw));
      double d_log_sigma = 0.0;
      for (Eigen::Index r = 0; r < S * M; ++r) {
        const Eigen::Index i = r % M;
        const double g = d_mean_ll(i, col) / static_cast<double>(S);
        const double u = (table.real(stacked_rows[static_cast<std::size_t>(r)], d) - out(r, off)) / sigma;
        d_out(r, off) = g * u / sigma;
        d_log_sigma += g * (u * u - 1.0);
      }
      if (log_sigma_active(raw)) grads->log_sigma(0, slot) += d_log_sigma;
    } else {
      const auto C = static_cast<Eigen::Index>(f.cardinality());
      for (Eigen::Index r = 0; r < S * M; ++r) {
        const Eigen::Index i = r % M;
        const double g = d_mean_ll(i, col) / static_cast<double>(S);
        const Vector p = softmax(out.block(r, off, 1, C).transpose());
        const auto c = static_cast<Eigen::Index>(table.category(stacked_rows[static_cast<std::size_t>(r)], d));
        d_out.block(r, off, 1, C) = -g * p.transpose();
        d_out(r, off + c) += g;
      }
    }
  }

  const Matrix d_z = params.decoder.backward(dec_cache, d_out, grads->decoder, true);
  Matrix d_mu = w * mu;
  Matrix d_ls = w * (sd.cwiseAbs2() - Matrix::Ones(M, K));
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto block = d_z.middleRows(s * M, M);
    d_mu += block;
    d_ls += block.cwiseProduct(noise[static_cast<std::size_t>(s)]).cwiseProduct(sd);
  }
  for (Eigen::Index i = 0; i < M; ++i) {
    for (Eigen::Index k = 0; k < K; ++k) {
      if (!log_sigma_active(raw_ls(i, k))) d_ls(i, k) = 0.0;
    }
  }
  Matrix d_h(M, 2 * K);
  d_h << d_mu, d_ls;

  const bool need_input = schema.num_categorical() > 0;
  Matrix d_x = params.encoder.backward(enc_cache, d_h, grads->encoder, need_input);

  if (spec.mode == GateMode::kAmortized) {
    const double logit_a = logit(spec.alpha);
    Matrix d_u(M, D);
    for (Eigen::Index i = 0; i < M; ++i) {
      for (Eigen::Index d = 0; d < D; ++d) {
        const double p = obj.pi(i, d);
        const double slope =
            (obj.clean_ll(i, d) - obj.outlier_ll(i, d)) - (gate_logits(i, d) - logit_a);
        d_u(i, d) = -w * p * (1.0 - p) * slope;
      }
    }
    Matrix d_x_pi = params.pi_encoder->backward(pi_cache, d_u, *grads->pi_encoder, need_input);
    if (need_input) d_x += d_x_pi;
  }
  if (need_input) accumulate_embedding_grads(table, rows, d_x, grads->embeddings);
  return obj;
}

double elbo_vae(const ModelParams& params, const MixedTable& table, std::size_t row, Rng& rng) {
  const std::size_t rows[] = {row};
  const Matrix eps = rng.normal_matrix(1, static_cast<Eigen::Index>(params.latent()));
  ObjectiveSpec spec;
  spec.mode = GateMode::kNone;
  return evaluate_batch(params, table, rows, std::span<const Matrix>(&eps, 1), spec).row_elbo[0];
}

double elbo_rvae(const ModelParams& params, const MixedTable& table, std::size_t row,
                 const Vector& pi, double alpha, const OutlierModel& outliers, Rng& rng) {
  if (static_cast<std::size_t>(pi.size()) != table.cols()) {
    throw DataError("gate vector length must equal the number of features");
  }
  for (Eigen::Index d = 0; d < pi.size(); ++d) {
    if (!(pi[d] >= 0.0 && pi[d] <= 1.0)) throw ConfigError("gate probabilities must lie in [0, 1]");
  }
  const std::size_t rows[] = {row};
  const Matrix eps = rng.normal_matrix(1, static_cast<Eigen::Index>(params.latent()));
  const Matrix fixed = pi.transpose();
  ObjectiveSpec spec;
  spec.mode = GateMode::kFixed;
  spec.alpha = alpha;
  spec.outliers = outliers;
  spec.fixed_pi = &fixed;
  return evaluate_batch(params, table, rows, std::span<const Matrix>(&eps, 1), spec).row_elbo[0];
}

}  // namespace rvae
