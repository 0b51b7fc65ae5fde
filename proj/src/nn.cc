#include "rvae/nn.h"

#include <cmath>
#include <limits>

#include "rvae/error.h"

namespace rvae {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

double Rng::normal() { return normal_(engine_); }

double Rng::uniform() { return uniform_(engine_); }

double Rng::exponential() { return exponential_(engine_); }

bool Rng::bernoulli(double p) { return uniform() < p; }

std::size_t Rng::uniform_index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) {
    throw ConfigError("categorical draw needs a positive total weight");
  }
  const double u = uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

Matrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix out(rows, cols);
  // Fill row by row so a row's draws do not depend on the batch size.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = normal();
  }
  return out;
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

DenseNet::DenseNet(std::span<const std::size_t> sizes,
                   std::span<const Activation> activations) {
  if (sizes.size() < 2 || activations.size() != sizes.size() - 1) {
    throw ConfigError("DenseNet needs n+1 sizes and n activations");
  }
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    if (sizes[l] == 0 || sizes[l + 1] == 0) {
      throw ConfigError("DenseNet layer sizes must be positive");
    }
    DenseLayer layer;
    layer.weight = Matrix::Zero(static_cast<Eigen::Index>(sizes[l]),
                                static_cast<Eigen::Index>(sizes[l + 1]));
    layer.bias = Matrix::Zero(1, static_cast<Eigen::Index>(sizes[l + 1]));
    layer.activation = activations[l];
    layers_.push_back(std::move(layer));
  }
}

DenseNet DenseNet::he_initialized(std::span<const std::size_t> sizes,
                                  std::span<const Activation> activations,
                                  Rng& rng) {
  DenseNet net(sizes, activations);
  for (auto& layer : net.layers_) {
    const double scale = std::sqrt(2.0 / static_cast<double>(layer.weight.rows()));
    layer.weight = rng.normal_matrix(layer.weight.rows(), layer.weight.cols()) * scale;
  }
  return net;
}

std::size_t DenseNet::input_size() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.rows());
}

std::size_t DenseNet::output_size() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.cols());
}

void DenseNet::check_input(const Matrix& input) const {
  if (layers_.empty()) throw ConfigError("forward on an empty network");
  if (static_cast<std::size_t>(input.cols()) != input_size()) {
    throw DataError("network input has " + std::to_string(input.cols()) +
                    " columns, expected " + std::to_string(input_size()));
  }
}

Matrix DenseNet::forward(const Matrix& input, ForwardCache& cache) const {
  check_input(input);
  cache.activations.clear();
  cache.activations.reserve(layers_.size() + 1);
  cache.activations.push_back(input);
  for (const auto& layer : layers_) {
    Matrix out = cache.activations.back() * layer.weight;
    out.rowwise() += layer.bias.row(0);
    if (layer.activation == Activation::kRelu) out = out.cwiseMax(0.0);
    cache.activations.push_back(std::move(out));
  }
  return cache.activations.back();
}

Matrix DenseNet::predict(const Matrix& input) const {
  check_input(input);
  Matrix x = input;
  for (const auto& layer : layers_) {
    Matrix out = x * layer.weight;
    out.rowwise() += layer.bias.row(0);
    if (layer.activation == Activation::kRelu) out = out.cwiseMax(0.0);
    x = std::move(out);
  }
  return x;
}

Vector DenseNet::predict(const Vector& input) const {
  return predict(Matrix(input.transpose())).row(0).transpose();
}

Matrix DenseNet::backward(const ForwardCache& cache, const Matrix& upstream,
                          DenseNet& grads, bool need_input_grad) const {
  if (cache.activations.size() != layers_.size() + 1) {
    throw ConfigError("backward called without a matching forward pass");
  }
  if (grads.layers_.size() != layers_.size()) {
    throw ConfigError("gradient network shape does not match");
  }
  const Matrix& output = cache.activations.back();
  if (upstream.rows() != output.rows() || upstream.cols() != output.cols()) {
    throw DataError("upstream gradient shape does not match network output");
  }
  Matrix delta = upstream;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const DenseLayer& layer = layers_[i];
    if (layer.activation == Activation::kRelu) {
      delta = delta.cwiseProduct(
          (cache.activations[i + 1].array() > 0.0).cast<double>().matrix());
    }
    grads.layers_[i].weight.noalias() += cache.activations[i].transpose() * delta;
    grads.layers_[i].bias += delta.colwise().sum();
    if (i > 0 || need_input_grad) {
      Matrix next = delta * layer.weight.transpose();
      delta = std::move(next);
    }
  }
  if (!need_input_grad) return Matrix();
  return delta;
}

DenseNet DenseNet::zeros_like() const {
  DenseNet out = *this;
  out.set_zero();
  return out;
}

void DenseNet::set_zero() {
  for (auto& layer : layers_) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
}

bool DenseNet::all_finite() const {
  for (const auto& layer : layers_) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

void DenseNet::append_tensors(const std::string& prefix,
                              std::vector<TensorRef>& out) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    out.push_back({base + ".weight", &layers_[l].weight});
    out.push_back({base + ".bias", &layers_[l].bias});
  }
}

Adam::Adam(AdamOptions options) : options_(options) {
  if (!(options_.learning_rate > 0.0) || options_.weight_decay < 0.0 ||
      !(options_.beta1 >= 0.0 && options_.beta1 < 1.0) ||
      !(options_.beta2 >= 0.0 && options_.beta2 < 1.0) || !(options_.epsilon > 0.0)) {
    throw ConfigError("invalid Adam options");
  }
}

void Adam::step(std::span<const TensorRef> params,
                std::span<const TensorRef> grads) {
  if (params.size() != grads.size()) {
    throw ConfigError("Adam: parameter and gradient lists differ in length");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& p = *params[i].value;
    const Matrix& g = *grads[i].value;
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw ConfigError("Adam: shape mismatch for tensor " + params[i].name);
    }
    if (!g.allFinite()) {
      throw TrainingError("non-finite gradient in tensor " + params[i].name);
    }
  }
  if (first_moment_.empty()) {
    for (const auto& p : params) {
      first_moment_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
      second_moment_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    }
  } else if (first_moment_.size() != params.size()) {
    throw ConfigError("Adam: parameter list changed between steps");
  }

  ++step_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i].value;
    Matrix g = *grads[i].value;
    if (options_.weight_decay > 0.0) g += options_.weight_decay * p;
    Matrix& m = first_moment_[i];
    Matrix& v = second_moment_[i];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
    p.array() -= options_.learning_rate * (m.array() / correction1) /
                 ((v.array() / correction2).sqrt() + options_.epsilon);
  }
}

Vector sample_gaussian(Rng& rng, const Vector& mean, const Vector& std_dev) {
  if (mean.size() != std_dev.size()) {
    throw DataError("sample_gaussian: mean and std lengths differ");
  }
  for (Eigen::Index i = 0; i < std_dev.size(); ++i) {
    if (!(std_dev[i] > 0.0)) {
      throw ConfigError("sample_gaussian: standard deviation must be positive");
    }
  }
  Vector out(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    out[i] = mean[i] + std_dev[i] * rng.normal();
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

Vector softmax(const Vector& logits) {
  Vector e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

Vector log_softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

Eigen::Index argmax(const Vector& values) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace rvae
