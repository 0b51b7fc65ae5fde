#pragma once

// Minimal dense feed-forward engine: batched forward/backward with cached
// activations, Adam, and a seeded random stream.
//
// Batches are row-major in the mathematical sense: a batch of M inputs is an
// M x in matrix and a layer computes Y = act(X * W + b) with W of shape
// in x out and b of shape 1 x out.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace rvae {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Learned standard deviations are parameterized by their log and clamped to
// this range before exponentiation.
inline constexpr double kLogSigmaMin = -6.0;
inline constexpr double kLogSigmaMax = 4.0;

class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64";

  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  double normal();
  double uniform();
  double exponential();
  bool bernoulli(double p);
  std::size_t uniform_index(std::size_t n);
  // Index drawn proportionally to non-negative weights (at least one > 0).
  std::size_t categorical(std::span<const double> weights);
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

  std::mt19937_64& engine() { return engine_; }

  // Independent stream seed for (seed, stream), e.g. one stream per row.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::exponential_distribution<double> exponential_{1.0};
};

enum class Activation { kIdentity, kRelu };

struct DenseLayer {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
  Activation activation = Activation::kIdentity;
};

// Non-owning handle to one named parameter tensor.
struct TensorRef {
  std::string name;
  Matrix* value;
};

struct ForwardCache {
  // activations[0] is the input, activations[l + 1] the output of layer l.
  std::vector<Matrix> activations;
  bool empty() const { return activations.empty(); }
};

class DenseNet {
 public:
  DenseNet() = default;

  // Zero-initialized network. sizes = {in, h1, ..., out}; one activation per
  // layer (sizes.size() - 1 of them).
  DenseNet(std::span<const std::size_t> sizes,
           std::span<const Activation> activations);

  // He-style initialization (normal, std = sqrt(2 / fan_in)) with zero
  // biases.
  static DenseNet he_initialized(std::span<const std::size_t> sizes,
                                 std::span<const Activation> activations,
                                 Rng& rng);

  std::size_t input_size() const;
  std::size_t output_size() const;
  std::size_t num_layers() const { return layers_.size(); }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Matrix forward(const Matrix& input, ForwardCache& cache) const;
  Matrix predict(const Matrix& input) const;
  Vector predict(const Vector& input) const;

  // Backpropagates `upstream` (dLoss/dOutput, same shape as the output).
  // Parameter gradients are accumulated into `grads`, which must have this
  // network's shape (see zeros_like). Returns dLoss/dInput when
  // `need_input_grad`, otherwise an empty matrix.
  Matrix backward(const ForwardCache& cache, const Matrix& upstream,
                  DenseNet& grads, bool need_input_grad = true) const;

  DenseNet zeros_like() const;
  void set_zero();
  bool all_finite() const;

  void append_tensors(const std::string& prefix, std::vector<TensorRef>& out);

 private:
  void check_input(const Matrix& input) const;

  std::vector<DenseLayer> layers_;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Coupled L2: weight_decay * param is added to the gradient.
  double weight_decay = 0.0;
};

class Adam {
 public:
  explicit Adam(AdamOptions options = {});

  // Applies one bias-corrected Adam update. `params` and `grads` pair up by
  // position and must keep the same shapes across calls. Throws TrainingError
  // naming the tensor when a gradient is not finite; nothing is updated then.
  void step(std::span<const TensorRef> params, std::span<const TensorRef> grads);

  std::int64_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }

 private:
  AdamOptions options_;
  std::int64_t step_ = 0;
  std::vector<Matrix> first_moment_;
  std::vector<Matrix> second_moment_;
};

// mean + std .* eps with eps ~ N(0, I). Every std must be strictly positive.
Vector sample_gaussian(Rng& rng, const Vector& mean, const Vector& std_dev);

double sigmoid(double x);
// log(1 + exp(x)) without overflow.
double softplus(double x);
Vector softmax(const Vector& logits);
Vector log_softmax(const Vector& logits);

// Index of the largest entry; ties go to the lowest index.
Eigen::Index argmax(const Vector& values);

}  // namespace rvae
