#pragma once

// Layers with exact backward passes. Each layer caches what it needs from
// the most recent forward call; backward must follow the matching forward.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "hsmstack/tensor.hpp"

namespace hsmstack {

enum class Mode { kTrain, kInfer };

struct Param {
  std::vector<std::size_t> shape;
  Buffer value;
  Buffer grad;  // same size as value; unused for state tensors
  bool trainable = true;

  Param() = default;
  Param(std::vector<std::size_t> dims, bool is_trainable);
  [[nodiscard]] std::size_t size() const { return value.size(); }
};

struct NamedParam {
  std::string name;
  Param* param = nullptr;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  /// Returns d(loss)/d(input) and accumulates parameter gradients.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  /// Appends every tensor (trainable and running state) under `prefix`.
  virtual void collect(const std::string& prefix, std::vector<NamedParam>& out) { (void)prefix, (void)out; }
  [[nodiscard]] virtual std::string_view kind() const = 0;
};

/// 3x3 convolution, stride 1, zero padding 1. Convolutions feeding a batch
/// norm go without bias: the normalization cancels any per-channel shift.
class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::mt19937_64& rng, bool with_bias = true);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) override;
  [[nodiscard]] std::string_view kind() const override { return "conv2d"; }

  /// Skip computing the input gradient (first layer of a network).
  void set_input_grad(bool enabled) { input_grad_ = enabled; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

 private:
  std::size_t in_;
  std::size_t out_;
  Param weight_;  // [out, in, 3, 3]
  Param bias_;    // [out], empty without bias
  Tensor input_;
  Buffer col_;
  bool with_bias_ = true;
  bool input_grad_ = true;
};

/// Per-channel batch normalization over (N, H, W).
class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(std::size_t channels, double momentum = 0.99, double eps = 1e-5);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) override;
  [[nodiscard]] std::string_view kind() const override { return "batchnorm2d"; }

  Param& gamma() { return gamma_; }
  Param& beta() { return beta_; }
  Param& running_mean() { return running_mean_; }
  Param& running_var() { return running_var_; }

 private:
  std::size_t channels_;
  double momentum_;
  double eps_;
  Param gamma_;
  Param beta_;
  Param running_mean_;
  Param running_var_;
  Tensor xhat_;
  Buffer inv_std_;
  Mode last_mode_ = Mode::kTrain;
};

class Relu final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  [[nodiscard]] std::string_view kind() const override { return "relu"; }

 private:
  Tensor input_;
};

/// 2x2 max pooling with stride 2 (odd trailing rows/cols dropped).
class MaxPool2d final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  [[nodiscard]] std::string_view kind() const override { return "maxpool2d"; }

 private:
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

/// Spatial mean: (N, C, H, W) -> (N, C, 1, 1).
class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  [[nodiscard]] std::string_view kind() const override { return "global_avg_pool"; }

 private:
  Shape in_shape_;
};

/// Fully connected layer on the flattened per-item features.
class Dense final : public Layer {
 public:
  enum class Init { kHe, kGlorot };
  Dense(std::size_t in_features, std::size_t out_features, std::mt19937_64& rng, Init init = Init::kHe);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) override;
  [[nodiscard]] std::string_view kind() const override { return "dense"; }

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

 private:
  std::size_t in_;
  std::size_t out_;
  Param weight_;  // [out, in]
  Param bias_;    // [out]
  Tensor input_;
};

/// Inverted dropout driven by its own seeded stream; identity in infer mode.
class Dropout final : public Layer {
 public:
  explicit Dropout(double rate, std::uint64_t seed = 0);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  [[nodiscard]] std::string_view kind() const override { return "dropout"; }

  void reseed(std::uint64_t seed) { engine_.seed(seed); }
  [[nodiscard]] double rate() const { return rate_; }

 private:
  double rate_;
  std::mt19937_64 engine_;
  Buffer mask_;
};

/// conv-bn-relu-conv-bn, identity skip, relu.
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(std::size_t channels, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) override;
  [[nodiscard]] std::string_view kind() const override { return "residual_block"; }

 private:
  Conv2d conv1_;
  BatchNorm2d bn1_;
  Relu relu1_;
  Conv2d conv2_;
  BatchNorm2d bn2_;
  Relu relu_out_;
};

/// Row-wise softmax over the channel axis of a (N, C, 1, 1) tensor.
[[nodiscard]] Tensor softmax(const Tensor& logits);

}  // namespace hsmstack
