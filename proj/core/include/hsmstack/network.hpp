#pragma once

// Residual convolutional classifier:
//   conv-relu-conv-relu-maxpool, N residual blocks, global average pool,
//   dense-relu-dropout, output dense, softmax.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "hsmstack/entropy.hpp"
#include "hsmstack/layers.hpp"

namespace hsmstack {

struct NetConfig {
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t stem_filters = 16;
  std::size_t residual_blocks = 2;
  std::size_t dense_width = 64;
  double dropout = 0.25;
  // Output width is always kNumClasses.

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Smallest accepted input side.
inline constexpr std::size_t kMinInputSide = 8;

/// Throws std::invalid_argument describing the first problem found.
void validate(const NetConfig& config);

class Network {
 public:
  /// Deterministic initialization from `seed`.
  Network(const NetConfig& config, std::uint64_t seed);

  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  [[nodiscard]] const NetConfig& config() const { return config_; }

  /// Pre-softmax outputs, shape (N, 24, 1, 1).
  Tensor logits(const Tensor& x, Mode mode);
  /// Softmax distributions, one per batch item.
  std::vector<ProbVector> forward(const Tensor& x, Mode mode);

  struct LossResult {
    double loss = 0.0;  // summed over the batch
    std::vector<ProbVector> probs;
  };
  /// Runs forward, then backward from d(sum loss)/d(logits) = p - q.
  /// Gradients are accumulated into the parameters; call zero_grad first.
  LossResult loss_and_grad(const Tensor& x, std::span<const ProbVector> targets, LossKind kind,
                           Mode mode = Mode::kTrain);

  /// Every named tensor, trainable weights and running statistics alike.
  std::vector<NamedParam> parameters();
  void zero_grad();
  void reseed_dropout(std::uint64_t seed);
  [[nodiscard]] std::size_t parameter_count();

  void save(const std::filesystem::path& path);
  static Network load(const std::filesystem::path& path);

 private:
  NetConfig config_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::string> names_;
  Dropout* dropout_ = nullptr;
};

/// Pixels scaled by 1/255 into a (N, 1, H, W) tensor.
[[nodiscard]] Tensor images_to_tensor(std::span<const GlyphImage> images);
[[nodiscard]] Tensor images_to_tensor(std::span<const GlyphImage* const> images);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hsmstack
