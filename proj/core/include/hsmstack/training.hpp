#pragma once

// Mini-batch training under either target regime, full-dataset inference and
// the mean-absolute-error metric used for soft targets.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hsmstack/network.hpp"

namespace hsmstack {

enum class OptimizerKind { kSgdMomentum, kAdam };

struct TrainConfig {
  LossKind loss = LossKind::kCxe;
  double learning_rate = 0.05;
  /// Multiplicative learning-rate factor applied after every epoch.
  double lr_decay = 1.0;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kSgdMomentum;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

void validate(const TrainConfig& config);

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;          // mean per image
  std::string metric_name;    // "accuracy" (CXE) or "mae" (KLD)
  double metric_value = 0.0;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains in place; single-threaded and bitwise reproducible for a given seed.
/// `targets` are delta distributions for CXE and HSM vectors for KLD.
TrainHistory train(Network& net, std::span<const GlyphImage> images, std::span<const ProbVector> targets,
                   const TrainConfig& config);

/// Infer-mode predictions for every image, in input order.
[[nodiscard]] std::vector<Prediction> infer_all(Network& net, std::span<const GlyphImage> images, ModelTag tag,
                                                std::size_t batch_size = 256);

/// Mean over images and classes of |p_i - q_i|.
[[nodiscard]] double mae_metric(std::span<const ProbVector> preds, std::span<const ProbVector> targets);

/// `epoch,loss,metric_name,metric_value` per line.
[[nodiscard]] std::string history_log(const TrainHistory& history);

}  // namespace hsmstack
