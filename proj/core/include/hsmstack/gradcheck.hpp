#pragma once

// Central finite-difference verification of analytic gradients.

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "hsmstack/network.hpp"

namespace hsmstack {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor for the relative error, so that components whose true
  /// gradient is ~0 are judged on absolute error instead.
  double denominator_floor = 1e-6;
  /// 0 checks every entry; otherwise this many entries per tensor, sampled.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t sample_seed = 1;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst_entry;
};

/// |a - n| / max(|a|, |n|, floor).
[[nodiscard]] double relative_error(double analytic, double numeric, double floor);

/// Checks every trainable network parameter for the summed loss. Dropout is
/// reseeded to `dropout_seed` before each evaluation so masks match.
GradCheckResult check_network_gradients(Network& net, const Tensor& x, std::span<const ProbVector> targets,
                                        LossKind kind, const GradCheckOptions& options = {},
                                        std::uint64_t dropout_seed = 7);

/// Checks a single layer under the scalar loss sum(forward(x) * projection),
/// for both the input and every trainable parameter. `before_forward` runs
/// ahead of each forward call (e.g. to reseed dropout).
GradCheckResult check_layer_gradients(Layer& layer, Tensor x, const Tensor& projection, Mode mode,
                                      const GradCheckOptions& options = {},
                                      const std::function<void()>& before_forward = {});

/// Checks d(loss)/d(logits) = softmax(z) - q against differences of
/// dataset_loss(targets, softmax(z)).
GradCheckResult check_softmax_loss_gradients(const Tensor& logits, std::span<const ProbVector> targets, LossKind kind,
                                             const GradCheckOptions& options = {});

}  // namespace hsmstack
