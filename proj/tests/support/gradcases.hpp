#pragma once

// Random small gradient-check instances, one generator per layer kind.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hsmstack/gradcheck.hpp"
#include "oracles.hpp"

namespace gradcases {

using namespace hsmstack;

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Tensor t(s);
  for (auto& v : t.data) v = g(rng);
  return t;
}

inline std::vector<ProbVector> random_targets(std::size_t n, bool soft, std::mt19937_64& rng) {
  std::vector<ProbVector> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (soft) {
      out.push_back(oracle::random_simplex(rng, 0.6));
    } else {
      out.push_back(delta_distribution(ClassId(rng() % kNumClasses)));
    }
  }
  return out;
}

inline const std::vector<std::string>& kinds() {
  static const std::vector<std::string> k{"conv2d",         "batchnorm2d",   "relu",          "maxpool2d",
                                          "global_avg_pool", "dense",         "dropout",       "residual_block",
                                          "softmax_cxe",     "softmax_kld",   "network_cxe",   "network_kld"};
  return k;
}

/// One random instance of `kind`; instance `i` varies shapes and values.
inline GradCheckResult run(const std::string& kind, std::uint64_t i) {
  std::mt19937_64 rng(1000 + 7919 * i + oracle::fingerprint(kind) % 997);
  const std::size_t n = 1 + i % 3;
  const std::size_t c = 1 + (i / 3) % 3;
  const std::size_t h = 3 + i % 4;
  const std::size_t w = 3 + (i / 2) % 4;
  GradCheckOptions opt;
  opt.sample_seed = i + 1;

  auto layer_case = [&](Layer& layer, Shape in, Mode mode, const std::function<void()>& before = {}) {
    Tensor x = random_tensor(in, rng);
    if (before) before();
    const Tensor y = layer.forward(x, mode);
    const Tensor proj = random_tensor(y.shape, rng);
    return check_layer_gradients(layer, x, proj, mode, opt, before);
  };

  if (kind == "conv2d") {
    Conv2d conv(c, 1 + i % 4, rng);
    return layer_case(conv, {n, c, h, w}, Mode::kTrain);
  }
  if (kind == "batchnorm2d") {
    BatchNorm2d bn(c);
    std::normal_distribution<double> g(0.0, 0.5);
    for (auto& v : bn.gamma().value) v = 1.0 + g(rng);
    for (auto& v : bn.beta().value) v = g(rng);
    return layer_case(bn, {n + 1, c, h, w}, Mode::kTrain);
  }
  if (kind == "relu") {
    Relu relu;
    return layer_case(relu, {n, c, h, w}, Mode::kTrain);
  }
  if (kind == "maxpool2d") {
    MaxPool2d pool;
    return layer_case(pool, {n, c, h + 1, w + 1}, Mode::kTrain);
  }
  if (kind == "global_avg_pool") {
    GlobalAvgPool gap;
    return layer_case(gap, {n, c, h, w}, Mode::kTrain);
  }
  if (kind == "dense") {
    Dense dense(c * h, 2 + i % 5, rng);
    return layer_case(dense, {n, c, h, 1}, Mode::kTrain);
  }
  if (kind == "dropout") {
    Dropout drop(0.3, 5 + i);
    return layer_case(drop, {n, c, h, w}, Mode::kTrain, [&] { drop.reseed(5 + i); });
  }
  if (kind == "residual_block") {
    ResidualBlock block(c, rng);
    return layer_case(block, {n + 1, c, h, w}, Mode::kTrain);
  }
  if (kind == "softmax_cxe" || kind == "softmax_kld") {
    const bool kld = kind == "softmax_kld";
    const Tensor z = random_tensor({n + 1, kNumClasses, 1, 1}, rng, 2.0);
    return check_softmax_loss_gradients(z, random_targets(n + 1, kld, rng), kld ? LossKind::kKld : LossKind::kCxe,
                                        opt);
  }
  // whole network: 8x8 input, small stem, one residual block
  const bool kld = kind == "network_kld";
  NetConfig cfg;
  cfg.height = 8;
  cfg.width = 8;
  cfg.stem_filters = 2 + i % 2;
  cfg.residual_blocks = 1;
  cfg.dense_width = 5;
  cfg.dropout = i % 2 == 0 ? 0.0 : 0.2;
  Network net(cfg, 40 + i);
  // Zero-initialised biases leave a conv fed by an all-zero ReLU patch with a
  // pre-activation of exactly 0, on the kink where central differences see
  // half a slope. Jitter biases and shifts so the check runs at a generic point.
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (auto& [name, p] : net.parameters()) {
    if (name.ends_with(".bias") || name.ends_with(".beta")) {
      for (auto& v : p->value) v = jitter(rng);
    }
  }
  const std::size_t batch = 2 + i % 2;
  std::uniform_real_distribution<double> px(0.0, 1.0);
  Tensor x({batch, 1, 8, 8});
  for (auto& v : x.data) v = px(rng);
  const auto targets = random_targets(batch, kld, rng);
  return check_network_gradients(net, x, targets, kld ? LossKind::kKld : LossKind::kCxe, opt, 90 + i);
}

}  // namespace gradcases
