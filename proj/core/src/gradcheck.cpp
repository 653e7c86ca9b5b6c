#include "hsmstack/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hsmstack {

namespace {

std::vector<std::size_t> pick_entries(std::size_t size, const GradCheckOptions& options, std::uint64_t salt) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (options.max_entries_per_tensor == 0 || size <= options.max_entries_per_tensor) return idx;
  std::mt19937_64 rng(options.sample_seed ^ (salt * 0x9e3779b97f4a7c15ULL));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(options.max_entries_per_tensor);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void record(GradCheckResult& result, double analytic, double numeric, const GradCheckOptions& options,
            const std::string& name, std::size_t i) {
  const double err = relative_error(analytic, numeric, options.denominator_floor);
  ++result.entries_checked;
  if (err > result.max_relative_error || result.worst_entry.empty()) {
    result.max_relative_error = std::max(err, result.max_relative_error);
    result.worst_entry = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                         " numeric=" + std::to_string(numeric);
  }
}

double project(const Tensor& y, const Tensor& projection) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * projection.data[i];
  return s;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_network_gradients(Network& net, const Tensor& x, std::span<const ProbVector> targets,
                                        LossKind kind, const GradCheckOptions& options, std::uint64_t dropout_seed) {
  auto loss_at = [&]() {
    net.reseed_dropout(dropout_seed);
    const auto probs = net.forward(x, Mode::kTrain);
    return dataset_loss(targets, probs, kind);
  };
  net.zero_grad();
  net.reseed_dropout(dropout_seed);
  net.loss_and_grad(x, targets, kind, Mode::kTrain);

  GradCheckResult result;
  std::uint64_t salt = 0;
  for (auto& [name, p] : net.parameters()) {
    ++salt;
    if (!p->trainable) continue;
    const Buffer analytic = p->grad;
    for (std::size_t i : pick_entries(p->size(), options, salt)) {
      const double saved = p->value[i];
      p->value[i] = saved + options.step;
      const double up = loss_at();
      p->value[i] = saved - options.step;
      const double down = loss_at();
      p->value[i] = saved;
      record(result, analytic[i], (up - down) / (2.0 * options.step), options, name, i);
    }
  }
  return result;
}

GradCheckResult check_layer_gradients(Layer& layer, Tensor x, const Tensor& projection, Mode mode,
                                      const GradCheckOptions& options, const std::function<void()>& before_forward) {
  auto loss_at = [&](const Tensor& input) {
    if (before_forward) before_forward();
    return project(layer.forward(input, mode), projection);
  };
  std::vector<NamedParam> params;
  layer.collect(std::string(layer.kind()), params);
  for (auto& p : params) std::fill(p.param->grad.begin(), p.param->grad.end(), 0.0);

  if (before_forward) before_forward();
  const Tensor y = layer.forward(x, mode);
  if (y.shape != projection.shape) throw ShapeError("projection shape does not match layer output");
  const Tensor dx = layer.backward(projection);

  GradCheckResult result;
  for (std::size_t i : pick_entries(x.data.size(), options, 0)) {
    const double saved = x.data[i];
    x.data[i] = saved + options.step;
    const double up = loss_at(x);
    x.data[i] = saved - options.step;
    const double down = loss_at(x);
    x.data[i] = saved;
    record(result, dx.data[i], (up - down) / (2.0 * options.step), options, "input", i);
  }
  std::uint64_t salt = 0;
  for (auto& [name, p] : params) {
    ++salt;
    if (!p->trainable) continue;
    const Buffer analytic = p->grad;
    for (std::size_t i : pick_entries(p->size(), options, salt)) {
      const double saved = p->value[i];
      p->value[i] = saved + options.step;
      const double up = loss_at(x);
      p->value[i] = saved - options.step;
      const double down = loss_at(x);
      p->value[i] = saved;
      record(result, analytic[i], (up - down) / (2.0 * options.step), options, name, i);
    }
  }
  return result;
}

GradCheckResult check_softmax_loss_gradients(const Tensor& logits, std::span<const ProbVector> targets, LossKind kind,
                                             const GradCheckOptions& options) {
  auto loss_at = [&](const Tensor& z) {
    const Tensor p = softmax(z);
    std::vector<ProbVector> probs(p.shape.n);
    for (std::size_t n = 0; n < p.shape.n; ++n) std::copy_n(p.item(n), kNumClasses, probs[n].begin());
    return dataset_loss(targets, probs, kind);
  };
  const Tensor p = softmax(logits);
  Tensor z = logits;
  GradCheckResult result;
  for (std::size_t i : pick_entries(z.data.size(), options, 0)) {
    const std::size_t n = i / kNumClasses;
    const std::size_t c = i % kNumClasses;
    const double analytic = p.data[i] - targets[n][c];
    const double saved = z.data[i];
    z.data[i] = saved + options.step;
    const double up = loss_at(z);
    z.data[i] = saved - options.step;
    const double down = loss_at(z);
    z.data[i] = saved;
    record(result, analytic, (up - down) / (2.0 * options.step), options, "logits", i);
  }
  return result;
}

}  // namespace hsmstack
