#include "hsmstack/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hsmstack/rng.hpp"

namespace hsmstack {

namespace {

class Optimizer {
 public:
  Optimizer(const TrainConfig& config, std::vector<NamedParam> params) : config_(config), params_(std::move(params)) {
    for (auto& p : params_) {
      first_.emplace_back(p.param->size(), 0.0);
      second_.emplace_back(config.optimizer == OptimizerKind::kAdam ? p.param->size() : 0, 0.0);
    }
  }

  void step(double lr, double grad_scale) {
    ++t_;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Param& p = *params_[k].param;
      if (!p.trainable) continue;
      auto& m = first_[k];
      if (config_.optimizer == OptimizerKind::kSgdMomentum) {
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = config_.momentum * m[i] + p.grad[i] * grad_scale;
          p.value[i] -= lr * m[i];
        }
      } else {
        auto& v = second_[k];
        const double c1 = 1.0 - std::pow(config_.adam_beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(config_.adam_beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double g = p.grad[i] * grad_scale;
          m[i] = config_.adam_beta1 * m[i] + (1.0 - config_.adam_beta1) * g;
          v[i] = config_.adam_beta2 * v[i] + (1.0 - config_.adam_beta2) * g * g;
          p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_eps);
        }
      }
    }
  }

  [[nodiscard]] bool all_finite() const {
    for (const auto& p : params_) {
      for (double v : p.param->value) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

 private:
  TrainConfig config_;
  std::vector<NamedParam> params_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::uint64_t t_ = 0;
};

}  // namespace

void validate(const TrainConfig& config) {
  if (!(config.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(config.lr_decay > 0.0)) throw std::invalid_argument("lr_decay must be > 0");
  if (config.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(config.momentum >= 0.0 && config.momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
}

TrainHistory train(Network& net, std::span<const GlyphImage> images, std::span<const ProbVector> targets,
                   const TrainConfig& config) {
  validate(config);
  if (images.size() != targets.size()) {
    throw TrainingError("train: " + std::to_string(images.size()) + " images vs " + std::to_string(targets.size()) +
                        " targets");
  }
  TrainHistory history;
  if (config.epochs == 0 || images.empty()) return history;

  net.reseed_dropout(derive_seed(config.seed, "train.dropout"));
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, "train.shuffle"));
  Optimizer opt(config, net.parameters());
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double lr = config.learning_rate;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    double metric_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const GlyphImage*> batch;
      std::vector<ProbVector> batch_targets;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&images[order[i]]);
        batch_targets.push_back(targets[order[i]]);
      }
      const Tensor x = images_to_tensor(std::span<const GlyphImage* const>(batch));
      net.zero_grad();
      const auto result = net.loss_and_grad(x, batch_targets, config.loss, Mode::kTrain);
      if (!std::isfinite(result.loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      opt.step(lr, 1.0 / static_cast<double>(batch.size()));
      if (!opt.all_finite()) {
        throw TrainingError("non-finite parameters after epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      loss_sum += result.loss;
      for (std::size_t n = 0; n < batch.size(); ++n) {
        if (config.loss == LossKind::kCxe) {
          metric_sum += argmax_class(result.probs[n]) == argmax_class(batch_targets[n]) ? 1.0 : 0.0;
        } else {
          double abs_sum = 0.0;
          for (std::size_t i = 0; i < kNumClasses; ++i) abs_sum += std::abs(result.probs[n][i] - batch_targets[n][i]);
          metric_sum += abs_sum / static_cast<double>(kNumClasses);
        }
      }
    }
    const double n = static_cast<double>(order.size());
    history.epochs.push_back(
        {epoch, loss_sum / n, config.loss == LossKind::kCxe ? "accuracy" : "mae", metric_sum / n});
    lr *= config.lr_decay;
  }
  return history;
}

std::vector<Prediction> infer_all(Network& net, std::span<const GlyphImage> images, ModelTag tag,
                                  std::size_t batch_size) {
  std::vector<Prediction> out;
  out.reserve(images.size());
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const auto chunk = images.subspan(start, std::min(batch_size, images.size() - start));
    const auto probs = net.forward(images_to_tensor(chunk), Mode::kInfer);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      out.push_back({chunk[i].image_id, tag, probs[i]});
    }
  }
  return out;
}

double mae_metric(std::span<const ProbVector> preds, std::span<const ProbVector> targets) {
  if (preds.size() != targets.size()) throw DataError("mae_metric: length mismatch");
  if (preds.empty()) throw DataError("mae_metric: empty input");
  double sum = 0.0;
  for (std::size_t n = 0; n < preds.size(); ++n) {
    for (std::size_t i = 0; i < kNumClasses; ++i) sum += std::abs(preds[n][i] - targets[n][i]);
  }
  return sum / static_cast<double>(preds.size() * kNumClasses);
}

std::string history_log(const TrainHistory& history) {
  std::string out;
  for (const auto& e : history.epochs) {
    out += std::to_string(e.epoch) + ',' + format_prob(e.loss) + ',' + e.metric_name + ',' +
           format_prob(e.metric_value) + '\n';
  }
  return out;
}

}  // namespace hsmstack
