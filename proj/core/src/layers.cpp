#include "hsmstack/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace hsmstack {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

constexpr std::size_t kKernel = 3;
constexpr std::size_t kTaps = kKernel * kKernel;

void require_channels(const Tensor& x, std::size_t channels, std::string_view who) {
  if (x.shape.c != channels) {
    throw ShapeError(std::string(who) + ": expected " + std::to_string(channels) + " channels, got " +
                     to_string(x.shape));
  }
}

void fill_normal(Buffer& v, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : v) x = dist(rng);
}

// One image (C, H, W) -> columns (C*9, H*W).
void im2col(const double* img, std::size_t channels, std::size_t h, std::size_t w, double* col) {
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = img + c * h * w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        double* row = col + ((c * kKernel + ky) * kKernel + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          double* dst = row + y * w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x + kx) - 1;
            dst[x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t channels, std::size_t h, std::size_t w, double* img) {
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = img + c * h * w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        const double* row = col + ((c * kKernel + ky) * kKernel + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * w;
          const double* src = row + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x + kx) - 1;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

Param::Param(std::vector<std::size_t> dims, bool is_trainable) : shape(std::move(dims)), trainable(is_trainable) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  value.assign(n, 0.0);
  grad.assign(n, 0.0);
}

// --- Conv2d ----------------------------------------------------------------

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::mt19937_64& rng, bool with_bias)
    : in_(in_channels),
      out_(out_channels),
      weight_({out_channels, in_channels, kKernel, kKernel}, true),
      bias_({with_bias ? out_channels : 0}, true),
      with_bias_(with_bias) {
  fill_normal(weight_.value, std::sqrt(2.0 / static_cast<double>(in_channels * kTaps)), rng);
}

Tensor Conv2d::forward(const Tensor& x, Mode) {
  require_channels(x, in_, "conv2d");
  input_ = x;
  const std::size_t h = x.shape.h;
  const std::size_t w = x.shape.w;
  const std::size_t hw = h * w;
  Tensor y(Shape{x.shape.n, out_, h, w});
  col_.resize(in_ * kTaps * hw);
  const ConstMatrixMap weight(weight_.value.data(), static_cast<Eigen::Index>(out_),
                              static_cast<Eigen::Index>(in_ * kTaps));
  const Eigen::Map<const Eigen::VectorXd> bias(bias_.value.data(), static_cast<Eigen::Index>(out_));
  for (std::size_t n = 0; n < x.shape.n; ++n) {
    im2col(x.item(n), in_, h, w, col_.data());
    const ConstMatrixMap col(col_.data(), static_cast<Eigen::Index>(in_ * kTaps), static_cast<Eigen::Index>(hw));
    MatrixMap out(y.item(n), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(hw));
    out.noalias() = weight * col;
    if (with_bias_) out.colwise() += bias;
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const std::size_t h = input_.shape.h;
  const std::size_t w = input_.shape.w;
  const std::size_t hw = h * w;
  Tensor dx(input_.shape);
  Buffer dcol(in_ * kTaps * hw);
  const ConstMatrixMap weight(weight_.value.data(), static_cast<Eigen::Index>(out_),
                              static_cast<Eigen::Index>(in_ * kTaps));
  MatrixMap dweight(weight_.grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_ * kTaps));
  Eigen::Map<Eigen::VectorXd> dbias(bias_.grad.data(), static_cast<Eigen::Index>(out_));
  for (std::size_t n = 0; n < input_.shape.n; ++n) {
    im2col(input_.item(n), in_, h, w, col_.data());
    const ConstMatrixMap col(col_.data(), static_cast<Eigen::Index>(in_ * kTaps), static_cast<Eigen::Index>(hw));
    const ConstMatrixMap dy(grad_out.item(n), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(hw));
    dweight.noalias() += dy * col.transpose();
    if (with_bias_) dbias += dy.rowwise().sum();
    if (input_grad_) {
      MatrixMap dc(dcol.data(), static_cast<Eigen::Index>(in_ * kTaps), static_cast<Eigen::Index>(hw));
      dc.noalias() = weight.transpose() * dy;
      col2im_add(dcol.data(), in_, h, w, dx.item(n));
    }
  }
  return dx;
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".weight", &weight_});
  if (with_bias_) out.push_back({prefix + ".bias", &bias_});
}

// --- BatchNorm2d -------------------------------------------------------------

BatchNorm2d::BatchNorm2d(std::size_t channels, double momentum, double eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_({channels}, true),
      beta_({channels}, true),
      running_mean_({channels}, false),
      running_var_({channels}, false) {
  std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0);
  std::fill(running_var_.value.begin(), running_var_.value.end(), 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  require_channels(x, channels_, "batchnorm2d");
  last_mode_ = mode;
  const std::size_t n_items = x.shape.n;
  const std::size_t hw = x.shape.h * x.shape.w;
  const double count = static_cast<double>(n_items * hw);
  Tensor y(x.shape);
  xhat_ = Tensor(x.shape);
  inv_std_.assign(channels_, 0.0);
  for (std::size_t c = 0; c < channels_; ++c) {
    double mean = running_mean_.value[c];
    double var = running_var_.value[c];
    if (mode == Mode::kTrain) {
      double sum = 0.0;
      for (std::size_t n = 0; n < n_items; ++n) {
        const double* p = x.item(n) + c * hw;
        for (std::size_t i = 0; i < hw; ++i) sum += p[i];
      }
      mean = sum / count;
      double sq = 0.0;
      for (std::size_t n = 0; n < n_items; ++n) {
        const double* p = x.item(n) + c * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / count;
      running_mean_.value[c] = momentum_ * running_mean_.value[c] + (1.0 - momentum_) * mean;
      running_var_.value[c] = momentum_ * running_var_.value[c] + (1.0 - momentum_) * var;
    }
    const double inv_std = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv_std;
    const double g = gamma_.value[c];
    const double b = beta_.value[c];
    for (std::size_t n = 0; n < n_items; ++n) {
      const double* p = x.item(n) + c * hw;
      double* xh = xhat_.item(n) + c * hw;
      double* out = y.item(n) + c * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = (p[i] - mean) * inv_std;
        out[i] = g * xh[i] + b;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  const Shape s = xhat_.shape;
  const std::size_t hw = s.h * s.w;
  const double count = static_cast<double>(s.n * hw);
  Tensor dx(s);
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* dy = grad_out.item(n) + c * hw;
      const double* xh = xhat_.item(n) + c * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * xh[i];
      }
    }
    gamma_.grad[c] += sum_dy_xhat;
    beta_.grad[c] += sum_dy;
    const double g = gamma_.value[c];
    const double inv_std = inv_std_[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* dy = grad_out.item(n) + c * hw;
      const double* xh = xhat_.item(n) + c * hw;
      double* out = dx.item(n) + c * hw;
      if (last_mode_ == Mode::kTrain) {
        // Batch statistics depend on every element of the channel.
        const double scale = g * inv_std / count;
        for (std::size_t i = 0; i < hw; ++i) {
          out[i] = scale * (count * dy[i] - sum_dy - xh[i] * sum_dy_xhat);
        }
      } else {
        for (std::size_t i = 0; i < hw; ++i) out[i] = g * inv_std * dy[i];
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".gamma", &gamma_});
  out.push_back({prefix + ".beta", &beta_});
  out.push_back({prefix + ".running_mean", &running_mean_});
  out.push_back({prefix + ".running_var", &running_var_});
}

// --- Relu ------------------------------------------------------------------

Tensor Relu::forward(const Tensor& x, Mode) {
  input_ = x;
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
  return y;
}

Tensor Relu::backward(const Tensor& grad_out) {
  Tensor dx(input_.shape);
  for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] = input_.data[i] > 0.0 ? grad_out.data[i] : 0.0;
  return dx;
}

// --- MaxPool2d -------------------------------------------------------------

Tensor MaxPool2d::forward(const Tensor& x, Mode) {
  in_shape_ = x.shape;
  const std::size_t oh = x.shape.h / 2;
  const std::size_t ow = x.shape.w / 2;
  if (oh == 0 || ow == 0) throw ShapeError("maxpool2d: input too small " + to_string(x.shape));
  Tensor y(Shape{x.shape.n, x.shape.c, oh, ow});
  argmax_.assign(y.data.size(), 0);
  std::size_t o = 0;
  for (std::size_t n = 0; n < x.shape.n; ++n) {
    for (std::size_t c = 0; c < x.shape.c; ++c) {
      for (std::size_t y0 = 0; y0 < oh; ++y0) {
        for (std::size_t x0 = 0; x0 < ow; ++x0, ++o) {
          std::size_t best = ((n * x.shape.c + c) * x.shape.h + 2 * y0) * x.shape.w + 2 * x0;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = ((n * x.shape.c + c) * x.shape.h + 2 * y0 + dy) * x.shape.w + 2 * x0 + dx;
              if (x.data[idx] > x.data[best]) best = idx;
            }
          }
          argmax_[o] = best;
          y.data[o] = x.data[best];
        }
      }
    }
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  Tensor dx(in_shape_);
  for (std::size_t o = 0; o < argmax_.size(); ++o) dx.data[argmax_[o]] += grad_out.data[o];
  return dx;
}

// --- GlobalAvgPool -----------------------------------------------------------

Tensor GlobalAvgPool::forward(const Tensor& x, Mode) {
  in_shape_ = x.shape;
  const std::size_t hw = x.shape.h * x.shape.w;
  Tensor y(Shape{x.shape.n, x.shape.c, 1, 1});
  for (std::size_t n = 0; n < x.shape.n; ++n) {
    for (std::size_t c = 0; c < x.shape.c; ++c) {
      const double* p = x.item(n) + c * hw;
      double sum = 0.0;
      for (std::size_t i = 0; i < hw; ++i) sum += p[i];
      y.data[n * x.shape.c + c] = sum / static_cast<double>(hw);
    }
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx(in_shape_);
  const std::size_t hw = in_shape_.h * in_shape_.w;
  for (std::size_t n = 0; n < in_shape_.n; ++n) {
    for (std::size_t c = 0; c < in_shape_.c; ++c) {
      const double g = grad_out.data[n * in_shape_.c + c] / static_cast<double>(hw);
      double* p = dx.item(n) + c * hw;
      std::fill(p, p + hw, g);
    }
  }
  return dx;
}

// --- Dense -----------------------------------------------------------------

Dense::Dense(std::size_t in_features, std::size_t out_features, std::mt19937_64& rng, Init init)
    : in_(in_features), out_(out_features), weight_({out_features, in_features}, true), bias_({out_features}, true) {
  const double stddev = init == Init::kHe ? std::sqrt(2.0 / static_cast<double>(in_features))
                                          : std::sqrt(2.0 / static_cast<double>(in_features + out_features));
  fill_normal(weight_.value, stddev, rng);
}

Tensor Dense::forward(const Tensor& x, Mode) {
  if (x.shape.per_item() != in_) {
    throw ShapeError("dense: expected " + std::to_string(in_) + " features, got " + to_string(x.shape));
  }
  input_ = x;
  const auto n = static_cast<Eigen::Index>(x.shape.n);
  Tensor y(Shape{x.shape.n, out_, 1, 1});
  const ConstMatrixMap in(x.data.data(), n, static_cast<Eigen::Index>(in_));
  const ConstMatrixMap weight(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  const Eigen::Map<const Eigen::RowVectorXd> bias(bias_.value.data(), static_cast<Eigen::Index>(out_));
  MatrixMap out(y.data.data(), n, static_cast<Eigen::Index>(out_));
  out.noalias() = in * weight.transpose();
  out.rowwise() += bias;
  return y;
}

Tensor Dense::backward(const Tensor& grad_out) {
  const auto n = static_cast<Eigen::Index>(input_.shape.n);
  Tensor dx(input_.shape);
  const ConstMatrixMap in(input_.data.data(), n, static_cast<Eigen::Index>(in_));
  const ConstMatrixMap dy(grad_out.data.data(), n, static_cast<Eigen::Index>(out_));
  const ConstMatrixMap weight(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  MatrixMap dweight(weight_.grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  Eigen::Map<Eigen::RowVectorXd> dbias(bias_.grad.data(), static_cast<Eigen::Index>(out_));
  dweight.noalias() += dy.transpose() * in;
  dbias += dy.colwise().sum();
  MatrixMap din(dx.data.data(), n, static_cast<Eigen::Index>(in_));
  din.noalias() = dy * weight;
  return dx;
}

void Dense::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".weight", &weight_});
  out.push_back({prefix + ".bias", &bias_});
}

// --- Dropout -----------------------------------------------------------------

Dropout::Dropout(double rate, std::uint64_t seed) : rate_(rate), engine_(seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, Mode mode) {
  mask_.assign(x.data.size(), 1.0);
  if (mode == Mode::kInfer || rate_ == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate_);
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    mask_[i] = u >= rate_ ? keep_scale : 0.0;
    y.data[i] = x.data[i] * mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  Tensor dx(grad_out.shape);
  for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] = grad_out.data[i] * mask_[i];
  return dx;
}

// --- ResidualBlock -----------------------------------------------------------

ResidualBlock::ResidualBlock(std::size_t channels, std::mt19937_64& rng)
    : conv1_(channels, channels, rng, false),
      bn1_(channels),
      conv2_(channels, channels, rng, false),
      bn2_(channels) {}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
  Tensor h = bn2_.forward(conv2_.forward(relu1_.forward(bn1_.forward(conv1_.forward(x, mode), mode), mode), mode),
                          mode);
  for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += x.data[i];
  return relu_out_.forward(h, mode);
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
  const Tensor g = relu_out_.backward(grad_out);
  Tensor dx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
  for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += g.data[i];
  return dx;
}

void ResidualBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  conv1_.collect(prefix + ".conv1", out);
  bn1_.collect(prefix + ".bn1", out);
  conv2_.collect(prefix + ".conv2", out);
  bn2_.collect(prefix + ".bn2", out);
}

Tensor softmax(const Tensor& logits) {
  Tensor p(logits.shape);
  const std::size_t m = logits.shape.per_item();
  for (std::size_t n = 0; n < logits.shape.n; ++n) {
    const double* z = logits.item(n);
    double* out = p.item(n);
    const double zmax = *std::max_element(z, z + m);
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      out[i] = std::exp(z[i] - zmax);
      sum += out[i];
    }
    for (std::size_t i = 0; i < m; ++i) out[i] /= sum;
  }
  return p;
}

}  // namespace hsmstack
