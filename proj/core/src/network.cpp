#include "hsmstack/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "hsmstack/rng.hpp"

namespace hsmstack {

namespace {

constexpr std::array<char, 4> kCheckpointMagic = {'N', 'E', 'T', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { bytes_.append(s); }
  [[nodiscard]] const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + i])} << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void validate(const NetConfig& config) {
  if (config.height < kMinInputSide || config.width < kMinInputSide) {
    throw std::invalid_argument("input " + std::to_string(config.height) + "x" + std::to_string(config.width) +
                                " is smaller than the minimum " + std::to_string(kMinInputSide) + "x" +
                                std::to_string(kMinInputSide));
  }
  if (config.stem_filters == 0) throw std::invalid_argument("stem_filters must be >= 1");
  if (config.dense_width == 0) throw std::invalid_argument("dense_width must be >= 1");
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
}

Network::Network(const NetConfig& config, std::uint64_t seed) : config_(config) {
  validate(config);
  std::mt19937_64 rng(derive_seed(seed, "network.init"));
  const std::size_t f = config.stem_filters;

  auto add = [this](std::string name, std::unique_ptr<Layer> layer) {
    names_.push_back(std::move(name));
    layers_.push_back(std::move(layer));
  };

  auto stem1 = std::make_unique<Conv2d>(1, f, rng);
  stem1->set_input_grad(false);
  add("stem.conv1", std::move(stem1));
  add("stem.relu1", std::make_unique<Relu>());
  add("stem.conv2", std::make_unique<Conv2d>(f, f, rng));
  add("stem.relu2", std::make_unique<Relu>());
  add("stem.pool", std::make_unique<MaxPool2d>());
  for (std::size_t b = 0; b < config.residual_blocks; ++b) {
    add("block" + std::to_string(b), std::make_unique<ResidualBlock>(f, rng));
  }
  add("head.pool", std::make_unique<GlobalAvgPool>());
  add("head.dense", std::make_unique<Dense>(f, config.dense_width, rng, Dense::Init::kHe));
  add("head.relu", std::make_unique<Relu>());
  auto dropout = std::make_unique<Dropout>(config.dropout, derive_seed(seed, "network.dropout"));
  dropout_ = dropout.get();
  add("head.dropout", std::move(dropout));
  add("output", std::make_unique<Dense>(config.dense_width, kNumClasses, rng, Dense::Init::kGlorot));
}

Tensor Network::logits(const Tensor& x, Mode mode) {
  if (x.shape.c != 1 || x.shape.h != config_.height || x.shape.w != config_.width) {
    throw ShapeError("network expects (N,1," + std::to_string(config_.height) + "," +
                     std::to_string(config_.width) + ") input, got " + to_string(x.shape));
  }
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h, mode);
  return h;
}

std::vector<ProbVector> Network::forward(const Tensor& x, Mode mode) {
  const Tensor p = softmax(logits(x, mode));
  std::vector<ProbVector> out(p.shape.n);
  for (std::size_t n = 0; n < p.shape.n; ++n) std::copy_n(p.item(n), kNumClasses, out[n].begin());
  return out;
}

Network::LossResult Network::loss_and_grad(const Tensor& x, std::span<const ProbVector> targets, LossKind kind,
                                           Mode mode) {
  if (targets.size() != x.shape.n) {
    throw ShapeError("loss_and_grad: " + std::to_string(targets.size()) + " targets for a batch of " +
                     std::to_string(x.shape.n));
  }
  LossResult result;
  result.probs = forward(x, mode);
  result.loss = dataset_loss(targets, result.probs, kind);
  // Both losses share d/dz = p - q because every target sums to one.
  Tensor grad(Shape{x.shape.n, kNumClasses, 1, 1});
  for (std::size_t n = 0; n < x.shape.n; ++n) {
    for (std::size_t i = 0; i < kNumClasses; ++i) grad.item(n)[i] = result.probs[n][i] - targets[n][i];
  }
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) grad = (*it)->backward(grad);
  return result;
}

std::vector<NamedParam> Network::parameters() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->collect(names_[i], out);
  return out;
}

void Network::zero_grad() {
  for (auto& p : parameters()) std::fill(p.param->grad.begin(), p.param->grad.end(), 0.0);
}

void Network::reseed_dropout(std::uint64_t seed) { dropout_->reseed(seed); }

std::size_t Network::parameter_count() {
  std::size_t total = 0;
  for (auto& p : parameters()) {
    if (p.param->trainable) total += p.param->size();
  }
  return total;
}

void Network::save(const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic.data(), kCheckpointMagic.size()));
  w.u32(kCheckpointVersion);
  w.u64(config_.height);
  w.u64(config_.width);
  w.u64(config_.stem_filters);
  w.u64(config_.residual_blocks);
  w.u64(config_.dense_width);
  w.f64(config_.dropout);
  const auto params = parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u32(static_cast<std::uint32_t>(p->shape.size()));
    for (auto d : p->shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p->value) w.f64(v);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
}

Network Network::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r(std::move(bytes));
  if (r.raw(4) != std::string_view(kCheckpointMagic.data(), 4)) throw CheckpointError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  NetConfig config;
  config.height = r.u64();
  config.width = r.u64();
  config.stem_filters = r.u64();
  config.residual_blocks = r.u64();
  config.dense_width = r.u64();
  config.dropout = r.f64();
  Network net(config, 0);
  std::map<std::string, Param*> by_name;
  for (auto& p : net.parameters()) by_name[p.name] = p.param;
  const auto count = r.u32();
  if (count != by_name.size()) throw CheckpointError("checkpoint: tensor count does not match architecture");
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = r.raw(r.u32());
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint: unexpected tensor " + name);
    Param& p = *it->second;
    const auto rank = r.u32();
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    if (dims != p.shape) throw CheckpointError("checkpoint: shape mismatch for " + name);
    for (auto& v : p.value) v = r.f64();
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return net;
}

Tensor images_to_tensor(std::span<const GlyphImage> images) {
  std::vector<const GlyphImage*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& img : images) ptrs.push_back(&img);
  return images_to_tensor(std::span<const GlyphImage* const>(ptrs));
}

Tensor images_to_tensor(std::span<const GlyphImage* const> images) {
  if (images.empty()) return Tensor(Shape{0, 1, 0, 0});
  const std::size_t h = images.front()->height;
  const std::size_t w = images.front()->width;
  Tensor t(Shape{images.size(), 1, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = *images[n];
    if (img.height != h || img.width != w || img.pixels.size() != h * w) {
      throw ShapeError("image " + img.image_id + " does not match batch dimensions");
    }
    double* dst = t.item(n);
    for (std::size_t i = 0; i < h * w; ++i) dst[i] = static_cast<double>(img.pixels[i]) / 255.0;
  }
  return t;
}

}  // namespace hsmstack
