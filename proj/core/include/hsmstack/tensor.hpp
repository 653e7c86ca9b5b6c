#pragma once

#include <cstddef>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

namespace hsmstack {

/// 64-byte aligned storage. Vectorized kernels split work at alignment
/// boundaries, so allocator-dependent alignment would make results vary in
/// the last bit between otherwise identical runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  constexpr AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// NCHW extents. Dense activations use h = w = 1.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 1;
  std::size_t w = 1;

  [[nodiscard]] constexpr std::size_t size() const { return n * c * h * w; }
  [[nodiscard]] constexpr std::size_t per_item() const { return c * h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

[[nodiscard]] std::string to_string(const Shape& s);

/// Dense NCHW tensor of doubles.
struct Tensor {
  Shape shape;
  Buffer data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(s), data(s.size(), fill) {}

  [[nodiscard]] double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data[((n * shape.c + c) * shape.h + y) * shape.w + x];
  }
  [[nodiscard]] double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data[((n * shape.c + c) * shape.h + y) * shape.w + x];
  }
  [[nodiscard]] double* item(std::size_t n) { return data.data() + n * shape.per_item(); }
  [[nodiscard]] const double* item(std::size_t n) const { return data.data() + n * shape.per_item(); }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace hsmstack
