#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace m3sr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// 64-byte aligned storage, so vectorized kernels see the same alignment on every
// allocation and produce bitwise reproducible sums.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

// Dense row-major array, last axis fastest. Element (i, j, k) of shape
// (A, B, C) lives at flat index (i * B + j) * C + k.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, AlignedVector<T> data);
  Tensor(Shape shape, const std::vector<T>& data);
  Tensor(Shape shape, std::initializer_list<T> data) : Tensor(std::move(shape), AlignedVector<T>(data)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const AlignedVector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t flat_index(std::initializer_list<std::size_t> index) const;
  T& at(std::initializer_list<std::size_t> index) { return data_[flat_index(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[flat_index(index)]; }

  // Same data viewed under a new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  void fill(T value);
  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    AlignedVector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

// Throws ShapeError naming `what` when the shapes differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace m3sr
