#include "m3sr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "m3sr/errors.hpp"

namespace m3sr {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, const std::vector<T>& data)
    : Tensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape_));
  }
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

template <typename T>
std::size_t Tensor<T>::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " vs tensor rank " +
                     std::to_string(shape_.size()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template class Tensor<float>;
template class Tensor<double>;
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace m3sr
