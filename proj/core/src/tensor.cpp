#include "pddpm/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "pddpm/error.hpp"

namespace pddpm {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor: empty shape");
  for (int e : shape) {
    if (e < 1) throw ShapeError("tensor: extents must be >= 1, got " + shape_str(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack_batch: no items");
  Shape item = items.front().shape();
  if (item.size() == 4) {
    if (item[0] != 1) throw ShapeError("stack_batch: items must have batch extent 1");
    item.erase(item.begin());
  }
  Shape out_shape = item;
  out_shape.insert(out_shape.begin(), static_cast<int>(items.size()));
  std::vector<float> data;
  data.reserve(shape_numel(out_shape));
  for (const auto& t : items) {
    if (t.size() != shape_numel(item)) {
      throw ShapeError("stack_batch: item " + shape_str(t.shape()) + " vs " + shape_str(item));
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(out_shape), std::move(data));
}

}  // namespace pddpm
