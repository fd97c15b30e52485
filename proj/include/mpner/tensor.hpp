#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpner::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape);

// Dense row-major tensor. A shape of {} holds one scalar.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape))
      throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  static Tensor scalar(T x) { return Tensor(Shape{}, std::vector<T>{x}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool empty() const { return data.empty(); }
  std::size_t last_dim() const { return shape.empty() ? 1 : shape.back(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T item() const {
    if (data.size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape));
    return data[0];
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace mpner::ad
