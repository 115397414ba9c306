#pragma once

#include <cassert>
#include <cstddef>
#include <numeric>
#include <vector>

namespace mvitime::nn {

// Dense row-major tensor, rank <= 4.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(static_cast<std::size_t>(count(shape)), T(0));
  }
  Tensor(std::vector<int> s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    assert(v.size() == static_cast<std::size_t>(count(shape)));
  }

  static long count(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
  }

  long size() const { return static_cast<long>(v.size()); }
  int dim(std::size_t i) const { return shape[i]; }
  int rank() const { return static_cast<int>(shape.size()); }

  T& at(int i0, int i1) { return v[static_cast<std::size_t>(i0) * shape[1] + i1]; }
  T at(int i0, int i1) const { return v[static_cast<std::size_t>(i0) * shape[1] + i1]; }
  T& at(int i0, int i1, int i2) {
    return v[(static_cast<std::size_t>(i0) * shape[1] + i1) * shape[2] + i2];
  }
  T at(int i0, int i1, int i2) const {
    return v[(static_cast<std::size_t>(i0) * shape[1] + i1) * shape[2] + i2];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

}  // namespace mvitime::nn
