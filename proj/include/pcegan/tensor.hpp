#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <vector>

namespace pcegan {

// Dense row-major 2D array. Higher-rank data (n x k x C) is stored flattened
// as (n*k) x C with the group size carried by the consuming op.
template <typename T>
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, T(0)) {
    if (r < 0 || c < 0) throw std::invalid_argument("tensor: negative shape");
  }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }

  static Tensor full(int r, int c, T value) {
    Tensor t(r, c);
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }

  static Tensor scalar(T value) { return full(1, 1, value); }

  static Tensor from(int r, int c, std::initializer_list<T> init) {
    Tensor t(r, c);
    if (static_cast<int>(init.size()) != r * c)
      throw std::invalid_argument("tensor: initializer size mismatch");
    std::copy(init.begin(), init.end(), t.v.begin());
    return t;
  }

  T& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(rows, cols);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

// Uniform init in [-bound, bound]; used for layer weights.
template <typename T, typename Rng>
Tensor<T> uniform_tensor(int r, int c, T bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound),
                                              static_cast<double>(bound));
  Tensor<T> t(r, c);
  for (auto& x : t.v) x = static_cast<T>(dist(rng));
  return t;
}

}  // namespace pcegan
