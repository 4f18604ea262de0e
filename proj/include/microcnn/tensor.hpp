#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "microcnn/errors.hpp"
#include "microcnn/rng.hpp"

namespace microcnn {

/// Row-major dimension list, outermost first. Every dimension is >= 1.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw DimensionError("shape must have at least one dimension");
    std::size_t count = 1;
    for (auto d : dims_) {
      if (d == 0) throw DimensionError("shape " + to_string() + " has a zero dimension");
      if (count > std::numeric_limits<std::size_t>::max() / d)
        throw DimensionError("element count of shape " + to_string() + " overflows");
      count *= d;
    }
    count_ = count;
  }

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t count() const { return count_; }
  const std::vector<std::size_t>& dims() const { return dims_; }

  std::vector<std::size_t> strides() const {
    std::vector<std::size_t> s(dims_.size(), 1);
    for (std::size_t i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i];
    return s;
  }

  std::string to_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << ']';
    return os.str();
  }

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }

 private:
  std::vector<std::size_t> dims_;
  std::size_t count_ = 0;
};

/// Dense float32 array with an explicit shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(std::move(shape)), data_(shape_.count(), fill) {}
  Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_.count())
      throw DimensionError("tensor of shape " + shape_.to_string() + " needs " +
                           std::to_string(shape_.count()) + " values, got " +
                           std::to_string(data_.size()));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* raw() { return data_.data(); }
  const float* raw() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  float at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank())
      throw DimensionError("index rank " + std::to_string(index.size()) + " does not match shape " +
                           shape_.to_string());
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : index) {
      if (i >= shape_[axis]) throw DimensionError("index out of range for shape " + shape_.to_string());
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  /// Same data under a new shape with an equal element count.
  Tensor reshaped(Shape shape) const& {
    Tensor t = *this;
    t.reshape(std::move(shape));
    return t;
  }
  Tensor reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }
  void reshape(Shape shape) {
    if (shape.count() != data_.size())
      throw DimensionError("cannot reshape " + shape_.to_string() + " to " + shape.to_string());
    shape_ = std::move(shape);
  }

  void fill(float value) { std::fill(data_.begin(), data_.end(), value); }

 private:
  Shape shape_;
  std::vector<float> data_;
};

inline Tensor zeros(const Shape& shape) { return Tensor(shape); }

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().to_string() + " vs " +
                         b.shape().to_string());
}

// ---------------------------------------------------------------------------
// Matrix products. Every output element is accumulated in float over the
// inner dimension in increasing index order, so blocking never changes the
// result.

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + t.shape().to_string());
}

// c[m x n] = a[m x k] * b[k x n]
inline void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  std::fill(c, c + m * n, 0.0f);
  constexpr std::size_t kBlock = 128;
  for (std::size_t p0 = 0; p0 < k; p0 += kBlock) {
    const std::size_t p1 = std::min(k, p0 + kBlock);
    for (std::size_t i = 0; i < m; ++i) {
      float* __restrict crow = c + i * n;
      const float* arow = a + i * k;
      for (std::size_t p = p0; p < p1; ++p) {
        const float aip = arow[p];
        const float* __restrict brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
}

inline float dot(const float* __restrict x, const float* __restrict y, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t p = 0;
  for (; p + 8 <= n; p += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += x[p + l] * y[p + l];
  float tail = 0.0f;
  for (; p < n; ++p) tail += x[p] * y[p];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

// c[m x n] = a[m x k] * b[n x k]^T
inline void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  constexpr std::size_t jBlock = 32;
  for (std::size_t j0 = 0; j0 < n; j0 += jBlock) {
    const std::size_t j1 = std::min(n, j0 + jBlock);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = j0; j < j1; ++j) c[i * n + j] = dot(a + i * k, b + j * k, k);
  }
}

}  // namespace detail

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Tensor t(Shape{cols, rows});
  const float* src = a.raw();
  float* dst = t.raw();
  constexpr std::size_t B = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += B)
    for (std::size_t j0 = 0; j0 < cols; j0 += B)
      for (std::size_t i = i0; i < std::min(rows, i0 + B); ++i)
        for (std::size_t j = j0; j < std::min(cols, j0 + B); ++j) dst[j * rows + i] = src[i * cols + j];
  return t;
}

/// a[m x k] * b[k x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner dimensions differ, " + a.shape().to_string() + " x " +
                         b.shape().to_string());
  Tensor c(Shape{a.dim(0), b.dim(1)});
  detail::gemm_nn(a.raw(), b.raw(), c.raw(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

/// a^T * b for a[k x m], b[k x n]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_tn");
  detail::require_matrix(b, "matmul_tn");
  if (a.dim(0) != b.dim(0))
    throw DimensionError("matmul_tn: leading dimensions differ, " + a.shape().to_string() + "^T x " +
                         b.shape().to_string());
  return matmul(transpose(a), b);
}

/// a * b^T for a[m x k], b[n x k]
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  if (a.dim(1) != b.dim(1))
    throw DimensionError("matmul_nt: trailing dimensions differ, " + a.shape().to_string() + " x " +
                         b.shape().to_string() + "^T");
  Tensor c(Shape{a.dim(0), b.dim(0)});
  detail::gemm_nt(a.raw(), b.raw(), c.raw(), a.dim(0), a.dim(1), b.dim(0));
  return c;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename F>
Tensor zip_with(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return zip_with(a, b, "add", [](float x, float y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return zip_with(a, b, "sub", [](float x, float y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return zip_with(a, b, "mul", [](float x, float y) { return x * y; });
}
inline Tensor add(const Tensor& a, float s) {
  Tensor out = a;
  for (auto& v : out.data()) v += s;
  return out;
}
inline Tensor scale(const Tensor& a, float s) {
  Tensor out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}
template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

/// a += b, in place.
inline void add_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add_inplace");
  float* __restrict pa = a.raw();
  const float* __restrict pb = b.raw();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

// ---------------------------------------------------------------------------
// Reductions

enum class ReduceOp { sum, mean, max, argmax };

/// Lowest index holding the maximum value.
inline std::size_t argmax(std::span<const float> values) {
  if (values.empty()) throw DimensionError("argmax of empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

/// Removes `axis`, applying `op` along it. Reducing a rank-1 tensor yields
/// shape [1]. argmax results are stored as float indices.
inline Tensor reduce(const Tensor& t, ReduceOp op, std::size_t axis) {
  if (axis >= t.rank())
    throw DimensionError("reduce: axis " + std::to_string(axis) + " out of range for shape " +
                         t.shape().to_string());
  const auto& dims = t.shape().dims();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= dims[i];
  for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
  const std::size_t extent = dims[axis];

  std::vector<std::size_t> out_dims;
  for (std::size_t i = 0; i < dims.size(); ++i)
    if (i != axis) out_dims.push_back(dims[i]);
  if (out_dims.empty()) out_dims.push_back(1);
  Tensor out{Shape(out_dims)};

  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const float* base = t.raw() + o * extent * inner + in;
      float result = 0.0f;
      switch (op) {
        case ReduceOp::sum:
        case ReduceOp::mean: {
          double acc = 0.0;
          for (std::size_t e = 0; e < extent; ++e) acc += base[e * inner];
          result = static_cast<float>(op == ReduceOp::mean ? acc / static_cast<double>(extent) : acc);
          break;
        }
        case ReduceOp::max: {
          result = base[0];
          for (std::size_t e = 1; e < extent; ++e) result = std::max(result, base[e * inner]);
          break;
        }
        case ReduceOp::argmax: {
          std::size_t best = 0;
          for (std::size_t e = 1; e < extent; ++e)
            if (base[e * inner] > base[best * inner]) best = e;
          result = static_cast<float>(best);
          break;
        }
      }
      out[o * inner + in] = result;
    }
  }
  return out;
}

inline double sum_all(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.data()) acc += v;
  return acc;
}

// ---------------------------------------------------------------------------
// Random initialisation

inline Tensor rng_uniform(Rng& rng, const Shape& shape, float lo, float hi) {
  if (!(lo < hi)) throw std::invalid_argument("rng_uniform requires lo < hi");
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace microcnn
