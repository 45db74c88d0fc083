#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "meshrt/errors.hpp"

namespace meshrt {

enum class Dtype { F32, F64 };

std::string to_string(Dtype d);
Dtype parse_dtype(const std::string& s);

template <class T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() { return Dtype::F32; }
template <>
constexpr Dtype dtype_of<double>() { return Dtype::F64; }

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

/// Dense row-major array of rank 1-3. A default-constructed tensor is empty
/// (rank 0, no data) and only valid as a placeholder.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value);
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);
  static Tensor vector(std::initializer_list<T> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  bool empty() const noexcept { return data_.empty(); }

  // Rank-2 accessors; a rank-1 tensor is viewed as a single row.
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols() + j]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * cols() + j];
  }

  T* row(std::size_t i) noexcept { return data_.data() + i * cols(); }
  const T* row(std::size_t i) const noexcept { return data_.data() + i * cols(); }

  static constexpr Dtype dtype() { return dtype_of<T>(); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

std::size_t shape_numel(const Shape& s);

/// Throws NumericalError naming `where` if any value is NaN or Inf.
template <class T>
void check_finite(const Tensor<T>& x, const char* where);

template <class T>
bool all_finite(const Tensor<T>& x);

// ---------------------------------------------------------------------------
// Kernels. All reductions run in a fixed left-to-right order so results are
// bitwise reproducible.
// ---------------------------------------------------------------------------

/// a[L×D] · b[D×E]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a[L×D] · b[E×D]ᵀ
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
/// a[D×L]ᵀ · b[D×E]
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> transpose(const Tensor<T>& a);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> scale(const Tensor<T>& a, T s);
/// a += b, shapes must match.
template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

/// Row-wise softmax along the last dimension, max-subtracted.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <class T>
double frobenius(const Tensor<T>& x);

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
/// Iterates until the off-diagonal Frobenius mass is below `tol` times the
/// matrix norm.
std::vector<double> symmetric_eigenvalues(Tensor<double> a, double tol = 1e-10,
                                          int max_sweeps = 100);

/// Top-k singular values (descending) from the smaller Gram matrix.
template <class T>
std::vector<double> singular_values(const Tensor<T>& x, std::size_t top_k);

}  // namespace meshrt
