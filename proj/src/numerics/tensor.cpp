#include "meshrt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace meshrt {

std::string to_string(Dtype d) { return d == Dtype::F32 ? "f32" : "f64"; }

Dtype parse_dtype(const std::string& s) {
  if (s == "f32" || s == "float32") return Dtype::F32;
  if (s == "f64" || s == "float64") return Dtype::F64;
  throw ConfigError("unknown dtype '" + s + "' (expected f32 or f64)");
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

namespace {

void validate_shape(const Shape& s) {
  if (s.empty() || s.size() > 3)
    throw ShapeError("tensor rank must be 1-3, got shape " + shape_str(s));
}

template <class T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}


// c[n×m] = A·b where A(i, kk) = pa[i*sai + kk*sak] and b is row-major [k×m].
// Tiles of c live in registers across the whole kk loop, so every element is
// still summed over kk = 0, 1, ... in order, exactly like a naive triple loop.
template <class T>
void gemm(const T* __restrict pa, std::size_t sai, std::size_t sak, const T* __restrict pb, T* __restrict pc,
          std::size_t n, std::size_t k, std::size_t m) {
  constexpr std::size_t RB = 4;
  constexpr std::size_t CB = 128 / sizeof(T);
  auto scalar = [&](std::size_t i, std::size_t j) {
    T s = 0;
    for (std::size_t kk = 0; kk < k; ++kk) s += pa[i * sai + kk * sak] * pb[kk * m + j];
    pc[i * m + j] = s;
  };
  std::size_t i = 0;
  for (; i + RB <= n; i += RB) {
    std::size_t j = 0;
    for (; j + CB <= m; j += CB) {
      T acc[RB][CB] = {};
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T* __restrict brow = pb + kk * m + j;
        for (std::size_t r = 0; r < RB; ++r) {
          const T a = pa[(i + r) * sai + kk * sak];
          for (std::size_t c = 0; c < CB; ++c) acc[r][c] += a * brow[c];
        }
      }
      for (std::size_t r = 0; r < RB; ++r)
        for (std::size_t c = 0; c < CB; ++c) pc[(i + r) * m + j + c] = acc[r][c];
    }
    for (; j < m; ++j)
      for (std::size_t r = 0; r < RB; ++r) scalar(i + r, j);
  }
  for (; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) scalar(i, j);
}

}  // namespace

template <class T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), T(0));
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (shape_numel(shape_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

template <class T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

template <class T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values) {
  return Tensor({values.size()}, std::vector<T>(values));
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template class Tensor<float>;
template class Tensor<double>;

template <class T>
bool all_finite(const Tensor<T>& x) {
  for (T v : x.data())
    if (!std::isfinite(v)) return false;
  return true;
}

template <class T>
void check_finite(const Tensor<T>& x, const char* where) {
  if (!all_finite(x)) throw NumericalError(std::string("non-finite value in ") + where);
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> c({n, m});
  gemm(a.data().data(), k, 1, b.data().data(), c.data().data(), n, k, m);
  return c;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a, "transpose");
  const std::size_t n = a.dim(0), m = a.dim(1);
  Tensor<T> t({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) t(j, i) = a(i, j);
  return t;
}

template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(b, "matmul_nt");
  return matmul(a, transpose(b));
}

template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  const std::size_t k = a.dim(0), n = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul_tn: leading dimensions differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor<T> c({n, m});
  gemm(a.data().data(), 1, n, b.data().data(), c.data().data(), n, k, m);
  return c;
}

namespace {

template <class T, class F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f) {
  require_same(a, b, op);
  Tensor<T> out(a.shape());
  auto pa = a.data(), pb = b.data();
  auto po = out.data();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] = f(pa[i], pb[i]);
  return out;
}

}  // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, "add", std::plus<T>());
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, "sub", std::minus<T>());
}

template <class T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, "hadamard", std::multiplies<T>());
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (T& v : out.data()) v *= s;
  return out;
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "add_inplace");
  auto pa = a.data();
  auto pb = b.data();
  for (std::size_t i = 0; i < pa.size(); ++i) pa[i] += pb[i];
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.rank() > 2) throw ShapeError("softmax_rows: expected rank 1 or 2");
  check_finite(x, "softmax_rows input");
  Tensor<T> out(x.shape());
  const std::size_t r = x.rows(), c = x.cols();
  for (std::size_t i = 0; i < r; ++i) {
    const T* in = x.row(i);
    T* o = out.row(i);
    T mx = in[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < c; ++j) o[j] *= inv;
  }
  return out;
}

template <class T>
double frobenius(const Tensor<T>& x) {
  double s = 0.0;
  for (T v : x.data()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

std::vector<double> symmetric_eigenvalues(Tensor<double> a, double tol, int max_sweeps) {
  require_matrix(a, "symmetric_eigenvalues");
  const std::size_t n = a.dim(0);
  if (a.dim(1) != n) throw ShapeError("symmetric_eigenvalues: matrix is not square");
  const double norm = frobenius(a);
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) s += 2.0 * a(p, q) * a(p, q);
    return std::sqrt(s);
  };
  for (int sweep = 0; sweep < max_sweeps && norm > 0.0; ++sweep) {
    if (off_norm() <= tol * norm) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p), aqq = a(q, q);
        // Rotation annihilating a(p,q), stable form (Golub & Van Loan 8.5.2).
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<double>());
  return ev;
}

template <class T>
std::vector<double> singular_values(const Tensor<T>& x, std::size_t top_k) {
  require_matrix(x, "singular_values");
  const std::size_t l = x.dim(0), d = x.dim(1);
  if (top_k == 0 || top_k > std::min(l, d))
    throw ShapeError("singular_values: top_k " + std::to_string(top_k) + " outside [1, " +
                     std::to_string(std::min(l, d)) + "]");
  const Tensor<double> xd = x.template cast<double>();
  const Tensor<double> gram = d <= l ? matmul_tn(xd, xd) : matmul_nt(xd, xd);
  std::vector<double> ev = symmetric_eigenvalues(gram);
  ev.resize(top_k);
  for (double& v : ev) v = std::sqrt(std::max(v, 0.0));
  return ev;
}

#define MESHRT_INSTANTIATE(T)                                                  \
  template bool all_finite(const Tensor<T>&);                                  \
  template void check_finite(const Tensor<T>&, const char*);                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> transpose(const Tensor<T>&);                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> hadamard(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> scale(const Tensor<T>&, T);                               \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> softmax_rows(const Tensor<T>&);                           \
  template double frobenius(const Tensor<T>&);                                 \
  template double max_abs_diff(const Tensor<T>&, const Tensor<T>&);            \
  template std::vector<double> singular_values(const Tensor<T>&, std::size_t);

MESHRT_INSTANTIATE(float)
MESHRT_INSTANTIATE(double)

}  // namespace meshrt
