#include "meshrt/rng.hpp"

#include <cmath>
#include <numbers>

namespace meshrt {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::array<std::uint32_t, 4> Rng::block(std::uint64_t counter) const {
  std::array<std::uint32_t, 4> c{static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
                                 static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
  std::uint32_t k0 = static_cast<std::uint32_t>(seed_);
  std::uint32_t k1 = static_cast<std::uint32_t>(seed_ >> 32);
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * c[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
    k0 += kPhiloxW0;
    k1 += kPhiloxW1;
  }
  return c;
}

Rng::result_type Rng::operator()() {
  if (buf_pos_ >= 3) {
    buf_ = block(counter_++);
    buf_pos_ = 0;
  }
  const std::uint64_t lo = buf_[buf_pos_];
  const std::uint64_t hi = buf_[buf_pos_ + 1];
  buf_pos_ += 2;
  return (hi << 32) | lo;
}

double Rng::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(a);
  has_spare_normal_ = true;
  return r * std::cos(a);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw RangeError("Rng::below(0)");
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = max() - max() % n;
  std::uint64_t x;
  do {
    x = (*this)();
  } while (x >= limit);
  return x % n;
}

Rng Rng::split(std::uint64_t id) const { return Rng(seed_, splitmix64(stream_ ^ splitmix64(id + 1))); }

template <class T>
Tensor<T> randn(Rng& rng, Shape shape, double stddev) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <class T>
Tensor<T> rand_uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return t;
}

Tensor<double> random_orthogonal(Rng& rng, std::size_t n) {
  Tensor<double> q = randn<double>(rng, {n, n});
  // Modified Gram-Schmidt over rows, done twice for orthogonality to ~1e-16.
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < n; ++i) {
      double* qi = q.row(i);
      for (std::size_t j = 0; j < i; ++j) {
        const double* qj = q.row(j);
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += qi[k] * qj[k];
        for (std::size_t k = 0; k < n; ++k) qi[k] -= dot * qj[k];
      }
      double norm = 0.0;
      for (std::size_t k = 0; k < n; ++k) norm += qi[k] * qi[k];
      norm = std::sqrt(norm);
      for (std::size_t k = 0; k < n; ++k) qi[k] /= norm;
    }
  }
  return q;
}

template Tensor<float> randn(Rng&, Shape, double);
template Tensor<double> randn(Rng&, Shape, double);
template Tensor<float> rand_uniform(Rng&, Shape, double, double);
template Tensor<double> rand_uniform(Rng&, Shape, double, double);

}  // namespace meshrt
