#pragma once

#include <array>
#include <cstdint>
#include <limits>

#include "meshrt/tensor.hpp"

namespace meshrt {

/// Counter-based generator (Philox4x32-10). The output is a pure function of
/// (seed, stream, counter), so `split` yields independent streams without
/// shared state. Satisfies UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal (Box-Muller; both halves used).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent generator keyed by (seed, hash(stream, id)).
  Rng split(std::uint64_t id) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  std::array<std::uint32_t, 4> block(std::uint64_t counter) const;

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int buf_pos_ = 4;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

template <class T>
Tensor<T> randn(Rng& rng, Shape shape, double stddev = 1.0);

template <class T>
Tensor<T> rand_uniform(Rng& rng, Shape shape, double lo, double hi);

/// Random orthogonal n×n matrix (Gram-Schmidt on a Gaussian matrix).
Tensor<double> random_orthogonal(Rng& rng, std::size_t n);

}  // namespace meshrt
