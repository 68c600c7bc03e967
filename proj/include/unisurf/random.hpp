#pragma once

#include <ATen/core/Generator.h>
#include <torch/types.h>

#include <atomic>
#include <cstdint>
#include <random>

namespace unisurf {

/// Explicit random stream for every stochastic step of training: scalar
/// draws come from a 64-bit Mersenne twister, tensor draws from a seeded
/// ATen CPU generator. Every draw bumps a process-wide counter so that
/// inference can be checked to be RNG-free.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  double uniform();                           // [0, 1)
  int uniform_int(int lo, int hi_inclusive);  // [lo, hi]
  bool bernoulli(double p);

  /// i.i.d. N(0, sigma^2) float tensor of the given shape.
  torch::Tensor normal(at::IntArrayRef shape, double sigma);

  /// Independent substream keyed by `tag`; does not advance this stream.
  RandomStream fork(std::uint64_t tag) const;

  std::uint64_t draws() const noexcept { return draws_; }
  static std::uint64_t global_draws() noexcept;

 private:
  void count();

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  at::Generator tensor_gen_;
  std::uint64_t draws_ = 0;
};

}  // namespace unisurf
