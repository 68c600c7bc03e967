#include "unisurf/random.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include "unisurf/hash.hpp"

namespace unisurf {
namespace {
std::atomic<std::uint64_t> g_draws{0};
}

RandomStream::RandomStream(std::uint64_t seed)
    : seed_(seed), engine_(mix_seed(seed, 1)), tensor_gen_(at::detail::createCPUGenerator(mix_seed(seed, 2))) {}

void RandomStream::count() {
  ++draws_;
  g_draws.fetch_add(1, std::memory_order_relaxed);
}

std::uint64_t RandomStream::next_u64() {
  count();
  return engine_();
}

double RandomStream::uniform() {
  count();
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
}

int RandomStream::uniform_int(int lo, int hi_inclusive) {
  count();
  return std::uniform_int_distribution<int>(lo, hi_inclusive)(engine_);
}

bool RandomStream::bernoulli(double p) { return uniform() < p; }

torch::Tensor RandomStream::normal(at::IntArrayRef shape, double sigma) {
  count();
  auto t = torch::randn(shape, tensor_gen_, torch::TensorOptions().dtype(torch::kFloat32));
  return sigma == 1.0 ? t : t.mul_(sigma);
}

RandomStream RandomStream::fork(std::uint64_t tag) const { return RandomStream(mix_seed(seed_, tag + 0x100)); }

std::uint64_t RandomStream::global_draws() noexcept { return g_draws.load(std::memory_order_relaxed); }

}  // namespace unisurf
