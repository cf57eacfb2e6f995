#include "gapctl/kernels/dense.hpp"

#include <atomic>
#include <cstdlib>
#include <string_view>

namespace gapctl::kernels {

namespace {

const DenseKernels* resolve() {
  const char* env = std::getenv("GAPCTL_KERNELS");
  if (env && std::string_view(env) == "scalar") return &scalar_kernels();
  if (avx2_kernels() && cpu_supports_avx2()) return avx2_kernels();
  return &scalar_kernels();
}

std::atomic<const DenseKernels*>& current() {
  static std::atomic<const DenseKernels*> k{resolve()};
  return k;
}

}  // namespace

const DenseKernels& active_kernels() { return *current().load(std::memory_order_acquire); }

bool select_kernels(Isa isa) {
  if (isa == Isa::Scalar) {
    current().store(&scalar_kernels(), std::memory_order_release);
    return true;
  }
  if (!avx2_kernels() || !cpu_supports_avx2()) return false;
  current().store(avx2_kernels(), std::memory_order_release);
  return true;
}

}  // namespace gapctl::kernels
