#pragma once

#include <cstddef>

// Dense-layer arithmetic behind the MLP. Every kernel has a scalar reference
// and an AVX2+FMA variant; the variant is chosen once at runtime from CPUID
// (override with GAPCTL_KERNELS=scalar|avx2). All matrices are row-major.

namespace gapctl::kernels {

enum class Isa { Scalar, Avx2 };

struct AdamStep {
  double learning_rate;
  double beta1;
  double beta2;
  double epsilon;
  double bias1;  ///< 1 - beta1^t
  double bias2;  ///< 1 - beta2^t
};

struct DenseKernels {
  Isa isa;
  const char* name;
  /// y[n][o] = b[o] + sum_i w[o][i] x[n][i]
  void (*forward)(const double* w, const double* b, const double* x, double* y, int batch, int in,
                  int out);
  /// dx[n][i] = sum_o w[o][i] dy[n][o]
  void (*backward_input)(const double* w, const double* dy, double* dx, int batch, int in, int out);
  /// dw[o][i] += sum_n dy[n][o] x[n][i];  db[o] += sum_n dy[n][o]
  void (*accumulate_gradient)(const double* dy, const double* x, double* dw, double* db, int batch,
                              int in, int out);
  void (*adam_update)(double* param, const double* grad, double* m, double* v, std::size_t n,
                      const AdamStep& step);
};

const DenseKernels& scalar_kernels();
/// nullptr when the build has no AVX2 variant.
const DenseKernels* avx2_kernels();
bool cpu_supports_avx2();

/// Kernels used by the MLP. Resolved on first use.
const DenseKernels& active_kernels();
/// Forces a variant; returns false (and keeps the current one) if unavailable.
bool select_kernels(Isa isa);

}  // namespace gapctl::kernels
