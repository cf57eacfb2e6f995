#include "gapctl/kernels/dense.hpp"

#if defined(__x86_64__) || defined(__i386__)
#define GAPCTL_HAVE_AVX2_KERNELS 1
#include <immintrin.h>
#endif

namespace gapctl::kernels {

#if GAPCTL_HAVE_AVX2_KERNELS

#define GAPCTL_AVX2 __attribute__((target("avx2,fma")))

namespace {

GAPCTL_AVX2 inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

GAPCTL_AVX2 void forward_avx2(const double* w, const double* b, const double* x, double* y,
                              int batch, int in, int out) {
  const int vec_end = in & ~3;
  for (int n = 0; n < batch; ++n) {
    const double* xn = x + static_cast<std::size_t>(n) * in;
    double* yn = y + static_cast<std::size_t>(n) * out;
    int o = 0;
    // Four output rows share each load of x.
    for (; o + 4 <= out; o += 4) {
      const double* w0 = w + static_cast<std::size_t>(o) * in;
      const double* w1 = w0 + in;
      const double* w2 = w1 + in;
      const double* w3 = w2 + in;
      __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
      __m256d a2 = _mm256_setzero_pd(), a3 = _mm256_setzero_pd();
      int i = 0;
      for (; i < vec_end; i += 4) {
        const __m256d xv = _mm256_loadu_pd(xn + i);
        a0 = _mm256_fmadd_pd(_mm256_loadu_pd(w0 + i), xv, a0);
        a1 = _mm256_fmadd_pd(_mm256_loadu_pd(w1 + i), xv, a1);
        a2 = _mm256_fmadd_pd(_mm256_loadu_pd(w2 + i), xv, a2);
        a3 = _mm256_fmadd_pd(_mm256_loadu_pd(w3 + i), xv, a3);
      }
      double s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
      for (; i < in; ++i) {
        s0 += w0[i] * xn[i];
        s1 += w1[i] * xn[i];
        s2 += w2[i] * xn[i];
        s3 += w3[i] * xn[i];
      }
      yn[o] = b[o] + s0;
      yn[o + 1] = b[o + 1] + s1;
      yn[o + 2] = b[o + 2] + s2;
      yn[o + 3] = b[o + 3] + s3;
    }
    for (; o < out; ++o) {
      const double* wo = w + static_cast<std::size_t>(o) * in;
      __m256d a = _mm256_setzero_pd();
      int i = 0;
      for (; i < vec_end; i += 4) a = _mm256_fmadd_pd(_mm256_loadu_pd(wo + i), _mm256_loadu_pd(xn + i), a);
      double s = hsum(a);
      for (; i < in; ++i) s += wo[i] * xn[i];
      yn[o] = b[o] + s;
    }
  }
}

GAPCTL_AVX2 inline void axpy(double a, const double* x, double* y, int len) {
  const __m256d av = _mm256_set1_pd(a);
  int i = 0;
  for (; i + 4 <= len; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < len; ++i) y[i] += a * x[i];
}

GAPCTL_AVX2 void backward_input_avx2(const double* w, const double* dy, double* dx, int batch,
                                     int in, int out) {
  for (int n = 0; n < batch; ++n) {
    double* dxn = dx + static_cast<std::size_t>(n) * in;
    const double* dyn = dy + static_cast<std::size_t>(n) * out;
    for (int i = 0; i < in; ++i) dxn[i] = 0.0;
    for (int o = 0; o < out; ++o) axpy(dyn[o], w + static_cast<std::size_t>(o) * in, dxn, in);
  }
}

GAPCTL_AVX2 void accumulate_gradient_avx2(const double* dy, const double* x, double* dw, double* db,
                                          int batch, int in, int out) {
  for (int n = 0; n < batch; ++n) {
    const double* xn = x + static_cast<std::size_t>(n) * in;
    const double* dyn = dy + static_cast<std::size_t>(n) * out;
    for (int o = 0; o < out; ++o) {
      db[o] += dyn[o];
      axpy(dyn[o], xn, dw + static_cast<std::size_t>(o) * in, in);
    }
  }
}

GAPCTL_AVX2 void adam_update_avx2(double* p, const double* g, double* m, double* v, std::size_t n,
                                  const AdamStep& s) {
  const __m256d b1 = _mm256_set1_pd(s.beta1), c1 = _mm256_set1_pd(1.0 - s.beta1);
  const __m256d b2 = _mm256_set1_pd(s.beta2), c2 = _mm256_set1_pd(1.0 - s.beta2);
  const __m256d ib1 = _mm256_set1_pd(s.bias1), ib2 = _mm256_set1_pd(s.bias2);
  const __m256d lr = _mm256_set1_pd(s.learning_rate), eps = _mm256_set1_pd(s.epsilon);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d gv = _mm256_loadu_pd(g + k);
    const __m256d mv = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + k)), _mm256_mul_pd(c1, gv));
    const __m256d vv = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + k)),
                                     _mm256_mul_pd(_mm256_mul_pd(c2, gv), gv));
    _mm256_storeu_pd(m + k, mv);
    _mm256_storeu_pd(v + k, vv);
    const __m256d mhat = _mm256_div_pd(mv, ib1);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(_mm256_div_pd(vv, ib2)), eps);
    _mm256_storeu_pd(p + k, _mm256_sub_pd(_mm256_loadu_pd(p + k),
                                          _mm256_div_pd(_mm256_mul_pd(lr, mhat), denom)));
  }
  if (k < n) scalar_kernels().adam_update(p + k, g + k, m + k, v + k, n - k, s);
}

}  // namespace

const DenseKernels* avx2_kernels() {
  static const DenseKernels k{Isa::Avx2, "avx2", forward_avx2, backward_input_avx2,
                              accumulate_gradient_avx2, adam_update_avx2};
  return &k;
}

bool cpu_supports_avx2() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

#else

const DenseKernels* avx2_kernels() { return nullptr; }
bool cpu_supports_avx2() { return false; }

#endif

}  // namespace gapctl::kernels
