#include "gapctl/kernels/dense.hpp"

#include <cmath>

namespace gapctl::kernels {

namespace {

void forward_scalar(const double* w, const double* b, const double* x, double* y, int batch, int in,
                    int out) {
  for (int n = 0; n < batch; ++n) {
    const double* xn = x + static_cast<std::size_t>(n) * in;
    double* yn = y + static_cast<std::size_t>(n) * out;
    for (int o = 0; o < out; ++o) {
      const double* wo = w + static_cast<std::size_t>(o) * in;
      double acc = 0.0;
      for (int i = 0; i < in; ++i) acc += wo[i] * xn[i];
      yn[o] = b[o] + acc;
    }
  }
}

void backward_input_scalar(const double* w, const double* dy, double* dx, int batch, int in,
                           int out) {
  for (int n = 0; n < batch; ++n) {
    double* dxn = dx + static_cast<std::size_t>(n) * in;
    const double* dyn = dy + static_cast<std::size_t>(n) * out;
    for (int i = 0; i < in; ++i) dxn[i] = 0.0;
    for (int o = 0; o < out; ++o) {
      const double g = dyn[o];
      const double* wo = w + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) dxn[i] += g * wo[i];
    }
  }
}

void accumulate_gradient_scalar(const double* dy, const double* x, double* dw, double* db, int batch,
                                int in, int out) {
  for (int n = 0; n < batch; ++n) {
    const double* xn = x + static_cast<std::size_t>(n) * in;
    const double* dyn = dy + static_cast<std::size_t>(n) * out;
    for (int o = 0; o < out; ++o) {
      const double g = dyn[o];
      db[o] += g;
      double* dwo = dw + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) dwo[i] += g * xn[i];
    }
  }
}

void adam_update_scalar(double* p, const double* g, double* m, double* v, std::size_t n,
                        const AdamStep& s) {
  const double c1 = 1.0 - s.beta1;
  const double c2 = 1.0 - s.beta2;
  for (std::size_t k = 0; k < n; ++k) {
    m[k] = s.beta1 * m[k] + c1 * g[k];
    v[k] = s.beta2 * v[k] + c2 * g[k] * g[k];
    const double mhat = m[k] / s.bias1;
    const double vhat = v[k] / s.bias2;
    p[k] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.epsilon);
  }
}

}  // namespace

const DenseKernels& scalar_kernels() {
  static const DenseKernels k{Isa::Scalar, "scalar", forward_scalar, backward_input_scalar,
                              accumulate_gradient_scalar, adam_update_scalar};
  return k;
}

}  // namespace gapctl::kernels
