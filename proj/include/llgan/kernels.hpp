#pragma once

#include <cstdint>

// Low-level numeric kernels. Two backends share one interface: a plain
// serial reference used by the tests, and the fast path (im2col + BLAS
// GEMM, OpenMP elementwise loops). Every output element is produced by a
// single summation chain regardless of thread count, so results do not
// depend on the number of workers.
namespace llgan::kernels {

enum class Backend { reference, fast };

Backend backend();
void set_backend(Backend b);

// C (m x n) = alpha * op(A) (m x k) * op(B) (k x n) + beta * C, row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
          const T* a, int lda, const T* b, int ldb, T beta, T* c, int ldc);

inline int conv_out_size(int in, int kernel, int stride, int pad) {
  return (in - kernel + 2 * pad) / stride + 1;
}

inline int conv_transpose_out_size(int in, int kernel, int stride, int pad) {
  return (in - 1) * stride - 2 * pad + kernel;
}

// Unrolls one C x H x W image into a (C*K*K) x (Ho*Wo) column matrix.
template <typename T>
void im2col(const T* im, int channels, int h, int w, int kernel, int stride,
            int pad, T* col);

// Adjoint of im2col: scatters the column matrix back, accumulating into im.
template <typename T>
void col2im(const T* col, int channels, int h, int w, int kernel, int stride,
            int pad, T* im);

// Direct convolution, reference semantics. out must be zero-initialized by
// the caller only in the accumulate=false case (it is overwritten).
template <typename T>
void conv2d_forward(const T* in, const T* weight, const T* bias, int n,
                    int c_in, int h, int w, int c_out, int kernel, int stride,
                    int pad, T* out);

}  // namespace llgan::kernels
