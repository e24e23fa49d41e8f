#include "llgan/kernels.hpp"

#include <cblas.h>
#include <omp.h>

#include <cstring>

namespace llgan::kernels {

namespace {
Backend g_backend = Backend::fast;
}

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

namespace {

template <typename T>
void gemm_reference(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
                    const T* a, int lda, const T* b, int ldb, T beta, T* c,
                    int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) {
        T av = trans_a ? a[p * lda + i] : a[i * lda + p];
        T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      c[i * ldc + j] = alpha * acc + (beta == T(0) ? T(0) : beta * c[i * ldc + j]);
    }
  }
}

}  // namespace

template <>
void gemm<float>(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta,
                 float* c, int ldc) {
  if (g_backend == Backend::reference) {
    gemm_reference(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    return;
  }
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

template <>
void gemm<double>(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                  const double* a, int lda, const double* b, int ldb,
                  double beta, double* c, int ldc) {
  if (g_backend == Backend::reference) {
    gemm_reference(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    return;
  }
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

template <typename T>
void im2col(const T* im, int channels, int h, int w, int kernel, int stride,
            int pad, T* col) {
  const int ho = conv_out_size(h, kernel, stride, pad);
  const int wo = conv_out_size(w, kernel, stride, pad);
  const int rows = channels * kernel * kernel;
#pragma omp parallel for schedule(static) if (g_backend == Backend::fast)
  for (int r = 0; r < rows; ++r) {
    const int c = r / (kernel * kernel);
    const int kh = (r / kernel) % kernel;
    const int kw = r % kernel;
    T* dst = col + static_cast<int64_t>(r) * ho * wo;
    const T* src = im + static_cast<int64_t>(c) * h * w;
    for (int oy = 0; oy < ho; ++oy) {
      const int iy = oy * stride - pad + kh;
      for (int ox = 0; ox < wo; ++ox) {
        const int ix = ox * stride - pad + kw;
        dst[oy * wo + ox] =
            (iy >= 0 && iy < h && ix >= 0 && ix < w) ? src[iy * w + ix] : T(0);
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int channels, int h, int w, int kernel, int stride,
            int pad, T* im) {
  const int ho = conv_out_size(h, kernel, stride, pad);
  const int wo = conv_out_size(w, kernel, stride, pad);
  // Parallel over channels: all rows of one channel scatter into a disjoint
  // image plane, so the accumulation order per element is fixed.
#pragma omp parallel for schedule(static) if (g_backend == Backend::fast)
  for (int c = 0; c < channels; ++c) {
    T* dst = im + static_cast<int64_t>(c) * h * w;
    for (int kh = 0; kh < kernel; ++kh) {
      for (int kw = 0; kw < kernel; ++kw) {
        const int r = (c * kernel + kh) * kernel + kw;
        const T* src = col + static_cast<int64_t>(r) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + kh;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kw;
            if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const T* in, const T* weight, const T* bias, int n,
                    int c_in, int h, int w, int c_out, int kernel, int stride,
                    int pad, T* out) {
  const int ho = conv_out_size(h, kernel, stride, pad);
  const int wo = conv_out_size(w, kernel, stride, pad);
  for (int b = 0; b < n; ++b) {
    const T* x = in + static_cast<int64_t>(b) * c_in * h * w;
    T* y = out + static_cast<int64_t>(b) * c_out * ho * wo;
    for (int oc = 0; oc < c_out; ++oc) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          T acc = bias ? bias[oc] : T(0);
          for (int ic = 0; ic < c_in; ++ic) {
            for (int ky = 0; ky < kernel; ++ky) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kernel; ++kx) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= w) continue;
                acc += x[(ic * h + iy) * w + ix] *
                       weight[((oc * c_in + ic) * kernel + ky) * kernel + kx];
              }
            }
          }
          y[(oc * ho + oy) * wo + ox] = acc;
        }
      }
    }
  }
}

template void im2col<float>(const float*, int, int, int, int, int, int, float*);
template void im2col<double>(const double*, int, int, int, int, int, int, double*);
template void col2im<float>(const float*, int, int, int, int, int, int, float*);
template void col2im<double>(const double*, int, int, int, int, int, int, double*);
template void conv2d_forward<float>(const float*, const float*, const float*,
                                    int, int, int, int, int, int, int, int,
                                    float*);
template void conv2d_forward<double>(const double*, const double*,
                                     const double*, int, int, int, int, int,
                                     int, int, int, double*);

}  // namespace llgan::kernels
