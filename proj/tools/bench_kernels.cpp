// Benchmarks the serial reference kernels against the fast (im2col + BLAS,
// OpenMP) backend on representative convolution shapes and reports the
// maximum elementwise divergence alongside the timings.

#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#include "llgan/kernels.hpp"
#include "llgan/layers.hpp"

using namespace llgan;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct Shape {
  const char* name;
  int n, c_in, hw, c_out, k, stride, pad;
};

void bench(const Shape& s, int reps) {
  std::mt19937_64 rng(42);
  std::normal_distribution<float> dist(0.f, 1.f);
  nn::FTensor x = nn::FTensor::zeros({s.n, s.c_in, s.hw, s.hw});
  nn::FTensor w = nn::FTensor::zeros({s.c_out, s.c_in, s.k, s.k});
  nn::FTensor b = nn::FTensor::zeros({s.c_out});
  for (auto& v : x.data()) v = dist(rng);
  for (auto& v : w.data()) v = 0.05f * dist(rng);

  kernels::set_backend(kernels::Backend::reference);
  auto t0 = Clock::now();
  nn::FTensor ref;
  for (int r = 0; r < reps; ++r) ref = nn::conv2d(x, w, b, s.stride, s.pad);
  const double ref_ms = ms_since(t0) / reps;

  kernels::set_backend(kernels::Backend::fast);
  t0 = Clock::now();
  nn::FTensor fast;
  for (int r = 0; r < reps; ++r) fast = nn::conv2d(x, w, b, s.stride, s.pad);
  const double fast_ms = ms_since(t0) / reps;
  kernels::set_backend(kernels::Backend::fast);

  float max_diff = 0.f;
  for (int64_t i = 0; i < ref.numel(); ++i)
    max_diff = std::max(max_diff,
                        std::abs(ref.data()[i] - fast.data()[i]));

  std::printf("%-28s reference %9.2f ms   fast %9.2f ms   speedup %6.2fx   "
              "max |diff| %.3e\n",
              s.name, ref_ms, fast_ms, ref_ms / fast_ms, max_diff);
}

}  // namespace

int main() {
  std::printf("conv2d forward: serial reference vs im2col+GEMM backend\n");
  bench({"g-head 64x142x142 -> 3", 1, 64, 142, 3, 2, 1, 1}, 3);
  bench({"d-entry 3x282x282 -> 64", 1, 3, 282, 64, 4, 2, 1}, 3);
  bench({"backbone 32x70x70 -> 64", 1, 32, 70, 64, 3, 1, 1}, 3);
  bench({"deep 128x35x35 -> 128", 1, 128, 35, 128, 3, 1, 1}, 3);
  return 0;
}
