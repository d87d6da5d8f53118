// Compares the serial reference kernels with the blocked/OpenMP kernels on the
// shapes that dominate training: batched fully connected layers, the LSTM gate
// products and the im2col convolution GEMMs.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "dram/kernels.hpp"
#include "dram/rng.hpp"

namespace k = dram::kernels;
using dram::Scalar;

namespace {

double seconds(const std::function<void()>& fn, int reps) {
  fn();
  const auto start = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
  return dt.count() / reps;
}

std::vector<Scalar> random_buffer(std::size_t n, dram::Rng& rng) {
  std::vector<Scalar> v(n);
  for (auto& x : v) x = static_cast<Scalar>(rng.uniform(-1, 1));
  return v;
}

void bench_gemm(const char* label, k::Trans ta, k::Trans tb, std::size_t m, std::size_t n,
                std::size_t kk, bool with_serial, dram::Rng& rng) {
  auto a = random_buffer(m * kk, rng);
  auto b = random_buffer(kk * n, rng);
  std::vector<Scalar> c(m * n);
  const std::size_t lda = ta == k::Trans::no ? kk : m;
  const std::size_t ldb = tb == k::Trans::no ? n : kk;
  const double flops = 2.0 * double(m) * double(n) * double(kk);
  const double tp = seconds(
      [&] { k::parallel::gemm(ta, tb, m, n, kk, 1, a.data(), lda, b.data(), ldb, 0, c.data(), n); },
      5);
  std::printf("%-28s %5zux%5zux%5zu  parallel %8.2f GFLOP/s", label, m, n, kk, flops / tp * 1e-9);
  if (with_serial) {
    const double ts = seconds(
        [&] { k::serial::gemm(ta, tb, m, n, kk, 1, a.data(), lda, b.data(), ldb, 0, c.data(), n); },
        1);
    std::printf("  serial %8.2f GFLOP/s  speedup %6.1fx", flops / ts * 1e-9, ts / tp);
  }
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  const bool quick = argc > 1 && std::string(argv[1]) == "--quick";
  dram::Rng rng(2024);
  std::printf("threads: %d\n", k::max_threads());
  bench_gemm("fc forward", k::Trans::no, k::Trans::no, 128, 256, 288, true, rng);
  bench_gemm("lstm gates", k::Trans::no, k::Trans::no, 128, 1024, 512, !quick, rng);
  bench_gemm("lstm grad input (A*B^T)", k::Trans::no, k::Trans::yes, 128, 512, 1024, !quick, rng);
  bench_gemm("lstm grad weight (A^T*B)", k::Trans::yes, k::Trans::no, 512, 1024, 128, !quick, rng);
  bench_gemm("conv3x3 16->32, 6x6 out", k::Trans::no, k::Trans::no, 32, 128 * 16, 144, true, rng);

  k::ConvGeometry g{2, 20, 20, 5, 5, 2, 0};
  const std::size_t batch = 128;
  auto images = random_buffer(batch * g.channels * g.height * g.width, rng);
  std::vector<Scalar> col(g.col_rows() * batch * g.out_h() * g.out_w());
  const double ti = seconds([&] { k::parallel::im2col_batch(g, batch, images.data(), col.data()); }, 20);
  std::printf("%-28s batch %zu  %8.3f ms\n", "im2col 2x20x20 k5 s2", batch, ti * 1e3);
  return 0;
}
