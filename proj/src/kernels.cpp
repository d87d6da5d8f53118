#include "dram/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dram::kernels {

namespace {

std::atomic<bool> g_serial{false};

inline Scalar elem(const Scalar* p, std::size_t ld, Trans t, std::size_t row, std::size_t col) {
  return t == Trans::no ? p[row * ld + col] : p[col * ld + row];
}

}  // namespace

void set_serial(bool serial) { g_serial = serial; }
bool is_serial() { return g_serial; }

int max_threads() {
#ifdef _OPENMP
  return g_serial ? 1 : omp_get_max_threads();
#else
  return 1;
#endif
}

// ---------------------------------------------------------------------------
// Serial reference kernels
// ---------------------------------------------------------------------------

namespace serial {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Scalar alpha,
          const Scalar* a, std::size_t lda, const Scalar* b, std::size_t ldb, Scalar beta,
          Scalar* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Scalar acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += elem(a, lda, ta, i, p) * elem(b, ldb, tb, p, j);
      Scalar& out = c[i * ldc + j];
      out = (beta == Scalar(0) ? Scalar(0) : beta * out) + alpha * acc;
    }
  }
}

void im2col(const ConvGeometry& g, const Scalar* image, Scalar* col, std::size_t ldcol,
            std::size_t col_offset) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t ch = 0; ch < g.channels; ++ch) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const std::size_t row = (ch * g.kernel_h + ki) * g.kernel_w + kj;
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t x = 0; x < ow; ++x) {
            const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.padding);
            const long ix = static_cast<long>(x * g.stride + kj) - static_cast<long>(g.padding);
            Scalar v = 0;
            if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                ix < static_cast<long>(g.width))
              v = image[(ch * g.height + iy) * g.width + ix];
            col[row * ldcol + col_offset + y * ow + x] = v;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const Scalar* col, std::size_t ldcol, std::size_t col_offset,
            Scalar* image) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t ch = 0; ch < g.channels; ++ch) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const std::size_t row = (ch * g.kernel_h + ki) * g.kernel_w + kj;
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t x = 0; x < ow; ++x) {
            const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.padding);
            const long ix = static_cast<long>(x * g.stride + kj) - static_cast<long>(g.padding);
            if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                ix < static_cast<long>(g.width))
              image[(ch * g.height + iy) * g.width + ix] +=
                  col[row * ldcol + col_offset + y * ow + x];
          }
        }
      }
    }
  }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// Blocked GEMM
// ---------------------------------------------------------------------------

namespace parallel {

namespace {

constexpr std::size_t kMr = 8;
constexpr std::size_t kNr = 16;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 128;

// Packs rows [i0, i0+mc) x cols [p0, p0+kc) of op(A) into kMr-row panels.
void pack_a(Trans ta, const Scalar* a, std::size_t lda, std::size_t i0, std::size_t mc,
            std::size_t p0, std::size_t kc, Scalar* out) {
  for (std::size_t ib = 0; ib < mc; ib += kMr) {
    const std::size_t rows = std::min(kMr, mc - ib);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t r = 0; r < kMr; ++r)
        out[r] = r < rows ? elem(a, lda, ta, i0 + ib + r, p0 + p) : Scalar(0);
      out += kMr;
    }
  }
}

// Packs rows [p0, p0+kc) x cols [j0, j0+nc) of op(B) into kNr-column panels.
void pack_b(Trans tb, const Scalar* b, std::size_t ldb, std::size_t p0, std::size_t kc,
            std::size_t j0, std::size_t nc, Scalar* out) {
  for (std::size_t jb = 0; jb < nc; jb += kNr) {
    const std::size_t cols = std::min(kNr, nc - jb);
    for (std::size_t p = 0; p < kc; ++p) {
      if (tb == Trans::no && cols == kNr) {
        std::memcpy(out, b + (p0 + p) * ldb + j0 + jb, kNr * sizeof(Scalar));
      } else {
        for (std::size_t j = 0; j < kNr; ++j)
          out[j] = j < cols ? elem(b, ldb, tb, p0 + p, j0 + jb + j) : Scalar(0);
      }
      out += kNr;
    }
  }
}

inline void micro_kernel(std::size_t kc, const Scalar* __restrict ap, const Scalar* __restrict bp,
                         Scalar acc[kMr][kNr]) {
  for (std::size_t r = 0; r < kMr; ++r)
    for (std::size_t j = 0; j < kNr; ++j) acc[r][j] = 0;
  for (std::size_t p = 0; p < kc; ++p) {
    const Scalar* arow = ap + p * kMr;
    const Scalar* brow = bp + p * kNr;
    for (std::size_t r = 0; r < kMr; ++r) {
      const Scalar av = arow[r];
#pragma omp simd
      for (std::size_t j = 0; j < kNr; ++j) acc[r][j] += av * brow[j];
    }
  }
}

}  // namespace

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Scalar alpha,
          const Scalar* a, std::size_t lda, const Scalar* b, std::size_t ldb, Scalar beta,
          Scalar* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  if (beta != Scalar(1)) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        c[i * ldc + j] = beta == Scalar(0) ? Scalar(0) : beta * c[i * ldc + j];
  }
  if (k == 0 || alpha == Scalar(0)) return;

  const std::size_t n_panels = (n + kNr - 1) / kNr;
  const std::size_t n_pad = n_panels * kNr;
  std::vector<Scalar> bpack(kKc * n_pad);

  for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
    const std::size_t kc = std::min(kKc, k - p0);
    pack_b(tb, b, ldb, p0, kc, 0, n, bpack.data());

    const std::size_t m_blocks = (m + kMc - 1) / kMc;
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (m_blocks > 1)
    for (std::size_t blk = 0; blk < m_blocks; ++blk) {
      const std::size_t i0 = blk * kMc;
      const std::size_t mc = std::min(kMc, m - i0);
      std::vector<Scalar> apack(((mc + kMr - 1) / kMr) * kMr * kc);
      pack_a(ta, a, lda, i0, mc, p0, kc, apack.data());
      alignas(64) Scalar acc[kMr][kNr];
      for (std::size_t jp = 0; jp < n_panels; ++jp) {
        const std::size_t cols = std::min(kNr, n - jp * kNr);
        for (std::size_t ib = 0; ib < mc; ib += kMr) {
          const std::size_t rows = std::min(kMr, mc - ib);
          micro_kernel(kc, apack.data() + ib * kc, bpack.data() + jp * kNr * kc, acc);
          for (std::size_t r = 0; r < rows; ++r) {
            Scalar* crow = c + (i0 + ib + r) * ldc + jp * kNr;
            for (std::size_t j = 0; j < cols; ++j) crow[j] += alpha * acc[r][j];
          }
        }
      }
    }
  }
}

void im2col_batch(const ConvGeometry& g, std::size_t batch, const Scalar* images, Scalar* col) {
  const std::size_t per = g.out_h() * g.out_w();
  const std::size_t ld = batch * per;
  const std::size_t img = g.channels * g.height * g.width;
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (batch > 1)
  for (std::size_t b = 0; b < batch; ++b) serial::im2col(g, images + b * img, col, ld, b * per);
}

void col2im_batch(const ConvGeometry& g, std::size_t batch, const Scalar* col, Scalar* images) {
  const std::size_t per = g.out_h() * g.out_w();
  const std::size_t ld = batch * per;
  const std::size_t img = g.channels * g.height * g.width;
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (batch > 1)
  for (std::size_t b = 0; b < batch; ++b) serial::col2im(g, col, ld, b * per, images + b * img);
}

}  // namespace parallel

}  // namespace dram::kernels
