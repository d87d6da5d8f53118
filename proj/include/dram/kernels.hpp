#pragma once

#include <cstddef>

#include "dram/scalar.hpp"

// Dense numeric kernels. Every kernel exists twice: a plain serial version in
// `serial` that the tests treat as ground truth, and the tuned version in
// `parallel` that uses cache blocking and OpenMP over independent output
// blocks. The parallel kernels never split a reduction across threads, so
// their results do not depend on the thread count.
namespace dram::kernels {

enum class Trans { no, yes };

struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t col_rows() const { return channels * kernel_h * kernel_w; }
};

namespace serial {

// C = alpha * op(A) * op(B) + beta * C, row-major. op(A) is M x K, op(B) is K x N.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Scalar alpha,
          const Scalar* a, std::size_t lda, const Scalar* b, std::size_t ldb, Scalar beta,
          Scalar* c, std::size_t ldc);

// Unfolds one image (channels x height x width) into a col_rows() x (out_h*out_w)
// matrix, written with leading dimension ldcol starting at column col_offset.
void im2col(const ConvGeometry& g, const Scalar* image, Scalar* col, std::size_t ldcol,
            std::size_t col_offset);

// Adjoint of im2col: accumulates the column matrix back into the image.
void col2im(const ConvGeometry& g, const Scalar* col, std::size_t ldcol, std::size_t col_offset,
            Scalar* image);

}  // namespace serial

namespace parallel {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, Scalar alpha,
          const Scalar* a, std::size_t lda, const Scalar* b, std::size_t ldb, Scalar beta,
          Scalar* c, std::size_t ldc);

// Batched variants: images are stored back to back, the column matrix holds
// batch * out_h * out_w columns.
void im2col_batch(const ConvGeometry& g, std::size_t batch, const Scalar* images, Scalar* col);
void col2im_batch(const ConvGeometry& g, std::size_t batch, const Scalar* col, Scalar* images);

}  // namespace parallel

// Thread control for the parallel kernels. set_serial(true) pins them to one
// thread.
void set_serial(bool serial);
bool is_serial();
int max_threads();

}  // namespace dram::kernels
