#pragma once

// Compute kernels behind the autograd primitives and the sparse inference
// path. The parallel versions split work over output rows (or samples) only,
// so every output element is accumulated in a fixed order regardless of the
// thread count. The gemm kernels and the conv forward pass agree bit-for-bit
// with the serial reference in `kernels::ref`; the conv backward kernels
// group their sums differently and agree to rounding.

#include <cstddef>
#include <cstdint>
#include <span>

namespace rsr::kernels {

/// C(m x n) += A(m x k) * B(k x n)
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
/// C(m x n) += A(m x k) * B(n x k)^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
/// C(m x n) += A(k x m)^T * B(k x n)
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t padding = 0;

  std::size_t out_h() const { return height + 2 * padding - kernel_h + 1; }
  std::size_t out_w() const { return width + 2 * padding - kernel_w + 1; }
  /// Rows of the unfolded patch matrix.
  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h() * out_w(); }
  std::size_t in_sample() const { return in_channels * height * width; }
  std::size_t out_sample() const { return out_channels * positions(); }
};

/// Unfolds one sample (C x H x W) into a (patch x positions) matrix.
void im2col(const ConvGeometry& g, std::span<const double> x, std::span<double> col);
/// Adds a (patch x positions) matrix back onto one sample's input gradient.
void col2im(const ConvGeometry& g, std::span<const double> col, std::span<double> dx);

/// out = conv(x, w). If `cols` is non-empty it receives every sample's
/// unfolded patches (batch x patch x positions) for reuse in backward.
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> out, std::span<double> cols = {});
/// dx += conv-transpose(gout, w)
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> w,
                           std::span<const double> gout, std::span<double> dx);
/// dw += sum over samples of gout_b * cols_b^T
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> cols,
                            std::span<const double> gout, std::span<double> dw);

/// Rows of a matrix stored as per-row (column index, value) lists.
struct CsrView {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<const std::uint32_t> row_offsets;  // rows + 1 entries
  std::span<const std::uint32_t> indices;
  std::span<const double> values;
};

/// C(rows x n) += S * B(cols x n); same accumulation order as gemm_nn.
void csr_gemm(const CsrView& s, std::size_t n, std::span<const double> b, std::span<double> c);
/// out(batch x rows) += X(batch x cols) * S^T; same order as gemm_nt.
void csr_linear(const CsrView& s, std::size_t batch, std::span<const double> x,
                std::span<double> out);

int max_threads();

namespace ref {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);

/// Direct sliding-window convolution without unfolding.
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> out);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> w,
                           std::span<const double> gout, std::span<double> dx);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> gout, std::span<double> dw);

}  // namespace ref

}  // namespace rsr::kernels
