#include "rsr/kernels.hpp"

namespace rsr::kernels::ref {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = s;
    }
}

namespace {

// Input value at padded coordinates, or nullptr outside the image.
const double* at(const ConvGeometry& g, std::span<const double> x, std::size_t b, std::size_t c,
                 std::ptrdiff_t y, std::ptrdiff_t xx) {
  if (y < 0 || xx < 0 || y >= static_cast<std::ptrdiff_t>(g.height) ||
      xx >= static_cast<std::ptrdiff_t>(g.width))
    return nullptr;
  return x.data() + ((b * g.in_channels + c) * g.height + y) * g.width + xx;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> out) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t oy = 0; oy < g.out_h(); ++oy)
        for (std::size_t ox = 0; ox < g.out_w(); ++ox) {
          double s = 0.0;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const double wv = w[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
                const double* xv = at(g, x, b, c, static_cast<std::ptrdiff_t>(oy + ky) - pad,
                                      static_cast<std::ptrdiff_t>(ox + kx) - pad);
                s += wv * (xv ? *xv : 0.0);
              }
          out[((b * g.out_channels + o) * g.out_h() + oy) * g.out_w() + ox] = s;
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> w,
                           std::span<const double> gout, std::span<double> dx) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t oy = 0; oy < g.out_h(); ++oy)
        for (std::size_t ox = 0; ox < g.out_w(); ++ox) {
          const double gv = gout[((b * g.out_channels + o) * g.out_h() + oy) * g.out_w() + ox];
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - pad;
                const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - pad;
                if (!at(g, dx, b, c, iy, ix)) continue;
                dx[((b * g.in_channels + c) * g.height + iy) * g.width + ix] +=
                    gv * w[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
              }
        }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> gout, std::span<double> dw) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t oy = 0; oy < g.out_h(); ++oy)
        for (std::size_t ox = 0; ox < g.out_w(); ++ox) {
          const double gv = gout[((b * g.out_channels + o) * g.out_h() + oy) * g.out_w() + ox];
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const double* xv = at(g, x, b, c, static_cast<std::ptrdiff_t>(oy + ky) - pad,
                                      static_cast<std::ptrdiff_t>(ox + kx) - pad);
                if (xv) dw[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx] += gv * *xv;
              }
        }
}

}  // namespace rsr::kernels::ref
