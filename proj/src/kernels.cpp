#include "rsr/kernels.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rsr::kernels {

namespace {
using idx = std::ptrdiff_t;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
  for (idx i = 0; i < static_cast<idx>(m); ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
  for (idx i = 0; i < static_cast<idx>(m); ++i) {
    const double* arow = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = B + j * k;
      double s = C[i * n + j];
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      C[i * n + j] = s;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
  for (idx i = 0; i < static_cast<idx>(m); ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[p * m + i];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void im2col(const ConvGeometry& g, std::span<const double> x, std::span<double> col) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const auto pad = static_cast<idx>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* plane = x.data() + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
        double* dst = col.data() + row * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const idx iy = static_cast<idx>(oy + ky) - pad;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const idx ix = static_cast<idx>(ox + kx) - pad;
            const bool inside = iy >= 0 && iy < static_cast<idx>(g.height) && ix >= 0 &&
                                ix < static_cast<idx>(g.width);
            dst[oy * ow + ox] = inside ? plane[iy * g.width + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, std::span<const double> col, std::span<double> dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const auto pad = static_cast<idx>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* plane = dx.data() + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
        const double* src = col.data() + row * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const idx iy = static_cast<idx>(oy + ky) - pad;
          if (iy < 0 || iy >= static_cast<idx>(g.height)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const idx ix = static_cast<idx>(ox + kx) - pad;
            if (ix < 0 || ix >= static_cast<idx>(g.width)) continue;
            plane[iy * g.width + ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> out, std::span<double> cols) {
  const std::size_t K = g.patch(), P = g.positions();
  const bool keep = !cols.empty();
#pragma omp parallel
  {
    std::vector<double> scratch(keep ? 0 : K * P);
#pragma omp for schedule(static)
    for (idx b = 0; b < static_cast<idx>(g.batch); ++b) {
      std::span<double> col = keep ? cols.subspan(b * K * P, K * P) : std::span<double>(scratch);
      im2col(g, x.subspan(b * g.in_sample(), g.in_sample()), col);
      std::span<double> o = out.subspan(b * g.out_sample(), g.out_sample());
      std::fill(o.begin(), o.end(), 0.0);
      // serial inner gemm: the batch loop already owns the threads
      const double* W = w.data();
      for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
        double* orow = o.data() + oc * P;
        for (std::size_t p = 0; p < K; ++p) {
          const double wv = W[oc * K + p];
          const double* crow = col.data() + p * P;
          for (std::size_t j = 0; j < P; ++j) orow[j] += wv * crow[j];
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> w,
                           std::span<const double> gout, std::span<double> dx) {
  const std::size_t K = g.patch(), P = g.positions(), O = g.out_channels;
#pragma omp parallel
  {
    std::vector<double> dcol(K * P);
#pragma omp for schedule(static)
    for (idx b = 0; b < static_cast<idx>(g.batch); ++b) {
      std::fill(dcol.begin(), dcol.end(), 0.0);
      const double* G = gout.data() + b * g.out_sample();
      for (std::size_t p = 0; p < K; ++p) {
        double* drow = dcol.data() + p * P;
        for (std::size_t oc = 0; oc < O; ++oc) {
          const double wv = w[oc * K + p];
          const double* grow = G + oc * P;
          for (std::size_t j = 0; j < P; ++j) drow[j] += wv * grow[j];
        }
      }
      col2im(g, dcol, dx.subspan(b * g.in_sample(), g.in_sample()));
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> cols,
                            std::span<const double> gout, std::span<double> dw) {
  const std::size_t K = g.patch(), P = g.positions(), O = g.out_channels;
#pragma omp parallel for schedule(static)
  for (idx oc = 0; oc < static_cast<idx>(O); ++oc) {
    double* wrow = dw.data() + oc * K;
    for (std::size_t b = 0; b < g.batch; ++b) {
      const double* grow = gout.data() + b * g.out_sample() + oc * P;
      const double* C = cols.data() + b * K * P;
      for (std::size_t p = 0; p < K; ++p) {
        const double* crow = C + p * P;
        double s = 0.0;
        for (std::size_t j = 0; j < P; ++j) s += grow[j] * crow[j];
        wrow[p] += s;
      }
    }
  }
}

void csr_gemm(const CsrView& s, std::size_t n, std::span<const double> b, std::span<double> c) {
#pragma omp parallel for schedule(static) if (s.values.size() * n > 32768)
  for (idx r = 0; r < static_cast<idx>(s.rows); ++r) {
    double* crow = c.data() + r * n;
    for (std::uint32_t e = s.row_offsets[r]; e < s.row_offsets[r + 1]; ++e) {
      const double v = s.values[e];
      const double* brow = b.data() + static_cast<std::size_t>(s.indices[e]) * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += v * brow[j];
    }
  }
}

void csr_linear(const CsrView& s, std::size_t batch, std::span<const double> x,
                std::span<double> out) {
#pragma omp parallel for schedule(static) if (s.values.size() * batch > 32768)
  for (idx bi = 0; bi < static_cast<idx>(batch); ++bi) {
    const double* xrow = x.data() + bi * s.cols;
    for (std::size_t r = 0; r < s.rows; ++r) {
      double acc = out[bi * s.rows + r];
      for (std::uint32_t e = s.row_offsets[r]; e < s.row_offsets[r + 1]; ++e)
        acc += xrow[s.indices[e]] * s.values[e];
      out[bi * s.rows + r] = acc;
    }
  }
}

}  // namespace rsr::kernels
