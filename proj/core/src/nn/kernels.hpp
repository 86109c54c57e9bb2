#pragma once

// Plain loop kernels shared by the graph ops. Loop orders keep the innermost
// loop contiguous so the compiler can vectorise without reassociating sums.

#include <cstddef>

namespace oavl::nn::kernels {

// C[M,N] += A[M,K] * B[K,N]
template <typename Real>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c + i * n;
    const Real* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real{0}) {
        continue;
      }
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename Real>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const Real* arow = a + p * m;
    const Real* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = arow[i];
      if (av == Real{0}) {
        continue;
      }
      Real* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

// out[cols, rows] = in[rows, cols]^T
template <typename Real>
void transpose(std::size_t rows, std::size_t cols, const Real* in, Real* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[c * rows + r] = in[r * cols + c];
    }
  }
}

struct ConvGeometry {
  int cin, h, w, kh, kw, stride, pad_h, pad_w, ho, wo;
  std::size_t col_rows() const { return static_cast<std::size_t>(cin * kh * kw); }
  std::size_t col_cols() const { return static_cast<std::size_t>(ho * wo); }
};

// col[(c*kh + ky)*kw + kx, oy*wo + ox] = x[c, oy*stride + ky - pad_h, ox*stride + kx - pad_w]
template <typename Real>
void im2col(const ConvGeometry& g, const Real* x, Real* col) {
  std::size_t row = 0;
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx, ++row) {
        Real* dst = col + row * g.col_cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad_h;
          Real* line = dst + static_cast<std::size_t>(oy * g.wo);
          if (iy < 0 || iy >= g.h) {
            for (int ox = 0; ox < g.wo; ++ox) {
              line[ox] = Real{0};
            }
            continue;
          }
          const Real* src = x + static_cast<std::size_t>((c * g.h + iy) * g.w);
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad_w;
            line[ox] = (ix >= 0 && ix < g.w) ? src[ix] : Real{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col: dx += scatter(dcol).
template <typename Real>
void col2im(const ConvGeometry& g, const Real* dcol, Real* dx) {
  std::size_t row = 0;
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx, ++row) {
        const Real* src = dcol + row * g.col_cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad_h;
          if (iy < 0 || iy >= g.h) {
            continue;
          }
          Real* dst = dx + static_cast<std::size_t>((c * g.h + iy) * g.w);
          const Real* line = src + static_cast<std::size_t>(oy * g.wo);
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad_w;
            if (ix >= 0 && ix < g.w) {
              dst[ix] += line[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace oavl::nn::kernels
