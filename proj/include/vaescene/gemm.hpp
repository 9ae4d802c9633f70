#pragma once

#include <cstddef>

namespace vaescene::detail {

// Small dense kernels backing matmul/conv. Row-major throughout. The axpy
// loop order keeps the innermost loop contiguous on B and C so the compiler
// vectorizes it.

// C[M,N] += A[M,K] * B[K,N]
template <typename S>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             const S* __restrict a, const S* __restrict b, S* __restrict c) {
    for (std::size_t i = 0; i < m; ++i) {
        S* __restrict crow = c + i * n;
        const S* arow = a + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            const S av = arow[l];
            if (av == S(0)) continue;
            const S* __restrict brow = b + l * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T  (dot products of contiguous rows)
template <typename S>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             const S* __restrict a, const S* __restrict b, S* __restrict c) {
    for (std::size_t i = 0; i < m; ++i) {
        const S* arow = a + i * k;
        S* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const S* brow = b + j * k;
            S acc = S(0);
            for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename S>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
             const S* __restrict a, const S* __restrict b, S* __restrict c) {
    for (std::size_t l = 0; l < k; ++l) {
        const S* arow = a + l * m;
        const S* __restrict brow = b + l * n;
        for (std::size_t i = 0; i < m; ++i) {
            const S av = arow[i];
            if (av == S(0)) continue;
            S* __restrict crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// Unpacks conv patches of one [C,H,W] image into cols[C*k*k, outh*outw].
// Out-of-bounds taps are zero.
template <typename S>
void im2col(const S* img, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t ksize, std::size_t stride, std::size_t pad,
            std::size_t out_h, std::size_t out_w, S* cols, std::size_t col_stride) {
    const std::size_t patch = out_h * out_w;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < ksize; ++ky) {
            for (std::size_t kx = 0; kx < ksize; ++kx) {
                S* dst = cols + ((c * ksize + ky) * ksize + kx) * col_stride;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                        for (std::size_t ox = 0; ox < out_w; ++ox) dst[oy * out_w + ox] = S(0);
                        continue;
                    }
                    const S* src_row = img + (c * height + static_cast<std::size_t>(iy)) * width;
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        dst[oy * out_w + ox] =
                            (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) ? S(0) : src_row[ix];
                    }
                }
                (void)patch;
            }
        }
    }
}

// Adjoint of im2col: scatter-adds cols back into the [C,H,W] image.
template <typename S>
void col2im(const S* cols, std::size_t col_stride, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t ksize, std::size_t stride, std::size_t pad,
            std::size_t out_h, std::size_t out_w, S* img) {
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < ksize; ++ky) {
            for (std::size_t kx = 0; kx < ksize; ++kx) {
                const S* src = cols + ((c * ksize + ky) * ksize + kx) * col_stride;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
                    S* dst_row = img + (c * height + static_cast<std::size_t>(iy)) * width;
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
                        dst_row[ix] += src[oy * out_w + ox];
                    }
                }
            }
        }
    }
}

}  // namespace vaescene::detail
