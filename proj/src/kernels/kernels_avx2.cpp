#include "mga/kernels.hpp"

#if defined(__AVX2__)
#include <immintrin.h>

#include <algorithm>

namespace mga::kernels::detail {
namespace {

// Vectorised over the output column; per-element operation order matches the
// scalar kernel (separate multiply and add, ascending reduction index).

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    std::fill(c, c + m * n, 0.0);
    const std::size_t nv = n - n % 4;
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const __m256d va = _mm256_set1_pd(av);
            const double* brow = b + p * n;
            std::size_t j = 0;
            for (; j < nv; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_add_pd(vc, _mm256_mul_pd(va, _mm256_loadu_pd(brow + j)));
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

void dwconv3x3_avx2(std::size_t h, std::size_t w, const double* padded, const double* taps, double* out) {
    const std::size_t pw = w + 2;
    const std::size_t wv = w - w % 4;
    for (std::size_t y = 0; y < h; ++y) {
        std::size_t x = 0;
        for (; x < wv; x += 4) {
            __m256d s = _mm256_setzero_pd();
            for (std::size_t dy = 0; dy < 3; ++dy) {
                for (std::size_t dx = 0; dx < 3; ++dx) {
                    const __m256d t = _mm256_set1_pd(taps[dy * 3 + dx]);
                    const __m256d v = _mm256_loadu_pd(padded + (y + dy) * pw + x + dx);
                    s = _mm256_add_pd(s, _mm256_mul_pd(t, v));
                }
            }
            _mm256_storeu_pd(out + y * w + x, s);
        }
        for (; x < w; ++x) {
            double s = 0.0;
            for (std::size_t dy = 0; dy < 3; ++dy) {
                for (std::size_t dx = 0; dx < 3; ++dx) {
                    s += taps[dy * 3 + dx] * padded[(y + dy) * pw + x + dx];
                }
            }
            out[y * w + x] = s;
        }
    }
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
    const __m256d va = _mm256_set1_pd(alpha);
    const std::size_t nv = n - n % 4;
    std::size_t i = 0;
    for (; i < nv; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_add_pd(vy, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

} // namespace

const KernelTable* avx2_table() {
    static const KernelTable t{&gemm_avx2, &dwconv3x3_avx2, &axpy_avx2};
    return &t;
}

} // namespace mga::kernels::detail

#else

namespace mga::kernels::detail {
const KernelTable* avx2_table() { return nullptr; }
} // namespace mga::kernels::detail

#endif
