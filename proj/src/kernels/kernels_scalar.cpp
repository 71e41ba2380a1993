#include "mga/kernels.hpp"

#include <algorithm>

namespace mga::kernels::detail {
namespace {

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    std::fill(c, c + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

void dwconv3x3_scalar(std::size_t h, std::size_t w, const double* padded, const double* taps, double* out) {
    const std::size_t pw = w + 2;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
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

void axpy_scalar(std::size_t n, double alpha, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

} // namespace

const KernelTable& scalar_table() {
    static const KernelTable t{&gemm_scalar, &dwconv3x3_scalar, &axpy_scalar};
    return t;
}

} // namespace mga::kernels::detail
