#pragma once

#include <cstddef>
#include <string_view>

// Hot inner loops with a portable scalar reference and ISA-specific variants.
// Every variant accumulates in exactly the same order as the scalar kernel
// and never contracts a*b+c into an FMA, so results are bit-identical across
// variants.

namespace mga::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

struct KernelTable {
    /// c[m x n] = a[m x k] * b[k x n], row-major; c(i,j) accumulates over k in ascending order from 0.
    void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
    /// out[h x w] = 3x3 correlation of a zero-padded (h+2) x (w+2) plane, taps in row-major order.
    void (*dwconv3x3)(std::size_t h, std::size_t w, const double* padded, const double* taps, double* out);
    /// y[i] += alpha * x[i]
    void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
};

bool isa_supported(Isa isa);
const KernelTable& table(Isa isa);

/// Best supported ISA unless MGA_SIMD=scalar is set in the environment.
Isa active_isa();
/// Overrides the dispatch choice for the whole process. Throws if unsupported.
void set_active_isa(Isa isa);

const KernelTable& active();

inline void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    active().gemm(m, n, k, a, b, c);
}

inline void dwconv3x3(std::size_t h, std::size_t w, const double* padded, const double* taps, double* out) {
    active().dwconv3x3(h, w, padded, taps, out);
}

inline void axpy(std::size_t n, double alpha, const double* x, double* y) {
    active().axpy(n, alpha, x, y);
}

namespace detail {
const KernelTable& scalar_table();
const KernelTable* avx2_table(); // nullptr when not compiled in
} // namespace detail

} // namespace mga::kernels
