#include "mga/kernels.hpp"

#include "mga/error.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace mga::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    static const bool has = [] {
        __builtin_cpu_init();
        return __builtin_cpu_supports("avx2") != 0;
    }();
    return has;
#else
    return false;
#endif
}

Isa detect() {
    if (const char* env = std::getenv("MGA_SIMD"); env != nullptr && std::string(env) == "scalar") {
        return Isa::Scalar;
    }
    return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& current() {
    static std::atomic<Isa> isa{detect()};
    return isa;
}

} // namespace

std::string_view isa_name(Isa isa) {
    switch (isa) {
    case Isa::Scalar:
        return "scalar";
    case Isa::Avx2:
        return "avx2";
    }
    return "unknown";
}

bool isa_supported(Isa isa) {
    switch (isa) {
    case Isa::Scalar:
        return true;
    case Isa::Avx2:
        return detail::avx2_table() != nullptr && cpu_has_avx2();
    }
    return false;
}

const KernelTable& table(Isa isa) {
    if (!isa_supported(isa)) {
        throw UsageError("kernel ISA not supported on this machine: " + std::string(isa_name(isa)));
    }
    return isa == Isa::Avx2 ? *detail::avx2_table() : detail::scalar_table();
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
    (void)table(isa);
    current().store(isa, std::memory_order_relaxed);
}

const KernelTable& active() {
    return active_isa() == Isa::Avx2 ? *detail::avx2_table() : detail::scalar_table();
}

} // namespace mga::kernels
