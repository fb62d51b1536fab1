#include <atomic>
#include <cstdlib>
#include <string>

#include "pace/error.hpp"
#include "pace/kernels.hpp"

namespace pace::kernels {

const KernelTable* avx2_table_impl();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable* resolve(std::string_view variant) {
    if (variant == "scalar") return &scalar_table();
    if (variant == "avx2") {
        const KernelTable* t = avx2_table();
        if (!t) throw ConfigError("AVX2 kernels unavailable on this CPU/build");
        return t;
    }
    if (variant == "auto" || variant.empty()) {
        const KernelTable* t = avx2_table();
        return t ? t : &scalar_table();
    }
    throw ConfigError("unknown kernel variant '" + std::string(variant) + "'");
}

std::atomic<const KernelTable*>& slot() {
    static std::atomic<const KernelTable*> current{[] {
        const char* env = std::getenv("PACE_KERNELS");
        return resolve(env ? std::string_view(env) : std::string_view("auto"));
    }()};
    return current;
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable* t = cpu_has_avx2() ? avx2_table_impl() : nullptr;
    return t;
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void select(std::string_view variant) { slot().store(resolve(variant), std::memory_order_relaxed); }

}  // namespace pace::kernels
