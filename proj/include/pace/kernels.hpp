#pragma once

// Channel-loop kernels. Every equivariant feature block is stored m-major with
// channels contiguous, so the hot loops of the tensor product, self-interaction
// and contraction reduce to the elementwise primitives below.
//
// double arrays go through a runtime-selected table (scalar reference or AVX2);
// any other element type (dual numbers) uses the generic templates.

#include <cstddef>
#include <string>
#include <string_view>

namespace pace::kernels {

struct KernelTable {
    const char* name;
    /// out[i] += k * a[i]
    void (*axpy)(double* out, const double* a, double k, std::size_t n);
    /// out[i] += k * a[i] * b[i]
    void (*mul_acc)(double* out, const double* a, const double* b, double k, std::size_t n);
    /// out[i] += k * a[i] * b[i] * c[i]
    void (*mul3_acc)(double* out, const double* a, const double* b, const double* c, double k,
                     std::size_t n);
    /// out[i] = a[i] * b[i]
    void (*mul)(double* out, const double* a, const double* b, std::size_t n);
    /// sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
};

const KernelTable& scalar_table();
/// nullptr when the CPU (or the build) lacks AVX2+FMA.
const KernelTable* avx2_table();

/// The table in use. Chosen once from PACE_KERNELS ("scalar", "avx2", "auto").
const KernelTable& active();
/// Override the active variant: "scalar", "avx2" or "auto". Throws ConfigError
/// when the requested variant is unavailable.
void select(std::string_view variant);

// ---- double overloads: dispatch -------------------------------------------

inline void axpy(double* out, const double* a, double k, std::size_t n) { active().axpy(out, a, k, n); }
inline void mul_acc(double* out, const double* a, const double* b, double k, std::size_t n) {
    active().mul_acc(out, a, b, k, n);
}
inline void mul3_acc(double* out, const double* a, const double* b, const double* c, double k,
                     std::size_t n) {
    active().mul3_acc(out, a, b, c, k, n);
}
inline void mul(double* out, const double* a, const double* b, std::size_t n) { active().mul(out, a, b, n); }
inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }

// ---- generic element types ------------------------------------------------

template <class O, class A, class K>
void axpy(O* out, const A* a, const K& k, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * k;
}
template <class O, class A, class B, class K>
void mul_acc(O* out, const A* a, const B* b, const K& k, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] += (a[i] * b[i]) * k;
}
template <class O, class A, class B, class C>
void mul3_acc(O* out, const A* a, const B* b, const C* c, double k, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] += (a[i] * b[i]) * (c[i] * k);
}
template <class O, class A, class B>
void mul(O* out, const A* a, const B* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
template <class A, class B>
auto dot(const A* a, const B* b, std::size_t n) -> decltype(a[0] * b[0]) {
    decltype(a[0] * b[0]) s(0.0);
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace pace::kernels
