// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "pace/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace pace::kernels {
namespace {

void axpy_avx2(double* out, const double* a, double k, std::size_t n) {
    const __m256d vk = _mm256_set1_pd(k);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d o = _mm256_loadu_pd(out + i);
        o = _mm256_fmadd_pd(vk, _mm256_loadu_pd(a + i), o);
        _mm256_storeu_pd(out + i, o);
    }
    for (; i < n; ++i) out[i] += k * a[i];
}

void mul_acc_avx2(double* out, const double* a, const double* b, double k, std::size_t n) {
    const __m256d vk = _mm256_set1_pd(k);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d ab = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        __m256d o = _mm256_fmadd_pd(vk, ab, _mm256_loadu_pd(out + i));
        _mm256_storeu_pd(out + i, o);
    }
    for (; i < n; ++i) out[i] += k * a[i] * b[i];
}

void mul3_acc_avx2(double* out, const double* a, const double* b, const double* c, double k,
                   std::size_t n) {
    const __m256d vk = _mm256_set1_pd(k);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d ab = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        __m256d abc = _mm256_mul_pd(ab, _mm256_loadu_pd(c + i));
        __m256d o = _mm256_fmadd_pd(vk, abc, _mm256_loadu_pd(out + i));
        _mm256_storeu_pd(out + i, o);
    }
    for (; i < n; ++i) out[i] += k * a[i] * b[i] * c[i];
}

void mul_avx2(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc0 = _mm256_add_pd(acc0, acc1);
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc0);
    double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

const KernelTable* avx2_table_impl() {
    static const KernelTable table{"avx2", axpy_avx2, mul_acc_avx2, mul3_acc_avx2, mul_avx2, dot_avx2};
    return &table;
}

}  // namespace pace::kernels

#else

namespace pace::kernels {
const KernelTable* avx2_table_impl() { return nullptr; }
}  // namespace pace::kernels

#endif
