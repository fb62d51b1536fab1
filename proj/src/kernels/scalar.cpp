#include "pace/kernels.hpp"

namespace pace::kernels {
namespace {

void axpy_ref(double* out, const double* a, double k, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] += k * a[i];
}

void mul_acc_ref(double* out, const double* a, const double* b, double k, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] += k * a[i] * b[i];
}

void mul3_acc_ref(double* out, const double* a, const double* b, const double* c, double k,
                  std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] += k * a[i] * b[i] * c[i];
}

void mul_ref(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

double dot_ref(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{"scalar", axpy_ref, mul_acc_ref, mul3_acc_ref, mul_ref, dot_ref};
    return table;
}

}  // namespace pace::kernels
