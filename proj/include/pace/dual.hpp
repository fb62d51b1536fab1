#pragma once

// Forward-mode dual numbers. Nesting (Dual<Dual<double>>) gives mixed second
// derivatives; the model uses Dual<double> to push a position tangent through
// the hand-written adjoints, which yields Hessian-vector products w.r.t. the
// parameters in one reverse sweep.

#include <cmath>
#include <type_traits>

namespace pace {

template <class T>
struct Dual {
    T v{};  // value
    T d{};  // tangent

    constexpr Dual() = default;
    constexpr Dual(double value) : v(value), d(0.0) {}  // NOLINT: implicit lift from constants
    constexpr Dual(T value, T tangent) : v(value), d(tangent) {}

    template <class U>
        requires(std::is_same_v<U, T> && !std::is_arithmetic_v<T>)
    constexpr Dual(const U& value) : v(value), d(0.0) {}  // NOLINT

    Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
    Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
    Dual& operator/=(const Dual& o) { *this = *this / o; return *this; }
    Dual& operator*=(double s) { v *= s; d *= s; return *this; }

    friend Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
    friend Dual operator+(const Dual& a, const Dual& b) { return {a.v + b.v, a.d + b.d}; }
    friend Dual operator-(const Dual& a, const Dual& b) { return {a.v - b.v, a.d - b.d}; }
    friend Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
    friend Dual operator/(const Dual& a, const Dual& b) {
        T inv = T(1.0) / b.v;
        T q = a.v * inv;
        return {q, (a.d - q * b.d) * inv};
    }

    friend Dual operator+(const Dual& a, double s) { return {a.v + s, a.d}; }
    friend Dual operator+(double s, const Dual& a) { return {a.v + s, a.d}; }
    friend Dual operator-(const Dual& a, double s) { return {a.v - s, a.d}; }
    friend Dual operator-(double s, const Dual& a) { return {s - a.v, -a.d}; }
    friend Dual operator*(const Dual& a, double s) { return {a.v * s, a.d * s}; }
    friend Dual operator*(double s, const Dual& a) { return {a.v * s, a.d * s}; }
    friend Dual operator/(const Dual& a, double s) { return {a.v / s, a.d / s}; }
    friend Dual operator/(double s, const Dual& a) { return Dual(s) / a; }
};

template <class T>
struct is_dual : std::false_type {};
template <class T>
struct is_dual<Dual<T>> : std::true_type {};
template <class T>
inline constexpr bool is_dual_v = is_dual<T>::value;

inline double value_of(double x) { return x; }
template <class T>
double value_of(const Dual<T>& x) {
    return value_of(x.v);
}

// Comparisons look at the primal value only.
template <class T>
bool operator<(const Dual<T>& a, const Dual<T>& b) { return value_of(a) < value_of(b); }
template <class T>
bool operator>(const Dual<T>& a, const Dual<T>& b) { return value_of(a) > value_of(b); }
template <class T>
bool operator<(const Dual<T>& a, double b) { return value_of(a) < b; }
template <class T>
bool operator>(const Dual<T>& a, double b) { return value_of(a) > b; }
template <class T>
bool operator<=(const Dual<T>& a, double b) { return value_of(a) <= b; }
template <class T>
bool operator>=(const Dual<T>& a, double b) { return value_of(a) >= b; }

template <class T>
Dual<T> sqrt(const Dual<T>& x) {
    using std::sqrt;
    T s = sqrt(x.v);
    return {s, x.d / (2.0 * s)};
}
template <class T>
Dual<T> exp(const Dual<T>& x) {
    using std::exp;
    T e = exp(x.v);
    return {e, e * x.d};
}
template <class T>
Dual<T> log(const Dual<T>& x) {
    using std::log;
    return {log(x.v), x.d / x.v};
}
template <class T>
Dual<T> sin(const Dual<T>& x) {
    using std::cos;
    using std::sin;
    return {sin(x.v), cos(x.v) * x.d};
}
template <class T>
Dual<T> cos(const Dual<T>& x) {
    using std::cos;
    using std::sin;
    return {cos(x.v), -(sin(x.v) * x.d)};
}

template <class T>
bool isfinite(const Dual<T>& x) {
    using std::isfinite;
    return isfinite(x.v) && isfinite(x.d);
}

/// Integer power by repeated multiplication (exact 0^0 = 1).
template <class T>
T ipow(const T& x, int n) {
    T r(1.0);
    for (int i = 0; i < n; ++i) r = r * x;
    return r;
}

}  // namespace pace
