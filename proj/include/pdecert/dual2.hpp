#pragma once

#include <cmath>
#include <cstddef>
#include <type_traits>
#include <vector>

#include "pdecert/interval.hpp"

namespace pdecert {

/// Forward-mode second-order number: value, gradient (length n) and Hessian
/// (packed lower triangle, n(n+1)/2 entries). Only symmetric updates are ever
/// applied, so the Hessian is symmetric by construction.
///
/// The scalar S is either double (exact derivatives at a point) or Interval
/// (derivative enclosures over a box).
template <class S>
struct Dual2 {
    S v{};
    std::vector<S> g;
    std::vector<S> h; // packed: h[i*(i+1)/2 + j] = d2/dxi dxj, j <= i

    Dual2() = default;

    static size_t hsize(int n) { return static_cast<size_t>(n) * (n + 1) / 2; }

    static Dual2 constant(S val, int n) {
        Dual2 d;
        d.v = val;
        d.g.assign(static_cast<size_t>(n), S(0.0));
        d.h.assign(hsize(n), S(0.0));
        return d;
    }

    static Dual2 variable(S val, int idx, int n) {
        Dual2 d = constant(val, n);
        d.g[static_cast<size_t>(idx)] = S(1.0);
        return d;
    }

    int n() const { return static_cast<int>(g.size()); }
    const S& hess(int i, int j) const {
        if (j > i) std::swap(i, j);
        return h[static_cast<size_t>(i) * (i + 1) / 2 + j];
    }
};

template <class S>
Dual2<S> operator+(const Dual2<S>& a, const Dual2<S>& b) {
    Dual2<S> r = a;
    r.v = a.v + b.v;
    for (size_t i = 0; i < r.g.size(); ++i) r.g[i] = a.g[i] + b.g[i];
    for (size_t i = 0; i < r.h.size(); ++i) r.h[i] = a.h[i] + b.h[i];
    return r;
}

template <class S>
Dual2<S> operator-(const Dual2<S>& a, const Dual2<S>& b) {
    Dual2<S> r = a;
    r.v = a.v - b.v;
    for (size_t i = 0; i < r.g.size(); ++i) r.g[i] = a.g[i] - b.g[i];
    for (size_t i = 0; i < r.h.size(); ++i) r.h[i] = a.h[i] - b.h[i];
    return r;
}

template <class S>
Dual2<S> operator-(const Dual2<S>& a) {
    Dual2<S> r = a;
    r.v = -a.v;
    for (auto& x : r.g) x = -x;
    for (auto& x : r.h) x = -x;
    return r;
}

template <class S>
Dual2<S> operator*(const Dual2<S>& a, const Dual2<S>& b) {
    Dual2<S> r = a;
    r.v = a.v * b.v;
    const int n = a.n();
    for (int i = 0; i < n; ++i)
        r.g[static_cast<size_t>(i)] =
            a.v * b.g[static_cast<size_t>(i)] + b.v * a.g[static_cast<size_t>(i)];
    size_t k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j, ++k)
            r.h[k] = a.v * b.h[k] + b.v * a.h[k] +
                     a.g[static_cast<size_t>(i)] * b.g[static_cast<size_t>(j)] +
                     a.g[static_cast<size_t>(j)] * b.g[static_cast<size_t>(i)];
    return r;
}

/// Chain rule for a unary function with value f0 and derivatives f1, f2 at a.v.
template <class S>
Dual2<S> chain_unary(const Dual2<S>& a, const S& f0, const S& f1, const S& f2) {
    Dual2<S> r = a;
    r.v = f0;
    const int n = a.n();
    for (int i = 0; i < n; ++i) r.g[static_cast<size_t>(i)] = f1 * a.g[static_cast<size_t>(i)];
    size_t k = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j, ++k)
            r.h[k] = f1 * a.h[k] +
                     f2 * a.g[static_cast<size_t>(i)] * a.g[static_cast<size_t>(j)];
    return r;
}

namespace detail {

template <class S>
struct is_interval : std::false_type {};
template <>
struct is_interval<Interval> : std::true_type {};

template <class S>
void check_nonzero(const S& v, const char* what) {
    if constexpr (is_interval<S>::value) {
        if (v.lo <= 0.0 && v.hi >= 0.0) throw EvalError(what);
    } else {
        if (v == 0.0) throw EvalError(what);
    }
}

} // namespace detail

template <class S>
Dual2<S> recip(const Dual2<S>& a) {
    detail::check_nonzero(a.v, "division by zero");
    const S f0 = S(1.0) / a.v;
    const S f1 = -(f0 * f0);
    const S f2 = S(2.0) * f0 * f0 * f0;
    return chain_unary(a, f0, f1, f2);
}

template <class S>
Dual2<S> operator/(const Dual2<S>& a, const Dual2<S>& b) {
    return a * recip(b);
}

template <class S>
Dual2<S> sin(const Dual2<S>& a) {
    using std::cos;
    using std::sin;
    return chain_unary(a, S(sin(a.v)), S(cos(a.v)), S(-sin(a.v)));
}

template <class S>
Dual2<S> cos(const Dual2<S>& a) {
    using std::cos;
    using std::sin;
    return chain_unary(a, S(cos(a.v)), S(-sin(a.v)), S(-cos(a.v)));
}

template <class S>
Dual2<S> tanh(const Dual2<S>& a) {
    using std::tanh;
    const S t = tanh(a.v);
    const S s = S(1.0) - t * t; // sech^2
    return chain_unary(a, t, s, S(-2.0) * t * s);
}

template <class S>
Dual2<S> exp(const Dual2<S>& a) {
    using std::exp;
    const S e = exp(a.v);
    return chain_unary(a, e, e, e);
}

template <class S>
Dual2<S> sqrt(const Dual2<S>& a) {
    using std::sqrt;
    if constexpr (detail::is_interval<S>::value) {
        if (a.v.lo <= 0.0) throw EvalError("sqrt derivative over interval reaching zero");
    } else {
        if (a.v <= 0.0) throw EvalError("sqrt of non-positive value");
    }
    const S f0 = sqrt(a.v);
    const S f1 = S(0.5) / f0;
    const S f2 = S(-0.5) * f1 / a.v;
    return chain_unary(a, f0, f1, f2);
}

template <class S>
Dual2<S> pow_int(const Dual2<S>& a, int k) {
    if (k == 0) return Dual2<S>::constant(S(1.0), a.n());
    if (k < 0) return recip(pow_int(a, -k));
    if (k == 1) return a;
    auto ipow = [](const S& v, int e) {
        if constexpr (detail::is_interval<S>::value) {
            return pdecert::pow_int(v, e);
        } else {
            return std::pow(v, e);
        }
    };
    const S f0 = ipow(a.v, k);
    const S f1 = S(static_cast<double>(k)) * ipow(a.v, k - 1);
    const S f2 = S(static_cast<double>(k) * (k - 1)) * ipow(a.v, k - 2);
    return chain_unary(a, f0, f1, f2);
}

template <class S>
Dual2<S> min(const Dual2<S>& a, const Dual2<S>& b) {
    if constexpr (detail::is_interval<S>::value) {
        if (a.v.hi <= b.v.lo) return a;
        if (b.v.hi <= a.v.lo) return b;
        Dual2<S> r = a;
        r.v = pdecert::min(a.v, b.v);
        for (size_t i = 0; i < r.g.size(); ++i) r.g[i] = Interval::hull(a.g[i], b.g[i]);
        for (size_t i = 0; i < r.h.size(); ++i) r.h[i] = Interval::hull(a.h[i], b.h[i]);
        return r;
    } else {
        return a.v <= b.v ? a : b;
    }
}

template <class S>
Dual2<S> max(const Dual2<S>& a, const Dual2<S>& b) {
    if constexpr (detail::is_interval<S>::value) {
        if (a.v.lo >= b.v.hi) return a;
        if (b.v.lo >= a.v.hi) return b;
        Dual2<S> r = a;
        r.v = pdecert::max(a.v, b.v);
        for (size_t i = 0; i < r.g.size(); ++i) r.g[i] = Interval::hull(a.g[i], b.g[i]);
        for (size_t i = 0; i < r.h.size(); ++i) r.h[i] = Interval::hull(a.h[i], b.h[i]);
        return r;
    } else {
        return a.v >= b.v ? a : b;
    }
}

} // namespace pdecert
