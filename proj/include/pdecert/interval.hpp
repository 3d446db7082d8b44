#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdecert {

/// Thrown when an expression is evaluated outside its mathematical domain
/// (division by an interval containing zero, sqrt of a negative range, ...)
/// or when an enclosure overflows to infinity.
struct EvalError : std::runtime_error {
    explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline double down(double x) {
    return std::nextafter(x, -std::numeric_limits<double>::infinity());
}
inline double up(double x) {
    return std::nextafter(x, std::numeric_limits<double>::infinity());
}

} // namespace detail

/// Closed interval [lo, hi] with outward rounding applied after every
/// arithmetic operation. Endpoints must stay finite; an infinite endpoint is
/// treated as an evaluation error, never as a value.
struct Interval {
    double lo;
    double hi;

    Interval() : lo(0), hi(0) {}
    Interval(double v) : lo(v), hi(v) {} // NOLINT: implicit from double on purpose
    Interval(double l, double h) : lo(l), hi(h) {
        if (!(l <= h)) throw EvalError("Interval: lo > hi");
    }

    static Interval hull(const Interval& a, const Interval& b) {
        return Interval(std::min(a.lo, b.lo), std::max(a.hi, b.hi));
    }

    double mid() const { return 0.5 * (lo + hi); }
    double rad() const { return 0.5 * (hi - lo); }
    double width() const { return hi - lo; }
    /// max |x| over the interval
    double mag() const { return std::max(std::abs(lo), std::abs(hi)); }
    bool contains(double x) const { return lo <= x && x <= hi; }
    bool contains(const Interval& o) const { return lo <= o.lo && o.hi <= hi; }
    bool is_point() const { return lo == hi; }
};

namespace detail {

inline Interval widen(double lo, double hi) {
    lo = down(lo);
    hi = up(hi);
    if (!std::isfinite(lo) || !std::isfinite(hi))
        throw EvalError("interval endpoint overflowed to infinity");
    return Interval(lo, hi);
}

// extra widening for libm calls whose rounding error may exceed one ulp
inline Interval widen2(double lo, double hi) {
    lo = down(down(lo));
    hi = up(up(hi));
    if (!std::isfinite(lo) || !std::isfinite(hi))
        throw EvalError("interval endpoint overflowed to infinity");
    return Interval(lo, hi);
}

} // namespace detail

inline Interval operator+(const Interval& a, const Interval& b) {
    return detail::widen(a.lo + b.lo, a.hi + b.hi);
}
inline Interval operator-(const Interval& a, const Interval& b) {
    return detail::widen(a.lo - b.hi, a.hi - b.lo);
}
inline Interval operator-(const Interval& a) { return Interval(-a.hi, -a.lo); }

inline Interval operator*(const Interval& a, const Interval& b) {
    const double p1 = a.lo * b.lo, p2 = a.lo * b.hi, p3 = a.hi * b.lo, p4 = a.hi * b.hi;
    return detail::widen(std::min(std::min(p1, p2), std::min(p3, p4)),
                         std::max(std::max(p1, p2), std::max(p3, p4)));
}

inline Interval operator/(const Interval& a, const Interval& b) {
    if (b.lo <= 0.0 && b.hi >= 0.0)
        throw EvalError("division by interval containing zero");
    const double p1 = a.lo / b.lo, p2 = a.lo / b.hi, p3 = a.hi / b.lo, p4 = a.hi / b.hi;
    return detail::widen(std::min(std::min(p1, p2), std::min(p3, p4)),
                         std::max(std::max(p1, p2), std::max(p3, p4)));
}

inline Interval& operator+=(Interval& a, const Interval& b) { return a = a + b; }
inline Interval& operator-=(Interval& a, const Interval& b) { return a = a - b; }
inline Interval& operator*=(Interval& a, const Interval& b) { return a = a * b; }

inline Interval intersect(const Interval& a, const Interval& b) {
    const double lo = std::max(a.lo, b.lo);
    const double hi = std::min(a.hi, b.hi);
    // Sound enclosures of the same range always intersect.
    if (lo > hi) throw EvalError("intersection of disjoint enclosures");
    return Interval(lo, hi);
}

inline Interval pow_int(const Interval& a, int k) {
    if (k == 0) return Interval(1.0);
    if (k < 0) return Interval(1.0) / pow_int(a, -k);
    if (k == 1) return a;
    if (k % 2 == 0) {
        const double m = a.mag();
        const double lo = a.contains(0.0) ? 0.0 : std::min(std::abs(a.lo), std::abs(a.hi));
        return detail::widen2(std::pow(lo, k), std::pow(m, k));
    }
    return detail::widen2(std::pow(a.lo, k), std::pow(a.hi, k));
}

inline Interval sqrt(const Interval& a) {
    if (a.lo < 0.0) throw EvalError("sqrt of interval with negative part");
    Interval r = detail::widen2(std::sqrt(a.lo), std::sqrt(a.hi));
    r.lo = std::max(r.lo, 0.0);
    return r;
}

inline Interval exp(const Interval& a) {
    Interval r = detail::widen2(std::exp(a.lo), std::exp(a.hi));
    r.lo = std::max(r.lo, 0.0);
    return r;
}

inline Interval tanh(const Interval& a) {
    Interval r = detail::widen2(std::tanh(a.lo), std::tanh(a.hi));
    r.lo = std::max(r.lo, -1.0);
    r.hi = std::min(r.hi, 1.0);
    return r;
}

namespace detail {

// Quadrant analysis for sin over [lo, hi]: endpoint values, plus +/-1 when the
// interval contains a critical point pi/2 + k*pi. The containment tests are
// padded by one ulp of the argument so inexactness of pi cannot unsoundly
// exclude a critical point.
inline bool contains_phase(double lo, double hi, double phase) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    // padded by the |argument| ulp scale so inexactness of pi cannot
    // unsoundly exclude a critical point
    const double pad = 4e-16 * (1.0 + std::max(std::abs(lo), std::abs(hi)));
    const double k = std::ceil((lo - pad - phase) / two_pi);
    const double c = phase + k * two_pi;
    return c <= hi + pad;
}

template <class F>
Interval periodic_enclosure(double lo, double hi, F&& f, double max_phase, double min_phase) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    if (hi - lo >= two_pi) return Interval(-1.0, 1.0);
    double smin = std::min(f(lo), f(hi));
    double smax = std::max(f(lo), f(hi));
    if (contains_phase(lo, hi, max_phase)) smax = 1.0;
    if (contains_phase(lo, hi, min_phase)) smin = -1.0;
    Interval r = widen2(smin, smax);
    r.lo = std::max(r.lo, -1.0);
    r.hi = std::min(r.hi, 1.0);
    return r;
}

} // namespace detail

inline Interval sin(const Interval& a) {
    constexpr double half_pi = 1.5707963267948966192313216916398;
    return detail::periodic_enclosure(a.lo, a.hi, [](double x) { return std::sin(x); },
                                      half_pi, -half_pi);
}

inline Interval cos(const Interval& a) {
    constexpr double pi = 3.1415926535897932384626433832795;
    return detail::periodic_enclosure(a.lo, a.hi, [](double x) { return std::cos(x); },
                                      0.0, pi);
}

inline Interval min(const Interval& a, const Interval& b) {
    return Interval(std::min(a.lo, b.lo), std::min(a.hi, b.hi));
}
inline Interval max(const Interval& a, const Interval& b) {
    return Interval(std::max(a.lo, b.lo), std::max(a.hi, b.hi));
}
inline Interval abs(const Interval& a) {
    if (a.lo >= 0.0) return a;
    if (a.hi <= 0.0) return -a;
    return Interval(0.0, a.mag());
}
/// square of the magnitude bound, used by Frobenius-norm accumulation
inline Interval sqr_mag(const Interval& a) {
    const double m = a.mag();
    return detail::widen(0.0, m * m);
}

/// Axis-aligned box: one closed interval per dimension.
struct Box {
    std::vector<Interval> dims;

    Box() = default;
    explicit Box(std::vector<Interval> d) : dims(std::move(d)) {}
    static Box cube(int n, double lo, double hi) {
        return Box(std::vector<Interval>(static_cast<size_t>(n), Interval(lo, hi)));
    }
    static Box point(const std::vector<double>& x) {
        std::vector<Interval> d;
        d.reserve(x.size());
        for (double v : x) d.emplace_back(v);
        return Box(std::move(d));
    }

    int n() const { return static_cast<int>(dims.size()); }

    std::vector<double> midpoint() const {
        std::vector<double> m(dims.size());
        for (size_t i = 0; i < dims.size(); ++i) m[i] = dims[i].mid();
        return m;
    }

    double max_width() const {
        double w = 0;
        for (const auto& d : dims) w = std::max(w, d.width());
        return w;
    }

    int widest_dim() const {
        int best = 0;
        double w = -1;
        for (int i = 0; i < n(); ++i)
            if (dims[static_cast<size_t>(i)].width() > w) {
                w = dims[static_cast<size_t>(i)].width();
                best = i;
            }
        return best;
    }

    std::pair<Box, Box> bisect() const {
        const int d = widest_dim();
        Box a = *this, b = *this;
        const double m = dims[static_cast<size_t>(d)].mid();
        a.dims[static_cast<size_t>(d)].hi = m;
        b.dims[static_cast<size_t>(d)].lo = m;
        return {a, b};
    }

    bool contains(const std::vector<double>& x) const {
        if (static_cast<int>(x.size()) != n()) return false;
        for (int i = 0; i < n(); ++i)
            if (!dims[static_cast<size_t>(i)].contains(x[static_cast<size_t>(i)])) return false;
        return true;
    }

    /// max Euclidean norm over the box
    double norm_hi() const {
        double s = 0;
        for (const auto& d : dims) s += d.mag() * d.mag();
        return std::sqrt(s);
    }
    /// min Euclidean norm over the box
    double norm_lo() const {
        double s = 0;
        for (const auto& d : dims) {
            const double m = d.contains(0.0) ? 0.0 : std::min(std::abs(d.lo), std::abs(d.hi));
            s += m * m;
        }
        return std::sqrt(s);
    }
};

} // namespace pdecert
