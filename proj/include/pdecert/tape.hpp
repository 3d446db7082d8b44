#pragma once

#include <unordered_map>
#include <vector>

#include "pdecert/expr.hpp"

namespace pdecert {

/// Expression DAG flattened to a topologically ordered instruction tape.
/// Evaluation runs as a tight loop over preallocated structure-of-arrays
/// buffers, avoiding the per-node hashing and per-node heap allocation of the
/// generic tree evaluator. Semantics match eval_interval_dual2 exactly: same
/// interval rules, same outward rounding, same EvalError conditions.
class Tape {
public:
    explicit Tape(const Expr& root) {
        std::unordered_map<const ExprNode*, int> index;
        build(root, index);
        nvars_ = max_var_index(root) + 1;
    }

    int size() const { return static_cast<int>(ops_.size()); }
    int num_vars() const { return nvars_; }

    /// Value/gradient/Hessian enclosure of the root over the box. The scratch
    /// buffer is grown as needed and may be reused across calls.
    Dual2<Interval> eval_dual2(const Box& box, std::vector<Interval>& scratch) const;

    /// Plain point evaluation, matching eval() semantics (same error
    /// conditions, same finiteness check). Extra trailing entries in x beyond
    /// the variables the expression uses are ignored.
    double eval_point(const std::vector<double>& x, std::vector<double>& scratch) const;

private:
    struct Op {
        ExprKind kind;
        double cval = 0.0;
        int var = -1;
        int ipow = 0;
        int a = -1;
        int b = -1;
    };
    std::vector<Op> ops_;
    int nvars_ = 0;

    int build(const Expr& e, std::unordered_map<const ExprNode*, int>& index) {
        auto it = index.find(e.get());
        if (it != index.end()) return it->second;
        Op op;
        op.kind = e->kind;
        op.cval = e->cval;
        op.var = e->var;
        op.ipow = e->ipow;
        if (e->a) op.a = build(e->a, index);
        if (e->b) op.b = build(e->b, index);
        const int id = static_cast<int>(ops_.size());
        ops_.push_back(op);
        index.emplace(e.get(), id);
        return id;
    }
};

namespace detail {

/// One Dual2 register inside the structure-of-arrays tape buffer: value at
/// offset 0, gradient at 1..n, packed lower-triangle Hessian after that.
struct TapeSlice {
    Interval* p;
    int n;
    int hs;
    Interval& v() const { return p[0]; }
    Interval& g(int i) const { return p[1 + i]; }
    Interval& h(int k) const { return p[1 + n + k]; }
};

inline void tape_const(const TapeSlice& r, const Interval& c) {
    r.v() = c;
    for (int i = 0; i < r.n; ++i) r.g(i) = Interval(0.0);
    for (int k = 0; k < r.hs; ++k) r.h(k) = Interval(0.0);
}

inline void tape_copy(const TapeSlice& r, const TapeSlice& a) {
    for (int i = 0; i < 1 + a.n + a.hs; ++i) r.p[i] = a.p[i];
}

inline void tape_chain(const TapeSlice& r, const TapeSlice& a, const Interval& f0,
                       const Interval& f1, const Interval& f2) {
    r.v() = f0;
    for (int i = 0; i < a.n; ++i) r.g(i) = f1 * a.g(i);
    int k = 0;
    for (int i = 0; i < a.n; ++i)
        for (int j = 0; j <= i; ++j, ++k) r.h(k) = f1 * a.h(k) + f2 * a.g(i) * a.g(j);
}

inline void tape_mul(const TapeSlice& r, const TapeSlice& a, const TapeSlice& b) {
    r.v() = a.v() * b.v();
    for (int i = 0; i < a.n; ++i) r.g(i) = a.v() * b.g(i) + b.v() * a.g(i);
    int k = 0;
    for (int i = 0; i < a.n; ++i)
        for (int j = 0; j <= i; ++j, ++k)
            r.h(k) = a.v() * b.h(k) + b.v() * a.h(k) + a.g(i) * b.g(j) + a.g(j) * b.g(i);
}

inline void tape_recip(const TapeSlice& r, const TapeSlice& a) {
    if (a.v().lo <= 0.0 && a.v().hi >= 0.0) throw EvalError("division by zero");
    const Interval f0 = Interval(1.0) / a.v();
    const Interval f1 = -(f0 * f0);
    const Interval f2 = Interval(2.0) * f0 * f0 * f0;
    tape_chain(r, a, f0, f1, f2);
}

} // namespace detail

inline Dual2<Interval> Tape::eval_dual2(const Box& box, std::vector<Interval>& scratch) const {
    const int n = box.n();
    if (nvars_ > n) throw EvalError("box has too few dimensions");
    const int hs = n * (n + 1) / 2;
    const int stride = 1 + n + hs;
    scratch.resize(static_cast<size_t>(stride) * ops_.size());
    auto slice = [&](int id) {
        return detail::TapeSlice{scratch.data() + static_cast<size_t>(stride) * id, n, hs};
    };

    for (int id = 0; id < static_cast<int>(ops_.size()); ++id) {
        const Op& op = ops_[static_cast<size_t>(id)];
        const detail::TapeSlice r = slice(id);
        switch (op.kind) {
            case ExprKind::Const: detail::tape_const(r, Interval(op.cval)); break;
            case ExprKind::Var:
                detail::tape_const(r, box.dims[static_cast<size_t>(op.var)]);
                r.g(op.var) = Interval(1.0);
                break;
            case ExprKind::Neg: {
                const detail::TapeSlice a = slice(op.a);
                for (int i = 0; i < stride; ++i) r.p[i] = -a.p[i];
                break;
            }
            case ExprKind::Add: {
                const detail::TapeSlice a = slice(op.a), b = slice(op.b);
                for (int i = 0; i < stride; ++i) r.p[i] = a.p[i] + b.p[i];
                break;
            }
            case ExprKind::Sub: {
                const detail::TapeSlice a = slice(op.a), b = slice(op.b);
                for (int i = 0; i < stride; ++i) r.p[i] = a.p[i] - b.p[i];
                break;
            }
            case ExprKind::Mul: detail::tape_mul(r, slice(op.a), slice(op.b)); break;
            case ExprKind::Div: {
                // r = a * recip(b), staged through a temporary register
                std::vector<Interval> tmp(static_cast<size_t>(stride));
                const detail::TapeSlice t{tmp.data(), n, hs};
                detail::tape_recip(t, slice(op.b));
                detail::tape_mul(r, slice(op.a), t);
                break;
            }
            case ExprKind::PowInt: {
                const detail::TapeSlice a = slice(op.a);
                int k = op.ipow;
                if (k == 0) {
                    detail::tape_const(r, Interval(1.0));
                    break;
                }
                const bool negexp = k < 0;
                if (negexp) k = -k;
                if (k == 1) {
                    detail::tape_copy(r, a);
                } else {
                    const Interval f0 = pow_int(a.v(), k);
                    const Interval f1 = Interval(static_cast<double>(k)) * pow_int(a.v(), k - 1);
                    const Interval f2 =
                        Interval(static_cast<double>(k) * (k - 1)) * pow_int(a.v(), k - 2);
                    detail::tape_chain(r, a, f0, f1, f2);
                }
                if (negexp) {
                    std::vector<Interval> tmp(r.p, r.p + stride);
                    detail::tape_recip(r, detail::TapeSlice{tmp.data(), n, hs});
                }
                break;
            }
            case ExprKind::Sin: {
                const detail::TapeSlice a = slice(op.a);
                tape_chain(r, a, sin(a.v()), cos(a.v()), -sin(a.v()));
                break;
            }
            case ExprKind::Cos: {
                const detail::TapeSlice a = slice(op.a);
                tape_chain(r, a, cos(a.v()), -sin(a.v()), -cos(a.v()));
                break;
            }
            case ExprKind::Tanh: {
                const detail::TapeSlice a = slice(op.a);
                const Interval t = tanh(a.v());
                const Interval s = Interval(1.0) - t * t;
                tape_chain(r, a, t, s, Interval(-2.0) * t * s);
                break;
            }
            case ExprKind::Exp: {
                const detail::TapeSlice a = slice(op.a);
                const Interval e = exp(a.v());
                tape_chain(r, a, e, e, e);
                break;
            }
            case ExprKind::Sqrt: {
                const detail::TapeSlice a = slice(op.a);
                if (a.v().lo <= 0.0) throw EvalError("sqrt derivative over interval reaching zero");
                const Interval f0 = sqrt(a.v());
                const Interval f1 = Interval(0.5) / f0;
                const Interval f2 = Interval(-0.5) * f1 / a.v();
                tape_chain(r, a, f0, f1, f2);
                break;
            }
            case ExprKind::Min:
            case ExprKind::Max: {
                const detail::TapeSlice a = slice(op.a), b = slice(op.b);
                const bool is_min = op.kind == ExprKind::Min;
                if (is_min ? a.v().hi <= b.v().lo : a.v().lo >= b.v().hi) {
                    detail::tape_copy(r, a);
                } else if (is_min ? b.v().hi <= a.v().lo : b.v().lo >= a.v().hi) {
                    detail::tape_copy(r, b);
                } else {
                    r.v() = is_min ? min(a.v(), b.v()) : max(a.v(), b.v());
                    for (int i = 1; i < stride; ++i) r.p[i] = Interval::hull(a.p[i], b.p[i]);
                }
                break;
            }
        }
    }

    const detail::TapeSlice root = slice(static_cast<int>(ops_.size()) - 1);
    Dual2<Interval> out;
    out.v = root.v();
    out.g.assign(static_cast<size_t>(n), Interval(0.0));
    out.h.assign(static_cast<size_t>(hs), Interval(0.0));
    for (int i = 0; i < n; ++i) out.g[static_cast<size_t>(i)] = root.g(i);
    for (int k = 0; k < hs; ++k) out.h[static_cast<size_t>(k)] = root.h(k);
    return out;
}

inline double Tape::eval_point(const std::vector<double>& x, std::vector<double>& scratch) const {
    if (nvars_ > static_cast<int>(x.size())) throw EvalError("evaluation point has too few dimensions");
    scratch.resize(ops_.size());
    for (int id = 0; id < static_cast<int>(ops_.size()); ++id) {
        const Op& op = ops_[static_cast<size_t>(id)];
        double r = 0.0;
        const auto a = [&] { return scratch[static_cast<size_t>(op.a)]; };
        const auto b = [&] { return scratch[static_cast<size_t>(op.b)]; };
        switch (op.kind) {
            case ExprKind::Const: r = op.cval; break;
            case ExprKind::Var: r = x[static_cast<size_t>(op.var)]; break;
            case ExprKind::Neg: r = -a(); break;
            case ExprKind::Add: r = a() + b(); break;
            case ExprKind::Sub: r = a() - b(); break;
            case ExprKind::Mul: r = a() * b(); break;
            case ExprKind::Div: r = a() / b(); break;
            case ExprKind::PowInt: r = pow_int(a(), op.ipow); break;
            case ExprKind::Sin: r = std::sin(a()); break;
            case ExprKind::Cos: r = std::cos(a()); break;
            case ExprKind::Tanh: r = std::tanh(a()); break;
            case ExprKind::Exp: r = exp(a()); break;
            case ExprKind::Sqrt: r = sqrt(a()); break;
            case ExprKind::Min: r = std::min(a(), b()); break;
            case ExprKind::Max: r = std::max(a(), b()); break;
        }
        scratch[static_cast<size_t>(id)] = r;
    }
    const double out = scratch.back();
    if (!std::isfinite(out)) throw EvalError("point evaluation produced a non-finite value");
    return out;
}

} // namespace pdecert
