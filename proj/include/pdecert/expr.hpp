#pragma once

#include <cctype>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pdecert/dual2.hpp"
#include "pdecert/interval.hpp"

namespace pdecert {

enum class ExprKind {
    Const,
    Var,
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    PowInt,
    Sin,
    Cos,
    Tanh,
    Exp,
    Sqrt,
    Min,
    Max,
};

struct ExprNode;
using Expr = std::shared_ptr<const ExprNode>;

/// Immutable expression node. Shared subtrees are allowed (the structure is a
/// DAG); evaluation memoizes on node identity so shared subexpressions are
/// evaluated once.
struct ExprNode {
    ExprKind kind;
    double cval = 0.0; // Const
    int var = -1;      // Var
    int ipow = 0;      // PowInt exponent
    Expr a, b;

    ExprNode(ExprKind k, Expr lhs, Expr rhs) : kind(k), a(std::move(lhs)), b(std::move(rhs)) {}
    explicit ExprNode(double c) : kind(ExprKind::Const), cval(c) {}
    explicit ExprNode(int v, ExprKind) : kind(ExprKind::Var), var(v) {}
};

struct ParseError : std::runtime_error {
    size_t position;
    ParseError(const std::string& msg, size_t pos)
        : std::runtime_error(msg + " (at position " + std::to_string(pos) + ")"), position(pos) {}
};

namespace ex {

inline Expr constant(double c) { return std::make_shared<ExprNode>(c); }
inline Expr var(int i) { return std::make_shared<ExprNode>(i, ExprKind::Var); }
inline Expr unary(ExprKind k, Expr a) { return std::make_shared<ExprNode>(k, std::move(a), nullptr); }
inline Expr binary(ExprKind k, Expr a, Expr b) {
    return std::make_shared<ExprNode>(k, std::move(a), std::move(b));
}
inline Expr pow_int(Expr a, int k) {
    auto n = std::make_shared<ExprNode>(ExprKind::PowInt, std::move(a), nullptr);
    n->ipow = k;
    return n;
}
inline Expr neg(Expr a) {
    // fold negated literals so printing and reparsing agree structurally
    if (a->kind == ExprKind::Const) return constant(-a->cval);
    return unary(ExprKind::Neg, std::move(a));
}
inline Expr sin(Expr a) { return unary(ExprKind::Sin, std::move(a)); }
inline Expr cos(Expr a) { return unary(ExprKind::Cos, std::move(a)); }
inline Expr tanh(Expr a) { return unary(ExprKind::Tanh, std::move(a)); }
inline Expr exp(Expr a) { return unary(ExprKind::Exp, std::move(a)); }
inline Expr sqrt(Expr a) { return unary(ExprKind::Sqrt, std::move(a)); }
inline Expr min(Expr a, Expr b) { return binary(ExprKind::Min, std::move(a), std::move(b)); }
inline Expr max(Expr a, Expr b) { return binary(ExprKind::Max, std::move(a), std::move(b)); }

} // namespace ex

inline Expr operator+(Expr a, Expr b) { return ex::binary(ExprKind::Add, std::move(a), std::move(b)); }
inline Expr operator-(Expr a, Expr b) { return ex::binary(ExprKind::Sub, std::move(a), std::move(b)); }
inline Expr operator*(Expr a, Expr b) { return ex::binary(ExprKind::Mul, std::move(a), std::move(b)); }
inline Expr operator/(Expr a, Expr b) { return ex::binary(ExprKind::Div, std::move(a), std::move(b)); }
inline Expr operator-(Expr a) { return ex::neg(std::move(a)); }

inline int max_var_index(const Expr& e) {
    if (!e) return -1;
    int m = e->kind == ExprKind::Var ? e->var : -1;
    m = std::max(m, max_var_index(e->a));
    m = std::max(m, max_var_index(e->b));
    return m;
}

inline bool structurally_equal(const Expr& a, const Expr& b) {
    if (a == b) return true;
    if (!a || !b) return false;
    if (a->kind != b->kind || a->cval != b->cval || a->var != b->var || a->ipow != b->ipow)
        return false;
    return structurally_equal(a->a, b->a) && structurally_equal(a->b, b->b);
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

/// Recursive-descent parser over the grammar
///   expr   := term (('+'|'-') term)*
///   term   := factor (('*'|'/') factor)*
///   factor := '-' factor | power
///   power  := atom ('^' int_literal)?
///   atom   := number | ident | ident '(' expr (',' expr)? ')' | '(' expr ')'
/// Exponents are restricted to integer literals (optionally negated).
class Parser {
public:
    Parser(std::string text, std::vector<std::string> var_names)
        : text_(std::move(text)), vars_(std::move(var_names)) {}

    Expr parse() {
        Expr e = parse_expr();
        skip_ws();
        if (pos_ != text_.size()) throw ParseError("unexpected trailing input", pos_);
        return e;
    }

private:
    std::string text_;
    std::vector<std::string> vars_;
    size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    char peek() {
        skip_ws();
        return pos_ < text_.size() ? text_[pos_] : '\0';
    }
    bool accept(char c) {
        if (peek() == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    Expr parse_expr() {
        Expr e = parse_term();
        for (;;) {
            if (accept('+'))
                e = e + parse_term();
            else if (accept('-'))
                e = e - parse_term();
            else
                return e;
        }
    }

    Expr parse_term() {
        Expr e = parse_factor();
        for (;;) {
            if (accept('*'))
                e = e * parse_factor();
            else if (accept('/'))
                e = e / parse_factor();
            else
                return e;
        }
    }

    Expr parse_factor() {
        if (accept('-')) return ex::neg(parse_factor());
        return parse_power();
    }

    Expr parse_power() {
        Expr base = parse_atom();
        if (accept('^')) {
            skip_ws();
            const size_t p0 = pos_;
            bool negexp = accept('-');
            skip_ws();
            size_t start = pos_;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            if (pos_ == start) throw ParseError("exponent must be an integer literal", p0);
            if (pos_ < text_.size() && (text_[pos_] == '.' || text_[pos_] == 'e' || text_[pos_] == 'E'))
                throw ParseError("exponent must be an integer literal", p0);
            int k = std::stoi(text_.substr(start, pos_ - start));
            return ex::pow_int(std::move(base), negexp ? -k : k);
        }
        return base;
    }

    Expr parse_atom() {
        skip_ws();
        if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
        const char c = text_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
        if (accept('(')) {
            Expr e = parse_expr();
            if (!accept(')')) throw ParseError("expected ')'", pos_);
            return e;
        }
        throw ParseError(std::string("unexpected character '") + c + "'", pos_);
    }

    Expr parse_number() {
        const size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
            ++pos_;
        if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
            ++pos_;
            if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        }
        try {
            size_t used = 0;
            double v = std::stod(text_.substr(start, pos_ - start), &used);
            if (used != pos_ - start) throw std::invalid_argument("");
            return ex::constant(v);
        } catch (const std::exception&) {
            throw ParseError("malformed number literal", start);
        }
    }

    Expr parse_ident() {
        const size_t start = pos_;
        while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) ||
                                       text_[pos_] == '_'))
            ++pos_;
        const std::string name = text_.substr(start, pos_ - start);
        if (peek() == '(') {
            ++pos_; // consume '('
            if (name == "min" || name == "max") {
                Expr a = parse_expr();
                if (!accept(',')) throw ParseError("expected ',' in " + name, pos_);
                Expr b = parse_expr();
                if (!accept(')')) throw ParseError("expected ')'", pos_);
                return name == "min" ? ex::min(a, b) : ex::max(a, b);
            }
            Expr a = parse_expr();
            if (!accept(')')) throw ParseError("expected ')'", pos_);
            if (name == "sin") return ex::sin(a);
            if (name == "cos") return ex::cos(a);
            if (name == "tanh") return ex::tanh(a);
            if (name == "exp") return ex::exp(a);
            if (name == "sqrt") return ex::sqrt(a);
            throw ParseError("unknown function '" + name + "'", start);
        }
        if (name == "pi") return ex::constant(3.14159265358979323846);
        for (size_t i = 0; i < vars_.size(); ++i)
            if (vars_[i] == name) return ex::var(static_cast<int>(i));
        throw ParseError("unknown identifier '" + name + "'", start);
    }
};

inline Expr parse(const std::string& text, const std::vector<std::string>& var_names) {
    return Parser(text, var_names).parse();
}

// ---------------------------------------------------------------------------
// Pretty printer
// ---------------------------------------------------------------------------

namespace detail {

inline int precedence(const ExprNode& e) {
    switch (e.kind) {
        case ExprKind::Add:
        case ExprKind::Sub: return 1;
        case ExprKind::Mul:
        case ExprKind::Div: return 2;
        case ExprKind::Neg: return 3;
        case ExprKind::PowInt: return 4;
        case ExprKind::Const: return e.cval < 0 ? 3 : 5; // negative literal prints as -c
        default: return 5;
    }
}

inline void print_rec(std::ostream& os, const Expr& e, const std::vector<std::string>& vars,
                      int parent_prec) {
    const int p = precedence(*e);
    const bool paren = p < parent_prec;
    if (paren) os << '(';
    switch (e->kind) {
        case ExprKind::Const: {
            std::ostringstream tmp;
            tmp.precision(17);
            tmp << e->cval;
            os << tmp.str();
            break;
        }
        case ExprKind::Var: os << vars[static_cast<size_t>(e->var)]; break;
        case ExprKind::Neg:
            os << '-';
            print_rec(os, e->a, vars, p + 1);
            break;
        case ExprKind::Add:
            print_rec(os, e->a, vars, p);
            os << '+';
            print_rec(os, e->b, vars, p + 1);
            break;
        case ExprKind::Sub:
            print_rec(os, e->a, vars, p);
            os << '-';
            print_rec(os, e->b, vars, p + 1);
            break;
        case ExprKind::Mul:
            print_rec(os, e->a, vars, p);
            os << '*';
            print_rec(os, e->b, vars, p + 1);
            break;
        case ExprKind::Div:
            print_rec(os, e->a, vars, p);
            os << '/';
            print_rec(os, e->b, vars, p + 1);
            break;
        case ExprKind::PowInt:
            print_rec(os, e->a, vars, p + 1);
            os << '^' << e->ipow;
            break;
        case ExprKind::Sin:
        case ExprKind::Cos:
        case ExprKind::Tanh:
        case ExprKind::Exp:
        case ExprKind::Sqrt: {
            const char* name = e->kind == ExprKind::Sin    ? "sin"
                               : e->kind == ExprKind::Cos  ? "cos"
                               : e->kind == ExprKind::Tanh ? "tanh"
                               : e->kind == ExprKind::Exp  ? "exp"
                                                           : "sqrt";
            os << name << '(';
            print_rec(os, e->a, vars, 0);
            os << ')';
            break;
        }
        case ExprKind::Min:
        case ExprKind::Max:
            os << (e->kind == ExprKind::Min ? "min(" : "max(");
            print_rec(os, e->a, vars, 0);
            os << ',';
            print_rec(os, e->b, vars, 0);
            os << ')';
            break;
    }
    if (paren) os << ')';
}

} // namespace detail

inline std::string to_string(const Expr& e, const std::vector<std::string>& var_names) {
    std::ostringstream os;
    detail::print_rec(os, e, var_names, 0);
    return os.str();
}

// ---------------------------------------------------------------------------
// Symbolic differentiation
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_const(const Expr& e, double v) { return e->kind == ExprKind::Const && e->cval == v; }

// light folding so derivative DAGs stay compact
inline Expr dmul(Expr a, Expr b) {
    if (is_const(a, 0.0) || is_const(b, 0.0)) return ex::constant(0.0);
    if (is_const(a, 1.0)) return b;
    if (is_const(b, 1.0)) return a;
    return std::move(a) * std::move(b);
}
inline Expr dadd(Expr a, Expr b) {
    if (is_const(a, 0.0)) return b;
    if (is_const(b, 0.0)) return a;
    return std::move(a) + std::move(b);
}
inline Expr dsub(Expr a, Expr b) {
    if (is_const(b, 0.0)) return a;
    if (is_const(a, 0.0)) return ex::neg(std::move(b));
    return std::move(a) - std::move(b);
}

inline Expr diff_rec(const Expr& e, int var, std::unordered_map<const ExprNode*, Expr>& memo) {
    auto it = memo.find(e.get());
    if (it != memo.end()) return it->second;
    Expr r;
    switch (e->kind) {
        case ExprKind::Const: r = ex::constant(0.0); break;
        case ExprKind::Var: r = ex::constant(e->var == var ? 1.0 : 0.0); break;
        case ExprKind::Neg: r = ex::neg(diff_rec(e->a, var, memo)); break;
        case ExprKind::Add: r = dadd(diff_rec(e->a, var, memo), diff_rec(e->b, var, memo)); break;
        case ExprKind::Sub: r = dsub(diff_rec(e->a, var, memo), diff_rec(e->b, var, memo)); break;
        case ExprKind::Mul:
            r = dadd(dmul(diff_rec(e->a, var, memo), e->b), dmul(e->a, diff_rec(e->b, var, memo)));
            break;
        case ExprKind::Div:
            r = dsub(diff_rec(e->a, var, memo) / e->b,
                     dmul(e->a, diff_rec(e->b, var, memo)) / ex::pow_int(e->b, 2));
            break;
        case ExprKind::PowInt:
            r = e->ipow == 0 ? ex::constant(0.0)
                             : dmul(dmul(ex::constant(e->ipow), ex::pow_int(e->a, e->ipow - 1)),
                                    diff_rec(e->a, var, memo));
            break;
        case ExprKind::Sin: r = dmul(ex::cos(e->a), diff_rec(e->a, var, memo)); break;
        case ExprKind::Cos: r = dmul(ex::neg(ex::sin(e->a)), diff_rec(e->a, var, memo)); break;
        case ExprKind::Tanh:
            r = dmul(ex::constant(1.0) - ex::pow_int(ex::tanh(e->a), 2),
                     diff_rec(e->a, var, memo));
            break;
        case ExprKind::Exp: r = dmul(ex::exp(e->a), diff_rec(e->a, var, memo)); break;
        case ExprKind::Sqrt:
            r = diff_rec(e->a, var, memo) / dmul(ex::constant(2.0), ex::sqrt(e->a));
            break;
        case ExprKind::Min:
        case ExprKind::Max:
            throw EvalError("symbolic derivative of min/max is undefined");
    }
    memo.emplace(e.get(), r);
    return r;
}

} // namespace detail

/// Symbolic partial derivative d e / d x_var. Shared subtrees keep shared
/// derivatives, so the result stays a compact DAG.
inline Expr diff(const Expr& e, int var) {
    std::unordered_map<const ExprNode*, Expr> memo;
    return detail::diff_rec(e, var, memo);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// double overloads so the generic evaluator resolves the same names for
// points, intervals and duals
inline double sin(double x) { return std::sin(x); }
inline double cos(double x) { return std::cos(x); }
inline double tanh(double x) { return std::tanh(x); }
inline double exp(double x) {
    const double r = std::exp(x);
    if (!std::isfinite(r)) throw EvalError("exp overflow");
    return r;
}
inline double sqrt(double x) {
    if (x < 0.0) throw EvalError("sqrt of negative value");
    return std::sqrt(x);
}
inline double pow_int(double x, int k) {
    if (k < 0 && x == 0.0) throw EvalError("division by zero in negative power");
    return std::pow(x, k);
}
inline double min(double a, double b) { return a < b ? a : b; }
inline double max(double a, double b) { return a > b ? a : b; }

namespace detail {

/// Generic memoized evaluator: S must support the full arithmetic/function
/// set, LeafFn maps Const/Var nodes to S.
template <class S, class LeafFn>
S eval_rec(const Expr& e, LeafFn&& leaf, std::unordered_map<const ExprNode*, S>& memo) {
    auto it = memo.find(e.get());
    if (it != memo.end()) return it->second;
    S r;
    switch (e->kind) {
        case ExprKind::Const:
        case ExprKind::Var: r = leaf(*e); break;
        case ExprKind::Neg: r = -eval_rec(e->a, leaf, memo); break;
        case ExprKind::Add: r = eval_rec(e->a, leaf, memo) + eval_rec(e->b, leaf, memo); break;
        case ExprKind::Sub: r = eval_rec(e->a, leaf, memo) - eval_rec(e->b, leaf, memo); break;
        case ExprKind::Mul: r = eval_rec(e->a, leaf, memo) * eval_rec(e->b, leaf, memo); break;
        case ExprKind::Div: r = eval_rec(e->a, leaf, memo) / eval_rec(e->b, leaf, memo); break;
        case ExprKind::PowInt: r = pow_int(eval_rec(e->a, leaf, memo), e->ipow); break;
        case ExprKind::Sin: r = sin(eval_rec(e->a, leaf, memo)); break;
        case ExprKind::Cos: r = cos(eval_rec(e->a, leaf, memo)); break;
        case ExprKind::Tanh: r = tanh(eval_rec(e->a, leaf, memo)); break;
        case ExprKind::Exp: r = exp(eval_rec(e->a, leaf, memo)); break;
        case ExprKind::Sqrt: r = sqrt(eval_rec(e->a, leaf, memo)); break;
        case ExprKind::Min: r = min(eval_rec(e->a, leaf, memo), eval_rec(e->b, leaf, memo)); break;
        case ExprKind::Max: r = max(eval_rec(e->a, leaf, memo), eval_rec(e->b, leaf, memo)); break;
    }
    memo.emplace(e.get(), r);
    return r;
}

} // namespace detail

/// Exact point evaluation.
inline double eval(const Expr& e, const std::vector<double>& x) {
    if (max_var_index(e) >= static_cast<int>(x.size()))
        throw EvalError("evaluation point has too few dimensions");
    std::unordered_map<const ExprNode*, double> memo;
    auto leaf = [&](const ExprNode& n) -> double {
        if (n.kind == ExprKind::Const) return n.cval;
        return x[static_cast<size_t>(n.var)];
    };
    double r = detail::eval_rec<double>(e, leaf, memo);
    if (!std::isfinite(r)) throw EvalError("point evaluation produced a non-finite value");
    return r;
}

/// Exact value/gradient/Hessian via forward-mode dual numbers.
inline Dual2<double> eval_dual2(const Expr& e, const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    if (max_var_index(e) >= n) throw EvalError("evaluation point has too few dimensions");
    std::unordered_map<const ExprNode*, Dual2<double>> memo;
    auto leaf = [&](const ExprNode& node) -> Dual2<double> {
        if (node.kind == ExprKind::Const) return Dual2<double>::constant(node.cval, n);
        return Dual2<double>::variable(x[static_cast<size_t>(node.var)], node.var, n);
    };
    return detail::eval_rec<Dual2<double>>(e, leaf, memo);
}

/// Natural interval extension over a box.
inline Interval eval_interval_natural(const Expr& e, const Box& b) {
    if (max_var_index(e) >= b.n()) throw EvalError("box has too few dimensions");
    std::unordered_map<const ExprNode*, Interval> memo;
    auto leaf = [&](const ExprNode& n) -> Interval {
        if (n.kind == ExprKind::Const) return Interval(n.cval);
        return b.dims[static_cast<size_t>(n.var)];
    };
    return detail::eval_rec<Interval>(e, leaf, memo);
}

/// Enclosure of value + gradient + Hessian over a box.
inline Dual2<Interval> eval_interval_dual2(const Expr& e, const Box& b) {
    const int n = b.n();
    if (max_var_index(e) >= n) throw EvalError("box has too few dimensions");
    std::unordered_map<const ExprNode*, Dual2<Interval>> memo;
    auto leaf = [&](const ExprNode& node) -> Dual2<Interval> {
        if (node.kind == ExprKind::Const) return Dual2<Interval>::constant(Interval(node.cval), n);
        return Dual2<Interval>::variable(b.dims[static_cast<size_t>(node.var)], node.var, n);
    };
    return detail::eval_rec<Dual2<Interval>>(e, leaf, memo);
}

/// Interval enclosure: natural extension intersected with the mean-value form
/// f(mid) + Df(box) . (box - mid).
inline Interval eval_interval(const Expr& e, const Box& b) {
    Interval nat = eval_interval_natural(e, b);
    if (nat.is_point() || b.max_width() == 0.0) return nat;
    try {
        Dual2<Interval> d = eval_interval_dual2(e, b);
        const std::vector<double> mid = b.midpoint();
        Interval mv = eval_interval_natural(e, Box::point(mid));
        for (int i = 0; i < b.n(); ++i) {
            // offsets computed with outward rounding relative to the rounded midpoint
            const Interval delta = b.dims[static_cast<size_t>(i)] - Interval(mid[static_cast<size_t>(i)]);
            mv += d.g[static_cast<size_t>(i)] * delta;
        }
        return intersect(nat, mv);
    } catch (const EvalError&) {
        // derivative enclosure hit a domain edge (e.g. sqrt at 0); fall back
        return nat;
    }
}

} // namespace pdecert
