#pragma once

#include <Eigen/Dense>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pdecert/expr.hpp"

namespace pdecert {

struct NetIoError : std::runtime_error {
    explicit NetIoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// One-hidden-layer tanh network with random fixed hidden layer and trained
/// output weights, stored together with its bias-correction constants:
///
///   V(x) = w . tanh(A x + b) - c1 . x - c0
///
/// After refresh_correction, V(0) = 0 and DV(0) = 0 hold by construction.
struct ValueNet {
    int n = 0;
    int m = 0;
    std::uint64_t seed = 0;
    double scale = 1.0;
    Eigen::MatrixXd A;  // m x n
    Eigen::VectorXd b;  // m
    Eigen::VectorXd w;  // m
    double c0 = 0.0;
    Eigen::VectorXd c1; // n
};

/// Fresh net with A, b drawn i.i.d. uniform on [-scale, scale] from a seeded
/// generator; output layer zeroed.
inline ValueNet init_net(int n, int m, std::uint64_t seed, double scale) {
    if (n < 1 || m < 1) throw std::invalid_argument("init_net: n and m must be >= 1");
    if (!(scale > 0)) throw std::invalid_argument("init_net: scale must be positive");
    ValueNet net;
    net.n = n;
    net.m = m;
    net.seed = seed;
    net.scale = scale;
    net.A.resize(m, n);
    net.b.resize(m);
    net.w = Eigen::VectorXd::Zero(m);
    net.c0 = 0.0;
    net.c1 = Eigen::VectorXd::Zero(n);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) net.A(i, j) = dist(rng);
    for (int i = 0; i < m; ++i) net.b(i) = dist(rng);
    return net;
}

/// Closed-form value, gradient and Hessian of the corrected network.
inline Dual2<double> net_eval2(const ValueNet& net, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != net.n)
        throw std::invalid_argument("net_eval2: dimension mismatch");
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), net.n);
    const Eigen::VectorXd z = net.A * xv + net.b;
    const Eigen::VectorXd t = z.array().tanh();
    const Eigen::VectorXd s = 1.0 - t.array().square(); // sech^2
    Dual2<double> out = Dual2<double>::constant(0.0, net.n);
    out.v = net.w.dot(t) - net.c1.dot(xv) - net.c0;
    const Eigen::VectorXd ws = net.w.cwiseProduct(s);
    const Eigen::VectorXd grad = net.A.transpose() * ws - net.c1;
    for (int j = 0; j < net.n; ++j) out.g[static_cast<size_t>(j)] = grad(j);
    const Eigen::VectorXd d2 = net.w.cwiseProduct((-2.0 * t.array() * s.array()).matrix());
    size_t idx = 0;
    for (int i = 0; i < net.n; ++i)
        for (int j = 0; j <= i; ++j, ++idx) {
            double h = 0;
            for (int u = 0; u < net.m; ++u) h += d2(u) * net.A(u, i) * net.A(u, j);
            out.h[idx] = h;
        }
    return out;
}

/// Recompute the bias-correction constants from the current output weights so
/// that V(0) = 0 and DV(0) = 0 exactly up to one evaluation's rounding.
inline ValueNet refresh_correction(ValueNet net) {
    const Eigen::VectorXd tb = net.b.array().tanh();
    const Eigen::VectorXd sb = 1.0 - tb.array().square();
    net.c0 = net.w.dot(tb);
    net.c1 = net.A.transpose() * net.w.cwiseProduct(sb);
    return net;
}

/// Expression forms of the corrected network: the value and the structurally
/// lowered gradient (per-unit chain rule), with tanh subtrees shared so the
/// evaluator visits each hidden unit once.
struct NetExprs {
    Expr value;
    std::vector<Expr> grad; // length n
};

inline NetExprs build_net_exprs(const ValueNet& net) {
    std::vector<Expr> tanh_z(static_cast<size_t>(net.m));
    std::vector<Expr> sech2(static_cast<size_t>(net.m));
    std::vector<Expr> xs(static_cast<size_t>(net.n));
    for (int j = 0; j < net.n; ++j) xs[static_cast<size_t>(j)] = ex::var(j);
    const Expr one = ex::constant(1.0);
    for (int i = 0; i < net.m; ++i) {
        Expr z = ex::constant(net.b(i));
        for (int j = 0; j < net.n; ++j)
            z = z + ex::constant(net.A(i, j)) * xs[static_cast<size_t>(j)];
        tanh_z[static_cast<size_t>(i)] = ex::tanh(z);
        sech2[static_cast<size_t>(i)] =
            one - tanh_z[static_cast<size_t>(i)] * tanh_z[static_cast<size_t>(i)];
    }

    NetExprs out;
    Expr v = ex::constant(-net.c0);
    for (int i = 0; i < net.m; ++i)
        v = v + ex::constant(net.w(i)) * tanh_z[static_cast<size_t>(i)];
    for (int j = 0; j < net.n; ++j)
        v = v - ex::constant(net.c1(j)) * xs[static_cast<size_t>(j)];
    out.value = v;

    for (int j = 0; j < net.n; ++j) {
        Expr gj = ex::constant(-net.c1(j));
        for (int i = 0; i < net.m; ++i) {
            const double coeff = net.w(i) * net.A(i, j);
            if (coeff == 0.0) continue;
            gj = gj + ex::constant(coeff) * sech2[static_cast<size_t>(i)];
        }
        out.grad.push_back(gj);
    }
    return out;
}

inline Expr to_expr(const ValueNet& net) { return build_net_exprs(net).value; }

// ---------------------------------------------------------------------------
// Serialization: versioned text header, then every coefficient as an exact
// binary64 hexfloat. load(save(net)) is bit-identical.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string hexd(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

inline double parse_hexd(const std::string& tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw NetIoError("malformed numeric token: " + tok);
    return v;
}

} // namespace detail

inline void save_net(const ValueNet& net, std::ostream& os) {
    os << "pdecert-net 1\n";
    os << "n " << net.n << "\nm " << net.m << "\nseed " << net.seed << "\nscale "
       << detail::hexd(net.scale) << "\n";
    auto dump = [&](const char* name, const double* p, Eigen::Index count) {
        os << name;
        for (Eigen::Index i = 0; i < count; ++i) os << ' ' << detail::hexd(p[i]);
        os << '\n';
    };
    dump("A", net.A.data(), net.A.size());
    dump("b", net.b.data(), net.b.size());
    dump("w", net.w.data(), net.w.size());
    os << "c0 " << detail::hexd(net.c0) << '\n';
    dump("c1", net.c1.data(), net.c1.size());
}

inline void save_net(const ValueNet& net, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw NetIoError("cannot open " + path + " for writing");
    save_net(net, os);
}

inline ValueNet load_net(std::istream& is) {
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != "pdecert-net")
        throw NetIoError("not a pdecert net file");
    if (version != 1) throw NetIoError("unsupported net file version " + std::to_string(version));
    ValueNet net;
    std::string key;
    auto expect = [&](const char* want) {
        if (!(is >> key) || key != want)
            throw NetIoError(std::string("expected field '") + want + "', got '" + key + "'");
    };
    expect("n");
    is >> net.n;
    expect("m");
    is >> net.m;
    expect("seed");
    is >> net.seed;
    if (!is || net.n < 1 || net.m < 1) throw NetIoError("invalid dimensions in net file");
    std::string tok;
    auto read_scalar = [&]() {
        if (!(is >> tok)) throw NetIoError("truncated net file");
        return detail::parse_hexd(tok);
    };
    expect("scale");
    net.scale = read_scalar();
    auto load_block = [&](const char* name, double* p, Eigen::Index count) {
        expect(name);
        for (Eigen::Index i = 0; i < count; ++i) p[i] = read_scalar();
    };
    net.A.resize(net.m, net.n);
    net.b.resize(net.m);
    net.w.resize(net.m);
    net.c1.resize(net.n);
    load_block("A", net.A.data(), net.A.size());
    load_block("b", net.b.data(), net.b.size());
    load_block("w", net.w.data(), net.w.size());
    expect("c0");
    net.c0 = read_scalar();
    load_block("c1", net.c1.data(), net.c1.size());
    return net;
}

inline ValueNet load_net(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw NetIoError("cannot open " + path);
    return load_net(is);
}

} // namespace pdecert
