#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <sstream>

#include "pdecert/value_net.hpp"

using namespace pdecert;

TEST_CASE("init_net is deterministic in the seed") {
    ValueNet a = init_net(2, 400, 42, 1.0);
    ValueNet b = init_net(2, 400, 42, 1.0);
    CHECK(a.A == b.A);
    CHECK(a.b == b.b);
    ValueNet c = init_net(2, 400, 43, 1.0);
    CHECK(a.A != c.A);
    CHECK(a.w.isZero());
}

TEST_CASE("zero output weights give the zero function") {
    ValueNet net = refresh_correction(init_net(2, 50, 7, 1.0));
    auto d = net_eval2(net, {0.3, -0.7});
    CHECK(d.v == 0.0);
    CHECK(d.g[0] == 0.0);
    CHECK(d.hess(0, 0) == 0.0);
    CHECK(net.c0 == 0.0);
    CHECK(net.c1.isZero());
}

TEST_CASE("refresh_correction pins value and gradient at the origin") {
    ValueNet net = init_net(3, 64, 5, 0.8);
    std::mt19937 rng(3);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int i = 0; i < net.m; ++i) net.w(i) = nd(rng);
    net = refresh_correction(net);
    auto d = net_eval2(net, {0.0, 0.0, 0.0});
    CHECK(std::abs(d.v) <= 1e-12);
    for (int j = 0; j < 3; ++j) CHECK(std::abs(d.g[static_cast<size_t>(j)]) <= 1e-12);

    // idempotent
    ValueNet twice = refresh_correction(net);
    CHECK(twice.c0 == net.c0);
    CHECK(twice.c1 == net.c1);
}

TEST_CASE("single-unit net is tanh(x1) - x1 after correction") {
    ValueNet net = init_net(2, 1, 0, 1.0);
    net.A << 1.0, 0.0;
    net.b << 0.0;
    net.w << 1.0;
    net = refresh_correction(net);
    CHECK(net.c0 == 0.0);
    CHECK(net.c1(0) == 1.0); // sech^2(0) * 1
    CHECK(net.c1(1) == 0.0);
    auto d = net_eval2(net, {0.5, 0.3});
    CHECK(d.v == doctest::Approx(std::tanh(0.5) - 0.5));
    auto d0 = net_eval2(net, {0.0, 0.0});
    CHECK(d0.g[0] == 0.0);
    CHECK(d0.g[1] == 0.0);
}

TEST_CASE("net_eval2 matches finite differences") {
    ValueNet net = init_net(2, 40, 19, 1.0);
    std::mt19937 rng(4);
    std::normal_distribution<double> nd(0.0, 0.5);
    for (int i = 0; i < net.m; ++i) net.w(i) = nd(rng);
    net = refresh_correction(net);
    std::uniform_real_distribution<double> xd(-0.9, 0.9);
    const double h = 1e-5;
    for (int it = 0; it < 10; ++it) {
        std::vector<double> x = {xd(rng), xd(rng)};
        auto d = net_eval2(net, x);
        for (int i = 0; i < 2; ++i) {
            auto xp = x, xm = x;
            xp[static_cast<size_t>(i)] += h;
            xm[static_cast<size_t>(i)] -= h;
            const double fd = (net_eval2(net, xp).v - net_eval2(net, xm).v) / (2 * h);
            CHECK(d.g[static_cast<size_t>(i)] ==
                  doctest::Approx(fd).epsilon(1e-6).scale(1.0 + std::abs(fd)));
            for (int j = 0; j < 2; ++j) {
                const double fdh = (net_eval2(net, xp).g[static_cast<size_t>(j)] -
                                    net_eval2(net, xm).g[static_cast<size_t>(j)]) /
                                   (2 * h);
                CHECK(d.hess(i, j) == doctest::Approx(fdh).epsilon(1e-6).scale(1.0 + std::abs(fdh)));
            }
        }
    }
}

TEST_CASE("to_expr agrees with net_eval2 and inherits interval soundness") {
    ValueNet net = init_net(2, 30, 77, 1.0);
    std::mt19937 rng(9);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int i = 0; i < net.m; ++i) net.w(i) = nd(rng);
    net = refresh_correction(net);
    Expr e = to_expr(net);
    std::uniform_real_distribution<double> xd(-1.0, 1.0);
    for (int it = 0; it < 100; ++it) {
        std::vector<double> x = {xd(rng), xd(rng)};
        const double ve = eval(e, x);
        const double vn = net_eval2(net, x).v;
        CHECK(ve == doctest::Approx(vn).epsilon(1e-10).scale(1.0 + std::abs(vn)));
    }
    Box b(std::vector<Interval>{Interval(-0.5, -0.1), Interval(0.2, 0.6)});
    Interval enc = eval_interval(e, b);
    std::uniform_real_distribution<double> u1(-0.5, -0.1), u2(0.2, 0.6);
    for (int it = 0; it < 200; ++it) {
        std::vector<double> x = {u1(rng), u2(rng)};
        CHECK(enc.contains(net_eval2(net, x).v));
    }

    // structurally lowered gradient agrees with the closed form
    NetExprs ne = build_net_exprs(net);
    for (int it = 0; it < 50; ++it) {
        std::vector<double> x = {xd(rng), xd(rng)};
        auto d = net_eval2(net, x);
        for (int j = 0; j < 2; ++j)
            CHECK(eval(ne.grad[static_cast<size_t>(j)], x) ==
                  doctest::Approx(d.g[static_cast<size_t>(j)]).epsilon(1e-10).scale(
                      1.0 + std::abs(d.g[static_cast<size_t>(j)])));
    }
}

TEST_CASE("save/load round trip is bit identical") {
    ValueNet net = init_net(2, 400, 123, 1.3);
    std::mt19937 rng(5);
    std::normal_distribution<double> nd(0.0, 2.0);
    for (int i = 0; i < net.m; ++i) net.w(i) = nd(rng);
    net = refresh_correction(net);

    std::stringstream ss;
    save_net(net, ss);
    ValueNet back = load_net(ss);
    CHECK(back.n == net.n);
    CHECK(back.m == net.m);
    CHECK(back.seed == net.seed);
    CHECK(back.scale == net.scale);
    CHECK(back.A == net.A);
    CHECK(back.b == net.b);
    CHECK(back.w == net.w);
    CHECK(back.c0 == net.c0);
    CHECK(back.c1 == net.c1);
}

TEST_CASE("malformed net files raise structured errors") {
    ValueNet net = init_net(1, 4, 0, 1.0);
    std::stringstream ss;
    save_net(net, ss);
    std::string text = ss.str();

    std::stringstream truncated(text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(load_net(truncated), NetIoError);

    std::string wrong_version = text;
    wrong_version.replace(wrong_version.find(" 1\n"), 3, " 9\n");
    std::stringstream wv(wrong_version);
    CHECK_THROWS_WITH_AS(load_net(wv), doctest::Contains("version"), NetIoError);

    std::stringstream garbage("hello world");
    CHECK_THROWS_AS(load_net(garbage), NetIoError);
}
