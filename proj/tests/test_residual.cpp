#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "pdecert/linear_solvers.hpp"
#include "pdecert/residual.hpp"

using namespace pdecert;

namespace {

SystemModel pendulum_lyap() {
    return load_system(R"json({
      "mode": "lyapunov", "state_dim": 2, "control_dim": 0,
      "vars": ["x1", "x2"],
      "f": ["x2", "sin(x1)-x2-(4.4142*x1+2.3163*x2)"],
      "omega": "x1^2+x2^2",
      "domain": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]}
    })json");
}

SystemModel lqr_di_system() {
    return load_system(R"json({
      "mode": "hjb", "state_dim": 2, "control_dim": 1,
      "vars": ["x1", "x2"],
      "f": ["x2", "0"],
      "g": [["0"], ["1"]],
      "Q": "x1^2+x2^2",
      "R": [["1"]],
      "domain": {"lo": [-0.5, -0.5], "hi": [0.5, 0.5]}
    })json");
}

ValueNet random_net(int n, int m, unsigned seed) {
    ValueNet net = init_net(n, m, seed, 1.0);
    std::mt19937 rng(seed + 100);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int i = 0; i < net.m; ++i) net.w(i) = nd(rng);
    return refresh_correction(net);
}

} // namespace

TEST_CASE("zero net: lyapunov residual reduces to omega") {
    SystemModel sys = pendulum_lyap();
    ValueNet net = refresh_correction(init_net(2, 30, 1, 1.0));
    ResidualBundle b = build_lyap_residual(sys, net);
    CHECK(eval(b.r, {0.3, 0.4}) == doctest::Approx(0.25));
    CHECK(eval(b.r, {-0.5, 0.1}) == doctest::Approx(0.26));
    CHECK(eval(b.weight, {0.3, 0.4}) == doctest::Approx(0.25));
}

TEST_CASE("residual and its gradient vanish at the origin") {
    SystemModel sys = pendulum_lyap();
    ValueNet net = random_net(2, 60, 8);
    ResidualBundle b = build_lyap_residual(sys, net);
    auto d = eval_dual2(b.r, std::vector<double>{0.0, 0.0});
    CHECK(std::abs(d.v) <= 1e-10);
    CHECK(std::abs(d.g[0]) <= 1e-10);
    CHECK(std::abs(d.g[1]) <= 1e-10);
}

TEST_CASE("lyapunov residual is affine in the output weights") {
    SystemModel sys = pendulum_lyap();
    ValueNet n1 = random_net(2, 40, 21);
    ValueNet n2 = init_net(2, 40, 21, 1.0);
    std::mt19937 rng(55);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int i = 0; i < n2.m; ++i) n2.w(i) = nd(rng);
    n2 = refresh_correction(n2);
    ValueNet sum = n1;
    sum.w = n1.w + n2.w;
    sum = refresh_correction(sum);

    ResidualBundle b1 = build_lyap_residual(sys, n1);
    ResidualBundle b2 = build_lyap_residual(sys, n2);
    ResidualBundle bs = build_lyap_residual(sys, sum);
    std::uniform_real_distribution<double> xd(-1.0, 1.0);
    for (int it = 0; it < 50; ++it) {
        std::vector<double> x = {xd(rng), xd(rng)};
        const double lhs = eval(bs.r, x);
        const double rhs = eval(b1.r, x) + eval(b2.r, x) - eval(sys.omega, x);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9).scale(1.0 + std::abs(rhs)));
    }
}

TEST_CASE("zero net: hjb residual reduces to Q and the policy to zero") {
    SystemModel sys = lqr_di_system();
    ValueNet net = refresh_correction(init_net(2, 30, 2, 1.0));
    ResidualBundle b = build_hjb_residual(sys, net);
    REQUIRE(b.policy.size() == 1);
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> xd(-0.5, 0.5);
    for (int it = 0; it < 20; ++it) {
        std::vector<double> x = {xd(rng), xd(rng)};
        CHECK(eval(b.r, x) == doctest::Approx(x[0] * x[0] + x[1] * x[1]));
        CHECK(eval(b.policy[0], x) == 0.0);
    }
}

TEST_CASE("hjb residual equals the completed-square policy form") {
    SystemModel sys = lqr_di_system();
    ValueNet net = random_net(2, 50, 33);
    ResidualBundle b = build_hjb_residual(sys, net);
    std::mt19937 rng(6);
    std::uniform_real_distribution<double> xd(-0.5, 0.5);
    for (int it = 0; it < 100; ++it) {
        std::vector<double> x = {xd(rng), xd(rng)};
        auto d = net_eval2(net, x);
        const double u = eval(b.policy[0], x);
        // Q + u^T R u + DV.(f + g u): the Hamiltonian at the minimizing policy
        const double f0 = x[1], f1 = 0.0, g1 = 1.0, R = 1.0;
        const double ham = (x[0] * x[0] + x[1] * x[1]) + R * u * u + d.g[0] * f0 +
                           d.g[1] * (f1 + g1 * u);
        CHECK(eval(b.r, x) == doctest::Approx(ham).epsilon(1e-9).scale(1.0 + std::abs(ham)));
        // policy is the closed form -1/2 R^-1 g^T DV^T
        CHECK(u == doctest::Approx(-0.5 * d.g[1]).epsilon(1e-12).scale(1.0 + std::abs(d.g[1])));
    }
}

TEST_CASE("exact Riccati quadratic makes the hjb residual vanish") {
    SystemModel sys = lqr_di_system();
    Eigen::MatrixXd A(2, 2), B(2, 1), R(1, 1);
    A << 0, 1, 0, 0;
    B << 0, 1;
    R << 1;
    Eigen::MatrixXd P = riccati_solve(A, B, Eigen::MatrixXd::Identity(2, 2), R);

    // r = Q + DV.f - 1/4 DV g R^-1 g^T DV^T with V = x^T P x, assembled
    // symbolically through the same expression pipeline
    std::vector<std::string> vars = {"x1", "x2"};
    auto c = [](double v) { return ex::constant(v); };
    Expr x1 = ex::var(0), x2 = ex::var(1);
    Expr dv1 = c(2 * P(0, 0)) * x1 + c(2 * P(0, 1)) * x2;
    Expr dv2 = c(2 * P(1, 0)) * x1 + c(2 * P(1, 1)) * x2;
    Expr r = sys.Q + dv1 * sys.f[0] + dv2 * sys.f[1] - c(0.25) * dv2 * dv2;
    std::mt19937 rng(10);
    std::uniform_real_distribution<double> xd(-0.5, 0.5);
    for (int it = 0; it < 100; ++it) {
        std::vector<double> x = {xd(rng), xd(rng)};
        CHECK(std::abs(eval(r, x)) <= 1e-12);
    }
}

TEST_CASE("mode mismatches are rejected") {
    SystemModel lyap = pendulum_lyap();
    SystemModel hjb = lqr_di_system();
    ValueNet net = refresh_correction(init_net(2, 10, 0, 1.0));
    CHECK_THROWS_AS(build_hjb_residual(lyap, net), std::invalid_argument);
    CHECK_THROWS_AS(build_lyap_residual(hjb, net), std::invalid_argument);
    CHECK(build_residual(lyap, net).mode == Mode::Lyapunov);
    CHECK(build_residual(hjb, net).mode == Mode::Hjb);
}
