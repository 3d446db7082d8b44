#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "pdecert/oracle.hpp"
#include "pdecert/trainer.hpp"

using namespace pdecert;

namespace {

SystemModel scalar_system(double half_width = 0.5) {
    return load_system(R"json({
      "mode": "lyapunov", "state_dim": 1, "control_dim": 0,
      "vars": ["x1"], "f": ["-x1"], "omega": "x1^2",
      "domain": {"lo": [-)json" +
                       std::to_string(half_width) + R"json(], "hi": [)json" +
                       std::to_string(half_width) + R"json(]}
    })json");
}

SystemModel linear2d_system() {
    return load_system(R"json({
      "mode": "lyapunov", "state_dim": 2, "control_dim": 0,
      "vars": ["x1", "x2"],
      "f": ["x2", "-2*x1-3*x2"],
      "omega": "x1^2+x2^2",
      "domain": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]}
    })json");
}

SystemModel pendulum_lyap() {
    return load_system(R"json({
      "mode": "lyapunov", "state_dim": 2, "control_dim": 0,
      "vars": ["x1", "x2"],
      "f": ["x2", "sin(x1)-x2-(4.4142*x1+2.3163*x2)"],
      "omega": "x1^2+x2^2",
      "domain": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]}
    })json");
}

SystemModel pendulum_hjb() {
    return load_system(R"json({
      "mode": "hjb", "state_dim": 2, "control_dim": 1,
      "vars": ["x1", "x2"],
      "f": ["x2", "19.6*sin(x1)-4*x2"],
      "g": [["0"], ["40"]],
      "Q": "x1^2+x2^2",
      "R": [["2"]],
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

// V = x^T P x and the induced LQR policy u = -R^-1 B^T P x for B = (0,1)^T,
// R = 1, written directly as expressions.
ResidualBundle exact_riccati_bundle(const SystemModel& sys, const Eigen::MatrixXd& P) {
    const Expr x1 = ex::var(0), x2 = ex::var(1);
    ResidualBundle b;
    b.mode = Mode::Hjb;
    b.value = ex::constant(P(0, 0)) * x1 * x1 + ex::constant(2.0 * P(0, 1)) * x1 * x2 +
              ex::constant(P(1, 1)) * x2 * x2;
    b.grad = {ex::constant(2.0 * P(0, 0)) * x1 + ex::constant(2.0 * P(0, 1)) * x2,
              ex::constant(2.0 * P(0, 1)) * x1 + ex::constant(2.0 * P(1, 1)) * x2};
    b.policy = {ex::neg(ex::constant(P(1, 0)) * x1 + ex::constant(P(1, 1)) * x2)};
    b.weight = sys.Q;
    b.r = ex::constant(0.0);
    return b;
}

} // namespace

TEST_CASE("dp54 reproduces the scalar exponential decay") {
    SystemModel sys = scalar_system(2.0);
    const double rtol = 1e-8;
    Trajectory tr = integrate(sys, {1.0}, std::nullopt, 1.0, rtol, rtol * 1e-3, 0.0);
    CHECK(tr.reason == StopReason::TimeLimit);
    CHECK(tr.final_time() == doctest::Approx(1.0));
    CHECK(tr.final_state()[0] == doctest::Approx(std::exp(-1.0)).epsilon(10 * rtol));
    // running cost integral of e^{-2t} over [0,1]
    CHECK(tr.cost == doctest::Approx(0.5 * (1.0 - std::exp(-2.0))).epsilon(10 * rtol));
    for (size_t i = 1; i < tr.t.size(); ++i) CHECK(tr.t[i] > tr.t[i - 1]);
}

TEST_CASE("true_value matches the closed-form scalar solution") {
    SystemModel sys = scalar_system();
    OracleValue v = true_value(sys, {0.4});
    CHECK(std::abs(v.value - 0.08) < 1e-6);
    CHECK(v.tail >= 0.0);
    CHECK(v.tail < 1e-9);

    OracleValue at0 = true_value(sys, {0.0});
    CHECK(at0.value == 0.0);
}

TEST_CASE("true_value matches the linear-quadratic oracle") {
    SystemModel sys = linear2d_system();
    auto [A, B] = linearize(sys);
    Eigen::MatrixXd P = lyap_solve(A, Eigen::MatrixXd::Identity(2, 2));
    CHECK(std::abs(P(0, 0) - 1.25) < 1e-12);
    CHECK(std::abs(P(0, 1) - 0.25) < 1e-12);
    CHECK(std::abs(P(1, 1) - 0.25) < 1e-12);

    const std::vector<std::vector<double>> pts = {
        {0.5, 0.5}, {-0.8, 0.3}, {0.2, -0.9}, {-0.4, -0.4}, {0.9, 0.1}};
    for (const auto& x : pts) {
        const double exact = P(0, 0) * x[0] * x[0] + 2 * P(0, 1) * x[0] * x[1] +
                             P(1, 1) * x[1] * x[1];
        OracleValue v = true_value(sys, x, 1e-10);
        CHECK(std::abs(v.value - exact) / exact < 1e-6);
    }
}

TEST_CASE("oracle self-consistency under rtol halving") {
    SystemModel sys = pendulum_lyap();
    const double rtol = 1e-8;
    OracleValue a = true_value(sys, {0.6, -0.4}, rtol);
    OracleValue b = true_value(sys, {0.6, -0.4}, rtol / 2);
    CHECK(std::abs(a.value - b.value) <= a.tail + b.tail + 10 * rtol * a.value);
}

TEST_CASE("semigroup property of the value integral") {
    SystemModel sys = linear2d_system();
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> ut(0.1, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        const std::vector<double> x0 = {0.4 - 0.1 * trial, -0.3 + 0.12 * trial};
        const double T = ut(rng);
        const double rtol = 1e-10;
        Trajectory head = integrate(sys, x0, std::nullopt, T, rtol, rtol * 1e-3, 0.0);
        REQUIRE(head.reason == StopReason::TimeLimit);
        const double whole = true_value(sys, x0, rtol).value;
        const double split = head.cost + true_value(sys, head.final_state(), rtol).value;
        CHECK(std::abs(whole - split) < 1e-7 * (1.0 + whole));
    }
}

TEST_CASE("pendulum closed loop converges, uncontrolled upright pendulum escapes") {
    SystemModel lyap = pendulum_lyap();
    Trajectory ok = integrate(lyap, {0.5, 0.5}, std::nullopt, 1000.0, 1e-8, 1e-11, 1e-4);
    CHECK(ok.reason == StopReason::Converged);
    CHECK(detail::norm2(ok.final_state()) <= 1e-4);

    SystemModel hjb = pendulum_hjb();
    const std::vector<Expr> zero_policy = {ex::constant(0.0)};
    Trajectory bad = integrate(hjb, {0.5, 0.0}, zero_policy, 1000.0, 1e-8, 1e-11, 1e-4);
    CHECK(bad.reason == StopReason::LeftDomain);
}

TEST_CASE("riccati policy cost reproduces the quadratic value") {
    SystemModel sys = lqr_di_system();
    auto [A, B] = linearize(sys);
    Eigen::MatrixXd P = riccati_solve(A, B, Eigen::MatrixXd::Identity(2, 2),
                                      Eigen::MatrixXd::Identity(1, 1));
    ResidualBundle bundle = exact_riccati_bundle(sys, P);

    const std::vector<std::vector<double>> pts = {{0.3, -0.2}, {-0.4, 0.1}, {0.25, 0.25}};
    for (const auto& x : pts) {
        const double exact = P(0, 0) * x[0] * x[0] + 2 * P(0, 1) * x[0] * x[1] +
                             P(1, 1) * x[1] * x[1];
        OracleValue J = policy_cost(sys, bundle.policy, x, 1e-9);
        CHECK(std::abs(J.value - exact) / exact < 1e-5);
    }
    OracleValue at0 = policy_cost(sys, bundle.policy, {0.0, 0.0});
    CHECK(at0.value == 0.0);
}

TEST_CASE("check_theorem1 passes for the certified scalar net") {
    SystemModel sys = scalar_system();
    ValueNet net = init_net(1, 50, 42, 1.0);
    CollocationSet pts = make_collocation(sys.domain, 200, CollocationKind::Halton, 1);
    auto [trained, rep] = train_lyapunov(sys, net, pts);
    ResidualBundle bundle = build_lyap_residual(sys, trained);

    BnbConfig cfg;
    Certificate qbc = verify_quadratic_bound(sys.omega, 1, 1.0, 0.1, cfg);
    REQUIRE(qbc.status == Verdict::Certified);
    Certificate cert = verify_relative_residual(bundle, 1e-3, {1.0, 0.1, true}, sys.domain, cfg);
    REQUIRE(cert.status == Verdict::Certified);

    std::vector<std::vector<double>> grid;
    for (int i = 0; i <= 100; ++i) grid.push_back({-0.5 + i * 0.01});
    CheckReport report = check_theorem1(sys, bundle.value, cert, grid);
    CHECK(report.passed());
    CHECK(report.violations == 0);
    CHECK(report.excluded == 0);
    CHECK(report.rows.size() == 101);
    CHECK(report.to_text().find("violations=0") != std::string::npos);

    CHECK(check_corollary1(sys, bundle, cert.epsilon) == 0);
}

TEST_CASE("check_theorem2 is tight for the exact riccati solution") {
    SystemModel sys = lqr_di_system();
    auto [A, B] = linearize(sys);
    Eigen::MatrixXd P = riccati_solve(A, B, Eigen::MatrixXd::Identity(2, 2),
                                      Eigen::MatrixXd::Identity(1, 1));
    ResidualBundle bundle = exact_riccati_bundle(sys, P);

    Certificate cert;
    cert.mode = "two_sided";
    cert.epsilon = 0.0;
    cert.status = Verdict::Certified;

    std::vector<std::vector<double>> pts;
    for (double a : {-0.3, 0.0, 0.3})
        for (double b2 : {-0.3, 0.0, 0.3}) pts.push_back({a, b2});
    CheckReport report = check_theorem2(sys, bundle, cert, 10.0, pts);
    CHECK(report.passed());
    CHECK(report.excluded == 0);

    // a point outside the sublevel set is excluded, not judged
    CheckReport small = check_theorem2(sys, bundle, cert, 1e-4, {{0.3, 0.3}});
    CHECK(small.excluded == 1);
    CHECK(small.violations == 0);
}

TEST_CASE("sublevel containment transfers between net and oracle values") {
    SystemModel sys = scalar_system();
    ValueNet net = init_net(1, 50, 42, 1.0);
    CollocationSet pts = make_collocation(sys.domain, 200, CollocationKind::Halton, 1);
    auto [trained, rep] = train_lyapunov(sys, net, pts);
    ResidualBundle bundle = build_lyap_residual(sys, trained);

    BnbConfig cfg;
    Certificate cert = verify_relative_residual(bundle, 1e-3, {1.0, 0.1, true}, sys.domain, cfg);
    REQUIRE(cert.status == Verdict::Certified);
    const double eps = cert.epsilon;
    const double c = 0.05;
    for (int i = 1; i <= 20; ++i) {
        const std::vector<double> x = {-0.5 + i * 0.047};
        const double vhat = eval(bundle.value, x);
        OracleValue v = true_value(sys, x);
        const double tol = 10 * (1e-9 * v.value + v.tail) + 1e-12;
        if (vhat <= (1.0 - eps) * c) CHECK(v.value <= c + tol);
        if (v.value <= c) CHECK(vhat <= (1.0 + eps) * c + tol);
    }
}
