#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "pdecert/trainer.hpp"
#include "pdecert/verifier.hpp"

using namespace pdecert;

namespace {

const std::vector<std::string> kVars2 = {"x1", "x2"};

Expr p2(const std::string& s) { return parse(s, kVars2); }

SystemModel scalar_system() {
    return load_system(R"json({
      "mode": "lyapunov", "state_dim": 1, "control_dim": 0,
      "vars": ["x1"], "f": ["-x1"], "omega": "x1^2",
      "domain": {"lo": [-0.5], "hi": [0.5]}
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

QuadraticLowerBound certified_qb(const Expr& weight, int n, double alpha, double rho,
                                 const BnbConfig& cfg) {
    Certificate c = verify_quadratic_bound(weight, n, alpha, rho, cfg);
    REQUIRE(c.status == Verdict::Certified);
    return {alpha, rho, true};
}

} // namespace

TEST_CASE("bnb_prove: clearly true and clearly false goals") {
    BnbConfig cfg;
    VerifyTask t;
    t.goal = p2("x1^2+x2^2-5");
    t.region = Box::cube(2, -1.0, 1.0);
    Certificate c = bnb_prove(t, cfg);
    CHECK(c.status == Verdict::Certified);
    CHECK(c.boxes_processed >= 1);

    t.goal = p2("x1^2-0.5");
    c = bnb_prove(t, cfg);
    CHECK(c.status == Verdict::Refuted);
    REQUIRE(c.witness.has_value());
    // genuine witness: the goal is positive at the witness midpoint
    CHECK(eval(t.goal, c.witness->midpoint()) > 0.0);
    CHECK(std::abs(c.witness->midpoint()[0]) > std::sqrt(0.5) - 0.2);
}

TEST_CASE("bnb_prove: pathological dependency handled by the centered forms") {
    // natural enclosure of -(x1 - x1)*1e6 - 1e-9 spans millions; the
    // mean-value/Taylor forms collapse it at the root box
    BnbConfig cfg;
    VerifyTask t;
    t.goal = ex::neg((p2("x1") - p2("x1")) * ex::constant(1e6)) - ex::constant(1e-9);
    t.region = Box::cube(2, -1.0, 1.0);
    Certificate c = bnb_prove(t, cfg);
    CHECK(c.status == Verdict::Certified);
    CHECK(c.boxes_processed <= 4);
}

TEST_CASE("bnb_prove: exact-zero goal exhausts the budget, never lies") {
    // x1^3 - x1*x1*x1 is identically zero, but outward rounding keeps every
    // enclosure's upper bound strictly positive: neither certified nor refuted
    BnbConfig cfg;
    cfg.max_depth = 12;
    VerifyTask t;
    t.goal = ex::pow_int(p2("x1"), 3) - p2("x1*x1*x1");
    t.region = Box::cube(2, -1.0, 1.0);
    Certificate c = bnb_prove(t, cfg);
    CHECK(c.status == Verdict::BudgetExhausted);

    // an excluded origin ball lets a near-marginal goal go through
    t.goal = ex::neg(p2("x1^2+x2^2")) + ex::constant(1e-6);
    t.excluded_ball_radius = 0.1;
    c = bnb_prove(t, cfg);
    CHECK(c.status == Verdict::Certified);
}

TEST_CASE("certificate json round trip") {
    Certificate c;
    c.mode = "two_sided";
    c.epsilon = 1e-3;
    c.rho = 0.1;
    c.alpha = 1.0;
    c.status = Verdict::Refuted;
    c.witness = Box(std::vector<Interval>{Interval(0.25, 0.5), Interval(-0.5, 0.0)});
    c.boxes_processed = 1234;
    c.max_depth = 17;
    c.wall_time = 0.5;
    c.note = "outer r <= eps w";
    Certificate back = Certificate::from_json(c.to_json());
    CHECK(back.mode == c.mode);
    CHECK(back.epsilon == c.epsilon);
    CHECK(back.status == c.status);
    CHECK(back.boxes_processed == c.boxes_processed);
    REQUIRE(back.witness.has_value());
    CHECK(back.witness->dims[0].lo == 0.25);
    CHECK(back.witness->dims[1].hi == 0.0);
    CHECK(back.note == c.note);
}

TEST_CASE("verify_quadratic_bound: structural, refuted, and PSD-path cases") {
    BnbConfig cfg;
    Certificate c = verify_quadratic_bound(p2("x1^2+x2^2"), 2, 1.0, 0.1, cfg);
    CHECK(c.status == Verdict::Certified);
    CHECK(c.boxes_processed == 0); // structural shortcut

    c = verify_quadratic_bound(p2("x1^2+x2^2"), 2, 1.5, 0.1, cfg);
    CHECK(c.status == Verdict::Refuted);

    // quartic direction admits no quadratic lower bound near the origin
    c = verify_quadratic_bound(p2("x1^2+x2^4"), 2, 0.9, 0.1, cfg);
    CHECK(c.status == Verdict::Refuted);
    REQUIRE(c.witness.has_value());
    const Expr h = p2("x1^2+x2^4") - ex::constant(0.9) * p2("x1^2+x2^2");
    CHECK(eval(h, c.witness->midpoint()) < 0.0);

    // cubic perturbation: true on the ball but needs the Hessian-PSD path
    c = verify_quadratic_bound(p2("x1^2+x2^2+x1^3"), 2, 0.5, 0.1, cfg);
    CHECK(c.status == Verdict::Certified);
}

TEST_CASE("verify_sublevel_separation on the unit box") {
    BnbConfig cfg;
    const Expr v = p2("x1^2+x2^2");
    Certificate c = verify_sublevel_separation(v, 0.5, Box::cube(2, -1.0, 1.0), cfg);
    CHECK(c.status == Verdict::Certified);

    c = verify_sublevel_separation(v, 1.5, Box::cube(2, -1.0, 1.0), cfg);
    CHECK(c.status == Verdict::Refuted);
    REQUIRE(c.witness.has_value());
    // witness lies on a face and has V <= c
    CHECK(eval(v, c.witness->midpoint()) <= 1.5);
}

TEST_CASE("verify_local_pd: quadratic certified, saddle refuted") {
    BnbConfig cfg;
    const Expr quad = p2("1.25*x1^2+0.5*x1*x2+0.25*x2^2"); // x^T P x, P = [[1.25,.25],[.25,.25]]
    Certificate c = verify_local_pd(quad, 2, 0.1, cfg);
    CHECK(c.status == Verdict::Certified);
    Eigen::Matrix2d P;
    P << 1.25, 0.25, 0.25, 0.25;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(P);
    CHECK(c.alpha == doctest::Approx(es.eigenvalues().minCoeff() / 2.0));

    c = verify_local_pd(p2("x1^2-x2^2"), 2, 0.1, cfg);
    CHECK(c.status == Verdict::Refuted);
}

TEST_CASE("scalar trained net: certified residual bound and tight eps search") {
    SystemModel sys = scalar_system();
    ValueNet net = init_net(1, 50, 42, 1.0);
    CollocationSet pts = make_collocation(sys.domain, 200, CollocationKind::Halton, 1);
    auto [trained, rep] = train_lyapunov(sys, net, pts);
    ResidualBundle bundle = build_lyap_residual(sys, trained);

    BnbConfig cfg;
    QuadraticLowerBound qb = certified_qb(sys.omega, 1, 1.0, 0.1, cfg);
    Certificate c = verify_relative_residual(bundle, 1e-3, qb, sys.domain, cfg);
    CHECK(c.status == Verdict::Certified);

    // probes near the certifiability threshold must terminate via a finite
    // budget rather than a refutation, so cap the per-probe box count
    cfg.max_boxes = 30'000;
    auto [eps_star, cert] = min_certified_epsilon(bundle, qb, sys.domain, cfg, 1e-3);
    CHECK(cert.status == Verdict::Certified);
    CHECK(eps_star <= 1e-3);

    // the dense-grid sup of |r|/omega is a lower bound on the true sup
    double grid_sup = 0.0;
    for (int i = 0; i <= 200; ++i) {
        const double x = -0.5 + i * 0.005;
        if (x * x < 1e-6) continue;
        grid_sup = std::max(grid_sup, std::abs(eval(bundle.r, {x})) / (x * x));
    }
    CHECK(eps_star >= grid_sup * 0.99);
    CHECK(eps_star <= std::max(grid_sup, 1e-12) * 5.0);

    // monotonicity: certified at eps_star implies certified at a larger eps
    Certificate c2 = verify_relative_residual(bundle, std::min(2.0 * eps_star, 0.99), qb,
                                              sys.domain, cfg);
    CHECK(c2.status == Verdict::Certified);
}

TEST_CASE("certified bound survives dense sampling") {
    SystemModel sys = scalar_system();
    ValueNet net = init_net(1, 50, 42, 1.0);
    CollocationSet pts = make_collocation(sys.domain, 200, CollocationKind::Halton, 1);
    auto [trained, rep] = train_lyapunov(sys, net, pts);
    ResidualBundle bundle = build_lyap_residual(sys, trained);
    BnbConfig cfg;
    QuadraticLowerBound qb = certified_qb(sys.omega, 1, 1.0, 0.1, cfg);
    const double eps = 1e-3;
    Certificate cert = verify_relative_residual(bundle, eps, qb, sys.domain, cfg);
    REQUIRE(cert.status == Verdict::Certified);
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> xd(-0.5, 0.5);
    int failures = 0;
    for (int i = 0; i < 100000; ++i) {
        const double x = xd(rng);
        if (std::abs(eval(bundle.r, {x})) > eps * x * x + 1e-12) ++failures;
    }
    CHECK(failures == 0);
}

TEST_CASE("negative control: zero net refuted with genuine witness") {
    SystemModel sys = scalar_system();
    ValueNet net = refresh_correction(init_net(1, 50, 42, 1.0));
    ResidualBundle bundle = build_lyap_residual(sys, net); // r == omega
    BnbConfig cfg;
    QuadraticLowerBound qb = certified_qb(sys.omega, 1, 1.0, 0.1, cfg);
    Certificate c = verify_relative_residual(bundle, 0.5, qb, sys.domain, cfg);
    CHECK(c.status == Verdict::Refuted);
    REQUIRE(c.witness.has_value());
    const auto w = c.witness->midpoint();
    CHECK(eval(bundle.r, w) > 0.5 * eval(bundle.weight, w));
}

TEST_CASE("negative control: sign-flipped training refuted one-sided") {
    SystemModel flipped = load_system(R"json({
      "mode": "lyapunov", "state_dim": 1, "control_dim": 0,
      "vars": ["x1"], "f": ["x1"], "omega": "x1^2",
      "domain": {"lo": [-0.5], "hi": [0.5]}
    })json");
    // training against unstable dynamics gives DV.f = -omega with f = +x,
    // i.e. r = DV.f + omega = +2 omega for the true stable-system residual
    ValueNet net = init_net(1, 50, 42, 1.0);
    CollocationSet pts = make_collocation(flipped.domain, 200, CollocationKind::Halton, 1);
    auto [trained, rep] = train_lyapunov(flipped, net, pts);

    SystemModel sys = scalar_system();
    ResidualBundle bundle = build_lyap_residual(sys, trained);
    BnbConfig cfg;
    QuadraticLowerBound qb = certified_qb(sys.omega, 1, 1.0, 0.1, cfg);
    Certificate c = verify_one_sided(bundle, 0.5, qb, sys.domain, cfg);
    CHECK(c.status == Verdict::Refuted);
    REQUIRE(c.witness.has_value());
    const auto w = c.witness->midpoint();
    CHECK(eval(bundle.r, w) > 0.5 * eval(bundle.weight, w));
}

TEST_CASE("one-sided implied by two-sided") {
    SystemModel sys = scalar_system();
    ValueNet net = init_net(1, 50, 42, 1.0);
    CollocationSet pts = make_collocation(sys.domain, 200, CollocationKind::Halton, 1);
    auto [trained, rep] = train_lyapunov(sys, net, pts);
    ResidualBundle bundle = build_lyap_residual(sys, trained);
    BnbConfig cfg;
    QuadraticLowerBound qb = certified_qb(sys.omega, 1, 1.0, 0.1, cfg);
    Certificate two = verify_relative_residual(bundle, 1e-3, qb, sys.domain, cfg);
    REQUIRE(two.status == Verdict::Certified);
    Certificate one = verify_one_sided(bundle, 1e-3, qb, sys.domain, cfg);
    CHECK(one.status == Verdict::Certified);
}

TEST_CASE("linear 2d trained net: eps_star bracketed by the grid sup") {
    SystemModel sys = linear2d_system();
    ValueNet net = init_net(2, 40, 7, 1.0);
    CollocationSet pts = make_collocation(sys.domain, 600, CollocationKind::Halton, 2);
    auto [trained, rep] = train_lyapunov(sys, net, pts);
    ResidualBundle bundle = build_lyap_residual(sys, trained);

    BnbConfig cfg;
    cfg.threads = 4;
    cfg.max_boxes = 100'000;
    QuadraticLowerBound qb = certified_qb(sys.omega, 2, 1.0, 0.1, cfg);
    auto [eps_star, cert] = min_certified_epsilon(bundle, qb, sys.domain, cfg, 0.3);
    REQUIRE(cert.status == Verdict::Certified);

    double grid_sup = 0.0;
    for (int i = 0; i <= 100; ++i)
        for (int j = 0; j <= 100; ++j) {
            const std::vector<double> x = {-1.0 + i * 0.02, -1.0 + j * 0.02};
            const double w = eval(sys.omega, x);
            if (w < 1e-6) continue;
            grid_sup = std::max(grid_sup, std::abs(eval(bundle.r, x)) / w);
        }
    CHECK(eps_star >= grid_sup);
    CHECK(eps_star <= 5.0 * grid_sup);
}

TEST_CASE("proposition-1 mechanism on random C2 expressions") {
    // certified Frobenius Hessian bound M on a star-shaped box implies
    // |h(x)| <= (M/2) ||x||^2 when h(0)=0 and Dh(0)=0
    std::mt19937 rng(12);
    std::uniform_real_distribution<double> cd(-1.0, 1.0);
    BnbConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        // random smooth h with value and gradient pinned at the origin:
        // quadratic-and-higher polynomial plus a sin-based term
        const double a = cd(rng), b = cd(rng), c = cd(rng), d = cd(rng);
        Expr h = ex::constant(a) * p2("x1^2") + ex::constant(b) * p2("x1*x2") +
                 ex::constant(c) * p2("x2^2") + ex::constant(d) * p2("x1^2*x2");
        const double e = cd(rng);
        h = h + ex::constant(e) * (ex::sin(p2("x1")) - p2("x1")); // sin(x)-x has h(0)=Dh(0)=0
        const Box box = Box::cube(2, -0.5 * (1.0 + cd(rng) * 0.5), 0.5 * (1.0 + cd(rng) * 0.5));

        // find a certified Frobenius bound by doubling from the box enclosure
        const Dual2<Interval> enc = eval_interval_dual2(h, box);
        double frob_hi = 0.0;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) frob_hi += enc.hess(i, j).mag() * enc.hess(i, j).mag();
        const double M = std::sqrt(frob_hi) * 1.01 + 1e-9;
        BnbResult res = detail::bnb_run(
            {{box, 0}}, detail::make_hessian_frob_test(h, M, 2), nullptr, cfg, false);
        REQUIRE(res.verdict == Verdict::Certified);

        std::uniform_real_distribution<double> u1(box.dims[0].lo, box.dims[0].hi);
        std::uniform_real_distribution<double> u2(box.dims[1].lo, box.dims[1].hi);
        for (int s = 0; s < 2000; ++s) {
            const std::vector<double> x = {u1(rng), u2(rng)};
            const double nsq = x[0] * x[0] + x[1] * x[1];
            CHECK(std::abs(eval(h, x)) <= 0.5 * M * nsq + 1e-10);
        }
    }
}

TEST_CASE("verdicts agree across worker counts") {
    SystemModel sys = linear2d_system();
    ValueNet net = init_net(2, 60, 3, 1.0);
    CollocationSet pts = make_collocation(sys.domain, 800, CollocationKind::Halton, 2);
    auto [trained, rep] = train_lyapunov(sys, net, pts);
    ResidualBundle bundle = build_lyap_residual(sys, trained);
    QuadraticLowerBound qb{1.0, 0.1, true};
    BnbConfig cfg1;
    cfg1.threads = 1;
    BnbConfig cfg8 = cfg1;
    cfg8.threads = 8;
    Certificate a = verify_relative_residual(bundle, 0.05, qb, sys.domain, cfg1);
    Certificate b = verify_relative_residual(bundle, 0.05, qb, sys.domain, cfg8);
    CHECK(a.status == b.status);
}
