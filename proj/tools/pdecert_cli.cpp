#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pdecert/oracle.hpp"
#include "pdecert/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pdecert;

namespace {

// exit codes: 0 certified/success, 1 refuted/violation, 2 budget exhausted, 3 usage
constexpr int kOk = 0, kRefuted = 1, kBudget = 2, kUsage = 3;

struct RunConfig {
    json raw;
    fs::path dir;        // directory of the config file, for relative paths
    std::string hash;    // hex FNV-1a of the config bytes
    SystemModel sys;
};

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw ConfigError("cannot open file: " + p.string());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

RunConfig load_run_config(const std::string& path) {
    RunConfig rc;
    const fs::path p(path);
    const std::string bytes = slurp(p);
    rc.hash = fnv1a_hex(bytes);
    rc.dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    try {
        rc.raw = json::parse(bytes);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse failure: ") + e.what());
    }
    const json& s = rc.raw.at("system");
    if (s.is_string()) {
        fs::path sp(s.get<std::string>());
        if (sp.is_relative()) sp = rc.dir / sp;
        rc.sys = load_system(json::parse(slurp(sp)));
    } else {
        rc.sys = load_system(s);
    }
    return rc;
}

BnbConfig bnb_config(const RunConfig& rc, int threads_override) {
    BnbConfig cfg;
    if (rc.raw.contains("verifier")) {
        const json& v = rc.raw["verifier"];
        cfg.max_boxes = v.value("max_boxes", cfg.max_boxes);
        cfg.max_depth = v.value("max_depth", cfg.max_depth);
        cfg.min_box_width = v.value("min_box_width", cfg.min_box_width);
        cfg.threads = v.value("threads", cfg.threads);
    }
    if (threads_override > 0) cfg.threads = threads_override;
    return cfg;
}

fs::path out_dir(const RunConfig& rc) {
    fs::path d = rc.raw.value("out_dir", std::string("."));
    if (d.is_relative()) d = rc.dir / d;
    fs::create_directories(d);
    return d;
}

ResidualBundle build_bundle(const SystemModel& sys, const ValueNet& net) {
    return sys.mode == Mode::Lyapunov ? build_lyap_residual(sys, net)
                                      : build_hjb_residual(sys, net);
}

void write_json(const fs::path& p, json j, const std::string& hash) {
    j["config_hash"] = hash;
    std::ofstream os(p);
    os << j.dump(2) << "\n";
}

int verdict_exit(Verdict v) {
    switch (v) {
        case Verdict::Certified: return kOk;
        case Verdict::Refuted: return kRefuted;
        default: return kBudget;
    }
}

std::vector<std::vector<double>> uniform_grid(const Box& domain, int res) {
    const int n = domain.n();
    std::vector<std::vector<double>> pts;
    std::vector<int> idx(static_cast<size_t>(n), 0);
    for (;;) {
        std::vector<double> x(static_cast<size_t>(n));
        for (int d = 0; d < n; ++d) {
            const Interval& iv = domain.dims[static_cast<size_t>(d)];
            x[static_cast<size_t>(d)] =
                res == 1 ? iv.mid() : iv.lo + idx[static_cast<size_t>(d)] * iv.width() / (res - 1);
        }
        pts.push_back(std::move(x));
        int d = 0;
        while (d < n && ++idx[static_cast<size_t>(d)] == res) idx[static_cast<size_t>(d++)] = 0;
        if (d == n) break;
    }
    return pts;
}

int cmd_train(const std::string& cfg_path, std::string net_out, int threads) {
    (void)threads;
    RunConfig rc = load_run_config(cfg_path);
    const json nj = rc.raw.value("net", json::object());
    const int m = nj.value("m", 50);
    const std::uint64_t seed = nj.value("seed", 7ull);
    const double scale = nj.value("scale", 1.0);
    const json cj = rc.raw.value("collocation", json::object());
    const int count = cj.value("count", 400);
    const CollocationKind kind =
        cj.value("kind", std::string("halton")) == "grid" ? CollocationKind::Grid
                                                          : CollocationKind::Halton;
    const unsigned cseed = cj.value("seed", 1u);
    const json tj = rc.raw.value("trainer", json::object());

    ValueNet net = init_net(rc.sys.n, m, seed, scale);
    CollocationSet pts = make_collocation(rc.sys.domain, count, kind, cseed);
    ValueNet trained;
    TrainReport rep;
    if (rc.sys.mode == Mode::Lyapunov) {
        std::tie(trained, rep) = train_lyapunov(rc.sys, net, pts, tj.value("ridge", -1.0));
    } else {
        std::tie(trained, rep) = train_hjb(rc.sys, net, pts, tj.value("max_iters", 30),
                                           tj.value("tol", 1e-8), tj.value("ridge", -1.0));
    }

    const fs::path dir = out_dir(rc);
    if (net_out.empty()) net_out = (dir / "net.txt").string();
    save_net(trained, net_out);

    json rj;
    rj["iterations"] = rep.iterations;
    rj["max_residual"] = rep.max_residual;
    rj["rms_residual"] = rep.rms_residual;
    rj["value_change"] = rep.value_change;
    rj["converged"] = rep.converged;
    rj["net_file"] = net_out;
    rj["seed"] = seed;
    write_json(dir / "train_report.json", rj, rc.hash);
    std::cout << "trained m=" << m << " net -> " << net_out
              << " (max residual " << rep.max_residual.back() << ")\n";
    if (!rep.converged) {
        std::cerr << "training did not converge\n";
        return kRefuted;
    }
    return kOk;
}

int cmd_certify(const std::string& cfg_path, const std::string& net_path, bool one_sided,
                double sublevel_c, int threads, std::string cert_out) {
    RunConfig rc = load_run_config(cfg_path);
    ValueNet net = load_net(net_path);
    ResidualBundle bundle = build_bundle(rc.sys, net);
    BnbConfig cfg = bnb_config(rc, threads);
    const double rho = rc.raw.value("rho", 0.1);
    const double alpha = rc.raw.value("alpha", 1.0);
    const double eps_hi = rc.raw.contains("eps") ? rc.raw["eps"].value("hi", 0.5) : 0.5;
    const fs::path dir = out_dir(rc);
    if (cert_out.empty()) cert_out = (dir / "certificate.json").string();

    Certificate qbc = verify_quadratic_bound(bundle.weight, rc.sys.n, alpha, rho, cfg);
    write_json(dir / "quad_bound.json", qbc.to_json(), rc.hash);
    if (qbc.status != Verdict::Certified) {
        std::cerr << "quadratic lower bound " << to_string(qbc.status) << "\n";
        return verdict_exit(qbc.status);
    }
    const QuadraticLowerBound qb{alpha, rho, true};

    Expr sub_value = nullptr;
    if (sublevel_c > 0.0) {
        Certificate sep = verify_sublevel_separation(bundle.value, sublevel_c, rc.sys.domain, cfg);
        write_json(dir / "sublevel_sep.json", sep.to_json(), rc.hash);
        if (sep.status != Verdict::Certified) {
            std::cerr << "sublevel separation " << to_string(sep.status) << "\n";
            return verdict_exit(sep.status);
        }
        sub_value = bundle.value;
    }

    Certificate cert;
    if (one_sided) {
        cert = verify_one_sided(bundle, eps_hi, qb, rc.sys.domain, cfg, sub_value, sublevel_c);
    } else {
        auto [eps_star, c] =
            min_certified_epsilon(bundle, qb, rc.sys.domain, cfg, eps_hi, sub_value, sublevel_c);
        cert = std::move(c);
        cert.epsilon = eps_star;
    }
    write_json(cert_out, cert.to_json(), rc.hash);
    std::cout << cert.mode << " " << to_string(cert.status) << " eps=" << cert.epsilon
              << " boxes=" << cert.boxes_processed << " -> " << cert_out << "\n";
    return verdict_exit(cert.status);
}

int cmd_check(const std::string& cfg_path, const std::string& net_path,
              const std::string& cert_path, double sublevel_c, int grid_res, int threads) {
    (void)threads;
    RunConfig rc = load_run_config(cfg_path);
    ValueNet net = load_net(net_path);
    ResidualBundle bundle = build_bundle(rc.sys, net);
    Certificate cert = Certificate::from_json(json::parse(slurp(cert_path)));
    const json oj = rc.raw.value("oracle", json::object());
    const double rtol = oj.value("rtol", 1e-9);
    const double stop_radius = oj.value("stop_radius", 1e-5);

    const auto pts = uniform_grid(rc.sys.domain, grid_res);
    CheckReport report;
    if (rc.sys.mode == Mode::Lyapunov) {
        report = check_theorem1(rc.sys, bundle.value, cert, pts, rtol, stop_radius);
    } else {
        const double c = sublevel_c > 0.0 ? sublevel_c : std::numeric_limits<double>::infinity();
        report = check_theorem2(rc.sys, bundle, cert, c, pts, rtol, stop_radius);
    }
    const fs::path dir = out_dir(rc);
    std::ofstream os(dir / "check_report.txt");
    os << "config_hash " << rc.hash << "\n" << report.to_text();
    std::cout << "checked " << pts.size() << " points: " << report.violations << " violations, "
              << report.excluded << " excluded\n";
    return report.violations == 0 ? kOk : kRefuted;
}

int cmd_export_grid(const std::string& cfg_path, const std::string& net_path,
                    const std::string& cert_path, int resolution, std::string csv_out) {
    RunConfig rc = load_run_config(cfg_path);
    ValueNet net = load_net(net_path);
    const Expr value = to_expr(net);
    const Tape vtape(value);
    double eps = -1.0;
    if (!cert_path.empty()) {
        Certificate cert = Certificate::from_json(json::parse(slurp(cert_path)));
        if (cert.status != Verdict::Certified)
            throw ConfigError("certificate is not certified; no a-posteriori bound available");
        eps = cert.epsilon;
    }
    const fs::path dir = out_dir(rc);
    if (csv_out.empty()) csv_out = (dir / "grid.csv").string();
    std::ofstream os(csv_out);
    os.precision(17);
    for (int d = 0; d < rc.sys.n; ++d) os << rc.sys.vars[static_cast<size_t>(d)] << ",";
    os << "vhat";
    if (eps >= 0.0) os << ",err_bound";
    os << "\n";
    std::vector<double> scratch;
    for (const auto& x : uniform_grid(rc.sys.domain, resolution)) {
        for (double xi : x) os << xi << ",";
        const double v = vtape.eval_point(x, scratch);
        os << v;
        if (eps >= 0.0) os << "," << eps / (1.0 - eps) * v;
        os << "\n";
    }
    std::cout << "wrote " << csv_out << "\n";
    return kOk;
}

int cmd_oracle_value(const std::string& cfg_path, const std::string& net_path,
                     const std::string& point) {
    RunConfig rc = load_run_config(cfg_path);
    std::vector<double> x;
    std::stringstream ss(point);
    for (std::string tok; std::getline(ss, tok, ',');) x.push_back(std::stod(tok));
    if (static_cast<int>(x.size()) != rc.sys.n)
        throw ConfigError("point has wrong dimension for this system");
    OracleValue v;
    if (rc.sys.mode == Mode::Lyapunov) {
        v = true_value(rc.sys, x);
    } else {
        if (net_path.empty()) throw ConfigError("hjb oracle value needs --net for the policy");
        v = policy_cost(rc.sys, load_net(net_path), x);
    }
    std::cout.precision(12);
    std::cout << "value " << v.value << " tail " << v.tail << " stop_radius " << v.stop_radius
              << "\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"train-and-certify toolkit for Lyapunov and HJB PDE residual certificates"};
    app.require_subcommand(1);

    std::string cfg_path, net_path, cert_path, out_path, point;
    int threads = 0, grid_res = 21, resolution = 101;
    bool one_sided = false;
    double sublevel_c = 0.0;

    auto* train = app.add_subcommand("train", "train a value network from a run config");
    train->add_option("--config", cfg_path, "run config file")->required();
    train->add_option("--out", out_path, "net output path");

    auto* certify = app.add_subcommand("certify", "certify residual bounds for a trained net");
    certify->add_option("--config", cfg_path, "run config file")->required();
    certify->add_option("--net", net_path, "trained net file")->required();
    certify->add_flag("--one-sided", one_sided, "one-sided (Lyapunov/CLF) certificate");
    certify->add_option("--sublevel", sublevel_c, "restrict to the sublevel set {vhat <= c}");
    certify->add_option("--threads", threads, "worker threads (1 = deterministic path)");
    certify->add_option("--out", out_path, "certificate output path");

    auto* check = app.add_subcommand("check", "check theorem conclusions against the ODE oracle");
    check->add_option("--config", cfg_path, "run config file")->required();
    check->add_option("--net", net_path, "trained net file")->required();
    check->add_option("--cert", cert_path, "certificate file")->required();
    check->add_option("--sublevel", sublevel_c, "sublevel c for HJB checks");
    check->add_option("--grid", grid_res, "grid resolution per dimension");
    check->add_option("--threads", threads, "worker threads");

    auto* grid = app.add_subcommand("export-grid", "export vhat (and error bound) on a grid");
    grid->add_option("--config", cfg_path, "run config file")->required();
    grid->add_option("--net", net_path, "trained net file")->required();
    grid->add_option("--cert", cert_path, "certificate file (adds the err_bound column)");
    grid->add_option("--resolution", resolution, "points per dimension");
    grid->add_option("--out", out_path, "csv output path");

    auto* oracle = app.add_subcommand("oracle-value", "trajectory-integral value at a point");
    oracle->add_option("--config", cfg_path, "run config file")->required();
    oracle->add_option("--net", net_path, "trained net file (hjb policy)");
    oracle->add_option("--x", point, "comma-separated state coordinates")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (train->parsed()) return cmd_train(cfg_path, out_path, threads);
        if (certify->parsed())
            return cmd_certify(cfg_path, net_path, one_sided, sublevel_c, threads, out_path);
        if (check->parsed())
            return cmd_check(cfg_path, net_path, cert_path, sublevel_c, grid_res, threads);
        if (grid->parsed())
            return cmd_export_grid(cfg_path, net_path, cert_path, resolution, out_path);
        if (oracle->parsed()) return cmd_oracle_value(cfg_path, net_path, point);
    } catch (const OracleError& e) {
        std::cerr << "oracle failure: " << e.what() << "\n";
        return kRefuted;
    } catch (const OdeError& e) {
        std::cerr << "integration failure: " << e.what() << "\n";
        return kRefuted;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
