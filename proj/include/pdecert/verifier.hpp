#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <functional>
#include <json.hpp>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "pdecert/residual.hpp"
#include "pdecert/tape.hpp"

namespace pdecert {

enum class Verdict { Certified, Refuted, BudgetExhausted };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::Certified: return "certified";
        case Verdict::Refuted: return "refuted";
        default: return "budget_exhausted";
    }
}

struct BnbConfig {
    long max_boxes = 5'000'000;
    int max_depth = 60;
    double min_box_width = 1e-9;
    int threads = 1;
};

/// Machine-checkable verification outcome. `certified` means every leaf box
/// of the cover passed its interval test; `refuted` carries a witness region
/// on which the inequality genuinely fails; budget exhaustion is a distinct
/// third verdict, never conflated with refutation.
struct Certificate {
    std::string mode; // two_sided | one_sided | hessian_inner | quad_lower_bound |
                      // sublevel_sep | local_pd | generic
    double epsilon = 0.0;
    double rho = 0.0;
    double alpha = 0.0;
    Verdict status = Verdict::BudgetExhausted;
    std::optional<Box> witness;
    long boxes_processed = 0;
    int max_depth = 0;
    double wall_time = 0.0;
    std::string note;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["mode"] = mode;
        j["status"] = std::string(pdecert::to_string(status));
        j["epsilon"] = epsilon;
        j["rho"] = rho;
        j["alpha"] = alpha;
        j["boxes_processed"] = boxes_processed;
        j["max_depth"] = max_depth;
        j["wall_time_s"] = wall_time;
        if (!note.empty()) j["note"] = note;
        if (witness) {
            nlohmann::json w;
            for (const auto& d : witness->dims) {
                w["lo"].push_back(d.lo);
                w["hi"].push_back(d.hi);
            }
            j["witness"] = w;
        }
        return j;
    }

    static Certificate from_json(const nlohmann::json& j) {
        Certificate c;
        c.mode = j.at("mode").get<std::string>();
        const std::string s = j.at("status").get<std::string>();
        c.status = s == "certified"  ? Verdict::Certified
                   : s == "refuted" ? Verdict::Refuted
                                    : Verdict::BudgetExhausted;
        c.epsilon = j.at("epsilon").get<double>();
        c.rho = j.at("rho").get<double>();
        c.alpha = j.at("alpha").get<double>();
        c.boxes_processed = j.at("boxes_processed").get<long>();
        c.max_depth = j.at("max_depth").get<int>();
        c.wall_time = j.at("wall_time_s").get<double>();
        if (j.contains("note")) c.note = j["note"].get<std::string>();
        if (j.contains("witness")) {
            std::vector<Interval> dims;
            const auto& lo = j["witness"].at("lo");
            const auto& hi = j["witness"].at("hi");
            for (size_t i = 0; i < lo.size(); ++i)
                dims.emplace_back(lo[i].get<double>(), hi[i].get<double>());
            c.witness = Box(std::move(dims));
        }
        return c;
    }
};

// ---------------------------------------------------------------------------
// Enclosures
// ---------------------------------------------------------------------------

namespace detail {

/// Tight enclosure of an expression over a box: natural extension, mean-value
/// form, and the centered second-order Taylor form
///   f(mid) + Df(mid).delta + 1/2 delta^T H(box) delta
/// all intersected. The Taylor form is what keeps branch-and-bound depth
/// manageable for wide network residuals, whose natural enclosures do not
/// cancel across hidden units.
struct Enclosure {
    Interval range;    // over the box
    Interval at_mid;   // at the midpoint (degenerate-box evaluation)
    Dual2<Interval> over_box; // gradient/Hessian enclosures over the box
};

inline Enclosure enclose2(const Tape& tape, const Box& box) {
    thread_local std::vector<Interval> scratch;
    Enclosure out;
    out.over_box = tape.eval_dual2(box, scratch);
    Interval enc = out.over_box.v;
    const std::vector<double> mid = box.midpoint();
    const Dual2<Interval> dm = tape.eval_dual2(Box::point(mid), scratch);
    out.at_mid = dm.v;
    const int n = box.n();
    std::vector<Interval> delta(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        delta[static_cast<size_t>(i)] =
            box.dims[static_cast<size_t>(i)] - Interval(mid[static_cast<size_t>(i)]);

    Interval mean_value = dm.v;
    for (int i = 0; i < n; ++i)
        mean_value += out.over_box.g[static_cast<size_t>(i)] * delta[static_cast<size_t>(i)];
    enc = intersect(enc, mean_value);

    Interval taylor = dm.v;
    for (int i = 0; i < n; ++i)
        taylor += dm.g[static_cast<size_t>(i)] * delta[static_cast<size_t>(i)];
    const Interval half(0.5);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            Interval term = half * out.over_box.hess(i, j) * delta[static_cast<size_t>(i)] *
                            delta[static_cast<size_t>(j)];
            if (j < i) term = term + term; // symmetric pair
            taylor += term;
        }
    enc = intersect(enc, taylor);
    out.range = enc;
    return out;
}

inline Enclosure enclose2(const Expr& e, const Box& box) { return enclose2(Tape(e), box); }

} // namespace detail

// ---------------------------------------------------------------------------
// Branch-and-bound engine
// ---------------------------------------------------------------------------

enum class BoxStatus { Certified, Refuted, Unknown };

/// Per-box decision. Refuted outcomes must be genuine: the returned witness is
/// a region (possibly a point) on which the inequality provably fails.
using BoxTest = std::function<BoxStatus(const Box&, Box& witness)>;
using SkipFn = std::function<bool(const Box&)>;

struct WorkItem {
    Box box;
    int depth = 0;
};

struct BnbResult {
    Verdict verdict = Verdict::Certified;
    std::optional<Box> witness;
    long boxes_processed = 0;
    int max_depth = 0;
    std::vector<WorkItem> leaves; // final partition, for warm starts
};

namespace detail {

struct BnbShared {
    const BoxTest& test;
    const SkipFn* skip;
    const BnbConfig& cfg;
    bool keep_leaves;

    std::mutex mu;
    std::condition_variable cv;
    std::deque<WorkItem> queue;
    int active = 0;
    bool stop = false;
    long processed = 0;
    int max_depth_seen = 0;
    bool refuted = false;
    bool budget = false;
    std::optional<Box> witness;
    std::vector<WorkItem> leaves;

    BnbShared(const BoxTest& t, const SkipFn* s, const BnbConfig& c, bool kl)
        : test(t), skip(s), cfg(c), keep_leaves(kl) {}
};

inline void bnb_worker(BnbShared& S) {
    std::unique_lock lk(S.mu);
    for (;;) {
        while (S.queue.empty() && S.active > 0 && !S.stop) S.cv.wait(lk);
        if (S.stop || S.queue.empty()) {
            S.cv.notify_all();
            return;
        }
        WorkItem item = std::move(S.queue.front());
        S.queue.pop_front();
        ++S.active;
        ++S.processed;
        S.max_depth_seen = std::max(S.max_depth_seen, item.depth);
        const bool boxes_exhausted = S.processed > S.cfg.max_boxes;
        lk.unlock();

        BoxStatus st = BoxStatus::Unknown;
        Box witness;
        bool skipped = false;
        try {
            if (S.skip && (*S.skip)(item.box)) {
                st = BoxStatus::Certified;
                skipped = true;
            } else {
                st = S.test(item.box, witness);
            }
        } catch (const EvalError&) {
            st = BoxStatus::Unknown; // enclosure hit a domain edge; refine
        }
        (void)skipped;

        lk.lock();
        --S.active;
        switch (st) {
            case BoxStatus::Certified:
                if (S.keep_leaves) S.leaves.push_back(std::move(item));
                break;
            case BoxStatus::Refuted:
                S.refuted = true;
                S.witness = std::move(witness);
                S.stop = true;
                break;
            case BoxStatus::Unknown: {
                const bool out_of_budget = boxes_exhausted || item.depth >= S.cfg.max_depth ||
                                           item.box.max_width() <= S.cfg.min_box_width;
                if (out_of_budget) {
                    S.budget = true;
                    S.stop = true;
                    if (S.keep_leaves) S.leaves.push_back(std::move(item));
                } else {
                    auto [a, b] = item.box.bisect();
                    S.queue.push_back({std::move(a), item.depth + 1});
                    S.queue.push_back({std::move(b), item.depth + 1});
                }
                break;
            }
        }
        S.cv.notify_all();
    }
}

inline BnbResult bnb_run(std::vector<WorkItem> seed, const BoxTest& test, const SkipFn* skip,
                         const BnbConfig& cfg, bool keep_leaves) {
    BnbShared S(test, skip, cfg, keep_leaves);
    for (auto& it : seed) S.queue.push_back(std::move(it));
    if (cfg.threads <= 1) {
        bnb_worker(S);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(cfg.threads));
        for (int t = 0; t < cfg.threads; ++t) pool.emplace_back([&S] { bnb_worker(S); });
        for (auto& th : pool) th.join();
    }
    BnbResult out;
    out.boxes_processed = S.processed;
    out.max_depth = S.max_depth_seen;
    if (S.refuted) {
        out.verdict = Verdict::Refuted;
        out.witness = std::move(S.witness);
    } else if (S.budget) {
        out.verdict = Verdict::BudgetExhausted;
    } else {
        out.verdict = Verdict::Certified;
        out.leaves = std::move(S.leaves);
    }
    return out;
}

/// Admissibility check for refutation witnesses when the proof obligation is
/// restricted (excluded origin ball, sublevel set). A point may only serve as
/// a witness when it provably belongs to the restricted region.
using PointOk = std::function<bool(const std::vector<double>&)>;

/// Shared decision logic for goal <= 0 (or < 0 when strict) once the range and
/// midpoint enclosures are known. Refutes with the whole box when the lower
/// bound over the box is positive, or with the midpoint when the point
/// evaluation alone already violates the inequality. When the obligation is
/// restricted, only provably admissible points are offered as witnesses; a
/// violating box with no admissible candidate is split further instead.
inline BoxStatus goal_decision(const Interval& range, const Interval& at_mid, const Box& box,
                               bool strict, const PointOk& point_ok, Box& witness) {
    if (strict ? range.hi < 0.0 : range.hi <= 0.0) return BoxStatus::Certified;
    const bool box_viol = strict ? range.lo >= 0.0 : range.lo > 0.0;
    const bool mid_viol = strict ? at_mid.lo >= 0.0 : at_mid.lo > 0.0;
    if (box_viol && !point_ok) {
        witness = box;
        return BoxStatus::Refuted;
    }
    if (box_viol || mid_viol) {
        std::vector<std::vector<double>> cands;
        cands.push_back(box.midpoint());
        if (box_viol) {
            // farthest corner: survives an excluded-ball restriction
            std::vector<double> corner(static_cast<size_t>(box.n()));
            for (int i = 0; i < box.n(); ++i) {
                const Interval& d = box.dims[static_cast<size_t>(i)];
                corner[static_cast<size_t>(i)] = std::abs(d.lo) >= std::abs(d.hi) ? d.lo : d.hi;
            }
            cands.push_back(std::move(corner));
        }
        for (auto& p : cands)
            if (!point_ok || point_ok(p)) {
                witness = Box::point(p);
                return BoxStatus::Refuted;
            }
    }
    return BoxStatus::Unknown;
}

inline BoxTest make_goal_test(Expr goal, bool strict = false, PointOk point_ok = nullptr) {
    auto tape = std::make_shared<const Tape>(goal);
    return [tape = std::move(tape), strict, point_ok = std::move(point_ok)](const Box& box,
                                                                            Box& witness) {
        const Enclosure enc = enclose2(*tape, box);
        return goal_decision(enc.range, enc.at_mid, box, strict, point_ok, witness);
    };
}

/// Witness admissibility matching the ball / sublevel skips: the point must be
/// provably outside the open excluded ball and provably inside the sublevel
/// set (interval evaluation of V at the point, upper bound <= c).
inline PointOk make_point_ok(double excluded_ball_radius, Expr sublevel_value, double sublevel_c) {
    if (excluded_ball_radius <= 0.0 && !sublevel_value) return nullptr;
    return [rho = excluded_ball_radius, sv = std::move(sublevel_value),
            c = sublevel_c](const std::vector<double>& p) {
        if (rho > 0.0) {
            double s = 0.0;
            for (double v : p) s += v * v;
            if (std::sqrt(s) < rho) return false;
        }
        if (sv && eval_interval(sv, Box::point(p)).hi > c) return false;
        return true;
    };
}

inline SkipFn make_ball_skip(double rho) {
    return [rho](const Box& box) { return box.norm_hi() < rho; };
}

/// Optional restriction to a sublevel set: boxes on which the value function
/// provably exceeds c lie outside the closure of Omega_c and may be skipped.
/// The processed region is then a cover (superset) of Omega_c, so certificates
/// remain valid on Omega_c.
inline SkipFn make_sublevel_skip(Expr value, double c) {
    return [value = std::move(value), c](const Box& box) {
        return eval_interval(value, box).lo > c;
    };
}

inline SkipFn combine_skips(SkipFn a, SkipFn b) {
    if (!a) return b;
    if (!b) return a;
    return [a = std::move(a), b = std::move(b)](const Box& box) { return a(box) || b(box); };
}

} // namespace detail

// ---------------------------------------------------------------------------
// Generic prove
// ---------------------------------------------------------------------------

/// Prove goal(x) <= 0 for all x in region (strictly, when strict is set).
/// Boxes entirely inside the open ball of excluded_ball_radius are certified
/// vacuously; boxes provably outside {sublevel_value <= sublevel_c} likewise
/// when a sublevel constraint is present.
struct VerifyTask {
    Expr goal;
    Box region;
    double excluded_ball_radius = 0.0;
    bool strict = false;
    Expr sublevel_value; // optional
    double sublevel_c = 0.0;
};

inline Certificate bnb_prove(const VerifyTask& task, const BnbConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    SkipFn skip;
    if (task.excluded_ball_radius > 0.0)
        skip = detail::make_ball_skip(task.excluded_ball_radius);
    if (task.sublevel_value)
        skip = detail::combine_skips(std::move(skip),
                                     detail::make_sublevel_skip(task.sublevel_value, task.sublevel_c));
    const BoxTest test = detail::make_goal_test(
        task.goal, task.strict,
        detail::make_point_ok(task.excluded_ball_radius, task.sublevel_value, task.sublevel_c));
    BnbResult res = detail::bnb_run({{task.region, 0}}, test, skip ? &skip : nullptr, cfg, false);
    Certificate cert;
    cert.mode = "generic";
    cert.rho = task.excluded_ball_radius;
    cert.status = res.verdict;
    cert.witness = std::move(res.witness);
    cert.boxes_processed = res.boxes_processed;
    cert.max_depth = res.max_depth;
    cert.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return cert;
}

// ---------------------------------------------------------------------------
// Relative residual certification (Remark-5 split)
// ---------------------------------------------------------------------------

namespace detail {

/// Squared Frobenius norm of the symbolic Hessian of r, as an expression.
/// Feeding it through enclose2 gives the centered-form tightening on the
/// Hessian bound too, which the raw interval-AD Hessian cannot provide.
inline Expr hessian_frob_sq_expr(const Expr& r, int n) {
    std::vector<Expr> first(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) first[static_cast<size_t>(i)] = diff(r, i);
    Expr s = ex::constant(0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            Expr sq = ex::pow_int(diff(first[static_cast<size_t>(i)], j), 2);
            if (j < i) sq = ex::constant(2.0) * sq;
            s = dadd(std::move(s), std::move(sq));
        }
    return s;
}

/// Inner-ball test: sup of the squared Frobenius norm of the residual Hessian
/// over the box, compared against (2 eps alpha)^2. Certification of every box
/// covering B_rho implies |r(x)| <= eps alpha ||x||^2 there by the Taylor
/// argument (r(0)=0, Dr(0)=0, ball star-shaped).
inline BoxTest make_hessian_frob_test(Expr r, double bound, int n) {
    auto tape = std::make_shared<const Tape>(hessian_frob_sq_expr(r, n));
    return [tape = std::move(tape), bound](const Box& box, Box& witness) {
        const Enclosure enc = enclose2(*tape, box);
        const double thr_lo = detail::down(bound * bound);
        const double thr_hi = detail::up(bound * bound);
        if (enc.range.hi <= thr_lo) return BoxStatus::Certified;
        if (enc.range.lo > thr_hi) {
            witness = box;
            return BoxStatus::Refuted;
        }
        if (enc.at_mid.lo > thr_hi) {
            witness = Box::point(box.midpoint());
            return BoxStatus::Refuted;
        }
        return BoxStatus::Unknown;
    };
}

inline Box inner_bounding_box(const Box& region, double rho) {
    std::vector<Interval> dims;
    dims.reserve(region.dims.size());
    for (const auto& d : region.dims)
        dims.push_back(intersect(d, Interval(-rho, rho)));
    return Box(std::move(dims));
}

/// Per-box component enclosures reused across epsilon probes. All three
/// enclosure forms are linear in the expressions involved, so the enclosure of
/// s*r - eps*w recombines exactly from cached enclosures of r and w; probing a
/// new epsilon then costs only interval combinations on already-seen boxes.
struct CachedEnc {
    Dual2<Interval> over_box;
    Dual2<Interval> at_mid;
};

struct BoxKeyHash {
    size_t operator()(const std::vector<double>& k) const {
        size_t h = 1469598103934665603ull;
        for (double d : k) {
            std::uint64_t bits;
            std::memcpy(&bits, &d, sizeof bits);
            h ^= bits;
            h *= 1099511628211ull;
        }
        return h;
    }
};

class EnclosureCache {
public:
    explicit EnclosureCache(const Expr& e) : tape_(e) {}

    CachedEnc get(const Box& box) const {
        std::vector<double> key;
        key.reserve(2 * box.dims.size());
        for (const auto& d : box.dims) {
            key.push_back(d.lo);
            key.push_back(d.hi);
        }
        {
            std::lock_guard lk(mu_);
            auto it = map_.find(key);
            if (it != map_.end()) return it->second;
        }
        thread_local std::vector<Interval> scratch;
        CachedEnc c;
        c.over_box = tape_.eval_dual2(box, scratch);
        c.at_mid = tape_.eval_dual2(Box::point(box.midpoint()), scratch);
        std::lock_guard lk(mu_);
        map_.emplace(std::move(key), c);
        return c;
    }

private:
    Tape tape_;
    mutable std::mutex mu_;
    mutable std::unordered_map<std::vector<double>, CachedEnc, BoxKeyHash> map_;
};

/// Natural / mean-value / Taylor intersection for a linear combination
/// s*a - eps*b of two cached enclosures; returns {range, at_mid}. Passing
/// eps = 0 (with any b) reduces to the enclosure of s*a alone.
inline std::pair<Interval, Interval> combine_enclosures(const CachedEnc& a, const CachedEnc& b,
                                                        double s, double eps, const Box& box) {
    const Interval e(eps);
    const bool neg = s < 0.0;
    auto comb = [&](const Interval& x, const Interval& y) {
        Interval v = neg ? -x : x;
        if (eps != 0.0) v = v - e * y;
        return v;
    };
    const int n = box.n();
    Interval nat = comb(a.over_box.v, b.over_box.v);
    Interval midv = comb(a.at_mid.v, b.at_mid.v);
    const std::vector<double> mid = box.midpoint();
    std::vector<Interval> delta(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        delta[static_cast<size_t>(i)] =
            box.dims[static_cast<size_t>(i)] - Interval(mid[static_cast<size_t>(i)]);

    Interval mean_value = midv;
    for (int i = 0; i < n; ++i)
        mean_value += comb(a.over_box.g[static_cast<size_t>(i)],
                           b.over_box.g[static_cast<size_t>(i)]) *
                      delta[static_cast<size_t>(i)];
    Interval range = intersect(nat, mean_value);

    Interval taylor = midv;
    for (int i = 0; i < n; ++i)
        taylor += comb(a.at_mid.g[static_cast<size_t>(i)], b.at_mid.g[static_cast<size_t>(i)]) *
                  delta[static_cast<size_t>(i)];
    const Interval half(0.5);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            Interval term = half * comb(a.over_box.hess(i, j), b.over_box.hess(i, j)) *
                            delta[static_cast<size_t>(i)] * delta[static_cast<size_t>(j)];
            if (j < i) term = term + term; // symmetric pair
            taylor += term;
        }
    range = intersect(range, taylor);
    return {range, midv};
}

inline BoxTest make_cached_residual_test(std::shared_ptr<const EnclosureCache> rc,
                                         std::shared_ptr<const EnclosureCache> wc, double sign,
                                         double eps, PointOk point_ok) {
    return [rc = std::move(rc), wc = std::move(wc), sign, eps,
            point_ok = std::move(point_ok)](const Box& box, Box& witness) {
        const CachedEnc r = rc->get(box);
        const CachedEnc w = wc->get(box);
        const auto [range, at_mid] = combine_enclosures(r, w, sign, eps, box);
        return goal_decision(range, at_mid, box, /*strict=*/false, point_ok, witness);
    };
}

inline BoxTest make_cached_frob_test(std::shared_ptr<const EnclosureCache> fc, double bound) {
    return [fc = std::move(fc), bound](const Box& box, Box& witness) {
        const CachedEnc f = fc->get(box);
        const auto [range, at_mid] = combine_enclosures(f, f, 1.0, 0.0, box);
        const double thr_lo = detail::down(bound * bound);
        const double thr_hi = detail::up(bound * bound);
        if (range.hi <= thr_lo) return BoxStatus::Certified;
        if (range.lo > thr_hi) {
            witness = box;
            return BoxStatus::Refuted;
        }
        if (at_mid.lo > thr_hi) {
            witness = Box::point(box.midpoint());
            return BoxStatus::Refuted;
        }
        return BoxStatus::Unknown;
    };
}

struct ResidualWarmStart {
    std::vector<WorkItem> outer_pos; //  r - eps w <= 0
    std::vector<WorkItem> outer_neg; // -r - eps w <= 0
    std::vector<WorkItem> inner;     // Frobenius Hessian bound
    std::shared_ptr<const EnclosureCache> r_cache;
    std::shared_ptr<const EnclosureCache> w_cache;
    std::shared_ptr<const EnclosureCache> frob_cache;
};

struct ResidualProofSpec {
    const ResidualBundle& bundle;
    double eps;
    QuadraticLowerBound qb;
    Box region;
    bool one_sided;
    Expr sublevel_value; // optional
    double sublevel_c = 0.0;
};

inline Certificate verify_residual_impl(const ResidualProofSpec& spec, const BnbConfig& cfg,
                                        ResidualWarmStart* warm) {
    if (!(spec.eps >= 0.0 && spec.eps < 1.0))
        throw std::invalid_argument("verify residual: eps must lie in [0, 1)");
    if (!spec.qb.certified)
        throw std::invalid_argument("verify residual: quadratic lower bound is not certified");
    const auto t0 = std::chrono::steady_clock::now();

    Certificate cert;
    cert.mode = spec.one_sided ? "one_sided" : "two_sided";
    cert.epsilon = spec.eps;
    cert.rho = spec.qb.rho;
    cert.alpha = spec.qb.alpha;

    SkipFn outer_skip = make_ball_skip(spec.qb.rho);
    if (spec.sublevel_value)
        outer_skip = combine_skips(std::move(outer_skip),
                                   make_sublevel_skip(spec.sublevel_value, spec.sublevel_c));

    const Expr eps_w = ex::constant(spec.eps) * spec.bundle.weight;
    struct Proof {
        BoxTest test;
        const SkipFn* skip;
        std::vector<WorkItem>* warm_leaves;
        Box region;
        const char* name;
    };
    std::vector<Proof> proofs;
    // the ball only restricts the proof method (the inner Hessian pass covers
    // it), not the claim, so witnesses inside the ball remain genuine; a
    // sublevel restriction narrows the claim itself
    const PointOk point_ok = make_point_ok(0.0, spec.sublevel_value, spec.sublevel_c);
    const bool cached = warm && warm->r_cache;
    const double frob_bound = 2.0 * spec.eps * spec.qb.alpha;
    BoxTest outer_pos_test =
        cached ? make_cached_residual_test(warm->r_cache, warm->w_cache, 1.0, spec.eps, point_ok)
               : make_goal_test(spec.bundle.r - eps_w, false, point_ok);
    BoxTest outer_neg_test;
    if (!spec.one_sided)
        outer_neg_test = cached ? make_cached_residual_test(warm->r_cache, warm->w_cache, -1.0,
                                                            spec.eps, point_ok)
                                : make_goal_test(ex::neg(spec.bundle.r) - eps_w, false, point_ok);
    BoxTest inner_test =
        cached ? make_cached_frob_test(warm->frob_cache, frob_bound)
               : make_hessian_frob_test(spec.bundle.r, frob_bound, spec.region.n());

    proofs.push_back({std::move(outer_pos_test), &outer_skip, warm ? &warm->outer_pos : nullptr,
                      spec.region, "outer r <= eps w"});
    if (!spec.one_sided)
        proofs.push_back({std::move(outer_neg_test), &outer_skip,
                          warm ? &warm->outer_neg : nullptr, spec.region, "outer -r <= eps w"});
    // only the ball B_rho needs the Hessian bound; boxes of its bounding box
    // that lie wholly outside the ball are covered by the outer proofs
    const SkipFn inner_skip = [rho = spec.qb.rho](const Box& box) { return box.norm_lo() > rho; };
    proofs.push_back({std::move(inner_test), &inner_skip, warm ? &warm->inner : nullptr,
                      inner_bounding_box(spec.region, spec.qb.rho), "inner Hessian bound"});

    Verdict verdict = Verdict::Certified;
    for (auto& p : proofs) {
        std::vector<WorkItem> seed;
        if (p.warm_leaves && !p.warm_leaves->empty())
            seed = *p.warm_leaves;
        else
            seed.push_back({p.region, 0});
        BnbResult res = bnb_run(std::move(seed), p.test, p.skip, cfg, p.warm_leaves != nullptr);
        cert.boxes_processed += res.boxes_processed;
        cert.max_depth = std::max(cert.max_depth, res.max_depth);
        if (res.verdict == Verdict::Refuted) {
            verdict = Verdict::Refuted;
            cert.witness = std::move(res.witness);
            cert.note = p.name;
            break;
        }
        if (res.verdict == Verdict::BudgetExhausted) {
            verdict = Verdict::BudgetExhausted;
            cert.note = p.name;
            break;
        }
        if (p.warm_leaves) *p.warm_leaves = std::move(res.leaves);
    }
    cert.status = verdict;
    cert.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return cert;
}

} // namespace detail

/// Two-sided relative residual bound |r| <= eps * weight on region, via the
/// split scheme: Frobenius Hessian bound on the bounding box of B_rho (which
/// implies the bound inside the ball), direct interval proofs outside.
inline Certificate verify_relative_residual(const ResidualBundle& bundle, double eps,
                                            const QuadraticLowerBound& qb, const Box& region,
                                            const BnbConfig& cfg, Expr sublevel_value = nullptr,
                                            double sublevel_c = 0.0) {
    return detail::verify_residual_impl(
        {bundle, eps, qb, region, false, std::move(sublevel_value), sublevel_c}, cfg, nullptr);
}

/// One-sided variant r <= eps * weight (Lyapunov / CLF hypothesis).
inline Certificate verify_one_sided(const ResidualBundle& bundle, double eps,
                                    const QuadraticLowerBound& qb, const Box& region,
                                    const BnbConfig& cfg, Expr sublevel_value = nullptr,
                                    double sublevel_c = 0.0) {
    return detail::verify_residual_impl(
        {bundle, eps, qb, region, true, std::move(sublevel_value), sublevel_c}, cfg, nullptr);
}

/// Smallest certified eps found by bisection over [0, eps_hi]. Probes share
/// the previous certified probe's leaf partition as a warm start. A probe that
/// exhausts its budget is treated as not-certified, so the returned eps_star
/// is always genuinely certified (unless eps_hi itself fails, which is
/// reported as-is).
inline std::pair<double, Certificate> min_certified_epsilon(const ResidualBundle& bundle,
                                                            const QuadraticLowerBound& qb,
                                                            const Box& region, const BnbConfig& cfg,
                                                            double eps_hi,
                                                            Expr sublevel_value = nullptr,
                                                            double sublevel_c = 0.0) {
    if (!(eps_hi > 0.0 && eps_hi < 1.0))
        throw std::invalid_argument("min_certified_epsilon: eps_hi must lie in (0, 1)");
    detail::ResidualWarmStart warm;
    warm.r_cache = std::make_shared<const detail::EnclosureCache>(bundle.r);
    warm.w_cache = std::make_shared<const detail::EnclosureCache>(bundle.weight);
    warm.frob_cache = std::make_shared<const detail::EnclosureCache>(
        detail::hessian_frob_sq_expr(bundle.r, region.n()));
    long total_boxes = 0;
    auto probe = [&](double eps) {
        detail::ResidualWarmStart trial = warm;
        Certificate c = detail::verify_residual_impl(
            {bundle, eps, qb, region, false, sublevel_value, sublevel_c}, cfg, &trial);
        total_boxes += c.boxes_processed;
        if (c.status == Verdict::Certified) warm = std::move(trial);
        return c;
    };

    Certificate best = probe(eps_hi);
    if (best.status != Verdict::Certified) {
        best.boxes_processed = total_boxes;
        return {eps_hi, best};
    }
    double lo = 0.0, hi = eps_hi;
    for (int iter = 0; iter < 20 && (hi - lo) / hi >= 0.05; ++iter) {
        const double mid = 0.5 * (lo + hi);
        Certificate c = probe(mid);
        if (c.status == Verdict::Certified) {
            hi = mid;
            best = std::move(c);
        } else {
            lo = mid;
        }
    }
    best.boxes_processed = total_boxes;
    return {hi, best};
}

// ---------------------------------------------------------------------------
// Quadratic lower bound / local positive definiteness
// ---------------------------------------------------------------------------

namespace detail {

/// Interval-matrix positive semidefiniteness: every symmetric matrix in the
/// enclosure is PSD if lambda_min(midpoint) exceeds the Frobenius norm of the
/// radius matrix (eigenvalue perturbation bound). A small slack absorbs the
/// eigensolver's own rounding, in the conservative direction.
inline bool interval_hessian_psd(const Dual2<Interval>& d, int n) {
    Eigen::MatrixXd mid(n, n), rad(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const Interval& h = d.hess(i, j);
            mid(i, j) = h.mid();
            rad(i, j) = h.rad();
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mid, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff();
    const double slack = 1e-12 * (1.0 + mid.cwiseAbs().maxCoeff());
    return lmin - rad.norm() - slack >= 0.0;
}

/// Prove h >= 0 on a star-shaped box region where h(0)=0 and Dh(0)=0:
/// (a) interval Hessian PSD on every box of the scaled-down inner region
///     (convexity of the inner box + Taylor from the origin gives h >= 0);
/// (b) direct interval proof h >= 0 on the rest of the region.
/// Refutations are genuine: a point (or whole box) where h is provably
/// negative.
inline BnbResult prove_nonneg_from_origin(const Expr& h, const Box& region, const BnbConfig& cfg) {
    constexpr double kInnerScale = 0.25;
    Box inner = region;
    for (auto& d : inner.dims) {
        d.lo *= kInnerScale;
        d.hi *= kInnerScale;
    }

    const Tape htape(h);
    const BoxTest direct_test = [&htape](const Box& box, Box& witness) {
        const Enclosure enc = enclose2(htape, box);
        if (enc.range.lo >= 0.0) return BoxStatus::Certified;
        if (enc.range.hi < 0.0) {
            witness = box;
            return BoxStatus::Refuted;
        }
        if (enc.at_mid.hi < 0.0) {
            witness = Box::point(box.midpoint());
            return BoxStatus::Refuted;
        }
        return BoxStatus::Unknown;
    };
    const BoxTest psd_test = [&htape](const Box& box, Box& witness) {
        const Enclosure enc = enclose2(htape, box);
        if (enc.at_mid.hi < 0.0) {
            witness = Box::point(box.midpoint());
            return BoxStatus::Refuted;
        }
        if (enc.range.lo >= 0.0) return BoxStatus::Certified;
        if (interval_hessian_psd(enc.over_box, box.n())) return BoxStatus::Certified;
        return BoxStatus::Unknown;
    };

    // interior of the inner box is covered by the PSD proof
    const SkipFn inner_skip = [inner](const Box& box) {
        for (size_t i = 0; i < box.dims.size(); ++i)
            if (box.dims[i].lo < inner.dims[i].lo || box.dims[i].hi > inner.dims[i].hi)
                return false;
        return true;
    };

    BnbResult outer = bnb_run({{region, 0}}, direct_test, &inner_skip, cfg, false);
    if (outer.verdict != Verdict::Certified) return outer;
    BnbResult inner_res = bnb_run({{inner, 0}}, psd_test, nullptr, cfg, false);
    inner_res.boxes_processed += outer.boxes_processed;
    inner_res.max_depth = std::max(inner_res.max_depth, outer.max_depth);
    return inner_res;
}

/// Structural match for weight == sum over all n variables of x_i^2.
inline bool is_sum_of_all_squares(const Expr& e, int n) {
    std::vector<bool> seen(static_cast<size_t>(n), false);
    std::function<bool(const Expr&)> walk = [&](const Expr& node) {
        if (!node) return false;
        if (node->kind == ExprKind::Add) return walk(node->a) && walk(node->b);
        if (node->kind == ExprKind::PowInt && node->ipow == 2 && node->a->kind == ExprKind::Var) {
            const int v = node->a->var;
            if (v < 0 || v >= n || seen[static_cast<size_t>(v)]) return false;
            seen[static_cast<size_t>(v)] = true;
            return true;
        }
        return false;
    };
    if (!walk(e)) return false;
    for (bool s : seen)
        if (!s) return false;
    return true;
}

inline Expr norm_sq_expr(int n) {
    Expr s = ex::pow_int(ex::var(0), 2);
    for (int i = 1; i < n; ++i) s = s + ex::pow_int(ex::var(i), 2);
    return s;
}

} // namespace detail

/// Certify weight(x) >= alpha ||x||^2 on the bounding box of B_rho.
inline Certificate verify_quadratic_bound(const Expr& weight, int n, double alpha, double rho,
                                          const BnbConfig& cfg) {
    if (!(alpha > 0.0) || !(rho > 0.0))
        throw std::invalid_argument("verify_quadratic_bound: alpha and rho must be positive");
    const auto t0 = std::chrono::steady_clock::now();
    Certificate cert;
    cert.mode = "quad_lower_bound";
    cert.alpha = alpha;
    cert.rho = rho;

    if (alpha <= 1.0 && detail::is_sum_of_all_squares(weight, n)) {
        cert.status = Verdict::Certified;
        cert.note = "structural: weight is the squared norm and alpha <= 1";
        cert.wall_time =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return cert;
    }

    const Expr h = weight - ex::constant(alpha) * detail::norm_sq_expr(n);
    BnbResult res =
        detail::prove_nonneg_from_origin(h, Box::cube(n, -rho, rho), cfg);
    cert.status = res.verdict;
    cert.witness = std::move(res.witness);
    cert.boxes_processed = res.boxes_processed;
    cert.max_depth = res.max_depth;
    cert.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return cert;
}

/// Certify that the closure of the sublevel set {V <= c} stays away from the
/// domain boundary: V > c strictly on each of the 2n faces of the region.
inline Certificate verify_sublevel_separation(const Expr& value, double c, const Box& region,
                                              const BnbConfig& cfg) {
    if (!(c > 0.0)) throw std::invalid_argument("verify_sublevel_separation: c must be positive");
    const auto t0 = std::chrono::steady_clock::now();
    Certificate cert;
    cert.mode = "sublevel_sep";
    cert.epsilon = c; // the certified level re-uses the scalar slot
    const Expr goal = ex::constant(c) - value;
    const BoxTest test = detail::make_goal_test(goal, /*strict=*/true);
    cert.status = Verdict::Certified;
    for (int dim = 0; dim < region.n() && cert.status == Verdict::Certified; ++dim) {
        for (int side = 0; side < 2; ++side) {
            Box face = region;
            const double v = side == 0 ? region.dims[static_cast<size_t>(dim)].lo
                                       : region.dims[static_cast<size_t>(dim)].hi;
            face.dims[static_cast<size_t>(dim)] = Interval(v);
            BnbResult res = detail::bnb_run({{face, 0}}, test, nullptr, cfg, false);
            cert.boxes_processed += res.boxes_processed;
            cert.max_depth = std::max(cert.max_depth, res.max_depth);
            if (res.verdict != Verdict::Certified) {
                cert.status = res.verdict;
                cert.witness = std::move(res.witness);
                break;
            }
        }
    }
    cert.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return cert;
}

/// Certify local positive definiteness: V(x) >= beta ||x||^2 on the bounding
/// box of B_rho_pd, with beta = lambda_min(Hessian of V at 0) / 4 (so the
/// certified margin keeps half the curvature in reserve against higher-order
/// terms). Requires the Hessian at the origin to be positive definite.
inline Certificate verify_local_pd(const Expr& value, int n, double rho_pd, const BnbConfig& cfg) {
    if (!(rho_pd > 0.0)) throw std::invalid_argument("verify_local_pd: rho_pd must be positive");
    const auto t0 = std::chrono::steady_clock::now();
    Certificate cert;
    cert.mode = "local_pd";
    cert.rho = rho_pd;

    const std::vector<double> zero(static_cast<size_t>(n), 0.0);
    const Dual2<double> d0 = eval_dual2(value, zero);
    Eigen::MatrixXd H0(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) H0(i, j) = d0.hess(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H0, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff();
    if (lmin <= 0.0) {
        cert.status = Verdict::Refuted;
        cert.note = "Hessian at the origin is not positive definite";
        cert.wall_time =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return cert;
    }
    const double beta = 0.25 * lmin;
    cert.alpha = beta;

    const Expr h = value - ex::constant(beta) * detail::norm_sq_expr(n);
    BnbResult res =
        detail::prove_nonneg_from_origin(h, Box::cube(n, -rho_pd, rho_pd), cfg);
    cert.status = res.verdict;
    cert.witness = std::move(res.witness);
    cert.boxes_processed = res.boxes_processed;
    cert.max_depth = res.max_depth;
    cert.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return cert;
}

} // namespace pdecert
