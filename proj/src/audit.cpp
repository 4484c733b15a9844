#include "hmg/audit.hpp"

#include "hmg/averaged.hpp"
#include "hmg/stats.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <optional>
#include <cmath>
#include <numbers>

namespace hmg {

std::string_view to_string(AuditStatus s) {
    switch (s) {
        case AuditStatus::verified_sampled: return "verified-sampled";
        case AuditStatus::closed_form: return "closed-form";
        case AuditStatus::violated: return "violated";
        case AuditStatus::unchecked: return "unchecked";
    }
    return "unknown";
}

const AuditEntry& AssumptionReport::at(const std::string& id) const {
    for (const auto& e : entries)
        if (e.id == id) return e;
    throw InvalidArgument("audit", "no entry " + id);
}

bool AssumptionReport::any_violated() const {
    return std::any_of(entries.begin(), entries.end(),
                       [](const AuditEntry& e) { return e.status == AuditStatus::violated; });
}

nlohmann::json AssumptionReport::to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : entries)
        j.push_back({{"id", e.id},
                     {"status", std::string(to_string(e.status))},
                     {"residual", e.residual},
                     {"witness", e.witness},
                     {"trend", e.trend},
                     {"note", e.note}});
    return j;
}

namespace {

// Tracks the worst violation of `observed <= bound` and where it happened.
struct Violation {
    double amount = 0.0;
    bool hit = false;
    std::vector<double> witness;

    void check(double observed, double bound, const std::vector<double>& at, double slack = 0.0) {
        const double excess = observed - bound;
        if (excess > slack && (!hit || excess > amount)) {
            amount = excess;
            hit = true;
            witness = at;
        }
    }

    AuditEntry entry(std::string id, AuditStatus ok_status, std::string note) const {
        AuditEntry e;
        e.id = std::move(id);
        e.status = hit ? AuditStatus::violated : ok_status;
        e.residual = hit ? amount : 0.0;
        e.witness = witness;
        e.note = std::move(note);
        return e;
    }
};

// phi, b_i, sigma_ii at the unscaled point.
std::vector<double> a_functions(const CoefficientFamily& fam, double x1, std::span<const double> x2) {
    double phi = 0.0;
    SmallVec b, s;
    fam.forward_coefficients(x1, x2, phi, b, s);
    std::vector<double> g{phi};
    for (Eigen::Index i = 0; i < b.size(); ++i) g.push_back(b[i]);
    for (Eigen::Index i = 0; i < s.size(); ++i) g.push_back(s[i]);
    return g;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Running averages of all rho-weighted products at +-|x1| magnitudes.
// Returns [side][magnitude][component].
std::array<std::vector<std::vector<double>>, 2> running_products(const CoefficientFamily& fam,
                                                                 const CoefficientFamily::ProductPlan& plan,
                                                                 const std::vector<double>& mags) {
    const std::size_t m = plan.n_points * fam.product_count(plan.ys.size());
    const VectorIntegrand g = [&](double u, std::span<double> out) { fam.rho_products(u, plan, out); };
    std::array<std::vector<std::vector<double>>, 2> out;
    for (int s = 0; s < 2; ++s) {
        const double sign = s == 1 ? 1.0 : -1.0;
        std::vector<double> cum(m, 0.0);
        double prev = 0.0;
        for (double x : mags) {
            QuadratureOptions q;
            q.rel_tol = 1e-10;
            q.panel = 20.0 * std::numbers::pi;
            q.points = 61;
            const auto part = integrate_vec(g, m, sign * prev, sign * x, q);
            std::vector<double> avg(m);
            for (std::size_t k = 0; k < m; ++k) {
                cum[k] += part[k].value;
                avg[k] = cum[k] / (sign * x);
            }
            out[static_cast<std::size_t>(s)].push_back(std::move(avg));
            prev = x;
        }
    }
    return out;
}

}  // namespace

AssumptionReport audit_assumptions(const CoefficientFamily& fam, const SampleSpec& spec) {
    const int d = fam.d();
    const auto du = static_cast<std::size_t>(d);
    if (spec.lo.size() != du + 1 || spec.hi.size() != du + 1)
        throw InvalidArgument("audit", "sample box must have dimension d + 1");
    for (std::size_t i = 0; i <= du; ++i)
        if (!(spec.hi[i] >= spec.lo[i])) throw InvalidArgument("audit", "sample box is empty");
    const DeclaredBounds& B = fam.bounds();
    const AuditStatus sampled = AuditStatus::verified_sampled;

    // Sample points (x1, x2, y).
    std::vector<std::vector<double>> pts;
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        const auto h = halton_point(i, du + 2, spec.seed);
        std::vector<double> p(du + 2);
        for (std::size_t k = 0; k <= du; ++k) p[k] = spec.lo[k] + (spec.hi[k] - spec.lo[k]) * h[k];
        p[du + 1] = spec.y_lo + (spec.y_hi - spec.y_lo) * h[du + 1];
        pts.push_back(std::move(p));
    }
    auto x2_of = [&](const std::vector<double>& p) { return std::span<const double>(p.data() + 1, du); };
    auto xpt = [&](const std::vector<double>& p) { return std::vector<double>(p.begin(), p.begin() + d + 1); };

    AssumptionReport rep;

    // (A1) sampled Lipschitz quotients: perturbed pairs and consecutive samples.
    {
        Violation v;
        double scale = 0.0;
        for (std::size_t k = 0; k <= du; ++k) scale = std::max(scale, spec.hi[k] - spec.lo[k]);
        const double delta = 1e-4 * std::max(scale, 1.0);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const auto dir = halton_point(i, du + 1, spec.seed ^ 0x5bd1e995ULL);
            std::vector<double> q = xpt(pts[i]);
            double nrm = 0.0;
            for (std::size_t k = 0; k <= du; ++k) nrm += (2 * dir[k] - 1) * (2 * dir[k] - 1);
            nrm = std::sqrt(nrm);
            if (nrm == 0.0) continue;
            for (std::size_t k = 0; k <= du; ++k) q[k] += delta * (2 * dir[k] - 1) / nrm;
            const auto ga = a_functions(fam, pts[i][0], x2_of(pts[i]));
            const auto gb = a_functions(fam, q[0], std::span<const double>(q.data() + 1, du));
            v.check(max_abs_diff(ga, gb) / delta, B.lipschitz, xpt(pts[i]), 1e-9 * std::max(1.0, B.lipschitz));
            if (i + 1 < pts.size()) {
                double dist = 0.0;
                for (std::size_t k = 0; k <= du; ++k) dist += std::pow(pts[i + 1][k] - pts[i][k], 2);
                dist = std::sqrt(dist);
                if (dist > 0.0) {
                    const auto gc = a_functions(fam, pts[i + 1][0], x2_of(pts[i + 1]));
                    v.check(max_abs_diff(ga, gc) / dist, B.lipschitz, xpt(pts[i]), 1e-9 * std::max(1.0, B.lipschitz));
                }
            }
        }
        rep.entries.push_back(v.entry("A1", sampled, "Lipschitz quotients of phi, b1, sigma1"));
    }

    // (A2) x2 derivatives up to second order by central differences.
    if (B.smooth_in_x2) {
        Violation v;
        const double h = 1e-3;
        for (const auto& p : pts) {
            const auto g0 = a_functions(fam, p[0], x2_of(p));
            for (std::size_t j = 0; j < du; ++j) {
                std::vector<double> xp(x2_of(p).begin(), x2_of(p).end()), xm = xp;
                xp[j] += h;
                xm[j] -= h;
                const auto gp = a_functions(fam, p[0], xp);
                const auto gm = a_functions(fam, p[0], xm);
                for (std::size_t c = 0; c < g0.size(); ++c) {
                    v.check(std::abs(gp[c] - gm[c]) / (2 * h), B.x2_first, xpt(p), 1e-6);
                    v.check(std::abs(gp[c] - 2 * g0[c] + gm[c]) / (h * h), B.x2_second, xpt(p), 1e-4);
                }
            }
        }
        rep.entries.push_back(v.entry("A2", sampled, "first and second x2 derivatives of phi, b1, sigma1"));
    } else {
        AuditEntry e;
        e.id = "A2";
        e.status = AuditStatus::unchecked;
        e.note = "piecewise-linear table has no second x2 derivatives";
        rep.entries.push_back(e);
    }

    // (A3) ellipticity, bounds on a00 and growth of (a, b).
    {
        Violation v;
        bool degenerate = false;
        std::vector<double> degenerate_at;
        if (!(B.c1 > 0.0) || !(B.lambda > 0.0)) {
            // Degenerate ellipticity: witness is the smallest a00 seen, table nodes included.
            std::vector<std::vector<double>> cand;
            for (const auto& p : pts) cand.push_back(xpt(p));
            if (const auto& t = fam.table()) {
                for (std::size_t i = 0; i < t->n1; ++i)
                    for (std::size_t j = 0; j < t->n2; ++j) {
                        const auto lerp = [](double a, double b, std::size_t k, std::size_t n) {
                            return n > 1 ? a + (b - a) * static_cast<double>(k) / static_cast<double>(n - 1) : a;
                        };
                        std::vector<double> at(du + 1, 0.0);
                        at[0] = lerp(t->x1_min, t->x1_max, i, t->n1);
                        at[1] = lerp(t->x2_min, t->x2_max, j, t->n2);
                        cand.push_back(std::move(at));
                    }
            }
            double worst = std::numeric_limits<double>::infinity();
            std::vector<double> where;
            for (const auto& at : cand) {
                const auto c = fam.eval(at[0], std::span<const double>(at.data() + 1, du));
                const double m = std::min(c.a00, c.a1.diagonal().minCoeff());
                if (m < worst) {
                    worst = m;
                    where = at;
                }
            }
            v.hit = true;
            v.amount = std::max(0.0, -worst);
            degenerate = true;
            degenerate_at = where;
        }
        for (const auto& p : pts) {
            const auto c = fam.eval(p[0], x2_of(p));
            const auto at = xpt(p);
            const double tol = 1e-12 * std::max(1.0, std::abs(c.a00));
            v.check(B.c1 - c.a00, 0.0, at, tol);
            v.check(c.a00 - B.c2, 0.0, at, tol);
            const SmallMat ss = c.sigma1 * c.sigma1.transpose();
            Eigen::SelfAdjointEigenSolver<SmallMat> es(ss);
            v.check(B.lambda - es.eigenvalues().minCoeff(), 0.0, at, 1e-12);
            double x2n = 0.0;
            for (double x : x2_of(p)) x2n += x * x;
            const double growth = std::sqrt(c.a00 * c.a00 + c.a1.squaredNorm()) + c.b1.squaredNorm();
            v.check(growth, B.c3 * (1.0 + x2n), at, 1e-12 * std::max(1.0, growth));
        }
        if (degenerate) v.witness = degenerate_at;
        rep.entries.push_back(v.entry("A3", sampled, "lambda, C1 <= a00 <= C2, |a| + |b|^2 <= C3 (1 + |x2|^2)"));
    }

    // (B1)-(B3), (C2): Cesaro limits and their remainders.
    std::vector<double> ys{spec.y_lo, 0.5 * (spec.y_lo + spec.y_hi), spec.y_hi};
    if (fam.x1_independent()) {
        for (const char* id : {"B1", "B2", "B3", "C2"}) {
            AuditEntry e;
            e.id = id;
            e.status = AuditStatus::closed_form;
            e.note = "no fast-variable dependence: running averages equal their limits";
            rep.entries.push_back(e);
        }
    } else {
        const std::size_t n_b = std::min<std::size_t>(spec.n_samples, 12);
        std::vector<double> points;
        std::vector<double> nodes;
        for (std::size_t i = 0; i < n_b; ++i) {
            for (double x : x2_of(pts[i])) points.push_back(x);
            nodes.push_back(pts[i][1]);
        }
        std::optional<AveragedModel> lim;
        std::string lim_note;
        if (fam.has_closed_form()) {
            lim = AveragedModel::from_template(*fam.template_params(), d);
        } else {
            try {
                AveragingOptions o;
                o.x2_nodes = nodes;
                lim = build_averaged(fam, ys, 1e-4, o);
            } catch (const Error& err) {
                lim_note = err.what();
            }
        }
        if (!lim) {
            for (const char* id : {"B1", "B2", "B3", "C2"}) {
                AuditEntry e;
                e.id = id;
                e.status = AuditStatus::violated;
                e.note = "Cesaro limits not established: " + lim_note;
                rep.entries.push_back(e);
            }
        } else {
            const auto plan = fam.make_plan(points, ys);
            const std::size_t stride = fam.product_count(ys.size());
            const std::size_t f_off = stride - ys.size();
            const auto run = running_products(fam, plan, spec.remainder_x1);
            const auto nm = spec.remainder_x1.size();

            std::vector<double> alpha(nm, 0.0), beta(nm, 0.0);
            double b1 = 0.0, b2 = 0.0;
            std::vector<double> alpha_w, beta_w, b1_w, b2_w;
            for (int s = 0; s < 2; ++s) {
                const Side side = s == 1 ? Side::plus : Side::minus;
                for (std::size_t p = 0; p < n_b; ++p) {
                    const std::span<const double> x2(points.data() + p * du, du);
                    const BranchValues br = lim->branch(x2, side);
                    std::vector<double> limv{br.rho};
                    for (std::size_t i = 0; i < du; ++i) limv.push_back(br.rho_b[static_cast<Eigen::Index>(i)]);
                    for (std::size_t i = 0; i < du; ++i)
                        for (std::size_t j = i; j < du; ++j)
                            limv.push_back(br.rho_a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
                    for (double y : ys) limv.push_back(lim->rho_f(x2, y, side));
                    double x2n = 0.0;
                    for (double x : x2) x2n += x * x;
                    for (std::size_t k = 0; k < nm; ++k) {
                        const double x1 = (s == 1 ? 1.0 : -1.0) * spec.remainder_x1[k];
                        const auto& avg = run[static_cast<std::size_t>(s)][k];
                        for (std::size_t c = 0; c < stride; ++c) {
                            const double r = avg[p * stride + c] - limv[c];
                            std::vector<double> at{x1};
                            at.insert(at.end(), x2.begin(), x2.end());
                            if (c < f_off) {
                                const double a = std::abs(r) / (1.0 + x2n);
                                if (a > alpha[k]) {
                                    alpha[k] = a;
                                    if (k + 1 == nm) alpha_w = at;
                                }
                                if (k + 1 == nm) {
                                    if (c == 0 && std::abs(r) > b1) {
                                        b1 = std::abs(r);
                                        b1_w = at;
                                    }
                                    if (c > 0 && std::abs(r) > b2) {
                                        b2 = std::abs(r);
                                        b2_w = at;
                                    }
                                }
                            } else {
                                const double y = ys[c - f_off];
                                const double b = std::abs(r) / (1.0 + x2n + y * y);
                                if (b > beta[k]) {
                                    beta[k] = b;
                                    if (k + 1 == nm) {
                                        beta_w = at;
                                        beta_w.push_back(y);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            const AuditStatus lim_status = fam.has_closed_form() ? AuditStatus::closed_form : sampled;
            const std::string at_x = "at |x1| = " + std::to_string(spec.remainder_x1.back());
            AuditEntry e1{"B1", lim_status, b1, b1_w, {}, "sup |running average of rho - rho+-| " + at_x};
            AuditEntry e2{"B2", lim_status, b2, b2_w, {}, "sup |running average - limit| for rho b, rho a " + at_x};
            rep.entries.push_back(e1);
            rep.entries.push_back(e2);
            auto trend_entry = [&](const char* id, const std::vector<double>& t, const std::vector<double>& w,
                                   const char* what) {
                AuditEntry e;
                e.id = id;
                e.trend = t;
                e.residual = t.back();
                bool dec = true;
                for (std::size_t k = 1; k < t.size(); ++k) dec = dec && t[k] <= t[k - 1];
                e.status = dec ? sampled : AuditStatus::violated;
                if (!dec) e.witness = w;
                e.note = std::string(what) + " sup over sampled slow points; decay trend, not a proof";
                return e;
            };
            rep.entries.push_back(trend_entry("B3", alpha, alpha_w, "remainder alpha"));
            rep.entries.push_back(trend_entry("C2", beta, beta_w, "remainder beta"));
        }
    }

    // (C1) bounds on f and its y derivatives; bounded H.
    {
        Violation v;
        const double h = 1e-3;
        for (const auto& p : pts) {
            const double y = p[du + 1];
            const auto f = [&](double yy) { return fam.driver(p[0], x2_of(p), yy); };
            const double f0 = f(y), fp = f(y + h), fm = f(y - h);
            v.check(std::abs(f0), B.f_bound, p, 1e-12);
            v.check(std::abs(fp - fm) / (2 * h), B.f_y_lipschitz, p, 1e-6);
            v.check(std::abs(fp - 2 * f0 + fm) / (h * h), B.f_y_second, p, 1e-4);
            v.check(std::abs(fam.terminal()(p[0], x2_of(p))), B.h_bound, xpt(p), 1e-12);
        }
        rep.entries.push_back(v.entry("C1", sampled, "|f|, |f_y|, |f_yy| and |H| against declared bounds"));
    }

    // (C3) first and second (x2, y) derivatives of rho f.
    {
        Violation v;
        const double h = 1e-3;
        for (const auto& p : pts) {
            const double y = p[du + 1];
            std::vector<double> x2(x2_of(p).begin(), x2_of(p).end());
            const auto rf = [&](const std::vector<double>& xx, double yy) { return fam.rho_driver(p[0], xx, yy); };
            const double c = rf(x2, y);
            v.check(std::abs(rf(x2, y + h) - rf(x2, y - h)) / (2 * h), B.rho_f_derivative, p, 1e-6);
            v.check(std::abs(rf(x2, y + h) - 2 * c + rf(x2, y - h)) / (h * h), B.rho_f_derivative, p, 1e-4);
            for (std::size_t j = 0; j < du; ++j) {
                auto xp = x2, xm = x2;
                xp[j] += h;
                xm[j] -= h;
                v.check(std::abs(rf(xp, y) - rf(xm, y)) / (2 * h), B.rho_f_derivative, p, 1e-6);
                if (B.smooth_in_x2)
                    v.check(std::abs(rf(xp, y) - 2 * c + rf(xm, y)) / (h * h), B.rho_f_derivative, p, 1e-4);
            }
        }
        rep.entries.push_back(v.entry("C3", sampled, "derivatives of rho f in (x2, y) up to second order"));
    }

    std::sort(rep.entries.begin(), rep.entries.end(),
              [](const AuditEntry& a, const AuditEntry& b) { return a.id < b.id; });
    return rep;
}

}  // namespace hmg
