#include "hmg/corrector.hpp"

#include "hmg/quadrature.hpp"
#include "hmg/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace hmg {

namespace {

constexpr double kPanel = 20.0 * std::numbers::pi;

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

}  // namespace

CorrectorField::CorrectorField(const CoefficientFamily& fam, const AveragedModel& avg, double eps)
    : fam_(std::make_shared<const CoefficientFamily>(fam)),
      avg_(std::make_shared<const AveragedModel>(avg)),
      eps_(eps) {
    if (!(eps > 0.0) || !std::isfinite(eps)) throw InvalidArgument("corrector", "eps must be positive");
    if (fam.d() != avg.d()) throw InvalidArgument("corrector", "family and averaged model differ in dimension");
}

std::array<double, 4> CorrectorField::integrate_span(double u0, double u1, std::span<const double> x2,
                                                     double y) const {
    const VectorIntegrand g = [&](double u, std::span<double> out) {
        const double r = fam_->rho(u, x2);
        const double rf = fam_->rho_driver(u, x2, y);
        out[0] = r;
        out[1] = rf;
        out[2] = u * r;
        out[3] = u * rf;
    };
    QuadratureOptions q;
    q.rel_tol = 1e-12;
    q.panel = kPanel;
    q.points = 61;
    const auto res = integrate_vec(g, 4, u0, u1, q);
    std::array<double, 4> out{};
    for (std::size_t i = 0; i < 4; ++i) {
        if (!res[i].ok) throw NumericalError("corrector", "quadrature failure");
        out[i] = res[i].value;
    }
    return out;
}

std::array<double, 4> CorrectorField::moments(double x1, std::span<const double> x2, double y) const {
    const double U = x1 / eps_;
    if (U == 0.0) return {};
    const double sign = U > 0.0 ? 1.0 : -1.0;
    const auto k = static_cast<std::size_t>(std::floor(std::abs(U) / kPanel));
    std::array<double, 4> base{};
    if (k > 0) {
        Key key(x2.begin(), x2.end());
        key.push_back(y);
        std::lock_guard<std::mutex> lock(mu_);
        auto& cum = sign > 0 ? cache_[key].plus : cache_[key].minus;
        while (cum.size() < k) {
            const double i = static_cast<double>(cum.size());
            auto piece = integrate_span(sign * i * kPanel, sign * (i + 1.0) * kPanel, x2, y);
            if (!cum.empty())
                for (std::size_t c = 0; c < 4; ++c) piece[c] += cum.back()[c];
            cum.push_back(piece);
        }
        base = cum[k - 1];
    }
    const auto tail = integrate_span(sign * static_cast<double>(k) * kPanel, U, x2, y);
    for (std::size_t c = 0; c < 4; ++c) base[c] += tail[c];
    return base;
}

double CorrectorField::rho_g(double x1, std::span<const double> x2, double y) const {
    const double u = x1 / eps_;
    return fam_->rho_driver(u, x2, y) - fam_->rho(u, x2) * avg_->f_bar(x1, x2, y);
}

double CorrectorField::second_difference(double x1, std::span<const double> x2, double y, double h) const {
    if (!(h > 0.0)) throw InvalidArgument("corrector", "h must be positive");
    if (x1 - h < 0.0 && x1 + h > 0.0) throw InvalidArgument("corrector", "second difference straddles x1 = 0");
    QuadratureOptions q;
    q.rel_tol = 1e-12;
    const auto left = integrate([&](double t) { return (h - (x1 - t)) * rho_g(t, x2, y); }, x1 - h, x1, q);
    const auto right = integrate([&](double t) { return (h - (t - x1)) * rho_g(t, x2, y); }, x1, x1 + h, q);
    if (!left.ok || !right.ok) throw NumericalError("corrector", "quadrature failure");
    return left.value + right.value;
}

double corrector_dx1(const CorrectorField& field, double x1, std::span<const double> x2, double y) {
    if (x1 == 0.0) return 0.0;
    const auto m = field.moments(x1, x2, y);
    const double c = field.averaged().f_bar(x1, x2, y);
    return field.eps() * (m[1] - c * m[0]);
}

double corrector_value(const CorrectorField& field, double x1, std::span<const double> x2, double y) {
    if (x1 == 0.0) return 0.0;
    const auto m = field.moments(x1, x2, y);
    const double c = field.averaged().f_bar(x1, x2, y);
    const double e = field.eps();
    return e * (x1 * (m[1] - c * m[0]) - e * (m[3] - c * m[2]));
}

ResidualReport residual_check(const CorrectorField& field, const ResidualSample& sample) {
    const auto d = static_cast<std::size_t>(field.family().d());
    if (sample.lo.size() != d + 1 || sample.hi.size() != d + 1)
        throw InvalidArgument("residual_check", "sample box must have dimension d + 1");
    const double eps = field.eps();
    const double h = sample.h_factor * eps;
    ResidualReport rep;
    rep.n_points = sample.n_points;
    for (std::size_t i = 0; i < sample.n_points; ++i) {
        const auto u = halton_point(i, d + 2, sample.seed);
        std::vector<double> x(d + 1);
        for (std::size_t c = 0; c <= d; ++c) x[c] = sample.lo[c] + (sample.hi[c] - sample.lo[c]) * u[c];
        const double y = sample.y_lo + (sample.y_hi - sample.y_lo) * u[d + 1];
        const std::span<const double> x2(x.data() + 1, d);
        // One-sided within |x1| < h so the stencil stays on one side of 0.
        double centre = x[0];
        if (std::abs(x[0]) < h) centre = x[0] + (x[0] >= 0.0 ? h : -h);
        const double d2 = field.second_difference(centre, x2, y, h) / (h * h);
        const double fast = x[0] / eps;
        const double g = field.family().driver(fast, x2, y) - field.averaged().f_bar(x[0], x2, y);
        const double res = std::abs(field.family().a00(fast, x2) * d2 - g);
        const double tol = std::max(1e-4, 1e-3 * std::abs(g));
        rep.max_residual = std::max(rep.max_residual, res);
        if (rep.witness.empty() || res / tol > rep.max_ratio) {
            rep.max_ratio = res / tol;
            rep.witness = x;
            rep.witness.push_back(y);
        }
    }
    rep.pass = rep.max_ratio <= 1.0;
    return rep;
}

std::string DecayTable::to_csv() const {
    std::string out = "eps,sup_V,sup_beta,sup_alpha,grid_spec\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,", r.eps, r.sup_V, r.sup_beta, r.sup_alpha);
        out += buf;
        out += grid_spec;
        out += '\n';
    }
    return out;
}

DecayBox reference_box(int d) {
    if (d < 1) throw InvalidArgument("reference_box", "d must be at least 1");
    DecayBox box;
    box.lo.assign(static_cast<std::size_t>(d) + 1, -1.0);
    box.hi.assign(static_cast<std::size_t>(d) + 1, 1.0);
    box.lo[0] = -2.0;
    box.hi[0] = 2.0;
    return box;
}

DecayTable decay_table(const CoefficientFamily& fam, const AveragedModel& avg, std::span<const double> eps_list,
                       const DecayBox& box) {
    const auto d = static_cast<std::size_t>(fam.d());
    if (box.lo.size() != d + 1 || box.hi.size() != d + 1)
        throw InvalidArgument("decay_table", "box must have dimension d + 1");
    if (box.n_grid < 2) throw InvalidArgument("decay_table", "n_grid must be at least 2");
    for (std::size_t i = 1; i < eps_list.size(); ++i)
        if (!(eps_list[i] < eps_list[i - 1])) throw InvalidArgument("decay_table", "eps_list must be decreasing");
    const std::size_t n = box.n_grid;
    auto axis = [n](double lo, double hi, std::size_t i) {
        return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    };

    DecayTable table;
    char spec[256];
    std::snprintf(spec, sizeof(spec), "n=%zu;x1=[%g:%g];x2_0=[%g:%g];y=[%g:%g]", n, box.lo[0], box.hi[0], box.lo[1],
                  box.hi[1], box.y_lo, box.y_hi);
    table.grid_spec = spec;

    for (double eps : eps_list) {
        const CorrectorField field(fam, avg, eps);
        const double cut = std::sqrt(eps);
        const std::size_t total = n * n * n;
        const std::size_t grain = 256;
        std::vector<std::array<double, 4>> chunk((total + grain - 1) / grain, std::array<double, 4>{});
        parallel_for(total, grain, [&](std::size_t lo, std::size_t hi) {
            std::array<double, 4> best{};
            std::vector<double> x2(d);
            for (std::size_t c = 1; c < d; ++c) x2[c] = 0.5 * (box.lo[c + 1] + box.hi[c + 1]);
            for (std::size_t idx = lo; idx < hi; ++idx) {
                const std::size_t i = idx / (n * n), j = (idx / n) % n, k = idx % n;
                const double x1 = axis(box.lo[0], box.hi[0], i);
                x2[0] = axis(box.lo[1], box.hi[1], j);
                const double y = axis(box.y_lo, box.y_hi, k);
                if (x1 == 0.0) continue;
                const auto m = field.moments(x1, x2, y);
                const double fb = avg.f_bar(x1, x2, y);
                const double dv = eps * (m[1] - fb * m[0]);
                const double v = eps * (x1 * (m[1] - fb * m[0]) - eps * (m[3] - fb * m[2]));
                best[0] = std::max(best[0], std::abs(v));
                best[1] = std::max(best[1], std::abs(dv / x1));
                if (std::abs(x1) >= cut) {
                    const Side s = side_of(x1);
                    const double U = x1 / eps;
                    const double x2n = norm2(x2);
                    best[2] = std::max(best[2], std::abs(m[1] / U - avg.rho_f(x2, y, s)) / (1.0 + x2n + y * y));
                    best[3] = std::max(best[3], std::abs(m[0] / U - avg.rho(x2, s)) / (1.0 + x2n));
                }
            }
            chunk[lo / grain] = best;
        });
        DecayRow row;
        row.eps = eps;
        for (const auto& b : chunk) {
            row.sup_V = std::max(row.sup_V, b[0]);
            row.sup_F = std::max(row.sup_F, b[1]);
            row.sup_beta = std::max(row.sup_beta, b[2]);
            row.sup_alpha = std::max(row.sup_alpha, b[3]);
        }
        table.rows.push_back(row);
    }
    for (std::size_t i = 1; i < table.rows.size(); ++i) {
        const auto& a = table.rows[i - 1];
        const auto& b = table.rows[i];
        if (b.sup_V > 1.05 * a.sup_V) table.v_nonincreasing = false;
        if (!(b.sup_beta < a.sup_beta) && a.sup_beta > 0.0) table.beta_decreasing = false;
    }
    return table;
}

}  // namespace hmg
