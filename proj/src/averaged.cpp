#include "hmg/averaged.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

namespace hmg {

// -- Cesaro engine ---------------------------------------------------------------

std::vector<double> CesaroSchedule::horizons() const {
    validate();
    std::vector<double> h(static_cast<std::size_t>(n_horizons));
    for (int i = 0; i < n_horizons; ++i) h[static_cast<std::size_t>(i)] = x0 * std::pow(ratio, i);
    return h;
}

void CesaroSchedule::validate() const {
    if (!(x0 > 0.0) || !(ratio > 1.0) || n_horizons < 4)
        throw InvalidArgument("cesaro_average", "schedule needs x0 > 0, ratio > 1 and at least 4 horizons");
}

namespace {

struct SideRun {
    std::vector<double> limit, spread;
    std::vector<std::vector<double>> running;
    bool converged = false;
    double horizon = 0.0;
};

SideRun run_side(const VectorIntegrand& g, std::size_t m, const std::vector<double>& horizons, double tol,
                 double sign) {
    SideRun run;
    std::vector<double> cum(m, 0.0);
    double prev = 0.0;
    for (std::size_t i = 0; i < horizons.size(); ++i) {
        const double x = horizons[i];
        QuadratureOptions q;
        q.rel_tol = tol / 10.0;
        q.abs_tol = tol / 10.0 * (x - prev);
        q.panel = 20.0 * std::numbers::pi;
        q.points = 61;
        const auto part = integrate_vec(g, m, sign * prev, sign * x, q);
        std::vector<double> avg(m);
        for (std::size_t k = 0; k < m; ++k) {
            if (!part[k].ok || !std::isfinite(part[k].value))
                throw NumericalError("cesaro_average", "quadrature failed on [" + std::to_string(sign * prev) +
                                                           ", " + std::to_string(sign * x) + "]");
            cum[k] += part[k].value;
            avg[k] = cum[k] / (sign * x);
        }
        run.running.push_back(std::move(avg));
        run.horizon = x;
        prev = x;
        if (run.running.size() >= 3) {
            const auto n = run.running.size();
            run.spread.assign(m, 0.0);
            double worst = 0.0;
            for (std::size_t k = 0; k < m; ++k) {
                const double a = run.running[n - 1][k], b = run.running[n - 2][k], c = run.running[n - 3][k];
                run.spread[k] = std::max({a, b, c}) - std::min({a, b, c});
                worst = std::max(worst, run.spread[k]);
            }
            if (worst <= tol) {
                run.converged = true;
                break;
            }
        }
    }
    run.limit = run.running.back();
    return run;
}

}  // namespace

CesaroVectorResult cesaro_average_vec(const VectorIntegrand& g, std::size_t m, const CesaroSchedule& schedule,
                                      double tol) {
    if (!(tol > 0.0)) throw InvalidArgument("cesaro_average", "tol must be positive");
    const auto horizons = schedule.horizons();
    const SideRun plus = run_side(g, m, horizons, tol, 1.0);
    const SideRun minus = run_side(g, m, horizons, tol, -1.0);

    CesaroVectorResult r;
    r.plus = plus.limit;
    r.minus = minus.limit;
    r.residual_plus = plus.spread;
    r.residual_minus = minus.spread;
    r.converged = plus.converged && minus.converged;
    for (double s : plus.spread) r.residual = std::max(r.residual, s);
    for (double s : minus.spread) r.residual = std::max(r.residual, s);
    r.horizon_plus = plus.horizon;
    r.horizon_minus = minus.horizon;
    return r;
}

CesaroResult cesaro_average(const ScalarIntegrand& g, const CesaroSchedule& schedule, double tol) {
    if (!(tol > 0.0)) throw InvalidArgument("cesaro_average", "tol must be positive");
    const VectorIntegrand gv = [&g](double t, std::span<double> out) { out[0] = g(t); };
    const auto horizons = schedule.horizons();
    const SideRun plus = run_side(gv, 1, horizons, tol, 1.0);
    const SideRun minus = run_side(gv, 1, horizons, tol, -1.0);

    CesaroResult r;
    r.g_plus = plus.limit[0];
    r.g_minus = minus.limit[0];
    r.converged = plus.converged && minus.converged;
    r.residual = std::max(plus.spread[0], minus.spread[0]);
    for (const auto& v : plus.running) r.running_plus.push_back(v[0]);
    for (const auto& v : minus.running) r.running_minus.push_back(v[0]);
    return r;
}

double running_average(const ScalarIntegrand& g, double x, double rel_tol) {
    if (x == 0.0) throw InvalidArgument("running_average", "x must be nonzero");
    QuadratureOptions q;
    q.rel_tol = rel_tol;
    q.panel = 20.0 * std::numbers::pi;
    q.points = 61;
    const auto r = integrate(g, 0.0, x, q);
    if (!r.ok) throw NumericalError("running_average", "quadrature failed");
    return r.value / x;
}

// -- linear algebra ----------------------------------------------------------------

SmallMat spd_sqrt(const SmallMat& m, const char* stage) {
    const auto n = m.rows();
    bool diagonal = true;
    for (Eigen::Index i = 0; i < n && diagonal; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j && m(i, j) != 0.0) {
                diagonal = false;
                break;
            }
    if (diagonal) {
        SmallMat r = SmallMat::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!(m(i, i) > 0.0)) throw NumericalError(stage, "matrix is not positive definite");
            r(i, i) = std::sqrt(m(i, i));
        }
        return r;
    }
    Eigen::SelfAdjointEigenSolver<SmallMat> es(0.5 * (m + m.transpose()));
    if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0))
        throw NumericalError(stage, "matrix is not positive definite");
    return es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

std::vector<double> default_y_grid() {
    std::vector<double> y(17);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = -4.0 + 0.5 * static_cast<double>(i);
    return y;
}

// -- AveragedModel -------------------------------------------------------------------

struct AveragedModel::Numeric {
    std::vector<double> x2;
    std::vector<double> ys;
    std::size_t stride = 0;
    std::array<std::vector<double>, 2> data;  // [side][node * stride + product]
    std::array<std::vector<MonotoneCubic>, 2> rho_f;

    static std::size_t idx(Side s) { return s == Side::plus ? 1 : 0; }

    // Bracketing nodes and weight for x2_0 (constant outside the node range).
    std::pair<std::size_t, double> locate(double v) const {
        if (x2.size() == 1 || v <= x2.front()) return {0, 0.0};
        if (v >= x2.back()) return {x2.size() - 2, 1.0};
        const auto it = std::upper_bound(x2.begin(), x2.end(), v);
        const auto j = static_cast<std::size_t>(it - x2.begin()) - 1;
        return {j, (v - x2[j]) / (x2[j + 1] - x2[j])};
    }

    double product(Side s, std::span<const double> xv, std::size_t p) const {
        const auto& t = data[idx(s)];
        const auto [j, w] = locate(xv[0]);
        if (x2.size() == 1) return t[p];
        return (1.0 - w) * t[j * stride + p] + w * t[(j + 1) * stride + p];
    }
};

AveragedModel AveragedModel::from_template(const TemplateParams& p, int d, AveragingReport report) {
    AveragedModel m;
    m.d_ = d;
    m.closed_ = p;
    report.closed_form = true;
    m.report_ = std::move(report);
    return m;
}

BranchValues AveragedModel::branch(std::span<const double> x2, Side s) const {
    BranchValues b;
    b.rho_b.resize(d_);
    b.rho_a = SmallMat::Zero(d_, d_);
    if (closed_) {
        const TemplateParams& t = *closed_;
        const double th = std::tanh(x2[0]);
        b.rho = t.rho.limit(s) * (1.0 + t.m_rho * th);
        b.rho_b.setConstant(t.rho_b.limit(s) * (1.0 + t.m_b * th));
        const double ra = t.rho_a.limit(s) * (1.0 + t.m_a * th);
        for (int i = 0; i < d_; ++i) b.rho_a(i, i) = ra;
        return b;
    }
    const auto d = static_cast<std::size_t>(d_);
    std::size_t n = 0;
    b.rho = numeric_->product(s, x2, n++);
    for (std::size_t i = 0; i < d; ++i) b.rho_b[static_cast<Eigen::Index>(i)] = numeric_->product(s, x2, n++);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            const double v = numeric_->product(s, x2, n++);
            b.rho_a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            b.rho_a(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
    return b;
}

double AveragedModel::rho(std::span<const double> x2, Side s) const {
    if (closed_) return closed_->rho.limit(s) * (1.0 + closed_->m_rho * std::tanh(x2[0]));
    return numeric_->product(s, x2, 0);
}

double AveragedModel::rho_f(std::span<const double> x2, double y, Side s) const {
    if (closed_) return closed_->rho_f0.limit(s) + closed_->rho_f1.limit(s) * std::tanh(y);
    const auto& curves = numeric_->rho_f[Numeric::idx(s)];
    if (curves.size() == 1) return curves[0](y);
    const auto [j, w] = numeric_->locate(x2[0]);
    return (1.0 - w) * curves[j](y) + w * curves[j + 1](y);
}

double AveragedModel::f_bar(double x1, std::span<const double> x2, double y) const {
    const Side s = side_of(x1);
    return rho_f(x2, y, s) / rho(x2, s);
}

double AveragedModel::a00_bar(double x1, std::span<const double> x2) const { return 1.0 / rho(x2, side_of(x1)); }

AveragedValues AveragedModel::eval(double x1, std::span<const double> x2) const {
    if (static_cast<int>(x2.size()) != d_) throw InvalidArgument("averaged", "x2 has the wrong dimension");
    AveragedValues v;
    v.side = side_of(x1);
    const BranchValues br = branch(x2, v.side);
    v.rho = br.rho;
    v.a00 = 1.0 / br.rho;
    v.b = SmallVec::Zero(d_ + 1);
    v.b.tail(d_) = br.rho_b / br.rho;
    v.a = SmallMat::Zero(d_ + 1, d_ + 1);
    v.a(0, 0) = v.a00;
    v.a.bottomRightCorner(d_, d_) = br.rho_a / br.rho;
    v.sigma = SmallMat::Zero(d_ + 1, d_ + 1);
    v.sigma(0, 0) = std::sqrt(2.0 * v.a00);
    v.sigma.bottomRightCorner(d_, d_) = spd_sqrt(2.0 * v.a.bottomRightCorner(d_, d_), "averaged");
    return v;
}

void AveragedModel::forward_coefficients(double x1, std::span<const double> x2, double& phi, SmallVec& b1,
                                         SmallMat& sigma1) const {
    const Side s = side_of(x1);
    if (closed_) {
        const TemplateParams& t = *closed_;
        const double th = std::tanh(x2[0]);
        const double inv_rho = 1.0 / (t.rho.limit(s) * (1.0 + t.m_rho * th));
        phi = std::sqrt(2.0 * inv_rho);
        b1.resize(d_);
        b1.setConstant(t.rho_b.limit(s) * (1.0 + t.m_b * th) * inv_rho);
        sigma1 = SmallMat::Zero(d_, d_);
        const double sd = std::sqrt(2.0 * t.rho_a.limit(s) * (1.0 + t.m_a * th) * inv_rho);
        for (int i = 0; i < d_; ++i) sigma1(i, i) = sd;
        return;
    }
    const BranchValues br = branch(x2, s);
    phi = std::sqrt(2.0 / br.rho);
    b1 = br.rho_b / br.rho;
    sigma1 = spd_sqrt(2.0 * br.rho_a / br.rho, "simulate_avg");
}

nlohmann::json AveragedModel::to_json(std::span<const double> x2_points, std::span<const double> ys) const {
    using nlohmann::json;
    json j;
    j["closed_form"] = closed_form();
    j["d"] = d_;
    j["side_convention"] = "minus";
    j["y"] = std::vector<double>(ys.begin(), ys.end());
    j["report"] = {{"converged", report_.converged},
                   {"residual", report_.residual},
                   {"max_deviation", report_.max_deviation},
                   {"tol", report_.tol},
                   {"x2_nodes", report_.x2_nodes},
                   {"y_grid", report_.y_grid},
                   {"schedule",
                    {{"x0", report_.schedule.x0},
                     {"ratio", report_.schedule.ratio},
                     {"n_horizons", report_.schedule.n_horizons}}}};
    for (Side s : {Side::minus, Side::plus}) {
        json rows = json::array();
        for (double v : x2_points) {
            std::vector<double> x2(static_cast<std::size_t>(d_), v);
            const double x1 = s == Side::plus ? 1.0 : -1.0;
            const AveragedValues av = eval(x1, x2);
            json row;
            row["x2"] = v;
            row["rho"] = av.rho;
            row["a00_bar"] = av.a00;
            std::vector<double> b(av.b.data() + 1, av.b.data() + av.b.size());
            row["b_bar"] = b;
            json a = json::array();
            for (int i = 0; i <= d_; ++i) {
                std::vector<double> r;
                for (int k = 0; k <= d_; ++k) r.push_back(av.a(i, k));
                a.push_back(r);
            }
            row["a_bar"] = a;
            std::vector<double> f;
            for (double y : ys) f.push_back(f_bar(x1, x2, y));
            row["f_bar"] = f;
            rows.push_back(row);
        }
        j["branches"][s == Side::plus ? "plus" : "minus"] = rows;
    }
    return j;
}

// -- build_averaged -------------------------------------------------------------------

AveragedModel build_averaged(const CoefficientFamily& fam, std::span<const double> y_grid, double tol,
                             const AveragingOptions& opts) {
    if (y_grid.size() < 2) throw InvalidArgument("build_averaged", "y grid needs at least 2 points");
    for (std::size_t i = 1; i < y_grid.size(); ++i)
        if (!(y_grid[i] > y_grid[i - 1])) throw InvalidArgument("build_averaged", "y grid must be increasing");
    if (!(fam.bounds().c1 > 0.0))
        throw InvalidArgument("build_averaged", "a00 is not bounded below by a positive constant");

    const int d = fam.d();
    const auto du = static_cast<std::size_t>(d);
    std::vector<double> nodes = opts.x2_nodes;
    if (nodes.empty()) {
        if (fam.table()) {
            const TableData& t = *fam.table();
            for (std::size_t j = 0; j < t.n2; ++j)
                nodes.push_back(t.x2_min + (t.x2_max - t.x2_min) * static_cast<double>(j) /
                                               static_cast<double>(t.n2 - 1));
        } else {
            for (int j = 0; j <= 20; ++j) nodes.push_back(-2.0 + 0.2 * j);
        }
    }
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());

    std::vector<double> points;
    for (double v : nodes) points.insert(points.end(), du, v);
    const auto plan = fam.make_plan(points, y_grid);
    const std::size_t stride = fam.product_count(y_grid.size());
    const std::size_t m = nodes.size() * stride;

    const VectorIntegrand g = [&](double u, std::span<double> out) { fam.rho_products(u, plan, out); };
    const auto res = cesaro_average_vec(g, m, opts.schedule, tol);
    if (!res.converged)
        throw NumericalError("build_averaged", "Cesaro averages did not converge within the schedule (residual " +
                                                   std::to_string(res.residual) + ")");

    auto num = std::make_shared<AveragedModel::Numeric>();
    num->x2 = nodes;
    num->ys.assign(y_grid.begin(), y_grid.end());
    num->stride = stride;
    num->data[0] = res.minus;
    num->data[1] = res.plus;
    const std::size_t f_off = stride - y_grid.size();
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t j = 0; j < nodes.size(); ++j) {
            const double* row = num->data[s].data() + j * stride;
            num->rho_f[s].emplace_back(num->ys, std::vector<double>(row + f_off, row + stride));
        }

    AveragedModel numeric;
    numeric.d_ = d;
    numeric.numeric_ = num;
    numeric.report_.converged = true;
    numeric.report_.residual = res.residual;
    numeric.report_.tol = tol;
    numeric.report_.x2_nodes = nodes;
    numeric.report_.y_grid = num->ys;
    numeric.report_.schedule = opts.schedule;

    // Positivity of rho+- and positive definiteness of a_bar at every node.
    for (double v : nodes) {
        std::vector<double> x2(du, v);
        for (Side s : {Side::minus, Side::plus}) {
            const BranchValues br = numeric.branch(x2, s);
            if (!(br.rho > 0.0)) throw NumericalError("build_averaged", "rho limit is not positive");
            spd_sqrt(2.0 * br.rho_a / br.rho, "build_averaged");
        }
    }

    if (!fam.has_closed_form()) return numeric;

    const AveragedModel closed = AveragedModel::from_template(*fam.template_params(), d);
    double dev = 0.0;
    for (double v : nodes) {
        std::vector<double> x2(du, v);
        for (double x1 : {-1.0, 1.0}) {
            const AveragedValues a = numeric.eval(x1, x2);
            const AveragedValues b = closed.eval(x1, x2);
            dev = std::max(dev, std::abs(a.rho - b.rho));
            dev = std::max(dev, (a.b - b.b).cwiseAbs().maxCoeff());
            dev = std::max(dev, (a.a - b.a).cwiseAbs().maxCoeff());
            for (double y : y_grid) dev = std::max(dev, std::abs(numeric.f_bar(x1, x2, y) - closed.f_bar(x1, x2, y)));
        }
    }
    numeric.report_.max_deviation = dev;
    if (!(dev <= tol))
        throw NumericalError("build_averaged", "numeric limits deviate from the closed form by " +
                                                   std::to_string(dev));
    if (opts.force_numeric) return numeric;

    AveragingReport rep = numeric.report_;
    return AveragedModel::from_template(*fam.template_params(), d, rep);
}

}  // namespace hmg
