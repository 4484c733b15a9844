#include "hmg/pde_fd.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace hmg {

std::size_t Grid2D::n_steps() const {
    return static_cast<std::size_t>(std::ceil(t_end / dt_fd - 1e-9));
}

Grid2D Grid2D::refined(std::size_t r) const {
    if (r < 2) throw InvalidArgument("pde_fd", "refinement must be at least 2");
    Grid2D g = *this;
    g.n1 = r * (n1 + 1) - 1;
    g.n2 = r * (n2 + 1) - 1;
    g.dt_fd = dt() / static_cast<double>(r * r);
    return g;
}

void Grid2D::validate() const {
    if (!(L1 > 0.0) || !(L2 > 0.0)) throw InvalidArgument("pde_fd", "domain half-widths must be positive");
    if (n1 < 3 || n2 < 3) throw InvalidArgument("pde_fd", "need at least 3 interior nodes per axis");
    if (n1 % 2 == 0) throw InvalidArgument("pde_fd", "n1 must be odd so that x1 = 0 is a node");
    if (!(t_end > 0.0)) throw InvalidArgument("pde_fd", "t_end must be positive");
    if (!(dt_fd > 0.0) || dt_fd > t_end / 10.0 * (1.0 + 1e-12))
        throw InvalidArgument("pde_fd", "dt_fd must lie in (0, t_end / 10]");
}

nlohmann::json Grid2D::to_json() const {
    return {{"L1", L1}, {"L2", L2}, {"n1", n1}, {"n2", n2}, {"dt", dt()}, {"n_steps", n_steps()}, {"t_end", t_end}};
}

std::string_view to_string(BoundaryMode m) {
    return m == BoundaryMode::dirichlet_terminal ? "dirichlet_terminal" : "neumann_zero";
}

PdeModel PdeModel::eps_form(const CoefficientFamily& fam, double eps) {
    if (fam.d() != 1) throw InvalidArgument("pde_fd", "finite differences need d = 1");
    if (!(eps > 0.0)) throw InvalidArgument("pde_fd", "eps must be positive");
    PdeModel m;
    m.form = "eps";
    m.eps = eps;
    auto coeffs = [fam, eps](double x1, double x2) {
        double phi = 0.0;
        SmallVec b1, sd;
        const double x2v[1] = {x2};
        fam.forward_coefficients(x1 / eps, x2v, phi, b1, sd);
        return std::array<double, 3>{0.5 * phi * phi, 0.5 * sd[0] * sd[0], b1[0]};
    };
    m.a00 = [coeffs](double x1, double x2) { return coeffs(x1, x2)[0]; };
    m.a11 = [coeffs](double x1, double x2) { return coeffs(x1, x2)[1]; };
    m.b1 = [coeffs](double x1, double x2) { return coeffs(x1, x2)[2]; };
    m.f = [fam, eps](double x1, double x2, double y) {
        const double x2v[1] = {x2};
        return fam.driver(x1 / eps, x2v, y);
    };
    m.H = [fam](double x1, double x2) {
        const double x2v[1] = {x2};
        return fam.terminal()(x1, x2v);
    };
    m.h_bound = fam.bounds().h_bound;
    m.f_bound = fam.bounds().f_bound;
    return m;
}

PdeModel PdeModel::averaged_form(const AveragedModel& avg, const CoefficientFamily& fam) {
    if (avg.d() != 1 || fam.d() != 1) throw InvalidArgument("pde_fd", "finite differences need d = 1");
    PdeModel m;
    m.form = "averaged";
    m.a00 = [avg](double x1, double x2) {
        const double x2v[1] = {x2};
        return avg.a00_bar(x1, x2v);
    };
    m.a11 = [avg](double x1, double x2) {
        const double x2v[1] = {x2};
        return avg.eval(x1, x2v).a(1, 1);
    };
    m.b1 = [avg](double x1, double x2) {
        const double x2v[1] = {x2};
        return avg.eval(x1, x2v).b[1];
    };
    m.f = [avg](double x1, double x2, double y) {
        const double x2v[1] = {x2};
        return avg.f_bar(x1, x2v, y);
    };
    m.H = [fam](double x1, double x2) {
        const double x2v[1] = {x2};
        return fam.terminal()(x1, x2v);
    };
    m.a00_side = [avg](double x2, Side s) {
        const double x2v[1] = {x2};
        return 1.0 / avg.rho(x2v, s);
    };
    m.h_bound = fam.bounds().h_bound;
    m.f_bound = fam.bounds().f_bound;
    return m;
}

double GridSolution::value_at(double x1, double x2) const {
    const double s1 = (x1 + grid.L1) / grid.h1(), s2 = (x2 + grid.L2) / grid.h2();
    const double m1 = static_cast<double>(grid.n1 + 1), m2 = static_cast<double>(grid.n2 + 1);
    if (!(s1 >= 0.0 && s1 <= m1 && s2 >= 0.0 && s2 <= m2))
        throw InvalidArgument("pde_fd", "point outside the grid");
    const auto i = std::min(static_cast<std::size_t>(s1), grid.n1);
    const auto j = std::min(static_cast<std::size_t>(s2), grid.n2);
    const double u = s1 - static_cast<double>(i), w = s2 - static_cast<double>(j);
    return (1 - u) * (1 - w) * at(i, j) + u * (1 - w) * at(i + 1, j) + (1 - u) * w * at(i, j + 1) +
           u * w * at(i + 1, j + 1);
}

double GridSolution::max_abs() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
}

std::string GridSolution::to_csv() const {
    std::string out = "x1,x2,v\n";
    char buf[96];
    for (std::size_t i = 0; i < grid.n1 + 2; ++i)
        for (std::size_t j = 0; j < grid.n2 + 2; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", grid.x1(i), grid.x2(j), at(i, j));
            out += buf;
        }
    return out;
}

nlohmann::json GridSolution::header_json() const {
    nlohmann::json j = meta;
    j["grid"] = grid.to_json();
    j["boundary"] = std::string(to_string(boundary));
    j["solve_residual"] = solve_residual;
    j["interface_residual"] = interface_residual;
    j["upwind_nodes"] = upwind_nodes;
    j["warnings"] = warnings;
    return j;
}

GridSolution solve_pde(const PdeModel& model, const Grid2D& grid, const PdeOptions& opts) {
    grid.validate();
    if (opts.theta != 1.0 && opts.theta != 0.5) throw InvalidArgument("pde_fd", "theta must be 1 or 0.5");
    if (!model.a00 || !model.a11 || !model.b1 || !model.f || !model.H)
        throw InvalidArgument("pde_fd", "model is incomplete");

    GridSolution sol;
    sol.grid = grid;
    sol.boundary = opts.boundary;
    if (model.eps && *model.eps < 4.0 * grid.h1()) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "eps = %g is below 4 h1 = %g; fast oscillations are unresolved", *model.eps,
                      4.0 * grid.h1());
        if (!opts.allow_unresolved) throw InvalidArgument("pde_fd", buf);
        sol.warnings.emplace_back(buf);
    }

    const std::size_t n1 = grid.n1, n2 = grid.n2, W = n2 + 2;
    const std::size_t n = n1 * n2;
    const double h1 = grid.h1(), h2 = grid.h2();
    const std::size_t N = grid.n_steps();
    const double dt = grid.dt();
    const std::size_t iz = grid.zero_index();
    const bool dirichlet = opts.boundary == BoundaryMode::dirichlet_terminal;

    auto full = [W](std::size_t i, std::size_t j) { return i * W + j; };
    auto unk = [n2](std::size_t i, std::size_t j) { return (i - 1) * n2 + (j - 1); };

    std::vector<double> v((n1 + 2) * W);
    for (std::size_t i = 0; i < n1 + 2; ++i)
        for (std::size_t j = 0; j < W; ++j) v[full(i, j)] = model.H(grid.x1(i), grid.x2(j));
    for (double x : v)
        if (!std::isfinite(x)) throw NumericalError("pde_fd", "non-finite terminal value");

    // Operator L as interior matrix plus boundary contribution g.
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(5 * n);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t i = 1; i <= n1; ++i)
        for (std::size_t j = 1; j <= n2; ++j) {
            const double x1 = grid.x1(i), x2 = grid.x2(j);
            double a0 = model.a00(x1, x2);
            if (i == iz && model.a00_side) {
                const double am = model.a00_side(x2, Side::minus), ap = model.a00_side(x2, Side::plus);
                a0 = 2.0 * am * ap / (am + ap);
            }
            const double a1 = model.a11(x1, x2), b = model.b1(x1, x2);
            const double cx = a0 / (h1 * h1), cy = a1 / (h2 * h2);
            double cs = cy - 0.5 * b / h2, cn = cy + 0.5 * b / h2;
            if (cs < 0.0 || cn < 0.0) {
                cs = cy + std::max(-b, 0.0) / h2;
                cn = cy + std::max(b, 0.0) / h2;
                ++sol.upwind_nodes;
            }
            const auto r = static_cast<int>(unk(i, j));
            double diag = -(2.0 * cx + cs + cn);
            const std::array<std::pair<std::array<std::size_t, 2>, double>, 4> nb{
                {{{i - 1, j}, cx}, {{i + 1, j}, cx}, {{i, j - 1}, cs}, {{i, j + 1}, cn}}};
            for (const auto& [ij, c] : nb) {
                const auto [ii, jj] = ij;
                if (ii >= 1 && ii <= n1 && jj >= 1 && jj <= n2) {
                    trip.emplace_back(r, static_cast<int>(unk(ii, jj)), c);
                } else if (dirichlet) {
                    g[r] += c * v[full(ii, jj)];
                } else {
                    diag += c;
                }
            }
            trip.emplace_back(r, r, diag);
        }
    Eigen::SparseMatrix<double> L(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    L.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseMatrix<double> I(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    I.setIdentity();
    const double implicit_dt = opts.theta * dt;
    const Eigen::SparseMatrix<double> A = I - implicit_dt * L;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw NumericalError("pde_fd", "sparse LU factorization failed");

    Eigen::VectorXd u(static_cast<Eigen::Index>(n));
    for (std::size_t i = 1; i <= n1; ++i)
        for (std::size_t j = 1; j <= n2; ++j) u[static_cast<Eigen::Index>(unk(i, j))] = v[full(i, j)];

    auto scatter = [&](const Eigen::VectorXd& x) {
        for (std::size_t i = 1; i <= n1; ++i)
            for (std::size_t j = 1; j <= n2; ++j) v[full(i, j)] = x[static_cast<Eigen::Index>(unk(i, j))];
        if (!dirichlet) {
            for (std::size_t j = 1; j <= n2; ++j) {
                v[full(0, j)] = v[full(1, j)];
                v[full(n1 + 1, j)] = v[full(n1, j)];
            }
            for (std::size_t i = 0; i < n1 + 2; ++i) {
                v[full(i, 0)] = v[full(i, 1)];
                v[full(i, n2 + 1)] = v[full(i, n2)];
            }
        }
    };
    auto driver = [&](const Eigen::VectorXd& x) {
        Eigen::VectorXd out(static_cast<Eigen::Index>(n));
        for (std::size_t i = 1; i <= n1; ++i)
            for (std::size_t j = 1; j <= n2; ++j) {
                const auto r = static_cast<Eigen::Index>(unk(i, j));
                out[r] = model.f(grid.x1(i), grid.x2(j), x[r]);
            }
        return out;
    };
    auto solve = [&](const Eigen::VectorXd& rhs, std::size_t step) {
        Eigen::VectorXd x = lu.solve(rhs);
        if (lu.info() != Eigen::Success || !x.allFinite())
            throw NumericalError("pde_fd", "linear solve failed at step " + std::to_string(step));
        return x;
    };
    auto record = [&]() {
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        sol.step_min.push_back(*lo);
        sol.step_max.push_back(*hi);
        if (opts.keep_slices) sol.slices.push_back(v);
    };
    record();

    Eigen::VectorXd rhs;
    const std::size_t half_steps = opts.theta < 1.0 ? std::min(opts.rannacher, N) : 0;
    for (std::size_t s = 0; s < N; ++s) {
        if (s < half_steps) {
            // Two implicit Euler steps of dt / 2 share the Crank-Nicolson matrix.
            for (int k = 0; k < 2; ++k) {
                rhs = u + implicit_dt * (g + driver(u));
                u = solve(rhs, s);
            }
        } else {
            rhs = u + (1.0 - opts.theta) * dt * (L * u) + dt * g + dt * driver(u);
            u = solve(rhs, s);
        }
        scatter(u);
        record();
    }

    if (N > 0) {
        const Eigen::VectorXd res = A * u - rhs;
        sol.solve_residual = res.cwiseAbs().maxCoeff();
        for (std::size_t j = 1; j <= n2; ++j)
            sol.interface_residual =
                std::max(sol.interface_residual, std::abs(res[static_cast<Eigen::Index>(unk(iz, j))]));
    }
    sol.values = std::move(v);
    sol.meta = {{"form", model.form},
                {"theta", opts.theta},
                {"rannacher_steps", half_steps},
                {"interface", model.a00_side ? "harmonic" : "pointwise"}};
    if (model.eps) sol.meta["eps"] = *model.eps;
    return sol;
}

RichardsonReport richardson_error(const PdeModel& model, const Grid2D& grid, std::size_t refinement,
                                  const PdeOptions& opts) {
    const Grid2D fine = grid.refined(refinement);
    grid.validate();
    fine.validate();
    RichardsonReport rep;
    std::array<GridSolution*, 2> out{&rep.coarse, &rep.fine};
    std::array<const Grid2D*, 2> grids{&grid, &fine};
    parallel_for(2, 1, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t k = lo; k < hi; ++k) *out[k] = solve_pde(model, *grids[k], opts);
    });
    for (std::size_t i = 0; i < grid.n1 + 2; ++i)
        for (std::size_t j = 0; j < grid.n2 + 2; ++j)
            rep.estimate =
                std::max(rep.estimate, std::abs(rep.coarse.at(i, j) - rep.fine.at(refinement * i, refinement * j)));
    return rep;
}

InterfaceReport interface_check(const GridSolution& sol) {
    const auto& g = sol.grid;
    const std::size_t iz = g.zero_index();
    const double h = g.h1();
    InterfaceReport rep;
    rep.row_residual = sol.interface_residual;
    for (std::size_t j = 1; j <= g.n2; ++j) {
        const double dm = (3.0 * sol.at(iz, j) - 4.0 * sol.at(iz - 1, j) + sol.at(iz - 2, j)) / (2.0 * h);
        const double dp = (-3.0 * sol.at(iz, j) + 4.0 * sol.at(iz + 1, j) - sol.at(iz + 2, j)) / (2.0 * h);
        rep.derivative_jump = std::max(rep.derivative_jump, std::abs(dp - dm));
        rep.derivative_scale = std::max({rep.derivative_scale, std::abs(dp), std::abs(dm)});
    }
    return rep;
}

}  // namespace hmg
