#pragma once

#include "hmg/averaged.hpp"
#include "hmg/coefficients.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hmg {

/// Rectangle [-L1, L1] x [-L2, L2] with n1 x n2 interior nodes plus one
/// boundary layer. n1 is odd so that x1 = 0 is a node.
struct Grid2D {
    double L1 = 4.0, L2 = 4.0;
    std::size_t n1 = 201, n2 = 201;
    double dt_fd = 0.01;
    double t_end = 1.0;

    double h1() const { return 2.0 * L1 / static_cast<double>(n1 + 1); }
    double h2() const { return 2.0 * L2 / static_cast<double>(n2 + 1); }
    /// Node coordinates, i in [0, n1 + 1].
    double x1(std::size_t i) const { return -L1 + h1() * static_cast<double>(i); }
    double x2(std::size_t j) const { return -L2 + h2() * static_cast<double>(j); }
    std::size_t zero_index() const { return (n1 + 1) / 2; }
    /// Number of time steps; the step is t_end / n_steps <= dt_fd.
    std::size_t n_steps() const;
    double dt() const { return t_end / static_cast<double>(n_steps()); }
    /// Grid with r (n + 1) - 1 interior nodes per axis and dt_fd / r^2.
    Grid2D refined(std::size_t r) const;
    void validate() const;
    nlohmann::json to_json() const;
};

enum class BoundaryMode { dirichlet_terminal, neumann_zero };
std::string_view to_string(BoundaryMode m);

/// Pointwise data of the d = 1 backward PDE
///   v_t + a00 v_x1x1 + a11 v_x2x2 + b1 v_x2 + f(x, v) = 0,  v(t_end) = H,
/// solved forward in time to go.
struct PdeModel {
    std::string form;  ///< "eps" or "averaged"
    std::optional<double> eps;
    std::function<double(double, double)> a00, a11, b1, H;
    std::function<double(double, double, double)> f;
    /// Averaged form: one-sided a00 limits at x1 = 0, combined harmonically.
    std::function<double(double, Side)> a00_side;
    double h_bound = 0.0, f_bound = 0.0;

    static PdeModel eps_form(const CoefficientFamily& fam, double eps);
    static PdeModel averaged_form(const AveragedModel& avg, const CoefficientFamily& fam);
};

struct PdeOptions {
    BoundaryMode boundary = BoundaryMode::dirichlet_terminal;
    double theta = 1.0;           ///< 1 implicit Euler, 0.5 Crank-Nicolson
    std::size_t rannacher = 2;    ///< theta < 1: first steps as two implicit half steps each
    bool keep_slices = false;
    bool allow_unresolved = false;  ///< eps-form with eps < 4 h1
};

struct GridSolution {
    Grid2D grid;
    BoundaryMode boundary = BoundaryMode::dirichlet_terminal;
    std::vector<double> values;               ///< [(n1 + 2)][(n2 + 2)] at t = 0
    std::vector<std::vector<double>> slices;  ///< every step when kept
    std::vector<double> step_min, step_max;   ///< over all nodes, per step
    double solve_residual = 0.0;              ///< last step, sup over rows
    double interface_residual = 0.0;          ///< last step, rows on x1 = 0
    std::size_t upwind_nodes = 0;
    std::vector<std::string> warnings;
    nlohmann::json meta;

    double at(std::size_t i, std::size_t j) const { return values[i * (grid.n2 + 2) + j]; }
    /// Bilinear interpolation; throws outside the grid.
    double value_at(double x1, double x2) const;
    double max_abs() const;
    std::string to_csv() const;
    nlohmann::json header_json() const;
};

GridSolution solve_pde(const PdeModel& model, const Grid2D& grid, const PdeOptions& opts = {});

struct RichardsonReport {
    double estimate = 0.0;  ///< sup over common nodes of |coarse - fine|
    GridSolution coarse, fine;
};

/// Solves on `grid` and on grid.refined(refinement) as two parallel tasks.
RichardsonReport richardson_error(const PdeModel& model, const Grid2D& grid, std::size_t refinement = 2,
                                  const PdeOptions& opts = {});

struct InterfaceReport {
    double derivative_jump = 0.0;  ///< sup over x2 of |D+ v - D- v| at x1 = 0
    double derivative_scale = 0.0; ///< sup of |D+- v|
    double row_residual = 0.0;     ///< linear-solve residual on the x1 = 0 rows
};

/// One-sided second-order x1 derivatives at the 0-node. For the
/// non-divergence operator the solution is C^1 across x1 = 0, so the jump
/// is a discretization error.
InterfaceReport interface_check(const GridSolution& sol);

}  // namespace hmg
