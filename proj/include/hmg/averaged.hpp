#pragma once

#include "hmg/coefficients.hpp"
#include "hmg/quadrature.hpp"
#include "hmg/stats.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace hmg {

/// Geometric horizon schedule X_i = x0 * ratio^i, i = 0 .. n_horizons-1.
struct CesaroSchedule {
    double x0 = 100.0;
    double ratio = 3.1622776601683795;
    int n_horizons = 9;

    std::vector<double> horizons() const;
    void validate() const;
};

struct CesaroResult {
    double g_plus = 0.0, g_minus = 0.0;
    bool converged = false;
    double residual = 0.0;  ///< spread of the last three running averages (worst side)
    std::vector<double> running_plus, running_minus;
};

/// Running averages (1/X) int_0^X g on the schedule and its mirror. The limit
/// reported is the running average at the last horizon evaluated. Evaluation
/// stops early once the last three running averages agree within `tol`.
/// Throws NumericalError on quadrature failure; non-convergence is reported
/// through `converged` only.
CesaroResult cesaro_average(const ScalarIntegrand& g, const CesaroSchedule& schedule, double tol);

struct CesaroVectorResult {
    std::vector<double> plus, minus;
    std::vector<double> residual_plus, residual_minus;
    bool converged = false;
    double residual = 0.0;
    double horizon_plus = 0.0, horizon_minus = 0.0;  ///< last horizon used per side
};

CesaroVectorResult cesaro_average_vec(const VectorIntegrand& g, std::size_t m, const CesaroSchedule& schedule,
                                      double tol);

/// (1/x) int_0^x g(t) dt for a single finite x != 0.
double running_average(const ScalarIntegrand& g, double x, double rel_tol = 1e-10);

/// rho-weighted Cesaro limits on one side of the interface.
struct BranchValues {
    double rho = 0.0;
    SmallVec rho_b;  ///< size d
    SmallMat rho_a;  ///< d x d
};

/// Averaged coefficients at one point. Vectors are indexed 0..d with the x1
/// component first; b[0] = 0 and a, sigma keep the block structure.
struct AveragedValues {
    Side side = Side::minus;
    double rho = 0.0;
    double a00 = 0.0;
    SmallVec b;
    SmallMat a;
    SmallMat sigma;
};

struct AveragingOptions {
    CesaroSchedule schedule;
    /// Slow-variable check points (values of x2_0; other coordinates share
    /// the value). Empty selects 21 points on [-2, 2], or the table nodes.
    std::vector<double> x2_nodes;
    /// Keep the numeric tables even when a closed form exists.
    bool force_numeric = false;
};

struct AveragingReport {
    bool closed_form = false;
    bool converged = false;
    double residual = 0.0;
    double max_deviation = 0.0;  ///< numeric vs closed form (0 if no closed form)
    double tol = 0.0;
    std::vector<double> x2_nodes, y_grid;
    CesaroSchedule schedule;
};

/// Effective coefficients rho+-, b_bar, a_bar, sigma_bar and f_bar. The
/// interface point x1 = 0 uses the minus branch. Immutable.
class AveragedModel {
public:
    /// Closed-form model of a template family.
    static AveragedModel from_template(const TemplateParams& p, int d, AveragingReport report = {});

    int d() const { return d_; }
    int k() const { return d_ + 1; }
    bool closed_form() const { return closed_.has_value(); }
    const AveragingReport& report() const { return report_; }

    BranchValues branch(std::span<const double> x2, Side s) const;
    double rho(std::span<const double> x2, Side s) const;
    /// (rho f)+- at (x2, y).
    double rho_f(std::span<const double> x2, double y, Side s) const;

    AveragedValues eval(double x1, std::span<const double> x2) const;
    double f_bar(double x1, std::span<const double> x2, double y) const;
    double a00_bar(double x1, std::span<const double> x2) const;

    /// Hot path: sqrt(2 a00_bar), b_bar^(1) and the lower block of sigma_bar.
    void forward_coefficients(double x1, std::span<const double> x2, double& phi, SmallVec& b1,
                              SmallMat& sigma1) const;

    /// Branch tables at the given slow points (x2_0 values) and y values.
    nlohmann::json to_json(std::span<const double> x2_points, std::span<const double> ys) const;

    struct Numeric;

private:
    AveragedModel() = default;
    friend AveragedModel build_averaged(const CoefficientFamily&, std::span<const double>, double,
                                        const AveragingOptions&);

    int d_ = 1;
    std::optional<TemplateParams> closed_;
    std::shared_ptr<const Numeric> numeric_;
    AveragingReport report_;
};

/// Computes the averaged model by Cesaro averaging of rho-weighted products
/// on a set of slow check points and the y grid. When the family has a closed
/// form, the numeric limits must match it within `tol` and the closed form is
/// stored. Throws NumericalError on non-convergence, mismatch, or a
/// non-positive-definite assembled a_bar.
AveragedModel build_averaged(const CoefficientFamily& fam, std::span<const double> y_grid, double tol,
                             const AveragingOptions& opts = {});

/// Symmetric square root of a symmetric positive definite matrix. Throws
/// NumericalError (stage `stage`) if the matrix is not positive definite.
SmallMat spd_sqrt(const SmallMat& m, const char* stage);

/// Default y grid: 17 points on [-4, 4].
std::vector<double> default_y_grid();

}  // namespace hmg
