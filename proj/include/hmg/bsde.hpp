#pragma once

#include "hmg/forward_sim.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <utility>
#include <vector>

namespace hmg {

/// Terminal condition H of the full state (x1, x2).
using TerminalFn = std::function<double(std::span<const double> x)>;
/// Driver of the full state and y. For eps-runs it evaluates f(x1/eps, x2, y).
using DriverFn = std::function<double(std::span<const double> x, double y)>;

struct BsdeSpec {
    TerminalFn terminal;
    DriverFn driver;
    int basis_degree = 2;
    bool include_sign_feature = false;
    int n_picard = 3;
    double picard_tol = 1e-5;
    /// sup |H| and sup |f|.
    double h_bound = std::numeric_limits<double>::infinity();
    double f_bound = std::numeric_limits<double>::infinity();
    /// Truncate the reported Y to |Y| <= h_bound + t_end f_bound. The
    /// recursion and Y_regression stay untruncated.
    bool clamp = true;

    void validate() const;
};

struct BsdeOptions {
    int basis_degree = 2;
    bool sign_feature = false;
    int n_picard = 3;
};

/// Spec of the eps-problem: f(x1/eps, x2, y), terminal H(x1, x2).
BsdeSpec eps_bsde_spec(const CoefficientFamily& fam, double eps, const BsdeOptions& opts);
/// Spec of the averaged problem: f-bar(x1, x2, y), the family's terminal.
BsdeSpec avg_bsde_spec(const AveragedModel& avg, const CoefficientFamily& fam, const BsdeOptions& opts);

struct BsdeSolution {
    std::size_t n_paths = 0;
    SimGrid grid;
    int k = 2;
    double Y0 = 0.0;
    double Y0_stderr = 0.0;
    std::vector<double> Y;             ///< [n_paths][n_steps + 1], truncated to the a-priori bound
    std::vector<double> Y_regression;  ///< same layout, untruncated
    std::vector<double> Z;  ///< [n_paths][n_steps][k]
    std::vector<double> picard_residuals;   ///< max over steps, per pass
    std::vector<double> condition_numbers;  ///< per step 0..n_steps-1
    std::size_t clamp_count = 0;
    bool picard_converged = true;

    double y(std::size_t path, std::size_t step) const { return Y[path * (grid.n_steps + 1) + step]; }
    double z(std::size_t path, std::size_t step, std::size_t c) const {
        return Z[(path * grid.n_steps + step) * static_cast<std::size_t>(k) + c];
    }
    /// Values of Y at `step` across paths.
    std::vector<double> column(std::size_t step) const;

    nlohmann::json summary_json() const;
    /// Binary container "HMGS1" plus a `<path>.json` sidecar.
    void save(const std::filesystem::path& path) const;
    static BsdeSolution load(const std::filesystem::path& path);
};

/// Least-squares projection onto total-degree polynomials of the
/// standardized state at one step, optionally with the 1{x1 > 0} feature.
/// Coordinates with no spread are dropped, as is a constant sign feature.
class Projection {
public:
    Projection(const PathBundle& bundle, std::size_t step, int degree, bool sign_feature, const char* stage);

    /// Fitted values of `target` (size n_paths).
    Eigen::VectorXd fit(const Eigen::VectorXd& target) const;
    double condition_number() const { return cond_; }
    Eigen::Index n_features() const { return phi_.cols(); }

private:
    Eigen::MatrixXd phi_;
    Eigen::LDLT<Eigen::MatrixXd> ldlt_;
    double cond_ = 1.0;
};

/// Condition number above which a regression is rejected.
inline constexpr double kMaxConditionNumber = 1e12;

BsdeSolution solve_bsde(const PathBundle& bundle, const BsdeSpec& spec);

/// Projection used at step i for the conditional increment means.
using ProjectionFn = std::function<Eigen::VectorXd(std::size_t step, const Eigen::VectorXd& target)>;
ProjectionFn polynomial_projection(const PathBundle& bundle, int degree, bool sign_feature);

/// Grid conditional variation sum_i E|E[Y_{i+1} - Y_i | F_i]|; the estimate
/// is the mean of the per-path sums, with its standard error. Y is
/// [n_paths][n_steps + 1].
Estimate conditional_variation(std::span<const double> Y, std::size_t n_paths, const SimGrid& grid,
                               const ProjectionFn& project);

/// Completed moves from <= a to >= b, scanning left to right.
std::size_t upcrossings(std::span<const double> path, double a, double b);

struct PathFunctionals {
    Estimate cv;
    std::map<std::pair<double, double>, double> upcrossings;  ///< band -> mean count
    double sup_norm = 0.0;
    Estimate sup_abs;     ///< E sup_s |Y_s|
    Estimate energy;      ///< E sup_s |Y_s|^2 + sum_s E|Z_s|^2 dt
};

PathFunctionals path_functionals(const BsdeSolution& sol, const PathBundle& bundle,
                                 const std::vector<std::pair<double, double>>& bands, int degree,
                                 bool sign_feature);

struct TightnessCertificate {
    std::vector<double> eps;
    std::vector<double> cv_plus_sup;  ///< grid-CV + E sup|Y| per run
    std::vector<double> energy;
    std::map<std::pair<double, double>, std::vector<double>> upcrossings;
    double cv_plus_sup_ratio = 1.0;
    double energy_ratio = 1.0;
    std::map<std::pair<double, double>, double> upcrossing_ratio;

    nlohmann::json to_json() const;
};

/// Max/min ratios of the functionals across an eps grid.
TightnessCertificate tightness_certificate(const std::vector<double>& eps, const std::vector<PathFunctionals>& runs);

/// A-priori bound on E sup|Y|^2 + E int |Z|^2 from sup|H|, sup|f| and t.
double apriori_bound(double h_bound, double f_bound, double t_end);

}  // namespace hmg
