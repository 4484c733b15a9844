#pragma once

#include "hmg/averaged.hpp"
#include "hmg/coefficients.hpp"

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace hmg {

/// Corrector V of a00(x1/eps, x2) D^2_{x1} V = f(x1/eps, x2, y) - f_bar(x1, x2, y)
/// with V = D_{x1} V = 0 at x1 = 0. With rho g = rho (f - f_bar):
///   D_{x1} V(x1) = int_0^x1 rho g(t) dt,
///   V(x1)        = int_0^x1 (x1 - t) rho g(t) dt.
/// Integrals run in the fast variable u = t/eps and are cached per (x2, y)
/// as cumulative sums over fixed panels.
class CorrectorField {
public:
    CorrectorField(const CoefficientFamily& fam, const AveragedModel& avg, double eps);

    double eps() const { return eps_; }
    const CoefficientFamily& family() const { return *fam_; }
    const AveragedModel& averaged() const { return *avg_; }

    /// int_0^U of (rho, rho f, u rho, u rho f) at the fast variable, U = x1/eps.
    std::array<double, 4> moments(double x1, std::span<const double> x2, double y) const;

    /// int_{x-h}^{x+h} (h - |t - x|) rho g(t) dt, i.e. the exact second
    /// difference V(x+h) - 2V(x) + V(x-h). The interval must not contain 0.
    double second_difference(double x1, std::span<const double> x2, double y, double h) const;

    /// rho g at the unscaled point.
    double rho_g(double x1, std::span<const double> x2, double y) const;

private:
    using Key = std::vector<double>;
    struct Cumulative {
        std::vector<std::array<double, 4>> plus, minus;  ///< after 1, 2, ... panels
    };

    std::array<double, 4> integrate_span(double u0, double u1, std::span<const double> x2, double y) const;

    std::shared_ptr<const CoefficientFamily> fam_;
    std::shared_ptr<const AveragedModel> avg_;
    double eps_;
    mutable std::mutex mu_;
    mutable std::map<Key, Cumulative> cache_;
};

double corrector_dx1(const CorrectorField& field, double x1, std::span<const double> x2, double y);
double corrector_value(const CorrectorField& field, double x1, std::span<const double> x2, double y);

struct ResidualSample {
    std::vector<double> lo, hi;  ///< (x1, x2) box, size d + 1
    double y_lo = -1.0, y_hi = 1.0;
    std::size_t n_points = 100;
    unsigned long long seed = 1;
    double h_factor = 1e-4;  ///< h = h_factor * eps
};

struct ResidualReport {
    double max_residual = 0.0;
    double max_ratio = 0.0;       ///< max of residual / tolerance
    std::vector<double> witness;  ///< (x1, x2..., y) of max_ratio
    std::size_t n_points = 0;
    bool pass = true;
};

/// Checks a00 D^2 V - (f - f_bar) = 0 on Halton points with tolerance
/// max(1e-4, 1e-3 |f - f_bar|). One-sided differences within |x1| < h.
ResidualReport residual_check(const CorrectorField& field, const ResidualSample& sample);

struct DecayBox {
    std::vector<double> lo, hi;  ///< (x1, x2) box, size d + 1
    double y_lo = -1.0, y_hi = 1.0;
    std::size_t n_grid = 41;  ///< per axis over (x1, x2_0, y); other x2 at the box centre
};

/// x1 in [-2, 2], x2 in [-1, 1]^d, y in [-1, 1].
DecayBox reference_box(int d);

struct DecayRow {
    double eps = 0.0;
    double sup_V = 0.0;
    double sup_F = 0.0;      ///< sup |D_{x1} V / x1|
    double sup_beta = 0.0;   ///< driver remainder over |x1| >= sqrt(eps)
    double sup_alpha = 0.0;  ///< rho remainder over |x1| >= sqrt(eps)
};

struct DecayTable {
    std::vector<DecayRow> rows;
    std::string grid_spec;
    bool v_nonincreasing = true;  ///< each step may rise by less than 5%
    bool beta_decreasing = true;

    std::string to_csv() const;
};

DecayTable decay_table(const CoefficientFamily& fam, const AveragedModel& avg, std::span<const double> eps_list,
                       const DecayBox& box);

}  // namespace hmg
