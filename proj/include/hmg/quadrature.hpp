#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace hmg {

struct QuadratureOptions {
    double rel_tol = 1e-10;  ///< relative to the L1 mass of the integrand on each piece
    double abs_tol = 0.0;    ///< absolute floor, distributed over [a, b] by length
    int max_depth = 48;      ///< bisection depth limit per initial panel
    double panel = 0.0;      ///< if > 0, [a, b] is first split into panels of at most this length
    int points = 15;         ///< Kronrod rule size: 15 (G7/K15) or 61 (G30/K61)
};

struct QuadratureResult {
    double value = 0.0;
    double error = 0.0;  ///< sum of local Kronrod-Gauss differences
    double l1 = 0.0;     ///< integral of |f|
    bool ok = true;      ///< false if some piece hit max_depth before meeting tolerance
};

using ScalarIntegrand = std::function<double(double)>;
/// Vector integrand: writes m component values at t into `out`.
using VectorIntegrand = std::function<void(double t, std::span<double> out)>;

/// Adaptive Gauss-Kronrod quadrature of f over the oriented interval [a, b].
QuadratureResult integrate(const ScalarIntegrand& f, double a, double b, const QuadratureOptions& opts = {});

/// Component-wise adaptive Gauss-Kronrod; every component must meet tolerance.
/// Returns per-component results.
std::vector<QuadratureResult> integrate_vec(const VectorIntegrand& f, std::size_t m, double a, double b,
                                            const QuadratureOptions& opts = {});

}  // namespace hmg
