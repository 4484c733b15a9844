#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace hmg {

/// Sample mean with its standard error (sample sd / sqrt(n)).
struct Estimate {
    double mean = 0.0;
    double stderr_ = 0.0;
};

Estimate mean_stderr(std::span<const double> xs);

/// sqrt(a^2 + b^2): standard error of a difference of independent estimates.
double combined_stderr(double a, double b);

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_distance(std::vector<double> a, std::vector<double> b);

/// Asymptotic p-value of the two-sample KS statistic.
double ks_pvalue(double d, std::size_t n_a, std::size_t n_b);

/// Ordinary least squares y = intercept + slope * x.
struct LineFit {
    double intercept = 0.0;
    double slope = 0.0;
    double slope_stderr = 0.0;
};

LineFit fit_line(std::span<const double> x, std::span<const double> y);

/// Halton point i (0-based) in [0,1)^dim with a seeded Cranley-Patterson shift.
std::vector<double> halton_point(std::size_t i, std::size_t dim, unsigned long long seed);

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson). Clamps to
/// the end values outside the node range.
class MonotoneCubic {
public:
    MonotoneCubic() = default;
    MonotoneCubic(std::vector<double> x, std::vector<double> y);

    double operator()(double t) const;
    const std::vector<double>& nodes() const { return x_; }
    const std::vector<double>& values() const { return y_; }

private:
    std::vector<double> x_, y_, m_;
};

}  // namespace hmg
