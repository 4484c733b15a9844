#include "hmg/stats.hpp"

#include "hmg/common.hpp"
#include "hmg/rng.hpp"

#include <algorithm>
#include <cmath>

namespace hmg {

Estimate mean_stderr(std::span<const double> xs) {
    Estimate e;
    const auto n = xs.size();
    if (n == 0) return e;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    e.mean = mean;
    e.stderr_ = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
    return e;
}

double combined_stderr(double a, double b) { return std::hypot(a, b); }

double ks_distance(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw InvalidArgument("ks_distance", "empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double t = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= t) ++i;
        while (j < b.size() && b[j] <= t) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

double ks_pvalue(double d, std::size_t n_a, std::size_t n_b) {
    const double ne = static_cast<double>(n_a) * static_cast<double>(n_b) / static_cast<double>(n_a + n_b);
    const double s = std::sqrt(ne);
    const double lambda = (s + 0.12 + 0.11 / s) * d;
    if (lambda < 1e-3) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
        sum += term;
        if (std::abs(term) < 1e-12) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    const auto n = x.size();
    if (n < 2 || y.size() != n) throw InvalidArgument("fit_line", "need at least two (x, y) pairs");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    if (n > 2) {
        double rss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - fit.intercept - fit.slope * x[i];
            rss += r * r;
        }
        fit.slope_stderr = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
    }
    return fit;
}

std::vector<double> halton_point(std::size_t i, std::size_t dim, unsigned long long seed) {
    static constexpr unsigned kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
    if (dim > std::size(kPrimes)) throw InvalidArgument("halton_point", "dimension above 16");
    std::vector<double> p(dim);
    for (std::size_t k = 0; k < dim; ++k) {
        const unsigned base = kPrimes[k];
        double f = 1.0, r = 0.0;
        for (std::size_t n = i + 1; n > 0; n /= base) {
            f /= base;
            r += f * static_cast<double>(n % base);
        }
        const double shift = to_open_unit(derive_seed(seed, k, 0x4a11));
        p[k] = std::fmod(r + shift, 1.0);
    }
    return p;
}

MonotoneCubic::MonotoneCubic(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    const auto n = x_.size();
    if (n < 2 || y_.size() != n) throw InvalidArgument("MonotoneCubic", "need at least two nodes");
    for (std::size_t i = 1; i < n; ++i)
        if (!(x_[i] > x_[i - 1])) throw InvalidArgument("MonotoneCubic", "nodes must be strictly increasing");
    std::vector<double> delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) delta[i] = (y_[i + 1] - y_[i]) / (x_[i + 1] - x_[i]);
    m_.assign(n, 0.0);
    m_[0] = delta[0];
    m_[n - 1] = delta[n - 2];
    for (std::size_t i = 1; i + 1 < n; ++i)
        m_[i] = delta[i - 1] * delta[i] <= 0.0 ? 0.0 : 0.5 * (delta[i - 1] + delta[i]);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (delta[i] == 0.0) {
            m_[i] = m_[i + 1] = 0.0;
            continue;
        }
        const double a = m_[i] / delta[i];
        const double b = m_[i + 1] / delta[i];
        const double s = a * a + b * b;
        if (s > 9.0) {
            const double tau = 3.0 / std::sqrt(s);
            m_[i] = tau * a * delta[i];
            m_[i + 1] = tau * b * delta[i];
        }
    }
}

double MonotoneCubic::operator()(double t) const {
    if (t <= x_.front()) return y_.front();
    if (t >= x_.back()) return y_.back();
    const auto it = std::upper_bound(x_.begin(), x_.end(), t);
    const auto i = static_cast<std::size_t>(it - x_.begin()) - 1;
    const double h = x_[i + 1] - x_[i];
    const double s = (t - x_[i]) / h;
    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s);
    const double h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s);
    const double h11 = s * s * (s - 1);
    return h00 * y_[i] + h10 * h * m_[i] + h01 * y_[i + 1] + h11 * h * m_[i + 1];
}

}  // namespace hmg
