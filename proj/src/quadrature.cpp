#include "hmg/quadrature.hpp"

#include "hmg/common.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace hmg {

namespace {

// Nodes of a Gauss-Kronrod pair on [-1, 1] with the embedded Gauss weights
// (zero at Kronrod-only nodes).
struct Rule {
    std::vector<double> x, wk, wg;
};

template <unsigned K, unsigned G>
Rule make_rule() {
    using boost::math::quadrature::gauss;
    using boost::math::quadrature::gauss_kronrod;
    const auto& kx = gauss_kronrod<double, K>::abscissa();
    const auto& kw = gauss_kronrod<double, K>::weights();
    const auto& gx = gauss<double, G>::abscissa();
    const auto& gw = gauss<double, G>::weights();
    auto gauss_weight = [&](double x) {
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (std::abs(gx[i] - x) < 1e-14) return gw[i];
        return 0.0;
    };
    Rule r;
    for (std::size_t i = kx.size(); i-- > 1;) {
        r.x.push_back(-kx[i]);
        r.wk.push_back(kw[i]);
        r.wg.push_back(gauss_weight(kx[i]));
    }
    for (std::size_t i = 0; i < kx.size(); ++i) {
        r.x.push_back(kx[i]);
        r.wk.push_back(kw[i]);
        r.wg.push_back(gauss_weight(kx[i]));
    }
    return r;
}

const Rule& rule_for(int points) {
    static const Rule k15 = make_rule<15, 7>();
    static const Rule k61 = make_rule<61, 30>();
    if (points == 15) return k15;
    if (points == 61) return k61;
    throw InvalidArgument("quadrature", "supported rules are 15 and 61 points");
}

struct Piece {
    double a, b;
    int depth;
};

// Evaluates the rule on [a, b]. buf holds n*m samples.
void apply_rule(const Rule& rule, const VectorIntegrand& f, std::size_t m, double a, double b,
                std::vector<double>& buf, std::vector<double>& kron, std::vector<double>& gauss,
                std::vector<double>& l1) {
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    const std::size_t n = rule.x.size();
    buf.resize(n * m);
    for (std::size_t j = 0; j < n; ++j) f(c + h * rule.x[j], std::span<double>(buf.data() + j * m, m));

    kron.assign(m, 0.0);
    gauss.assign(m, 0.0);
    l1.assign(m, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double wk = rule.wk[j] * h;
        const double wg = rule.wg[j] * h;
        const double* v = buf.data() + j * m;
        for (std::size_t i = 0; i < m; ++i) {
            kron[i] += wk * v[i];
            gauss[i] += wg * v[i];
            l1[i] += wk * std::abs(v[i]);
        }
    }
}

}  // namespace

std::vector<QuadratureResult> integrate_vec(const VectorIntegrand& f, std::size_t m, double a, double b,
                                            const QuadratureOptions& opts) {
    const Rule& rule = rule_for(opts.points);
    std::vector<QuadratureResult> out(m);
    if (a == b || m == 0) return out;
    const double sign = b < a ? -1.0 : 1.0;
    const double lo = std::min(a, b);
    const double hi = std::max(a, b);
    const double total = hi - lo;

    std::vector<Piece> stack;
    if (opts.panel > 0.0) {
        const auto n_panels = static_cast<std::size_t>(std::ceil(total / opts.panel));
        const double w = total / static_cast<double>(n_panels);
        for (std::size_t p = n_panels; p-- > 0;) {
            const double pa = lo + w * static_cast<double>(p);
            const double pb = p + 1 == n_panels ? hi : lo + w * static_cast<double>(p + 1);
            stack.push_back({pa, pb, 0});
        }
    } else {
        stack.push_back({lo, hi, 0});
    }

    std::vector<double> buf, kron, gauss, l1;
    while (!stack.empty()) {
        const Piece piece = stack.back();
        stack.pop_back();
        apply_rule(rule, f, m, piece.a, piece.b, buf, kron, gauss, l1);
        const double frac = (piece.b - piece.a) / total;
        bool accept = true;
        for (std::size_t i = 0; i < m; ++i) {
            const double err = std::abs(kron[i] - gauss[i]);
            const double tol = std::max(opts.rel_tol * l1[i], opts.abs_tol * frac);
            if (err > tol && !(err <= 64.0 * std::numeric_limits<double>::epsilon() * l1[i])) {
                accept = false;
                break;
            }
        }
        if (!accept && piece.depth < opts.max_depth) {
            const double mid = 0.5 * (piece.a + piece.b);
            stack.push_back({mid, piece.b, piece.depth + 1});
            stack.push_back({piece.a, mid, piece.depth + 1});
            continue;
        }
        for (std::size_t i = 0; i < m; ++i) {
            out[i].value += kron[i];
            out[i].error += std::abs(kron[i] - gauss[i]);
            out[i].l1 += l1[i];
            if (!accept) out[i].ok = false;
        }
    }
    for (auto& r : out) r.value *= sign;
    return out;
}

QuadratureResult integrate(const ScalarIntegrand& f, double a, double b, const QuadratureOptions& opts) {
    auto res = integrate_vec([&f](double t, std::span<double> o) { o[0] = f(t); }, 1, a, b, opts);
    return res[0];
}

}  // namespace hmg
