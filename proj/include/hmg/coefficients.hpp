#pragma once

#include "hmg/common.hpp"

#include <atomic>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hmg {

enum class FamilyId { constant, switching, oscillating, template_, tabulated };

std::string_view to_string(FamilyId id);
FamilyId family_id_from_string(std::string_view name);

/// Bounded continuous terminal condition H(x1, x2).
///   constant: [c]                 H = c
///   bump:     [h0, h1, w]         H = h0 + h1 exp(-(x1^2 + |x2|^2) / (2 w^2))
///   tanh:     [h0, h1, w1, w2]    H = h0 + h1 tanh(w1 x1 + w2 sum(x2))
struct Terminal {
    enum class Kind { constant, bump, tanh };
    Kind kind = Kind::constant;
    std::vector<double> params{1.0};

    double operator()(double x1, std::span<const double> x2) const;
    double sup_norm() const;
    Terminal shifted(double delta) const;

    static Terminal from_name(std::string_view kind, std::vector<double> params);
    std::string_view kind_name() const;
};

/// Oscillation plus transition profile in the fast variable:
/// c0 + c1 (2/pi) atan(u) + c2 sin(u). Its running averages converge to
/// c0 + c1 as u -> +inf and c0 - c1 as u -> -inf.
struct FastTemplate {
    double c0 = 0.0, c1 = 0.0, c2 = 0.0;

    double operator()(double u) const;
    /// Value from precomputed a = (2/pi) atan(u) and s = sin(u).
    double at(double a, double s) const { return c0 + c1 * a + c2 * s; }
    double limit(Side s) const { return s == Side::plus ? c0 + c1 : c0 - c1; }
    double lower() const;
    double upper() const;
    double abs_max() const;
    double slope_bound() const;  ///< sup |d/du|
    bool constant() const { return c1 == 0.0 && c2 == 0.0; }
};

/// Parameters of the template family. Every coefficient is specified through
/// its rho-weighted product, modulated in the slow variable by 1 + m tanh(x2[0]):
///   rho       = R(u) (1 + m_rho tanh x2_0),   a00 = 1 / rho
///   rho b_i   = B(u) (1 + m_b tanh x2_0)      (same for every i)
///   rho a_ii  = A(u) (1 + m_a tanh x2_0)      (a^(1) diagonal)
///   rho f     = P(u) + Q(u) tanh(y)
struct TemplateParams {
    FastTemplate rho, rho_b, rho_a, rho_f0, rho_f1;
    double m_rho = 0.0, m_b = 0.0, m_a = 0.0;

    static constexpr std::size_t arity = 18;
    static TemplateParams from_vector(std::span<const double> p);
    std::vector<double> to_vector() const;
};

/// Tabulated custom family (d = 1): a00, b, a11, f0, f1 sampled on a uniform
/// (x1, x2) grid, bilinear in between, clamped outside (with a clamp counter).
/// The driver is f = f0 + f1 tanh(y).
struct TableData {
    double x1_min = -1.0, x1_max = 1.0;
    std::size_t n1 = 2;
    double x2_min = -1.0, x2_max = 1.0;
    std::size_t n2 = 2;
    std::vector<double> a00, b, a11, f0, f1;  ///< row-major n1 x n2

    void validate() const;
};

/// Constants the family declares for the assumption audit.
struct DeclaredBounds {
    double c1 = 0.0, c2 = 0.0;   ///< c1 <= a00 <= c2
    double c3 = 0.0;             ///< |a| + |b|^2 <= c3 (1 + |x2|^2)
    double lambda = 0.0;         ///< ellipticity of sigma1 sigma1^T
    double lipschitz = 0.0;      ///< phi, b1, sigma1 in (x1, x2)
    double x2_first = 0.0;       ///< sup |D_x2| of phi, b1, sigma1
    double x2_second = 0.0;      ///< sup |D^2_x2| of phi, b1, sigma1
    double f_bound = 0.0;        ///< sup |f|
    double f_y_lipschitz = 0.0;  ///< sup |d f / dy|
    double f_y_second = 0.0;     ///< sup |d^2 f / dy^2|
    double rho_f_derivative = 0.0;  ///< sup of first and second (x2, y) derivatives of rho f
    double h_bound = 0.0;        ///< sup |H|
    bool smooth_in_x2 = true;    ///< false for tables (no second derivatives)
};

/// Coefficient values at one point.
struct CoefficientValues {
    double rho = 0.0;
    double a00 = 0.0;
    double phi = 0.0;
    SmallVec b1;      ///< drift of x2
    SmallMat a1;      ///< a_ij, i, j = 1..d
    SmallMat sigma1;  ///< d x (k-1)
    double f_base = 0.0, f_slope = 0.0;
    double H = 0.0;   ///< terminal value at the unscaled point

    double f(double y) const;
};

/// Evaluable family of coefficients (phi, b1, sigma1, f, H) in the fast
/// variable u = x1 / eps and the slow variable x2 in R^d. Immutable; copies
/// share state.
class CoefficientFamily {
public:
    static CoefficientFamily make(FamilyId id, std::vector<double> params, int d, Terminal terminal = {},
                                  std::optional<TableData> table = std::nullopt);

    FamilyId id() const;
    int d() const;
    int k() const { return d() + 1; }
    std::span<const double> params() const;
    const Terminal& terminal() const;
    const DeclaredBounds& bounds() const;
    /// Template form of a catalog family; empty for tabulated families.
    const std::optional<TemplateParams>& template_params() const;
    const std::optional<TableData>& table() const;
    bool x1_independent() const;
    bool has_closed_form() const { return template_params().has_value(); }

    CoefficientFamily with_terminal(Terminal t) const;
    /// Replaces the declared constants (e.g. from a config override).
    CoefficientFamily with_bounds(const DeclaredBounds& b) const;

    /// Gateway evaluation. With `eps`, coefficients are taken at (x1/eps, x2);
    /// H is always evaluated at the unscaled (x1, x2).
    CoefficientValues eval(double x1, std::span<const double> x2, std::optional<double> eps = std::nullopt) const;

    // Hot-path accessors at the fast argument u.
    double rho(double u, std::span<const double> x2) const;
    double a00(double u, std::span<const double> x2) const { return 1.0 / rho(u, x2); }
    double driver(double u, std::span<const double> x2, double y) const;
    double rho_driver(double u, std::span<const double> x2, double y) const;
    /// phi, b1 (size d) and the diagonal of sigma1 (size d; sigma1 is diagonal
    /// for every family in the catalog).
    void forward_coefficients(double u, std::span<const double> x2, double& phi, SmallVec& b1,
                              SmallVec& sigma1_diag) const;

    /// Number of rho-weighted products per slow point: rho, rho b_i (d),
    /// rho a_ij for 1 <= i <= j <= d, then rho f at each y.
    std::size_t product_count(std::size_t n_y) const;
    void rho_products(double u, std::span<const double> x2, std::span<const double> ys, std::span<double> out) const;

    /// Batched products at many slow points sharing one fast argument. The
    /// plan caches the slow-variable modulations and tanh(y) values.
    struct ProductPlan {
        std::size_t n_points = 0;
        std::vector<double> x2;  ///< n_points x d, row-major
        std::vector<double> ys, tanh_ys;
        std::vector<double> mod_rho, mod_b, mod_a;
    };
    ProductPlan make_plan(std::span<const double> x2_points, std::span<const double> ys) const;
    /// Writes n_points * product_count(ys.size()) values, point-major.
    void rho_products(double u, const ProductPlan& plan, std::span<double> out) const;

    /// Number of table look-ups that fell outside the table range.
    std::uint64_t clamp_count() const;

    struct Impl;

private:
    explicit CoefficientFamily(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<const Impl> impl_;
};

/// Upper-triangle index of (i, j), 0 <= i <= j < d, in row order.
inline std::size_t tri_index(std::size_t i, std::size_t j, std::size_t d) {
    return i * d - i * (i + 1) / 2 + j;
}

}  // namespace hmg
