#include "hmg/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace hmg {

namespace {

constexpr double kTwoOverPi = 2.0 / std::numbers::pi;
// sup |tanh''| = 4 / (3 sqrt 3).
constexpr double kTanh2 = 0.769800358919501;

struct ArityError {
    static void check(std::string_view family, std::size_t got, std::size_t want) {
        if (got != want && got != 0)
            throw InvalidArgument("coefficients", std::string(family) + " expects " + std::to_string(want) +
                                                      " parameters, got " + std::to_string(got));
    }
};

// Bounds for r(x) = (1 + a tanh x) / (1 + c tanh x) with |a|, |c| < 1.
struct RatioBounds {
    double rmin, rmax, r1, r2;
};

RatioBounds ratio_bounds(double a, double c) {
    const double ac = std::abs(c);
    RatioBounds r{};
    r.rmin = (1.0 - std::abs(a)) / (1.0 + ac);
    r.rmax = (1.0 + std::abs(a)) / (1.0 - ac);
    const double diff = std::abs(a - c);
    r.r1 = diff / ((1.0 - ac) * (1.0 - ac));
    r.r2 = diff * (kTanh2 * (1.0 + ac) + 2.0 * ac) / std::pow(1.0 - ac, 3);
    return r;
}

// Derivative bounds for q(u, x) = (N(u) / R(u)) r(x) and for sqrt(2 q).
struct FieldBounds {
    double du, dx, dxx;
};

FieldBounds quotient_field(const FastTemplate& n, const FastTemplate& rho, const RatioBounds& r) {
    const double kmax = n.abs_max() / rho.lower();
    FieldBounds f{};
    f.du = (n.slope_bound() / rho.lower() + n.abs_max() * rho.slope_bound() / (rho.lower() * rho.lower())) * r.rmax;
    f.dx = kmax * r.r1;
    f.dxx = kmax * r.r2;
    return f;
}

FieldBounds sqrt_field(const FastTemplate& n, const FastTemplate& rho, const RatioBounds& r) {
    const FieldBounds q = quotient_field(n, rho, r);
    const double qmin = n.lower() / rho.upper() * r.rmin;
    const double kmax = n.abs_max() / rho.lower();
    FieldBounds f{};
    f.du = q.du / std::sqrt(2.0 * qmin);
    f.dx = q.dx / std::sqrt(2.0 * qmin);
    f.dxx = std::sqrt(2.0 * kmax) * (r.r2 / (2.0 * std::sqrt(r.rmin)) + r.r1 * r.r1 / (4.0 * std::pow(r.rmin, 1.5)));
    return f;
}

DeclaredBounds template_bounds(const TemplateParams& p, int d) {
    const double mr = std::abs(p.m_rho);
    const double rho_min = p.rho.lower() * (1.0 - mr);
    const double rho_max = p.rho.upper() * (1.0 + mr);

    DeclaredBounds b;
    b.c1 = 1.0 / rho_max;
    b.c2 = 1.0 / rho_min;

    const double b_max = p.rho_b.abs_max() * (1.0 + std::abs(p.m_b)) / rho_min;
    const double a_max = p.rho_a.upper() * (1.0 + std::abs(p.m_a)) / rho_min;
    const double a_min = p.rho_a.lower() * (1.0 - std::abs(p.m_a)) / rho_max;
    b.lambda = 2.0 * a_min;
    b.c3 = std::sqrt(b.c2 * b.c2 + d * a_max * a_max) + d * b_max * b_max;

    const FastTemplate one{1.0, 0.0, 0.0};
    const FieldBounds phi = sqrt_field(one, p.rho, ratio_bounds(0.0, p.m_rho));
    const FieldBounds drift = quotient_field(p.rho_b, p.rho, ratio_bounds(p.m_b, p.m_rho));
    const FieldBounds sig = sqrt_field(p.rho_a, p.rho, ratio_bounds(p.m_a, p.m_rho));
    for (const auto& f : {phi, drift, sig}) {
        b.lipschitz = std::max(b.lipschitz, std::hypot(f.du, f.dx));
        b.x2_first = std::max(b.x2_first, f.dx);
        b.x2_second = std::max(b.x2_second, f.dxx);
    }

    const double q = p.rho_f1.abs_max();
    b.f_bound = (p.rho_f0.abs_max() + q) / rho_min;
    b.f_y_lipschitz = q / rho_min;
    b.f_y_second = kTanh2 * q / rho_min;
    b.rho_f_derivative = q;
    return b;
}

double lerp(double a, double b, double t) { return a + (b - a) * t; }

}  // namespace

// -- names -------------------------------------------------------------------

std::string_view to_string(FamilyId id) {
    switch (id) {
        case FamilyId::constant: return "constant";
        case FamilyId::switching: return "switch";
        case FamilyId::oscillating: return "oscillating";
        case FamilyId::template_: return "template";
        case FamilyId::tabulated: return "tabulated";
    }
    return "unknown";
}

FamilyId family_id_from_string(std::string_view name) {
    for (auto id : {FamilyId::constant, FamilyId::switching, FamilyId::oscillating, FamilyId::template_,
                    FamilyId::tabulated})
        if (to_string(id) == name) return id;
    throw InvalidArgument("coefficients", "unknown family_id '" + std::string(name) + "'");
}

// -- Terminal ------------------------------------------------------------------

double Terminal::operator()(double x1, std::span<const double> x2) const {
    switch (kind) {
        case Kind::constant: return params[0];
        case Kind::bump: {
            double r2 = x1 * x1;
            for (double v : x2) r2 += v * v;
            return params[0] + params[1] * std::exp(-r2 / (2.0 * params[2] * params[2]));
        }
        case Kind::tanh: {
            double s = 0.0;
            for (double v : x2) s += v;
            return params[0] + params[1] * std::tanh(params[2] * x1 + params[3] * s);
        }
    }
    return 0.0;
}

double Terminal::sup_norm() const {
    if (kind == Kind::constant) return std::abs(params[0]);
    return std::abs(params[0]) + std::abs(params[1]);
}

Terminal Terminal::shifted(double delta) const {
    Terminal t = *this;
    t.params[0] += delta;
    return t;
}

Terminal Terminal::from_name(std::string_view kind, std::vector<double> params) {
    Terminal t;
    std::size_t want = 0;
    if (kind == "constant") {
        t.kind = Kind::constant;
        want = 1;
    } else if (kind == "bump") {
        t.kind = Kind::bump;
        want = 3;
    } else if (kind == "tanh") {
        t.kind = Kind::tanh;
        want = 4;
    } else {
        throw InvalidArgument("coefficients", "unknown terminal kind '" + std::string(kind) + "'");
    }
    if (params.size() != want)
        throw InvalidArgument("coefficients", "terminal '" + std::string(kind) + "' expects " +
                                                  std::to_string(want) + " parameters");
    for (double v : params)
        if (!std::isfinite(v)) throw InvalidArgument("coefficients", "terminal parameters must be finite");
    if (t.kind == Kind::bump && params[2] <= 0.0) throw InvalidArgument("coefficients", "bump width must be positive");
    t.params = std::move(params);
    return t;
}

std::string_view Terminal::kind_name() const {
    switch (kind) {
        case Kind::constant: return "constant";
        case Kind::bump: return "bump";
        case Kind::tanh: return "tanh";
    }
    return "unknown";
}

// -- FastTemplate --------------------------------------------------------------

double FastTemplate::operator()(double u) const {
    return at(kTwoOverPi * std::atan(u), c2 == 0.0 ? 0.0 : std::sin(u));
}
double FastTemplate::lower() const { return c0 - std::abs(c1) - std::abs(c2); }
double FastTemplate::upper() const { return c0 + std::abs(c1) + std::abs(c2); }
double FastTemplate::abs_max() const { return std::abs(c0) + std::abs(c1) + std::abs(c2); }
double FastTemplate::slope_bound() const { return std::abs(c1) * kTwoOverPi + std::abs(c2); }

TemplateParams TemplateParams::from_vector(std::span<const double> p) {
    if (p.size() != arity)
        throw InvalidArgument("coefficients", "template expects 18 parameters, got " + std::to_string(p.size()));
    TemplateParams t;
    t.rho = {p[0], p[1], p[2]};
    t.m_rho = p[3];
    t.rho_b = {p[4], p[5], p[6]};
    t.m_b = p[7];
    t.rho_a = {p[8], p[9], p[10]};
    t.m_a = p[11];
    t.rho_f0 = {p[12], p[13], p[14]};
    t.rho_f1 = {p[15], p[16], p[17]};
    return t;
}

std::vector<double> TemplateParams::to_vector() const {
    return {rho.c0,    rho.c1,    rho.c2,    m_rho,     rho_b.c0,  rho_b.c1,  rho_b.c2,  m_b,       rho_a.c0,
            rho_a.c1,  rho_a.c2,  m_a,       rho_f0.c0, rho_f0.c1, rho_f0.c2, rho_f1.c0, rho_f1.c1, rho_f1.c2};
}

// -- TableData -----------------------------------------------------------------

void TableData::validate() const {
    if (n1 < 2 || n2 < 2) throw InvalidArgument("coefficients", "table needs at least 2 nodes per axis");
    if (!(x1_max > x1_min) || !(x2_max > x2_min)) throw InvalidArgument("coefficients", "empty table range");
    const std::size_t n = n1 * n2;
    for (const auto* v : {&a00, &b, &a11, &f0, &f1}) {
        if (v->size() != n) throw InvalidArgument("coefficients", "table arrays must hold n1*n2 values");
        for (double x : *v)
            if (!std::isfinite(x)) throw InvalidArgument("coefficients", "table values must be finite");
    }
    for (double x : a00)
        if (x < 0.0) throw InvalidArgument("coefficients", "table a00 must be non-negative");
    for (double x : a11)
        if (x < 0.0) throw InvalidArgument("coefficients", "table a11 must be non-negative");
}

double CoefficientValues::f(double y) const { return f_base + f_slope * std::tanh(y); }

// -- CoefficientFamily -----------------------------------------------------------

struct CoefficientFamily::Impl {
    FamilyId id{};
    std::vector<double> params;
    int d = 1;
    Terminal terminal;
    DeclaredBounds bounds;
    std::optional<TemplateParams> tp;
    std::optional<TableData> table;
    bool x1_independent = false;
    mutable std::atomic<std::uint64_t> clamps{0};

    Impl() = default;
    Impl(const Impl& o)
        : id(o.id), params(o.params), d(o.d), terminal(o.terminal), bounds(o.bounds), tp(o.tp), table(o.table),
          x1_independent(o.x1_independent), clamps(0) {}

    // Bilinear table look-up of the five stored fields at (u, x).
    struct Cell {
        double a00, b, a11, f0, f1;
    };

    Cell lookup(double u, double x) const {
        const TableData& t = *table;
        const double h1 = (t.x1_max - t.x1_min) / static_cast<double>(t.n1 - 1);
        const double h2 = (t.x2_max - t.x2_min) / static_cast<double>(t.n2 - 1);
        if (u < t.x1_min || u > t.x1_max || x < t.x2_min || x > t.x2_max)
            clamps.fetch_add(1, std::memory_order_relaxed);
        const double su = (std::clamp(u, t.x1_min, t.x1_max) - t.x1_min) / h1;
        const double sx = (std::clamp(x, t.x2_min, t.x2_max) - t.x2_min) / h2;
        const auto i = std::min(static_cast<std::size_t>(su), t.n1 - 2);
        const auto j = std::min(static_cast<std::size_t>(sx), t.n2 - 2);
        const double fu = su - static_cast<double>(i);
        const double fx = sx - static_cast<double>(j);
        auto bil = [&](const std::vector<double>& v) {
            const double lo = lerp(v[i * t.n2 + j], v[i * t.n2 + j + 1], fx);
            const double hi = lerp(v[(i + 1) * t.n2 + j], v[(i + 1) * t.n2 + j + 1], fx);
            return lerp(lo, hi, fu);
        };
        return {bil(t.a00), bil(t.b), bil(t.a11), bil(t.f0), bil(t.f1)};
    }
};

namespace {

DeclaredBounds table_bounds(const TableData& t) {
    const auto [a_lo, a_hi] = std::minmax_element(t.a00.begin(), t.a00.end());
    const auto [s_lo, s_hi] = std::minmax_element(t.a11.begin(), t.a11.end());
    auto abs_max = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    };
    const double h1 = (t.x1_max - t.x1_min) / static_cast<double>(t.n1 - 1);
    const double h2 = (t.x2_max - t.x2_min) / static_cast<double>(t.n2 - 1);
    // Largest cell slopes along each axis.
    auto slopes = [&](const std::vector<double>& v) {
        double su = 0.0, sx = 0.0;
        for (std::size_t i = 0; i < t.n1; ++i)
            for (std::size_t j = 0; j < t.n2; ++j) {
                if (i + 1 < t.n1) su = std::max(su, std::abs(v[(i + 1) * t.n2 + j] - v[i * t.n2 + j]) / h1);
                if (j + 1 < t.n2) sx = std::max(sx, std::abs(v[i * t.n2 + j + 1] - v[i * t.n2 + j]) / h2);
            }
        return std::pair{su, sx};
    };

    DeclaredBounds b;
    b.c1 = *a_lo;
    b.c2 = *a_hi;
    b.lambda = 2.0 * *s_lo;
    const double b_max = abs_max(t.b);
    b.c3 = std::hypot(*a_hi, *s_hi) + b_max * b_max;

    const auto [au, ax] = slopes(t.a00);
    const auto [bu, bx] = slopes(t.b);
    const auto [su, sx] = slopes(t.a11);
    const double inf = std::numeric_limits<double>::infinity();
    const double phi_scale = *a_lo > 0.0 ? 1.0 / std::sqrt(2.0 * *a_lo) : inf;
    const double sig_scale = *s_lo > 0.0 ? 1.0 / std::sqrt(2.0 * *s_lo) : inf;
    b.lipschitz = std::max({std::hypot(au, ax) * phi_scale, std::hypot(bu, bx), std::hypot(su, sx) * sig_scale});
    b.x2_first = std::max({ax * phi_scale, bx, sx * sig_scale});
    b.x2_second = 0.0;
    b.smooth_in_x2 = false;

    const double q = abs_max(t.f1);
    b.f_bound = abs_max(t.f0) + q;
    b.f_y_lipschitz = q;
    b.f_y_second = kTanh2 * q;
    if (*a_lo > 0.0) {
        std::vector<double> rf0(t.f0.size()), rf1(t.f1.size());
        for (std::size_t n = 0; n < rf0.size(); ++n) {
            rf0[n] = t.f0[n] / t.a00[n];
            rf1[n] = t.f1[n] / t.a00[n];
        }
        b.rho_f_derivative = std::max(slopes(rf0).second + slopes(rf1).second, abs_max(rf1));
    } else {
        b.rho_f_derivative = inf;
    }
    return b;
}

}  // namespace

CoefficientFamily CoefficientFamily::make(FamilyId id, std::vector<double> params, int d, Terminal terminal,
                                          std::optional<TableData> table) {
    if (d < 1 || d + 1 > kMaxDim)
        throw InvalidArgument("coefficients", "d must lie in [1, " + std::to_string(kMaxDim - 1) + "]");
    for (double v : params)
        if (!std::isfinite(v)) throw InvalidArgument("coefficients", "parameters must be finite");

    auto impl = std::make_shared<Impl>();
    impl->id = id;
    impl->d = d;
    impl->terminal = std::move(terminal);

    switch (id) {
        case FamilyId::constant: {
            ArityError::check("constant", params.size(), 4);
            if (params.empty()) params = {0.0, 1.0, 0.0, 0.0};
            if (params[1] == 0.0) throw InvalidArgument("coefficients", "constant family needs s != 0");
            TemplateParams t;
            t.rho = {1.0, 0.0, 0.0};
            t.rho_b = {params[0], 0.0, 0.0};
            t.rho_a = {0.5 * params[1] * params[1], 0.0, 0.0};
            t.rho_f0 = {params[2], 0.0, 0.0};
            t.rho_f1 = {params[3], 0.0, 0.0};
            impl->tp = t;
            break;
        }
        case FamilyId::switching: {
            ArityError::check("switch", params.size(), 6);
            if (params.empty()) params = {0.2, 0.4, 0.0, -0.5, -0.25, 0.0};
            TemplateParams t;
            t.rho = {2.0, 1.0, 0.0};
            t.rho_b = {1.0, 1.0, 0.0};
            t.rho_a = {1.0, 0.5, 0.0};
            t.rho_f0 = {params[0], params[1], params[2]};
            t.rho_f1 = {params[3], params[4], params[5]};
            impl->tp = t;
            break;
        }
        case FamilyId::oscillating: {
            ArityError::check("oscillating", params.size(), 0);
            TemplateParams t;
            t.rho = {2.0, 0.5, 0.5};
            t.m_rho = 0.3;
            t.rho_b = {0.5, 0.5, 0.3};
            t.m_b = 0.2;
            t.rho_a = {1.0, 0.3, 0.2};
            t.m_a = 0.2;
            t.rho_f0 = {0.1, 0.3, 0.4};
            t.rho_f1 = {-0.4, 0.1, 0.1};
            impl->tp = t;
            break;
        }
        case FamilyId::template_: {
            impl->tp = TemplateParams::from_vector(params);
            break;
        }
        case FamilyId::tabulated: {
            ArityError::check("tabulated", params.size(), 0);
            if (!table) throw InvalidArgument("coefficients", "tabulated family needs a table");
            if (d != 1) throw InvalidArgument("coefficients", "tabulated family requires d = 1");
            table->validate();
            impl->table = std::move(table);
            break;
        }
    }
    impl->params = std::move(params);

    if (impl->tp) {
        const TemplateParams& t = *impl->tp;
        for (double m : {t.m_rho, t.m_b, t.m_a})
            if (!(std::abs(m) < 1.0)) throw InvalidArgument("coefficients", "modulation amplitudes must be below 1");
        if (!(t.rho.lower() > 0.0)) throw InvalidArgument("coefficients", "rho template must be bounded below by a positive constant");
        if (!(t.rho_a.lower() > 0.0)) throw InvalidArgument("coefficients", "rho*a template must be bounded below by a positive constant");
        impl->bounds = template_bounds(t, d);
        impl->x1_independent =
            t.rho.constant() && t.rho_b.constant() && t.rho_a.constant() && t.rho_f0.constant() && t.rho_f1.constant();
    } else {
        const TableData& t = *impl->table;
        impl->bounds = table_bounds(t);
        bool same = true;
        for (std::size_t i = 1; i < t.n1 && same; ++i)
            for (std::size_t j = 0; j < t.n2 && same; ++j)
                for (const auto* v : {&t.a00, &t.b, &t.a11, &t.f0, &t.f1})
                    if ((*v)[i * t.n2 + j] != (*v)[j]) same = false;
        impl->x1_independent = same;
    }
    impl->bounds.h_bound = impl->terminal.sup_norm();
    return CoefficientFamily(std::move(impl));
}

FamilyId CoefficientFamily::id() const { return impl_->id; }
int CoefficientFamily::d() const { return impl_->d; }
std::span<const double> CoefficientFamily::params() const { return impl_->params; }
const Terminal& CoefficientFamily::terminal() const { return impl_->terminal; }
const DeclaredBounds& CoefficientFamily::bounds() const { return impl_->bounds; }
const std::optional<TemplateParams>& CoefficientFamily::template_params() const { return impl_->tp; }
const std::optional<TableData>& CoefficientFamily::table() const { return impl_->table; }
bool CoefficientFamily::x1_independent() const { return impl_->x1_independent; }
std::uint64_t CoefficientFamily::clamp_count() const { return impl_->clamps.load(); }

CoefficientFamily CoefficientFamily::with_terminal(Terminal t) const {
    auto impl = std::make_shared<Impl>(*impl_);
    impl->terminal = std::move(t);
    impl->bounds.h_bound = impl->terminal.sup_norm();
    return CoefficientFamily(std::move(impl));
}

CoefficientFamily CoefficientFamily::with_bounds(const DeclaredBounds& b) const {
    auto impl = std::make_shared<Impl>(*impl_);
    impl->bounds = b;
    return CoefficientFamily(std::move(impl));
}

double CoefficientFamily::rho(double u, std::span<const double> x2) const {
    if (impl_->tp) return impl_->tp->rho(u) * (1.0 + impl_->tp->m_rho * std::tanh(x2[0]));
    return 1.0 / impl_->lookup(u, x2[0]).a00;
}

double CoefficientFamily::rho_driver(double u, std::span<const double> x2, double y) const {
    if (impl_->tp) {
        const TemplateParams& t = *impl_->tp;
        const double a = kTwoOverPi * std::atan(u);
        const double s = std::sin(u);
        return t.rho_f0.at(a, s) + t.rho_f1.at(a, s) * std::tanh(y);
    }
    const auto c = impl_->lookup(u, x2[0]);
    return (c.f0 + c.f1 * std::tanh(y)) / c.a00;
}

double CoefficientFamily::driver(double u, std::span<const double> x2, double y) const {
    if (impl_->tp) {
        const TemplateParams& t = *impl_->tp;
        const double a = kTwoOverPi * std::atan(u);
        const double s = std::sin(u);
        const double r = t.rho.at(a, s) * (1.0 + t.m_rho * std::tanh(x2[0]));
        return (t.rho_f0.at(a, s) + t.rho_f1.at(a, s) * std::tanh(y)) / r;
    }
    const auto c = impl_->lookup(u, x2[0]);
    return c.f0 + c.f1 * std::tanh(y);
}

void CoefficientFamily::forward_coefficients(double u, std::span<const double> x2, double& phi, SmallVec& b1,
                                             SmallVec& sigma1_diag) const {
    const int d = impl_->d;
    b1.resize(d);
    sigma1_diag.resize(d);
    if (impl_->tp) {
        const TemplateParams& t = *impl_->tp;
        const double a = kTwoOverPi * std::atan(u);
        const double s = std::sin(u);
        const double th = std::tanh(x2[0]);
        const double inv_rho = 1.0 / (t.rho.at(a, s) * (1.0 + t.m_rho * th));
        phi = std::sqrt(2.0 * inv_rho);
        const double bi = t.rho_b.at(a, s) * (1.0 + t.m_b * th) * inv_rho;
        const double si = std::sqrt(2.0 * t.rho_a.at(a, s) * (1.0 + t.m_a * th) * inv_rho);
        b1.setConstant(bi);
        sigma1_diag.setConstant(si);
        return;
    }
    const auto c = impl_->lookup(u, x2[0]);
    phi = std::sqrt(2.0 * c.a00);
    b1[0] = c.b;
    sigma1_diag[0] = std::sqrt(2.0 * c.a11);
}

CoefficientValues CoefficientFamily::eval(double x1, std::span<const double> x2, std::optional<double> eps) const {
    if (static_cast<int>(x2.size()) != impl_->d)
        throw InvalidArgument("coefficients", "x2 has dimension " + std::to_string(x2.size()) + ", expected " +
                                                  std::to_string(impl_->d));
    if (eps && !(*eps > 0.0)) throw InvalidArgument("coefficients", "eps must be positive");
    const double u = eps ? x1 / *eps : x1;
    const int d = impl_->d;

    CoefficientValues v;
    SmallVec sd;
    forward_coefficients(u, x2, v.phi, v.b1, sd);
    v.a00 = 0.5 * v.phi * v.phi;
    v.rho = 1.0 / v.a00;
    v.sigma1 = SmallMat::Zero(d, d);
    v.a1 = SmallMat::Zero(d, d);
    for (int i = 0; i < d; ++i) {
        v.sigma1(i, i) = sd[i];
        v.a1(i, i) = 0.5 * sd[i] * sd[i];
    }
    if (impl_->tp) {
        const TemplateParams& t = *impl_->tp;
        const double r = rho(u, x2);
        v.f_base = t.rho_f0(u) / r;
        v.f_slope = t.rho_f1(u) / r;
    } else {
        const auto c = impl_->lookup(u, x2[0]);
        v.f_base = c.f0;
        v.f_slope = c.f1;
    }
    v.H = impl_->terminal(x1, x2);
    return v;
}

std::size_t CoefficientFamily::product_count(std::size_t n_y) const {
    const auto d = static_cast<std::size_t>(impl_->d);
    return 1 + d + d * (d + 1) / 2 + n_y;
}

void CoefficientFamily::rho_products(double u, std::span<const double> x2, std::span<const double> ys,
                                     std::span<double> out) const {
    const auto d = static_cast<std::size_t>(impl_->d);
    std::size_t n = 0;
    if (impl_->tp) {
        const TemplateParams& t = *impl_->tp;
        const double a = kTwoOverPi * std::atan(u);
        const double s = std::sin(u);
        const double th = std::tanh(x2[0]);
        out[n++] = t.rho.at(a, s) * (1.0 + t.m_rho * th);
        const double rb = t.rho_b.at(a, s) * (1.0 + t.m_b * th);
        for (std::size_t i = 0; i < d; ++i) out[n++] = rb;
        const double ra = t.rho_a.at(a, s) * (1.0 + t.m_a * th);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i; j < d; ++j) out[n++] = i == j ? ra : 0.0;
        const double p = t.rho_f0.at(a, s);
        const double q = t.rho_f1.at(a, s);
        for (double y : ys) out[n++] = p + q * std::tanh(y);
        return;
    }
    const auto c = impl_->lookup(u, x2[0]);
    const double r = 1.0 / c.a00;
    out[n++] = r;
    out[n++] = r * c.b;
    out[n++] = r * c.a11;
    for (double y : ys) out[n++] = r * (c.f0 + c.f1 * std::tanh(y));
}

CoefficientFamily::ProductPlan CoefficientFamily::make_plan(std::span<const double> x2_points,
                                                            std::span<const double> ys) const {
    const auto d = static_cast<std::size_t>(impl_->d);
    if (x2_points.size() % d != 0) throw InvalidArgument("coefficients", "x2 point list is not a multiple of d");
    ProductPlan plan;
    plan.n_points = x2_points.size() / d;
    plan.x2.assign(x2_points.begin(), x2_points.end());
    plan.ys.assign(ys.begin(), ys.end());
    for (double y : ys) plan.tanh_ys.push_back(std::tanh(y));
    if (impl_->tp) {
        const TemplateParams& t = *impl_->tp;
        for (std::size_t p = 0; p < plan.n_points; ++p) {
            const double th = std::tanh(plan.x2[p * d]);
            plan.mod_rho.push_back(1.0 + t.m_rho * th);
            plan.mod_b.push_back(1.0 + t.m_b * th);
            plan.mod_a.push_back(1.0 + t.m_a * th);
        }
    }
    return plan;
}

void CoefficientFamily::rho_products(double u, const ProductPlan& plan, std::span<double> out) const {
    const auto d = static_cast<std::size_t>(impl_->d);
    const std::size_t ny = plan.ys.size();
    const std::size_t stride = product_count(ny);
    if (impl_->tp) {
        const TemplateParams& t = *impl_->tp;
        const double a = kTwoOverPi * std::atan(u);
        const double s = std::sin(u);
        const double r = t.rho.at(a, s), rb = t.rho_b.at(a, s), ra = t.rho_a.at(a, s);
        const double p0 = t.rho_f0.at(a, s), q0 = t.rho_f1.at(a, s);
        for (std::size_t p = 0; p < plan.n_points; ++p) {
            double* o = out.data() + p * stride;
            std::size_t n = 0;
            o[n++] = r * plan.mod_rho[p];
            for (std::size_t i = 0; i < d; ++i) o[n++] = rb * plan.mod_b[p];
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = i; j < d; ++j) o[n++] = i == j ? ra * plan.mod_a[p] : 0.0;
            for (std::size_t k = 0; k < ny; ++k) o[n++] = p0 + q0 * plan.tanh_ys[k];
        }
        return;
    }
    for (std::size_t p = 0; p < plan.n_points; ++p) {
        const auto c = impl_->lookup(u, plan.x2[p * d]);
        const double r = 1.0 / c.a00;
        double* o = out.data() + p * stride;
        o[0] = r;
        o[1] = r * c.b;
        o[2] = r * c.a11;
        for (std::size_t k = 0; k < ny; ++k) o[3 + k] = r * (c.f0 + c.f1 * plan.tanh_ys[k]);
    }
}

}  // namespace hmg
