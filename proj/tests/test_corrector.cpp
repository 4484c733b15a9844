#include <doctest.h>

#include "hmg/corrector.hpp"

#include <cmath>
#include <numbers>
#include <vector>

using namespace hmg;

namespace {

const double kPi = std::numbers::pi;

CoefficientFamily switch_family(int d = 1) { return CoefficientFamily::make(FamilyId::switching, {}, d); }

AveragedModel averaged(const CoefficientFamily& fam) {
    if (fam.has_closed_form()) return AveragedModel::from_template(*fam.template_params(), fam.d());
    return build_averaged(fam, default_y_grid(), 1e-4);
}

TableData fast_table() {
    TableData t;
    t.x1_min = -6.0;
    t.x1_max = 6.0;
    t.n1 = 13;
    t.x2_min = -1.0;
    t.x2_max = 1.0;
    t.n2 = 3;
    for (std::size_t i = 0; i < t.n1; ++i)
        for (std::size_t j = 0; j < t.n2; ++j) {
            t.a00.push_back(i % 2 ? 0.5 : 1.0);
            t.b.push_back(0.1 * static_cast<double>(j));
            t.a11.push_back(0.5);
            t.f0.push_back(i % 3 ? 0.2 : -0.1);
            t.f1.push_back(-0.3);
        }
    return t;
}

std::vector<CoefficientFamily> catalog() {
    return {CoefficientFamily::make(FamilyId::constant, {0.2, 1.1, 0.3, -0.4}, 1), switch_family(),
            CoefficientFamily::make(FamilyId::oscillating, {}, 1),
            CoefficientFamily::make(FamilyId::template_,
                                    {1.5, 0.5, 0.3, 0.1, 0.2, 0.3, 0.1, 0.1, 0.8, 0.2, 0.1, 0.1, 0.0, 0.3, 0.2,
                                     -0.2, 0.1, 0.1},
                                    1),
            CoefficientFamily::make(FamilyId::tabulated, {}, 1, {}, fast_table())};
}

// Composite Simpson rule with n (even) intervals.
template <class F>
double simpson(F f, double a, double b, std::size_t n) {
    const double h = (b - a) / static_cast<double>(n);
    double s = f(a) + f(b);
    for (std::size_t i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + h * static_cast<double>(i));
    return s * h / 3.0;
}

const std::vector<double> kX2{0.0};

}  // namespace

TEST_CASE("boundary conditions hold exactly") {
    const auto fam = switch_family();
    const CorrectorField field(fam, averaged(fam), 0.1);
    CHECK(corrector_value(field, 0.0, kX2, 0.3) == 0.0);
    CHECK(corrector_dx1(field, 0.0, kX2, 0.3) == 0.0);
}

TEST_CASE("fast-independent driver gives a zero corrector") {
    const auto fam = CoefficientFamily::make(FamilyId::constant, {0.2, 1.1, 0.3, -0.4}, 1);
    const CorrectorField field(fam, averaged(fam), 0.05);
    for (double x1 : {-2.0, -0.3, 0.7, 2.0})
        for (double y : {-1.0, 0.5}) {
            CHECK(std::abs(corrector_dx1(field, x1, kX2, y)) < 1e-12);
            CHECK(std::abs(corrector_value(field, x1, kX2, y)) < 1e-12);
        }
    ResidualSample s;
    s.lo = {-2.0, -1.0};
    s.hi = {2.0, 1.0};
    CHECK(residual_check(field, s).max_residual <= 1e-10);
}

TEST_CASE("derivative matches a Simpson oracle") {
    const auto fam = switch_family();
    const double eps = 0.1;
    const CorrectorField field(fam, averaged(fam), eps);
    // Switch driver at x2 = 0, y = 0: rho = 2 + A(u), rho f = 0.2 + 0.4 A(u),
    // with A = (2/pi) atan; f_bar on the plus side is 0.6 / 3.
    const auto integrand = [eps](double t) {
        const double u = t / eps;
        const double a = 2.0 / kPi * std::atan(u);
        return 0.2 + 0.4 * a - 0.2 * (2.0 + a);
    };
    const double oracle = simpson(integrand, 0.0, 1.0, 1000000);
    CHECK(corrector_dx1(field, 1.0, kX2, 0.0) == doctest::Approx(oracle).epsilon(1e-6));
    // V(x1) = int_0^x1 (x1 - t) rho g dt.
    const double v_oracle = simpson([&](double t) { return (1.0 - t) * integrand(t); }, 0.0, 1.0, 1000000);
    CHECK(corrector_value(field, 1.0, kX2, 0.0) == doctest::Approx(v_oracle).epsilon(1e-6));
}

TEST_CASE("corrector magnitude decreases with eps") {
    const auto fam = switch_family();
    const auto avg = averaged(fam);
    double prev = 1e300;
    for (double eps : {1.0, 0.1, 0.01}) {
        const CorrectorField field(fam, avg, eps);
        const double v = std::abs(corrector_value(field, 1.0, kX2, 0.0));
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("cache reuse does not change values") {
    const auto fam = switch_family();
    const auto avg = averaged(fam);
    const CorrectorField warm(fam, avg, 0.01);
    const double far = corrector_value(warm, -1.9, kX2, 0.2);
    const double v1 = corrector_value(warm, -1.3, kX2, 0.2);
    const CorrectorField cold(fam, avg, 0.01);
    const double v2 = corrector_value(cold, -1.3, kX2, 0.2);
    CHECK(v1 == doctest::Approx(v2).epsilon(1e-10));
    CHECK(std::isfinite(far));
}

TEST_CASE("ODE residual passes on every catalog family") {
    for (const auto& fam : catalog()) {
        const CorrectorField field(fam, averaged(fam), 0.5);
        ResidualSample s;
        s.lo = {-2.0, -1.0};
        s.hi = {2.0, 1.0};
        const auto rep = residual_check(field, s);
        INFO(to_string(fam.id()));
        CHECK(rep.pass);
        CHECK(rep.n_points == 100);
        CHECK(rep.witness.size() == 3);
    }
}

TEST_CASE("second differences converge at second order") {
    const auto fam = switch_family();
    const CorrectorField field(fam, averaged(fam), 0.5);
    ResidualSample s;
    s.lo = {0.7, 0.2};
    s.hi = {0.7, 0.2};
    s.y_lo = s.y_hi = 0.3;
    s.n_points = 1;
    s.h_factor = 0.2;
    const double coarse = residual_check(field, s).max_residual;
    s.h_factor = 0.1;
    const double fine = residual_check(field, s).max_residual;
    CHECK(coarse / fine >= 3.0);
    CHECK(coarse / fine <= 5.0);
}

TEST_CASE("corrector scales like x1^2 (1 + |x2|^2 + y^2)") {
    const auto fam = CoefficientFamily::make(FamilyId::oscillating, {}, 1);
    const CorrectorField field(fam, averaged(fam), 0.2);
    auto ratio_sup = [&](unsigned long long seed) {
        double c = 0.0;
        for (std::size_t i = 0; i < 200; ++i) {
            const auto u = halton_point(i, 3, seed);
            const double x1 = -2.0 + 4.0 * u[0];
            const std::vector<double> x2{-1.0 + 2.0 * u[1]};
            const double y = -1.0 + 2.0 * u[2];
            const double v = corrector_value(field, x1, x2, y);
            c = std::max(c, std::abs(v) / (x1 * x1 * (1.0 + x2[0] * x2[0] + y * y)));
        }
        return c;
    };
    const double fitted = ratio_sup(1);
    CHECK(std::isfinite(fitted));
    CHECK(ratio_sup(2) <= 2.0 * fitted);
}

TEST_CASE("decay table") {
    auto box = reference_box(1);
    box.n_grid = 11;
    SUBCASE("fast-independent driver gives an all-zero table") {
        const auto fam = CoefficientFamily::make(FamilyId::constant, {0.2, 1.1, 0.3, -0.4}, 1);
        const std::vector<double> eps{1.0, 0.1};
        const auto t = decay_table(fam, averaged(fam), eps, box);
        for (const auto& r : t.rows) {
            CHECK(r.sup_V < 1e-12);
            CHECK(r.sup_beta < 1e-12);
            CHECK(r.sup_alpha < 1e-12);
        }
    }
    SUBCASE("switch driver decays") {
        const auto fam = switch_family();
        const std::vector<double> eps{1.0, 0.1, 0.03, 0.01};
        const auto t = decay_table(fam, averaged(fam), eps, box);
        MESSAGE(t.to_csv());
        CHECK(t.rows.back().sup_V <= 0.2 * t.rows.front().sup_V);
        CHECK(t.v_nonincreasing);
        CHECK(t.beta_decreasing);
        CHECK(t.to_csv().rfind("eps,sup_V,sup_beta,sup_alpha,grid_spec\n", 0) == 0);
    }
    SUBCASE("catalog families with fast dependence decay monotonically") {
        const std::vector<double> eps{1.0, 0.1, 0.03, 0.01};
        for (const auto& fam : catalog()) {
            if (fam.x1_independent()) continue;
            INFO(to_string(fam.id()));
            CHECK(decay_table(fam, averaged(fam), eps, box).v_nonincreasing);
        }
    }
    SUBCASE("eps list must decrease") {
        const auto fam = switch_family();
        const std::vector<double> eps{0.1, 1.0};
        CHECK_THROWS_AS(decay_table(fam, averaged(fam), eps, box), InvalidArgument);
    }
}

TEST_CASE("decay table is independent of the thread count") {
    const auto fam = switch_family();
    const auto avg = averaged(fam);
    DecayBox box;
    box.lo = {-1.0, -1.0};
    box.hi = {1.0, 1.0};
    box.n_grid = 9;
    const std::vector<double> eps{0.5, 0.05};
    set_thread_count(1);
    const auto a = decay_table(fam, avg, eps, box).to_csv();
    set_thread_count(3);
    const auto b = decay_table(fam, avg, eps, box).to_csv();
    set_thread_count(1);
    CHECK(a == b);
}
