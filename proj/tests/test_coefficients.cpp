#include <doctest.h>

#include "hmg/averaged.hpp"
#include "hmg/coefficients.hpp"

#include <cmath>
#include <numbers>
#include <vector>

using namespace hmg;

namespace {

const double kPi = std::numbers::pi;

// Running average of (2/pi) atan on [0, X] from its antiderivative.
double atan_running_average(double x) {
    return 2.0 / kPi * (x * std::atan(x) - 0.5 * std::log1p(x * x)) / x;
}

CoefficientFamily switch_family(int d = 1) { return CoefficientFamily::make(FamilyId::switching, {}, d); }

TableData small_table(bool x1_dependent) {
    TableData t;
    t.x1_min = -4.0;
    t.x1_max = 4.0;
    t.n1 = 5;
    t.x2_min = -1.0;
    t.x2_max = 1.0;
    t.n2 = 3;
    for (std::size_t i = 0; i < t.n1; ++i)
        for (std::size_t j = 0; j < t.n2; ++j) {
            const double s = x1_dependent ? (i < 2 ? 0.5 : 1.0) : 1.0;
            t.a00.push_back(s);
            t.b.push_back(0.1 * static_cast<double>(j));
            t.a11.push_back(0.5);
            t.f0.push_back(x1_dependent ? 0.2 * static_cast<double>(i) - 0.4 : 0.1);
            t.f1.push_back(-0.3);
        }
    return t;
}

}  // namespace

TEST_CASE("constant family with a00 = 1 has phi = sqrt 2") {
    const auto fam = CoefficientFamily::make(FamilyId::constant, {0.0, 1.0, 0.0, 0.0}, 1);
    for (double x1 : {-3.0, 0.0, 7.5}) {
        const std::vector<double> x2{0.4};
        const auto v = fam.eval(x1, x2);
        CHECK(v.phi == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
        CHECK(v.a00 == doctest::Approx(1.0).epsilon(1e-15));
    }
    CHECK(fam.x1_independent());
}

TEST_CASE("switch family a00 at the origin and at a scaled point") {
    const auto fam = switch_family();
    const std::vector<double> x2{0.0};
    CHECK(fam.eval(0.0, x2).a00 == doctest::Approx(0.5).epsilon(1e-15));
    const double oracle = 1.0 / (2.0 + 2.0 / kPi * std::atan(10.0));
    CHECK(fam.eval(1.0, x2, 0.1).a00 == doctest::Approx(oracle).epsilon(1e-14));
    CHECK(fam.eval(1.0, x2, 0.1).phi * fam.eval(1.0, x2, 0.1).phi / 2.0 ==
          doctest::Approx(fam.eval(1.0, x2, 0.1).a00));
    CHECK_THROWS_AS(fam.eval(1.0, x2, 0.0), InvalidArgument);
    CHECK_THROWS_AS(fam.eval(1.0, std::vector<double>{0.0, 1.0}), InvalidArgument);
}

TEST_CASE("family construction errors") {
    CHECK_THROWS_AS(family_id_from_string("periodic"), InvalidArgument);
    CHECK(family_id_from_string("switch") == FamilyId::switching);
    CHECK_THROWS_AS(CoefficientFamily::make(FamilyId::switching, {1.0, 2.0}, 1), InvalidArgument);
    CHECK_THROWS_AS(CoefficientFamily::make(FamilyId::template_, std::vector<double>(17, 0.5), 1), InvalidArgument);
    CHECK_THROWS_AS(CoefficientFamily::make(FamilyId::oscillating, {1.0}, 1), InvalidArgument);
    CHECK_THROWS_AS(CoefficientFamily::make(FamilyId::tabulated, {}, 1), InvalidArgument);
    CHECK_THROWS_AS(CoefficientFamily::make(FamilyId::constant, {}, 0), InvalidArgument);
    CHECK_THROWS_AS(Terminal::from_name("bump", {1.0}), InvalidArgument);
    CHECK_THROWS_AS(Terminal::from_name("spline", {}), InvalidArgument);
}

TEST_CASE("terminal conditions") {
    const std::vector<double> x2{0.5};
    const auto bump = Terminal::from_name("bump", {0.1, 2.0, 1.0});
    CHECK(bump(0.0, std::vector<double>{0.0}) == doctest::Approx(2.1));
    CHECK(bump(1.0, x2) == doctest::Approx(0.1 + 2.0 * std::exp(-1.25 / 2.0)));
    const auto th = Terminal::from_name("tanh", {0.0, 1.0, 2.0, 1.0});
    CHECK(th(0.25, x2) == doctest::Approx(std::tanh(1.0)));
    CHECK(th.shifted(0.1)(0.25, x2) == doctest::Approx(std::tanh(1.0) + 0.1));
    CHECK(th.sup_norm() == 1.0);
}

TEST_CASE("declared bounds hold on a dense sample") {
    for (auto id : {FamilyId::constant, FamilyId::switching, FamilyId::oscillating}) {
        const auto fam = CoefficientFamily::make(id, {}, 2);
        const auto& b = fam.bounds();
        CHECK(b.c1 > 0.0);
        CHECK(b.c1 <= b.c2);
        for (double u = -30.0; u <= 30.0; u += 0.37)
            for (double x = -3.0; x <= 3.0; x += 0.5) {
                const std::vector<double> x2{x, -x};
                const auto v = fam.eval(u, x2);
                CHECK(v.a00 >= b.c1 * (1 - 1e-12));
                CHECK(v.a00 <= b.c2 * (1 + 1e-12));
                for (double y : {-5.0, 0.0, 5.0}) CHECK(std::abs(v.f(y)) <= b.f_bound * (1 + 1e-12));
                CHECK(2.0 * v.a1(0, 0) >= b.lambda * (1 - 1e-12));
            }
    }
}

TEST_CASE("tabulated family interpolates and counts clamps") {
    const auto fam = CoefficientFamily::make(FamilyId::tabulated, {}, 1, {}, small_table(true));
    const std::vector<double> x2{0.5};
    const auto v = fam.eval(-3.0, x2);
    CHECK(v.a00 == doctest::Approx(0.5));
    CHECK(v.b1[0] == doctest::Approx(0.15));
    CHECK(fam.clamp_count() == 0);
    fam.eval(100.0, x2);
    CHECK(fam.clamp_count() > 0);
    CHECK_FALSE(fam.x1_independent());
    CHECK(CoefficientFamily::make(FamilyId::tabulated, {}, 1, {}, small_table(false)).x1_independent());
}

TEST_CASE("Cesaro average of sin is zero") {
    const auto r = cesaro_average([](double t) { return std::sin(t); }, {}, 1e-4);
    CHECK(r.converged);
    CHECK(std::abs(r.g_plus) <= 1e-4);
    CHECK(std::abs(r.g_minus) <= 1e-4);
    // Running average (1 - cos X) / X at the first horizon.
    CHECK(r.running_plus[0] == doctest::Approx((1.0 - std::cos(100.0)) / 100.0).epsilon(1e-8));
}

TEST_CASE("Cesaro average of scaled arctan matches the antiderivative oracle") {
    const CesaroSchedule s;
    const auto r = cesaro_average([](double t) { return 2.0 / kPi * std::atan(t); }, s, 1e-4);
    CHECK(r.converged);
    const auto h = s.horizons();
    for (std::size_t i = 0; i < r.running_plus.size(); ++i) {
        CHECK(r.running_plus[i] == doctest::Approx(atan_running_average(h[i])).epsilon(1e-9));
        CHECK(r.running_minus[i] == doctest::Approx(-atan_running_average(h[i])).epsilon(1e-9));
    }
    CHECK(std::abs(r.g_plus - 1.0) <= 1e-4);
    CHECK(std::abs(r.g_minus + 1.0) <= 1e-4);
}

TEST_CASE("Cesaro average of a constant is exact") {
    const auto r = cesaro_average([](double) { return 3.25; }, {}, 1e-6);
    CHECK(r.converged);
    CHECK(r.g_plus == doctest::Approx(3.25).epsilon(1e-14));
    CHECK(r.g_minus == doctest::Approx(3.25).epsilon(1e-14));
    CHECK(r.running_plus.size() == 3);
}

TEST_CASE("Cesaro averaging is linear") {
    const double tol = 1e-4;
    const auto g1 = [](double t) { return 2.0 / kPi * std::atan(t) + 0.3 * std::sin(t); };
    const auto g2 = [](double t) { return 1.0 - 0.5 * std::sin(t); };
    for (auto [c1, c2] : {std::pair{1.5, -0.7}, std::pair{-2.0, 3.0}}) {
        const auto a = cesaro_average([&](double t) { return c1 * g1(t) + c2 * g2(t); }, {}, tol);
        const auto b1 = cesaro_average(g1, {}, tol);
        const auto b2 = cesaro_average(g2, {}, tol);
        CHECK(std::abs(a.g_plus - (c1 * b1.g_plus + c2 * b2.g_plus)) <= 2 * tol);
        CHECK(std::abs(a.g_minus - (c1 * b1.g_minus + c2 * b2.g_minus)) <= 2 * tol);
    }
}

TEST_CASE("non-convergence is reported, not fabricated") {
    // log(1 + |t|) has no Cesaro limit.
    const auto r = cesaro_average([](double t) { return std::log1p(std::abs(t)); }, {}, 1e-4);
    CHECK_FALSE(r.converged);
    CHECK(r.residual > 1e-4);
    CHECK_THROWS_AS(cesaro_average([](double) { return 1.0; }, {100.0, 2.0, 3}, 1e-4), InvalidArgument);
}

TEST_CASE("switch family averaged coefficients") {
    const auto fam = switch_family();
    const auto avg = build_averaged(fam, default_y_grid(), 1e-4);
    CHECK(avg.closed_form());
    CHECK(avg.report().max_deviation <= 1e-4);
    const std::vector<double> x2{0.3};
    CHECK(avg.rho(x2, Side::plus) == doctest::Approx(3.0));
    CHECK(avg.rho(x2, Side::minus) == doctest::Approx(1.0));
    CHECK(avg.eval(0.5, x2).b[1] == doctest::Approx(2.0 / 3.0));
    CHECK(avg.eval(-0.5, x2).b[1] == doctest::Approx(0.0));
    CHECK(avg.eval(0.0, x2).b[1] == doctest::Approx(0.0));
    CHECK(avg.a00_bar(0.5, x2) == doctest::Approx(1.0 / 3.0));
    CHECK(avg.a00_bar(-0.5, x2) == doctest::Approx(1.0));
    CHECK(avg.a00_bar(0.0, x2) == doctest::Approx(1.0));
    // f_bar = (0.2 +- 0.4 + (-0.5 -+ 0.25) tanh y) / rho+-.
    CHECK(avg.f_bar(1.0, x2, 0.7) == doctest::Approx((0.6 - 0.75 * std::tanh(0.7)) / 3.0));
    CHECK(avg.f_bar(-1.0, x2, 0.7) == doctest::Approx(-0.2 - 0.25 * std::tanh(0.7)));
}

TEST_CASE("numeric and closed-form switch models agree on a 21x21 grid") {
    const auto fam = switch_family();
    AveragingOptions o;
    o.force_numeric = true;
    const auto num = build_averaged(fam, default_y_grid(), 1e-4, o);
    CHECK_FALSE(num.closed_form());
    const auto cf = AveragedModel::from_template(*fam.template_params(), 1);
    double dev = 0.0;
    for (int i = 0; i <= 20; ++i)
        for (int j = 0; j <= 20; ++j) {
            const double x1 = -2.0 + 0.2 * i;
            const std::vector<double> x2{-2.0 + 0.2 * j};
            const auto a = num.eval(x1, x2), b = cf.eval(x1, x2);
            dev = std::max({dev, std::abs(a.rho - b.rho), (a.b - b.b).cwiseAbs().maxCoeff(),
                            (a.a - b.a).cwiseAbs().maxCoeff()});
            for (double y : default_y_grid()) dev = std::max(dev, std::abs(num.f_bar(x1, x2, y) - cf.f_bar(x1, x2, y)));
        }
    CHECK(dev <= 1e-4);
}

TEST_CASE("averaging is the identity for x1-independent families") {
    const auto fam = CoefficientFamily::make(FamilyId::constant, {0.3, 1.2, 0.1, -0.2}, 2);
    AveragingOptions o;
    o.force_numeric = true;
    const auto avg = build_averaged(fam, default_y_grid(), 1e-6, o);
    for (double x1 : {-1.0, 0.0, 2.0}) {
        const std::vector<double> x2{0.2, -0.4};
        const auto v = fam.eval(x1, x2);
        const auto a = avg.eval(x1, x2);
        CHECK(a.b[1] == doctest::Approx(v.b1[0]).epsilon(1e-12));
        CHECK(a.a(2, 2) == doctest::Approx(v.a1(1, 1)).epsilon(1e-12));
        CHECK(a.a00 == doctest::Approx(v.a00).epsilon(1e-12));
        for (double y : {-4.0, 0.5, 4.0}) CHECK(avg.f_bar(x1, x2, y) == doctest::Approx(v.f(y)).epsilon(1e-12));
    }
}

TEST_CASE("averaged invariants: a00 rho = 1 and sigma sigma* = 2 a") {
    for (auto id : {FamilyId::constant, FamilyId::switching, FamilyId::oscillating}) {
        AveragingOptions o;
        o.force_numeric = true;
        const auto fam = CoefficientFamily::make(id, {}, 2);
        const auto avg = build_averaged(fam, default_y_grid(), 1e-4, o);
        for (double x1 : {-1.5, 0.0, 0.5})
            for (double x : {-2.0, -0.3, 1.1}) {
                const std::vector<double> x2{x, x};
                const auto a = avg.eval(x1, x2);
                CHECK(std::abs(a.a00 * a.rho - 1.0) <= 1e-12);
                CHECK((a.sigma * a.sigma.transpose() - 2.0 * a.a).norm() <= 1e-10);
                CHECK(a.b[0] == 0.0);
                CHECK(a.a(0, 1) == 0.0);
            }
    }
}

TEST_CASE("jump of b_bar across the interface") {
    const std::vector<double> x2{0.0};
    const auto sw = build_averaged(switch_family(), default_y_grid(), 1e-4);
    const double jump = sw.eval(1e-9, x2).b[1] - sw.eval(0.0, x2).b[1];
    CHECK(jump == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    const auto flat = build_averaged(CoefficientFamily::make(FamilyId::constant, {0.5, 1.0, 0.0, 0.0}, 1),
                                     default_y_grid(), 1e-4);
    CHECK(flat.eval(1e-9, x2).b[1] - flat.eval(0.0, x2).b[1] == 0.0);
}

TEST_CASE("tabulated family builds a numeric model") {
    const auto fam = CoefficientFamily::make(FamilyId::tabulated, {}, 1, {}, small_table(true));
    const auto avg = build_averaged(fam, default_y_grid(), 1e-3);
    CHECK_FALSE(avg.closed_form());
    // Beyond the table the fast profile is clamped: a00 = 1 for u > 4, 0.5 for u < -4.
    const std::vector<double> x2{0.5};
    CHECK(avg.rho(x2, Side::plus) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(avg.rho(x2, Side::minus) == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(avg.f_bar(1.0, x2, 0.0) == doctest::Approx(0.4).epsilon(2e-3));
    const auto j = avg.to_json(std::vector<double>{0.0}, std::vector<double>{0.0});
    CHECK(j["branches"]["plus"].size() == 1);
    CHECK(j["side_convention"] == "minus");
}

TEST_CASE("a00 touching zero is rejected by build_averaged") {
    auto t = small_table(false);
    t.a00[4] = 0.0;
    const auto fam = CoefficientFamily::make(FamilyId::tabulated, {}, 1, {}, t);
    CHECK(fam.bounds().c1 == 0.0);
    CHECK_THROWS_AS(build_averaged(fam, default_y_grid(), 1e-4), InvalidArgument);
}
