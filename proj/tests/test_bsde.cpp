#include <doctest.h>

#include "hmg/bsde.hpp"

#include <cmath>
#include <filesystem>
#include <vector>

using namespace hmg;

namespace {

const std::vector<double> kOrigin{0.0, 0.0};

CoefficientFamily constant_family(double f0, double h = 1.0) {
    return CoefficientFamily::make(FamilyId::constant, {0.0, 1.0, f0, 0.0}, 1)
        .with_terminal(Terminal::from_name("constant", {h}));
}

CoefficientFamily switch_family() {
    return CoefficientFamily::make(FamilyId::switching, {}, 1)
        .with_terminal(Terminal::from_name("tanh", {0.0, 1.0, 1.0, 1.0}));
}

PathBundle unit_bundle(std::size_t n = 4000, std::size_t steps = 50, std::uint64_t seed = 1) {
    return simulate_eps(constant_family(0.0), 1.0, kOrigin, SimGrid{1.0, steps}, n, seed);
}

BsdeSpec spec_of(TerminalFn h, DriverFn f) {
    BsdeSpec s;
    s.terminal = std::move(h);
    s.driver = std::move(f);
    return s;
}

}  // namespace

TEST_CASE("zero driver and unit terminal give Y0 = 1") {
    const auto b = unit_bundle();
    const auto sol = solve_bsde(b, eps_bsde_spec(constant_family(0.0), 1.0, {}));
    CHECK(std::abs(sol.Y0 - 1.0) < 1e-12);
    CHECK(sol.Y0_stderr < 1e-12);
    double zmax = 0.0;
    for (double z : sol.Z) zmax = std::max(zmax, std::abs(z));
    CHECK(zmax < 1e-9);
    CHECK(sol.picard_converged);
}

TEST_CASE("constant driver integrates to c t") {
    const double c = 0.7;
    const auto b = unit_bundle();
    const auto sol = solve_bsde(b, eps_bsde_spec(constant_family(c, 0.0), 1.0, {}));
    CHECK(std::abs(sol.Y0 - c * b.grid.t_end) <= 3.0 * sol.Y0_stderr + b.grid.dt() * std::abs(c));
    REQUIRE(sol.picard_residuals.size() == 3);
    CHECK(sol.picard_residuals[0] == doctest::Approx(c * b.grid.dt()));
    CHECK(sol.picard_residuals[1] < 1e-14);
}

TEST_CASE("linear driver f = -y decays like exp(-t)") {
    const auto b = unit_bundle();
    const auto sol =
        solve_bsde(b, spec_of([](std::span<const double>) { return 1.0; }, [](std::span<const double>, double y) { return -y; }));
    CHECK(std::abs(sol.Y0 - std::exp(-1.0)) <= 3.0 * sol.Y0_stderr + 5.0 * b.grid.dt());
    for (std::size_t j = 2; j < sol.picard_residuals.size(); ++j)
        CHECK(sol.picard_residuals[j] <= sol.picard_residuals[j - 1]);
    CHECK(sol.picard_converged);
}

TEST_CASE("solution respects the bounded-solution property") {
    const auto fam = switch_family();
    const auto b = simulate_eps(fam, 0.1, kOrigin, SimGrid{1.0, 50}, 4000, 3);
    const auto sol = solve_bsde(b, eps_bsde_spec(fam, 0.1, {}));
    const double bound = fam.bounds().h_bound + b.grid.t_end * fam.bounds().f_bound;
    for (double y : sol.Y) CHECK(std::abs(y) <= bound);
}

TEST_CASE("regression residual has zero mean at every step") {
    const auto fam = switch_family();
    const auto b = simulate_eps(fam, 0.3, kOrigin, SimGrid{1.0, 20}, 4000, 5);
    const auto sol = solve_bsde(b, eps_bsde_spec(fam, 0.3, {}));
    for (std::size_t s = 0; s < b.grid.n_steps; ++s) {
        const Projection proj(b, s, 2, false, "test");
        const auto col = sol.column(s + 1);
        const Eigen::VectorXd next = Eigen::Map<const Eigen::VectorXd>(col.data(), static_cast<Eigen::Index>(col.size()));
        const Eigen::VectorXd r = next - proj.fit(next);
        std::vector<double> rv(r.data(), r.data() + r.size());
        const auto e = mean_stderr(rv);
        CHECK(std::abs(e.mean) <= 5.0 * e.stderr_ + 1e-12);
    }
}

TEST_CASE("Y0 is stable under basis enrichment") {
    const auto fam = CoefficientFamily::make(FamilyId::oscillating, {}, 1)
                         .with_terminal(Terminal::from_name("bump", {0.0, 1.0, 1.0}));
    const auto b = simulate_eps(fam, 0.5, kOrigin, SimGrid{1.0, 40}, 8000, 8);
    BsdeOptions o2, o3;
    o3.basis_degree = 3;
    const auto s2 = solve_bsde(b, eps_bsde_spec(fam, 0.5, o2));
    const auto s3 = solve_bsde(b, eps_bsde_spec(fam, 0.5, o3));
    CHECK(std::abs(s2.Y0 - s3.Y0) <= std::max(3.0 * s2.Y0_stderr, 0.01 * std::abs(s2.Y0)));
}

TEST_CASE("comparison: raising the terminal raises Y0 within the Lipschitz bracket") {
    const double delta = 0.1;
    for (FamilyId id : {FamilyId::constant, FamilyId::switching, FamilyId::oscillating}) {
        const auto fam = CoefficientFamily::make(id, {}, 1).with_terminal(Terminal::from_name("tanh", {0.0, 1.0, 1.0, 1.0}));
        const auto up = fam.with_terminal(fam.terminal().shifted(delta));
        const auto b = simulate_eps(fam, 0.2, kOrigin, SimGrid{1.0, 40}, 4000, 13);
        const auto lo = solve_bsde(b, eps_bsde_spec(fam, 0.2, {}));
        const auto hi = solve_bsde(b, eps_bsde_spec(up, 0.2, {}));
        const double L = fam.bounds().f_y_lipschitz, t = b.grid.t_end;
        const double slack = 3.0 * combined_stderr(lo.Y0_stderr, hi.Y0_stderr);
        const double gap = hi.Y0 - lo.Y0;
        INFO(to_string(id));
        CHECK(gap >= delta * std::exp(-L * t) - slack);
        CHECK(gap <= delta * std::exp(L * t) + slack);
    }
}

TEST_CASE("comparison: ordered drivers give ordered Y0") {
    const auto b = unit_bundle(4000, 40, 17);
    const auto h = [](std::span<const double> x) { return std::tanh(x[1]); };
    const auto f1 = [](std::span<const double>, double y) { return -y - 0.2; };
    const auto f2 = [](std::span<const double>, double y) { return -y + 0.1; };
    const auto s1 = solve_bsde(b, spec_of(h, f1));
    const auto s2 = solve_bsde(b, spec_of(h, f2));
    CHECK(s1.Y0 <= s2.Y0 + 3.0 * combined_stderr(s1.Y0_stderr, s2.Y0_stderr));
}

TEST_CASE("conditional variation") {
    SUBCASE("martingale has zero grid-CV") {
        const auto b = unit_bundle(4000, 40, 21);
        const auto sol = solve_bsde(b, spec_of([](std::span<const double> x) { return std::tanh(x[1]); },
                                               [](std::span<const double>, double) { return 0.0; }));
        const auto cv = conditional_variation(sol.Y, sol.n_paths, sol.grid, polynomial_projection(b, 2, false));
        CHECK(cv.mean <= 5.0 * cv.stderr_ + 1e-10);
    }
    SUBCASE("deterministic Y_t = t") {
        const SimGrid g{1.5, 30};
        const std::size_t n = 10;
        std::vector<double> Y(n * (g.n_steps + 1));
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t s = 0; s <= g.n_steps; ++s) Y[p * (g.n_steps + 1) + s] = g.time(s);
        const ProjectionFn identity = [](std::size_t, const Eigen::VectorXd& v) { return v; };
        CHECK(conditional_variation(Y, n, g, identity).mean == doctest::Approx(g.t_end).epsilon(1e-12));
    }
    SUBCASE("constant driver") {
        const double c = -0.4;
        const auto b = unit_bundle(4000, 40, 23);
        const auto sol = solve_bsde(b, eps_bsde_spec(constant_family(c, 0.5), 1.0, {}));
        const auto cv = conditional_variation(sol.Y, sol.n_paths, sol.grid, polynomial_projection(b, 2, false));
        CHECK(std::abs(cv.mean - std::abs(c) * b.grid.t_end) <= 0.1 * std::abs(c) * b.grid.t_end);
    }
}

TEST_CASE("upcrossing counts") {
    CHECK(upcrossings(std::vector<double>{0, 1, 0, 1}, 0.25, 0.75) == 2);
    CHECK(upcrossings(std::vector<double>{-1, -0.5, 0, 0.5, 1, 2}, 0.0, 1.0) == 1);
    CHECK(upcrossings(std::vector<double>{0.3, 0.3, 0.3}, 0.3, 1.0) == 0);
    CHECK_THROWS_AS(upcrossings(std::vector<double>{0.0}, 1.0, 1.0), InvalidArgument);
    // Widening the band cannot increase the count.
    const std::vector<double> path{0, 0.6, 0.1, 0.9, 0.2, 1.0, 0.0, 0.5};
    CHECK(upcrossings(path, 0.0, 1.0) <= upcrossings(path, 0.1, 0.9));
    CHECK(upcrossings(path, 0.1, 0.9) <= upcrossings(path, 0.2, 0.5));
}

TEST_CASE("tightness certificate") {
    const std::vector<std::pair<double, double>> bands{{-0.25, 0.25}, {-0.5, 0.5}};
    SUBCASE("single run gives unit ratios") {
        const auto b = unit_bundle(1000, 20, 2);
        const auto sol = solve_bsde(b, eps_bsde_spec(switch_family(), 1.0, {}));
        const auto cert = tightness_certificate({1.0}, {path_functionals(sol, b, bands, 2, false)});
        CHECK(cert.cv_plus_sup_ratio == 1.0);
        CHECK(cert.energy_ratio == 1.0);
        for (const auto& [band, r] : cert.upcrossing_ratio) CHECK(r == 1.0);
    }
    SUBCASE("zero driver has zero CV for every eps") {
        const auto fam = CoefficientFamily::make(FamilyId::switching, {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}, 1)
                             .with_terminal(Terminal::from_name("tanh", {0.0, 1.0, 1.0, 1.0}));
        for (double eps : {1.0, 0.1}) {
            const auto b = simulate_eps(fam, eps, kOrigin, SimGrid{1.0, 30}, 3000, 4);
            const auto sol = solve_bsde(b, eps_bsde_spec(fam, eps, {}));
            const auto pf = path_functionals(sol, b, bands, 2, false);
            CHECK(pf.cv.mean <= 5.0 * pf.cv.stderr_ + 1e-10);
        }
    }
    SUBCASE("switch family is uniformly bounded in eps") {
        const auto fam = switch_family();
        std::vector<double> eps{1.0, 0.3, 0.1, 0.03};
        std::vector<PathFunctionals> runs;
        for (double e : eps) {
            const auto b = simulate_eps(fam, e, kOrigin, SimGrid{1.0, 50}, 4000, 6);
            const auto sol = solve_bsde(b, eps_bsde_spec(fam, e, {}));
            runs.push_back(path_functionals(sol, b, bands, 2, false));
            CHECK(runs.back().energy.mean <=
                  2.0 * apriori_bound(fam.bounds().h_bound, fam.bounds().f_bound, b.grid.t_end));
        }
        const auto cert = tightness_certificate(eps, runs);
        CHECK(cert.cv_plus_sup_ratio <= 2.0);
        CHECK(cert.energy_ratio <= 2.0);
        CHECK(cert.to_json()["upcrossings"].size() == 2);
    }
}

TEST_CASE("errors") {
    SUBCASE("rank-deficient regression names the step") {
        auto b = PathBundle::allocate(100, SimGrid{1.0, 5}, 1, 2);
        for (std::size_t p = 0; p < 100; ++p)
            for (std::size_t s = 0; s <= 5; ++s) {
                b.state(p, s)[0] = p % 2 ? 1.0 : -1.0;
                b.state(p, s)[1] = std::sin(static_cast<double>(p * (s + 1)));
            }
        auto spec = spec_of([](std::span<const double>) { return 1.0; }, [](std::span<const double>, double) { return 0.0; });
        spec.basis_degree = 2;
        try {
            solve_bsde(b, spec);
            FAIL("expected a rank error");
        } catch (const NumericalError& e) {
            CHECK(std::string(e.what()).find("step 4") != std::string::npos);
        }
    }
    SUBCASE("non-contracting Picard iteration") {
        const auto b = unit_bundle(200, 10, 1);
        auto spec = spec_of([](std::span<const double>) { return 1.0; }, [](std::span<const double>, double y) { return -50.0 * y; });
        spec.n_picard = 5;
        CHECK_THROWS_AS(solve_bsde(b, spec), NumericalError);
    }
    SUBCASE("invalid specs") {
        const auto b = unit_bundle(200, 10, 1);
        BsdeSpec s = spec_of([](std::span<const double>) { return 1.0; }, [](std::span<const double>, double) { return 0.0; });
        s.n_picard = 0;
        CHECK_THROWS_AS(solve_bsde(b, s), InvalidArgument);
        s.n_picard = 1;
        s.basis_degree = 7;
        CHECK_THROWS_AS(solve_bsde(b, s), InvalidArgument);
    }
}

TEST_CASE("solution is independent of the thread count and round-trips") {
    const auto fam = switch_family();
    const auto b = simulate_eps(fam, 0.1, kOrigin, SimGrid{1.0, 20}, 3000, 9);
    set_thread_count(1);
    const auto a = solve_bsde(b, eps_bsde_spec(fam, 0.1, {}));
    set_thread_count(3);
    const auto c = solve_bsde(b, eps_bsde_spec(fam, 0.1, {}));
    set_thread_count(1);
    CHECK(a.Y == c.Y);
    CHECK(a.Z == c.Z);
    CHECK(a.Y0 == c.Y0);

    const auto dir = std::filesystem::temp_directory_path() / "hmg_test_bsde";
    std::filesystem::create_directories(dir);
    a.save(dir / "sol.hmgs");
    const auto r = BsdeSolution::load(dir / "sol.hmgs");
    CHECK(r.Y == a.Y);
    CHECK(r.Y_regression == a.Y_regression);
    CHECK(r.clamp_count == a.clamp_count);
    CHECK(r.Z == a.Z);
    CHECK(r.Y0 == a.Y0);
    CHECK(r.condition_numbers == a.condition_numbers);
    CHECK(std::filesystem::exists(dir / "sol.hmgs.json"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("averaged spec uses the sign feature and f-bar") {
    const auto fam = switch_family();
    const auto avg = AveragedModel::from_template(*fam.template_params(), 1);
    BsdeOptions o;
    o.sign_feature = true;
    const auto spec = avg_bsde_spec(avg, fam, o);
    CHECK(spec.include_sign_feature);
    const std::vector<double> x{0.5, 0.2};
    CHECK(spec.driver(x, 0.3) == avg.f_bar(0.5, std::span<const double>(x).subspan(1), 0.3));
    const auto b = simulate_avg(avg, kOrigin, SimGrid{1.0, 20}, 2000, 3);
    const auto sol = solve_bsde(b, spec);
    CHECK(std::isfinite(sol.Y0));
}

TEST_CASE("truncation enforces the a-priori bound without touching the recursion") {
    const auto fam = CoefficientFamily::make(FamilyId::switching, {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}, 1)
                         .with_terminal(Terminal::from_name("tanh", {0.0, 1.0, 1.0, 1.0}));
    const auto b = simulate_eps(fam, 0.5, kOrigin, SimGrid{1.0, 30}, 3000, 4);
    auto spec = eps_bsde_spec(fam, 0.5, {});
    const auto sol = solve_bsde(b, spec);
    CHECK(sol.clamp_count > 0);
    for (double y : sol.Y) CHECK(std::abs(y) <= 1.0);
    spec.clamp = false;
    const auto raw = solve_bsde(b, spec);
    CHECK(raw.clamp_count == 0);
    CHECK(raw.Y == raw.Y_regression);
    CHECK(raw.Y_regression == sol.Y_regression);
    CHECK(raw.Y0 == sol.Y0);
}
