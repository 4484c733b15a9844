#include <doctest.h>

#include "hmg/audit.hpp"

#include <cmath>
#include <vector>

using namespace hmg;

namespace {

SampleSpec box(int d, std::size_t n = 128) {
    SampleSpec s;
    s.lo.assign(static_cast<std::size_t>(d) + 1, -2.0);
    s.hi.assign(static_cast<std::size_t>(d) + 1, 2.0);
    s.lo[0] = -20.0;
    s.hi[0] = 20.0;
    s.n_samples = n;
    return s;
}

TableData flat_table() {
    TableData t;
    t.x1_min = -4.0;
    t.x1_max = 4.0;
    t.n1 = 5;
    t.x2_min = -1.0;
    t.x2_max = 1.0;
    t.n2 = 3;
    for (std::size_t i = 0; i < t.n1 * t.n2; ++i) {
        t.a00.push_back(1.0);
        t.b.push_back(0.1);
        t.a11.push_back(0.5);
        t.f0.push_back(0.1);
        t.f1.push_back(-0.3);
    }
    return t;
}

}  // namespace

TEST_CASE("constant family passes every check with zero residual") {
    const auto fam = CoefficientFamily::make(FamilyId::constant, {0.3, 1.2, 0.1, -0.2}, 2);
    const auto rep = audit_assumptions(fam, box(2));
    CHECK_FALSE(rep.any_violated());
    for (const char* id : {"A1", "A2", "A3", "B1", "B2", "B3", "C1", "C2", "C3"}) {
        const auto& e = rep.at(id);
        INFO(id);
        CHECK((e.status == AuditStatus::verified_sampled || e.status == AuditStatus::closed_form));
        CHECK(e.residual == 0.0);
    }
}

TEST_CASE("a00 touching zero is flagged with a witness") {
    auto t = flat_table();
    t.a00[4] = 0.0;  // node x1 = -2, x2 = 0
    const auto fam = CoefficientFamily::make(FamilyId::tabulated, {}, 1, {}, t);
    const auto rep = audit_assumptions(fam, box(1, 32));
    const auto& a3 = rep.at("A3");
    CHECK(a3.status == AuditStatus::violated);
    REQUIRE(a3.witness.size() == 2);
    CHECK(a3.witness[0] == doctest::Approx(-2.0));
    CHECK(a3.witness[1] == doctest::Approx(0.0));
    CHECK(rep.any_violated());
    CHECK(rep.at("A2").status == AuditStatus::unchecked);
}

TEST_CASE("switch family remainders decay") {
    const auto fam = CoefficientFamily::make(FamilyId::switching, {}, 1);
    const auto rep = audit_assumptions(fam, box(1, 64));
    CHECK_FALSE(rep.any_violated());
    for (const char* id : {"B3", "C2"}) {
        const auto& e = rep.at(id);
        INFO(id);
        REQUIRE(e.trend.size() == 4);
        CHECK(e.trend.back() < 0.1 * e.trend.front());
        CHECK(e.trend.back() < 1e-2);
    }
    CHECK(rep.at("B1").status == AuditStatus::closed_form);
    CHECK(rep.at("B1").residual < 1e-2);
}

TEST_CASE("understated bounds are reported as violations") {
    const auto base = CoefficientFamily::make(FamilyId::switching, {}, 1);
    auto b = base.bounds();
    b.f_bound = 0.1;
    b.lipschitz = 1e-3;
    const auto fam = base.with_bounds(b);
    const auto rep = audit_assumptions(fam, box(1, 32));
    CHECK(rep.at("C1").status == AuditStatus::violated);
    CHECK(rep.at("C1").residual > 0.0);
    CHECK(rep.at("C1").witness.size() == 3);
    CHECK(rep.at("A1").status == AuditStatus::violated);
}

TEST_CASE("report serializes to json") {
    const auto fam = CoefficientFamily::make(FamilyId::oscillating, {}, 1);
    const auto rep = audit_assumptions(fam, box(1, 16));
    const auto j = rep.to_json();
    REQUIRE(j.size() == 9);
    CHECK(j[0]["id"] == "A1");
    CHECK(j[5]["trend"].size() == 4);
    CHECK_THROWS_AS(audit_assumptions(fam, SampleSpec{}), InvalidArgument);
}
