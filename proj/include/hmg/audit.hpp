#pragma once

#include "hmg/coefficients.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace hmg {

enum class AuditStatus { verified_sampled, closed_form, violated, unchecked };

std::string_view to_string(AuditStatus s);

/// One assumption entry. `residual` is the worst violation amount for bound
/// checks and the last value of the decay trend for remainder checks.
/// `witness` is (x1, x2...) or (x1, x2..., y) for driver checks.
struct AuditEntry {
    std::string id;
    AuditStatus status = AuditStatus::unchecked;
    double residual = 0.0;
    std::vector<double> witness;
    std::vector<double> trend;  ///< remainder sup at growing |x1| (B3, C2)
    std::string note;
};

struct AssumptionReport {
    std::vector<AuditEntry> entries;

    const AuditEntry& at(const std::string& id) const;
    bool any_violated() const;
    nlohmann::json to_json() const;
};

struct SampleSpec {
    std::vector<double> lo, hi;  ///< box in (x1, x2), size d + 1
    double y_lo = -3.0, y_hi = 3.0;
    std::size_t n_samples = 512;
    unsigned long long seed = 1;
    /// |x1| values at which the Cesaro remainders are evaluated.
    std::vector<double> remainder_x1{10.0, 100.0, 1000.0, 10000.0};
};

/// Sampled check of (A1)-(A3), (B1)-(B3), (C1)-(C3) against the family's
/// declared constants. Never throws for violations; they are report entries.
AssumptionReport audit_assumptions(const CoefficientFamily& fam, const SampleSpec& spec);

}  // namespace hmg
