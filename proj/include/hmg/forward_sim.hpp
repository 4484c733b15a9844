#pragma once

#include "hmg/averaged.hpp"
#include "hmg/coefficients.hpp"
#include "hmg/stats.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace hmg {

struct SimGrid {
    double t_end = 1.0;
    std::size_t n_steps = 100;

    double dt() const { return t_end / static_cast<double>(n_steps); }
    double time(std::size_t step) const { return t_end * static_cast<double>(step) / static_cast<double>(n_steps); }
    void validate() const;
};

/// Forward paths with their Brownian increments. Column 0 of dB drives x1,
/// columns 1..k-1 drive x2.
struct PathBundle {
    std::size_t n_paths = 0;
    SimGrid grid;
    int d = 1;
    int k = 2;
    std::uint64_t seed = 0;
    std::optional<double> eps;  ///< empty for averaged-model paths
    std::vector<double> X;      ///< [n_paths][n_steps + 1][d + 1]
    std::vector<double> dB;     ///< [n_paths][n_steps][k]

    static PathBundle allocate(std::size_t n_paths, const SimGrid& grid, int d, int k);

    std::size_t dim() const { return static_cast<std::size_t>(d) + 1; }
    std::span<double> state(std::size_t path, std::size_t step) {
        return {X.data() + (path * (grid.n_steps + 1) + step) * dim(), dim()};
    }
    std::span<const double> state(std::size_t path, std::size_t step) const {
        return {X.data() + (path * (grid.n_steps + 1) + step) * dim(), dim()};
    }
    std::span<double> increment(std::size_t path, std::size_t step) {
        return {dB.data() + (path * grid.n_steps + step) * static_cast<std::size_t>(k), static_cast<std::size_t>(k)};
    }
    std::span<const double> increment(std::size_t path, std::size_t step) const {
        return {dB.data() + (path * grid.n_steps + step) * static_cast<std::size_t>(k), static_cast<std::size_t>(k)};
    }
    /// Values of coordinate `c` at `step` across all paths.
    std::vector<double> marginal(std::size_t step, std::size_t c) const;

    nlohmann::json header_json() const;
    /// Binary container "HMGB1" plus a `<path>.json` sidecar.
    void save(const std::filesystem::path& path) const;
    static PathBundle load(const std::filesystem::path& path);
};

/// Brownian increments of one step, keyed by (seed, path, step).
void brownian_increments(std::uint64_t seed, std::size_t path, std::size_t step, double dt, std::span<double> out);

/// One Euler-Maruyama step of the two-scale SDE at scale eps.
void euler_update(const CoefficientFamily& fam, double eps, std::span<const double> x, double dt,
                  std::span<const double> dB, std::span<double> out);
/// One Euler-Maruyama step of the averaged SDE.
void euler_update(const AveragedModel& avg, std::span<const double> x, double dt, std::span<const double> dB,
                  std::span<double> out);

PathBundle simulate_eps(const CoefficientFamily& fam, double eps, std::span<const double> x0, const SimGrid& grid,
                        std::size_t n_paths, std::uint64_t seed);
PathBundle simulate_avg(const AveragedModel& avg, std::span<const double> x0, const SimGrid& grid,
                        std::size_t n_paths, std::uint64_t seed);

struct OccupationEstimate {
    int n = 1;
    double mean_occupation = 0.0;
    double std_error = 0.0;
};

/// Expected time spent in the band |x1| <= 1/n, left-point rule.
std::vector<OccupationEstimate> occupation_time(const PathBundle& bundle, std::span<const int> n_list);

/// k -> estimate of E sup_s (|x1_s|^{2k} + |x2_s|^{2k}).
std::map<int, Estimate> moment_report(const PathBundle& bundle, std::span<const int> k_list);

}  // namespace hmg
