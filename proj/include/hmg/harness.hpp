#pragma once

#include "hmg/averaged.hpp"
#include "hmg/bsde.hpp"
#include "hmg/coefficients.hpp"
#include "hmg/corrector.hpp"
#include "hmg/forward_sim.hpp"
#include "hmg/pde_fd.hpp"
#include "hmg/stats.hpp"

#include <json.hpp>

#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hmg {

inline constexpr int kReportVersion = 1;

/// Seed labels for key splitting. Forward noise uses eps index 0 for every
/// model and initial point so that all runs share random numbers.
enum class Stage : std::uint64_t { forward = 1, occupation = 2 };

std::uint64_t stage_seed(std::uint64_t seed, Stage stage);

struct FamilyConfig {
    std::string name = "switch";
    std::vector<double> params;
    int d = 1;
    Terminal terminal = Terminal::from_name("tanh", {0.0, 1.0, 1.0, 1.0});
    std::optional<TableData> table;

    CoefficientFamily make() const;
};

struct McConfig {
    std::size_t n_paths = 20000;
    std::size_t n_steps = 50;
    std::uint64_t seed = 1;
};

struct BsdeConfig {
    int basis_degree = 2;
    bool sign_feature = false;      ///< eps runs
    bool avg_sign_feature = true;   ///< averaged run
    int n_picard = 3;
};

struct AveragingConfig {
    CesaroSchedule schedule;
    double tol = 1e-4;
    std::vector<double> y_grid = default_y_grid();
    bool force_numeric = false;
};

struct FdConfig {
    double L1 = 4.0, L2 = 4.0;
    std::size_t n1 = 201, n2 = 201;
    double dt = 0.01;
    bool richardson = true;
    bool eps_rows = false;  ///< also solve the eps-form where eps >= 4 h1

    Grid2D grid(double t_end) const;
};

struct CorrectorConfig {
    std::vector<double> eps_list;  ///< empty: the experiment's eps_list
    std::size_t n_grid = 21;
};

struct OccupationConfig {
    std::vector<int> n_list{1, 2, 4, 8, 16, 32};
    std::size_t n_paths = 50000;
    std::size_t n_steps = 400;
    std::vector<double> x0;  ///< empty: the experiment's x0
};

struct Tolerances {
    double final_error = std::numeric_limits<double>::infinity();
    double drift_gap_factor = 0.5;
    double corrector_factor = 0.2;
    double certificate_ratio = 2.0;
    double moment_spread = 1.25;  ///< max / min of the k = 1 moment over eps
    double slope_lo = -1.3, slope_hi = -0.7;
};

struct ExperimentConfig {
    FamilyConfig family;
    std::vector<double> x0{0.0, 0.0};
    double t_end = 1.0;
    std::vector<double> eps_list{1.0, 0.3, 0.1, 0.03};
    McConfig mc;
    BsdeConfig bsde;
    AveragingConfig averaging;
    std::optional<FdConfig> fd;
    std::optional<CorrectorConfig> corrector;
    std::optional<OccupationConfig> occupation;
    std::vector<int> moment_k{1};
    std::vector<std::pair<double, double>> bands{{-0.25, 0.25}, {-0.5, 0.5}};
    Tolerances tol;
    std::string out_dir = "out";
    std::vector<std::string> formats{"csv", "json"};

    void validate() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    SimGrid sim_grid() const { return SimGrid{t_end, mc.n_steps}; }
    BsdeOptions eps_options() const;
    BsdeOptions avg_options() const;
};

/// Averaged model of the configured family: the closed form when the family
/// has one and averaging is not forced numeric, else Cesaro averaging.
AveragedModel configured_averaged(const ExperimentConfig& cfg, const CoefficientFamily& fam);

/// E sup_s |int_0^s (f(X1/eps, X2, Y) - f_bar(X1, X2, Y)) du| along the paths.
Estimate drift_gap(const CoefficientFamily& fam, const AveragedModel& avg, double eps, const PathBundle& bundle,
                   const BsdeSolution& sol);

struct EpsRecord {
    double eps = 0.0;
    Estimate y0;
    Estimate error;  ///< |Y0_eps - Y0| with the combined standard error
    Estimate cv;
    Estimate sup_abs;
    Estimate energy;
    Estimate gap;
    std::map<int, Estimate> moments;
    std::optional<double> v_fd;
};

struct AveragedRecord {
    Estimate y0;
    std::optional<double> v_fd;
    std::optional<double> fd_richardson;
};

struct ConvergenceReport {
    nlohmann::json config;
    std::vector<EpsRecord> eps_records;
    std::optional<AveragedRecord> averaged;
    std::optional<DecayTable> decay;
    std::optional<LineFit> occupation_fit;
    std::vector<OccupationEstimate> occupation;
    TightnessCertificate certificate;
    std::map<std::string, bool> flags;
    bool incomplete = false;
    std::string error;

    bool all_pass() const;
    /// Sorted-key JSON. Throws InvalidArgument naming the first non-finite cell.
    nlohmann::json to_json() const;
    /// Per-eps rows plus an "avg" row; uncertainties next to each value.
    std::string to_csv() const;
};

/// build_averaged, then per eps simulate_eps and solve_bsde, then the
/// averaged run, optional FD cross-check, corrector table and occupation fit.
/// A stage error aborts the remaining stages and returns the partial report
/// with `incomplete` set and the error text.
ConvergenceReport run_convergence(const ExperimentConfig& cfg);

struct DriftGapRow {
    double eps = 0.0;
    Estimate gap;
};
std::vector<DriftGapRow> monte_carlo_drift_gap(const ExperimentConfig& cfg, const std::vector<double>& eps_list);

struct FlowRow {
    std::vector<double> x0_a, x0_b;
    double dx0 = 0.0;
    double ks = 0.0;  ///< max over coordinates of the X_t_end marginal KS distance
    double dy0 = 0.0;
    double dy0_stderr = 0.0;
};

struct FlowReport {
    std::string model;  ///< "averaged" or "eps=<value>"
    std::vector<Estimate> y0;
    std::vector<FlowRow> rows;
    /// |dY0| non-increasing along rows within one combined stderr.
    bool shrinking = true;
    /// max over pairs of |Y0_i - Y0_j| / combined stderr.
    double max_pair_ratio = 0.0;

    nlohmann::json to_json() const;
};

/// Runs the model (averaged when eps is empty) from every x0 with common
/// random numbers and compares consecutive pairs.
FlowReport flow_continuity_check(const ExperimentConfig& cfg, const std::vector<std::vector<double>>& x0_list,
                                 std::optional<double> eps = std::nullopt);

/// Jump of Y0 across x1 = 0. D(h) = Y0(h) - Y0(-h) at the other coordinates
/// of cfg.x0 behaves like J + a h + b h^2 (b from the jump of D^2_{x1} Y0),
/// so (8 D(h/4) - 6 D(h/2) + D(h)) / 3 estimates the jump J, which is zero
/// for a continuous Y0.
struct InterfaceJump {
    double h = 0.0;
    Estimate d_h, d_half, d_quarter;
    Estimate jump;
};
InterfaceJump interface_jump(const ExperimentConfig& cfg, double h, std::optional<double> eps = std::nullopt);

/// Writes convergence.{csv,json} and decay.csv for the requested formats.
/// Keys are sorted and numbers printed round-trip exact, so re-emitting the
/// same report is byte-identical. Returns the written paths.
std::vector<std::filesystem::path> emit(const ConvergenceReport& report, const std::filesystem::path& dir,
                                        const std::vector<std::string>& formats);

/// Throws InvalidArgument naming the first NaN or infinite number in `j`.
void require_finite(const nlohmann::json& j, const std::string& where = "");

}  // namespace hmg
