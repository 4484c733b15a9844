#include "hmg/audit.hpp"
#include "hmg/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace hmg;
using nlohmann::json;

namespace {

constexpr int kPass = 0, kError = 1, kFailures = 2;

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) throw InvalidArgument("cli", "write failed for " + path.string());
    std::cout << "wrote " << path.string() << '\n';
}

std::vector<double> slow_points() {
    std::vector<double> xs;
    for (int i = 0; i <= 20; ++i) xs.push_back(-2.0 + 0.2 * i);
    return xs;
}

std::string eps_tag(std::size_t i) { return "eps" + std::to_string(i); }

int cmd_average(const ExperimentConfig& cfg, const std::filesystem::path& out) {
    const auto fam = cfg.family.make();
    AveragingOptions o;
    o.schedule = cfg.averaging.schedule;
    o.force_numeric = cfg.averaging.force_numeric;
    const auto avg = build_averaged(fam, cfg.averaging.y_grid, cfg.averaging.tol, o);
    const auto& r = avg.report();
    const auto xs = slow_points();
    json j = avg.to_json(xs, cfg.averaging.y_grid);
    j["report"] = {{"closed_form", r.closed_form},
                   {"converged", r.converged},
                   {"residual", r.residual},
                   {"max_deviation", r.max_deviation},
                   {"tol", r.tol}};
    require_finite(j);
    write_text(out / "averaged.json", j.dump(2) + "\n");
    std::printf("converged=%d residual=%.3e max_deviation=%.3e\n", r.converged, r.residual, r.max_deviation);
    return r.converged ? kPass : kFailures;
}

int cmd_simulate(const ExperimentConfig& cfg, const std::filesystem::path& out, bool solve) {
    const auto fam = cfg.family.make();
    const auto avg = configured_averaged(cfg, fam);
    const auto seed = stage_seed(cfg.mc.seed, Stage::forward);
    json index = json::array();
    auto run = [&](const std::string& tag, std::optional<double> eps, const PathBundle& b) {
        json row = {{"model", tag}, {"paths", tag + ".paths"}};
        if (eps) row["eps"] = *eps;
        b.save(out / (tag + ".paths"));
        if (solve) {
            const auto spec = eps ? eps_bsde_spec(fam, *eps, cfg.eps_options()) : avg_bsde_spec(avg, fam, cfg.avg_options());
            const auto sol = solve_bsde(b, spec);
            sol.save(out / (tag + ".bsde"));
            row["bsde"] = tag + ".bsde";
            row["Y0"] = {{"mean", sol.Y0}, {"stderr", sol.Y0_stderr}};
            std::printf("%-6s Y0 = %.6f +- %.6f\n", tag.c_str(), sol.Y0, sol.Y0_stderr);
        }
        index.push_back(row);
    };
    std::filesystem::create_directories(out);
    for (std::size_t i = 0; i < cfg.eps_list.size(); ++i)
        run(eps_tag(i), cfg.eps_list[i], simulate_eps(fam, cfg.eps_list[i], cfg.x0, cfg.sim_grid(), cfg.mc.n_paths, seed));
    run("avg", std::nullopt, simulate_avg(avg, cfg.x0, cfg.sim_grid(), cfg.mc.n_paths, seed));
    const json j = {{"report_version", kReportVersion}, {"config", cfg.to_json()}, {"runs", index}};
    write_text(out / (solve ? "bsde.json" : "simulate.json"), j.dump(2) + "\n");
    return kPass;
}

int cmd_corrector(const ExperimentConfig& cfg, const std::filesystem::path& out) {
    const auto fam = cfg.family.make();
    const auto avg = configured_averaged(cfg, fam);
    const CorrectorConfig cc = cfg.corrector.value_or(CorrectorConfig{});
    const auto& list = cc.eps_list.empty() ? cfg.eps_list : cc.eps_list;
    auto box = reference_box(fam.d());
    box.n_grid = cc.n_grid;
    const auto table = decay_table(fam, avg, list, box);
    write_text(out / "decay.csv", table.to_csv());

    bool pass = table.v_nonincreasing;
    json residuals = json::array();
    for (double eps : list) {
        const CorrectorField field(fam, avg, eps);
        ResidualSample s;
        s.lo = box.lo;
        s.hi = box.hi;
        s.seed = cfg.mc.seed;
        const auto r = residual_check(field, s);
        pass = pass && r.pass;
        residuals.push_back({{"eps", eps}, {"max_residual", r.max_residual}, {"max_ratio", r.max_ratio},
                             {"pass", r.pass}});
        std::printf("eps %-8g max residual %.3e ratio %.3f %s\n", eps, r.max_residual, r.max_ratio,
                    r.pass ? "PASS" : "FAIL");
    }
    const json j = {{"report_version", kReportVersion},
                    {"grid_spec", table.grid_spec},
                    {"v_nonincreasing", table.v_nonincreasing},
                    {"residuals", residuals}};
    require_finite(j);
    write_text(out / "corrector.json", j.dump(2) + "\n");
    return pass ? kPass : kFailures;
}

int cmd_pde(const ExperimentConfig& cfg, const std::filesystem::path& out) {
    if (!cfg.fd) throw InvalidArgument("cli", "the pde subcommand needs an fd block");
    const auto fam = cfg.family.make();
    const auto avg = configured_averaged(cfg, fam);
    const auto g = cfg.fd->grid(cfg.t_end);
    json index = json::array();
    auto solve = [&](const std::string& tag, const PdeModel& m) {
        json h;
        GridSolution sol;
        if (cfg.fd->richardson) {
            auto rr = richardson_error(m, g);
            sol = std::move(rr.coarse);
            h = sol.header_json();
            h["richardson_error"] = rr.estimate;
        } else {
            sol = solve_pde(m, g);
            h = sol.header_json();
        }
        h["value_at_x0"] = sol.value_at(cfg.x0[0], cfg.x0[1]);
        write_text(out / (tag + ".csv"), sol.to_csv());
        index.push_back({{"model", tag}, {"values", tag + ".csv"}, {"header", h}});
        std::printf("%-6s v(x0) = %.6f\n", tag.c_str(), h["value_at_x0"].get<double>());
    };
    solve("avg", PdeModel::averaged_form(avg, fam));
    if (cfg.fd->eps_rows)
        for (std::size_t i = 0; i < cfg.eps_list.size(); ++i)
            if (cfg.eps_list[i] >= 4.0 * g.h1()) solve(eps_tag(i), PdeModel::eps_form(fam, cfg.eps_list[i]));
    const json j = {{"report_version", kReportVersion}, {"solutions", index}};
    require_finite(j);
    write_text(out / "pde.json", j.dump(2) + "\n");
    return kPass;
}

int cmd_converge(const ExperimentConfig& cfg, const std::filesystem::path& out) {
    const auto rep = run_convergence(cfg);
    for (const auto& p : emit(rep, out, cfg.formats)) std::cout << "wrote " << p.string() << '\n';
    for (const auto& [name, ok] : rep.flags) std::printf("%-20s %s\n", name.c_str(), ok ? "PASS" : "FAIL");
    if (rep.incomplete) {
        std::fprintf(stderr, "incomplete: %s\n", rep.error.c_str());
        return kError;
    }
    return rep.all_pass() ? kPass : kFailures;
}

int cmd_audit(const ExperimentConfig& cfg, const std::filesystem::path& out) {
    const auto fam = cfg.family.make();
    SampleSpec s;
    s.lo.assign(static_cast<std::size_t>(fam.d()) + 1, -2.0);
    s.hi.assign(static_cast<std::size_t>(fam.d()) + 1, 2.0);
    s.seed = cfg.mc.seed;
    const auto rep = audit_assumptions(fam, s);
    for (const auto& e : rep.entries)
        std::printf("%-4s %-17s residual %.3e\n", e.id.c_str(), std::string(to_string(e.status)).c_str(), e.residual);
    write_text(out / "audit.json", rep.to_json().dump(2) + "\n");
    return rep.any_violated() ? kFailures : kPass;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-scale FBSDE homogenization experiments"};
    app.require_subcommand(1, 1);
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed_override;
    unsigned threads = 0;

    const std::vector<std::pair<std::string, std::string>> commands{
        {"average", "Cesaro averaging with the closed-form check"},
        {"simulate", "forward paths for every eps and the averaged model"},
        {"bsde", "forward paths and BSDE solutions"},
        {"corrector", "corrector decay table and residual checks"},
        {"pde", "finite-difference solution of the averaged PDE"},
        {"converge", "full convergence experiment with pass flags"},
        {"audit", "sampled assumption audit"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory (default: outputs.dir of the config)");
        sub->add_option("--seed-override", seed_override, "replace mc.seed");
        sub->add_option("--threads", threads, "worker threads, 0 = hardware concurrency");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kPass : kError;
    }

    try {
        set_thread_count(threads);
        auto cfg = ExperimentConfig::load(config_path);
        if (seed_override) cfg.mc.seed = *seed_override;
        const std::filesystem::path out = out_dir.empty() ? cfg.out_dir : out_dir;
        const std::string cmd = app.get_subcommands().front()->get_name();
        if (cmd == "average") return cmd_average(cfg, out);
        if (cmd == "simulate") return cmd_simulate(cfg, out, false);
        if (cmd == "bsde") return cmd_simulate(cfg, out, true);
        if (cmd == "corrector") return cmd_corrector(cfg, out);
        if (cmd == "pde") return cmd_pde(cfg, out);
        if (cmd == "converge") return cmd_converge(cfg, out);
        return cmd_audit(cfg, out);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kError;
    }
}
