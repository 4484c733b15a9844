#include "hmg/harness.hpp"

#include "hmg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace hmg {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw InvalidArgument("config", where + " must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k)) throw InvalidArgument("config", "unknown key '" + where + "." + k + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json estimate_json(const Estimate& e) { return {{"mean", e.mean}, {"stderr", e.stderr_}}; }

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double max_min(const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    if (*lo <= 0.0) return *hi <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    return *hi / *lo;
}

TableData table_from_json(const json& j) {
    check_keys(j, "family.table", {"x1_min", "x1_max", "n1", "x2_min", "x2_max", "n2", "a00", "b", "a11", "f0", "f1"});
    TableData t;
    read(j, "x1_min", t.x1_min);
    read(j, "x1_max", t.x1_max);
    read(j, "n1", t.n1);
    read(j, "x2_min", t.x2_min);
    read(j, "x2_max", t.x2_max);
    read(j, "n2", t.n2);
    read(j, "a00", t.a00);
    read(j, "b", t.b);
    read(j, "a11", t.a11);
    read(j, "f0", t.f0);
    read(j, "f1", t.f1);
    t.validate();
    return t;
}

json table_to_json(const TableData& t) {
    return {{"x1_min", t.x1_min}, {"x1_max", t.x1_max}, {"n1", t.n1}, {"x2_min", t.x2_min}, {"x2_max", t.x2_max},
            {"n2", t.n2},         {"a00", t.a00},       {"b", t.b},   {"a11", t.a11},       {"f0", t.f0},
            {"f1", t.f1}};
}

}  // namespace

std::uint64_t stage_seed(std::uint64_t seed, Stage stage) {
    return derive_seed(seed, 0, static_cast<std::uint64_t>(stage));
}

CoefficientFamily FamilyConfig::make() const {
    return CoefficientFamily::make(family_id_from_string(name), params, d, terminal, table);
}

Grid2D FdConfig::grid(double t_end) const {
    Grid2D g;
    g.L1 = L1;
    g.L2 = L2;
    g.n1 = n1;
    g.n2 = n2;
    g.dt_fd = dt;
    g.t_end = t_end;
    return g;
}

void ExperimentConfig::validate() const {
    if (x0.size() != static_cast<std::size_t>(family.d) + 1)
        throw InvalidArgument("config", "x0 must have d + 1 entries");
    if (!(t_end > 0.0)) throw InvalidArgument("config", "t_end must be positive");
    if (eps_list.empty()) throw InvalidArgument("config", "eps_list must not be empty");
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
        if (!(eps_list[i] > 0.0)) throw InvalidArgument("config", "eps_list entries must be positive");
        if (i > 0 && !(eps_list[i] < eps_list[i - 1]))
            throw InvalidArgument("config", "eps_list must be strictly decreasing");
    }
    if (mc.n_paths < 2) throw InvalidArgument("config", "mc.n_paths must be at least 2");
    sim_grid().validate();
    if (fd) {
        if (family.d != 1) throw InvalidArgument("config", "the fd block needs d = 1");
        fd->grid(t_end).validate();
    }
    if (occupation && occupation->n_list.empty()) throw InvalidArgument("config", "occupation.n_list is empty");
    for (const auto& f : formats)
        if (f != "csv" && f != "json") throw InvalidArgument("config", "unknown output format '" + f + "'");
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    check_keys(j, "config",
               {"family", "x0", "t_end", "eps_list", "mc", "bsde", "averaging", "fd", "corrector", "occupation",
                "moment_k", "bands", "tolerances", "outputs"});
    ExperimentConfig c;
    if (!j.contains("family")) throw InvalidArgument("config", "missing 'family'");
    if (!j.contains("mc") || !j.at("mc").contains("seed"))
        throw InvalidArgument("config", "missing 'mc.seed'; seeding is explicit");

    const auto& fj = j.at("family");
    check_keys(fj, "family", {"name", "params", "d", "terminal", "table"});
    read(fj, "name", c.family.name);
    read(fj, "params", c.family.params);
    read(fj, "d", c.family.d);
    if (fj.contains("terminal")) {
        const auto& tj = fj.at("terminal");
        check_keys(tj, "family.terminal", {"kind", "params"});
        c.family.terminal = Terminal::from_name(tj.at("kind").get<std::string>(),
                                                tj.value("params", std::vector<double>{}));
    }
    if (fj.contains("table")) c.family.table = table_from_json(fj.at("table"));

    read(j, "x0", c.x0);
    read(j, "t_end", c.t_end);
    read(j, "eps_list", c.eps_list);
    read(j, "moment_k", c.moment_k);
    if (j.contains("bands")) {
        c.bands.clear();
        for (const auto& b : j.at("bands")) c.bands.emplace_back(b.at(0).get<double>(), b.at(1).get<double>());
    }

    const auto& mj = j.at("mc");
    check_keys(mj, "mc", {"n_paths", "n_steps", "seed"});
    read(mj, "n_paths", c.mc.n_paths);
    read(mj, "n_steps", c.mc.n_steps);
    read(mj, "seed", c.mc.seed);

    if (j.contains("bsde")) {
        const auto& bj = j.at("bsde");
        check_keys(bj, "bsde", {"basis_degree", "sign_feature", "avg_sign_feature", "n_picard"});
        read(bj, "basis_degree", c.bsde.basis_degree);
        read(bj, "sign_feature", c.bsde.sign_feature);
        read(bj, "avg_sign_feature", c.bsde.avg_sign_feature);
        read(bj, "n_picard", c.bsde.n_picard);
    }
    if (j.contains("averaging")) {
        const auto& aj = j.at("averaging");
        check_keys(aj, "averaging", {"tol", "y_grid", "force_numeric", "schedule"});
        read(aj, "tol", c.averaging.tol);
        read(aj, "y_grid", c.averaging.y_grid);
        read(aj, "force_numeric", c.averaging.force_numeric);
        if (aj.contains("schedule")) {
            const auto& sj = aj.at("schedule");
            check_keys(sj, "averaging.schedule", {"x0", "ratio", "n_horizons"});
            read(sj, "x0", c.averaging.schedule.x0);
            read(sj, "ratio", c.averaging.schedule.ratio);
            read(sj, "n_horizons", c.averaging.schedule.n_horizons);
        }
    }
    if (j.contains("fd")) {
        const auto& dj = j.at("fd");
        check_keys(dj, "fd", {"L1", "L2", "n1", "n2", "dt", "richardson", "eps_rows"});
        FdConfig f;
        read(dj, "L1", f.L1);
        read(dj, "L2", f.L2);
        read(dj, "n1", f.n1);
        read(dj, "n2", f.n2);
        read(dj, "dt", f.dt);
        read(dj, "richardson", f.richardson);
        read(dj, "eps_rows", f.eps_rows);
        c.fd = f;
    }
    if (j.contains("corrector")) {
        const auto& cj = j.at("corrector");
        check_keys(cj, "corrector", {"eps_list", "n_grid"});
        CorrectorConfig k;
        read(cj, "eps_list", k.eps_list);
        read(cj, "n_grid", k.n_grid);
        c.corrector = k;
    }
    if (j.contains("occupation")) {
        const auto& oj = j.at("occupation");
        check_keys(oj, "occupation", {"n_list", "n_paths", "n_steps", "x0"});
        OccupationConfig o;
        read(oj, "n_list", o.n_list);
        read(oj, "n_paths", o.n_paths);
        read(oj, "n_steps", o.n_steps);
        read(oj, "x0", o.x0);
        c.occupation = o;
    }
    if (j.contains("tolerances")) {
        const auto& tj = j.at("tolerances");
        check_keys(tj, "tolerances",
                   {"final_error", "drift_gap_factor", "corrector_factor", "certificate_ratio", "moment_spread",
                    "slope_lo", "slope_hi"});
        if (tj.contains("final_error") && !tj.at("final_error").is_null()) read(tj, "final_error", c.tol.final_error);
        read(tj, "drift_gap_factor", c.tol.drift_gap_factor);
        read(tj, "corrector_factor", c.tol.corrector_factor);
        read(tj, "certificate_ratio", c.tol.certificate_ratio);
        read(tj, "moment_spread", c.tol.moment_spread);
        read(tj, "slope_lo", c.tol.slope_lo);
        read(tj, "slope_hi", c.tol.slope_hi);
    }
    if (j.contains("outputs")) {
        const auto& oj = j.at("outputs");
        check_keys(oj, "outputs", {"dir", "formats"});
        read(oj, "dir", c.out_dir);
        read(oj, "formats", c.formats);
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw InvalidArgument("config", "cannot open " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw InvalidArgument("config", path.string() + ": " + e.what());
    }
    return from_json(j);
}

json ExperimentConfig::to_json() const {
    json j;
    json fj = {{"name", family.name},
               {"params", family.params},
               {"d", family.d},
               {"terminal", {{"kind", std::string(family.terminal.kind_name())}, {"params", family.terminal.params}}}};
    if (family.table) fj["table"] = table_to_json(*family.table);
    j["family"] = fj;
    j["x0"] = x0;
    j["t_end"] = t_end;
    j["eps_list"] = eps_list;
    j["moment_k"] = moment_k;
    json bj = json::array();
    for (const auto& [a, b] : bands) bj.push_back({a, b});
    j["bands"] = bj;
    j["mc"] = {{"n_paths", mc.n_paths}, {"n_steps", mc.n_steps}, {"seed", mc.seed}};
    j["bsde"] = {{"basis_degree", bsde.basis_degree},
                 {"sign_feature", bsde.sign_feature},
                 {"avg_sign_feature", bsde.avg_sign_feature},
                 {"n_picard", bsde.n_picard}};
    j["averaging"] = {{"tol", averaging.tol},
                      {"y_grid", averaging.y_grid},
                      {"force_numeric", averaging.force_numeric},
                      {"schedule",
                       {{"x0", averaging.schedule.x0},
                        {"ratio", averaging.schedule.ratio},
                        {"n_horizons", averaging.schedule.n_horizons}}}};
    if (fd)
        j["fd"] = {{"L1", fd->L1}, {"L2", fd->L2},     {"n1", fd->n1},
                   {"n2", fd->n2}, {"dt", fd->dt},     {"richardson", fd->richardson},
                   {"eps_rows", fd->eps_rows}};
    if (corrector) j["corrector"] = {{"eps_list", corrector->eps_list}, {"n_grid", corrector->n_grid}};
    if (occupation)
        j["occupation"] = {{"n_list", occupation->n_list},
                           {"n_paths", occupation->n_paths},
                           {"n_steps", occupation->n_steps},
                           {"x0", occupation->x0}};
    j["tolerances"] = {{"final_error", finite_or_null(tol.final_error)},
                       {"drift_gap_factor", tol.drift_gap_factor},
                       {"corrector_factor", tol.corrector_factor},
                       {"certificate_ratio", tol.certificate_ratio},
                       {"moment_spread", tol.moment_spread},
                       {"slope_lo", tol.slope_lo},
                       {"slope_hi", tol.slope_hi}};
    j["outputs"] = {{"dir", out_dir}, {"formats", formats}};
    return j;
}

BsdeOptions ExperimentConfig::eps_options() const {
    BsdeOptions o;
    o.basis_degree = bsde.basis_degree;
    o.sign_feature = bsde.sign_feature;
    o.n_picard = bsde.n_picard;
    return o;
}

BsdeOptions ExperimentConfig::avg_options() const {
    BsdeOptions o = eps_options();
    o.sign_feature = bsde.avg_sign_feature;
    return o;
}

AveragedModel configured_averaged(const ExperimentConfig& cfg, const CoefficientFamily& fam) {
    if (fam.has_closed_form() && !cfg.averaging.force_numeric)
        return AveragedModel::from_template(*fam.template_params(), fam.d());
    AveragingOptions o;
    o.schedule = cfg.averaging.schedule;
    o.force_numeric = cfg.averaging.force_numeric;
    return build_averaged(fam, cfg.averaging.y_grid, cfg.averaging.tol, o);
}

Estimate drift_gap(const CoefficientFamily& fam, const AveragedModel& avg, double eps, const PathBundle& bundle,
                   const BsdeSolution& sol) {
    if (sol.n_paths != bundle.n_paths || sol.grid.n_steps != bundle.grid.n_steps)
        throw InvalidArgument("drift_gap", "solution and bundle do not match");
    const std::size_t n = bundle.n_paths, N = bundle.grid.n_steps;
    const double dt = bundle.grid.dt();
    std::vector<double> sup(n);
    parallel_for(n, 256, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t p = lo; p < hi; ++p) {
            double acc = 0.0, m = 0.0;
            for (std::size_t s = 0; s < N; ++s) {
                const auto x = bundle.state(p, s);
                const auto x2 = x.subspan(1);
                const double y = sol.y(p, s);
                acc += (fam.driver(x[0] / eps, x2, y) - avg.f_bar(x[0], x2, y)) * dt;
                m = std::max(m, std::abs(acc));
            }
            sup[p] = m;
        }
    });
    return mean_stderr(sup);
}

bool ConvergenceReport::all_pass() const {
    if (incomplete) return false;
    return std::all_of(flags.begin(), flags.end(), [](const auto& kv) { return kv.second; });
}

void require_finite(const json& j, const std::string& where) {
    if (j.is_number_float()) {
        if (!std::isfinite(j.get<double>()))
            throw InvalidArgument("emit", "non-finite value in cell '" + (where.empty() ? "<root>" : where) + "'");
    } else if (j.is_object()) {
        for (const auto& [k, v] : j.items()) require_finite(v, where.empty() ? k : where + "." + k);
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) require_finite(j[i], where + "[" + std::to_string(i) + "]");
    }
}

json ConvergenceReport::to_json() const {
    json j;
    j["report_version"] = kReportVersion;
    j["config"] = config;
    j["incomplete"] = incomplete;
    if (!error.empty()) j["error"] = error;
    json rows = json::array();
    for (const auto& r : eps_records) {
        json m;
        for (const auto& [k, e] : r.moments) m[std::to_string(k)] = estimate_json(e);
        json row = {{"eps", r.eps},
                    {"Y0", estimate_json(r.y0)},
                    {"error", estimate_json(r.error)},
                    {"cv", estimate_json(r.cv)},
                    {"sup_abs", estimate_json(r.sup_abs)},
                    {"energy", estimate_json(r.energy)},
                    {"drift_gap", estimate_json(r.gap)},
                    {"moments", m}};
        if (r.v_fd) row["v_fd"] = *r.v_fd;
        rows.push_back(row);
    }
    j["eps_records"] = rows;
    if (averaged) {
        json a = {{"Y0", estimate_json(averaged->y0)}};
        if (averaged->v_fd) a["v_fd"] = *averaged->v_fd;
        if (averaged->fd_richardson) a["fd_richardson"] = *averaged->fd_richardson;
        j["averaged"] = a;
    }
    if (decay) {
        json d = json::array();
        for (const auto& r : decay->rows)
            d.push_back({{"eps", r.eps}, {"sup_V", r.sup_V}, {"sup_beta", r.sup_beta}, {"sup_alpha", r.sup_alpha},
                         {"uncertainty", "exact"}});
        j["corrector_decay"] = {{"rows", d}, {"grid_spec", decay->grid_spec}};
    }
    if (occupation_fit) {
        json o = json::array();
        for (const auto& e : occupation)
            o.push_back({{"n", e.n}, {"mean_occupation", e.mean_occupation}, {"stderr", e.std_error}});
        j["occupation"] = {{"estimates", o},
                           {"slope", occupation_fit->slope},
                           {"slope_stderr", occupation_fit->slope_stderr}};
    }
    if (!certificate.eps.empty()) j["certificate"] = certificate.to_json();
    j["flags"] = flags;
    require_finite(j);
    return j;
}

std::string ConvergenceReport::to_csv() const {
    std::string out =
        "model,eps,Y0,Y0_stderr,error,error_stderr,cv,cv_stderr,sup_abs,sup_abs_stderr,energy,energy_stderr,"
        "drift_gap,drift_gap_stderr,v_fd,v_fd_uncertainty\n";
    auto cell = [](const std::string& name, double v) {
        if (!std::isfinite(v)) throw InvalidArgument("emit", "non-finite value in cell '" + name + "'");
        return fmt(v);
    };
    for (std::size_t i = 0; i < eps_records.size(); ++i) {
        const auto& r = eps_records[i];
        const std::string at = "eps_records[" + std::to_string(i) + "].";
        out += "eps," + cell(at + "eps", r.eps);
        for (const auto& [name, e] : {std::pair<const char*, const Estimate&>{"Y0", r.y0}, {"error", r.error},
                                      {"cv", r.cv}, {"sup_abs", r.sup_abs}, {"energy", r.energy},
                                      {"drift_gap", r.gap}})
            out += "," + cell(at + name, e.mean) + "," + cell(at + name + "_stderr", e.stderr_);
        out += r.v_fd ? "," + cell(at + "v_fd", *r.v_fd) + ",exact" : ",,";
        out += '\n';
    }
    if (averaged) {
        out += "avg,," + cell("averaged.Y0", averaged->y0.mean) + "," + cell("averaged.Y0_stderr", averaged->y0.stderr_);
        out += ",,,,,,,,,,";
        if (averaged->v_fd)
            out += "," + cell("averaged.v_fd", *averaged->v_fd) + "," +
                   (averaged->fd_richardson ? cell("averaged.fd_richardson", *averaged->fd_richardson) : "exact");
        else
            out += ",,";
        out += '\n';
    }
    return out;
}

namespace {

struct Run {
    PathBundle bundle;
    BsdeSolution sol;
};

PathFunctionals functionals(const ExperimentConfig& cfg, const Run& run, bool sign) {
    return path_functionals(run.sol, run.bundle, cfg.bands, cfg.bsde.basis_degree, sign);
}

}  // namespace

ConvergenceReport run_convergence(const ExperimentConfig& cfg) {
    cfg.validate();
    ConvergenceReport rep;
    rep.config = cfg.to_json();
    const auto fam = cfg.family.make();
    const SimGrid grid = cfg.sim_grid();
    const std::uint64_t seed = stage_seed(cfg.mc.seed, Stage::forward);
    try {
        const auto avg = configured_averaged(cfg, fam);

        std::vector<PathFunctionals> funcs;
        std::vector<double> eps_done;
        for (double eps : cfg.eps_list) {
            Run run{simulate_eps(fam, eps, cfg.x0, grid, cfg.mc.n_paths, seed), {}};
            run.sol = solve_bsde(run.bundle, eps_bsde_spec(fam, eps, cfg.eps_options()));
            EpsRecord r;
            r.eps = eps;
            r.y0 = {run.sol.Y0, run.sol.Y0_stderr};
            const auto pf = functionals(cfg, run, cfg.bsde.sign_feature);
            r.cv = pf.cv;
            r.sup_abs = pf.sup_abs;
            r.energy = pf.energy;
            r.gap = drift_gap(fam, avg, eps, run.bundle, run.sol);
            r.moments = moment_report(run.bundle, cfg.moment_k);
            if (cfg.fd && cfg.fd->eps_rows && eps >= 4.0 * cfg.fd->grid(cfg.t_end).h1()) {
                const auto sol = solve_pde(PdeModel::eps_form(fam, eps), cfg.fd->grid(cfg.t_end));
                r.v_fd = sol.value_at(cfg.x0[0], cfg.x0[1]);
            }
            funcs.push_back(pf);
            eps_done.push_back(eps);
            rep.eps_records.push_back(r);
        }
        rep.certificate = tightness_certificate(eps_done, funcs);

        Run run{simulate_avg(avg, cfg.x0, grid, cfg.mc.n_paths, seed), {}};
        run.sol = solve_bsde(run.bundle, avg_bsde_spec(avg, fam, cfg.avg_options()));
        AveragedRecord a;
        a.y0 = {run.sol.Y0, run.sol.Y0_stderr};
        for (auto& r : rep.eps_records)
            r.error = {std::abs(r.y0.mean - a.y0.mean), combined_stderr(r.y0.stderr_, a.y0.stderr_)};
        if (cfg.fd) {
            const auto model = PdeModel::averaged_form(avg, fam);
            const auto g = cfg.fd->grid(cfg.t_end);
            if (cfg.fd->richardson) {
                const auto rr = richardson_error(model, g);
                a.v_fd = rr.coarse.value_at(cfg.x0[0], cfg.x0[1]);
                a.fd_richardson = rr.estimate;
            } else {
                a.v_fd = solve_pde(model, g).value_at(cfg.x0[0], cfg.x0[1]);
            }
        }
        rep.averaged = a;

        if (cfg.corrector) {
            const auto& list = cfg.corrector->eps_list.empty() ? cfg.eps_list : cfg.corrector->eps_list;
            auto box = reference_box(fam.d());
            box.n_grid = cfg.corrector->n_grid;
            rep.decay = decay_table(fam, avg, list, box);
        }
        if (cfg.occupation) {
            const auto& oc = *cfg.occupation;
            const auto& x0 = oc.x0.empty() ? cfg.x0 : oc.x0;
            const auto b = simulate_avg(avg, x0, SimGrid{cfg.t_end, oc.n_steps}, oc.n_paths,
                                        stage_seed(cfg.mc.seed, Stage::occupation));
            rep.occupation = occupation_time(b, oc.n_list);
            std::vector<double> lx, ly;
            for (const auto& e : rep.occupation) {
                lx.push_back(std::log(static_cast<double>(e.n)));
                ly.push_back(std::log(e.mean_occupation));
            }
            rep.occupation_fit = fit_line(lx, ly);
        }
    } catch (const Error& e) {
        rep.incomplete = true;
        rep.error = e.what();
        return rep;
    }

    // Flags.
    const auto& rs = rep.eps_records;
    bool mono = true, gap_mono = true;
    for (std::size_t i = 1; i < rs.size(); ++i) {
        if (rs[i].error.mean > rs[i - 1].error.mean + combined_stderr(rs[i].error.stderr_, rs[i - 1].error.stderr_))
            mono = false;
        if (rs[i].gap.mean > rs[i - 1].gap.mean + combined_stderr(rs[i].gap.stderr_, rs[i - 1].gap.stderr_))
            gap_mono = false;
    }
    rep.flags["error_monotone"] = mono;
    rep.flags["drift_gap_monotone"] = gap_mono;
    if (std::isfinite(cfg.tol.final_error)) rep.flags["final_error"] = rs.back().error.mean <= cfg.tol.final_error;
    if (rs.size() > 1) rep.flags["drift_gap_decay"] = rs.back().gap.mean <= cfg.tol.drift_gap_factor * rs.front().gap.mean;
    rep.flags["certificate_cv_sup"] = rep.certificate.cv_plus_sup_ratio <= cfg.tol.certificate_ratio;
    rep.flags["certificate_energy"] = rep.certificate.energy_ratio <= cfg.tol.certificate_ratio;
    if (std::find(cfg.moment_k.begin(), cfg.moment_k.end(), 1) != cfg.moment_k.end()) {
        std::vector<double> m1;
        for (const auto& r : rs) m1.push_back(r.moments.at(1).mean);
        rep.flags["moments_uniform"] = max_min(m1) <= cfg.tol.moment_spread;
    }
    if (rep.averaged->v_fd) {
        const double allowance = 3.0 * rep.averaged->y0.stderr_ + rep.averaged->fd_richardson.value_or(0.0) +
                                 2.0 * grid.dt();
        rep.flags["fd_triangle"] = std::abs(*rep.averaged->v_fd - rep.averaged->y0.mean) <= allowance;
    }
    if (rep.decay) {
        rep.flags["corrector_monotone"] = rep.decay->v_nonincreasing;
        rep.flags["corrector_decay"] =
            rep.decay->rows.back().sup_V <= cfg.tol.corrector_factor * rep.decay->rows.front().sup_V;
    }
    if (rep.occupation_fit)
        rep.flags["occupation_slope"] =
            rep.occupation_fit->slope >= cfg.tol.slope_lo && rep.occupation_fit->slope <= cfg.tol.slope_hi;
    return rep;
}

std::vector<DriftGapRow> monte_carlo_drift_gap(const ExperimentConfig& cfg, const std::vector<double>& eps_list) {
    cfg.validate();
    const auto fam = cfg.family.make();
    const auto avg = configured_averaged(cfg, fam);
    const std::uint64_t seed = stage_seed(cfg.mc.seed, Stage::forward);
    std::vector<DriftGapRow> rows;
    for (double eps : eps_list) {
        const auto b = simulate_eps(fam, eps, cfg.x0, cfg.sim_grid(), cfg.mc.n_paths, seed);
        const auto sol = solve_bsde(b, eps_bsde_spec(fam, eps, cfg.eps_options()));
        rows.push_back({eps, drift_gap(fam, avg, eps, b, sol)});
    }
    return rows;
}

json FlowReport::to_json() const {
    json rs = json::array();
    for (const auto& r : rows)
        rs.push_back({{"x0_a", r.x0_a},
                      {"x0_b", r.x0_b},
                      {"dx0", r.dx0},
                      {"ks", r.ks},
                      {"dY0", r.dy0},
                      {"dY0_stderr", r.dy0_stderr}});
    json ys = json::array();
    for (const auto& e : y0) ys.push_back(estimate_json(e));
    json j = {{"model", model}, {"Y0", ys}, {"rows", rs}, {"shrinking", shrinking},
              {"max_pair_ratio", max_pair_ratio}};
    require_finite(j);
    return j;
}

FlowReport flow_continuity_check(const ExperimentConfig& cfg, const std::vector<std::vector<double>>& x0_list,
                                 std::optional<double> eps) {
    cfg.validate();
    if (x0_list.size() < 2) throw InvalidArgument("flow_continuity_check", "need at least two initial points");
    const auto fam = cfg.family.make();
    const auto avg = configured_averaged(cfg, fam);
    const std::uint64_t seed = stage_seed(cfg.mc.seed, Stage::forward);
    const std::size_t dim = static_cast<std::size_t>(fam.d()) + 1;

    FlowReport rep;
    rep.model = eps ? "eps=" + fmt(*eps) : "averaged";
    std::vector<std::vector<std::vector<double>>> marginals;
    for (const auto& x0 : x0_list) {
        if (x0.size() != dim) throw InvalidArgument("flow_continuity_check", "x0 must have d + 1 entries");
        const auto b = eps ? simulate_eps(fam, *eps, x0, cfg.sim_grid(), cfg.mc.n_paths, seed)
                           : simulate_avg(avg, x0, cfg.sim_grid(), cfg.mc.n_paths, seed);
        const auto spec = eps ? eps_bsde_spec(fam, *eps, cfg.eps_options()) : avg_bsde_spec(avg, fam, cfg.avg_options());
        const auto sol = solve_bsde(b, spec);
        rep.y0.push_back({sol.Y0, sol.Y0_stderr});
        std::vector<std::vector<double>> m;
        for (std::size_t c = 0; c < dim; ++c) m.push_back(b.marginal(b.grid.n_steps, c));
        marginals.push_back(std::move(m));
    }
    for (std::size_t i = 1; i < x0_list.size(); ++i) {
        FlowRow r;
        r.x0_a = x0_list[i - 1];
        r.x0_b = x0_list[i];
        double d2 = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            d2 += (r.x0_b[c] - r.x0_a[c]) * (r.x0_b[c] - r.x0_a[c]);
            r.ks = std::max(r.ks, ks_distance(marginals[i - 1][c], marginals[i][c]));
        }
        r.dx0 = std::sqrt(d2);
        r.dy0 = std::abs(rep.y0[i].mean - rep.y0[i - 1].mean);
        r.dy0_stderr = combined_stderr(rep.y0[i].stderr_, rep.y0[i - 1].stderr_);
        if (!rep.rows.empty() && r.dy0 > rep.rows.back().dy0 + combined_stderr(r.dy0_stderr, rep.rows.back().dy0_stderr))
            rep.shrinking = false;
        rep.rows.push_back(r);
    }
    for (std::size_t i = 0; i < rep.y0.size(); ++i)
        for (std::size_t k = i + 1; k < rep.y0.size(); ++k) {
            const double diff = std::abs(rep.y0[i].mean - rep.y0[k].mean);
            const double se = combined_stderr(rep.y0[i].stderr_, rep.y0[k].stderr_);
            rep.max_pair_ratio = std::max(rep.max_pair_ratio, se > 0.0 ? diff / se : (diff > 0.0 ? INFINITY : 0.0));
        }
    return rep;
}

InterfaceJump interface_jump(const ExperimentConfig& cfg, double h, std::optional<double> eps) {
    if (!(h > 0.0)) throw InvalidArgument("interface_jump", "h must be positive");
    std::vector<std::vector<double>> xs;
    for (double x1 : {-h, -0.5 * h, -0.25 * h, 0.25 * h, 0.5 * h, h}) {
        auto x = cfg.x0;
        x[0] = x1;
        xs.push_back(std::move(x));
    }
    const auto rep = flow_continuity_check(cfg, xs, eps);
    const auto& y = rep.y0;
    auto diff = [&](std::size_t a, std::size_t b) {
        return Estimate{y[a].mean - y[b].mean, combined_stderr(y[a].stderr_, y[b].stderr_)};
    };
    InterfaceJump r;
    r.h = h;
    r.d_h = diff(5, 0);
    r.d_half = diff(4, 1);
    r.d_quarter = diff(3, 2);
    r.jump.mean = (8.0 * r.d_quarter.mean - 6.0 * r.d_half.mean + r.d_h.mean) / 3.0;
    r.jump.stderr_ = std::sqrt(64.0 * r.d_quarter.stderr_ * r.d_quarter.stderr_ +
                               36.0 * r.d_half.stderr_ * r.d_half.stderr_ + r.d_h.stderr_ * r.d_h.stderr_) /
                     3.0;
    return r;
}

std::vector<std::filesystem::path> emit(const ConvergenceReport& report, const std::filesystem::path& dir,
                                        const std::vector<std::string>& formats) {
    // Render everything first so that a bad cell leaves no partial output.
    std::vector<std::pair<std::filesystem::path, std::string>> files;
    for (const auto& f : formats) {
        if (f == "json") {
            files.emplace_back(dir / "convergence.json", report.to_json().dump(2) + "\n");
        } else if (f == "csv") {
            files.emplace_back(dir / "convergence.csv", report.to_csv());
            files.emplace_back(dir / "decay.csv",
                               report.decay ? report.decay->to_csv() : DecayTable{}.to_csv());
        } else {
            throw InvalidArgument("emit", "unknown format '" + f + "'");
        }
    }
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw InvalidArgument("emit", "cannot create " + dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    for (const auto& [path, text] : files) {
        std::ofstream os(path, std::ios::binary);
        os << text;
        if (!os) throw InvalidArgument("emit", "write failed for " + path.string());
        written.push_back(path);
    }
    return written;
}

}  // namespace hmg
