#include "hmg/bsde.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>

namespace hmg {

void BsdeSpec::validate() const {
    if (!terminal || !driver) throw InvalidArgument("solve_bsde", "terminal and driver are required");
    if (n_picard < 1) throw InvalidArgument("solve_bsde", "n_picard must be at least 1");
    if (basis_degree < 0 || basis_degree > 6) throw InvalidArgument("solve_bsde", "basis_degree must be in [0, 6]");
    if (!(picard_tol > 0.0)) throw InvalidArgument("solve_bsde", "picard_tol must be positive");
    if (!(h_bound >= 0.0) || !(f_bound >= 0.0)) throw InvalidArgument("solve_bsde", "bounds must be non-negative");
}

BsdeSpec eps_bsde_spec(const CoefficientFamily& fam, double eps, const BsdeOptions& opts) {
    if (!(eps > 0.0)) throw InvalidArgument("solve_bsde", "eps must be positive");
    auto f = std::make_shared<const CoefficientFamily>(fam);
    BsdeSpec s;
    s.terminal = [f](std::span<const double> x) { return f->terminal()(x[0], x.subspan(1)); };
    s.driver = [f, eps](std::span<const double> x, double y) { return f->driver(x[0] / eps, x.subspan(1), y); };
    s.basis_degree = opts.basis_degree;
    s.include_sign_feature = opts.sign_feature;
    s.n_picard = opts.n_picard;
    s.h_bound = fam.bounds().h_bound;
    s.f_bound = fam.bounds().f_bound;
    return s;
}

BsdeSpec avg_bsde_spec(const AveragedModel& avg, const CoefficientFamily& fam, const BsdeOptions& opts) {
    auto a = std::make_shared<const AveragedModel>(avg);
    const Terminal h = fam.terminal();
    BsdeSpec s;
    s.terminal = [h](std::span<const double> x) { return h(x[0], x.subspan(1)); };
    s.driver = [a](std::span<const double> x, double y) { return a->f_bar(x[0], x.subspan(1), y); };
    s.basis_degree = opts.basis_degree;
    s.include_sign_feature = opts.sign_feature;
    s.n_picard = opts.n_picard;
    // f_bar is a weighted mean of f, so the same bound holds.
    s.h_bound = fam.bounds().h_bound;
    s.f_bound = fam.bounds().f_bound;
    return s;
}

std::vector<double> BsdeSolution::column(std::size_t step) const {
    std::vector<double> v(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) v[p] = y(p, step);
    return v;
}

nlohmann::json BsdeSolution::summary_json() const {
    nlohmann::json j;
    j["magic"] = "HMGS1";
    j["version"] = 1;
    j["n_paths"] = n_paths;
    j["n_steps"] = grid.n_steps;
    j["k"] = k;
    j["t_end"] = grid.t_end;
    j["Y0"] = Y0;
    j["Y0_stderr"] = Y0_stderr;
    j["picard_residuals"] = picard_residuals;
    j["picard_converged"] = picard_converged;
    j["max_condition_number"] =
        condition_numbers.empty() ? 1.0 : *std::max_element(condition_numbers.begin(), condition_numbers.end());
    j["clamp_count"] = clamp_count;
    return j;
}

namespace {

constexpr char kMagic[5] = {'H', 'M', 'G', 'S', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw InvalidArgument("bsde_solution", "truncated container");
    return v;
}

void put_array(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void get_array(std::istream& is, std::vector<double>& v) {
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!is) throw InvalidArgument("bsde_solution", "truncated container");
}

}  // namespace

void BsdeSolution::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidArgument("bsde_solution", "cannot open " + path.string());
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kVersion);
    put<std::uint64_t>(os, n_paths);
    put<std::uint64_t>(os, grid.n_steps);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(k));
    put<double>(os, grid.t_end);
    put<double>(os, Y0);
    put<double>(os, Y0_stderr);
    put<std::uint64_t>(os, clamp_count);
    put<std::uint64_t>(os, picard_residuals.size());
    put_array(os, Y);
    put_array(os, Y_regression);
    put_array(os, Z);
    put_array(os, picard_residuals);
    put_array(os, condition_numbers);
    if (!os) throw InvalidArgument("bsde_solution", "write failed for " + path.string());
    std::ofstream js(path.string() + ".json");
    js << summary_json().dump(2) << '\n';
}

BsdeSolution BsdeSolution::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidArgument("bsde_solution", "cannot open " + path.string());
    char magic[5];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw InvalidArgument("bsde_solution", "bad magic");
    if (get<std::uint32_t>(is) != kVersion) throw InvalidArgument("bsde_solution", "unsupported version");
    BsdeSolution s;
    s.n_paths = get<std::uint64_t>(is);
    s.grid.n_steps = get<std::uint64_t>(is);
    s.k = static_cast<int>(get<std::uint64_t>(is));
    s.grid.t_end = get<double>(is);
    s.Y0 = get<double>(is);
    s.Y0_stderr = get<double>(is);
    s.clamp_count = get<std::uint64_t>(is);
    const auto n_res = get<std::uint64_t>(is);
    s.grid.validate();
    s.Y.resize(s.n_paths * (s.grid.n_steps + 1));
    s.Y_regression.resize(s.Y.size());
    s.Z.resize(s.n_paths * s.grid.n_steps * static_cast<std::size_t>(s.k));
    s.picard_residuals.resize(n_res);
    s.condition_numbers.resize(s.grid.n_steps);
    get_array(is, s.Y);
    get_array(is, s.Y_regression);
    get_array(is, s.Z);
    get_array(is, s.picard_residuals);
    get_array(is, s.condition_numbers);
    s.picard_converged = s.picard_residuals.empty() || s.picard_residuals.back() <= BsdeSpec{}.picard_tol;
    return s;
}

namespace {

// Exponent vectors of all monomials of total degree <= p in `dims` variables.
void monomials(int dims, int p, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
    if (static_cast<int>(cur.size()) == dims) {
        out.push_back(cur);
        return;
    }
    int used = 0;
    for (int e : cur) used += e;
    for (int e = 0; e + used <= p; ++e) {
        cur.push_back(e);
        monomials(dims, p, cur, out);
        cur.pop_back();
    }
}

}  // namespace

Projection::Projection(const PathBundle& bundle, std::size_t step, int degree, bool sign_feature,
                       const char* stage) {
    const std::size_t n = bundle.n_paths;
    const std::size_t dim = bundle.dim();
    const double nd = static_cast<double>(n);
    std::vector<std::size_t> keep;
    std::vector<double> mean, scale;
    for (std::size_t c = 0; c < dim; ++c) {
        double m = 0.0;
        for (std::size_t p = 0; p < n; ++p) m += bundle.state(p, step)[c];
        m /= nd;
        double v = 0.0;
        for (std::size_t p = 0; p < n; ++p) v += std::pow(bundle.state(p, step)[c] - m, 2);
        const double sd = std::sqrt(v / nd);
        if (sd > 1e-12 * std::max(1.0, std::abs(m))) {
            keep.push_back(c);
            mean.push_back(m);
            scale.push_back(sd);
        }
    }
    std::vector<std::vector<int>> exps;
    std::vector<int> cur;
    monomials(static_cast<int>(keep.size()), keep.empty() ? 0 : degree, cur, exps);
    std::size_t positives = 0;
    for (std::size_t p = 0; p < n; ++p) positives += bundle.state(p, step)[0] > 0.0 ? 1 : 0;
    const bool use_sign = sign_feature && positives > 0 && positives < n;

    const auto m = static_cast<Eigen::Index>(exps.size() + (use_sign ? 1 : 0));
    phi_.resize(static_cast<Eigen::Index>(n), m);
    std::vector<double> z(keep.size());
    for (std::size_t p = 0; p < n; ++p) {
        const auto x = bundle.state(p, step);
        for (std::size_t i = 0; i < keep.size(); ++i) z[i] = (x[keep[i]] - mean[i]) / scale[i];
        const auto row = static_cast<Eigen::Index>(p);
        for (std::size_t e = 0; e < exps.size(); ++e) {
            double v = 1.0;
            for (std::size_t i = 0; i < keep.size(); ++i)
                for (int r = 0; r < exps[e][i]; ++r) v *= z[i];
            phi_(row, static_cast<Eigen::Index>(e)) = v;
        }
        if (use_sign) phi_(row, m - 1) = x[0] > 0.0 ? 1.0 : 0.0;
    }
    const Eigen::MatrixXd gram = (phi_.transpose() * phi_) / nd;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    cond_ = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(cond_ <= kMaxConditionNumber))
        throw NumericalError(stage, "rank-deficient regression at step " + std::to_string(step) +
                                        " (condition number " + std::to_string(cond_) + ")");
    ldlt_.compute(gram);
}

Eigen::VectorXd Projection::fit(const Eigen::VectorXd& target) const {
    const Eigen::VectorXd rhs = (phi_.transpose() * target) / static_cast<double>(phi_.rows());
    return phi_ * ldlt_.solve(rhs);
}

BsdeSolution solve_bsde(const PathBundle& bundle, const BsdeSpec& spec) {
    spec.validate();
    if (bundle.n_paths < 2) throw InvalidArgument("solve_bsde", "need at least two paths");
    const std::size_t n = bundle.n_paths, N = bundle.grid.n_steps, K = static_cast<std::size_t>(bundle.k);
    const double dt = bundle.grid.dt();

    BsdeSolution sol;
    sol.n_paths = n;
    sol.grid = bundle.grid;
    sol.k = bundle.k;
    sol.Y.assign(n * (N + 1), 0.0);
    sol.Y_regression.assign(n * (N + 1), 0.0);
    sol.Z.assign(n * N * K, 0.0);
    sol.condition_numbers.assign(N, 1.0);
    sol.picard_residuals.assign(static_cast<std::size_t>(spec.n_picard), 0.0);

    Eigen::VectorXd next(static_cast<Eigen::Index>(n));
    for (std::size_t p = 0; p < n; ++p) {
        const double h = spec.terminal(bundle.state(p, N));
        if (!std::isfinite(h)) throw NumericalError("solve_bsde", "non-finite terminal value on path " + std::to_string(p));
        next[static_cast<Eigen::Index>(p)] = h;
        sol.Y[p * (N + 1) + N] = h;
        sol.Y_regression[p * (N + 1) + N] = h;
    }

    std::vector<double> y(n), y_new(n);
    std::vector<double> chunk_max;
    for (std::size_t s = N; s-- > 0;) {
        const Projection proj(bundle, s, spec.basis_degree, spec.include_sign_feature, "solve_bsde");
        sol.condition_numbers[s] = proj.condition_number();
        const Eigen::VectorXd E = proj.fit(next);

        // Z from the centered increment, which shares E's conditional mean of zero.
        Eigen::VectorXd target(static_cast<Eigen::Index>(n));
        for (std::size_t c = 0; c < K; ++c) {
            for (std::size_t p = 0; p < n; ++p) {
                const auto i = static_cast<Eigen::Index>(p);
                target[i] = (next[i] - E[i]) * bundle.increment(p, s)[c] / dt;
            }
            const Eigen::VectorXd zc = proj.fit(target);
            for (std::size_t p = 0; p < n; ++p) sol.Z[(p * N + s) * K + c] = zc[static_cast<Eigen::Index>(p)];
        }

        for (std::size_t p = 0; p < n; ++p) y[p] = E[static_cast<Eigen::Index>(p)];
        double prev = std::numeric_limits<double>::infinity();
        int rises = 0;
        const std::size_t grain = 1024;
        for (int j = 0; j < spec.n_picard; ++j) {
            chunk_max.assign((n + grain - 1) / grain, 0.0);
            parallel_for(n, grain, [&](std::size_t lo, std::size_t hi) {
                double mx = 0.0;
                for (std::size_t p = lo; p < hi; ++p) {
                    y_new[p] = E[static_cast<Eigen::Index>(p)] + spec.driver(bundle.state(p, s), y[p]) * dt;
                    mx = std::max(mx, std::abs(y_new[p] - y[p]));
                }
                chunk_max[lo / grain] = mx;
            });
            const double res = *std::max_element(chunk_max.begin(), chunk_max.end());
            if (!std::isfinite(res)) throw NumericalError("solve_bsde", "non-finite value at step " + std::to_string(s));
            auto& slot = sol.picard_residuals[static_cast<std::size_t>(j)];
            slot = std::max(slot, res);
            rises = res > prev ? rises + 1 : 0;
            if (rises >= 2)
                throw NumericalError("solve_bsde", "Picard iteration not contracting at step " + std::to_string(s));
            prev = res;
            std::swap(y, y_new);
        }

        const double bound = spec.h_bound + bundle.grid.t_end * spec.f_bound;
        for (std::size_t p = 0; p < n; ++p) {
            double v = y[p];
            sol.Y_regression[p * (N + 1) + s] = v;
            if (spec.clamp && std::abs(v) > bound) {
                v = std::copysign(bound, v);
                ++sol.clamp_count;
            }
            sol.Y[p * (N + 1) + s] = v;
        }
        if (s == 0) {
            // All paths share x0: Y0 is the ensemble value, its error that of
            // the pathwise estimator Y_1 + f dt.
            std::vector<double> y1(next.data(), next.data() + next.size());
            sol.Y0 = mean_stderr(y).mean;
            sol.Y0_stderr = mean_stderr(y1).stderr_;
        }
        for (std::size_t p = 0; p < n; ++p) next[static_cast<Eigen::Index>(p)] = y[p];
    }
    sol.picard_converged = sol.picard_residuals.back() <= spec.picard_tol;
    return sol;
}

ProjectionFn polynomial_projection(const PathBundle& bundle, int degree, bool sign_feature) {
    return [&bundle, degree, sign_feature](std::size_t step, const Eigen::VectorXd& target) {
        return Projection(bundle, step, degree, sign_feature, "conditional_variation").fit(target);
    };
}

Estimate conditional_variation(std::span<const double> Y, std::size_t n_paths, const SimGrid& grid,
                               const ProjectionFn& project) {
    const std::size_t N = grid.n_steps;
    if (n_paths == 0 || Y.size() != n_paths * (N + 1))
        throw InvalidArgument("conditional_variation", "Y must be [n_paths][n_steps + 1]");
    for (double v : Y)
        if (!std::isfinite(v)) throw InvalidArgument("conditional_variation", "Y must be finite");
    std::vector<double> total(n_paths, 0.0);
    Eigen::VectorXd inc(static_cast<Eigen::Index>(n_paths));
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t p = 0; p < n_paths; ++p)
            inc[static_cast<Eigen::Index>(p)] = Y[p * (N + 1) + i + 1] - Y[p * (N + 1) + i];
        const Eigen::VectorXd m = project(i, inc);
        for (std::size_t p = 0; p < n_paths; ++p) total[p] += std::abs(m[static_cast<Eigen::Index>(p)]);
    }
    return mean_stderr(total);
}

std::size_t upcrossings(std::span<const double> path, double a, double b) {
    if (!(a < b)) throw InvalidArgument("upcrossings", "need a < b");
    std::size_t count = 0;
    bool below = false;
    for (double v : path) {
        if (v <= a) {
            below = true;
        } else if (below && v >= b) {
            ++count;
            below = false;
        }
    }
    return count;
}

PathFunctionals path_functionals(const BsdeSolution& sol, const PathBundle& bundle,
                                 const std::vector<std::pair<double, double>>& bands, int degree,
                                 bool sign_feature) {
    if (sol.n_paths != bundle.n_paths || sol.grid.n_steps != bundle.grid.n_steps)
        throw InvalidArgument("path_functionals", "solution and bundle do not match");
    const std::size_t n = sol.n_paths, N = sol.grid.n_steps, K = static_cast<std::size_t>(sol.k);
    const double dt = sol.grid.dt();
    PathFunctionals out;
    out.cv = conditional_variation(sol.Y_regression, n, sol.grid, polynomial_projection(bundle, degree, sign_feature));
    std::vector<double> sup(n), energy(n);
    for (std::size_t p = 0; p < n; ++p) {
        double m = 0.0, z2 = 0.0;
        for (std::size_t s = 0; s <= N; ++s) m = std::max(m, std::abs(sol.y(p, s)));
        for (std::size_t s = 0; s < N; ++s)
            for (std::size_t c = 0; c < K; ++c) z2 += sol.z(p, s, c) * sol.z(p, s, c) * dt;
        sup[p] = m;
        energy[p] = m * m + z2;
        out.sup_norm = std::max(out.sup_norm, m);
    }
    out.sup_abs = mean_stderr(sup);
    out.energy = mean_stderr(energy);
    for (const auto& [a, b] : bands) {
        double total = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            total += static_cast<double>(upcrossings(std::span<const double>(sol.Y.data() + p * (N + 1), N + 1), a, b));
        out.upcrossings[{a, b}] = total / static_cast<double>(n);
    }
    return out;
}

namespace {

double max_min_ratio(const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    if (*hi == *lo) return 1.0;
    if (!(*lo > 0.0)) return std::numeric_limits<double>::infinity();
    return *hi / *lo;
}

}  // namespace

TightnessCertificate tightness_certificate(const std::vector<double>& eps, const std::vector<PathFunctionals>& runs) {
    if (runs.empty() || eps.size() != runs.size())
        throw InvalidArgument("tightness_certificate", "need one eps per run");
    TightnessCertificate c;
    c.eps = eps;
    for (const auto& r : runs) {
        c.cv_plus_sup.push_back(r.cv.mean + r.sup_abs.mean);
        c.energy.push_back(r.energy.mean);
        for (const auto& [band, count] : r.upcrossings) c.upcrossings[band].push_back(count);
    }
    c.cv_plus_sup_ratio = max_min_ratio(c.cv_plus_sup);
    c.energy_ratio = max_min_ratio(c.energy);
    for (const auto& [band, v] : c.upcrossings) c.upcrossing_ratio[band] = max_min_ratio(v);
    return c;
}

nlohmann::json TightnessCertificate::to_json() const {
    nlohmann::json j;
    j["eps"] = eps;
    j["cv_plus_sup"] = cv_plus_sup;
    j["energy"] = energy;
    j["cv_plus_sup_ratio"] = cv_plus_sup_ratio;
    j["energy_ratio"] = energy_ratio;
    nlohmann::json bands = nlohmann::json::array();
    for (const auto& [band, v] : upcrossings)
        bands.push_back({{"a", band.first}, {"b", band.second}, {"mean_count", v}, {"ratio", upcrossing_ratio.at(band)}});
    j["upcrossings"] = bands;
    return j;
}

double apriori_bound(double h_bound, double f_bound, double t_end) {
    const double y = h_bound + t_end * f_bound;
    return y * y + h_bound * h_bound + 2.0 * t_end * f_bound * y;
}

}  // namespace hmg
