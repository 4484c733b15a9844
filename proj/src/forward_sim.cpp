#include "hmg/forward_sim.hpp"

#include "hmg/rng.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace hmg {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

void SimGrid::validate() const {
    if (!(t_end > 0.0) || !std::isfinite(t_end)) throw InvalidArgument("grid", "t_end must be positive");
    if (n_steps < 2) throw InvalidArgument("grid", "n_steps must be at least 2");
}

PathBundle PathBundle::allocate(std::size_t n_paths, const SimGrid& grid, int d, int k) {
    grid.validate();
    if (n_paths == 0) throw InvalidArgument("path_bundle", "n_paths must be positive");
    if (d < 1 || d + 1 > kMaxDim || k != d + 1) throw InvalidArgument("path_bundle", "unsupported dimensions");
    PathBundle b;
    b.n_paths = n_paths;
    b.grid = grid;
    b.d = d;
    b.k = k;
    b.X.assign(n_paths * (grid.n_steps + 1) * b.dim(), 0.0);
    b.dB.assign(n_paths * grid.n_steps * static_cast<std::size_t>(k), 0.0);
    return b;
}

std::vector<double> PathBundle::marginal(std::size_t step, std::size_t c) const {
    std::vector<double> v(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) v[p] = state(p, step)[c];
    return v;
}

nlohmann::json PathBundle::header_json() const {
    nlohmann::json j;
    j["magic"] = "HMGB1";
    j["version"] = 1;
    j["n_paths"] = n_paths;
    j["n_steps"] = grid.n_steps;
    j["d"] = d;
    j["k"] = k;
    j["seed"] = seed;
    j["eps"] = eps ? nlohmann::json(*eps) : nlohmann::json(nullptr);
    j["t_end"] = grid.t_end;
    return j;
}

namespace {

constexpr char kMagic[5] = {'H', 'M', 'G', 'B', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw InvalidArgument("path_bundle", "truncated container");
    return v;
}

}  // namespace

void PathBundle::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidArgument("path_bundle", "cannot open " + path.string());
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kVersion);
    put<std::uint64_t>(os, n_paths);
    put<std::uint64_t>(os, grid.n_steps);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(k));
    put<std::uint64_t>(os, seed);
    put<double>(os, eps ? *eps : std::numeric_limits<double>::quiet_NaN());
    put<double>(os, grid.t_end);
    os.write(reinterpret_cast<const char*>(X.data()), static_cast<std::streamsize>(X.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(dB.data()), static_cast<std::streamsize>(dB.size() * sizeof(double)));
    if (!os) throw InvalidArgument("path_bundle", "write failed for " + path.string());
    std::ofstream js(path.string() + ".json");
    js << header_json().dump(2) << '\n';
}

PathBundle PathBundle::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidArgument("path_bundle", "cannot open " + path.string());
    char magic[5];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw InvalidArgument("path_bundle", "bad magic");
    if (get<std::uint32_t>(is) != kVersion) throw InvalidArgument("path_bundle", "unsupported version");
    const auto n_paths = get<std::uint64_t>(is);
    SimGrid grid;
    grid.n_steps = get<std::uint64_t>(is);
    const auto d = static_cast<int>(get<std::uint64_t>(is));
    const auto k = static_cast<int>(get<std::uint64_t>(is));
    const auto seed = get<std::uint64_t>(is);
    const double eps = get<double>(is);
    grid.t_end = get<double>(is);
    PathBundle b = allocate(n_paths, grid, d, k);
    b.seed = seed;
    if (!std::isnan(eps)) b.eps = eps;
    is.read(reinterpret_cast<char*>(b.X.data()), static_cast<std::streamsize>(b.X.size() * sizeof(double)));
    is.read(reinterpret_cast<char*>(b.dB.data()), static_cast<std::streamsize>(b.dB.size() * sizeof(double)));
    if (!is) throw InvalidArgument("path_bundle", "truncated container");
    return b;
}

void brownian_increments(std::uint64_t seed, std::size_t path, std::size_t step, double dt, std::span<double> out) {
    const Philox4x32 gen(derive_seed(seed, 0));
    const double s = std::sqrt(dt);
    for (std::size_t c = 0; c < out.size(); c += 2) {
        const auto z = normal_pair(gen, path, static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(c / 2));
        out[c] = s * z[0];
        if (c + 1 < out.size()) out[c + 1] = s * z[1];
    }
}

void euler_update(const CoefficientFamily& fam, double eps, std::span<const double> x, double dt,
                  std::span<const double> dB, std::span<double> out) {
    double phi = 0.0;
    SmallVec b1, s1;
    fam.forward_coefficients(x[0] / eps, x.subspan(1), phi, b1, s1);
    out[0] = x[0] + phi * dB[0];
    for (Eigen::Index i = 0; i < b1.size(); ++i) {
        const auto u = static_cast<std::size_t>(i) + 1;
        out[u] = x[u] + b1[i] * dt + s1[i] * dB[u];
    }
}

void euler_update(const AveragedModel& avg, std::span<const double> x, double dt, std::span<const double> dB,
                  std::span<double> out) {
    double phi = 0.0;
    SmallVec b1;
    SmallMat s1;
    avg.forward_coefficients(x[0], x.subspan(1), phi, b1, s1);
    out[0] = x[0] + phi * dB[0];
    for (Eigen::Index i = 0; i < b1.size(); ++i) {
        double v = x[static_cast<std::size_t>(i) + 1] + b1[i] * dt;
        for (Eigen::Index j = 0; j < s1.cols(); ++j) v += s1(i, j) * dB[static_cast<std::size_t>(j) + 1];
        out[static_cast<std::size_t>(i) + 1] = v;
    }
}

namespace {

template <class Step>
PathBundle simulate(const char* stage, int d, std::span<const double> x0, const SimGrid& grid, std::size_t n_paths,
                    std::uint64_t seed, Step&& step) {
    if (x0.size() != static_cast<std::size_t>(d) + 1) throw InvalidArgument(stage, "x0 must have dimension d + 1");
    for (double v : x0)
        if (!std::isfinite(v)) throw InvalidArgument(stage, "x0 must be finite");
    PathBundle b = PathBundle::allocate(n_paths, grid, d, d + 1);
    b.seed = seed;
    const double dt = grid.dt();
    parallel_for(n_paths, 64, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t p = lo; p < hi; ++p) {
            auto s0 = b.state(p, 0);
            std::copy(x0.begin(), x0.end(), s0.begin());
            for (std::size_t n = 0; n < grid.n_steps; ++n) {
                auto inc = b.increment(p, n);
                brownian_increments(seed, p, n, dt, inc);
                auto next = b.state(p, n + 1);
                step(std::span<const double>(b.state(p, n)), dt, std::span<const double>(inc), next);
                for (double v : next)
                    if (!std::isfinite(v))
                        throw NumericalError(stage, "non-finite state at step " + std::to_string(n + 1) + ", path " +
                                                        std::to_string(p));
            }
        }
    });
    return b;
}

}  // namespace

PathBundle simulate_eps(const CoefficientFamily& fam, double eps, std::span<const double> x0, const SimGrid& grid,
                        std::size_t n_paths, std::uint64_t seed) {
    if (!(eps > 0.0) || !std::isfinite(eps)) throw InvalidArgument("simulate_eps", "eps must be positive");
    auto b = simulate("simulate_eps", fam.d(), x0, grid, n_paths, seed,
                      [&](std::span<const double> x, double dt, std::span<const double> dB, std::span<double> out) {
                          euler_update(fam, eps, x, dt, dB, out);
                      });
    b.eps = eps;
    return b;
}

PathBundle simulate_avg(const AveragedModel& avg, std::span<const double> x0, const SimGrid& grid,
                        std::size_t n_paths, std::uint64_t seed) {
    return simulate("simulate_avg", avg.d(), x0, grid, n_paths, seed,
                    [&](std::span<const double> x, double dt, std::span<const double> dB, std::span<double> out) {
                        euler_update(avg, x, dt, dB, out);
                    });
}

std::vector<OccupationEstimate> occupation_time(const PathBundle& bundle, std::span<const int> n_list) {
    if (bundle.n_paths == 0) throw InvalidArgument("occupation_time", "empty bundle");
    std::vector<OccupationEstimate> out;
    const double steps = static_cast<double>(bundle.grid.n_steps);
    for (int n : n_list) {
        if (n < 1) throw InvalidArgument("occupation_time", "n must be positive");
        const double band = 1.0 / n;
        std::vector<double> occ(bundle.n_paths);
        for (std::size_t p = 0; p < bundle.n_paths; ++p) {
            std::size_t hits = 0;
            for (std::size_t s = 0; s < bundle.grid.n_steps; ++s)
                if (std::abs(bundle.state(p, s)[0]) <= band) ++hits;
            occ[p] = static_cast<double>(hits) / steps * bundle.grid.t_end;
        }
        const auto e = mean_stderr(occ);
        out.push_back({n, e.mean, e.stderr_});
    }
    return out;
}

std::map<int, Estimate> moment_report(const PathBundle& bundle, std::span<const int> k_list) {
    if (bundle.n_paths == 0) throw InvalidArgument("moment_report", "empty bundle");
    std::map<int, Estimate> out;
    for (int k : k_list) {
        if (k < 1) throw InvalidArgument("moment_report", "k must be positive");
        std::vector<double> sup(bundle.n_paths, 0.0);
        for (std::size_t p = 0; p < bundle.n_paths; ++p) {
            for (std::size_t s = 0; s <= bundle.grid.n_steps; ++s) {
                const auto x = bundle.state(p, s);
                double r2 = 0.0;
                for (std::size_t c = 1; c < x.size(); ++c) r2 += x[c] * x[c];
                const double v = std::pow(x[0] * x[0], k) + std::pow(r2, k);
                sup[p] = std::max(sup[p], v);
            }
        }
        out[k] = mean_stderr(sup);
    }
    return out;
}

}  // namespace hmg
