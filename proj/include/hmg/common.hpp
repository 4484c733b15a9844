#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>

namespace hmg {

/// Largest state dimension (d + 1) supported by the allocation-free small
/// vector types used on simulation hot paths.
inline constexpr int kMaxDim = 8;

using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

/// Branch of a Cesaro limit. The interface point x1 = 0 belongs to `minus`.
enum class Side { minus, plus };

inline Side side_of(double x1) noexcept { return x1 > 0.0 ? Side::plus : Side::minus; }

/// Base class for every error raised by the library. `stage` names the
/// pipeline stage (e.g. "simulate_eps", "solve_bsde") for provenance.
class Error : public std::runtime_error {
public:
    Error(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

// Thread control -----------------------------------------------------------

/// Number of worker threads used by `parallel_for`. 0 selects the hardware
/// concurrency. Results never depend on this value.
void set_thread_count(unsigned n);
unsigned thread_count();

/// Runs `body(begin, end)` over disjoint chunks of [0, n). Chunk boundaries
/// are fixed by `grain` only, so any reduction done per chunk and combined in
/// chunk order is independent of the thread count.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace hmg
