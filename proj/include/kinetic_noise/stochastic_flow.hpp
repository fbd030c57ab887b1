#pragma once

// Characteristics of the regularised kinetic equation:
//   dX = u_eps(t, X) dt + b(V) dW,   dV = -V div u_eps(t, X) dt,
// driven by one spatially homogeneous Brownian motion per path.

#include <cstdint>
#include <utility>
#include <vector>

#include "kinetic_noise/fields.hpp"

namespace kinetic_noise {

/// Standard normal draw keyed on (seed, step, coordinate). Pure function.
double counter_normal(std::uint64_t seed, std::uint64_t step, std::uint64_t coord);

/// Seed of path `index` in an ensemble rooted at `base_seed`.
std::uint64_t path_seed(std::uint64_t base_seed, std::uint64_t index);

struct BrownianDriver {
    std::uint64_t seed = 0;
    double dt = 0.0;
    double T = 0.0;
    int d = 1;
    std::size_t steps = 0;
    /// steps x d, row-major; each entry ~ N(0, dt).
    std::vector<double> increments;

    double increment(std::size_t k, int coord = 0) const {
        return increments[k * static_cast<std::size_t>(d) + static_cast<std::size_t>(coord)];
    }
    /// Path with step factor * dt whose increments are sums of consecutive fine ones.
    BrownianDriver coarsen(std::size_t factor) const;
    /// W at the end of step k (k = 0 ... steps), first coordinate.
    double value(std::size_t k) const;
};

/// ceil(T / dt) increments, bit-identical for identical arguments.
BrownianDriver sample_brownian(std::uint64_t seed, double T, double dt, int d = 1);

struct FlowStepResult {
    double X = 0.0;
    double V = 0.0;
    double jacobian_factor = 1.0;
};

/// One Euler-Maruyama step in x with the exact exponential V update.
/// With `midpoint_noise` the flux is evaluated at (v + V) / 2.
FlowStepResult forward_flow_step(double x, double v, double t, double dt, double dW,
                                 const MollifiedVelocity& u, const NoiseFlux& b,
                                 bool midpoint_noise = false);

/// First-order inverse: w = v exp(div dt), y = x - u dt - b(w) dW.
/// Throws step_too_large unless dt * sup|grad u_eps| < 1.
std::pair<double, double> inverse_flow_step(double x, double v, double t, double dt, double dW,
                                            const MollifiedVelocity& u, const NoiseFlux& b);

/// Throws step_too_large unless dt * sup|grad u_eps| < 1.
void check_invertible(double dt, const MollifiedVelocity& u);

struct PhasePoint {
    double x, v;
};

/// Composes forward steps over [0, T] for every path and returns the largest
/// |det D(X, V) - 1| measured by central differences of width h around each
/// reference point.
double jacobian_estimate(const std::vector<BrownianDriver>& paths, const MollifiedVelocity& u,
                         const NoiseFlux& b, double T, double dt,
                         const std::vector<PhasePoint>& references, double h = 1e-4);

}  // namespace kinetic_noise
