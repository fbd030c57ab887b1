#include "kinetic_noise/stochastic_flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "kinetic_noise/error.hpp"

namespace kinetic_noise {

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

// Uniform in (0, 1), never 0.
double to_unit(std::uint64_t h) {
    return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

double counter_normal(std::uint64_t seed, std::uint64_t step, std::uint64_t coord) {
    const std::uint64_t key = mix(mix(seed, step), coord);
    const double u1 = to_unit(splitmix64(key));
    const double u2 = to_unit(splitmix64(key + 0x632be59bd9b4e019ULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t path_seed(std::uint64_t base_seed, std::uint64_t index) {
    return mix(base_seed, 0xa0761d6478bd642fULL + index);
}

BrownianDriver sample_brownian(std::uint64_t seed, double T, double dt, int d) {
    if (!(dt > 0.0) || !(T >= dt)) throw Error(ErrorKind::invalid_argument, "need dt > 0 and T >= dt");
    if (d < 1) throw Error(ErrorKind::invalid_argument, "dimension must be positive");
    BrownianDriver w;
    w.seed = seed;
    w.dt = dt;
    w.T = T;
    w.d = d;
    w.steps = static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
    w.increments.resize(w.steps * static_cast<std::size_t>(d));
    const double s = std::sqrt(dt);
    for (std::size_t k = 0; k < w.steps; ++k) {
        for (int c = 0; c < d; ++c) {
            w.increments[k * d + c] = s * counter_normal(seed, k, static_cast<std::uint64_t>(c));
        }
    }
    return w;
}

BrownianDriver BrownianDriver::coarsen(std::size_t factor) const {
    if (factor == 0 || steps % factor != 0) {
        throw Error(ErrorKind::invalid_argument, "coarsening factor must divide the step count");
    }
    BrownianDriver c = *this;
    c.dt = dt * static_cast<double>(factor);
    c.steps = steps / factor;
    c.increments.assign(c.steps * d, 0.0);
    for (std::size_t k = 0; k < c.steps; ++k) {
        for (int q = 0; q < d; ++q) {
            double s = 0.0;
            for (std::size_t r = 0; r < factor; ++r) s += increment(k * factor + r, q);
            c.increments[k * d + q] = s;
        }
    }
    return c;
}

double BrownianDriver::value(std::size_t k) const {
    double s = 0.0;
    for (std::size_t r = 0; r < k; ++r) s += increment(r);
    return s;
}

FlowStepResult forward_flow_step(double x, double v, double t, double dt, double dW,
                                 const MollifiedVelocity& u, const NoiseFlux& b,
                                 bool midpoint_noise) {
    const double ux = u.u(t, x);
    const double g = u.div(t, x);
    const double e = std::exp(-g * dt);
    FlowStepResult r;
    r.V = v * e;
    const double vb = midpoint_noise ? 0.5 * (v + r.V) : v;
    r.X = x + ux * dt + b(vb) * dW;
    const double dgdx = u.div_derivative(t, x);
    const double det = (1.0 + g * dt) * e + b.derivative(v) * dW * v * dgdx * dt * e;
    r.jacobian_factor = std::abs(det);
    return r;
}

void check_invertible(double dt, const MollifiedVelocity& u) {
    if (dt * u.sup_grad() >= 1.0) {
        std::ostringstream os;
        os << "dt * sup|grad u_eps| = " << dt * u.sup_grad() << " >= 1";
        throw Error(ErrorKind::step_too_large, os.str());
    }
}

std::pair<double, double> inverse_flow_step(double x, double v, double t, double dt, double dW,
                                            const MollifiedVelocity& u, const NoiseFlux& b) {
    check_invertible(dt, u);
    const double w = v * std::exp(u.div(t, x) * dt);
    const double y = x - u.u(t, x) * dt - b(w) * dW;
    return {y, w};
}

double jacobian_estimate(const std::vector<BrownianDriver>& paths, const MollifiedVelocity& u,
                         const NoiseFlux& b, double T, double dt,
                         const std::vector<PhasePoint>& references, double h) {
    const std::size_t n = static_cast<std::size_t>(std::llround(T / dt));
    double worst = 0.0;
    for (const auto& w : paths) {
        if (w.steps < n) throw Error(ErrorKind::invalid_argument, "driver shorter than horizon");
        for (const auto& p : references) {
            PhasePoint c[4] = {{p.x + h, p.v}, {p.x - h, p.v}, {p.x, p.v + h}, {p.x, p.v - h}};
            for (std::size_t k = 0; k < n; ++k) {
                const double t = static_cast<double>(k) * dt;
                for (auto& q : c) {
                    const auto r = forward_flow_step(q.x, q.v, t, dt, w.increment(k), u, b);
                    q = {r.X, r.V};
                }
            }
            const double a11 = (c[0].x - c[1].x) / (2.0 * h), a12 = (c[2].x - c[3].x) / (2.0 * h);
            const double a21 = (c[0].v - c[1].v) / (2.0 * h), a22 = (c[2].v - c[3].v) / (2.0 * h);
            worst = std::max(worst, std::abs(a11 * a22 - a12 * a21 - 1.0));
        }
    }
    return worst;
}

}  // namespace kinetic_noise
