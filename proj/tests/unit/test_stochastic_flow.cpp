#include <cmath>
#include <vector>

#include "doctest.h"
#include "kinetic_noise/error.hpp"
#include "kinetic_noise/stochastic_flow.hpp"

using namespace kinetic_noise;

namespace {

const Grid kGrid(-4, 4, 256, 4, 128);

MollifiedVelocity linear_field(double c) {
    return mollify_velocity(constant_div_field(c), 0.1, kGrid, 1, 1.0);
}

}  // namespace

TEST_CASE("brownian increments") {
    SUBCASE("deterministic in the seed") {
        const auto a = sample_brownian(1, 1.0, 1e-3);
        const auto b = sample_brownian(1, 1.0, 1e-3);
        CHECK(a.steps == 1000);
        CHECK(a.increments == b.increments);
        CHECK(sample_brownian(2, 1.0, 1e-3).increments != a.increments);
        CHECK(counter_normal(7, 3, 1) == counter_normal(7, 3, 1));
    }
    SUBCASE("variance and mean over 1e5 draws") {
        const double dt = 1e-3;
        const auto w = sample_brownian(42, 100.0, dt);
        REQUIRE(w.increments.size() == 100000);
        double s = 0, s2 = 0;
        for (double x : w.increments) {
            s += x;
            s2 += x * x;
        }
        const double n = static_cast<double>(w.increments.size());
        const double mean = s / n;
        const double var = s2 / n - mean * mean;
        CHECK(var >= 0.99 * dt);
        CHECK(var <= 1.01 * dt);
        CHECK(std::abs(mean) <= 4.0 * std::sqrt(dt / n));
    }
    SUBCASE("coordinates are uncorrelated") {
        const auto w = sample_brownian(5, 100.0, 1e-3, 2);
        double sxy = 0, sxx = 0, syy = 0;
        for (std::size_t k = 0; k < w.steps; ++k) {
            const double x = w.increment(k, 0), y = w.increment(k, 1);
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        CHECK(std::abs(sxy / std::sqrt(sxx * syy)) < 0.01);
    }
    SUBCASE("ensemble mean of W_T shrinks like sqrt(T / K)") {
        const std::size_t K = 4000;
        double s = 0;
        for (std::size_t p = 0; p < K; ++p) {
            s += sample_brownian(path_seed(9, p), 0.1, 1e-2).value(10);
        }
        CHECK(std::abs(s / K) <= 4.0 * std::sqrt(0.1 / K));
    }
    SUBCASE("coarsening sums fine increments") {
        const auto w = sample_brownian(3, 1.0, 1e-3);
        const auto c = w.coarsen(10);
        CHECK(c.steps == 100);
        CHECK(c.dt == doctest::Approx(1e-2));
        CHECK(c.value(100) == doctest::Approx(w.value(1000)).epsilon(1e-12));
        CHECK_THROWS_AS(w.coarsen(7), Error);
    }
    CHECK_THROWS_AS(sample_brownian(1, 1.0, 0.0), Error);
    CHECK_THROWS_AS(sample_brownian(1, 1e-4, 1e-3), Error);
}

TEST_CASE("forward step closed forms") {
    SUBCASE("pure noise translation") {
        const auto u = mollify_velocity(zero_field(), 0.1, kGrid, 1, 1.0);
        const auto b = noise_flux(FluxKind::bounded_smooth, 0.25, 0.25);
        const auto r = forward_flow_step(0.3, -1.2, 0.0, 1e-3, 0.02, u, b);
        CHECK(r.X == 0.3 + 0.5 * 0.02);
        CHECK(r.V == -1.2);
        CHECK(r.jacobian_factor == 1.0);
        const auto [y, w] = inverse_flow_step(r.X, r.V, 0.0, 1e-3, 0.02, u, b);
        CHECK(y == doctest::Approx(0.3).epsilon(1e-15));
        CHECK(w == -1.2);
    }
    SUBCASE("linear field") {
        const double c = 0.8, dt = 1e-2;
        const auto u = linear_field(c);
        const auto b = noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25);
        const auto r = forward_flow_step(0.5, 1.5, 0.0, dt, 0.05, u, b);
        CHECK(r.V == doctest::Approx(1.5 * std::exp(-c * dt)).epsilon(1e-12));
        CHECK(r.X == doctest::Approx(0.5 + c * 0.5 * dt + 0.5 * 0.05).epsilon(1e-12));
        const double oracle = (1 + c * dt) * std::exp(-c * dt);
        CHECK(r.jacobian_factor == doctest::Approx(oracle).epsilon(1e-12));
        CHECK(std::abs(r.jacobian_factor - 1) < c * c * dt * dt);
    }
}

TEST_CASE("inverse step") {
    SUBCASE("round trip error has slope 2 in dt") {
        const auto u = linear_field(0.8);
        const auto b = noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25);
        std::vector<double> errs;
        for (double dt : {1e-2, 5e-3, 2.5e-3}) {
            const auto [y, w] = inverse_flow_step(0.7, 0.6, 0.0, dt, 0.0, u, b);
            const auto r = forward_flow_step(y, w, 0.0, dt, 0.0, u, b);
            errs.push_back(std::hypot(r.X - 0.7, r.V - 0.6));
        }
        for (std::size_t k = 1; k < errs.size(); ++k) {
            const double slope = std::log2(errs[k - 1] / errs[k]);
            CHECK(slope == doctest::Approx(2.0).epsilon(0.1));
        }
    }
    SUBCASE("sign of v is preserved") {
        PowerLawParams p;
        p.alpha = 0.5;
        p.amplitude = 0.5;
        p.cutoff_width = 0.5;
        const auto u = mollify_velocity(power_law_field(p), 0.1, kGrid, 1, 1.0);
        const auto b = noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25);
        for (double x = -2; x <= 2; x += 0.05) {
            for (double v : {-2.0, -1e-3, 1e-3, 0.5, 3.0}) {
                const auto [y, w] = inverse_flow_step(x, v, 0.0, 1e-3, 0.03, u, b);
                CHECK(std::signbit(w) == std::signbit(v));
                const auto r = forward_flow_step(x, v, 0.0, 1e-3, 0.03, u, b);
                CHECK(std::signbit(r.V) == std::signbit(v));
                CHECK(std::abs(r.V) <= std::abs(v) * std::exp(1e-3 * u.sup_div) * (1 + 1e-15));
                CHECK(r.jacobian_factor > 0);
            }
        }
    }
    SUBCASE("step too large") {
        const auto u = linear_field(2.0);
        const auto b = noise_flux(FluxKind::zero, 0, 0);
        CHECK_NOTHROW(check_invertible(0.4, u));
        try {
            inverse_flow_step(0, 1, 0, 0.5, 0, u, b);
            FAIL("expected step_too_large");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::step_too_large);
        }
    }
}

TEST_CASE("midpoint noise evaluation differs at second order") {
    const auto u = linear_field(1.0);
    const auto b = noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25);
    std::vector<double> diffs;
    for (double dt : {1e-2, 5e-3, 2.5e-3}) {
        const double dW = std::sqrt(dt);
        const auto a = forward_flow_step(0.2, 0.7, 0.0, dt, dW, u, b);
        const auto m = forward_flow_step(0.2, 0.7, 0.0, dt, dW, u, b, true);
        CHECK(a.V == m.V);
        diffs.push_back(std::abs(a.X - m.X));
    }
    // |b(v) - b((v + V) / 2)| |dW| = O(dt) O(dt^{1/2}); the difference is o(dt).
    for (std::size_t k = 1; k < diffs.size(); ++k) {
        CHECK(std::log2(diffs[k - 1] / diffs[k]) == doctest::Approx(1.5).epsilon(0.05));
    }
    CHECK(diffs.back() < 2.5e-3 * 2.5e-3 * 10);
}

TEST_CASE("volume distortion of the composed flow") {
    const std::vector<PhasePoint> refs = {{0.1, 0.5}, {-0.4, -1.0}, {0.8, 2.0}, {0.0, 0.3}};
    std::vector<BrownianDriver> paths;
    for (std::size_t p = 0; p < 4; ++p) paths.push_back(sample_brownian(path_seed(1, p), 0.25, 1e-3));
    SUBCASE("zero drift") {
        const auto u = mollify_velocity(zero_field(), 0.1, kGrid, 1, 1.0);
        const auto b = noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25);
        CHECK(jacobian_estimate(paths, u, b, 0.25, 1e-3, refs) < 1e-9);
    }
    SUBCASE("linear drift against the product oracle") {
        const double c = 0.8, T = 0.25;
        const auto u = linear_field(c);
        const auto b = noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25);
        for (double dt : {1e-2, 5e-3}) {
            std::vector<BrownianDriver> ps;
            for (std::size_t p = 0; p < 4; ++p) ps.push_back(sample_brownian(path_seed(2, p), T, dt));
            const double n = std::round(T / dt);
            const double oracle = std::abs(std::pow((1 + c * dt) * std::exp(-c * dt), n) - 1);
            const double est = jacobian_estimate(ps, u, b, T, dt, refs);
            CHECK(est == doctest::Approx(oracle).epsilon(1e-4));
            CHECK(est <= c * c * T * dt);
        }
    }
    SUBCASE("power law field") {
        PowerLawParams p;
        p.alpha = 0.5;
        p.amplitude = 0.5;
        p.cutoff_width = 0.5;
        p.orientation = Orientation::concentrating;
        const auto u = mollify_velocity(power_law_field(p), 0.1, kGrid, 1, 1.0);
        const auto b = noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25);
        CHECK(jacobian_estimate(paths, u, b, 0.25, 1e-3, refs) < 0.02);
    }
}
