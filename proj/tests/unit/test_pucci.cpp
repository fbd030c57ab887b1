#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "doctest.h"
#include "kinetic_noise/error.hpp"
#include "kinetic_noise/pucci.hpp"

using namespace kinetic_noise;

namespace {

// sup over A = Q(theta) diag(a1, a2) Q(theta)^T, a_i in [alpha, beta], of tr(A B).
// Linear in (a1, a2), so vertices suffice; theta by dense scan then ternary search.
double brute_force_pucci(double b11, double b12, double b22, double alpha, double beta) {
    auto value = [&](double a1, double a2, double th) {
        const double c = std::cos(th), s = std::sin(th);
        const double A11 = a1 * c * c + a2 * s * s, A22 = a1 * s * s + a2 * c * c, A12 = (a1 - a2) * c * s;
        return A11 * b11 + 2 * A12 * b12 + A22 * b22;
    };
    double best = -1e300;
    for (double a1 : {alpha, beta}) {
        for (double a2 : {alpha, beta}) {
            const int n = 720;
            int arg = 0;
            double top = -1e300;
            for (int k = 0; k < n; ++k) {
                const double v = value(a1, a2, std::numbers::pi * k / n);
                if (v > top) top = v, arg = k;
            }
            double lo = std::numbers::pi * (arg - 1) / n, hi = std::numbers::pi * (arg + 1) / n;
            for (int it = 0; it < 200; ++it) {
                const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
                if (value(a1, a2, m1) < value(a1, a2, m2)) {
                    lo = m1;
                } else {
                    hi = m2;
                }
            }
            best = std::max({best, top, value(a1, a2, 0.5 * (lo + hi))});
        }
    }
    return best;
}

VelocityField expanding_field(double amplitude) {
    PowerLawParams p;
    p.alpha = 0.5;
    p.R = 1.0;
    p.cutoff_width = 0.5;
    p.amplitude = amplitude;
    p.orientation = Orientation::expanding;
    return power_law_field(p);
}

const Grid kGrid(-4, 4, 256, 4, 128);

PucciParams plateau_params() {
    return PucciParams::from_flux(noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25), 2.0, 0.25, 4.0);
}

// Explicit heat solve on the same nodes as solve_pucci with alpha = beta = a.
std::vector<double> heat_oracle(const PucciSource& s, double a, double half_width, double T, int d,
                                std::size_t n, double dt, double t_begin, double c0) {
    const double dx = 2 * half_width / static_cast<double>(n - 1);
    const std::size_t total = d == 1 ? n : n * n;
    std::vector<double> phi(total, c0), next(total, c0);
    const double t_end = 2 * T;
    const auto steps = static_cast<std::size_t>(std::llround((t_end - t_begin) / dt));
    auto x = [&](std::size_t i) { return -half_width + static_cast<double>(i) * dx; };
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = t_end - static_cast<double>(k) * dt;
        if (d == 1) {
            for (std::size_t i = 1; i + 1 < n; ++i) {
                next[i] = phi[i] + dt * (a * (phi[i + 1] - 2 * phi[i] + phi[i - 1]) / (dx * dx) + s(t, x(i), 0.0));
            }
        } else {
            for (std::size_t i = 1; i + 1 < n; ++i) {
                for (std::size_t j = 1; j + 1 < n; ++j) {
                    if (std::hypot(x(i), x(j)) >= half_width * (1 - 1e-12)) continue;
                    const std::size_t c = i * n + j;
                    const double lap = (phi[c + n] + phi[c - n] + phi[c + 1] + phi[c - 1] - 4 * phi[c]) / (dx * dx);
                    next[c] = phi[c] + dt * (a * lap + s(t, x(i), x(j)));
                }
            }
        }
        std::swap(phi, next);
    }
    return phi;  // at t = t_begin
}

}  // namespace

TEST_CASE("pucci_plus examples") {
    const std::vector<double> pos{2.0}, neg{-2.0}, mixed{1.0, -1.0};
    CHECK(pucci_plus(pos, 0.25, 1.0) == 2.0);
    CHECK(pucci_plus(neg, 0.25, 1.0) == -0.5);
    CHECK(pucci_plus(mixed, 1.0, 2.0) == 1.0);
    CHECK(pucci_plus(mixed, 1.0, 2.0) == doctest::Approx(brute_force_pucci(1, 0, -1, 1, 2)).epsilon(1e-9));
    CHECK_THROWS_AS(pucci_plus(pos, 0.0, 1.0), Error);
    CHECK_THROWS_AS(pucci_plus(pos, 2.0, 1.0), Error);
}

TEST_CASE("pucci_plus against brute force on random 2x2 hessians") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> d(-3, 3), ab(0.05, 2.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const double b11 = d(rng), b12 = d(rng), b22 = d(rng);
        double alpha = ab(rng), beta = ab(rng);
        if (alpha > beta) std::swap(alpha, beta);
        const double oracle = brute_force_pucci(b11, b12, b22, alpha, beta);
        REQUIRE(std::abs(pucci_plus(b11, b12, b22, alpha, beta) - oracle) <= 1e-9 * std::max(1.0, std::abs(oracle)));
    }
}

TEST_CASE("pucci_plus is homogeneous and subadditive") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> d(-2, 2), c(0.1, 5);
    for (int trial = 0; trial < 500; ++trial) {
        const double a11 = d(rng), a12 = d(rng), a22 = d(rng), b11 = d(rng), b12 = d(rng), b22 = d(rng);
        const double k = c(rng);
        CHECK(pucci_plus(k * a11, k * a12, k * a22, 0.3, 1.2) ==
              doctest::Approx(k * pucci_plus(a11, a12, a22, 0.3, 1.2)).epsilon(1e-12));
        CHECK(pucci_plus(a11 + b11, a12 + b12, a22 + b22, 0.3, 1.2) <=
              pucci_plus(a11, a12, a22, 0.3, 1.2) + pucci_plus(b11, b12, b22, 0.3, 1.2) + 1e-12);
    }
}

TEST_CASE("annulus decomposition") {
    const double T = 0.5, q = 4;
    SUBCASE("nonnegative divergence needs one annulus") {
        const auto d = annulus_decomposition(zero_field(), q, 0.1, 1.0, T);
        CHECK(d.N == 1);
        CHECK(d.radii == std::vector<double>{0.0, 1.0});
        CHECK(d.total_norm == 0.0);
    }
    SUBCASE("constant negative divergence gives equal spacing") {
        const double c = 1.0, spacing = 0.07;
        const double gamma = c * std::pow(2 * T * spacing, 1 / q);  // (gamma / c)^q / (2T) = spacing
        const auto d = annulus_decomposition(constant_div_field(-c), q, gamma, 1.0, T);
        CHECK(d.N == 15);
        for (std::size_t k = 1; k + 1 < d.radii.size(); ++k) {
            CHECK(std::abs(d.radii[k] - d.radii[k - 1] - spacing) <= 1e-6);
            CHECK(d.norms[k - 1] == doctest::Approx(gamma).epsilon(1e-6));
        }
        CHECK(d.radii.back() == 1.0);
        CHECK(d.norms.back() <= gamma);
    }
    SUBCASE("two annuli at the gamma level set") {
        const auto u = expanding_field(0.15);
        const double total = AnnulusNormTable(u, q, 0, 1, T).norm(0, 1);
        // q-th powers add over annuli: total^q = 1.5 gamma^q leaves one partial annulus
        const double gamma = total / std::pow(1.5, 1 / q);
        const auto d = annulus_decomposition(u, q, gamma, 1.0, T);
        REQUIRE(d.N == 2);
        // independent root: bisection on the adaptive quadrature
        double lo = 0, hi = 1;
        for (int it = 0; it < 40; ++it) {
            const double mid = 0.5 * (lo + hi);
            (div_norm(u, q, 0, mid, T) < gamma ? lo : hi) = mid;
        }
        CHECK(d.radii[1] == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-4));
        CHECK(d.norms[0] == doctest::Approx(gamma).epsilon(1e-6));
        // a total of 1.5 gamma itself splits into ceil(1.5^q) annuli
        CHECK(annulus_decomposition(u, q, total / 1.5, 1.0, T).N == 6);
    }
    CHECK_THROWS_AS(annulus_decomposition(zero_field(), q, 0.0, 1.0, T), Error);
}

TEST_CASE("component solves") {
    const PucciParams params = plateau_params();
    const double c0 = params.floor_value();
    SUBCASE("zero source keeps the terminal constant") {
        const auto u = mollify_velocity(zero_field(), 0.1, kGrid, 1, 0.5);
        PucciGridOptions o;
        o.n = 101;
        const auto s = solve_component(1, {0.0, 1.0}, u, params, 1.0, 0.5, o);
        for (const auto& row : s.phi) {
            for (double v : row) REQUIRE(v == c0);
        }
        CHECK(s.times.front() == 0.0);
        CHECK(s.times.back() == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(s.x0 >= -3.0 - 1e-12);
        CHECK(s.x0 < -3.0 + s.dx);
    }
    SUBCASE("CFL violation") {
        PucciGridOptions o;
        o.n = 101;
        o.dt = 0.02;
        try {
            solve_pucci([](double, double, double) { return 0.0; }, params, 4.0, 0.5, o);
            FAIL("expected cfl_violation");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::cfl_violation);
        }
    }
    SUBCASE("linear degeneration matches a heat solve") {
        PucciParams lin = params;
        lin.alpha = lin.beta = 0.2;
        auto src = [](double t, double x, double y) {
            return t <= 0.5 && t >= 0 ? std::exp(-4 * (x * x + y * y)) * (1 + std::sin(3 * x)) : 0.0;
        };
        for (int d : {1, 2}) {
            PucciGridOptions o;
            o.d = d;
            o.n = d == 1 ? 161 : 41;
            o.t_begin = 0.0;
            const auto sol = solve_pucci(src, lin, 2.0, 0.5, o);
            const auto oracle = heat_oracle(src, 0.2, 2.0, 0.5, d, o.n, sol.dt, 0.0, c0);
            const auto& first = sol.phi.front();
            REQUIRE(first.size() == oracle.size());
            double err = 0;
            for (std::size_t k = 0; k < oracle.size(); ++k) err = std::max(err, std::abs(first[k] - oracle[k]));
            CHECK(err <= 1e-10);
            CHECK(sol.sup > c0);
        }
    }
    SUBCASE("constant source is bracketed by heat solves with alpha and beta") {
        auto src = [](double t, double, double) { return t >= 0 && t <= 0.5 ? 1.0 : 0.0; };
        PucciGridOptions o;
        o.n = 161;
        o.t_begin = 0.0;
        const auto sol = solve_pucci(src, params, 2.0, 0.5, o);
        const auto lo = heat_oracle(src, params.beta, 2.0, 0.5, 1, o.n, sol.dt, 0.0, c0);
        const auto hi = heat_oracle(src, params.alpha, 2.0, 0.5, 1, o.n, sol.dt, 0.0, c0);
        for (std::size_t i = 0; i < o.n; ++i) {
            CHECK(sol.phi.front()[i] >= lo[i] - 1e-12);
            CHECK(sol.phi.front()[i] <= hi[i] + 1e-12);
        }
    }
    SUBCASE("larger source gives larger phi") {
        auto s1 = [](double t, double x, double) { return t <= 0.5 && t >= 0 && std::abs(x) < 1 ? 0.5 : 0.0; };
        auto s2 = [](double t, double x, double) {
            return t <= 0.5 && t >= 0 && std::abs(x) < 1.2 ? 0.5 + 0.3 * std::cos(x) * std::cos(x) : 0.0;
        };
        PucciGridOptions o;
        o.n = 161;
        const auto a = solve_pucci(s1, params, 4.0, 0.5, o), b = solve_pucci(s2, params, 4.0, 0.5, o);
        for (std::size_t l = 0; l < a.phi.size(); ++l) {
            for (std::size_t i = 0; i < a.n; ++i) REQUIRE(b.phi[l][i] >= a.phi[l][i]);
        }
    }
    SUBCASE("maximum principle constant is mesh stable") {
        const auto u = expanding_field(0.15);
        const auto ue = mollify_velocity(u, 0.1, kGrid, 1, 0.5);
        const auto d = annulus_decomposition(u, 4, 0.25, 1.0, 0.5);
        REQUIRE(d.N >= 2);
        std::vector<double> C;
        for (std::size_t n : {401u, 801u}) {
            PucciGridOptions o;
            o.n = n;
            const auto s = solve_component(1, d.radii, ue, params, 1.0, 0.5, o);
            CHECK(s.min >= c0);
            C.push_back((s.sup - c0) / d.norms[0]);
        }
        CHECK(std::abs(C[1] - C[0]) <= 0.05 * C[0]);
    }
}

TEST_CASE("cutoff family") {
    const std::vector<double> radii{0.0, 0.4, 0.7, 1.0};
    const auto c = cutoff_family(radii);
    REQUIRE(c.size() == 4);
    CHECK(c.radii.back() == 2.5);
    for (std::size_t k = 1; k <= c.size(); ++k) {
        const auto p = c.plateau(k);
        CHECK(c.eta(k, 0.5 * (p[0] + p[1])).value == 1.0);
    }
    // plateaus cover [0, 2R] and hat = 1 beyond
    for (int s = 0; s <= 20000; ++s) {
        const double r = 2.0 * s / 20000;
        bool covered = false;
        for (std::size_t k = 1; k <= c.size(); ++k) covered = covered || c.eta(k, r).value == 1.0;
        REQUIRE(covered);
    }
    CHECK(c.hat(0.9).value == 0.0);
    CHECK(c.hat(2.1).value == 1.0);
    // jets against finite differences and the reported bounds
    const auto b = cutoff_bounds(c);
    const double h = 1e-5;
    for (std::size_t k = 1; k <= c.size(); ++k) {
        double fd1 = 0, fd2 = 0;
        for (int s = 1; s < 10000; ++s) {
            const double r = 3.0 * s / 10000;
            const auto e = c.eta(k, r);
            const double d1 = (c.eta(k, r + h).value - c.eta(k, r - h).value) / (2 * h);
            const double d2 = (c.eta(k, r + h).value - 2 * e.value + c.eta(k, r - h).value) / (h * h);
            CHECK(e.d1 == doctest::Approx(d1).epsilon(1e-5).scale(1.0));
            CHECK(e.d2 == doctest::Approx(d2).epsilon(1e-3).scale(10.0));
            fd1 = std::max(fd1, std::abs(d1));
            fd2 = std::max(fd2, std::abs(d2));
        }
        CHECK(std::isfinite(b.eta_d1[k - 1]));
        CHECK(b.eta_d1[k - 1] == doctest::Approx(fd1).epsilon(0.01));
        CHECK(b.eta_d2[k - 1] == doctest::Approx(fd2).epsilon(0.02));
    }
    CHECK(b.hat_d1 > 0);
    CHECK(b.hat_d2 > 0);
    CHECK_THROWS_AS(cutoff_family({0.0, 0.5, 0.5, 1.0}), Error);
    CHECK_THROWS_AS(cutoff_family({0.1, 1.0}), Error);
}

TEST_CASE("flux-weighted diffusion is dominated by the Pucci operator") {
    const auto b = noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25);
    const PucciParams params = plateau_params();
    for (int j = 0; j < 2000; ++j) {
        const double v = -8 + 16.0 * (j + 0.5) / 2000;
        if (std::abs(v) < b.v0) continue;
        for (double s = -50; s <= 50; s += 0.37) {
            const std::vector<double> e{s};
            CHECK(0.5 * b.squared(v) * s <= pucci_plus(e, params.alpha, params.beta) + 1e-15);
        }
    }
}

TEST_CASE("assembled sub-solution") {
    const auto flux = noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25);
    const PucciParams params = plateau_params();
    std::vector<double> vs;
    for (int j = 0; j < 128; ++j) vs.push_back(-4 + (j + 0.5) / 16);
    SUBCASE("zero drift against direct evaluation") {
        const auto u = mollify_velocity(zero_field(), 0.1, kGrid, 1, 0.5);
        const auto d = annulus_decomposition(zero_field(), 4, 0.25, 1.0, 0.5);
        const auto cut = cutoff_family(d.radii);
        std::vector<PucciSolution> comps;
        PucciGridOptions o;
        o.n = 201;
        for (std::size_t k = 1; k <= cut.size(); ++k) comps.push_back(solve_component(k, d.radii, u, params, 1.0, 0.5, o));
        const auto sub = assemble_subsolution(comps, cut, u, flux, params, vs);
        double b2max = 0, b2min = 1e300;
        for (double v : vs) {
            if (std::abs(v) < flux.v0) continue;
            b2max = std::max(b2max, flux.squared(v));
            b2min = std::min(b2min, flux.squared(v));
        }
        double oracle = -1e300;
        for (int s = 0; s <= 200000; ++s) {
            const double r = 3.0 * s / 200000;
            double lap = cut.hat(r).d2;
            for (std::size_t k = 1; k <= cut.size(); ++k) lap += params.floor_value() * cut.eta(k, r).d2;
            oracle = std::max(oracle, 0.5 * (lap >= 0 ? b2max : b2min) * lap);
        }
        CHECK(sub.certificate.M_est == doctest::Approx(oracle).epsilon(0.1));
        CHECK(sub.certificate.lower_bound_ok);
        CHECK(sub.certificate.lower_bound_min >= 0.25 - 1e-8);
        CHECK(sub.certificate.w21_t == doctest::Approx(0.0).scale(1.0));
    }
    SUBCASE("power-law field with automatic gamma") {
        const auto u = expanding_field(0.15);
        const auto ue = mollify_velocity(u, 0.1, kGrid, 1, 0.5);
        std::vector<double> M;
        for (std::size_t n : {401u, 801u}) {
            SubSolutionOptions o;
            o.grid.n = n;
            o.threads = 2;
            o.v_samples = vs;
            const auto rep = build_subsolution(u, ue, flux, 1.0, 0.5, o);
            const auto& cert = rep.solution.certificate;
            CHECK(cert.lower_bound_min >= std::min(1.0, 1.0 / (2 * 2.0)) - 1e-8);
            CHECK(rep.max_principle_ok);
            CHECK(rep.params.gamma * rep.C_est < 1.0 / (2 * rep.params.p));
            // at most two cutoffs overlap, plus the hat
            CHECK(cert.sup_norm <= 1.0 + 2.0 * rep.component_sup);
            CHECK(std::isfinite(cert.w21_t));
            CHECK(std::isfinite(cert.w21_xx));
            CHECK(rep.decomposition.N >= 2);
            M.push_back(cert.M_est);
        }
        CHECK(std::abs(M[1] - M[0]) <= 0.1 * std::abs(M[0]));
    }
    SUBCASE("mismatched grids") {
        const auto u = mollify_velocity(zero_field(), 0.1, kGrid, 1, 0.5);
        const auto cut = cutoff_family({0.0, 1.0});
        PucciGridOptions a, b;
        a.n = 101;
        b.n = 121;
        std::vector<PucciSolution> comps{solve_component(1, {0.0, 1.0}, u, params, 1, 0.5, a),
                                         solve_component(2, {0.0, 1.0}, u, params, 1, 0.5, b)};
        CHECK_THROWS_AS(assemble_subsolution(comps, cut, u, flux, params, vs), Error);
    }
}
