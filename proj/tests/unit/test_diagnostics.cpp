#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "kinetic_noise/diagnostics.hpp"
#include "kinetic_noise/error.hpp"

using namespace kinetic_noise;

namespace {

DensityField indicator(const Grid& g, double a, double b, double height = 1.0) {
    DensityField r(g);
    for (std::size_t i = 0; i < g.nx; ++i) {
        const double lo = g.x(i) - 0.5 * g.dx(), hi = lo + g.dx();
        r.values[i] = height * std::max(0.0, std::min(hi, b) - std::max(lo, a)) / g.dx();
    }
    return r;
}

DensityField bump_density(const Grid& g, double centre, double width, double height) {
    DensityField r(g);
    for (std::size_t i = 0; i < g.nx; ++i) r.values[i] = height * smooth::bump((g.x(i) - centre) / width).value;
    return r;
}

SolverConfig base_config() {
    SolverConfig c;
    c.grid = Grid(-4, 4, 128, 4, 64);
    c.T = 0.1;
    c.dt = 2e-3;
    c.eps_relax = 0.1;
    c.eps_mollify = 0.1;
    PowerLawParams p;
    p.alpha = 0.5;
    p.amplitude = 0.5;
    p.cutoff_width = 0.5;
    p.orientation = Orientation::concentrating;
    c.field = power_law_field(p);
    c.flux = noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25);
    c.rho0 = indicator(c.grid, -0.5, 0.5);
    c.seed = 5;
    return c;
}

double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sx += x[k];
        sy += y[k];
        sxx += x[k] * x[k];
        sxy += x[k] * y[k];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

TestFunction scaled_bump(double width) {
    return [width](double x) {
        const auto j = smooth::bump(x / width);
        return smooth::Jet{j.value, j.d1 / width, j.d2 / (width * width)};
    };
}

}  // namespace

TEST_CASE("ensemble statistics") {
    const auto [m, se] = mean_and_stderr({1.0, 2.0, 3.0, 4.0});
    CHECK(m == 2.5);
    CHECK(se == doctest::Approx(std::sqrt((5.0 / 3.0) / 4.0)).epsilon(1e-14));
    CHECK(mean_and_stderr({7.0}).second == 0.0);

    const auto r = summarize({0.0, 1.0}, {{1.0, 2.0}, {3.0, 6.0}});
    CHECK(r.n_paths == 2);
    CHECK(r.mean == std::vector<double>{2.0, 4.0});
    CHECK(r.stderr_[0] == doctest::Approx(1.0));
    CHECK_THROWS_AS(summarize({0.0, 1.0}, {{1.0}}), Error);

    SUBCASE("doubling the sample shrinks the error by sqrt 2") {
        std::mt19937_64 rng(3);
        std::normal_distribution<double> n(1.0, 2.0);
        std::vector<double> ratios;
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<double> a(2000);
            for (auto& x : a) x = n(rng);
            const std::vector<double> half(a.begin(), a.begin() + 1000);
            ratios.push_back(mean_and_stderr(half).second / mean_and_stderr(a).second);
        }
        for (double q : ratios) {
            CHECK(q > std::sqrt(2.0) * 0.85);
            CHECK(q < std::sqrt(2.0) * 1.15);
        }
    }

    const auto v = make_verdict("x", 1.0, 0.9, 0.2);
    CHECK(v.passed);
    CHECK(v.margin == doctest::Approx(0.1));
    CHECK_FALSE(make_verdict("y", 1.0, 0.9, 0.05).passed);
}

TEST_CASE("renormalization identity for the average of two maxwellians") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> d(-2, 2);
    for (int k = 0; k < 100; ++k) {
        const double r1 = d(rng), r2 = d(rng);
        for (double v = -2.5; v <= 2.5; v += 0.01) {
            const double c1 = maxwellian(r1, v), c2 = maxwellian(r2, v);
            const double f = 0.5 * (c1 + c2);
            CHECK(std::abs(f) - f * f == 0.25 * (c1 - c2) * (c1 - c2));
        }
    }
}

TEST_CASE("entropy pairs") {
    const auto b = noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25);
    const double sl = 0.5;  // sqrt(lambda)
    const auto q = EntropyPair::quadratic(b, 10.0);
    // S = rho^2: Psi = lambda rho^6 / 3 below 1, lambda / 3 + lambda (rho^2 - 1) beyond;
    // Phi = sqrt(lambda) rho^4 / 2 below 1, sqrt(lambda) (1/2 + rho^2 - 1) beyond.
    for (double r : {0.0, 0.1, 0.37, 0.99, 1.0, 1.3, 2.7, 9.5}) {
        const double psi = r <= 1 ? 0.25 * std::pow(r, 6) / 3 : 0.25 / 3 + 0.25 * (r * r - 1);
        const double phi = r <= 1 ? sl * std::pow(r, 4) / 2 : sl * (0.5 + r * r - 1);
        CHECK(q.Psi(r) == doctest::Approx(psi).epsilon(1e-13).scale(1e-16));
        CHECK(q.Phi(r) == doctest::Approx(phi).epsilon(1e-13).scale(1e-16));
        CHECK(q.Psi(-r) == doctest::Approx(psi).epsilon(1e-13).scale(1e-16));
        CHECK(q.Phi(-r) == doctest::Approx(phi).epsilon(1e-13).scale(1e-16));
    }
    CHECK(q.Psi(0.0) == 0.0);
    CHECK(q.Phi(0.0) == 0.0);
    CHECK_THROWS_AS(q.Psi(11.0), Error);

    const auto lin = EntropyPair::linear(noise_flux(FluxKind::bounded_smooth, 0.36, 0.36), 5.0);
    CHECK(lin.Phi(2.0) == doctest::Approx(1.2).epsilon(1e-14));
    CHECK(lin.Psi(-2.0) == doctest::Approx(-0.72).epsilon(1e-14));

    SUBCASE("rho bar") {
        // Psi / rho^2 = lambda (1 - 2 / (3 rho^2)) >= lambda / 2 exactly when rho >= 2 / sqrt(3)
        const auto rb = rho_bar(b);
        REQUIRE(rb.found);
        const double exact = 2.0 / std::sqrt(3.0);
        CHECK(rb.rho_bar >= exact);
        CHECK(rb.rho_bar <= exact * std::pow(1e6, 1.0 / 3999.0) * (1 + 1e-12));
        CHECK(rb.ratio_min >= 0.125 * (1 - 1e-12));
        CHECK(rb.ratio_max <= 0.25 * (1 + 1e-12));
        const auto pair = EntropyPair::quadratic(b);
        for (double r = rb.rho_bar; r < 1e3; r *= 1.37) {
            const double ratio = pair.Psi(r) / (r * r);
            CHECK(ratio >= 0.125);
            CHECK(ratio <= 0.25);
        }
        const auto flat = rho_bar(noise_flux(FluxKind::bounded_smooth, 0.25, 0.25));
        CHECK(flat.found);
        CHECK(flat.rho_bar == doctest::Approx(1e-3));
        // lambda = Lambda = 0 makes both inequalities hold with Psi = 0
        const auto none = rho_bar(noise_flux(FluxKind::zero, 0, 0));
        CHECK(none.found);
        CHECK(none.ratio_max == 0.0);
    }
}

TEST_CASE("coupled L1 contraction") {
    SolverConfig c = base_config();
    const auto rho1 = indicator(c.grid, -0.5, 0.5);
    SUBCASE("equal data stay at distance zero") {
        const auto rep = l1_contraction(c, rho1, rho1, 2);
        for (const auto& path : rep.distance.per_path) {
            for (double d : path) CHECK(d == 0.0);
        }
        CHECK(rep.initial_distance == 0.0);
        CHECK(rep.C_horizon == 1.0);
        CHECK(rep.distance.all_passed());
    }
    SUBCASE("ordered data keep their distance up to boundary leakage") {
        c.field = zero_field();
        c.flux = noise_flux(FluxKind::bounded_smooth, 0.25, 0.25);
        DensityField rho2 = rho1;
        const auto bump = bump_density(c.grid, 0.2, 0.3, 0.25);
        for (std::size_t i = 0; i < c.grid.nx; ++i) rho2.values[i] += bump.values[i];
        const auto rep = l1_contraction(c, rho1, rho2, 3);
        CHECK(rep.initial_distance == doctest::Approx(bump.l1_norm()));
        CHECK(rep.C_horizon == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(rep.identity_error <= 1e-10);
        CHECK(rep.distance.all_passed());
    }
    SUBCASE("signed perturbations contract") {
        DensityField rho2 = rho1;
        for (std::size_t i = 0; i < c.grid.nx; ++i) {
            rho2.values[i] += 0.3 * std::sin(6.0 * c.grid.x(i)) * smooth::bump(c.grid.x(i) / 0.8).value;
        }
        const auto rep = l1_contraction(c, rho1, rho2, 4);
        CHECK(rep.C_sup == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(rep.C_horizon < 1.0);
        CHECK(rep.identity_error <= 1e-10);
        for (const auto& path : rep.distance.per_path) {
            for (double d : path) CHECK(d <= rep.initial_distance * (1 + 1e-12));
        }
        SubSolutionCertificate cert;
        cert.M_est = 1.0;
        const auto with = l1_contraction(c, rho1, rho2, 2, 1, &cert, 2.0);
        CHECK(with.certificate_bound == doctest::Approx(std::exp(1.0 * c.T * 4.0)));
        CHECK(with.distance.all_passed());
    }
    SUBCASE("grid mismatch") {
        const Grid other(-4, 4, 64, 4, 64);
        CHECK_THROWS_AS(l1_contraction(c, rho1, indicator(other, -0.5, 0.5), 1), Error);
    }
}

TEST_CASE("weighted moment series") {
    SUBCASE("u = 0 and phi = 1 with p = 0 reproduce the L1 series") {
        SolverConfig c = base_config();
        c.field = zero_field();
        c.snapshot_times = {0.0, 0.02, 0.04, 0.06, 0.08, 0.1};
        const Solver s(c);
        std::vector<Trajectory> trs{s.solve_path(1), s.solve_path(2), s.solve_path(3)};
        const auto ms = weighted_moment_series(trs, [](double, double) { return 1.0; }, 0.0);
        REQUIRE(ms.energy.times.size() == 6);
        for (std::size_t k = 0; k < 6; ++k) {
            double l1 = 0.0;
            for (const auto& tr : trs) {
                const auto step = static_cast<std::size_t>(std::llround(ms.energy.times[k] / c.dt));
                l1 += tr.series[step].l1;
            }
            CHECK(ms.energy.mean[k] == doctest::Approx(l1 / 3).epsilon(1e-12));
            if (k > 0) CHECK(ms.energy.mean[k] <= ms.energy.mean[k - 1] * (1 + 1e-12));
            CHECK(ms.measure.mean[k] == 0.0);
        }
        CHECK(ms.energy.verdicts.empty());
    }
    SUBCASE("c2 assembly") {
        MomentBoundData d;
        d.v0 = 1.0;
        d.w21_t = 1;
        d.w21_x = 2;
        d.w21_xx = 4;
        d.sup_u = 0.5;
        d.div_l1 = 3;
        d.sup_phi = 2;
        d.Lambda = 0.5;
        // 2/3 (1 + 0.5*2 + 2*3*2 + 0.25*4)
        CHECK(moment_constant_c2(d, 2.0) == doctest::Approx(2.0 / 3.0 * 15.0));
    }
    SUBCASE("sub-solution weight on the expanding field") {
        PowerLawParams p;
        p.alpha = 0.5;
        p.R = 1.0;
        p.cutoff_width = 0.5;
        p.amplitude = 0.15;
        p.orientation = Orientation::expanding;
        SolverConfig c = base_config();
        c.field = power_law_field(p);
        c.snapshot_times = {0.0, 0.05, 0.1};
        const Solver s(c);
        SubSolutionOptions o;
        o.grid.n = 201;
        const auto rep = build_subsolution(c.field, s.velocity(), c.flux, 1.0, c.T, o);
        const auto w = weight_of(rep.solution);
        CHECK(w(0.05, 3.5) == 1.0);
        CHECK(w(0.0, 0.0) == doctest::Approx(rep.solution.phi[0][rep.solution.n / 2]).epsilon(1e-12));
        CHECK_THROWS_AS(w(0.2, 0.0), Error);
        std::vector<Trajectory> trs{s.solve_path(1), s.solve_path(2)};
        const auto ms = weighted_moment_series(trs, rep.solution, 2.0, s.velocity(), c.flux);
        CHECK(ms.kappa == 0.25);
        CHECK(ms.c2 > 0.0);
        REQUIRE(ms.gronwall_bound.size() == 3);
        CHECK(ms.energy.all_passed());
        for (std::size_t k = 1; k < 3; ++k) CHECK(ms.measure.mean[k] >= ms.measure.mean[k - 1]);
    }
    SUBCASE("snapshots must start at zero") {
        SolverConfig c = base_config();
        c.snapshot_times = {0.05};
        const Solver s(c);
        CHECK_THROWS_AS(weighted_moment_series({s.solve_path(1)}, [](double, double) { return 1.0; }, 2.0),
                        Error);
    }
}

TEST_CASE("entropy balance residual") {
    SUBCASE("linear entropy with phi = 1 measures mass drift") {
        SolverConfig c = base_config();
        c.field = zero_field();
        c.record_density_history = true;
        const Solver s(c);
        const auto tr = s.solve_path(9);
        const auto eb = entropy_balance_residual(tr, s.velocity(), EntropyPair::linear(c.flux, 10.0),
                                                 [](double) { return smooth::Jet{1.0, 0.0, 0.0}; });
        REQUIRE(eb.residual.size() == tr.series.size());
        for (std::size_t k = 0; k < eb.residual.size(); ++k) {
            CHECK(eb.residual[k] == doctest::Approx(std::abs(tr.series[k].mass - tr.series[0].mass)).scale(1e-13));
        }
        CHECK(eb.max_residual <= 1e-2 * c.rho0.l1_norm());
    }
    SUBCASE("constant noise: first-order convergence with the realized quadratic variation") {
        const auto b = noise_flux(FluxKind::bounded_smooth, 1.0, 1.0);
        const auto pair = EntropyPair::quadratic(b);
        const double T = 0.256;
        for (std::uint64_t path = 0; path < 2; ++path) {
            const auto fine = sample_brownian(path_seed(77, path), T, 5e-4);
            std::vector<double> logh, logr;
            for (int lev = 0; lev < 4; ++lev) {
                SolverConfig c;
                const std::size_t nx = 128u << lev;
                c.grid = Grid(-4, 4, nx, 2, 64);
                c.T = T;
                c.dt = 4e-3 / (1 << lev);
                c.field = zero_field();
                c.flux = b;
                c.record_density_history = true;
                c.check_domain_width = false;
                c.rho0 = DensityField(c.grid);
                for (std::size_t i = 0; i < nx; ++i) c.rho0.values[i] = std::exp(-c.grid.x(i) * c.grid.x(i) / 0.3);
                const Solver s(c);
                const auto tr = s.run(fine.coarsen(8u >> lev), c.rho0);
                logh.push_back(std::log(c.grid.dx()));
                logr.push_back(std::log(entropy_balance_residual(tr, s.velocity(), pair, scaled_bump(2.5)).max_residual));
            }
            CHECK(least_squares_slope(logh, logr) >= 0.8);
        }
    }
    SUBCASE("deterministic smooth drift converges under refinement") {
        std::vector<double> res;
        for (int lev = 0; lev < 3; ++lev) {
            SolverConfig c;
            const std::size_t nx = 128u << lev;
            c.grid = Grid(-4, 4, nx, 2, 64);
            c.T = 0.2;
            c.dt = 4e-3 / (1 << lev);
            c.field = constant_div_field(-0.5);
            c.flux = noise_flux(FluxKind::zero, 0, 0);
            c.record_density_history = true;
            c.check_domain_width = false;
            c.rho0 = bump_density(c.grid, 0.0, 1.5, 1.0);
            const Solver s(c);
            const auto tr = s.solve_path(1);
            res.push_back(entropy_balance_residual(tr, s.velocity(), EntropyPair::quadratic(c.flux, 10.0),
                                                   scaled_bump(2.5))
                              .max_residual);
        }
        CHECK(res[1] < res[0]);
        CHECK(res[2] < res[1]);
    }
    SUBCASE("needs a density history") {
        const Solver s(base_config());
        CHECK_THROWS_AS(entropy_balance_residual(s.solve_path(1), s.velocity(),
                                                 EntropyPair::linear(base_config().flux, 10.0), scaled_bump(1.0)),
                        Error);
    }
}

TEST_CASE("commutator remainders") {
    const Grid g(-2, 2, 128, 2, 128);
    KineticField f(g), test(g);
    for (std::size_t i = 0; i < g.nx; ++i) {
        for (std::size_t j = 0; j < g.nv; ++j) {
            const double x = g.x(i), v = g.v(j);
            f.at(i, j) = std::exp(-x * x / 0.5) * std::exp(-(v - 0.3) * (v - 0.3) / 0.3);
            test.at(i, j) = smooth::bump(x / 1.5).value * smooth::bump(v / 1.5).value;
        }
    }
    SUBCASE("zero drift") {
        const auto r = commutator_remainders(f, zero_field(), 0.0, 0.1, 0.1, test);
        CHECK(r.R1 == 0.0);
        CHECK(r.R2 == 0.0);
        CHECK(r.R3 == 0.0);
        CHECK(r.limit == 0.0);
    }
    SUBCASE("linear drift: R1 -> +int g f div u, R2 -> -int g f div u") {
        const double c = 0.7;
        double oracle = 0.0;
        for (std::size_t i = 0; i < g.nx; ++i) {
            for (std::size_t j = 0; j < g.nv; ++j) oracle += test.at(i, j) * f.at(i, j) * c;
        }
        oracle *= g.dx() * g.dv();
        const auto s = commutator_sweep(f, constant_div_field(c), 0.0, {0.4, 0.2, 0.1}, {0.4, 0.2, 0.1}, test);
        CHECK(s.finest.limit == doctest::Approx(oracle).epsilon(1e-12));
        for (const auto& row : s.table) {
            for (const auto& r : row) CHECK(r.R3 == 0.0);
        }
        // errors shrink along the delta sweep at the finest eps
        const auto& last = s.table.back();
        for (std::size_t k = 1; k < last.size(); ++k) {
            CHECK(std::abs(last[k].R2 + oracle) < std::abs(last[k - 1].R2 + oracle));
        }
        CHECK(s.finest.R1 == doctest::Approx(oracle).epsilon(0.05));
        CHECK(s.finest.R2 == doctest::Approx(-oracle).epsilon(0.05));
        CHECK(std::abs(s.finest.R1 + s.finest.R2) <= 0.1 * std::abs(s.finest.R1));
        CHECK(s.R1_extrapolated == doctest::Approx(oracle).epsilon(2e-3));
        CHECK(s.R2_extrapolated == doctest::Approx(-oracle).epsilon(2e-3));
    }
    SUBCASE("preconditions") {
        CHECK_THROWS_AS(commutator_remainders(f, zero_field(), 0.0, 0.04, 0.1, test), Error);
        CHECK_THROWS_AS(commutator_remainders(f, zero_field(), 0.0, 0.1, 0.04, test), Error);
        CHECK(commutator_remainders(f, zero_field(), 0.0, 0.07, 0.2, test).warnings.size() == 1);
        CHECK_THROWS_AS(commutator_remainders(f, zero_field(), 0.0, 0.1, 0.1, KineticField(Grid(-2, 2, 64, 2, 128))),
                        Error);
    }
}

TEST_CASE("concentration oracle") {
    SUBCASE("characteristics") {
        CHECK(concentrating_characteristic(0.25, 0.5, 0.5, 1.0) == doctest::Approx(0.0625).epsilon(1e-14));
        CHECK(concentrating_characteristic(-0.25, 0.5, 0.5, 1.0) == doctest::Approx(-0.0625).epsilon(1e-14));
        CHECK(concentrating_characteristic(0.01, 0.5, 0.5, 1.0) == 0.0);
        CHECK(concentrating_characteristic(0.3, 0.0, 0.5, 1.0) == doctest::Approx(0.3).epsilon(1e-14));
    }
    SUBCASE("cell averages conserve mass and concentrate") {
        std::vector<double> sups;
        for (std::size_t nx : {64u, 128u, 256u, 512u}) {
            const Grid g(-4, 4, nx, 4, 8);
            const auto r = concentration_oracle(g, 0.5, 0.5, 1.0);
            CHECK(r.mass() == doctest::Approx(1.0).epsilon(1e-12));
            sups.push_back(r.sup_norm());
        }
        for (std::size_t k = 1; k < sups.size(); ++k) CHECK(sups[k] > sups[k - 1]);
        // the collapsed mass 1/8 is split over the two cells at 0, so sup >= (1/16) / dx
        CHECK(sups.back() >= 0.0625 / (8.0 / 512));
        const auto before = concentration_oracle(Grid(-4, 4, 64, 4, 8), 0.0, 0.5, 1.0);
        CHECK(before.sup_norm() == doctest::Approx(1.0));
    }
    SUBCASE("demo structure") {
        ConcentrationOptions o;
        o.nx_list = {32, 64, 128};
        o.T = 0.1;
        o.dt = 2e-3;
        const auto rep = concentration_demo(0.5, noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25), 2, o);
        REQUIRE(rep.levels.size() == 3);
        CHECK(rep.control_growth.size() == 2);
        CHECK(rep.verdicts.size() == 3);
        CHECK(rep.collapsed_mass == doctest::Approx(2 * 0.05 * 0.05));
        for (const auto& l : rep.levels) {
            CHECK(l.eps_mollify == doctest::Approx(2 * l.dx));
            CHECK(l.control_sup >= 1.0);
            CHECK(l.noisy_mass_drift < 1e-2);
        }
        o.nx_list = {32, 64};
        CHECK_THROWS_AS(concentration_demo(0.5, noise_flux(FluxKind::degenerate_plateau, 0.25, 0.25), 2, o), Error);
    }
}
