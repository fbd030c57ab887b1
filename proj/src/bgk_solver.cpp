#include "kinetic_noise/bgk_solver.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kinetic_noise/error.hpp"
#include "kinetic_noise/parallel.hpp"

namespace kinetic_noise {

namespace {

// Largest outward v-index (0 ... nv/2 - 1) holding a nonzero value, -1 if none.
int outermost_nonzero(const KineticField& f) {
    const Grid& g = f.grid;
    const std::size_t h = g.v_zero();
    int best = -1;
    for (std::size_t i = 0; i < g.nx; ++i) {
        const auto col = f.column(i);
        for (int m = static_cast<int>(h) - 1; m > best; --m) {
            if (col[h + m] != 0.0 || col[h - 1 - m] != 0.0) {
                best = m;
                break;
            }
        }
    }
    return best;
}

// Conservative remap in v. Each old outward cell k is reconstructed as
// sign(f_k) on [k, k + |f_k|] (units of dv), the content packed towards
// v = 0 as in a projected maxwellian. The new cell m takes the overlap of
// that profile with [m, m + 1] * scale, divided by scale. The front of a
// maxwellian therefore moves exactly by 1 / scale and no mass creeps
// outwards. For scale == 1 the map is the identity.
void transport_into(const KineticField& f, KineticField& out, double t, double dt, double dW,
                    const MollifiedVelocity& u, const NoiseFlux& b, int m_limit) {
    const Grid& g = f.grid;
    const std::size_t nx = g.nx, nv = g.nv, h = g.v_zero();
    const double dv = g.dv(), inv_dx = 1.0 / g.dx();
    const long long nxl = static_cast<long long>(nx);
    const double* src = f.values.data();
    double* dst = out.values.data();
    for (std::size_t i = 0; i < nx; ++i) {
        const double xi = g.x(i);
        const double ui = u.u(t, xi);
        const double scale = std::exp(u.div(t, xi) * dt);
        const double inv_scale = 1.0 / scale;
        double* col = dst + i * nv;
        for (int sigma = 1; sigma >= -1; sigma -= 2) {
            for (std::size_t m = 0; m < h; ++m) {
                const std::size_t j = sigma > 0 ? h + m : h - 1 - m;
                const double A = static_cast<double>(m) * scale;
                const double B = static_cast<double>(m + 1) * scale;
                const std::size_t k0 = static_cast<std::size_t>(A);
                if (static_cast<long long>(k0) > m_limit || k0 >= h) {
                    col[j] = 0.0;
                    continue;
                }
                auto remapped = [&](long long c) {
                    if (c < 0 || c >= nxl) return 0.0;
                    const double* old = src + static_cast<std::size_t>(c) * nv;
                    double s = 0.0;
                    for (std::size_t k = k0; k < h && static_cast<double>(k) < B; ++k) {
                        const double fk = old[sigma > 0 ? h + k : h - 1 - k];
                        if (fk == 0.0) continue;
                        const double kd = static_cast<double>(k);
                        const double lo = std::max(A - kd, 0.0);
                        const double hi = std::min(B - kd, std::abs(fk));
                        if (hi > lo) s += std::copysign(hi - lo, fk);
                    }
                    return scale == 1.0 ? s : s * inv_scale;
                };
                const double w = sigma * (static_cast<double>(m) + 0.5) * dv * scale;
                const double shift = ui * dt + b(w) * dW;
                const double r = static_cast<double>(i) - shift * inv_dx;
                const double rf = std::floor(r);
                const double fr = r - rf;
                const long long i0 = static_cast<long long>(rf);
                double value = (1.0 - fr) * remapped(i0);
                if (fr != 0.0) value += fr * remapped(i0 + 1);
                col[j] = std::clamp(value, -1.0, 1.0);
            }
        }
    }
}

struct RelaxStats {
    double chi_gap = 0.0;
    double defect_radius = 0.0;
    double defect_total = 0.0;
    double defect_now = 0.0;
    double min_measure = 0.0;
    double l1 = 0.0;
    double moment_p2 = 0.0;
    double mass = 0.0;
    double sup_rho = 0.0;
    double sign_violation = 0.0;
    std::size_t sign_cell_i = 0, sign_cell_j = 0;
    double support_leak = 0.0;
    double support_peak = 0.0;
    int m_limit = -1;
};

// Relaxes in place, storing the density in rho and accumulating the per-step
// quantities. a = exp(-dt / eps).
void relax_inplace(KineticField& f, DensityField& rho, double a, double eps, double radius,
                   double support_edge, std::vector<double>& chi, RelaxStats& st) {
    const Grid& g = f.grid;
    const std::size_t nv = g.nv, h = g.v_zero();
    const double dv = g.dv(), dx = g.dx();
    chi.resize(nv);
    std::vector<double> vj(nv), v2(nv);
    for (std::size_t j = 0; j < nv; ++j) {
        vj[j] = g.v(j);
        v2[j] = vj[j] * vj[j];
    }
    for (std::size_t i = 0; i < g.nx; ++i) {
        auto col = f.column(i);
        const double r = column_density(col, dv);
        rho.values[i] = r;
        st.mass += r;
        st.sup_rho = std::max(st.sup_rho, std::abs(r));
        project_maxwellian_column(r, g, chi);
        double cum = 0.0;
        for (std::size_t j = 0; j < nv; ++j) {
            const double diff = chi[j] - col[j];
            cum += diff * dv;
            const double step_defect = (1.0 - a) * cum;
            st.defect_total += step_defect;
            if (std::abs(vj[j]) <= radius) st.defect_radius += step_defect;
            const double m_now = a * cum / eps;
            st.defect_now += m_now;
            st.min_measure = std::min(st.min_measure, m_now);
            const double nf = chi[j] - a * diff;
            col[j] = nf;
            const double an = std::abs(nf);
            st.chi_gap += std::abs(a * diff);
            st.l1 += an;
            st.moment_p2 += v2[j] * an;
            const double sgn = j >= h ? nf : -nf;
            const double viol = std::max(-sgn, sgn - 1.0);
            if (viol > st.sign_violation) {
                st.sign_violation = viol;
                st.sign_cell_i = i;
                st.sign_cell_j = j;
            }
            if (an != 0.0) {
                const int m = static_cast<int>(j >= h ? j - h : h - 1 - j);
                st.m_limit = std::max(st.m_limit, m);
                if (std::abs(vj[j]) > support_edge) {
                    st.support_leak += an;
                    st.support_peak = std::max(st.support_peak, an);
                }
            }
        }
    }
    const double cell = dx * dv;
    st.chi_gap *= cell;
    st.defect_radius *= cell;
    st.defect_total *= cell;
    st.defect_now *= cell;
    st.l1 *= cell;
    st.moment_p2 *= cell;
    st.mass *= dx;
}

double l1_of(const DensityField& r) { return r.l1_norm(); }

}  // namespace

double support_bound(double t, double rho0_sup, double divu_sup) {
    return rho0_sup * std::exp(t * divu_sup);
}

KineticField transport_step(const KineticField& f, double t, double dt, double dW,
                            const MollifiedVelocity& u, const NoiseFlux& b) {
    check_invertible(dt, u);
    KineticField out(f.grid, f.time + dt);
    transport_into(f, out, t, dt, dW, u, b, static_cast<int>(f.grid.v_zero()));
    return out;
}

KineticField relax_step(const KineticField& f, double dt, double eps_relax) {
    if (!(eps_relax > 0.0)) throw Error(ErrorKind::invalid_argument, "eps_relax must be positive");
    KineticField out = f;
    DensityField rho(f.grid);
    std::vector<double> chi;
    RelaxStats st;
    relax_inplace(out, rho, std::exp(-dt / eps_relax), eps_relax, 0.0,
                  std::numeric_limits<double>::infinity(), chi, st);
    return out;
}

Solver::Solver(SolverConfig config) : config_(std::move(config)) {
    const SolverConfig& c = config_;
    auto fail = [](ErrorKind k, const std::string& msg) { throw Error(k, msg); };
    if (!(c.dt > 0.0)) fail(ErrorKind::config, "dt must be positive");
    if (!(c.T >= c.dt)) fail(ErrorKind::config, "T must be at least dt");
    if (!(c.eps_relax > 0.0)) fail(ErrorKind::config, "eps_relax must be positive");
    if (!(c.eps_mollify > 0.0)) fail(ErrorKind::config, "eps_mollify must be positive");
    if (c.rho0.values.size() != c.grid.nx) fail(ErrorKind::config, "rho0 does not match grid.nx");
    for (std::size_t k = 1; k < c.snapshot_times.size(); ++k) {
        if (!(c.snapshot_times[k] > c.snapshot_times[k - 1])) {
            fail(ErrorKind::config, "snapshot times must be strictly increasing");
        }
    }
    steps_ = static_cast<std::size_t>(std::llround(c.T / c.dt));

    u_eps_ = mollify_velocity(c.field, c.eps_mollify, c.grid, c.mollify_levels, c.T);
    warnings_ = u_eps_.warnings;
    if (c.flux.hypothesis_violating) {
        warnings_.push_back("flux b = 0 violates asymptotic ellipticity (deterministic control)");
    }
    check_invertible(c.dt, u_eps_);

    const double need = 1.05 * support_bound_at(c.T);
    if (c.grid.v_max < need) {
        std::ostringstream os;
        os << "v_max = " << c.grid.v_max << " < 1.05 * support bound " << need / 1.05;
        fail(ErrorKind::domain_too_small, os.str());
    }
    if (c.check_domain_width) {
        double r0 = 0.0;
        for (std::size_t i = 0; i < c.grid.nx; ++i) {
            if (c.rho0.values[i] != 0.0) r0 = std::max(r0, std::abs(c.grid.x(i)) + 0.5 * c.grid.dx());
        }
        if (c.field.compact()) r0 = std::max(r0, c.field.support_radius);
        double sup_u = 0.0;
        for (double t : u_eps_.times) {
            for (std::size_t i = 0; i < c.grid.nx; ++i) {
                sup_u = std::max(sup_u, std::abs(u_eps_.u(t, c.grid.x(i))));
            }
        }
        const double sigma = c.flux.hypothesis_violating ? 0.0 : std::sqrt(c.flux.Lambda);
        const double half = std::min(-c.grid.x_min, c.grid.x_max);
        const double required = r0 + sup_u * c.T + 6.0 * sigma * std::sqrt(c.T);
        if (half < required) {
            std::ostringstream os;
            os << "x-domain half-width " << half << " < R + |u|T + 6 sigma sqrt(T) = " << required;
            fail(ErrorKind::domain_too_small, os.str());
        }
    }
}

double Solver::support_bound_at(double t) const {
    return support_bound(t, config_.rho0.sup_norm(), u_eps_.sup_div);
}

BrownianDriver Solver::driver(std::uint64_t seed) const {
    return sample_brownian(seed, static_cast<double>(steps_) * config_.dt, config_.dt, 1);
}

Trajectory Solver::solve_path(std::uint64_t seed, const StepObserver& observer) const {
    return run(driver(seed), config_.rho0, observer);
}

Trajectory Solver::run(const BrownianDriver& driver, const DensityField& rho0,
                       const StepObserver& observer) const {
    const SolverConfig& c = config_;
    const Grid& g = c.grid;
    if (driver.steps < steps_ || std::abs(driver.dt - c.dt) > 1e-15 * c.dt) {
        throw Error(ErrorKind::config, "driver does not match dt / horizon");
    }
    if (rho0.values.size() != g.nx) throw Error(ErrorKind::grid_mismatch, "rho0 does not match grid");
    if (support_bound(c.T, rho0.sup_norm(), u_eps_.sup_div) > g.v_max) {
        throw Error(ErrorKind::domain_too_small, "initial density too large for v_max");
    }

    Trajectory tr;
    tr.driver = driver;
    KineticField f = project_maxwellian(rho0, g);
    KineticField buffer(g);
    DensityField rho = rho0;
    const double mass0 = rho0.mass();
    const double l1_0 = std::max(rho0.l1_norm(), 1e-300);
    const double rho_sup0 = rho0.sup_norm();
    const double support_sup = std::max(rho_sup0, c.rho0.sup_norm());
    const double a = std::exp(-c.dt / c.eps_relax);
    std::vector<double> chi;
    std::size_t next_snapshot = 0;
    const double dx = g.dx();

    auto boundary_mass = [&](const DensityField& r) {
        double s = 0.0;
        for (std::size_t i = 0; i < std::min<std::size_t>(2, g.nx); ++i) {
            s += std::abs(r.values[i]) + std::abs(r.values[g.nx - 1 - i]);
        }
        return s * dx;
    };
    auto maybe_snapshot = [&](std::size_t step) {
        const double t = static_cast<double>(step) * c.dt;
        while (next_snapshot < c.snapshot_times.size() &&
               c.snapshot_times[next_snapshot] <= t + 0.5 * c.dt) {
            f.time = t;
            tr.snapshots.push_back({t, f, rho, bgk_defect_measure(f, c.eps_relax).measure});
            ++next_snapshot;
        }
    };

    {
        double l1 = 0.0;
        for (double v : f.values) l1 += std::abs(v);
        l1 *= dx * g.dv();
        tr.series.push_back({0.0, mass0, l1, rho_sup0, lp_moment(f, 2.0), 0.0});
        tr.invariants.boundary_leak = boundary_mass(rho) / l1_0;
        if (c.record_density_history) tr.density_history.push_back(rho);
        maybe_snapshot(0);
        if (observer) observer(StepView{0, 0.0, f, rho, 0.0});
    }

    int m_limit = outermost_nonzero(f);
    for (std::size_t k = 0; k < steps_; ++k) {
        const double t = static_cast<double>(k) * c.dt;
        const double t1 = static_cast<double>(k + 1) * c.dt;
        const double dW = driver.increment(k);
        transport_into(f, buffer, t, c.dt, dW, u_eps_, c.flux, m_limit);
        std::swap(f.values, buffer.values);
        f.time = t1;

        RelaxStats st;
        const double edge = support_bound(t1, support_sup, u_eps_.sup_div) + c.support_slack_cells * g.dv();
        relax_inplace(f, rho, a, c.eps_relax, c.defect_radius, edge, chi, st);
        m_limit = std::min(st.m_limit + 1, static_cast<int>(g.v_zero()) - 1);

        if (c.abort_on_violation && st.sign_violation > 1e-6) {
            std::ostringstream os;
            os << "sign property violated by " << st.sign_violation << " at step " << k + 1
               << ", cell (" << st.sign_cell_i << ", " << st.sign_cell_j << ")";
            throw Error(ErrorKind::invariant_violation, os.str());
        }
        auto& inv = tr.invariants;
        inv.sign_violation = std::max(inv.sign_violation, st.sign_violation);
        inv.support_leak = std::max(inv.support_leak, st.support_leak * dx * g.dv() / l1_0);
        inv.defect_negativity = std::max(inv.defect_negativity, -st.min_measure);
        inv.mass_drift = std::max(inv.mass_drift, std::abs(st.mass - mass0) / l1_0);
        inv.boundary_leak = std::max(inv.boundary_leak, boundary_mass(rho) / l1_0);
        inv.l1_excess = std::max(inv.l1_excess, st.l1 / l1_0 - 1.0);
        if (c.abort_on_violation && inv.support_leak > 1e-6) {
            std::ostringstream os;
            os << "support property violated at step " << k + 1 << ": mass beyond |v| = " << edge
               << " is " << inv.support_leak << " of the total";
            throw Error(ErrorKind::invariant_violation, os.str());
        }

        tr.chi_gap_integral += st.chi_gap * c.dt;
        tr.defect_integral += st.defect_radius;
        tr.defect_integral_total += st.defect_total;
        tr.series.push_back({t1, st.mass, st.l1, st.sup_rho, st.moment_p2, st.defect_now});
        if (c.record_density_history) tr.density_history.push_back(rho);
        maybe_snapshot(k + 1);
        if (observer) observer(StepView{k + 1, t1, f, rho, dW});
    }
    tr.final_f = std::move(f);
    tr.final_rho = std::move(rho);
    return tr;
}

Trajectory solve_path(const SolverConfig& config, std::uint64_t seed) {
    return Solver(config).solve_path(seed);
}

HydroReport hydrodynamic_sweep(const SolverConfig& config, const std::vector<double>& eps_list,
                               std::size_t n_paths, std::size_t threads) {
    if (eps_list.size() < 3) throw Error(ErrorKind::invalid_argument, "eps sweep needs at least 3 values");
    for (std::size_t k = 1; k < eps_list.size(); ++k) {
        if (!(eps_list[k] < eps_list[k - 1])) {
            throw Error(ErrorKind::invalid_argument, "eps list must be decreasing");
        }
    }
    if (n_paths == 0) throw Error(ErrorKind::invalid_argument, "need at least one path");
    HydroReport report;
    for (double eps : eps_list) {
        SolverConfig c = config;
        c.eps_relax = eps;
        c.snapshot_times.clear();
        c.record_density_history = false;
        const Solver solver(c);
        std::vector<double> gap(n_paths), defect(n_paths), relax(n_paths), excess(n_paths);
        parallel_for(n_paths, threads, [&](std::size_t p) {
            const Trajectory tr = solver.solve_path(path_seed(c.seed, p));
            gap[p] = tr.chi_gap_integral;
            defect[p] = tr.defect_integral;
            relax[p] = eps * tr.defect_integral_total;
            excess[p] = tr.invariants.l1_excess;
        });
        HydroEntry e;
        e.eps = eps;
        double s = 0.0, s2 = 0.0;
        for (std::size_t p = 0; p < n_paths; ++p) {
            s += gap[p];
            s2 += gap[p] * gap[p];
            e.defect_mean += defect[p];
            e.relaxation_defect_mean += relax[p];
            e.l1_excess_max = std::max(e.l1_excess_max, excess[p]);
        }
        const double n = static_cast<double>(n_paths);
        e.chi_gap_mean = s / n;
        e.chi_gap_stderr = n > 1 ? std::sqrt(std::max(0.0, s2 / n - e.chi_gap_mean * e.chi_gap_mean) / (n - 1)) : 0.0;
        e.defect_mean /= n;
        e.relaxation_defect_mean /= n;

        const MollifiedVelocity& u = solver.velocity();
        double div_l1 = 0.0;
        for (const auto& level : u.du_tab) {
            for (double d : level) div_l1 += std::abs(d) * u.h;
        }
        div_l1 *= c.T / static_cast<double>(u.du_tab.size());
        const double R = c.defect_radius;
        e.defect_constant = e.defect_mean / (2.0 * R * l1_of(c.rho0) + R * R * div_l1);
        report.entries.push_back(e);
    }
    report.decreasing = true;
    double cmin = report.entries.front().defect_constant, cmax = cmin;
    for (std::size_t k = 1; k < report.entries.size(); ++k) {
        if (!(report.entries[k].chi_gap_mean < report.entries[k - 1].chi_gap_mean)) report.decreasing = false;
        cmin = std::min(cmin, report.entries[k].defect_constant);
        cmax = std::max(cmax, report.entries[k].defect_constant);
    }
    report.constant_variation = cmax > 0.0 ? (cmax - cmin) / cmax : 0.0;
    return report;
}

}  // namespace kinetic_noise
