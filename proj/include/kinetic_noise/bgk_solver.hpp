#pragma once

// Splitting scheme for the BGK approximation: each step is a stochastic
// semi-Lagrangian transport along inverse characteristics followed by the
// exact exponential relaxation towards chi(rho).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kinetic_noise/fields.hpp"
#include "kinetic_noise/kinetic_core.hpp"
#include "kinetic_noise/stochastic_flow.hpp"

namespace kinetic_noise {

/// ||rho0||_inf exp(t ||div u_eps||_inf).
double support_bound(double t, double rho0_sup, double divu_sup);

/// Semi-Lagrangian gather along inverse_flow_step, bilinear on a sign-split
/// velocity grid, zero outside the domain, clamped to [-1, 1].
KineticField transport_step(const KineticField& f, double t, double dt, double dW,
                            const MollifiedVelocity& u, const NoiseFlux& b);

/// f <- e^{-dt/eps} f + (1 - e^{-dt/eps}) chi(rho), rho = density(f).
KineticField relax_step(const KineticField& f, double dt, double eps_relax);

struct SolverConfig {
    Grid grid;
    double T = 0.5;
    double dt = 1e-3;
    double eps_relax = 0.1;
    double eps_mollify = 0.1;
    VelocityField field = zero_field();
    NoiseFlux flux;
    std::uint64_t seed = 0;
    std::vector<double> snapshot_times;
    DensityField rho0;
    /// Time levels of the mollified table (only used for time-dependent fields).
    std::size_t mollify_levels = 16;
    /// Velocity radius of the truncated defect integral.
    double defect_radius = 1.0;
    bool record_density_history = false;
    bool check_domain_width = true;
    /// Cells counted as leakage lie beyond support_bound(t) + support_slack_cells * dv.
    double support_slack_cells = 1.0;
    /// Throw invariant_violation as soon as sign or support tolerances are exceeded.
    bool abort_on_violation = true;
};

struct SeriesPoint {
    double t, mass, l1, sup_rho, moment_p2, defect;
};

struct Snapshot {
    double time;
    KineticField f;
    DensityField rho;
    KineticMeasureField m;
};

/// Worst values seen over a run. Leaks and drift are relative to ||rho0||_L1.
struct InvariantMaxima {
    double sign_violation = 0.0;
    double support_leak = 0.0;
    double defect_negativity = 0.0;
    double mass_drift = 0.0;
    double boundary_leak = 0.0;
    /// sup_t int int |f(t)| / ||rho0||_L1 - 1.
    double l1_excess = 0.0;
};

struct Trajectory {
    BrownianDriver driver;
    std::vector<Snapshot> snapshots;
    std::vector<SeriesPoint> series;
    InvariantMaxima invariants;
    /// int_0^T ||chi(rho) - f||_{L1_{x,v}} dt.
    double chi_gap_integral = 0.0;
    /// int_0^T int int_{|v| <= defect_radius} m dv dx dt.
    double defect_integral = 0.0;
    /// Same over all v.
    double defect_integral_total = 0.0;
    KineticField final_f;
    DensityField final_rho;
    std::vector<DensityField> density_history;
};

struct StepView {
    std::size_t step;
    double t;
    const KineticField& f;
    const DensityField& rho;
    double dW;
};

using StepObserver = std::function<void(const StepView&)>;

class Solver {
public:
    /// Validates the configuration and mollifies the drift once. Throws
    /// config, domain_too_small or step_too_large.
    explicit Solver(SolverConfig config);

    const SolverConfig& config() const { return config_; }
    const MollifiedVelocity& velocity() const { return u_eps_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    double support_bound_at(double t) const;
    std::size_t steps() const { return steps_; }

    /// Runs one path from `rho0` (the configured one when omitted). The
    /// observer sees the state after every step, and after step 0 at t = 0.
    Trajectory run(const BrownianDriver& driver, const DensityField& rho0,
                   const StepObserver& observer = {}) const;
    Trajectory run(const BrownianDriver& driver, const StepObserver& observer = {}) const {
        return run(driver, config_.rho0, observer);
    }
    Trajectory solve_path(std::uint64_t seed, const StepObserver& observer = {}) const;
    BrownianDriver driver(std::uint64_t seed) const;

private:
    SolverConfig config_;
    MollifiedVelocity u_eps_;
    std::vector<std::string> warnings_;
    std::size_t steps_ = 0;
};

Trajectory solve_path(const SolverConfig& config, std::uint64_t seed);

struct HydroEntry {
    double eps = 0.0;
    double chi_gap_mean = 0.0;
    double chi_gap_stderr = 0.0;
    double defect_mean = 0.0;
    /// eps * int int int m over all v.
    double relaxation_defect_mean = 0.0;
    /// defect_mean / (2 R ||rho0||_L1 + R^2 ||div u||_L1).
    double defect_constant = 0.0;
    double l1_excess_max = 0.0;
};

struct HydroReport {
    std::vector<HydroEntry> entries;
    bool decreasing = false;
    /// Relative spread (max - min) / max of the defect constants.
    double constant_variation = 0.0;
};

/// Varies eps_relax over `eps_list` with eps_mollify fixed; paths seeded
/// from config.seed and shared across eps values.
HydroReport hydrodynamic_sweep(const SolverConfig& config, const std::vector<double>& eps_list,
                               std::size_t n_paths, std::size_t threads = 1);

}  // namespace kinetic_noise
