#pragma once

// Monte Carlo estimators and inequality checks on solver output: coupled L1
// contraction, weighted moments against a sub-solution weight, the weak
// entropy balance, commutator remainders and the concentration demo.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "kinetic_noise/bgk_solver.hpp"
#include "kinetic_noise/pucci.hpp"
#include "kinetic_noise/smooth.hpp"

namespace kinetic_noise {

/// value <= bound + tolerance; margin = bound + tolerance - value.
struct Verdict {
    std::string name;
    double value = 0.0;
    double bound = 0.0;
    double tolerance = 0.0;
    double margin = 0.0;
    bool passed = false;
};

Verdict make_verdict(std::string name, double value, double bound, double tolerance);

struct EnsembleReport {
    std::size_t n_paths = 0;
    std::vector<double> times;
    std::vector<std::vector<double>> per_path;  // [path][time]
    std::vector<double> mean;
    /// sqrt(unbiased variance / n_paths); zero for a single path.
    std::vector<double> stderr_;
    std::vector<Verdict> verdicts;

    bool all_passed() const;
};

/// Fills n_paths, mean and stderr_ from per_path.
EnsembleReport summarize(std::vector<double> times, std::vector<std::vector<double>> per_path);

/// Mean and standard error of one sample.
std::pair<double, double> mean_and_stderr(const std::vector<double>& samples);

// ---------------------------------------------------------------------------

struct ContractionReport {
    EnsembleReport distance;  // ||rho1(t) - rho2(t)||_L1 per path
    double initial_distance = 0.0;
    /// E||rho1 - rho2||(T) / ||rho01 - rho02||; 1 when the data coincide.
    double C_horizon = 0.0;
    /// sup_t E||rho1 - rho2||(t) / ||rho01 - rho02||.
    double C_sup = 0.0;
    /// max over paths and steps of | sum |chi1 - chi2| dv dx - ||rho1 - rho2|| | / ||rho1 - rho2||.
    double identity_error = 0.0;
    /// exp(M_est T 2p) when a certificate was supplied, otherwise NaN.
    double certificate_bound = std::numeric_limits<double>::quiet_NaN();
};

/// Runs both data on identical Brownian paths (seeds path_seed(config.seed, p)).
/// Throws grid_mismatch when either density lives on another grid.
ContractionReport l1_contraction(const SolverConfig& config, const DensityField& rho0_1,
                                 const DensityField& rho0_2, std::size_t n_paths,
                                 std::size_t threads = 1,
                                 const SubSolutionCertificate* certificate = nullptr,
                                 double p = 2.0);

// ---------------------------------------------------------------------------

/// Entropy S with fluxes Phi' = S' b and Psi' = b^2 S', both vanishing at 0.
class EntropyPair {
public:
    EntropyPair(std::function<double(double)> S, std::function<double(double)> dS, NoiseFlux b,
                double rho_max = 1e3);

    static EntropyPair quadratic(const NoiseFlux& b, double rho_max = 1e3);
    static EntropyPair linear(const NoiseFlux& b, double rho_max = 1e3);

    double S(double rho) const { return S_(rho); }
    double dS(double rho) const { return dS_(rho); }
    double Phi(double rho) const { return integral(rho, 0); }
    double Psi(double rho) const { return integral(rho, 1); }
    const NoiseFlux& flux() const { return b_; }
    double rho_max() const { return rho_max_; }

private:
    double integral(double rho, int which) const;
    double panel(double a, double b, int which) const;

    std::function<double(double)> S_, dS_;
    NoiseFlux b_;
    double rho_max_;
    double h_;
    // cumulative integrals at +-k h, k = 0 ... n
    std::vector<double> phi_pos_, phi_neg_, psi_pos_, psi_neg_;
};

struct RhoBar {
    double rho_bar = std::numeric_limits<double>::infinity();
    bool found = false;
    /// inf and sup of Psi / rho^2 over scanned rho >= rho_bar.
    double ratio_min = 0.0, ratio_max = 0.0;
};

/// Smallest point of a geometric grid on [1e-3, rho_max] from which
/// lambda/2 <= Psi(rho)/rho^2 <= Lambda holds at every later grid point,
/// with Psi taken from the quadratic entropy.
RhoBar rho_bar(const NoiseFlux& b, double rho_max = 1e3, std::size_t points = 4000);

// ---------------------------------------------------------------------------

/// Weight phi(t, x) >= 0 for the moment series.
using WeightFunction = std::function<double(double t, double x)>;

/// Linear interpolation of a sub-solution in (t, x); 1 outside its stored
/// ball, where phi_eps equals the outer hat function. Throws grid_mismatch
/// for t beyond the stored levels.
WeightFunction weight_of(const SubSolution& phi);

struct MomentSeries {
    EnsembleReport energy;   // int int phi |v|^p |f| at snapshot times
    EnsembleReport measure;  // p int_0^t int int phi |v|^{p-1} m, trapezoid over snapshots
    double M_est = 0.0;
    double c2 = 0.0;
    double kappa = 1.0;  // min{1, 1/(2p)}
    /// (E(0) + c2) exp(M_est t / kappa) at the snapshot times.
    std::vector<double> gronwall_bound;
};

struct MomentBoundData {
    double M_est = 0.0;
    double w21_t = 0.0, w21_x = 0.0, w21_xx = 0.0;
    double sup_phi = 1.0;
    double v0 = 0.0;
    double sup_u = 0.0;
    double div_l1 = 0.0;  // int_0^T int |div u_eps|
    double Lambda = 0.0;
};

/// c2 = 2 v0^{p+1}/(p+1) [w21_t + sup|u| w21_x + p ||div u||_L1 sup phi + Lambda/2 w21_xx],
/// a bound for the |v| < v0 part of the weighted moment identity.
double moment_constant_c2(const MomentBoundData& d, double p);

/// Series over the snapshots of every trajectory (all must share snapshot
/// times starting at 0). No Gronwall verdict is attached when `bound` is null.
MomentSeries weighted_moment_series(const std::vector<Trajectory>& trajectories,
                                    const WeightFunction& phi, double p,
                                    const MomentBoundData* bound = nullptr);

/// Same with the sub-solution weight and its certificate.
MomentSeries weighted_moment_series(const std::vector<Trajectory>& trajectories,
                                    const SubSolution& phi, double p,
                                    const MollifiedVelocity& u_eps, const NoiseFlux& flux);

// ---------------------------------------------------------------------------

/// Time-independent test function with two x-derivatives.
using TestFunction = std::function<smooth::Jet(double x)>;

struct EntropyBalance {
    std::vector<double> times;
    /// |LHS - RHS| of the weak balance at every step.
    std::vector<double> residual;
    double max_residual = 0.0;
};

/// Evaluates
///   int S(rho_t) phi - int S(rho_0) phi - sum_k dt int S(rho) u phi'
///     - sum_k int (1/2 Psi(rho) phi'' dW_k^2 - dt phi [rho S' - S] div u)
///     - sum_k int Phi(rho) phi' dW_k
/// on the recorded density history (left-point sums). The Ito correction
/// uses the realized quadratic variation dW_k^2.
EntropyBalance entropy_balance_residual(const Trajectory& trajectory, const MollifiedVelocity& u,
                                        const EntropyPair& pair, const TestFunction& testfn);

// ---------------------------------------------------------------------------

struct CommutatorRemainders {
    double R1 = 0.0, R2 = 0.0, R3 = 0.0;
    /// int int g f div u; R1 tends to +limit and R2 to -limit.
    double limit = 0.0;
    std::vector<std::string> warnings;
};

/// Direct double-convolution quadrature of
///   R1 = int g(x,v) f(y,w) [u(y) - u(x)] eta_eps'(x - y) psi_delta(v - w)
///   R2 = -int g f (w - v) div u(y) eta_eps(x - y) psi_delta'(v - w)
///   R3 = -int g f v [div u(y) - div u(x)] eta_eps(x - y) psi_delta'(v - w)
/// with u evaluated at time t. Discrete kernels are renormalised so that
/// sum eta = 1 and sum -z eta'(z) = 1 on the grid. Requires eps >= 2 dx and
/// delta >= 2 dv; warns below 4 cells.
CommutatorRemainders commutator_remainders(const KineticField& f, const VelocityField& u, double t,
                                           double eps, double delta, const KineticField& g);

struct CommutatorSweep {
    std::vector<double> eps_list, delta_list;
    std::vector<std::vector<CommutatorRemainders>> table;  // [eps][delta]
    /// Values at the smallest (eps, delta).
    CommutatorRemainders finest;
    /// Richardson extrapolation in delta, then in eps, assuming O(h^2) errors.
    double R1_extrapolated = 0.0, R2_extrapolated = 0.0;
};

/// Sweeps delta for every eps (both lists decreasing, halving).
CommutatorSweep commutator_sweep(const KineticField& f, const VelocityField& u, double t,
                                 const std::vector<double>& eps_list,
                                 const std::vector<double>& delta_list, const KineticField& g);

// ---------------------------------------------------------------------------

struct ConcentrationOptions {
    std::vector<std::size_t> nx_list{64, 128, 256};
    std::size_t nv = 128;
    double half_width = 4.0;
    double T = 0.5;
    double dt = 1e-3;
    double amplitude = 1.0;
    double R = 1.0;
    double cutoff_width = 0.5;
    double eps_relax = 0.05;
    /// eps_mollify = eps_cells * dx, so the drift sharpens with the mesh.
    double eps_cells = 2.0;
    std::uint64_t seed = 2024;
    std::size_t threads = 1;
};

struct ConcentrationLevel {
    std::size_t nx = 0;
    double dx = 0.0;
    double eps_mollify = 0.0;
    double v_max = 0.0;
    double control_sup = 0.0;
    double control_l2sq = 0.0;
    /// sup of the cell-averaged characteristics solution.
    double oracle_sup = 0.0;
    double noisy_sup_mean = 0.0;
    double noisy_l2sq_mean = 0.0;
    double noisy_l2sq_stderr = 0.0;
    double noisy_mass_drift = 0.0;
};

struct ConcentrationReport {
    double alpha = 0.0;
    /// Mass that has reached the origin at T along exact characteristics.
    double collapsed_mass = 0.0;
    std::vector<ConcentrationLevel> levels;
    /// control_sup[k+1] / control_sup[k].
    std::vector<double> control_growth;
    /// |l2[last] - l2[last-1]| / l2[last].
    double noisy_variation = 0.0;
    std::vector<Verdict> verdicts;
};

/// Exact position at time t of the characteristic of u = -A sign(x)|x|^alpha from x0
/// (0 once it has reached the origin).
double concentrating_characteristic(double x0, double t, double alpha, double A);

/// Cell averages at time t of the exact solution from 1_{[-1/2, 1/2]} under
/// u = -A sign(x)|x|^alpha; the collapsed mass sits in the cell containing 0
/// (split evenly when 0 is a cell edge).
DensityField concentration_oracle(const Grid& grid, double t, double alpha, double A);

/// Runs the b = 0 control and the noisy ensemble from 1_{[-1/2, 1/2]} on
/// each grid of the refinement list (at least three).
ConcentrationReport concentration_demo(double alpha, const NoiseFlux& flux, std::size_t n_paths,
                                       const ConcentrationOptions& options = {});

}  // namespace kinetic_noise
