#pragma once

// Pucci extremal operator, annulus decomposition of (div u)_-, explicit
// backward solves of  d_t phi + M+(D^2 phi) = -source  and the assembled
// sub-solution weight phi_eps with its residual certificate.

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kinetic_noise/fields.hpp"
#include "kinetic_noise/smooth.hpp"

namespace kinetic_noise {

struct PucciParams {
    double alpha = 0.0625;  // lambda / 4
    double beta = 0.25;     // Lambda
    double p = 2.0;
    double gamma = 0.25;
    double q = 4.0;

    /// alpha = lambda / 4, beta = Lambda.
    static PucciParams from_flux(const NoiseFlux& b, double p, double gamma, double q);
    void validate() const;
    double floor_value() const { return 1.0 / (2.0 * p); }
};

/// beta * sum of positive eigenvalues + alpha * sum of negative ones.
double pucci_plus(std::span<const double> eigenvalues, double alpha, double beta);

/// Eigenvalues of [[a11, a12], [a12, a22]], ascending.
std::array<double, 2> symmetric_eigenvalues(double a11, double a12, double a22);

double pucci_plus(double a11, double a12, double a22, double alpha, double beta);

struct AnnulusDecomposition {
    /// r_0 = 0 < r_1 < ... < r_N = R.
    std::vector<double> radii;
    std::size_t N = 0;
    /// Norm of (div u)_- on each annulus (r_{k-1}, r_k).
    std::vector<double> norms;
    double total_norm = 0.0;
    double gamma = 0.0;
    double q = 0.0;
};

/// Splits (0, R) so that every annulus but the last carries L^q norm gamma
/// of (div u)_- over [0, T]; bisection to 1e-9 relative on the norm.
AnnulusDecomposition annulus_decomposition(const VelocityField& u, double q, double gamma, double R,
                                           double T, std::size_t table_points = 1 << 16);

/// Source term s(t, x, y) >= 0; y is ignored in one dimension.
using PucciSource = std::function<double(double t, double x, double y)>;

struct PucciGridOptions {
    int d = 1;
    std::size_t n = 401;       // nodes per axis on [-half_width, half_width]
    double cfl = 0.9;          // dt = cfl * dx^2 / (2 d beta)
    double dt = 0.0;           // explicit step; 0 derives it from cfl
    double t_begin = -1.0;     // window (t_begin, 2T)
    double keep_radius = 0.0;  // stored restriction |x_i| <= keep_radius (0: whole grid)
};

/// phi on stored time levels in [0, T] (ascending) over a square node grid.
struct PucciSolution {
    int d = 1;
    double x0 = 0.0;  // first stored node
    double dx = 0.0;
    std::size_t n = 0;  // stored nodes per axis
    double dt = 0.0;
    std::vector<double> times;
    std::vector<std::vector<double>> phi;  // [level][i] or [level][i * n + j]
    double sup = 0.0;
    double min = 0.0;

    double x(std::size_t i) const { return x0 + static_cast<double>(i) * dx; }
};

/// Explicit backward solve of d_t phi + M+_{alpha,beta}(D^2 phi) = -s with
/// phi = 1/(2p) at t = 2T and on the boundary of the ball of radius
/// `half_width`. Throws cfl_violation when dt exceeds dx^2 / (2 d beta).
PucciSolution solve_pucci(const PucciSource& s, const PucciParams& params, double half_width,
                          double T, const PucciGridOptions& options = {});

/// Source 1_{r_{k-1} <= |x| < r_k} (div u_eps)_-(t, |x|) on [0, T], zero
/// outside; in d = 2 the one-dimensional profile is used radially.
PucciSource component_source(std::size_t k, const std::vector<double>& radii,
                             const MollifiedVelocity& u_eps, double T);

/// Component k (1-based) on B_{4R}, stored on [0, T] x B_{3R}.
PucciSolution solve_component(std::size_t k, const std::vector<double>& radii,
                              const MollifiedVelocity& u_eps, const PucciParams& params, double R,
                              double T, PucciGridOptions options = {});

struct CutoffFamily {
    /// r_0 ... r_{N+3}; the three outer radii are 1.5R, 2R and 2.5R.
    std::vector<double> radii;
    double R = 0.0;

    /// Number of cutoffs eta_1 ... eta_{N+1}.
    std::size_t size() const { return radii.size() - 3; }
    /// eta_k(r), k = 1 ... size(), as a function of r = |x| with two r-derivatives.
    smooth::Jet eta(std::size_t k, double r) const;
    /// Outer hat function: 0 on B_R, 1 outside B_{2R}.
    smooth::Jet hat(double r) const;
    /// Plateau of eta_k, where it equals 1.
    std::array<double, 2> plateau(std::size_t k) const;
};

struct CutoffBounds {
    std::vector<double> eta_d1, eta_d2;  // sup norms per k
    double hat_d1 = 0.0, hat_d2 = 0.0;
};

/// Builds the family from an annulus decomposition r_0 = 0 < ... < r_N = R.
CutoffFamily cutoff_family(const std::vector<double>& radii);
CutoffBounds cutoff_bounds(const CutoffFamily& c, std::size_t samples = 10000);

struct SubSolutionCertificate {
    double M_est = 0.0;
    double sup_norm = 0.0;
    double lower_bound_min = 0.0;
    double lower_bound_target = 0.0;
    double w21_t = 0.0;   // int int |d_t phi|
    double w21_x = 0.0;   // int int |d_x phi|
    double w21_xx = 0.0;  // int int |d_xx phi|
    std::vector<double> radii;
    double gamma = 0.0;
    std::size_t N = 0;
    bool lower_bound_ok = false;
};

struct SubSolution {
    double x0 = 0.0, dx = 0.0;
    std::size_t n = 0;
    std::vector<double> times;
    std::vector<std::vector<double>> phi;
    CutoffFamily cutoffs;
    SubSolutionCertificate certificate;

    double x(std::size_t i) const { return x0 + static_cast<double>(i) * dx; }
};

/// phi_eps = hat + sum_k eta_k phi_k on the common component grid (d = 1),
/// with the residual
///   d_t phi + u_eps d_x phi + p (div u_eps)_- phi + b(v)^2 / 2 d_xx phi
/// maximised over stored time levels, `v_samples` with |v| >= v0 and
/// `refine` points per cell. Cutoffs enter through exact jets, component
/// data through linear interpolation of nodal differences. Throws
/// invariant_violation when min phi_eps < min(1, 1/(2p)) - 1e-8.
SubSolution assemble_subsolution(const std::vector<PucciSolution>& components,
                                 const CutoffFamily& cutoffs, const MollifiedVelocity& u_eps,
                                 const NoiseFlux& flux, const PucciParams& params,
                                 const std::vector<double>& v_samples, std::size_t refine = 8);

struct SubSolutionOptions {
    PucciGridOptions grid;
    double p = 2.0;
    double q = 4.0;
    /// 0 selects gamma automatically from the pilot constant.
    double gamma = 0.0;
    std::size_t max_halvings = 8;
    std::size_t threads = 1;
    std::vector<double> v_samples;  // empty: 256 points on [-4, 4]
    std::size_t refine = 8;         // residual samples per cell
};

struct SubSolutionReport {
    SubSolution solution;
    AnnulusDecomposition decomposition;
    PucciParams params;
    /// (sup phi - 1/(2p)) / ||source||_{L^q} for the pilot constant source on B_R.
    double C_est = 0.0;
    /// max_k sup phi_k.
    double component_sup = 0.0;
    /// 1/(2p) + C_est gamma.
    double max_principle_bound = 0.0;
    bool max_principle_ok = false;
    std::size_t gamma_halvings = 0;
};

/// Pilot constant: solves with a unit source on [0, T] x B_R.
double pilot_constant(const PucciParams& params, double R, double T,
                      const PucciGridOptions& grid = {});

/// Decomposition, component solves (parallel over k), cutoffs and assembly,
/// halving gamma from 1/(4 p C_est) until the lower bound holds.
SubSolutionReport build_subsolution(const VelocityField& u, const MollifiedVelocity& u_eps,
                                    const NoiseFlux& flux, double R, double T,
                                    const SubSolutionOptions& options = {});

}  // namespace kinetic_noise
