#pragma once

// Drift velocity fields, their mollification and the noise flux b(v).
// Everything here is one-dimensional in space.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "kinetic_noise/kinetic_core.hpp"

namespace kinetic_noise {

enum class FieldKind { power_law, sampled, zero, constant_div };

/// expanding: u = sign(x)|x|^alpha; concentrating: u = -sign(x)|x|^alpha
/// (the finite-time mass concentration example).
enum class Orientation { expanding, concentrating };

struct PowerLawParams {
    double alpha = 0.5;
    double R = 1.0;
    double cutoff_width = 0.2;
    Orientation orientation = Orientation::expanding;
    double amplitude = 1.0;
};

/// u(t, x) together with its divergence. Evaluators are immutable after
/// construction and safe to call concurrently.
struct VelocityField {
    FieldKind kind = FieldKind::zero;
    std::string description;
    /// u vanishes for |x| > support_radius (infinite when not compactly supported).
    double support_radius = 0.0;
    bool autonomous = true;
    /// Reported sup |u|; every evaluation is bounded by it.
    double sup_u = 0.0;
    std::function<double(double, double)> u;
    std::function<double(double, double)> div;

    double velocity(double t, double x) const { return u(t, x); }
    double divergence(double t, double x) const { return div(t, x); }
    bool compact() const { return std::isfinite(support_radius); }
};

VelocityField zero_field();

/// u(x) = u0 + c x, div u = c. Not compactly supported.
VelocityField constant_div_field(double c, double u0 = 0.0);

/// amplitude * (+-) sign(x)|x|^alpha * zeta(|x|), zeta = 1 on B_{R - w}, 0 outside B_R.
VelocityField power_law_field(double alpha, double R, double cutoff_width);
VelocityField power_law_field(const PowerLawParams& params);

struct VelocitySample {
    double t, x, u, divu;
};

/// Piecewise-bilinear field on a tensor (t, x) sample grid; zero outside the
/// sampled x-range, clamped in t.
VelocityField sampled_field(const std::vector<VelocitySample>& samples);

/// Which part of div u enters a norm. negative uses (g)_- = max(-g, 0).
enum class DivPart { negative, absolute };

/// (int_0^T int_{r_in <= |x| <= r_out} part(div u)^q dx dt)^{1/q}, midpoint
/// rule on a mesh graded towards r_in, refined until two successive levels
/// agree to 1e-4 relative. Throws non_convergence after 12 refinements.
double div_norm(const VelocityField& u, double q, double r_in, double r_out, double T,
                DivPart part = DivPart::negative);

/// Same integral at one fixed resolution; continuous in r_in and r_out.
double div_norm_fixed(const VelocityField& u, double q, double r_in, double r_out, double T,
                      std::size_t n, DivPart part = DivPart::negative);

/// Sub-criticality norm of (div u)_- on an annulus. Requires q > 3 (d = 1).
double lq_norm_negative_div(const VelocityField& u, double q, double r_in, double r_out, double T);

/// Cumulative table of int_0^T int_{r_in <= |x| <= r} part(div u)^q on a
/// fixed graded mesh of (r_in, r_max). norm(a, b) is nondecreasing and
/// continuous in b, which makes it safe to bisect on.
class AnnulusNormTable {
public:
    AnnulusNormTable(const VelocityField& u, double q, double r_in, double r_max, double T,
                     std::size_t n = 1 << 16, DivPart part = DivPart::negative);
    /// q-th power of the norm over r_in <= |x| <= r.
    double cumulative(double r) const;
    /// Norm over a <= |x| <= b.
    double norm(double a, double b) const;
    double r_in() const { return r_in_; }
    double r_max() const { return r_in_ + length_; }
    double q() const { return q_; }

private:
    double q_, r_in_, length_;
    std::vector<double> cum_;
};

/// Spatial mollifier eta_eps(z) = C exp(-1 / (1 - (z/eps)^2)) / eps, unit mass.
struct Mollifier {
    double eps;
    double normalisation;  // 1 / int bump
    explicit Mollifier(double eps);
    double operator()(double z) const;
    double derivative(double z) const;
    double second_derivative(double z) const;
};

/// u_eps and div u_eps tabulated on a fine x-table at `nt` time levels and
/// evaluated by cubic Hermite interpolation (u with u', u' with u'').
struct MollifiedVelocity {
    VelocityField base;
    double eps = 0.0;
    double x0 = 0.0;
    double h = 1.0;
    std::vector<double> times;
    std::vector<std::vector<double>> u_tab, du_tab, d2u_tab;
    double sup_u = 0.0;
    double sup_div = 0.0;
    double sup_neg_div = 0.0;
    std::vector<std::string> warnings;

    double u(double t, double x) const;
    double div(double t, double x) const;
    /// d/dx of div u_eps.
    double div_derivative(double t, double x) const;
    /// sup |grad u_eps|; in one dimension this is sup |div u_eps|.
    double sup_grad() const { return sup_div; }
    std::size_t table_size() const { return u_tab.empty() ? 0 : u_tab.front().size(); }

private:
    double eval(const std::vector<std::vector<double>>& value,
                const std::vector<std::vector<double>>& slope, double t, double x, int which) const;
};

struct MollifyOptions {
    std::size_t quadrature_points = 128;  // midpoint nodes across (-eps, eps)
    std::size_t time_points = 8;          // midpoint nodes across the time window
    double table_spacing = 0.0;           // 0: min(grid.dx, eps / 16)
};

/// u_eps(t, x) = average over [max(t - eps, 0), t + eps] of (u(s) * eta_eps)(x);
/// div u_eps = u * eta_eps' (equal to div u * eta_eps after integration by parts).
MollifiedVelocity mollify_velocity(const VelocityField& u, double eps, const Grid& grid,
                                   std::size_t nt, double T, const MollifyOptions& options = {});

enum class FluxKind { degenerate_plateau, bounded_smooth, zero };

struct FluxCertificate {
    double sup_b2 = 0.0;
    double inf_b2_beyond_v0 = 0.0;
    bool upper_ok = false;
    bool lower_ok = false;
};

/// b(v) = B'(v) with its ellipticity data.
struct NoiseFlux {
    FluxKind kind = FluxKind::zero;
    double lambda = 0.0;
    double Lambda = 0.0;
    /// Smallest |v| from which b^2 >= lambda / 2 (infinite for the zero flux).
    double v0 = std::numeric_limits<double>::infinity();
    /// Set for the b = 0 control, which deliberately violates asymptotic ellipticity.
    bool hypothesis_violating = false;

    double operator()(double v) const {
        switch (kind) {
            case FluxKind::degenerate_plateau: {
                const double v2 = v * v;
                return sqrt_lambda_ * (v2 < 1.0 ? v2 : 1.0);
            }
            case FluxKind::bounded_smooth: return sqrt_lambda_;
            case FluxKind::zero: return 0.0;
        }
        return 0.0;
    }
    double derivative(double v) const;
    double squared(double v) const {
        const double b = (*this)(v);
        return b * b;
    }
    /// Checks sup b^2 <= Lambda and b^2 >= lambda/2 beyond v0 on `n` points of [-v_range, v_range].
    FluxCertificate certify(std::size_t n = 10000, double v_range = 8.0) const;

    double sqrt_lambda_ = 0.0;
};

NoiseFlux noise_flux(FluxKind kind, double lambda, double Lambda);

const char* to_string(FluxKind kind);
const char* to_string(FieldKind kind);

}  // namespace kinetic_noise
