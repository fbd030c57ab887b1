#include "kinetic_noise/fields.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <sstream>

#include "kinetic_noise/error.hpp"
#include "kinetic_noise/smooth.hpp"

namespace kinetic_noise {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double negative_part(double g) { return g < 0.0 ? -g : 0.0; }

}  // namespace

const char* to_string(FluxKind kind) {
    switch (kind) {
        case FluxKind::degenerate_plateau: return "degenerate-plateau";
        case FluxKind::bounded_smooth: return "bounded-smooth";
        case FluxKind::zero: return "zero";
    }
    return "unknown";
}

const char* to_string(FieldKind kind) {
    switch (kind) {
        case FieldKind::power_law: return "analytic-power-law";
        case FieldKind::sampled: return "piecewise-sampled";
        case FieldKind::zero: return "zero";
        case FieldKind::constant_div: return "constant-div";
    }
    return "unknown";
}

VelocityField zero_field() {
    VelocityField f;
    f.kind = FieldKind::zero;
    f.description = "zero";
    f.support_radius = 0.0;
    f.sup_u = 0.0;
    f.u = [](double, double) { return 0.0; };
    f.div = [](double, double) { return 0.0; };
    return f;
}

VelocityField constant_div_field(double c, double u0) {
    VelocityField f;
    f.kind = FieldKind::constant_div;
    std::ostringstream os;
    os << "constant-div c=" << c << " u0=" << u0;
    f.description = os.str();
    f.support_radius = kInf;
    f.sup_u = c == 0.0 ? std::abs(u0) : kInf;
    f.u = [c, u0](double, double x) { return u0 + c * x; };
    f.div = [c](double, double) { return c; };
    return f;
}

VelocityField power_law_field(double alpha, double R, double cutoff_width) {
    PowerLawParams p;
    p.alpha = alpha;
    p.R = R;
    p.cutoff_width = cutoff_width;
    return power_law_field(p);
}

VelocityField power_law_field(const PowerLawParams& p) {
    if (!(p.alpha > 0.0 && p.alpha < 1.0)) {
        throw Error(ErrorKind::invalid_argument, "power-law exponent alpha must lie in (0, 1)");
    }
    if (!(p.cutoff_width > 0.0 && p.R > p.cutoff_width)) {
        throw Error(ErrorKind::invalid_argument, "power-law field needs R > cutoff_width > 0");
    }
    if (!(p.amplitude > 0.0)) throw Error(ErrorKind::invalid_argument, "amplitude must be positive");

    const double o = p.orientation == Orientation::expanding ? 1.0 : -1.0;
    const double scale = o * p.amplitude;
    const double alpha = p.alpha, R = p.R, lo = p.R - p.cutoff_width;

    VelocityField f;
    f.kind = FieldKind::power_law;
    std::ostringstream os;
    os << "power-law alpha=" << alpha << " R=" << R << " cutoff_width=" << p.cutoff_width
       << (o > 0 ? " expanding" : " concentrating") << " amplitude=" << p.amplitude;
    f.description = os.str();
    f.support_radius = R;
    f.u = [=](double, double x) {
        const double r = std::abs(x);
        if (r >= R || r == 0.0) return 0.0;
        const double z = smooth::fall(r, lo, R).value;
        return (x < 0.0 ? -scale : scale) * std::pow(r, alpha) * z;
    };
    f.div = [=](double, double x) {
        const double r = std::abs(x);
        if (r >= R) return 0.0;
        if (r == 0.0) return scale * kInf;
        const smooth::Jet z = smooth::fall(r, lo, R);
        return scale * (alpha * std::pow(r, alpha - 1.0) * z.value + std::pow(r, alpha) * z.d1);
    };

    // Locate sup |u| on the cutoff layer: coarse scan, then golden-section refinement.
    auto g = [&](double r) { return std::pow(r, alpha) * smooth::fall(r, lo, R).value; };
    const int n = 2000;
    int best = 0;
    double best_val = g(lo);
    for (int k = 0; k <= n; ++k) {
        const double v = g(lo + (R - lo) * k / n);
        if (v > best_val) best_val = v, best = k;
    }
    double a = lo + (R - lo) * std::max(0, best - 1) / n;
    double b = lo + (R - lo) * std::min(n, best + 1) / n;
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 80; ++it) {
        const double c = b - phi * (b - a), d = a + phi * (b - a);
        if (g(c) > g(d)) b = d; else a = c;
    }
    best_val = std::max(best_val, g(0.5 * (a + b)));
    f.sup_u = p.amplitude * best_val;
    return f;
}

VelocityField sampled_field(const std::vector<VelocitySample>& samples) {
    if (samples.empty()) throw Error(ErrorKind::invalid_argument, "sampled field needs samples");
    std::vector<double> ts, xs;
    for (const auto& s : samples) {
        ts.push_back(s.t);
        xs.push_back(s.x);
    }
    auto unique_sorted = [](std::vector<double>& v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    unique_sorted(ts);
    unique_sorted(xs);
    if (xs.size() < 2) throw Error(ErrorKind::invalid_argument, "sampled field needs two x nodes");
    const std::size_t nt = ts.size(), nx = xs.size();
    if (samples.size() != nt * nx) {
        throw Error(ErrorKind::invalid_argument, "samples must form a full tensor (t, x) grid");
    }
    std::vector<double> U(nt * nx, std::nan("")), D(nt * nx, std::nan(""));
    double sup = 0.0;
    for (const auto& s : samples) {
        const std::size_t a = std::lower_bound(ts.begin(), ts.end(), s.t) - ts.begin();
        const std::size_t b = std::lower_bound(xs.begin(), xs.end(), s.x) - xs.begin();
        U[a * nx + b] = s.u;
        D[a * nx + b] = s.divu;
        sup = std::max(sup, std::abs(s.u));
    }
    for (double v : U) {
        if (std::isnan(v)) throw Error(ErrorKind::invalid_argument, "duplicate (t, x) sample");
    }

    struct Table {
        std::vector<double> ts, xs, U, D;
        double interp(const std::vector<double>& A, double t, double x) const {
            if (x < xs.front() || x > xs.back()) return 0.0;
            const std::size_t nx = xs.size();
            std::size_t b = std::upper_bound(xs.begin(), xs.end(), x) - xs.begin();
            b = std::clamp<std::size_t>(b, 1, nx - 1);
            const double sx = (x - xs[b - 1]) / (xs[b] - xs[b - 1]);
            auto row = [&](std::size_t a) {
                return (1.0 - sx) * A[a * nx + b - 1] + sx * A[a * nx + b];
            };
            if (ts.size() == 1 || t <= ts.front()) return row(0);
            if (t >= ts.back()) return row(ts.size() - 1);
            const std::size_t a = std::upper_bound(ts.begin(), ts.end(), t) - ts.begin();
            const double st = (t - ts[a - 1]) / (ts[a] - ts[a - 1]);
            return (1.0 - st) * row(a - 1) + st * row(a);
        }
    };
    auto table = std::make_shared<Table>(Table{ts, xs, std::move(U), std::move(D)});

    VelocityField f;
    f.kind = FieldKind::sampled;
    std::ostringstream os;
    os << "sampled " << nt << "x" << nx;
    f.description = os.str();
    f.support_radius = std::max(std::abs(xs.front()), std::abs(xs.back()));
    f.autonomous = nt == 1;
    f.sup_u = sup;
    f.u = [table](double t, double x) { return table->interp(table->U, t, x); };
    f.div = [table](double t, double x) { return table->interp(table->D, t, x); };
    return f;
}

double div_norm_fixed(const VelocityField& u, double q, double r_in, double r_out, double T,
                      std::size_t n, DivPart part) {
    if (!(q > 0.0)) throw Error(ErrorKind::invalid_argument, "exponent must be positive");
    if (!(r_in >= 0.0 && r_out > r_in)) throw Error(ErrorKind::invalid_argument, "need 0 <= r_in < r_out");
    if (!(T > 0.0)) throw Error(ErrorKind::invalid_argument, "T must be positive");
    constexpr double m = 8.0;  // grading exponent towards r_in
    const double L = r_out - r_in;
    auto slab = [&](double t) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double sk = (static_cast<double>(k) + 0.5) / static_cast<double>(n);
            const double x = r_in + L * std::pow(sk, m);
            const double jac = m * L * std::pow(sk, m - 1.0);
            double g1 = u.div(t, x), g2 = u.div(t, -x);
            if (part == DivPart::negative) {
                g1 = negative_part(g1);
                g2 = negative_part(g2);
            } else {
                g1 = std::abs(g1);
                g2 = std::abs(g2);
            }
            s += (std::pow(g1, q) + std::pow(g2, q)) * jac;
        }
        return s / static_cast<double>(n);
    };
    double integral = 0.0;
    if (u.autonomous) {
        integral = T * slab(0.0);
    } else {
        const std::size_t nt = 64;
        for (std::size_t l = 0; l < nt; ++l) integral += slab(T * (l + 0.5) / nt);
        integral *= T / static_cast<double>(nt);
    }
    return std::pow(integral, 1.0 / q);
}

double div_norm(const VelocityField& u, double q, double r_in, double r_out, double T, DivPart part) {
    std::size_t n = 256;
    double prev = div_norm_fixed(u, q, r_in, r_out, T, n, part);
    for (int level = 0; level < 12; ++level) {
        n *= 2;
        const double cur = div_norm_fixed(u, q, r_in, r_out, T, n, part);
        if (std::isfinite(cur) && std::abs(cur - prev) <= 1e-4 * std::abs(cur)) return cur;
        if (cur == 0.0 && prev == 0.0) return 0.0;
        prev = cur;
    }
    std::ostringstream os;
    os << "L^" << q << " norm of div u on (" << r_in << ", " << r_out
       << ") did not converge after 12 refinements";
    throw Error(ErrorKind::non_convergence, os.str());
}

double lq_norm_negative_div(const VelocityField& u, double q, double r_in, double r_out, double T) {
    if (!(q > 3.0)) throw Error(ErrorKind::invalid_argument, "sub-criticality needs q > d + 2 = 3");
    return div_norm(u, q, r_in, r_out, T, DivPart::negative);
}

AnnulusNormTable::AnnulusNormTable(const VelocityField& u, double q, double r_in, double r_max,
                                   double T, std::size_t n, DivPart part)
    : q_(q), r_in_(r_in), length_(r_max - r_in), cum_(n + 1, 0.0) {
    if (!(q > 0.0) || !(r_in >= 0.0) || !(r_max > r_in) || !(T > 0.0) || n < 2) {
        throw Error(ErrorKind::invalid_argument, "bad annulus table parameters");
    }
    constexpr double m = 8.0;
    const std::size_t nt = u.autonomous ? 1 : 64;
    auto x_of = [&](double s) { return r_in + length_ * std::pow(s, m); };
    for (std::size_t k = 0; k < n; ++k) {
        const double a = x_of(static_cast<double>(k) / n), b = x_of(static_cast<double>(k + 1) / n);
        const double x = x_of((static_cast<double>(k) + 0.5) / n);
        double s = 0.0;
        for (std::size_t l = 0; l < nt; ++l) {
            const double t = u.autonomous ? 0.0 : T * (l + 0.5) / nt;
            double g1 = u.div(t, x), g2 = u.div(t, -x);
            g1 = part == DivPart::negative ? negative_part(g1) : std::abs(g1);
            g2 = part == DivPart::negative ? negative_part(g2) : std::abs(g2);
            s += std::pow(g1, q) + std::pow(g2, q);
        }
        cum_[k + 1] = cum_[k] + s * (b - a) * T / static_cast<double>(nt);
    }
    if (!std::isfinite(cum_.back())) {
        throw Error(ErrorKind::non_convergence, "annulus norm is infinite on the table");
    }
}

double AnnulusNormTable::cumulative(double r) const {
    if (r <= r_in_) return 0.0;
    if (r >= r_in_ + length_) return cum_.back();
    const double n = static_cast<double>(cum_.size() - 1);
    const double s = std::pow((r - r_in_) / length_, 1.0 / 8.0) * n;
    const std::size_t k = std::min(static_cast<std::size_t>(s), cum_.size() - 2);
    // linear in x inside a cell keeps the map continuous and monotone
    auto x_of = [&](double t) { return r_in_ + length_ * std::pow(t / n, 8.0); };
    const double a = x_of(static_cast<double>(k)), b = x_of(static_cast<double>(k + 1));
    const double frac = b > a ? std::clamp((r - a) / (b - a), 0.0, 1.0) : 0.0;
    return cum_[k] + frac * (cum_[k + 1] - cum_[k]);
}

double AnnulusNormTable::norm(double a, double b) const {
    return std::pow(std::max(0.0, cumulative(b) - cumulative(a)), 1.0 / q_);
}

Mollifier::Mollifier(double e) : eps(e) {
    if (!(eps > 0.0)) throw Error(ErrorKind::invalid_argument, "mollifier width must be positive");
    const int n = 4096;
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += smooth::bump(-1.0 + (k + 0.5) * 2.0 / n).value;
    normalisation = 1.0 / (s * 2.0 / n);
}

double Mollifier::operator()(double z) const {
    return normalisation / eps * smooth::bump(z / eps).value;
}

double Mollifier::derivative(double z) const {
    return normalisation / (eps * eps) * smooth::bump(z / eps).d1;
}

double Mollifier::second_derivative(double z) const {
    return normalisation / (eps * eps * eps) * smooth::bump(z / eps).d2;
}

double MollifiedVelocity::eval(const std::vector<std::vector<double>>& value,
                               const std::vector<std::vector<double>>& slope, double t, double x,
                               int which) const {
    const std::size_t n = value.front().size();
    auto at_level = [&](std::size_t l) -> double {
        const double pos = (x - x0) / h;
        const double last = static_cast<double>(n - 1);
        if (pos < 0.0 || pos > last) {
            if (base.compact()) return 0.0;
            // linear extrapolation of u; div and div' frozen at the end value
            const std::size_t e = pos < 0.0 ? 0 : n - 1;
            const double dxe = x - (x0 + h * static_cast<double>(e));
            if (which == 0) return value[l][e] + slope[l][e] * dxe;
            if (which == 1) return value[l][e];
            return 0.0;
        }
        std::size_t k = static_cast<std::size_t>(pos);
        if (k >= n - 1) k = n - 2;
        const double s = pos - static_cast<double>(k);
        const double p0 = value[l][k], p1 = value[l][k + 1];
        const double m0 = slope[l][k] * h, m1 = slope[l][k + 1] * h;
        if (which == 2) {
            // derivative of the Hermite interpolant
            const double s2 = s * s;
            const double d = (6.0 * s2 - 6.0 * s) * p0 + (3.0 * s2 - 4.0 * s + 1.0) * m0 +
                             (-6.0 * s2 + 6.0 * s) * p1 + (3.0 * s2 - 2.0 * s) * m1;
            return d / h;
        }
        const double s2 = s * s, s3 = s2 * s;
        return (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * m0 +
               (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * m1;
    };
    if (times.size() == 1 || t <= times.front()) return at_level(0);
    if (t >= times.back()) return at_level(times.size() - 1);
    const std::size_t a = std::upper_bound(times.begin(), times.end(), t) - times.begin();
    const double st = (t - times[a - 1]) / (times[a] - times[a - 1]);
    return (1.0 - st) * at_level(a - 1) + st * at_level(a);
}

double MollifiedVelocity::u(double t, double x) const { return eval(u_tab, du_tab, t, x, 0); }

double MollifiedVelocity::div(double t, double x) const {
    return eval(du_tab, d2u_tab, t, x, 1);
}

double MollifiedVelocity::div_derivative(double t, double x) const {
    return eval(du_tab, d2u_tab, t, x, 2);
}

MollifiedVelocity mollify_velocity(const VelocityField& u, double eps, const Grid& grid,
                                   std::size_t nt, double T, const MollifyOptions& options) {
    if (!(eps > 0.0)) throw Error(ErrorKind::invalid_argument, "eps must be positive");
    if (options.quadrature_points < 8) throw Error(ErrorKind::invalid_argument, "too few quadrature points");
    MollifiedVelocity out;
    out.base = u;
    out.eps = eps;
    if (eps < 2.0 * grid.dx()) {
        std::ostringstream os;
        os << "under-resolved mollifier: eps = " << eps << " < 2 dx = " << 2.0 * grid.dx();
        out.warnings.push_back(os.str());
    }

    // Discrete kernels. Weights are rescaled so that constants, affine and
    // quadratic functions are reproduced exactly by the three kernels.
    const std::size_t M = options.quadrature_points;
    const Mollifier eta(eps);
    const double dz = 2.0 * eps / static_cast<double>(M);
    std::vector<double> z(M), w0(M), w1(M), w2(M);
    double s0 = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < M; ++k) {
        z[k] = -eps + (static_cast<double>(k) + 0.5) * dz;
        w0[k] = eta(z[k]) * dz;
        w1[k] = eta.derivative(z[k]) * dz;
        w2[k] = eta.second_derivative(z[k]) * dz;
        s0 += w0[k];
        m2 += w2[k];
    }
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t k = 0; k < M; ++k) {
        w0[k] /= s0;
        w2[k] -= m2 * w0[k];
        s1 += -w1[k] * z[k];
        s2 += 0.5 * w2[k] * z[k] * z[k];
    }
    for (std::size_t k = 0; k < M; ++k) {
        w1[k] /= s1;
        w2[k] /= s2;
    }

    double a, b;
    if (u.compact()) {
        a = -(u.support_radius + eps);
        b = u.support_radius + eps;
    } else {
        const double margin = 0.25 * (grid.x_max - grid.x_min);
        a = grid.x_min - margin;
        b = grid.x_max + margin;
    }
    const double h_target = options.table_spacing > 0.0 ? options.table_spacing
                                                        : std::min(grid.dx(), eps / 16.0);
    const std::size_t n = std::max<std::size_t>(
        4, static_cast<std::size_t>(std::ceil((b - a) / h_target)) + 1);
    out.x0 = a;
    out.h = (b - a) / static_cast<double>(n - 1);

    const std::size_t levels = u.autonomous ? 1 : std::max<std::size_t>(nt, 2);
    out.times.resize(levels);
    for (std::size_t l = 0; l < levels; ++l) {
        out.times[l] = levels == 1 ? 0.0 : T * static_cast<double>(l) / static_cast<double>(levels - 1);
    }
    out.u_tab.assign(levels, std::vector<double>(n, 0.0));
    out.du_tab = out.u_tab;
    out.d2u_tab = out.u_tab;

    const std::size_t K = options.time_points;
    for (std::size_t l = 0; l < levels; ++l) {
        std::vector<double> samples;
        if (u.autonomous) {
            samples.push_back(0.0);
        } else {
            const double lo = std::max(out.times[l] - eps, 0.0), hi = out.times[l] + eps;
            for (std::size_t r = 0; r < K; ++r) samples.push_back(lo + (hi - lo) * (r + 0.5) / K);
        }
        const double inv = 1.0 / static_cast<double>(samples.size());
        for (std::size_t i = 0; i < n; ++i) {
            const double x = a + out.h * static_cast<double>(i);
            double c0 = 0.0, c1 = 0.0, c2 = 0.0;
            for (double s : samples) {
                for (std::size_t k = 0; k < M; ++k) {
                    const double val = u.u(s, x - z[k]);
                    c0 += w0[k] * val;
                    c1 += w1[k] * val;
                    c2 += w2[k] * val;
                }
            }
            out.u_tab[l][i] = c0 * inv;
            out.du_tab[l][i] = c1 * inv;
            out.d2u_tab[l][i] = c2 * inv;
        }
    }
    if (u.compact()) {
        for (std::size_t l = 0; l < levels; ++l) {
            out.u_tab[l].front() = out.u_tab[l].back() = 0.0;
            out.du_tab[l].front() = out.du_tab[l].back() = 0.0;
            out.d2u_tab[l].front() = out.d2u_tab[l].back() = 0.0;
        }
    }
    for (std::size_t l = 0; l < levels; ++l) {
        for (std::size_t i = 0; i < n; ++i) {
            out.sup_u = std::max(out.sup_u, std::abs(out.u_tab[l][i]));
            out.sup_div = std::max(out.sup_div, std::abs(out.du_tab[l][i]));
            out.sup_neg_div = std::max(out.sup_neg_div, negative_part(out.du_tab[l][i]));
        }
    }
    return out;
}

double NoiseFlux::derivative(double v) const {
    switch (kind) {
        case FluxKind::degenerate_plateau: return std::abs(v) < 1.0 ? 2.0 * sqrt_lambda_ * v : 0.0;
        case FluxKind::bounded_smooth: return 0.0;
        case FluxKind::zero: return 0.0;
    }
    return 0.0;
}

FluxCertificate NoiseFlux::certify(std::size_t n, double v_range) const {
    FluxCertificate c;
    c.inf_b2_beyond_v0 = kInf;
    for (std::size_t k = 0; k < n; ++k) {
        const double v = -v_range + 2.0 * v_range * static_cast<double>(k) / static_cast<double>(n - 1);
        const double b2 = squared(v);
        c.sup_b2 = std::max(c.sup_b2, b2);
        if (std::abs(v) >= v0) c.inf_b2_beyond_v0 = std::min(c.inf_b2_beyond_v0, b2);
    }
    c.upper_ok = c.sup_b2 <= Lambda + 1e-12;
    c.lower_ok = !hypothesis_violating && c.inf_b2_beyond_v0 >= 0.5 * lambda - 1e-12;
    return c;
}

NoiseFlux noise_flux(FluxKind kind, double lambda, double Lambda) {
    NoiseFlux f;
    f.kind = kind;
    f.lambda = lambda;
    f.Lambda = Lambda;
    if (kind == FluxKind::zero) {
        f.hypothesis_violating = true;
        f.v0 = kInf;
        return f;
    }
    if (!(lambda > 0.0) || !(Lambda >= lambda)) {
        throw Error(ErrorKind::invalid_argument, "noise flux needs 0 < lambda <= Lambda");
    }
    f.sqrt_lambda_ = std::sqrt(lambda);

    // v0: smallest |v| beyond which inf b^2 >= lambda / 2. Tabulate, take the
    // running tail infimum over +-v, then bisect inside the bracketing cell.
    const double target = 0.5 * lambda;
    const std::size_t n = 10000;
    const double vmax = 8.0;
    auto b2 = [&](double v) { return std::min(f.squared(v), f.squared(-v)); };
    std::vector<double> tail(n + 1);
    double running = kInf;
    for (std::size_t k = n + 1; k-- > 0;) {
        running = std::min(running, b2(vmax * static_cast<double>(k) / n));
        tail[k] = running;
    }
    if (tail[n] < target) {
        throw Error(ErrorKind::invalid_argument, "flux never reaches lambda / 2 on the tabulation");
    }
    std::size_t k = 0;
    while (tail[k] < target) ++k;
    if (k == 0) {
        f.v0 = 0.0;
        return f;
    }
    double lo = vmax * static_cast<double>(k - 1) / n, hi = vmax * static_cast<double>(k) / n;
    for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (b2(mid) >= target) hi = mid; else lo = mid;
    }
    f.v0 = hi;
    return f;
}

}  // namespace kinetic_noise
