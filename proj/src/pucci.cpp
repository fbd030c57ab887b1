#include "kinetic_noise/pucci.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "kinetic_noise/error.hpp"
#include "kinetic_noise/parallel.hpp"

namespace kinetic_noise {

PucciParams PucciParams::from_flux(const NoiseFlux& b, double p, double gamma, double q) {
    PucciParams r;
    r.alpha = b.lambda / 4.0;
    r.beta = b.Lambda;
    r.p = p;
    r.gamma = gamma;
    r.q = q;
    return r;
}

void PucciParams::validate() const {
    if (!(alpha > 0.0) || !(beta >= alpha)) {
        throw Error(ErrorKind::invalid_argument, "Pucci parameters need 0 < alpha <= beta");
    }
    if (!(p >= 1.0)) throw Error(ErrorKind::invalid_argument, "moment exponent p must be >= 1");
    if (!(gamma > 0.0)) throw Error(ErrorKind::invalid_argument, "gamma must be positive");
    if (!(q > 1.0)) throw Error(ErrorKind::invalid_argument, "q must exceed 1");
}

double pucci_plus(std::span<const double> eigenvalues, double alpha, double beta) {
    if (!(alpha > 0.0) || !(beta >= alpha)) {
        throw Error(ErrorKind::invalid_argument, "pucci_plus needs 0 < alpha <= beta");
    }
    double pos = 0.0, neg = 0.0;
    for (double e : eigenvalues) (e > 0.0 ? pos : neg) += e;
    return beta * pos + alpha * neg;
}

std::array<double, 2> symmetric_eigenvalues(double a11, double a12, double a22) {
    const double m = 0.5 * (a11 + a22);
    const double r = std::hypot(0.5 * (a11 - a22), a12);
    return {m - r, m + r};
}

double pucci_plus(double a11, double a12, double a22, double alpha, double beta) {
    const auto e = symmetric_eigenvalues(a11, a12, a22);
    return pucci_plus(std::span<const double>(e), alpha, beta);
}

AnnulusDecomposition annulus_decomposition(const VelocityField& u, double q, double gamma, double R,
                                           double T, std::size_t table_points) {
    if (!(gamma > 0.0)) throw Error(ErrorKind::invalid_argument, "gamma must be positive");
    if (!(R > 0.0) || !(T > 0.0)) throw Error(ErrorKind::invalid_argument, "need R > 0 and T > 0");
    const AnnulusNormTable table(u, q, 0.0, R, T, table_points, DivPart::negative);
    AnnulusDecomposition d;
    d.gamma = gamma;
    d.q = q;
    d.total_norm = table.norm(0.0, R);
    d.radii.push_back(0.0);
    const std::size_t cap = 100000;
    while (true) {
        const double a = d.radii.back();
        const double rest = table.norm(a, R);
        if (rest <= gamma) {
            d.radii.push_back(R);
            d.norms.push_back(rest);
            break;
        }
        double lo = a, hi = R;
        for (int it = 0; it < 200 && hi - lo > 1e-15 * R; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double v = table.norm(a, mid);
            if (std::abs(v - gamma) <= 1e-9 * gamma) {
                lo = hi = mid;
                break;
            }
            (v < gamma ? lo : hi) = mid;
        }
        const double b = 0.5 * (lo + hi);
        if (!(b > a)) throw Error(ErrorKind::non_convergence, "annulus bisection did not advance");
        d.radii.push_back(b);
        d.norms.push_back(table.norm(a, b));
        if (d.radii.size() > cap) throw Error(ErrorKind::non_convergence, "too many annuli");
    }
    d.N = d.radii.size() - 1;
    return d;
}

PucciSolution solve_pucci(const PucciSource& s, const PucciParams& params, double half_width,
                          double T, const PucciGridOptions& o) {
    params.validate();
    if (o.d != 1 && o.d != 2) throw Error(ErrorKind::invalid_argument, "only d = 1 and d = 2 are supported");
    if (o.n < 5) throw Error(ErrorKind::invalid_argument, "need at least 5 nodes per axis");
    if (!(half_width > 0.0) || !(T > 0.0) || !(o.t_begin <= 0.0)) {
        throw Error(ErrorKind::invalid_argument, "need half_width > 0, T > 0 and t_begin <= 0");
    }
    const std::size_t n = o.n;
    const double dx = 2.0 * half_width / static_cast<double>(n - 1);
    const double dt_max = dx * dx / (2.0 * o.d * params.beta);
    const double dt_req = o.dt > 0.0 ? o.dt : o.cfl * dt_max;
    if (dt_req > dt_max * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "dt = " << dt_req << " exceeds dx^2 / (2 d beta) = " << dt_max;
        throw Error(ErrorKind::cfl_violation, os.str());
    }
    // dt divides T so that t = T and t = 0 are time levels; the window start
    // moves back to the next multiple of dt.
    const double t_end = 2.0 * T;
    const double dt = T / std::ceil(T / dt_req - 1e-9);
    const std::size_t steps = static_cast<std::size_t>(std::ceil((t_end - o.t_begin) / dt - 1e-9));
    const double c0 = params.floor_value();
    const double inv_dx2 = 1.0 / (dx * dx);
    auto node = [&](std::size_t i) { return -half_width + static_cast<double>(i) * dx; };

    std::size_t lo = 0, hi = n - 1;
    if (o.keep_radius > 0.0) {
        while (lo < hi && node(lo) < -o.keep_radius - 1e-12 * half_width) ++lo;
        while (hi > lo && node(hi) > o.keep_radius + 1e-12 * half_width) --hi;
    }
    PucciSolution sol;
    sol.d = o.d;
    sol.x0 = node(lo);
    sol.dx = dx;
    sol.n = hi - lo + 1;
    sol.dt = dt;

    const std::size_t total = o.d == 1 ? n : n * n;
    std::vector<double> phi(total, c0), next(total, c0);
    std::vector<char> interior(total, 0);
    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i) xs[i] = node(i);
    if (o.d == 1) {
        for (std::size_t i = 1; i + 1 < n; ++i) interior[i] = 1;
    } else {
        for (std::size_t i = 1; i + 1 < n; ++i) {
            for (std::size_t j = 1; j + 1 < n; ++j) {
                interior[i * n + j] = std::hypot(xs[i], xs[j]) < half_width * (1.0 - 1e-12);
            }
        }
    }

    std::vector<std::pair<double, std::vector<double>>> stored;
    auto store = [&](double t) {
        if (t < -1e-12 || t > T + 1e-12) return;
        std::vector<double> v;
        if (o.d == 1) {
            v.assign(phi.begin() + static_cast<std::ptrdiff_t>(lo),
                     phi.begin() + static_cast<std::ptrdiff_t>(hi + 1));
        } else {
            v.reserve(sol.n * sol.n);
            for (std::size_t i = lo; i <= hi; ++i) {
                for (std::size_t j = lo; j <= hi; ++j) v.push_back(phi[i * n + j]);
            }
        }
        stored.emplace_back(std::max(t, 0.0), std::move(v));
    };

    store(t_end);
    for (std::size_t step = 0; step < steps; ++step) {
        const double t = t_end - static_cast<double>(step) * dt;
        if (o.d == 1) {
            for (std::size_t i = 1; i + 1 < n; ++i) {
                const double lam = (phi[i + 1] - 2.0 * phi[i] + phi[i - 1]) * inv_dx2;
                const double m = lam > 0.0 ? params.beta * lam : params.alpha * lam;
                next[i] = phi[i] + dt * (m + s(t, xs[i], 0.0));
            }
        } else {
            for (std::size_t i = 1; i + 1 < n; ++i) {
                for (std::size_t j = 1; j + 1 < n; ++j) {
                    const std::size_t c = i * n + j;
                    if (!interior[c]) continue;
                    const double a11 = (phi[c + n] - 2.0 * phi[c] + phi[c - n]) * inv_dx2;
                    const double a22 = (phi[c + 1] - 2.0 * phi[c] + phi[c - 1]) * inv_dx2;
                    const double a12 =
                        (phi[c + n + 1] - phi[c + n - 1] - phi[c - n + 1] + phi[c - n - 1]) * 0.25 * inv_dx2;
                    const auto e = symmetric_eigenvalues(a11, a12, a22);
                    double m = 0.0;
                    for (double lam : e) m += lam > 0.0 ? params.beta * lam : params.alpha * lam;
                    next[c] = phi[c] + dt * (m + s(t, xs[i], xs[j]));
                }
            }
        }
        std::swap(phi, next);
        store(t_end - static_cast<double>(step + 1) * dt);
    }

    std::reverse(stored.begin(), stored.end());
    sol.sup = -std::numeric_limits<double>::infinity();
    sol.min = std::numeric_limits<double>::infinity();
    for (auto& [t, v] : stored) {
        sol.times.push_back(t);
        for (double x : v) {
            sol.sup = std::max(sol.sup, x);
            sol.min = std::min(sol.min, x);
        }
        sol.phi.push_back(std::move(v));
    }
    return sol;
}

PucciSource component_source(std::size_t k, const std::vector<double>& radii,
                             const MollifiedVelocity& u_eps, double T) {
    if (k == 0) throw Error(ErrorKind::invalid_argument, "components are numbered from 1");
    if (k >= radii.size()) return [](double, double, double) { return 0.0; };
    const double lo = radii[k - 1], hi = radii[k];
    return [lo, hi, T, &u_eps](double t, double x, double y) {
        if (t < 0.0 || t > T) return 0.0;
        const double r = y == 0.0 ? std::abs(x) : std::hypot(x, y);
        if (r < lo || r >= hi) return 0.0;
        return std::max(-u_eps.div(t, y == 0.0 ? x : r), 0.0);
    };
}

PucciSolution solve_component(std::size_t k, const std::vector<double>& radii,
                              const MollifiedVelocity& u_eps, const PucciParams& params, double R,
                              double T, PucciGridOptions options) {
    if (options.keep_radius == 0.0) options.keep_radius = 3.0 * R;
    return solve_pucci(component_source(k, radii, u_eps, T), params, 4.0 * R, T, options);
}

CutoffFamily cutoff_family(const std::vector<double>& radii) {
    if (radii.size() < 2 || radii.front() != 0.0) {
        throw Error(ErrorKind::invalid_argument, "radii must start at 0 and contain R");
    }
    for (std::size_t k = 1; k < radii.size(); ++k) {
        if (!(radii[k] > radii[k - 1])) throw Error(ErrorKind::invalid_argument, "radii must increase strictly");
    }
    CutoffFamily c;
    c.R = radii.back();
    c.radii = radii;
    for (double f : {1.5, 2.0, 2.5}) c.radii.push_back(f * c.R);
    return c;
}

smooth::Jet CutoffFamily::eta(std::size_t k, double r) const {
    if (k == 0 || k > size()) throw Error(ErrorKind::invalid_argument, "cutoff index out of range");
    const auto& q = radii;
    if (k == 1) return smooth::fall(r, q[2], q[3]);
    return smooth::product(smooth::rise(r, q[k - 1], q[k]), smooth::fall(r, q[k + 1], q[k + 2]));
}

smooth::Jet CutoffFamily::hat(double r) const { return smooth::rise(r, R, 2.0 * R); }

std::array<double, 2> CutoffFamily::plateau(std::size_t k) const {
    if (k == 1) return {0.0, radii[2]};
    return {radii[k], radii[k + 1]};
}

CutoffBounds cutoff_bounds(const CutoffFamily& c, std::size_t samples) {
    CutoffBounds b;
    b.eta_d1.assign(c.size(), 0.0);
    b.eta_d2.assign(c.size(), 0.0);
    const double top = c.radii.back() * 1.2;
    for (std::size_t s = 0; s < samples; ++s) {
        const double r = top * (static_cast<double>(s) + 0.5) / static_cast<double>(samples);
        for (std::size_t k = 1; k <= c.size(); ++k) {
            const auto e = c.eta(k, r);
            b.eta_d1[k - 1] = std::max(b.eta_d1[k - 1], std::abs(e.d1));
            b.eta_d2[k - 1] = std::max(b.eta_d2[k - 1], std::abs(e.d2));
        }
        const auto h = c.hat(r);
        b.hat_d1 = std::max(b.hat_d1, std::abs(h.d1));
        b.hat_d2 = std::max(b.hat_d2, std::abs(h.d2));
    }
    return b;
}

SubSolution assemble_subsolution(const std::vector<PucciSolution>& components,
                                 const CutoffFamily& cutoffs, const MollifiedVelocity& u_eps,
                                 const NoiseFlux& flux, const PucciParams& params,
                                 const std::vector<double>& v_samples, std::size_t refine) {
    params.validate();
    if (components.size() != cutoffs.size()) {
        throw Error(ErrorKind::grid_mismatch, "one component per cutoff is required");
    }
    if (refine == 0) throw Error(ErrorKind::invalid_argument, "refine must be positive");
    const PucciSolution& ref = components.front();
    for (const auto& c : components) {
        if (c.d != 1) throw Error(ErrorKind::invalid_argument, "assembly is one-dimensional");
        if (c.n != ref.n || c.dx != ref.dx || c.x0 != ref.x0 || c.times != ref.times) {
            throw Error(ErrorKind::grid_mismatch, "components live on different grids");
        }
    }
    if (ref.times.size() < 2 || ref.n < 4) throw Error(ErrorKind::invalid_argument, "component grid too small");

    double b2_max = -1.0, b2_min = std::numeric_limits<double>::infinity();
    for (double v : v_samples) {
        if (std::abs(v) < flux.v0) continue;
        b2_max = std::max(b2_max, flux.squared(v));
        b2_min = std::min(b2_min, flux.squared(v));
    }
    if (b2_max < 0.0) throw Error(ErrorKind::invalid_argument, "no velocity sample with |v| >= v0");

    const std::size_t n = ref.n, L = ref.times.size(), K = components.size();
    const double dx = ref.dx;
    SubSolution out;
    out.x0 = ref.x0;
    out.dx = dx;
    out.n = n;
    out.times = ref.times;
    out.cutoffs = cutoffs;

    // Sample points: refine per cell on [x_1, x_{n-2}], where every node has
    // centred differences. Cutoff jets depend on x only.
    const std::size_t first = 1, cells = n - 3;
    const std::size_t m_pts = cells * refine + 1;
    const double hx = dx / static_cast<double>(refine);
    std::vector<double> xs(m_pts);
    std::vector<smooth::Jet> hat(m_pts);
    std::vector<std::vector<smooth::Jet>> eta(K, std::vector<smooth::Jet>(m_pts));
    for (std::size_t m = 0; m < m_pts; ++m) {
        const double x = ref.x(first) + static_cast<double>(m) * hx;
        xs[m] = x;
        hat[m] = smooth::radial_1d(cutoffs.hat(std::abs(x)), x);
        for (std::size_t k = 0; k < K; ++k) eta[k][m] = smooth::radial_1d(cutoffs.eta(k + 1, std::abs(x)), x);
    }

    out.phi.assign(L, std::vector<double>(n, 0.0));
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t i = 0; i < n; ++i) {
            const double x = ref.x(i);
            double v = cutoffs.hat(std::abs(x)).value;
            for (std::size_t k = 0; k < K; ++k) v += cutoffs.eta(k + 1, std::abs(x)).value * components[k].phi[l][i];
            out.phi[l][i] = v;
        }
    }

    SubSolutionCertificate& cert = out.certificate;
    cert.M_est = -std::numeric_limits<double>::infinity();
    cert.sup_norm = 0.0;
    cert.lower_bound_min = std::numeric_limits<double>::infinity();
    cert.lower_bound_target = std::min(1.0, params.floor_value());
    for (const auto& row : out.phi) {
        for (double v : row) {
            cert.sup_norm = std::max(cert.sup_norm, std::abs(v));
            cert.lower_bound_min = std::min(cert.lower_bound_min, v);
        }
    }

    // Nodal data of each component: value, d_x, d_xx, forward d_t.
    std::vector<std::vector<double>> P(K, std::vector<double>(n)), P1 = P, P2 = P, Pt = P;
    for (std::size_t l = 0; l + 1 < L; ++l) {
        const double t = ref.times[l];
        const double h = ref.times[l + 1] - t;
        for (std::size_t k = 0; k < K; ++k) {
            const auto& p = components[k].phi[l];
            const auto& pn = components[k].phi[l + 1];
            for (std::size_t i = 1; i + 1 < n; ++i) {
                P[k][i] = p[i];
                P1[k][i] = (p[i + 1] - p[i - 1]) / (2.0 * dx);
                P2[k][i] = (p[i + 1] - 2.0 * p[i] + p[i - 1]) / (dx * dx);
                Pt[k][i] = (pn[i] - p[i]) / h;
            }
        }
        for (std::size_t m = 0; m < m_pts; ++m) {
            const std::size_t c = std::min(m / refine, cells - 1);
            const double th = static_cast<double>(m - c * refine) / static_cast<double>(refine);
            const std::size_t i = first + c;
            auto lerp = [&](const std::vector<double>& a) { return (1.0 - th) * a[i] + th * a[i + 1]; };
            double v = hat[m].value, v1 = hat[m].d1, v2 = hat[m].d2, vt = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                const smooth::Jet& e = eta[k][m];
                if (e.value == 0.0 && e.d1 == 0.0 && e.d2 == 0.0) continue;
                const double p = lerp(P[k]), p1 = lerp(P1[k]), p2 = lerp(P2[k]);
                v += e.value * p;
                v1 += e.d1 * p + e.value * p1;
                v2 += e.d2 * p + 2.0 * e.d1 * p1 + e.value * p2;
                vt += e.value * lerp(Pt[k]);
            }
            const double x = xs[m];
            const double res = vt + u_eps.u(t, x) * v1 + params.p * std::max(-u_eps.div(t, x), 0.0) * v +
                               0.5 * (v2 >= 0.0 ? b2_max : b2_min) * v2;
            cert.M_est = std::max(cert.M_est, res);
            cert.lower_bound_min = std::min(cert.lower_bound_min, v);
            cert.sup_norm = std::max(cert.sup_norm, std::abs(v));
            const double w = (m == 0 || m + 1 == m_pts ? 0.5 : 1.0) * hx * h;
            cert.w21_t += std::abs(vt) * w;
            cert.w21_x += std::abs(v1) * w;
            cert.w21_xx += std::abs(v2) * w;
        }
    }
    cert.lower_bound_ok = cert.lower_bound_min >= cert.lower_bound_target - 1e-8;
    cert.radii = cutoffs.radii;
    cert.gamma = params.gamma;
    cert.N = cutoffs.size() - 1;
    if (!cert.lower_bound_ok) {
        std::ostringstream os;
        os << "min phi_eps = " << cert.lower_bound_min << " < " << cert.lower_bound_target;
        throw Error(ErrorKind::invariant_violation, os.str());
    }
    return out;
}

double pilot_constant(const PucciParams& params, double R, double T, const PucciGridOptions& grid) {
    auto source = [R, T](double t, double x, double y) {
        return t >= 0.0 && t <= T && std::hypot(x, y) < R ? 1.0 : 0.0;
    };
    PucciGridOptions g = grid;
    if (g.keep_radius == 0.0) g.keep_radius = 3.0 * R;
    const auto sol = solve_pucci(source, params, 4.0 * R, T, g);
    const double measure = g.d == 1 ? 2.0 * R : std::numbers::pi * R * R;
    return (sol.sup - params.floor_value()) / std::pow(T * measure, 1.0 / params.q);
}

SubSolutionReport build_subsolution(const VelocityField& u, const MollifiedVelocity& u_eps,
                                    const NoiseFlux& flux, double R, double T,
                                    const SubSolutionOptions& options) {
    SubSolutionReport rep;
    PucciParams params = PucciParams::from_flux(flux, options.p, 1.0, options.q);
    params.validate();
    PucciGridOptions grid = options.grid;
    grid.d = 1;
    grid.keep_radius = 3.0 * R;
    rep.C_est = pilot_constant(params, R, T, grid);
    params.gamma = options.gamma > 0.0 ? options.gamma : 1.0 / (4.0 * params.p * rep.C_est);

    std::vector<double> v_samples = options.v_samples;
    if (v_samples.empty()) {
        for (int j = 0; j < 256; ++j) v_samples.push_back(-4.0 + (j + 0.5) / 32.0);
    }
    for (std::size_t attempt = 0;; ++attempt) {
        try {
            rep.decomposition = annulus_decomposition(u, params.q, params.gamma, R, T);
            const CutoffFamily cutoffs = cutoff_family(rep.decomposition.radii);
            std::vector<PucciSolution> comps(cutoffs.size());
            parallel_for(comps.size(), options.threads, [&](std::size_t k) {
                comps[k] = solve_component(k + 1, rep.decomposition.radii, u_eps, params, R, T, grid);
            });
            rep.component_sup = 0.0;
            for (const auto& c : comps) rep.component_sup = std::max(rep.component_sup, c.sup);
            rep.solution = assemble_subsolution(comps, cutoffs, u_eps, flux, params, v_samples, options.refine);
            rep.gamma_halvings = attempt;
            break;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::invariant_violation || attempt >= options.max_halvings) throw;
            params.gamma *= 0.5;
        }
    }
    rep.params = params;
    rep.max_principle_bound = params.floor_value() + rep.C_est * params.gamma;
    rep.max_principle_ok = rep.component_sup <= rep.max_principle_bound * (1.0 + 1e-12);
    return rep;
}

}  // namespace kinetic_noise
