#include "kinetic_noise/kinetic_core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kinetic_noise/error.hpp"

namespace kinetic_noise {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid-argument";
        case ErrorKind::domain_too_small: return "domain-too-small";
        case ErrorKind::step_too_large: return "step-too-large";
        case ErrorKind::cfl_violation: return "cfl-violation";
        case ErrorKind::non_convergence: return "non-convergence";
        case ErrorKind::invariant_violation: return "invariant-violation";
        case ErrorKind::grid_mismatch: return "grid-mismatch";
        case ErrorKind::config: return "config";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

namespace {

bool is_power_of_two(double h) {
    if (!(h > 0.0) || !std::isfinite(h)) return false;
    int exponent = 0;
    return std::frexp(h, &exponent) == 0.5;
}

}  // namespace

Grid::Grid(double x_min_, double x_max_, std::size_t nx_, double v_max_, std::size_t nv_)
    : x_min(x_min_), x_max(x_max_), nx(nx_), v_max(v_max_), nv(nv_) {
    if (nx < 2 || nv < 2) {
        throw Error(ErrorKind::invalid_argument, "grid needs nx >= 2 and nv >= 2");
    }
    if (nv % 2 != 0) {
        throw Error(ErrorKind::invalid_argument, "nv must be even so that v = 0 is a cell edge");
    }
    if (!(x_max > x_min) || !(v_max > 0.0)) {
        throw Error(ErrorKind::invalid_argument, "grid extents must be positive");
    }
}

bool Grid::same_as(const Grid& o) const {
    return x_min == o.x_min && x_max == o.x_max && nx == o.nx && v_max == o.v_max && nv == o.nv;
}

bool Grid::is_dyadic() const { return is_power_of_two(dx()) && is_power_of_two(dv()); }

DensityField::DensityField(const Grid& g, std::vector<double> v) : grid(g), values(std::move(v)) {
    if (values.size() != g.nx) {
        throw Error(ErrorKind::grid_mismatch, "density size does not match grid.nx");
    }
}

double DensityField::sup_norm() const {
    double s = 0.0;
    for (double r : values) s = std::max(s, std::abs(r));
    return s;
}

double DensityField::l1_norm() const {
    double s = 0.0;
    for (double r : values) s += std::abs(r);
    return s * grid.dx();
}

double DensityField::l2_norm_squared() const {
    double s = 0.0;
    for (double r : values) s += r * r;
    return s * grid.dx();
}

double DensityField::mass() const {
    double s = 0.0;
    for (double r : values) s += r;
    return s * grid.dx();
}

double maxwellian(double rho, double v) {
    if (v >= 0.0 && v < rho) return 1.0;
    if (v < 0.0 && v >= rho) return -1.0;
    return 0.0;
}

double maxwellian_cell_average(double rho, double a, double b) {
    if (rho > 0.0) {
        const double overlap = std::min(b, rho) - std::max(a, 0.0);
        return overlap > 0.0 ? overlap / (b - a) : 0.0;
    }
    if (rho < 0.0) {
        const double overlap = std::min(b, 0.0) - std::max(a, rho);
        return overlap > 0.0 ? -overlap / (b - a) : 0.0;
    }
    return 0.0;
}

void project_maxwellian_column(double rho, const Grid& grid, std::span<double> column) {
    const std::size_t nv = grid.nv;
    const std::size_t h = grid.v_zero();
    std::fill(column.begin(), column.end(), 0.0);
    if (rho > 0.0) {
        for (std::size_t j = h; j < nv; ++j) {
            const double a = grid.v_edge(j);
            if (a >= rho) break;
            column[j] = maxwellian_cell_average(rho, a, grid.v_edge(j + 1));
        }
    } else if (rho < 0.0) {
        for (std::size_t j = h; j-- > 0;) {
            const double b = grid.v_edge(j + 1);
            if (b <= rho) break;
            column[j] = maxwellian_cell_average(rho, grid.v_edge(j), b);
        }
    }
}

KineticField project_maxwellian(const DensityField& rho, const Grid& grid) {
    if (rho.values.size() != grid.nx) {
        throw Error(ErrorKind::grid_mismatch, "density and grid disagree on nx");
    }
    const double sup = rho.sup_norm();
    if (sup > grid.v_max) {
        std::ostringstream os;
        os << "v_max = " << grid.v_max << " is below max|rho| = " << sup;
        throw Error(ErrorKind::domain_too_small, os.str());
    }
    KineticField f(grid);
    for (std::size_t i = 0; i < grid.nx; ++i) {
        project_maxwellian_column(rho.values[i], grid, f.column(i));
    }
    return f;
}

double column_density(std::span<const double> column, double dv) {
    const std::size_t nv = column.size();
    const std::size_t h = nv / 2;
    double positive = 0.0;
    for (std::size_t j = h; j < nv; ++j) positive += column[j] * dv;
    double negative = 0.0;
    for (std::size_t j = h; j-- > 0;) negative += column[j] * dv;
    return positive + negative;
}

DensityField density(const KineticField& f) {
    DensityField rho(f.grid);
    const double dv = f.grid.dv();
    for (std::size_t i = 0; i < f.grid.nx; ++i) {
        rho.values[i] = column_density(f.column(i), dv);
    }
    return rho;
}

DefectMeasure bgk_defect_measure(const KineticField& f, double eps) {
    if (!(eps > 0.0)) throw Error(ErrorKind::invalid_argument, "eps must be positive");
    const Grid& g = f.grid;
    DefectMeasure out{KineticMeasureField(g), 0.0, false};
    std::vector<double> chi(g.nv);
    const double dv = g.dv();
    double min_entry = 0.0;
    for (std::size_t i = 0; i < g.nx; ++i) {
        const auto col = f.column(i);
        project_maxwellian_column(column_density(col, dv), g, chi);
        double cumulative = 0.0;
        for (std::size_t j = 0; j < g.nv; ++j) {
            cumulative += (chi[j] - col[j]) * dv;
            const double m = cumulative / eps;
            out.measure.values[g.index(i, j)] = m;
            min_entry = std::min(min_entry, m);
        }
    }
    out.min_entry = min_entry;
    out.violation = min_entry < -1e-6;
    return out;
}

double lp_moment(const KineticField& f, double p) {
    const Grid& g = f.grid;
    std::vector<double> weight(g.nv);
    for (std::size_t j = 0; j < g.nv; ++j) weight[j] = std::pow(std::abs(g.v(j)), p);
    double s = 0.0;
    for (std::size_t i = 0; i < g.nx; ++i) {
        const auto col = f.column(i);
        for (std::size_t j = 0; j < g.nv; ++j) s += weight[j] * std::abs(col[j]);
    }
    return s * g.dx() * g.dv();
}

double l1_distance(const KineticField& a, const KineticField& b) {
    if (!a.grid.same_as(b.grid)) throw Error(ErrorKind::grid_mismatch, "kinetic fields differ in grid");
    double s = 0.0;
    for (std::size_t k = 0; k < a.values.size(); ++k) s += std::abs(a.values[k] - b.values[k]);
    return s * a.grid.dx() * a.grid.dv();
}

double l1_distance(const DensityField& a, const DensityField& b) {
    if (a.values.size() != b.values.size()) {
        throw Error(ErrorKind::grid_mismatch, "densities differ in size");
    }
    double s = 0.0;
    for (std::size_t k = 0; k < a.values.size(); ++k) s += std::abs(a.values[k] - b.values[k]);
    return s * a.grid.dx();
}

double renormalization_defect(const KineticField& f) {
    double s = 0.0;
    for (double x : f.values) s += std::abs(x) - x * x;
    return s * f.grid.dx() * f.grid.dv();
}

double sign_property_violation(const KineticField& f) {
    const Grid& g = f.grid;
    const std::size_t h = g.v_zero();
    double worst = 0.0;
    for (std::size_t i = 0; i < g.nx; ++i) {
        const auto col = f.column(i);
        for (std::size_t j = 0; j < g.nv; ++j) {
            const double s = j >= h ? col[j] : -col[j];
            worst = std::max({worst, -s, s - 1.0});
        }
    }
    return worst;
}

double mass_beyond(const KineticField& f, double bound) {
    const Grid& g = f.grid;
    double s = 0.0;
    for (std::size_t j = 0; j < g.nv; ++j) {
        if (std::abs(g.v(j)) <= bound) continue;
        for (std::size_t i = 0; i < g.nx; ++i) s += std::abs(f.at(i, j));
    }
    return s * g.dx() * g.dv();
}

}  // namespace kinetic_noise
