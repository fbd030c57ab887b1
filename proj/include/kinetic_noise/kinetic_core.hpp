#pragma once

// Kinetic representation of a density: the Maxwellian profile chi(rho, v),
// its exact cell-average projection onto a phase-space grid, velocity moments
// and the BGK defect measure.
//
// Layout: phase-space arrays are row-major with the x index outer, i.e. cell
// (i, j) lives at i * nv + j.

#include <cstddef>
#include <span>
#include <vector>

namespace kinetic_noise {

/// Tensor grid on [x_min, x_max] x [-v_max, v_max], cell-centred.
///
/// nv must be even so that v = 0 is a cell edge; no v-cell straddles zero and
/// the sign of every cell is well defined. When dv is a power of two the
/// Maxwellian projection and the density reconstruction are bit-exact
/// inverses of each other.
struct Grid {
    double x_min = -1.0;
    double x_max = 1.0;
    std::size_t nx = 2;
    double v_max = 1.0;
    std::size_t nv = 2;

    Grid() = default;
    Grid(double x_min, double x_max, std::size_t nx, double v_max, std::size_t nv);

    double dx() const { return (x_max - x_min) / static_cast<double>(nx); }
    double dv() const { return 2.0 * v_max / static_cast<double>(nv); }
    double x(std::size_t i) const { return x_min + (static_cast<double>(i) + 0.5) * dx(); }
    double v(std::size_t j) const { return -v_max + (static_cast<double>(j) + 0.5) * dv(); }
    /// Lower edge of v-cell j.
    double v_edge(std::size_t j) const { return -v_max + static_cast<double>(j) * dv(); }
    std::size_t size() const { return nx * nv; }
    std::size_t index(std::size_t i, std::size_t j) const { return i * nv + j; }
    /// First v-index with v_j > 0.
    std::size_t v_zero() const { return nv / 2; }
    bool same_as(const Grid& other) const;
    /// dx and dv are exact powers of two.
    bool is_dyadic() const;
};

/// Cell averages of f(t, x, v).
struct KineticField {
    Grid grid;
    double time = 0.0;
    std::vector<double> values;

    KineticField() = default;
    explicit KineticField(const Grid& g, double t = 0.0)
        : grid(g), time(t), values(g.size(), 0.0) {}

    double& at(std::size_t i, std::size_t j) { return values[grid.index(i, j)]; }
    double at(std::size_t i, std::size_t j) const { return values[grid.index(i, j)]; }
    std::span<double> column(std::size_t i) { return {values.data() + i * grid.nv, grid.nv}; }
    std::span<const double> column(std::size_t i) const {
        return {values.data() + i * grid.nv, grid.nv};
    }
};

/// rho_i on the x-cells of a grid.
struct DensityField {
    Grid grid;
    std::vector<double> values;

    DensityField() = default;
    explicit DensityField(const Grid& g) : grid(g), values(g.nx, 0.0) {}
    DensityField(const Grid& g, std::vector<double> v);

    double sup_norm() const;
    double l1_norm() const;
    double l2_norm_squared() const;
    double mass() const;
};

/// Density of the defect measure m with respect to dt dx dv. m[i, j] is the
/// cumulative v-integral up to the upper edge of cell j.
struct KineticMeasureField {
    Grid grid;
    std::vector<double> values;

    KineticMeasureField() = default;
    explicit KineticMeasureField(const Grid& g) : grid(g), values(g.size(), 0.0) {}
    double at(std::size_t i, std::size_t j) const { return values[grid.index(i, j)]; }
};

struct DefectMeasure {
    KineticMeasureField measure;
    /// Smallest entry; negative values beyond rounding signal a sign-property breach.
    double min_entry = 0.0;
    bool violation = false;
};

/// Pointwise Maxwellian: 1 on [0, rho), -1 on [rho, 0), 0 elsewhere.
double maxwellian(double rho, double v);

/// Average of chi(rho, .) over the velocity interval [a, b], a < b.
double maxwellian_cell_average(double rho, double a, double b);

/// Writes the cell averages of chi(rho, .) into one v-column.
void project_maxwellian_column(double rho, const Grid& grid, std::span<double> column);

/// Exact cell-average projection of chi(rho). Throws domain_too_small when
/// max|rho_i| exceeds v_max.
KineticField project_maxwellian(const DensityField& rho, const Grid& grid);

/// Velocity integral of one column, summed outward from v = 0 on each half
/// so that projected Maxwellians reproduce rho exactly on dyadic grids.
double column_density(std::span<const double> column, double dv);

DensityField density(const KineticField& f);

/// m = eps^-1 * cumulative v-integral of (chi(rho) - f) with rho = density(f).
DefectMeasure bgk_defect_measure(const KineticField& f, double eps);

/// sum |v_j|^p |f_ij| dx dv.
double lp_moment(const KineticField& f, double p);

double l1_distance(const KineticField& a, const KineticField& b);
double l1_distance(const DensityField& a, const DensityField& b);

/// sum (|f| - f^2) dx dv; zero exactly on pure Maxwellians.
double renormalization_defect(const KineticField& f);

/// Largest violation of sign(v) f in [0, 1] over all cells.
double sign_property_violation(const KineticField& f);

/// sum |f| dx dv over cells with |v_j| > bound.
double mass_beyond(const KineticField& f, double bound);

}  // namespace kinetic_noise
