#include "kinetic_noise/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include "kinetic_noise/io.hpp"
#include "kinetic_noise/parallel.hpp"
#include "kinetic_noise/pucci.hpp"
#include "kinetic_noise/stochastic_flow.hpp"

namespace kinetic_noise {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct KindName {
    ExperimentKind kind;
    const char* name;
};
constexpr KindName kKinds[] = {
    {ExperimentKind::solve, "solve"},
    {ExperimentKind::sweep_eps, "sweep-eps"},
    {ExperimentKind::contraction, "contraction"},
    {ExperimentKind::subsolution, "subsolution"},
    {ExperimentKind::commutator, "commutator"},
    {ExperimentKind::concentration, "concentration"},
};

const char* flux_name(FluxKind k) { return to_string(k); }

FluxKind parse_flux(const std::string& s) {
    for (FluxKind k : {FluxKind::degenerate_plateau, FluxKind::bounded_smooth, FluxKind::zero}) {
        if (s == to_string(k)) return k;
    }
    throw Error(ErrorKind::config, "unknown flux kind '" + s + "'");
}

const char* orientation_name(Orientation o) {
    return o == Orientation::expanding ? "expanding" : "concentrating";
}

// Reads one JSON object, remembering consumed keys so leftovers can be
// reported as unknown.
class Reader {
public:
    Reader(const json& j, std::string prefix, std::vector<std::string>& errors)
        : j_(j), prefix_(std::move(prefix)), errors_(errors) {
        if (!j_.is_object()) fail("[type] " + where("") + " must be an object");
    }

    bool has(const char* key) {
        seen_.insert(key);
        return j_.is_object() && j_.contains(key);
    }

    void number(const char* key, double& dst) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number()) return fail("[type] " + where(key) + " must be a number");
        dst = v.get<double>();
        if (!std::isfinite(dst)) fail("[type] " + where(key) + " must be finite");
    }

    static bool nonnegative_integer(const json& v) {
        return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    }

    void count(const char* key, std::size_t& dst) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!nonnegative_integer(v)) return fail("[type] " + where(key) + " must be a nonnegative integer");
        dst = v.get<std::size_t>();
    }

    void seed(const char* key, std::uint64_t& dst) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!nonnegative_integer(v)) return fail("[type] " + where(key) + " must be a nonnegative integer");
        dst = v.get<std::uint64_t>();
    }

    void flag(const char* key, bool& dst) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_boolean()) return fail("[type] " + where(key) + " must be a boolean");
        dst = v.get<bool>();
    }

    void text(const char* key, std::string& dst) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_string()) return fail("[type] " + where(key) + " must be a string");
        dst = v.get<std::string>();
    }

    void numbers(const char* key, std::vector<double>& dst) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        std::vector<double> out;
        if (v.is_array()) {
            for (const auto& e : v) {
                if (!e.is_number()) return fail("[type] " + where(key) + " must be an array of numbers");
                out.push_back(e.get<double>());
            }
            dst = out;
        } else {
            fail("[type] " + where(key) + " must be an array of numbers");
        }
    }

    void counts(const char* key, std::vector<std::size_t>& dst) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        std::vector<std::size_t> out;
        if (v.is_array()) {
            for (const auto& e : v) {
                if (!nonnegative_integer(e)) return fail("[type] " + where(key) + " must be an array of integers");
                out.push_back(e.get<std::size_t>());
            }
            dst = out;
        } else {
            fail("[type] " + where(key) + " must be an array of integers");
        }
    }

    const json* object(const char* key) {
        if (!has(key)) return nullptr;
        return &j_.at(key);
    }

    void finish() {
        if (!j_.is_object()) return;
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) fail("[unknown key] " + where(item.key()));
        }
    }

    std::string where(const std::string& key) const {
        if (prefix_.empty()) return key.empty() ? "config" : key;
        return key.empty() ? prefix_ : prefix_ + "." + key;
    }

    void fail(const std::string& msg) { errors_.push_back(msg); }

private:
    const json& j_;
    std::string prefix_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

void read_density(const json* j, const std::string& prefix, DensitySpec& d, std::vector<std::string>& errors) {
    if (!j) return;
    Reader r(*j, prefix, errors);
    r.text("shape", d.shape);
    r.number("center", d.center);
    r.number("half_width", d.half_width);
    r.number("height", d.height);
    r.finish();
}

json density_json(const DensitySpec& d) {
    return {{"shape", d.shape}, {"center", d.center}, {"half_width", d.half_width}, {"height", d.height}};
}

void check_density(const DensitySpec& d, const std::string& name, std::vector<std::string>& errors) {
    static const std::set<std::string> shapes{"indicator", "bump", "gaussian", "zero"};
    if (!shapes.count(d.shape)) errors.push_back("[initial data] " + name + ".shape must be indicator, bump, gaussian or zero");
    if (!(d.half_width > 0.0)) errors.push_back("[initial data] " + name + ".half_width must be positive");
}

bool strictly_decreasing_positive(const std::vector<double>& v) {
    if (v.empty() || !(v.front() > 0.0)) return false;
    for (std::size_t k = 1; k < v.size(); ++k) {
        if (!(v[k] > 0.0 && v[k] < v[k - 1])) return false;
    }
    return true;
}

bool needs_solver(ExperimentKind k) {
    return k == ExperimentKind::solve || k == ExperimentKind::sweep_eps || k == ExperimentKind::contraction;
}

DensityField add(const DensityField& a, const DensityField& b) {
    DensityField out = a;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.values[i];
    return out;
}

// Pointwise envelope max(|a|, |b|), used for support and width checks.
DensityField envelope(const DensityField& a, const DensityField& b) {
    DensityField out = a;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        out.values[i] = std::max(std::abs(a.values[i]), std::abs(b.values[i]));
    }
    return out;
}

std::size_t mollify_levels(const VelocityField& u) { return u.autonomous ? 1 : 16; }

// Mirrors the solver constructor's checks so that all of them are reported.
void check_solver_preconditions(const ExperimentConfig& c, std::vector<std::string>& errors) {
    const Grid g = c.grid();
    const VelocityField u = make_field(c.field);
    const MollifiedVelocity ue = mollify_velocity(u, c.eps_mollify, g, mollify_levels(u), c.T);
    if (c.dt * ue.sup_grad() >= 1.0) {
        std::ostringstream os;
        os << "[invertibility guard] dt * sup|grad u_eps| = " << c.dt * ue.sup_grad()
           << " must stay below 1; reduce dt below " << 1.0 / ue.sup_grad();
        errors.push_back(os.str());
    }
    DensityField rho = make_density(c.rho0, g);
    if (c.kind == ExperimentKind::contraction) rho = envelope(rho, add(rho, make_density(c.perturbation, g)));
    const double bound = support_bound(c.T, rho.sup_norm(), ue.sup_div);
    if (c.v_max < 1.05 * bound) {
        std::ostringstream os;
        os << "[support bound] v_max = " << c.v_max << " is below 1.05 * support_bound(T) = " << 1.05 * bound;
        errors.push_back(os.str());
    }
    if (c.rho0.shape != "gaussian") {
        double r0 = 0.0;
        for (std::size_t i = 0; i < g.nx; ++i) {
            if (rho.values[i] != 0.0) r0 = std::max(r0, std::abs(g.x(i)) + 0.5 * g.dx());
        }
        if (u.compact()) r0 = std::max(r0, u.support_radius);
        double sup_u = 0.0;
        for (double t : ue.times) {
            for (std::size_t i = 0; i < g.nx; ++i) sup_u = std::max(sup_u, std::abs(ue.u(t, g.x(i))));
        }
        const NoiseFlux b = make_flux(c.flux);
        const double sigma = b.hypothesis_violating ? 0.0 : std::sqrt(b.Lambda);
        const double required = r0 + sup_u * c.T + 6.0 * sigma * std::sqrt(c.T);
        const double half = std::min(-c.x_min, c.x_max);
        if (half < required) {
            std::ostringstream os;
            os << "[domain width] x half-width " << half << " is below support + |u|T + 6 sigma sqrt(T) = " << required;
            errors.push_back(os.str());
        }
    }
}

}  // namespace

const char* to_string(ExperimentKind kind) {
    for (const auto& k : kKinds) {
        if (k.kind == kind) return k.name;
    }
    return "unknown";
}

ExperimentKind parse_experiment_kind(const std::string& name) {
    for (const auto& k : kKinds) {
        if (name == k.name) return k.kind;
    }
    throw Error(ErrorKind::config, "unknown experiment kind '" + name + "'");
}

VelocityField make_field(const FieldSpec& s) {
    if (s.kind == "zero") return zero_field();
    if (s.kind == "constant_div") return constant_div_field(s.c, s.u0);
    if (s.kind == "power_law") {
        PowerLawParams p;
        p.alpha = s.alpha;
        p.R = s.R;
        p.cutoff_width = s.cutoff_width;
        p.orientation = s.orientation;
        p.amplitude = s.amplitude;
        return power_law_field(p);
    }
    throw Error(ErrorKind::config, "unknown field kind '" + s.kind + "'");
}

NoiseFlux make_flux(const FluxSpec& s) { return noise_flux(s.kind, s.lambda, s.Lambda); }

DensityField make_density(const DensitySpec& s, const Grid& g) {
    DensityField r(g);
    if (s.shape == "zero") return r;
    for (std::size_t i = 0; i < g.nx; ++i) {
        const double z = (g.x(i) - s.center) / s.half_width;
        if (s.shape == "indicator") {
            const double lo = g.x(i) - 0.5 * g.dx(), hi = lo + g.dx();
            const double a = s.center - s.half_width, b = s.center + s.half_width;
            r.values[i] = s.height * std::max(0.0, std::min(hi, b) - std::max(lo, a)) / g.dx();
        } else if (s.shape == "bump") {
            r.values[i] = s.height * smooth::bump(z).value;
        } else if (s.shape == "gaussian") {
            r.values[i] = s.height * std::exp(-z * z);
        } else {
            throw Error(ErrorKind::config, "unknown density shape '" + s.shape + "'");
        }
    }
    return r;
}

ConfigError::ConfigError(std::vector<std::string> messages)
    : Error(ErrorKind::config,
            [&] {
                std::string s = std::to_string(messages.size()) + " invalid setting(s)";
                for (const auto& m : messages) s += "\n  " + m;
                return s;
            }()),
      messages_(std::move(messages)) {}

ExperimentConfig validate_config(const json& raw) {
    ExperimentConfig c;
    std::vector<std::string> errors;
    Reader r(raw, "", errors);
    if (!raw.is_object()) throw ConfigError(errors);

    std::string kind = to_string(c.kind);
    r.text("kind", kind);
    try {
        c.kind = parse_experiment_kind(kind);
    } catch (const Error&) {
        errors.push_back("[kind] unknown experiment kind '" + kind + "'");
    }

    if (const json* j = r.object("grid")) {
        Reader g(*j, "grid", errors);
        g.number("x_min", c.x_min);
        g.number("x_max", c.x_max);
        g.count("nx", c.nx);
        g.number("v_max", c.v_max);
        g.count("nv", c.nv);
        g.finish();
    }
    r.number("T", c.T);
    r.number("dt", c.dt);
    r.number("eps_relax", c.eps_relax);
    r.number("eps_mollify", c.eps_mollify);
    r.count("snapshots", c.snapshots);
    if (const json* j = r.object("field")) {
        Reader f(*j, "field", errors);
        f.text("kind", c.field.kind);
        f.number("alpha", c.field.alpha);
        f.number("R", c.field.R);
        f.number("cutoff_width", c.field.cutoff_width);
        std::string o = orientation_name(c.field.orientation);
        f.text("orientation", o);
        if (o == "expanding") {
            c.field.orientation = Orientation::expanding;
        } else if (o == "concentrating") {
            c.field.orientation = Orientation::concentrating;
        } else {
            errors.push_back("[field] field.orientation must be expanding or concentrating");
        }
        f.number("amplitude", c.field.amplitude);
        f.number("c", c.field.c);
        f.number("u0", c.field.u0);
        f.finish();
    }
    if (const json* j = r.object("flux")) {
        Reader f(*j, "flux", errors);
        std::string k = flux_name(c.flux.kind);
        f.text("kind", k);
        try {
            c.flux.kind = parse_flux(k);
        } catch (const Error&) {
            errors.push_back("[flux] flux.kind must be degenerate_plateau, bounded_smooth or zero");
        }
        f.number("lambda", c.flux.lambda);
        f.number("Lambda", c.flux.Lambda);
        f.finish();
    }
    read_density(r.object("rho0"), "rho0", c.rho0, errors);
    r.count("n_paths", c.n_paths);
    r.seed("seed", c.seed);
    r.count("threads", c.threads);
    r.flag("deterministic", c.deterministic);
    r.text("out", c.out);

    if (const json* j = r.object("sweep")) {
        Reader s(*j, "sweep", errors);
        s.numbers("eps_list", c.sweep_eps);
        s.finish();
    }
    if (const json* j = r.object("contraction")) {
        Reader s(*j, "contraction", errors);
        read_density(s.object("perturbation"), "contraction.perturbation", c.perturbation, errors);
        s.number("p", c.moment_p);
        s.finish();
    }
    if (const json* j = r.object("subsolution")) {
        Reader s(*j, "subsolution", errors);
        s.number("p", c.moment_p);
        s.number("q", c.pucci_q);
        s.count("n", c.pucci_n);
        s.number("gamma", c.pucci_gamma);
        s.finish();
    }
    if (const json* j = r.object("commutator")) {
        Reader s(*j, "commutator", errors);
        s.numbers("eps_list", c.commutator_eps);
        s.numbers("delta_list", c.commutator_delta);
        s.number("t", c.commutator_t);
        s.finish();
    }
    if (const json* j = r.object("concentration")) {
        Reader s(*j, "concentration", errors);
        s.number("alpha", c.concentration_alpha);
        s.counts("nx_list", c.concentration_nx);
        s.number("amplitude", c.concentration_amplitude);
        s.number("eps_cells", c.concentration_eps_cells);
        s.finish();
    }
    r.finish();

    // Single-field constraints.
    bool grid_ok = true;
    if (!(c.x_min < c.x_max)) errors.push_back("[grid] x_min must be below x_max"), grid_ok = false;
    if (c.nx < 8) errors.push_back("[grid] nx must be at least 8"), grid_ok = false;
    if (c.nv < 4 || c.nv % 2) errors.push_back("[grid] nv must be even and at least 4"), grid_ok = false;
    if (!(c.v_max > 0.0)) errors.push_back("[grid] v_max must be positive"), grid_ok = false;
    bool time_ok = true;
    if (!(c.dt > 0.0)) errors.push_back("[time step] dt must be positive"), time_ok = false;
    if (!(c.T >= c.dt)) errors.push_back("[time step] T must be at least dt"), time_ok = false;
    if (time_ok && std::abs(c.T / c.dt - std::round(c.T / c.dt)) > 1e-9 * (c.T / c.dt)) {
        errors.push_back("[time step] T must be an integer multiple of dt"), time_ok = false;
    }
    if (!(c.eps_relax > 0.0)) errors.push_back("[relaxation] eps_relax must be positive");
    if (!(c.eps_mollify > 0.0)) errors.push_back("[mollifier resolution] eps_mollify must be positive");
    if (c.snapshots < 2) errors.push_back("[snapshots] snapshots must be at least 2");
    if (c.n_paths < 1) errors.push_back("[paths] n_paths must be at least 1");
    if (c.threads < 1) errors.push_back("[paths] threads must be at least 1");

    bool field_ok = true;
    if (c.field.kind == "power_law") {
        if (!(c.field.alpha > 0.0 && c.field.alpha < 1.0)) errors.push_back("[field] alpha must lie in (0, 1)"), field_ok = false;
        if (!(c.field.R > 0.0)) errors.push_back("[field] R must be positive"), field_ok = false;
        if (!(c.field.cutoff_width > 0.0 && c.field.cutoff_width <= c.field.R)) {
            errors.push_back("[field] cutoff_width must lie in (0, R]"), field_ok = false;
        }
        if (!(c.field.amplitude >= 0.0)) errors.push_back("[field] amplitude must be nonnegative"), field_ok = false;
    } else if (c.field.kind != "zero" && c.field.kind != "constant_div") {
        errors.push_back("[field] field.kind must be power_law, constant_div or zero"), field_ok = false;
    }
    bool flux_ok = true;
    try {
        make_flux(c.flux);
    } catch (const Error& e) {
        errors.push_back(std::string("[flux] ") + e.what()), flux_ok = false;
    }
    const std::size_t before_density = errors.size();
    check_density(c.rho0, "rho0", errors);
    if (c.kind == ExperimentKind::contraction) check_density(c.perturbation, "contraction.perturbation", errors);
    const bool density_ok = errors.size() == before_density;

    if (grid_ok && c.eps_mollify > 0.0 && c.kind != ExperimentKind::concentration &&
        c.kind != ExperimentKind::commutator) {
        const double dx = (c.x_max - c.x_min) / static_cast<double>(c.nx);
        if (c.eps_mollify < 2.0 * dx) {
            std::ostringstream os;
            os << "[mollifier resolution] eps_mollify = " << c.eps_mollify << " must be at least 2 dx = " << 2.0 * dx;
            errors.push_back(os.str());
        }
    }

    switch (c.kind) {
        case ExperimentKind::sweep_eps:
            if (!strictly_decreasing_positive(c.sweep_eps) || c.sweep_eps.size() < 3) {
                errors.push_back("[sweep] sweep.eps_list must hold at least three positive, strictly decreasing values");
            }
            break;
        case ExperimentKind::contraction:
            if (!(c.moment_p > 0.0)) errors.push_back("[contraction] p must be positive");
            break;
        case ExperimentKind::subsolution:
            if (!(c.moment_p > 0.0)) errors.push_back("[subsolution] p must be positive");
            if (!(c.pucci_q > 3.0)) errors.push_back("[subsolution] q must exceed 3 in one dimension");
            if (c.pucci_n < 21 || c.pucci_n % 2 == 0) errors.push_back("[subsolution] n must be odd and at least 21");
            if (c.pucci_gamma < 0.0) errors.push_back("[subsolution] gamma must be nonnegative");
            if (c.field.orientation != Orientation::expanding && c.field.kind == "power_law") {
                errors.push_back("[subsolution] the power-law field must be expanding so that (div u)_- lies in L^q");
            }
            break;
        case ExperimentKind::commutator: {
            const bool lists = strictly_decreasing_positive(c.commutator_eps) &&
                               strictly_decreasing_positive(c.commutator_delta);
            if (!lists) {
                errors.push_back("[commutator] eps_list and delta_list must be positive and strictly decreasing");
            } else if (grid_ok) {
                const double dx = (c.x_max - c.x_min) / static_cast<double>(c.nx);
                const double dv = 2.0 * c.v_max / static_cast<double>(c.nv);
                if (c.commutator_eps.back() < 2.0 * dx) errors.push_back("[commutator resolution] smallest eps must be at least 2 dx");
                if (c.commutator_delta.back() < 2.0 * dv) errors.push_back("[commutator resolution] smallest delta must be at least 2 dv");
            }
            break;
        }
        case ExperimentKind::concentration: {
            if (!(c.concentration_alpha > 0.0 && c.concentration_alpha < 1.0)) {
                errors.push_back("[concentration] alpha must lie in (0, 1)");
            }
            bool inc = c.concentration_nx.size() >= 3;
            for (std::size_t k = 1; inc && k < c.concentration_nx.size(); ++k) {
                inc = c.concentration_nx[k] > c.concentration_nx[k - 1];
            }
            if (!inc) errors.push_back("[concentration] nx_list must hold at least three increasing sizes");
            if (!(c.concentration_amplitude > 0.0)) errors.push_back("[concentration] amplitude must be positive");
            if (!(c.concentration_eps_cells >= 2.0)) errors.push_back("[mollifier resolution] eps_cells must be at least 2");
            if (!(c.x_min == -c.x_max)) errors.push_back("[concentration] the x-domain must be symmetric");
            break;
        }
        case ExperimentKind::solve: break;
    }

    if (errors.empty() && needs_solver(c.kind) && grid_ok && time_ok && field_ok && flux_ok && density_ok) {
        check_solver_preconditions(c, errors);
    }
    if (!errors.empty()) throw ConfigError(std::move(errors));
    return c;
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["kind"] = to_string(c.kind);
    j["grid"] = {{"x_min", c.x_min}, {"x_max", c.x_max}, {"nx", c.nx}, {"v_max", c.v_max}, {"nv", c.nv}};
    j["T"] = c.T;
    j["dt"] = c.dt;
    j["eps_relax"] = c.eps_relax;
    j["eps_mollify"] = c.eps_mollify;
    j["snapshots"] = c.snapshots;
    j["field"] = {{"kind", c.field.kind},
                  {"alpha", c.field.alpha},
                  {"R", c.field.R},
                  {"cutoff_width", c.field.cutoff_width},
                  {"orientation", orientation_name(c.field.orientation)},
                  {"amplitude", c.field.amplitude},
                  {"c", c.field.c},
                  {"u0", c.field.u0}};
    j["flux"] = {{"kind", flux_name(c.flux.kind)}, {"lambda", c.flux.lambda}, {"Lambda", c.flux.Lambda}};
    j["rho0"] = density_json(c.rho0);
    j["n_paths"] = c.n_paths;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["deterministic"] = c.deterministic;
    j["out"] = c.out;
    j["sweep"] = {{"eps_list", c.sweep_eps}};
    j["contraction"] = {{"perturbation", density_json(c.perturbation)}, {"p", c.moment_p}};
    j["subsolution"] = {{"p", c.moment_p}, {"q", c.pucci_q}, {"n", c.pucci_n}, {"gamma", c.pucci_gamma}};
    j["commutator"] = {{"eps_list", c.commutator_eps}, {"delta_list", c.commutator_delta}, {"t", c.commutator_t}};
    j["concentration"] = {{"alpha", c.concentration_alpha},
                          {"nx_list", c.concentration_nx},
                          {"amplitude", c.concentration_amplitude},
                          {"eps_cells", c.concentration_eps_cells}};
    return j;
}

std::string config_hash(const ExperimentConfig& c) {
    json j = to_json(c);
    j.erase("out");
    j.erase("threads");
    j.erase("deterministic");
    return io::hex64(io::fnv1a64(j.dump()));
}

SolverConfig solver_config(const ExperimentConfig& c) {
    SolverConfig s;
    s.grid = c.grid();
    s.T = c.T;
    s.dt = c.dt;
    s.eps_relax = c.eps_relax;
    s.eps_mollify = c.eps_mollify;
    s.field = make_field(c.field);
    s.flux = make_flux(c.flux);
    s.seed = c.seed;
    s.rho0 = make_density(c.rho0, s.grid);
    s.mollify_levels = mollify_levels(s.field);
    s.check_domain_width = c.rho0.shape != "gaussian";
    s.abort_on_violation = false;
    for (std::size_t k = 0; k < c.snapshots; ++k) {
        s.snapshot_times.push_back(c.T * static_cast<double>(k) / static_cast<double>(c.snapshots - 1));
    }
    return s;
}

json RunManifest::to_json() const {
    json v = json::array();
    for (const auto& x : verdicts) v.push_back(io::to_json(x));
    return {{"kind", kind},
            {"config_hash", config_hash},
            {"seed", seed},
            {"n_paths", n_paths},
            {"versions", versions},
            {"wall_time_seconds", wall_time},
            {"invariants", invariants},
            {"verdicts", v},
            {"artifacts", artifacts},
            {"warnings", warnings},
            {"passed", passed},
            {"first_failure", first_failure.empty() ? json(nullptr) : json(first_failure)}};
}

namespace {

namespace fs = std::filesystem;

struct Context {
    const ExperimentConfig& config;
    fs::path dir;
    RunManifest& manifest;

    void write(const std::string& name, const std::string& content) {
        io::write_file_atomic(dir / name, content);
        manifest.artifacts.push_back(name);
    }
    void verdict(Verdict v) { manifest.verdicts.push_back(std::move(v)); }
    void warn(const std::vector<std::string>& w) {
        for (const auto& s : w) {
            if (std::find(manifest.warnings.begin(), manifest.warnings.end(), s) == manifest.warnings.end()) {
                manifest.warnings.push_back(s);
            }
        }
    }
};

void merge_max(InvariantMaxima& into, const InvariantMaxima& m) {
    into.sign_violation = std::max(into.sign_violation, m.sign_violation);
    into.support_leak = std::max(into.support_leak, m.support_leak);
    into.defect_negativity = std::max(into.defect_negativity, m.defect_negativity);
    into.mass_drift = std::max(into.mass_drift, m.mass_drift);
    into.boundary_leak = std::max(into.boundary_leak, m.boundary_leak);
    into.l1_excess = std::max(into.l1_excess, m.l1_excess);
}

void invariant_verdicts(Context& ctx, const InvariantMaxima& m) {
    ctx.verdict(make_verdict("sign property violation", m.sign_violation, 1e-6, 0.0));
    ctx.verdict(make_verdict("support leakage", m.support_leak, 1e-6, 0.0));
    ctx.verdict(make_verdict("defect measure negativity", m.defect_negativity, 1e-6, 0.0));
    ctx.verdict(make_verdict("mass drift", m.mass_drift, 1e-2, 0.0));
    ctx.verdict(make_verdict("L1 excess of f", m.l1_excess, 0.02, 0.0));
}

void run_solve(Context& ctx) {
    const auto& c = ctx.config;
    SolverConfig sc = solver_config(c);
    sc.snapshot_times.clear();
    const Solver solver(sc);
    ctx.warn(solver.warnings());

    struct PathResult {
        std::vector<SeriesPoint> series;
        InvariantMaxima invariants;
        DensityField rho;
    };
    std::vector<PathResult> paths(c.n_paths);
    parallel_for(c.n_paths, c.workers(), [&](std::size_t k) {
        Trajectory tr = solver.solve_path(path_seed(c.seed, k));
        paths[k] = {std::move(tr.series), tr.invariants, std::move(tr.final_rho)};
    });

    InvariantMaxima worst;
    for (const auto& p : paths) merge_max(worst, p.invariants);
    ctx.manifest.invariants = io::to_json(worst);

    const std::size_t n_steps = paths.front().series.size();
    std::vector<SeriesPoint> mean(n_steps, SeriesPoint{0, 0, 0, 0, 0, 0});
    for (const auto& p : paths) {
        for (std::size_t k = 0; k < n_steps; ++k) {
            const auto& s = p.series[k];
            mean[k].t = s.t;
            mean[k].mass += s.mass;
            mean[k].l1 += s.l1;
            mean[k].sup_rho += s.sup_rho;
            mean[k].moment_p2 += s.moment_p2;
            mean[k].defect += s.defect;
        }
    }
    const double inv = 1.0 / static_cast<double>(paths.size());
    for (auto& s : mean) {
        s.mass *= inv;
        s.l1 *= inv;
        s.sup_rho *= inv;
        s.moment_p2 *= inv;
        s.defect *= inv;
    }
    ctx.write("series.csv", io::series_csv(mean));

    std::vector<std::vector<double>> rows;
    const Grid& g = sc.grid;
    for (std::size_t i = 0; i < g.nx; ++i) {
        std::vector<double> sample;
        sample.reserve(paths.size());
        for (const auto& p : paths) sample.push_back(p.rho.values[i]);
        const auto [m, se] = mean_and_stderr(sample);
        rows.push_back({g.x(i), sc.rho0.values[i], m, se});
    }
    ctx.write("density_final.csv", io::csv({"x", "rho0", "rho_mean", "rho_stderr"}, rows));

    rows.clear();
    for (std::size_t k = 0; k < paths.size(); ++k) {
        const auto& m = paths[k].invariants;
        rows.push_back({static_cast<double>(k), m.sign_violation, m.support_leak, m.defect_negativity, m.mass_drift,
                        m.boundary_leak, m.l1_excess});
    }
    ctx.write("paths.csv", io::csv({"path", "sign_violation", "support_leak", "defect_negativity", "mass_drift",
                                    "boundary_leak", "l1_excess"},
                                   rows));
    invariant_verdicts(ctx, worst);
}

void run_sweep(Context& ctx) {
    const auto& c = ctx.config;
    SolverConfig sc = solver_config(c);
    sc.snapshot_times.clear();
    const auto rep = hydrodynamic_sweep(sc, c.sweep_eps, c.n_paths, c.workers());
    std::vector<std::vector<double>> rows;
    for (const auto& e : rep.entries) {
        rows.push_back({e.eps, e.chi_gap_mean, e.chi_gap_stderr, e.defect_mean, e.relaxation_defect_mean,
                        e.defect_constant, e.l1_excess_max});
    }
    ctx.write("sweep.csv", io::csv({"eps", "chi_gap_mean", "chi_gap_stderr", "defect_mean", "relaxation_defect_mean",
                                    "defect_constant", "l1_excess_max"},
                                   rows));
    const auto& first = rep.entries.front();
    const auto& last = rep.entries.back();
    ctx.verdict(make_verdict("chi gap strictly decreasing in eps (0 = yes)", rep.decreasing ? 0.0 : 1.0, 0.0, 0.0));
    ctx.verdict(make_verdict("final chi gap / first chi gap", last.chi_gap_mean / first.chi_gap_mean, 0.5, 0.0));
    ctx.verdict(make_verdict("defect constant variation", rep.constant_variation, 0.25, 0.0));
    double excess = 0.0;
    for (const auto& e : rep.entries) excess = std::max(excess, e.l1_excess_max);
    ctx.verdict(make_verdict("L1 excess of f", excess, 0.02, 0.0));
}

void run_contraction(Context& ctx) {
    const auto& c = ctx.config;
    SolverConfig sc = solver_config(c);
    sc.snapshot_times.clear();
    const DensityField rho1 = sc.rho0;
    const DensityField rho2 = add(rho1, make_density(c.perturbation, sc.grid));
    const auto rep = l1_contraction(sc, rho1, rho2, c.n_paths, c.workers(), nullptr, c.moment_p);
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < rep.distance.times.size(); ++k) {
        rows.push_back({rep.distance.times[k], rep.distance.mean[k], rep.distance.stderr_[k]});
    }
    ctx.write("distance.csv", io::csv({"t", "distance_mean", "distance_stderr"}, rows));
    json j = {{"initial_distance", rep.initial_distance},
              {"C_horizon", rep.C_horizon},
              {"C_sup", rep.C_sup},
              {"identity_error", rep.identity_error},
              {"n_paths", rep.distance.n_paths}};
    ctx.write("contraction.json", io::dump(j));
    for (const auto& v : rep.distance.verdicts) ctx.verdict(v);
}

void run_subsolution(Context& ctx) {
    const auto& c = ctx.config;
    const Grid g = c.grid();
    const VelocityField u = make_field(c.field);
    const MollifiedVelocity ue = mollify_velocity(u, c.eps_mollify, g, mollify_levels(u), c.T);
    ctx.warn(ue.warnings);
    SubSolutionOptions o;
    o.grid.n = c.pucci_n;
    o.p = c.moment_p;
    o.q = c.pucci_q;
    o.gamma = c.pucci_gamma;
    o.threads = c.workers();
    const double R = c.field.kind == "power_law" ? c.field.R : 1.0;
    const auto rep = build_subsolution(u, ue, make_flux(c.flux), R, c.T, o);
    ctx.write("subsolution.csv", io::subsolution_csv(rep.solution));
    json cert = io::to_json(rep.solution.certificate);
    cert["C_est"] = rep.C_est;
    cert["component_sup"] = rep.component_sup;
    cert["max_principle_bound"] = rep.max_principle_bound;
    cert["max_principle_ok"] = rep.max_principle_ok;
    cert["gamma_halvings"] = rep.gamma_halvings;
    ctx.write("certificate.json", io::dump(cert));
    const auto& ce = rep.solution.certificate;
    ctx.verdict(make_verdict("lower bound deficit min{1, 1/(2p)} - min phi", ce.lower_bound_target - ce.lower_bound_min,
                             0.0, 1e-8));
    ctx.verdict(make_verdict("max_k sup phi_k against 1/(2p) + C gamma", rep.component_sup, rep.max_principle_bound,
                             1e-12));
}

void run_commutator(Context& ctx) {
    const auto& c = ctx.config;
    const Grid g = c.grid();
    KineticField f(g), test(g);
    for (std::size_t i = 0; i < g.nx; ++i) {
        for (std::size_t j = 0; j < g.nv; ++j) {
            const double x = g.x(i), v = g.v(j);
            f.at(i, j) = std::exp(-x * x / 0.5) * std::exp(-(v - 0.3) * (v - 0.3) / 0.3);
            test.at(i, j) = smooth::bump(x / 1.5).value * smooth::bump(v / 1.5).value;
        }
    }
    const VelocityField u = make_field(c.field);
    const auto s = commutator_sweep(f, u, c.commutator_t, c.commutator_eps, c.commutator_delta, test);
    std::vector<std::vector<double>> rows;
    for (std::size_t a = 0; a < s.eps_list.size(); ++a) {
        for (std::size_t b = 0; b < s.delta_list.size(); ++b) {
            const auto& r = s.table[a][b];
            rows.push_back({s.eps_list[a], s.delta_list[b], r.R1, r.R2, r.R3, r.limit});
            ctx.warn(r.warnings);
        }
    }
    ctx.write("commutator.csv", io::csv({"eps", "delta", "R1", "R2", "R3", "limit"}, rows));
    ctx.write("commutator.json", io::dump({{"R1_extrapolated", s.R1_extrapolated},
                                           {"R2_extrapolated", s.R2_extrapolated},
                                           {"limit", s.finest.limit}}));
    const auto& r = s.finest;
    if (c.field.kind == "zero") {
        ctx.verdict(make_verdict("|R1| for u = 0", std::abs(r.R1), 0.0, 1e-14));
        ctx.verdict(make_verdict("|R2| for u = 0", std::abs(r.R2), 0.0, 1e-14));
        ctx.verdict(make_verdict("|R3| for u = 0", std::abs(r.R3), 0.0, 1e-14));
    } else if (c.field.kind == "constant_div") {
        const double L = std::abs(r.limit);
        ctx.verdict(make_verdict("|R1 - limit| / |limit|", std::abs(r.R1 - r.limit) / L, 0.05, 0.0));
        ctx.verdict(make_verdict("|R2 + limit| / |limit|", std::abs(r.R2 + r.limit) / L, 0.05, 0.0));
        ctx.verdict(make_verdict("|R1 + R2| / |R1|", std::abs(r.R1 + r.R2) / std::abs(r.R1), 0.10, 0.0));
    }
}

void run_concentration(Context& ctx) {
    const auto& c = ctx.config;
    ConcentrationOptions o;
    o.nx_list = c.concentration_nx;
    o.nv = c.nv;
    o.half_width = c.x_max;
    o.T = c.T;
    o.dt = c.dt;
    o.amplitude = c.concentration_amplitude;
    o.eps_relax = c.eps_relax;
    o.eps_cells = c.concentration_eps_cells;
    o.seed = c.seed;
    o.threads = c.workers();
    if (c.field.kind == "power_law") {
        o.R = c.field.R;
        o.cutoff_width = c.field.cutoff_width;
    }
    const auto rep = concentration_demo(c.concentration_alpha, make_flux(c.flux), c.n_paths, o);
    std::vector<std::vector<double>> rows;
    for (const auto& l : rep.levels) {
        rows.push_back({static_cast<double>(l.nx), l.dx, l.eps_mollify, l.v_max, l.control_sup, l.control_l2sq,
                        l.oracle_sup, l.noisy_sup_mean, l.noisy_l2sq_mean, l.noisy_l2sq_stderr, l.noisy_mass_drift});
    }
    ctx.write("concentration.csv",
              io::csv({"nx", "dx", "eps_mollify", "v_max", "control_sup", "control_l2sq", "oracle_sup",
                       "noisy_sup_mean", "noisy_l2sq_mean", "noisy_l2sq_stderr", "noisy_mass_drift"},
                      rows));
    ctx.write("concentration.json", io::dump({{"alpha", rep.alpha},
                                              {"collapsed_mass", rep.collapsed_mass},
                                              {"control_growth", rep.control_growth},
                                              {"noisy_variation", rep.noisy_variation}}));
    for (const auto& v : rep.verdicts) ctx.verdict(v);
}

}  // namespace

RunManifest run_experiment(const ExperimentConfig& config) {
    const auto start = std::chrono::steady_clock::now();
    RunManifest m;
    m.kind = to_string(config.kind);
    m.config_hash = config_hash(config);
    m.seed = config.seed;
    m.n_paths = config.n_paths;
    m.versions = {{"kinetic_noise", kVersion},
                  {"compiler", __VERSION__},
                  {"cplusplus", __cplusplus},
                  {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                        std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                        std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    m.invariants = nullptr;

    Context ctx{config, fs::path(config.out), m};
    json echo = to_json(config);
    echo.erase("out");
    echo.erase("threads");
    echo.erase("deterministic");
    ctx.write("config.json", io::dump(echo));

    switch (config.kind) {
        case ExperimentKind::solve: run_solve(ctx); break;
        case ExperimentKind::sweep_eps: run_sweep(ctx); break;
        case ExperimentKind::contraction: run_contraction(ctx); break;
        case ExperimentKind::subsolution: run_subsolution(ctx); break;
        case ExperimentKind::commutator: run_commutator(ctx); break;
        case ExperimentKind::concentration: run_concentration(ctx); break;
    }

    m.passed = true;
    for (const auto& v : m.verdicts) {
        if (!v.passed) {
            m.passed = false;
            m.first_failure = v.name;
            break;
        }
    }
    m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    m.artifacts.push_back("manifest.json");
    io::write_file_atomic(ctx.dir / "manifest.json", io::dump(m.to_json()));
    return m;
}

}  // namespace kinetic_noise
