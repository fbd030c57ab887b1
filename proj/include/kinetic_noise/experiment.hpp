#pragma once

// Experiment configuration, validation and orchestration of solver runs
// and diagnostics into on-disk artifacts.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "kinetic_noise/bgk_solver.hpp"
#include "kinetic_noise/diagnostics.hpp"
#include "kinetic_noise/error.hpp"

namespace kinetic_noise {

enum class ExperimentKind { solve, sweep_eps, contraction, subsolution, commutator, concentration };

const char* to_string(ExperimentKind kind);
/// Accepts the CLI spellings: solve, sweep-eps, contraction, subsolution, commutator, concentration.
ExperimentKind parse_experiment_kind(const std::string& name);

struct FieldSpec {
    std::string kind = "power_law";  // power_law | constant_div | zero
    double alpha = 0.5;
    double R = 1.0;
    double cutoff_width = 0.5;
    Orientation orientation = Orientation::concentrating;
    double amplitude = 0.5;
    double c = 0.0;   // constant_div slope
    double u0 = 0.0;  // constant_div offset
};

struct FluxSpec {
    FluxKind kind = FluxKind::degenerate_plateau;
    double lambda = 0.25;
    double Lambda = 0.25;
};

struct DensitySpec {
    std::string shape = "indicator";  // indicator | bump | gaussian | zero
    double center = 0.0;
    double half_width = 0.5;
    double height = 1.0;
};

VelocityField make_field(const FieldSpec& spec);
NoiseFlux make_flux(const FluxSpec& spec);
/// Cell averages for indicators, point values otherwise.
DensityField make_density(const DensitySpec& spec, const Grid& grid);

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::solve;

    double x_min = -4.0, x_max = 4.0;
    std::size_t nx = 256;
    double v_max = 4.0;
    std::size_t nv = 128;
    double T = 0.5;
    double dt = 1e-3;
    double eps_relax = 0.05;
    double eps_mollify = 0.1;
    FieldSpec field;
    FluxSpec flux;
    DensitySpec rho0;
    std::size_t snapshots = 6;  // evenly spaced including 0 and T

    std::size_t n_paths = 100;
    std::uint64_t seed = 2024;
    std::size_t threads = 1;
    bool deterministic = false;
    std::string out = "out";

    std::vector<double> sweep_eps{0.1, 0.05, 0.025};

    DensitySpec perturbation{"bump", 0.2, 0.3, 0.25};
    double moment_p = 2.0;

    double pucci_q = 4.0;
    std::size_t pucci_n = 401;
    double pucci_gamma = 0.0;

    std::vector<double> commutator_eps{0.2, 0.1, 0.05};
    std::vector<double> commutator_delta{0.2, 0.1, 0.05};
    double commutator_t = 0.0;

    double concentration_alpha = 0.5;
    std::vector<std::size_t> concentration_nx{64, 128, 256};
    double concentration_amplitude = 1.0;
    double concentration_eps_cells = 2.0;

    Grid grid() const { return Grid(x_min, x_max, nx, v_max, nv); }
    /// Worker threads actually used (1 when deterministic).
    std::size_t workers() const { return deterministic ? 1 : threads; }
};

/// Thrown by validate_config with one message per violated constraint.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> messages);
    const std::vector<std::string>& messages() const noexcept { return messages_; }

private:
    std::vector<std::string> messages_;
};

/// Fills defaults, rejects unknown keys and checks every cross-field
/// precondition (invertibility guard, support bound, mollifier resolution,
/// domain width). Each message starts with the bracketed precondition name.
ExperimentConfig validate_config(const nlohmann::json& raw);

/// Normalized echo of a configuration; validate_config(to_json(c)) == c.
nlohmann::json to_json(const ExperimentConfig& config);

/// Hash of the normalized configuration without out, threads and deterministic.
std::string config_hash(const ExperimentConfig& config);

SolverConfig solver_config(const ExperimentConfig& config);

struct RunManifest {
    std::string kind;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::size_t n_paths = 0;
    nlohmann::json versions;
    double wall_time = 0.0;
    /// Worst invariants over all solver paths; null when the experiment runs none itself.
    nlohmann::json invariants;
    std::vector<Verdict> verdicts;
    std::vector<std::string> artifacts;
    std::vector<std::string> warnings;
    bool passed = false;
    std::string first_failure;

    nlohmann::json to_json() const;
};

/// Runs the experiment, writes its artifacts, config.json and manifest.json
/// (last, atomically) under config.out.
RunManifest run_experiment(const ExperimentConfig& config);

}  // namespace kinetic_noise
