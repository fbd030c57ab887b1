// kinetic-noise: runs one experiment from a JSON config and writes its
// artifacts. Exit status: 0 all verdicts passed, 1 a verdict failed,
// 2 invalid configuration or usage, 3 runtime failure.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "kinetic_noise/experiment.hpp"
#include "kinetic_noise/io.hpp"

namespace kn = kinetic_noise;

namespace {

struct Options {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    std::optional<std::size_t> threads;
    bool deterministic = false;
    bool quiet = false;
};

nlohmann::json load(const Options& o, const std::string& kind) {
    nlohmann::json raw = o.config.empty() ? nlohmann::json::object() : kn::io::read_json_file(o.config);
    if (!raw.is_object()) throw kn::Error(kn::ErrorKind::config, "config root must be an object");
    if (raw.contains("kind") && raw["kind"] != kind) {
        throw kn::Error(kn::ErrorKind::config, "config kind '" + raw["kind"].dump() + "' does not match subcommand '" + kind + "'");
    }
    raw["kind"] = kind;
    if (o.out) raw["out"] = *o.out;
    if (const char* env = std::getenv("KINETIC_NOISE_OUT"); env && *env) raw["out"] = env;
    if (o.seed) raw["seed"] = *o.seed;
    if (o.paths) raw["n_paths"] = *o.paths;
    if (o.threads) raw["threads"] = *o.threads;
    if (o.deterministic) raw["deterministic"] = true;
    return raw;
}

int run(const Options& o, const std::string& kind) {
    kn::ExperimentConfig config;
    try {
        config = kn::validate_config(load(o, kind));
    } catch (const kn::ConfigError& e) {
        std::cerr << "invalid configuration:\n";
        for (const auto& m : e.messages()) std::cerr << "  " << m << '\n';
        return 2;
    } catch (const kn::Error& e) {
        std::cerr << e.what() << '\n';
        return e.kind() == kn::ErrorKind::io ? 3 : 2;
    }

    try {
        const auto m = kn::run_experiment(config);
        if (!o.quiet) {
            for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';
            for (const auto& v : m.verdicts) {
                std::printf("%s  %s: value %.6g, bound %.6g (tol %.3g)\n", v.passed ? "PASS" : "FAIL", v.name.c_str(),
                            v.value, v.bound, v.tolerance);
            }
            std::printf("%s: %s in %.2f s, outputs in %s\n", m.kind.c_str(), m.passed ? "passed" : "FAILED",
                        m.wall_time, config.out.c_str());
        }
        if (!m.passed) {
            std::cerr << "first failed check: " << m.first_failure << '\n';
            return 1;
        }
        return 0;
    } catch (const kn::Error& e) {
        std::cerr << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic kinetic BGK experiments"};
    app.require_subcommand(1);
    Options o;
    std::string chosen;

    const char* kinds[] = {"solve", "sweep-eps", "contraction", "subsolution", "commutator", "concentration"};
    for (const char* kind : kinds) {
        auto* sub = app.add_subcommand(kind, std::string("run the ") + kind + " experiment");
        sub->add_option("--config", o.config, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "output directory (KINETIC_NOISE_OUT takes precedence)");
        sub->add_option("--seed", o.seed, "base seed");
        sub->add_option("--paths", o.paths, "Monte Carlo paths");
        sub->add_option("--threads", o.threads, "worker threads");
        sub->add_flag("--deterministic", o.deterministic, "single-threaded replay mode");
        sub->add_flag("-q,--quiet", o.quiet, "suppress the verdict listing");
        sub->callback([&chosen, kind] { chosen = kind; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    return run(o, chosen);
}
