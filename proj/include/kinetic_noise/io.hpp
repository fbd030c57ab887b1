#pragma once

// Artifact serialization: CSV series, JSON reports and atomic file writes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kinetic_noise/bgk_solver.hpp"
#include "kinetic_noise/diagnostics.hpp"
#include "kinetic_noise/pucci.hpp"

namespace kinetic_noise::io {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

/// Shortest decimal that parses back to the same double.
std::string format_double(double value);

/// Writes to a sibling temporary file and renames it over `path`.
/// Parent directories are created. Throws io on failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

nlohmann::json read_json_file(const std::filesystem::path& path);

/// Comma-separated table with a header line; every row must match the header width.
std::string csv(const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows);

/// t,mass,l1,sup_rho,moment_p2,defect
std::string series_csv(const std::vector<SeriesPoint>& series);

/// t,x,phi for every stored level and node.
std::string subsolution_csv(const SubSolution& phi);

nlohmann::json to_json(const SubSolutionCertificate& c);
nlohmann::json to_json(const Verdict& v);
nlohmann::json to_json(const InvariantMaxima& m);
nlohmann::json to_json(const EnsembleReport& r);

/// Pretty-printed JSON with a trailing newline; non-finite numbers become null.
std::string dump(const nlohmann::json& j);

}  // namespace kinetic_noise::io
