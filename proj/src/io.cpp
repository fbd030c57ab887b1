#include "kinetic_noise/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kinetic_noise/error.hpp"

namespace kinetic_noise::io {

namespace fs = std::filesystem;

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, r.ptr);
}

void write_file_atomic(const fs::path& path, std::string_view content) {
    std::error_code ec;
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw Error(ErrorKind::io, "cannot create " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::io, "cannot open " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw Error(ErrorKind::io, "write failed for " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorKind::io, "cannot rename " + tmp.string() + ": " + ec.message());
}

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::config, path.string() + ": " + e.what());
    }
}

std::string csv(const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows) {
    std::string out;
    for (std::size_t k = 0; k < header.size(); ++k) {
        if (k) out += ',';
        out += header[k];
    }
    out += '\n';
    for (const auto& row : rows) {
        if (row.size() != header.size()) throw Error(ErrorKind::invalid_argument, "csv row width mismatch");
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (k) out += ',';
            out += format_double(row[k]);
        }
        out += '\n';
    }
    return out;
}

std::string series_csv(const std::vector<SeriesPoint>& series) {
    std::vector<std::vector<double>> rows;
    rows.reserve(series.size());
    for (const auto& s : series) rows.push_back({s.t, s.mass, s.l1, s.sup_rho, s.moment_p2, s.defect});
    return csv({"t", "mass", "l1", "sup_rho", "moment_p2", "defect"}, rows);
}

std::string subsolution_csv(const SubSolution& phi) {
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < phi.times.size(); ++k) {
        for (std::size_t i = 0; i < phi.n; ++i) rows.push_back({phi.times[k], phi.x(i), phi.phi[k][i]});
    }
    return csv({"t", "x", "phi"}, rows);
}

namespace {

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const SubSolutionCertificate& c) {
    return {{"M_est", number(c.M_est)},
            {"sup_norm", number(c.sup_norm)},
            {"lower_bound_min", number(c.lower_bound_min)},
            {"lower_bound_target", number(c.lower_bound_target)},
            {"lower_bound_ok", c.lower_bound_ok},
            {"w21_t", number(c.w21_t)},
            {"w21_x", number(c.w21_x)},
            {"w21_xx", number(c.w21_xx)},
            {"radii", c.radii},
            {"gamma", number(c.gamma)},
            {"N", c.N}};
}

nlohmann::json to_json(const Verdict& v) {
    return {{"name", v.name},         {"value", number(v.value)},   {"bound", number(v.bound)},
            {"tolerance", number(v.tolerance)}, {"margin", number(v.margin)}, {"passed", v.passed}};
}

nlohmann::json to_json(const InvariantMaxima& m) {
    return {{"sign_violation", number(m.sign_violation)},
            {"support_leak", number(m.support_leak)},
            {"defect_negativity", number(m.defect_negativity)},
            {"mass_drift", number(m.mass_drift)},
            {"boundary_leak", number(m.boundary_leak)},
            {"l1_excess", number(m.l1_excess)}};
}

nlohmann::json to_json(const EnsembleReport& r) {
    nlohmann::json verdicts = nlohmann::json::array();
    for (const auto& v : r.verdicts) verdicts.push_back(to_json(v));
    nlohmann::json mean = nlohmann::json::array(), se = nlohmann::json::array();
    for (double v : r.mean) mean.push_back(number(v));
    for (double v : r.stderr_) se.push_back(number(v));
    return {{"n_paths", r.n_paths}, {"times", r.times}, {"mean", mean}, {"stderr", se}, {"verdicts", verdicts}};
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace kinetic_noise::io
