#pragma once

#include <algorithm>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rotsense/concepts.hpp"
#include "rotsense/core.hpp"
#include "rotsense/hypotest.hpp"
#include "rotsense/io.hpp"

namespace rotsense {

// Matrices travel in the container payload; scalars and strings in metadata.
// nlohmann::json prints doubles in shortest round-trip form, so both halves
// are lossless at 64-bit precision.

inline std::string encode_model(const ConceptModel& m, const json& extra = json::object()) {
    m.validate();
    json meta;
    meta["kind"] = "concept_model";
    meta["version"] = kVersion;
    meta["k"] = m.k;
    meta["seed"] = m.seed;
    meta["canonical"] = m.canonical;
    meta["varimax_objective"] = m.varimax_objective;
    meta["varimax_converged"] = m.varimax_converged;
    meta["ids"] = m.ids;
    meta["scaling"] = {{"mode", to_string(m.scaling.mode)}, {"tau_r", m.scaling.tau_r}, {"tau_c", m.scaling.tau_c}};
    meta["fields"] = json::array();
    if (!extra.empty()) meta["extra"] = extra;
    std::vector<double> payload;
    pack_matrix("Y", m.Y, meta["fields"], payload);
    pack_matrix("Z", m.Z, meta["fields"], payload);
    pack_matrix("singular_values", m.singular_values, meta["fields"], payload);
    pack_matrix("row_factors", m.scaling.row_factors, meta["fields"], payload);
    pack_matrix("col_factors", m.scaling.col_factors, meta["fields"], payload);
    return encode_container(std::move(meta), payload);
}

inline ConceptModel decode_model(std::string_view bytes) {
    const Container c = decode_container(bytes);
    if (c.meta.value("kind", "") != "concept_model") throw InputError("model file: container does not hold a concept model");
    try {
        ConceptModel m;
        m.k = c.meta.at("k").get<Index>();
        m.seed = c.meta.at("seed").get<std::uint64_t>();
        m.canonical = c.meta.at("canonical").get<bool>();
        m.varimax_objective = c.meta.at("varimax_objective").get<double>();
        m.varimax_converged = c.meta.at("varimax_converged").get<bool>();
        m.ids = c.meta.at("ids").get<std::vector<std::string>>();
        const auto& s = c.meta.at("scaling");
        m.scaling.mode = parse_norm_mode(s.at("mode").get<std::string>());
        m.scaling.tau_r = s.at("tau_r").get<double>();
        m.scaling.tau_c = s.at("tau_c").get<double>();
        m.Y = unpack_matrix(c, "Y");
        m.Z = unpack_matrix(c, "Z");
        m.singular_values = unpack_matrix(c, "singular_values");
        m.scaling.row_factors = unpack_matrix(c, "row_factors");
        m.scaling.col_factors = unpack_matrix(c, "col_factors");
        m.validate();
        return m;
    } catch (const json::exception& e) {
        throw InputError(std::string("model file: malformed metadata: ") + e.what());
    }
}

inline void save_model(const std::filesystem::path& path, const ConceptModel& m, const json& extra = json::object()) {
    write_file_bytes(path, encode_model(m, extra));
}

inline ConceptModel load_model(const std::filesystem::path& path) { return decode_model(read_file_bytes(path)); }

namespace detail {

inline Matrix as_column(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline std::vector<double> from_column(const Matrix& m) {
    std::vector<double> v(static_cast<std::size_t>(m.size()));
    for (Index i = 0; i < m.rows(); ++i) v[static_cast<std::size_t>(i)] = m(i, 0);
    return v;
}

inline json varimax_json(const VarimaxOptions& v) {
    return {{"tol", v.tol}, {"max_iter", v.max_iter}, {"restarts", v.restarts}};
}

inline VarimaxOptions varimax_from_json(const json& j) {
    VarimaxOptions v;
    v.tol = j.at("tol").get<double>();
    v.max_iter = j.at("max_iter").get<int>();
    v.restarts = j.at("restarts").get<int>();
    return v;
}

}  // namespace detail

inline void validate_report(const TestReport& r) {
    require(r.null_ts1.size() == static_cast<std::size_t>(r.n_resample) &&
                r.null_ts2.size() == static_cast<std::size_t>(r.n_resample),
            "test report: null arrays do not match n_resample");
    require(r.p_kur >= 0.0 && r.p_kur <= 1.0 && r.p_var >= 0.0 && r.p_var <= 1.0, "test report: p-value outside [0,1]");
}

/// Scalar fields of a report; the null arrays are appended by report_to_json.
inline json report_header_json(const TestReport& r) {
    return {{"ts1_obs", r.ts1_obs},
            {"ts2_obs", r.ts2_obs},
            {"ts3_obs", r.ts3_obs},
            {"p_kur", r.p_kur},
            {"p_var", r.p_var},
            {"n_resample", r.n_resample},
            {"n_rows", r.n_rows},
            {"k_used", r.k_used},
            {"dropped_leading", r.dropped_leading},
            {"seed", r.seed},
            {"p_convention", to_string(r.p_convention)},
            {"varimax", detail::varimax_json(r.varimax)}};
}

inline json report_to_json(const TestReport& r) {
    json j = report_header_json(r);
    j["null_ts1"] = r.null_ts1;
    j["null_ts2"] = r.null_ts2;
    j["version"] = kVersion;
    return j;
}

inline TestReport report_from_json(const json& j) {
    try {
        TestReport r;
        r.ts1_obs = j.at("ts1_obs").get<double>();
        r.ts2_obs = j.at("ts2_obs").get<double>();
        r.ts3_obs = j.at("ts3_obs").get<double>();
        r.p_kur = j.at("p_kur").get<double>();
        r.p_var = j.at("p_var").get<double>();
        r.n_resample = j.at("n_resample").get<int>();
        r.n_rows = j.at("n_rows").get<Index>();
        r.k_used = j.at("k_used").get<Index>();
        r.dropped_leading = j.at("dropped_leading").get<bool>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.p_convention = parse_p_convention(j.at("p_convention").get<std::string>());
        r.varimax = detail::varimax_from_json(j.at("varimax"));
        if (j.contains("null_ts1")) r.null_ts1 = j.at("null_ts1").get<std::vector<double>>();
        if (j.contains("null_ts2")) r.null_ts2 = j.at("null_ts2").get<std::vector<double>>();
        return r;
    } catch (const json::exception& e) {
        throw InputError(std::string("test report: malformed JSON: ") + e.what());
    }
}

inline std::string encode_report(const TestReport& r, const json& extra = json::object()) {
    validate_report(r);
    json meta;
    meta["kind"] = "test_report";
    meta["version"] = kVersion;
    meta["report"] = report_header_json(r);
    meta["fields"] = json::array();
    if (!extra.empty()) meta["extra"] = extra;
    std::vector<double> payload;
    pack_matrix("null_ts1", detail::as_column(r.null_ts1), meta["fields"], payload);
    pack_matrix("null_ts2", detail::as_column(r.null_ts2), meta["fields"], payload);
    return encode_container(std::move(meta), payload);
}

inline TestReport decode_report(std::string_view bytes) {
    const Container c = decode_container(bytes);
    if (c.meta.value("kind", "") != "test_report") throw InputError("report file: container does not hold a test report");
    TestReport r = report_from_json(c.meta.at("report"));
    r.null_ts1 = detail::from_column(unpack_matrix(c, "null_ts1"));
    r.null_ts2 = detail::from_column(unpack_matrix(c, "null_ts2"));
    validate_report(r);
    return r;
}

inline void save_report(const std::filesystem::path& path, const TestReport& r, const json& extra = json::object()) {
    write_file_bytes(path, encode_report(r, extra));
}

inline TestReport load_report(const std::filesystem::path& path) { return decode_report(read_file_bytes(path)); }

/// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
    require(!v.empty(), "quantile: empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::string report_markdown(const TestReport& r) {
    std::ostringstream os;
    os.precision(6);
    os << "## Rotation-sensitivity test\n\n";
    os << "- rows: " << r.n_rows << ", rank k: " << r.k_used << (r.dropped_leading ? " (leading component dropped)" : "")
       << "\n";
    os << "- resamples: " << r.n_resample << ", seed: " << r.seed << ", p convention: " << to_string(r.p_convention)
       << "\n\n";
    os << "| Statistic | Observed | p-value | null 5% | null 50% | null 95% |\n";
    os << "|---|---|---|---|---|---|\n";
    os << "| TS1 (kurtosis) | " << r.ts1_obs << " | " << r.p_kur << " | " << quantile(r.null_ts1, 0.05) << " | "
       << quantile(r.null_ts1, 0.5) << " | " << quantile(r.null_ts1, 0.95) << " |\n";
    os << "| TS2 (varimax) | " << r.ts2_obs << " | " << r.p_var << " | " << quantile(r.null_ts2, 0.05) << " | "
       << quantile(r.null_ts2, 0.5) << " | " << quantile(r.null_ts2, 0.95) << " |\n\n";
    os << "TS3 (rescaled kurtosis): " << r.ts3_obs << "\n";
    return os.str();
}

}  // namespace rotsense
