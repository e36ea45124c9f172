#pragma once

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "rotsense/core.hpp"

namespace rotsense {

static_assert(std::endian::native == std::endian::little, "rotsense file formats assume a little-endian host");

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// n x d sample embeddings plus per-row metadata.
struct EmbeddingMatrix {
    Matrix data;
    std::vector<std::string> ids;
    std::optional<std::vector<int>> labels;
    std::optional<std::vector<int>> groups;
    std::string source;

    Index rows() const { return data.rows(); }
    Index cols() const { return data.cols(); }

    /// Wraps a matrix, synthesising ids 0..n-1, and validates it.
    static EmbeddingMatrix from(Matrix m, std::string source = {}) {
        EmbeddingMatrix out;
        out.data = std::move(m);
        out.ids.reserve(static_cast<std::size_t>(out.data.rows()));
        for (Index i = 0; i < out.data.rows(); ++i) out.ids.push_back(std::to_string(i));
        out.source = std::move(source);
        out.validate();
        return out;
    }

    void validate() const {
        require(rows() >= 2 && cols() >= 2, "embedding matrix must be at least 2x2, got " +
                                                std::to_string(rows()) + "x" + std::to_string(cols()));
        for (Index j = 0; j < cols(); ++j)
            for (Index i = 0; i < rows(); ++i)
                if (!std::isfinite(data(i, j)))
                    throw InputError("non-finite entry at row " + std::to_string(i) + ", col " + std::to_string(j));
        require(ids.size() == static_cast<std::size_t>(rows()), "ids length does not match row count");
        std::vector<std::string> sorted = ids;
        std::sort(sorted.begin(), sorted.end());
        require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "sample ids are not unique");
        if (labels) require(labels->size() == static_cast<std::size_t>(rows()), "labels length does not match row count");
        if (groups) require(groups->size() == static_cast<std::size_t>(rows()), "groups length does not match row count");
    }
};

enum class NormMode { none, l2_rows, degree };

inline const char* to_string(NormMode m) {
    switch (m) {
        case NormMode::none: return "none";
        case NormMode::l2_rows: return "l2_rows";
        case NormMode::degree: return "degree";
    }
    return "none";
}

inline NormMode parse_norm_mode(const std::string& s) {
    if (s == "none") return NormMode::none;
    if (s == "l2_rows") return NormMode::l2_rows;
    if (s == "degree") return NormMode::degree;
    throw InputError("unknown normalization mode '" + s + "' (expected none, l2_rows or degree)");
}

/// Everything needed to undo a normalisation.
///   degree:  A~_ij = A_ij / sqrt(row_i * col_j)
///   l2_rows: A~_ij = A_ij / row_i   (row_i is the row norm, col factors are 1)
///   none:    all factors 1
struct ScalingRecord {
    NormMode mode = NormMode::none;
    Vector row_factors;
    Vector col_factors;
    double tau_r = 0.0;
    double tau_c = 0.0;

    static ScalingRecord identity(Index n, Index d) {
        return ScalingRecord{NormMode::none, Vector::Ones(n), Vector::Ones(d), 0.0, 0.0};
    }
};

/// Text descriptions paired with their embeddings (one row each).
struct TextCorpus {
    std::vector<std::string> descriptions;
    Matrix embeddings;

    Index size() const { return embeddings.rows(); }

    void validate(std::optional<Index> width = std::nullopt) const {
        require(embeddings.rows() >= 1, "text corpus is empty");
        require(descriptions.size() == static_cast<std::size_t>(embeddings.rows()),
                "text corpus has " + std::to_string(descriptions.size()) + " descriptions but " +
                    std::to_string(embeddings.rows()) + " embedding rows");
        require(embeddings.allFinite(), "text corpus embeddings contain non-finite entries");
        if (width) {
            require(embeddings.cols() == *width, "text embedding width " + std::to_string(embeddings.cols()) +
                                                     " does not match " + std::to_string(*width));
        }
    }
};

// ---------------------------------------------------------------------------
// Normalisation
// ---------------------------------------------------------------------------

/// Raised when a regularised degree is not safely positive.
class NonPositiveDegree : public NumericError {
public:
    NonPositiveDegree(std::string axis, Index index, double value)
        : NumericError("NonPositiveDegree: " + axis + " " + std::to_string(index) + " has regularised degree " +
                       std::to_string(value) + "; use l2_rows or none"),
          axis_(std::move(axis)), index_(index), value_(value) {}

    const std::string& axis() const { return axis_; }
    Index index() const { return index_; }
    double value() const { return value_; }

private:
    std::string axis_;
    Index index_;
    double value_;
};

/// Regularised degree scaling D_r^{-1/2} A D_c^{-1/2}, with
/// D_r = diag(A 1 + tau_r), tau_r = mean row degree (columns alike).
inline std::pair<Matrix, ScalingRecord> normalize_degree(const Matrix& a, double eps = 1e-8) {
    require(eps > 0.0, "normalize_degree: eps must be positive");
    require(a.rows() >= 1 && a.cols() >= 1, "normalize_degree: empty matrix");
    ScalingRecord rec;
    rec.mode = NormMode::degree;
    const Vector deg_r = a.rowwise().sum();
    const Vector deg_c = a.colwise().sum().transpose();
    rec.tau_r = deg_r.mean();
    rec.tau_c = deg_c.mean();
    rec.row_factors = deg_r.array() + rec.tau_r;
    rec.col_factors = deg_c.array() + rec.tau_c;
    for (Index i = 0; i < rec.row_factors.size(); ++i)
        if (!(rec.row_factors(i) > eps)) throw NonPositiveDegree("row", i, rec.row_factors(i));
    for (Index j = 0; j < rec.col_factors.size(); ++j)
        if (!(rec.col_factors(j) > eps)) throw NonPositiveDegree("col", j, rec.col_factors(j));
    const Vector rs = rec.row_factors.cwiseSqrt().cwiseInverse();
    const Vector cs = rec.col_factors.cwiseSqrt().cwiseInverse();
    Matrix out = rs.asDiagonal() * a * cs.asDiagonal();
    return {std::move(out), std::move(rec)};
}

inline std::pair<Matrix, ScalingRecord> l2_normalize_rows(const Matrix& a) {
    ScalingRecord rec;
    rec.mode = NormMode::l2_rows;
    rec.row_factors = a.rowwise().norm();
    rec.col_factors = Vector::Ones(a.cols());
    for (Index i = 0; i < a.rows(); ++i)
        if (!(rec.row_factors(i) > 1e-12)) throw InputError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    Matrix out = rec.row_factors.cwiseInverse().asDiagonal() * a;
    return {std::move(out), std::move(rec)};
}

inline std::pair<Matrix, ScalingRecord> normalize(const Matrix& a, NormMode mode, double eps = 1e-8) {
    switch (mode) {
        case NormMode::degree: return normalize_degree(a, eps);
        case NormMode::l2_rows: return l2_normalize_rows(a);
        case NormMode::none: break;
    }
    return {a, ScalingRecord::identity(a.rows(), a.cols())};
}

/// Maps a matrix from normalised space back to the original scale.
inline Matrix invert_scaling(const Matrix& normalized, const ScalingRecord& rec) {
    require(rec.row_factors.size() == normalized.rows() && rec.col_factors.size() == normalized.cols(),
            "invert_scaling: scaling record does not match matrix shape");
    switch (rec.mode) {
        case NormMode::degree:
            return rec.row_factors.cwiseSqrt().asDiagonal() * normalized * rec.col_factors.cwiseSqrt().asDiagonal();
        case NormMode::l2_rows:
            return rec.row_factors.asDiagonal() * normalized;
        case NormMode::none: break;
    }
    return normalized;
}

// ---------------------------------------------------------------------------
// Raw bytes
// ---------------------------------------------------------------------------

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("write failed for '" + path.string() + "'");
}

inline std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

// ---------------------------------------------------------------------------
// NPY (v1.0, <f4 / <f8, 2-D)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string npy_dict_value(const std::string& header, const std::string& key) {
    const std::string needle = "'" + key + "'";
    const auto at = header.find(needle);
    if (at == std::string::npos) throw InputError("npy: header lacks '" + key + "'");
    auto pos = header.find(':', at + needle.size());
    if (pos == std::string::npos) throw InputError("npy: malformed header near '" + key + "'");
    ++pos;
    while (pos < header.size() && header[pos] == ' ') ++pos;
    if (pos >= header.size()) throw InputError("npy: truncated header");
    if (header[pos] == '\'') {
        const auto end = header.find('\'', pos + 1);
        if (end == std::string::npos) throw InputError("npy: unterminated string in header");
        return header.substr(pos + 1, end - pos - 1);
    }
    if (header[pos] == '(') {
        const auto end = header.find(')', pos);
        if (end == std::string::npos) throw InputError("npy: unterminated shape tuple");
        return header.substr(pos + 1, end - pos - 1);
    }
    auto end = pos;
    while (end < header.size() && header[end] != ',' && header[end] != '}') ++end;
    auto value = header.substr(pos, end - pos);
    while (!value.empty() && value.back() == ' ') value.pop_back();
    return value;
}

inline std::vector<Index> parse_shape_tuple(const std::string& tuple) {
    std::vector<Index> dims;
    std::size_t pos = 0;
    while (pos < tuple.size()) {
        while (pos < tuple.size() && (tuple[pos] == ' ' || tuple[pos] == ',')) ++pos;
        if (pos >= tuple.size()) break;
        long long v = 0;
        auto [ptr, ec] = std::from_chars(tuple.data() + pos, tuple.data() + tuple.size(), v);
        if (ec != std::errc() || v < 0) throw InputError("npy: bad shape tuple '(" + tuple + ")'");
        dims.push_back(static_cast<Index>(v));
        pos = static_cast<std::size_t>(ptr - tuple.data());
    }
    return dims;
}

}  // namespace detail

inline Matrix parse_npy(std::string_view bytes) {
    constexpr std::string_view magic("\x93NUMPY", 6);
    if (bytes.size() < 10 || bytes.substr(0, 6) != magic) throw InputError("npy: bad magic string");
    const auto major = static_cast<unsigned char>(bytes[6]);
    const auto minor = static_cast<unsigned char>(bytes[7]);
    if (major != 1 || minor != 0)
        throw InputError("npy: unsupported format version " + std::to_string(major) + "." + std::to_string(minor));
    std::uint16_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + 8, 2);
    if (bytes.size() < 10u + header_len) throw InputError("npy: truncated header");
    const std::string header(bytes.substr(10, header_len));

    const std::string descr = detail::npy_dict_value(header, "descr");
    const std::string fortran = detail::npy_dict_value(header, "fortran_order");
    const auto shape = detail::parse_shape_tuple(detail::npy_dict_value(header, "shape"));
    std::size_t width = 0;
    if (descr == "<f4") width = 4;
    else if (descr == "<f8") width = 8;
    else throw InputError("npy: unsupported dtype '" + descr + "' (expected <f4 or <f8)");
    if (fortran != "True" && fortran != "False") throw InputError("npy: bad fortran_order '" + fortran + "'");
    if (shape.size() != 2) throw InputError("npy: expected a 2-D array, got " + std::to_string(shape.size()) + "-D");

    const Index n = shape[0];
    const Index d = shape[1];
    const std::size_t count = static_cast<std::size_t>(n) * static_cast<std::size_t>(d);
    const std::size_t offset = 10u + header_len;
    if (bytes.size() < offset + count * width) throw InputError("npy: payload shorter than declared shape");

    Matrix m(n, d);
    const bool col_major = fortran == "True";
    const char* p = bytes.data() + offset;
    for (std::size_t e = 0; e < count; ++e) {
        double v = 0.0;
        if (width == 4) {
            float f = 0.0f;
            std::memcpy(&f, p + e * 4, 4);
            v = static_cast<double>(f);
        } else {
            std::memcpy(&v, p + e * 8, 8);
        }
        const Index i = col_major ? static_cast<Index>(e % static_cast<std::size_t>(n)) : static_cast<Index>(e / static_cast<std::size_t>(d));
        const Index j = col_major ? static_cast<Index>(e / static_cast<std::size_t>(n)) : static_cast<Index>(e % static_cast<std::size_t>(d));
        m(i, j) = v;
    }
    return m;
}

inline std::string encode_npy(const Matrix& m) {
    std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" + std::to_string(m.rows()) + ", " +
                         std::to_string(m.cols()) + "), }";
    // Pad so that the data starts on a 64-byte boundary, header ends with '\n'.
    const std::size_t total = 10 + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header.push_back('\n');
    std::string out("\x93NUMPY\x01\x00", 8);
    const auto len = static_cast<std::uint16_t>(header.size());
    out.append(reinterpret_cast<const char*>(&len), 2);
    out += header;
    out.reserve(out.size() + static_cast<std::size_t>(m.size()) * 8);
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            out.append(reinterpret_cast<const char*>(&v), 8);
        }
    return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {

// RFC 4180 record splitter: quoted fields may contain commas, doubled quotes
// and line breaks.
inline std::vector<std::vector<std::string>> split_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !field.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            row.clear();
            field.clear();
            any = false;
        } else {
            field.push_back(c);
            any = true;
        }
    }
    if (quoted) throw InputError("csv: unterminated quoted field");
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc::result_out_of_range) return std::numeric_limits<double>::infinity();
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace detail

inline Matrix parse_csv(std::string_view text) {
    auto rows = detail::split_csv(text);
    if (rows.empty()) throw InputError("csv: no rows");
    std::size_t first = 0;
    for (const auto& f : rows[0]) {
        if (!detail::parse_double(f)) {
            first = 1;
            break;
        }
    }
    if (rows.size() <= first) throw InputError("csv: header but no data rows");
    const std::size_t d = rows[first].size();
    Matrix m(static_cast<Index>(rows.size() - first), static_cast<Index>(d));
    for (std::size_t r = first; r < rows.size(); ++r) {
        const auto i = static_cast<Index>(r - first);
        if (rows[r].size() != d)
            throw InputError("csv: row " + std::to_string(i) + " has " + std::to_string(rows[r].size()) +
                             " fields, expected " + std::to_string(d));
        for (std::size_t c = 0; c < d; ++c) {
            const auto v = detail::parse_double(rows[r][c]);
            if (!v) throw InputError("csv: cannot parse '" + rows[r][c] + "' at row " + std::to_string(i) + ", col " + std::to_string(c));
            m(i, static_cast<Index>(c)) = *v;
        }
    }
    return m;
}

inline std::string encode_csv(const Matrix& m) {
    std::string out;
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) out.push_back(',');
            out += detail::format_double(m(i, j));
        }
        out.push_back('\n');
    }
    return out;
}

// ---------------------------------------------------------------------------
// Container: "ROTSENSE" | u32 version | u32 meta length | JSON meta | f64 payload
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::string_view kContainerMagic = "ROTSENSE";

struct Container {
    json meta;
    std::vector<double> payload;
};

inline std::string encode_container(json meta, const std::vector<double>& payload) {
    const std::string_view raw(reinterpret_cast<const char*>(payload.data()), payload.size() * sizeof(double));
    meta["dtype"] = "<f8";
    meta["payload_count"] = payload.size();
    meta["crc32"] = crc32_of(raw);
    const std::string meta_text = meta.dump();
    std::string out(kContainerMagic);
    const std::uint32_t version = kContainerVersion;
    const auto meta_len = static_cast<std::uint32_t>(meta_text.size());
    out.append(reinterpret_cast<const char*>(&version), 4);
    out.append(reinterpret_cast<const char*>(&meta_len), 4);
    out += meta_text;
    out.append(raw);
    return out;
}

inline Container decode_container(std::string_view bytes) {
    if (bytes.size() < 16 || bytes.substr(0, 8) != kContainerMagic) throw InputError("container: bad magic");
    std::uint32_t version = 0;
    std::uint32_t meta_len = 0;
    std::memcpy(&version, bytes.data() + 8, 4);
    std::memcpy(&meta_len, bytes.data() + 12, 4);
    if (version != kContainerVersion)
        throw InputError("container: version mismatch (file " + std::to_string(version) + ", reader " +
                         std::to_string(kContainerVersion) + ")");
    if (bytes.size() < 16u + meta_len) throw InputError("container: truncated metadata");
    Container c;
    try {
        c.meta = json::parse(bytes.substr(16, meta_len));
    } catch (const json::exception& e) {
        throw InputError(std::string("container: metadata is not valid JSON: ") + e.what());
    }
    const auto raw = bytes.substr(16 + meta_len);
    if (!c.meta.contains("payload_count") || !c.meta.contains("crc32")) throw InputError("container: metadata lacks payload_count/crc32");
    const auto count = c.meta.at("payload_count").get<std::size_t>();
    if (raw.size() != count * sizeof(double))
        throw InputError("container: payload has " + std::to_string(raw.size()) + " bytes, expected " + std::to_string(count * 8));
    if (crc32_of(raw) != c.meta.at("crc32").get<std::uint32_t>()) throw InputError("container: checksum failure");
    c.payload.resize(count);
    if (count) std::memcpy(c.payload.data(), raw.data(), raw.size());
    return c;
}

/// Appends a row-major matrix to a payload and records its slot in `fields`.
inline void pack_matrix(const std::string& name, const Matrix& m, json& fields, std::vector<double>& payload) {
    fields.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", payload.size()}});
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) payload.push_back(m(i, j));
}

inline Matrix unpack_matrix(const Container& c, const std::string& name) {
    for (const auto& f : c.meta.at("fields")) {
        if (f.at("name") != name) continue;
        const auto rows = f.at("shape").at(0).get<Index>();
        const auto cols = f.at("shape").at(1).get<Index>();
        const auto offset = f.at("offset").get<std::size_t>();
        if (offset + static_cast<std::size_t>(rows * cols) > c.payload.size())
            throw InputError("container: field '" + name + "' overruns payload");
        Matrix m(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) m(i, j) = c.payload[offset + static_cast<std::size_t>(i * cols + j)];
        return m;
    }
    throw InputError("container: missing field '" + name + "'");
}

// ---------------------------------------------------------------------------
// Embedding matrix files
// ---------------------------------------------------------------------------

enum class MatrixFormat { npy, csv, rawbin };

inline MatrixFormat parse_matrix_format(const std::string& s) {
    if (s == "npy") return MatrixFormat::npy;
    if (s == "csv") return MatrixFormat::csv;
    if (s == "rawbin") return MatrixFormat::rawbin;
    throw InputError("unknown matrix format '" + s + "' (expected npy, csv or rawbin)");
}

inline MatrixFormat format_from_extension(const std::filesystem::path& p) {
    const auto ext = p.extension().string();
    if (ext == ".npy") return MatrixFormat::npy;
    if (ext == ".csv") return MatrixFormat::csv;
    if (ext == ".rsb" || ext == ".bin" || ext == ".rawbin") return MatrixFormat::rawbin;
    throw InputError("cannot infer matrix format from '" + p.string() + "'; pass --format");
}

inline std::string encode_rawbin(const EmbeddingMatrix& a) {
    json meta;
    meta["kind"] = "embedding_matrix";
    meta["shape"] = {a.rows(), a.cols()};
    meta["fields"] = json::array();
    std::vector<double> payload;
    payload.reserve(static_cast<std::size_t>(a.data.size()));
    pack_matrix("data", a.data, meta["fields"], payload);
    meta["ids"] = a.ids;
    if (a.labels) meta["labels"] = *a.labels;
    if (a.groups) meta["groups"] = *a.groups;
    meta["source"] = a.source;
    return encode_container(std::move(meta), payload);
}

inline EmbeddingMatrix decode_rawbin(std::string_view bytes) {
    const Container c = decode_container(bytes);
    if (c.meta.value("kind", "") != "embedding_matrix") throw InputError("rawbin: container does not hold an embedding matrix");
    EmbeddingMatrix a;
    a.data = unpack_matrix(c, "data");
    if (c.meta.contains("ids")) a.ids = c.meta.at("ids").get<std::vector<std::string>>();
    if (c.meta.contains("labels")) a.labels = c.meta.at("labels").get<std::vector<int>>();
    if (c.meta.contains("groups")) a.groups = c.meta.at("groups").get<std::vector<int>>();
    a.source = c.meta.value("source", "");
    return a;
}

inline EmbeddingMatrix load_matrix(const std::filesystem::path& path, MatrixFormat format) {
    const std::string bytes = read_file_bytes(path);
    EmbeddingMatrix a;
    switch (format) {
        case MatrixFormat::npy: a.data = parse_npy(bytes); break;
        case MatrixFormat::csv: a.data = parse_csv(bytes); break;
        case MatrixFormat::rawbin: a = decode_rawbin(bytes); break;
    }
    if (a.ids.empty())
        for (Index i = 0; i < a.data.rows(); ++i) a.ids.push_back(std::to_string(i));
    a.source = path.string();
    a.validate();
    return a;
}

inline EmbeddingMatrix load_matrix(const std::filesystem::path& path) {
    return load_matrix(path, format_from_extension(path));
}

inline void save_matrix(const std::filesystem::path& path, const EmbeddingMatrix& a, MatrixFormat format) {
    switch (format) {
        case MatrixFormat::npy: write_file_bytes(path, encode_npy(a.data)); break;
        case MatrixFormat::csv: write_file_bytes(path, encode_csv(a.data)); break;
        case MatrixFormat::rawbin: write_file_bytes(path, encode_rawbin(a)); break;
    }
}

/// One integer per line (blank lines ignored); used for labels and groups.
inline std::vector<int> load_int_column(const std::filesystem::path& path) {
    std::istringstream in(read_file_bytes(path));
    std::vector<int> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = detail::trim(line);
        if (t.empty() || t == "\r") continue;
        int v = 0;
        auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (ec != std::errc()) throw InputError(path.string() + ":" + std::to_string(lineno) + ": not an integer");
        out.push_back(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Text corpora: JSON lines {"text": ...} + an embeddings matrix file
// ---------------------------------------------------------------------------

inline std::vector<std::string> load_jsonl_texts(const std::filesystem::path& path) {
    std::istringstream in(read_file_bytes(path));
    std::vector<std::string> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        try {
            out.push_back(json::parse(line).at("text").get<std::string>());
        } catch (const json::exception& e) {
            throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline void save_jsonl_texts(const std::filesystem::path& path, const std::vector<std::string>& texts) {
    std::string out;
    for (const auto& t : texts) out += json{{"text", t}}.dump() + "\n";
    write_file_bytes(path, out);
}

inline TextCorpus load_text_corpus(const std::filesystem::path& texts, const std::filesystem::path& embeddings) {
    TextCorpus t;
    t.descriptions = load_jsonl_texts(texts);
    const std::string bytes = read_file_bytes(embeddings);
    switch (format_from_extension(embeddings)) {
        case MatrixFormat::npy: t.embeddings = parse_npy(bytes); break;
        case MatrixFormat::csv: t.embeddings = parse_csv(bytes); break;
        case MatrixFormat::rawbin: t.embeddings = decode_rawbin(bytes).data; break;
    }
    t.validate();
    return t;
}

}  // namespace rotsense
