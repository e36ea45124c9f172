#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>

#include "rotsense/io.hpp"
#include "rotsense/persist.hpp"

using namespace rotsense;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "rotsense_unit_io";
    fs::create_directories(dir);
    return dir / name;
}

// Hand-rolled NPY v1.0 writer for <f4, kept apart from the library encoder.
std::string npy_f4(const std::vector<float>& values, int rows, int cols, bool fortran) {
    std::string dict = "{'descr': '<f4', 'fortran_order': " + std::string(fortran ? "True" : "False") +
                       ", 'shape': (" + std::to_string(rows) + ", " + std::to_string(cols) + "), }";
    std::size_t total = 10 + dict.size() + 1;
    dict.append((16 - total % 16) % 16, ' ');
    dict += '\n';
    std::string out = "\x93NUMPY";
    out += '\x01';
    out += '\x00';
    const auto len = static_cast<std::uint16_t>(dict.size());
    out += static_cast<char>(len & 0xff);
    out += static_cast<char>(len >> 8);
    out += dict;
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
    return out;
}

}  // namespace

TEST(LoadMatrix, CsvThreeByTwo) {
    const auto p = scratch("small.csv");
    write_file_bytes(p, "1.5,2\n-3,4e-2\n5,6\n");
    const auto a = load_matrix(p);
    ASSERT_EQ(a.rows(), 3);
    ASSERT_EQ(a.cols(), 2);
    EXPECT_EQ(a.data(1, 1), 4e-2);
    EXPECT_EQ(a.ids[2], "2");
}

TEST(LoadMatrix, CsvHeaderAndQuotedFields) {
    const auto p = scratch("header.csv");
    write_file_bytes(p, "\"x, first\",y\r\n\"1\",2\r\n3,4\r\n");
    const auto a = load_matrix(p);
    ASSERT_EQ(a.rows(), 2);
    EXPECT_EQ(a.data(0, 0), 1.0);
    EXPECT_EQ(a.data(1, 1), 4.0);
}

TEST(LoadMatrix, CsvNaNNamesTheCell) {
    const auto p = scratch("nan.csv");
    write_file_bytes(p, "1,2\n3,NaN\n");
    try {
        load_matrix(p);
        FAIL() << "expected an error";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("row 1, col 1"), std::string::npos) << e.what();
    }
}

TEST(LoadMatrix, NpyFloat32BitExact) {
    std::vector<float> v(20);
    for (int i = 0; i < 20; ++i) v[static_cast<std::size_t>(i)] = 0.1f * static_cast<float>(i) - 0.77f;
    const auto p = scratch("f4.npy");
    write_file_bytes(p, npy_f4(v, 5, 4, false));
    const auto a = load_matrix(p);
    ASSERT_EQ(a.rows(), 5);
    ASSERT_EQ(a.cols(), 4);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) EXPECT_EQ(a.data(i, j), static_cast<double>(v[static_cast<std::size_t>(i * 4 + j)]));
}

TEST(LoadMatrix, NpyFortranOrderIsTransposedIntoRows) {
    // Column-major storage of [[1,2,3],[4,5,6]].
    const std::vector<float> v = {1, 4, 2, 5, 3, 6};
    const auto p = scratch("fortran.npy");
    write_file_bytes(p, npy_f4(v, 2, 3, true));
    const auto a = load_matrix(p);
    ASSERT_EQ(a.rows(), 2);
    EXPECT_EQ(a.data(0, 2), 3.0);
    EXPECT_EQ(a.data(1, 0), 4.0);
}

TEST(LoadMatrix, RejectsUnsupportedDtypeAndTinyShapes) {
    std::string bytes = npy_f4({1, 2, 3, 4}, 2, 2, false);
    const auto at = bytes.find("<f4");
    bytes.replace(at, 3, "<i4");
    EXPECT_THROW(parse_npy(bytes), InputError);
    const auto p = scratch("one_col.csv");
    write_file_bytes(p, "1\n2\n3\n");
    EXPECT_THROW(load_matrix(p), InputError);
}

TEST(LoadMatrix, NpyRoundTripThroughEncoder) {
    Rng rng(3);
    const Matrix m = standard_normal(7, 3, rng);
    EXPECT_EQ(parse_npy(encode_npy(m)), m);
}

TEST(LoadMatrix, RawbinRoundTripIsBitExact) {
    Rng rng(5);
    EmbeddingMatrix a = EmbeddingMatrix::from(standard_normal(9, 4, rng), "unit");
    a.labels = std::vector<int>{0, 1, 0, 1, 0, 1, 0, 1, 0};
    const auto p = scratch("m.rsb");
    save_matrix(p, a, MatrixFormat::rawbin);
    const auto b = load_matrix(p);
    EXPECT_EQ(std::memcmp(a.data.data(), b.data.data(), sizeof(double) * 36), 0);
    EXPECT_EQ(b.ids, a.ids);
    EXPECT_EQ(*b.labels, *a.labels);
}

TEST(EmbeddingMatrix, RejectsDuplicateIdsAndBadLabelLength) {
    EmbeddingMatrix a = EmbeddingMatrix::from(Matrix::Ones(3, 2));
    a.ids[2] = "0";
    EXPECT_THROW(a.validate(), InputError);
    a.ids[2] = "2";
    a.groups = std::vector<int>{1, 2};
    EXPECT_THROW(a.validate(), InputError);
}

TEST(NormalizeDegree, AllOnes) {
    const auto [out, rec] = normalize_degree(Matrix::Ones(2, 2));
    EXPECT_DOUBLE_EQ(rec.tau_r, 2.0);
    EXPECT_DOUBLE_EQ(rec.row_factors(0), 4.0);
    EXPECT_DOUBLE_EQ(rec.col_factors(1), 4.0);
    EXPECT_TRUE(out.isApproxToConstant(0.25, 1e-15));
}

TEST(NormalizeDegree, ScalarArithmeticOracle) {
    Matrix a(2, 2);
    a << 1, 3, 3, 5;
    // Row degrees 4, 8 (mean 6): factors 10, 14. Columns identical by symmetry.
    const double r[2] = {10.0, 14.0};
    const double c[2] = {10.0, 14.0};
    const auto [out, rec] = normalize_degree(a);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) EXPECT_NEAR(out(i, j), a(i, j) / std::sqrt(r[i] * c[j]), 1e-12);
}

TEST(NormalizeDegree, NegativeRowRaises) {
    Matrix a(3, 2);
    a << -5, -5, 1, 1, 0.5, 0.5;
    try {
        normalize_degree(a);
        FAIL() << "expected NonPositiveDegree";
    } catch (const NonPositiveDegree& e) {
        EXPECT_EQ(e.axis(), "row");
        EXPECT_EQ(e.index(), 0);
        EXPECT_LT(e.value(), 0.0);
        EXPECT_EQ(e.kind(), Error::Kind::numeric);
    }
}

TEST(NormalizeDegree, InverseScalingRecoversInput) {
    Rng rng(9);
    const Matrix a = standard_normal(30, 8, rng).cwiseAbs();
    const auto [out, rec] = normalize_degree(a);
    const Matrix back = invert_scaling(out, rec);
    EXPECT_LE((back - a).norm() / a.norm(), 1e-10);
}

TEST(L2Rows, ThreeFourFive) {
    Matrix a(2, 2);
    a << 3, 4, 1, 0;
    const auto [out, rec] = l2_normalize_rows(a);
    EXPECT_NEAR(out(0, 0), 0.6, 1e-15);
    EXPECT_NEAR(out(0, 1), 0.8, 1e-15);
    EXPECT_DOUBLE_EQ(rec.row_factors(0), 5.0);
    EXPECT_TRUE(rec.col_factors.isOnes());
}

TEST(L2Rows, IdempotentAndUnitNorm) {
    Rng rng(2);
    const Matrix a = standard_normal(10, 5, rng);
    const auto [once, r1] = l2_normalize_rows(a);
    for (Index i = 0; i < 10; ++i) EXPECT_NEAR(once.row(i).norm(), 1.0, 1e-12);
    const auto [twice, r2] = l2_normalize_rows(once);
    EXPECT_LE((twice - once).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(l2_normalize_rows(Matrix::Zero(2, 2)), InputError);
}

namespace {

ConceptModel fixture_model(Index n, Index d, Index k, std::uint64_t seed) {
    Rng rng(seed);
    ConceptModel m;
    Eigen::HouseholderQR<Matrix> qr(standard_normal(d, k, rng));
    m.Y = qr.householderQ() * Matrix::Identity(d, k);
    m.Z = standard_normal(n, k, rng);
    m.k = k;
    m.seed = seed;
    m.canonical = true;
    m.singular_values = Vector::LinSpaced(k, 10.0, 1.0);
    m.scaling = ScalingRecord::identity(n, d);
    m.scaling.mode = NormMode::degree;
    m.scaling.row_factors = Vector::LinSpaced(n, 1.0, 2.0);
    m.scaling.tau_r = 0.3;
    for (Index i = 0; i < n; ++i) m.ids.push_back("img" + std::to_string(i));
    return m;
}

}  // namespace

TEST(Persist, ModelRoundTripIsExact) {
    const auto m = fixture_model(40, 12, 5, 1);
    const auto p = scratch("model.rsb");
    save_model(p, m);
    const auto b = load_model(p);
    EXPECT_EQ(b.Y, m.Y);
    EXPECT_EQ(b.Z, m.Z);
    EXPECT_EQ(b.singular_values, m.singular_values);
    EXPECT_EQ(b.scaling.row_factors, m.scaling.row_factors);
    EXPECT_EQ(b.scaling.mode, NormMode::degree);
    EXPECT_EQ(b.scaling.tau_r, 0.3);
    EXPECT_EQ(b.ids, m.ids);
    EXPECT_EQ(b.seed, 1u);
}

TEST(Persist, LargeModelShapesPreserved) {
    const auto m = fixture_model(60, 512, 50, 2);
    const auto b = decode_model(encode_model(m));
    EXPECT_EQ(b.Y.rows(), 512);
    EXPECT_EQ(b.Y.cols(), 50);
    EXPECT_EQ(b.k, 50);
}

TEST(Persist, CorruptedChecksumIsRejected) {
    std::string bytes = encode_model(fixture_model(10, 4, 2, 3));
    bytes[bytes.size() - 3] ^= 0x5a;
    try {
        decode_model(bytes);
        FAIL() << "expected checksum failure";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
    }
}

TEST(Persist, VersionMismatchIsRejected) {
    std::string bytes = encode_model(fixture_model(10, 4, 2, 3));
    bytes[8] = 2;
    try {
        decode_model(bytes);
        FAIL() << "expected version mismatch";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
}

TEST(Persist, ReportRoundTrip) {
    TestReport r;
    r.ts1_obs = 0.125;
    r.ts2_obs = 1.0 / 3.0;
    r.ts3_obs = -0.7;
    r.null_ts1 = {0.1, 0.2, 0.3};
    r.null_ts2 = {0.4, 0.5, 0.6};
    r.n_resample = 3;
    r.p_kur = 0.25;
    r.p_var = 1.0;
    r.seed = 0xfeedbeefcafeULL;
    r.k_used = 4;
    r.n_rows = 100;
    r.p_convention = PConvention::paper;
    const auto p = scratch("report.rsb");
    save_report(p, r);
    const auto b = load_report(p);
    EXPECT_EQ(b.ts2_obs, r.ts2_obs);
    EXPECT_EQ(b.null_ts1, r.null_ts1);
    EXPECT_EQ(b.null_ts2, r.null_ts2);
    EXPECT_EQ(b.seed, r.seed);
    EXPECT_EQ(b.p_convention, PConvention::paper);
    const auto j = report_from_json(report_to_json(r));
    EXPECT_EQ(j.ts2_obs, r.ts2_obs);
    EXPECT_EQ(j.null_ts2, r.null_ts2);
}

TEST(TextCorpus, JsonlPairing) {
    const auto t = scratch("texts.jsonl");
    const auto e = scratch("texts.csv");
    save_jsonl_texts(t, {"a red bird", "water, \"calm\""});
    write_file_bytes(e, "1,0,0\n0,1,0\n");
    const auto c = load_text_corpus(t, e);
    ASSERT_EQ(c.size(), 2);
    EXPECT_EQ(c.descriptions[1], "water, \"calm\"");
    write_file_bytes(e, "1,0,0\n");
    EXPECT_THROW(load_text_corpus(t, e), InputError);
}
