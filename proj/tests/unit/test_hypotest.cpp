#include <gtest/gtest.h>

#include <cmath>

#include "rotsense/eval.hpp"
#include "rotsense/hypotest.hpp"
#include "support/stats.hpp"

using namespace rotsense;

namespace {

double naive_excess_kurtosis(const Matrix& m, Index j) {
    const double n = static_cast<double>(m.rows());
    double mu = 0.0;
    for (Index i = 0; i < m.rows(); ++i) mu += m(i, j);
    mu /= n;
    double m2 = 0.0, m4 = 0.0;
    for (Index i = 0; i < m.rows(); ++i) {
        const double c = m(i, j) - mu;
        m2 += c * c;
        m4 += c * c * c * c;
    }
    m2 /= n;
    m4 /= n;
    return m4 / (m2 * m2) - 3.0;
}

TestOptions quick(int resamples = 19) {
    TestOptions o;
    o.n_resample = resamples;
    o.varimax.restarts = 2;
    o.varimax.tol = 1e-6;
    return o;
}

}  // namespace

TEST(Ts1, TwoPointColumn) {
    Matrix m(8, 1);
    m << -1, 1, -1, 1, -1, 1, -1, 1;
    EXPECT_NEAR(ts1_kurtosis(m), 2.0, 1e-14);
}

TEST(Ts1, GaussianIsNearZero) {
    Rng rng(1);
    EXPECT_LE(ts1_kurtosis(standard_normal(1000000, 1, rng)), 0.02);
}

TEST(Ts1, SmallMatrixMatchesNaiveFormula) {
    Matrix m(6, 2);
    m << 0.3, -1.2, 2.5, 0.7, -0.4, 0.1, 1.1, 3.3, -2.0, -0.6, 0.9, 0.05;
    const double expected = (std::abs(naive_excess_kurtosis(m, 0)) + std::abs(naive_excess_kurtosis(m, 1))) / 2.0;
    EXPECT_NEAR(ts1_kurtosis(m), expected, 1e-12);
}

TEST(Ts1, GuardsAndInvariances) {
    EXPECT_THROW(ts1_kurtosis(Matrix::Ones(3, 2)), InputError);
    Matrix c = Matrix::Ones(10, 2);
    c.col(1) = Vector::LinSpaced(10, 0, 1);
    EXPECT_THROW(ts1_kurtosis(c), NumericError);

    Rng rng(2);
    const Matrix m = standard_normal(60, 3, rng).array().cube();
    Matrix scaled = m;
    scaled.col(0) *= 7.0;
    scaled.col(2) *= 0.01;
    EXPECT_NEAR(ts1_kurtosis(scaled), ts1_kurtosis(m), 1e-10);
    EXPECT_NEAR(ts1_kurtosis(m.colwise().reverse()), ts1_kurtosis(m), 1e-12);
}

TEST(Ts3, MatchesFormulaAndIsCentred) {
    Matrix m(4, 2);
    m << -1, 1, 1, -1, -1, 0, 1, 0;
    const double n = 4.0;
    const double mean_kurt = (naive_excess_kurtosis(m, 0) + 3.0 + naive_excess_kurtosis(m, 1) + 3.0) / 2.0;
    EXPECT_NEAR(ts3_rescaled(m), std::sqrt(n * 2.0 / 24.0) * (mean_kurt - 3.0 * n / (n + 2.0)), 1e-12);

    // n = 6 puts the centre at 18/8; columns with kurtosis 1.5 and 3 average to it.
    Matrix exact(6, 2);
    exact << 1, 1, -1, -1, 1, 0, -1, 0, 0, 0, 0, 0;
    EXPECT_NEAR(ts3_rescaled(exact), 0.0, 1e-12);
}

TEST(Ts3, ScaleFreeAndConstantSwap) {
    Rng rng(3);
    const Matrix g = standard_normal(200, 4, rng);
    EXPECT_NEAR(ts3_rescaled(2.0 * g), ts3_rescaled(g), 1e-10);
    EXPECT_NEAR(ts3_rescaled(g, kPublishedKurtosisVariance) * std::sqrt(33.0), ts3_rescaled(g) * std::sqrt(24.0), 1e-9);
}

TEST(Ts2, AlreadySparseIsOptimal) {
    Matrix m = Matrix::Zero(60, 3);
    for (Index i = 0; i < 60; ++i) m(i, i % 3) = 1.0 + 0.01 * static_cast<double>(i);
    Rng rng(4);
    EXPECT_NEAR(ts2_varimax(m, VarimaxOptions{}, rng), varimax_objective(m), 1e-9);
}

TEST(Ts2, RotationOfTheStartingFrameDoesNotMatter) {
    Rng rng(5);
    const Matrix m = standard_normal(300, 4, rng).array().cube();
    const Matrix r0 = sample_haar_rotation(4, rng);
    EXPECT_NEAR(ts2_varimax(m * r0, VarimaxOptions{}, rng), ts2_varimax(m, VarimaxOptions{}, rng), 1e-6);
}

TEST(Ts2, PlantedBeatsGaussian) {
    Rng rng(6);
    VarimaxOptions opt;
    opt.restarts = 2;
    int wins = 0;
    for (int t = 0; t < 100; ++t) {
        const Matrix g = standard_normal(1000, 5, rng);
        auto planted = make_planted_concepts(1000, 5, 5, KurtosisFamily::two_point, 0.0, rng);
        wins += ts2_varimax(planted.A.data, opt, rng) > ts2_varimax(g, opt, rng) ? 1 : 0;
    }
    EXPECT_GE(wins, 99);
}

TEST(MonteCarloP, Conventions) {
    const std::vector<double> null = {1.0, 1.0, 1.0, 1.0};
    EXPECT_EQ(monte_carlo_p(1.0, null, PConvention::paper), 0.0);
    EXPECT_EQ(monte_carlo_p(1.0, null, PConvention::standard_mc), 1.0);
    const std::vector<double> ramp = {0.1, 0.2, 0.3, 0.4};
    EXPECT_EQ(monte_carlo_p(0.35, ramp, PConvention::paper), 0.75);
    EXPECT_EQ(monte_carlo_p(0.35, ramp, PConvention::standard_mc), 2.0 / 5.0);
    EXPECT_EQ(monte_carlo_p(9.0, ramp, PConvention::standard_mc), 1.0 / 5.0);
    EXPECT_EQ(parse_p_convention("paper"), PConvention::paper);
    EXPECT_THROW(parse_p_convention("bonferroni"), InputError);
}

TEST(RunTest, Preconditions) {
    Rng rng(7);
    EXPECT_THROW(run_test(standard_normal(3, 4, rng), quick(), 1), InputError);
    EXPECT_THROW(run_test(standard_normal(30, 1, rng), quick(), 1), InputError);
    EXPECT_THROW(run_test(standard_normal(30, 3, rng), quick(18), 1), InputError);
}

TEST(RunTest, ReportShapeAndRanges) {
    Rng rng(8);
    const auto rep = run_test(standard_normal(200, 4, rng), quick(), 5);
    EXPECT_EQ(rep.null_ts1.size(), 19u);
    EXPECT_EQ(rep.null_ts2.size(), 19u);
    EXPECT_GE(rep.p_kur, 1.0 / 20.0);
    EXPECT_LE(rep.p_kur, 1.0);
    EXPECT_EQ(rep.k_used, 4);
    EXPECT_EQ(rep.seed, 5u);
}

TEST(RunTest, BitReproducibleAcrossThreadCounts) {
    Rng rng(9);
    const Matrix u = standard_normal(300, 5, rng);
    auto opt = quick(39);
    const auto a = run_test(u, opt, 123);
    opt.threads = 4;
    const auto b = run_test(u, opt, 123);
    opt.threads = 16;
    const auto c = run_test(u, opt, 123);
    EXPECT_EQ(a.null_ts1, b.null_ts1);
    EXPECT_EQ(a.null_ts2, c.null_ts2);
    EXPECT_EQ(a.p_var, c.p_var);
    EXPECT_EQ(a.ts2_obs, b.ts2_obs);
}

TEST(RunTest, DetectsPlantedSparseStructure) {
    Rng rng(10);
    const auto planted = make_planted_concepts(2000, 16, 4, KurtosisFamily::two_point, 0.05, rng);
    const auto svd = truncated_svd(planted.A.data, 4);
    const auto rep = run_test(svd.U, quick(39), 11);
    EXPECT_EQ(rep.p_kur, 1.0 / 40.0);
    EXPECT_EQ(rep.p_var, 1.0 / 40.0);
    const auto paper = [&] {
        auto o = quick(39);
        o.p_convention = PConvention::paper;
        return run_test(svd.U, o, 11);
    }();
    EXPECT_EQ(paper.p_kur, 1.0);
}

// Under the null the rank of the observed statistic among the resamples is
// uniform, so standard_mc p-values are (discretely) uniform.
TEST(RunTest, NullRanksAreUniform) {
    std::vector<double> p;
    for (std::uint64_t s = 0; s < 120; ++s) {
        Rng rng = substream(900, s);
        const auto rep = run_test(standard_normal(150, 3, rng), quick(19), s);
        p.push_back(rep.p_var);
    }
    // Discrete uniform on {1/20, ..., 1}: shift by half a step before the KS test.
    for (auto& x : p) x -= 0.5 / 20.0;
    EXPECT_GT(testsupport::ks_uniform_p(p), 0.01);
}

TEST(RankSweep, DegenerateAndRangeChecks) {
    Rng rng(12);
    const auto svd = truncated_svd(standard_normal(100, 2, rng), 2);
    const auto out = rank_sweep(svd, {2}, false, quick(), 3);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].first, 2);
    EXPECT_THROW(rank_sweep(svd, {2}, true, quick(), 3), InputError);
    EXPECT_THROW(rank_sweep(svd, {3}, false, quick(), 3), InputError);
}

TEST(RankSweep, PlantedRankFiveIsMoreSignificantThanThirty) {
    auto opt = quick(19);
    opt.varimax.restarts = 1;
    opt.varimax.tol = 1e-5;
    int ok = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        Rng rng = substream(77, s);
        // Structure only in the leading 5 directions; isotropic noise elsewhere.
        auto planted = make_planted_concepts(1000, 40, 5, KurtosisFamily::two_point, 0.0, rng);
        Matrix a = 4.0 * planted.A.data + standard_normal(1000, 40, rng);
        const auto svd = truncated_svd(a, 30);
        const auto sweep = rank_sweep(svd, {5, 30}, false, opt, s);
        ok += sweep[0].second.p_kur <= sweep[1].second.p_kur ? 1 : 0;
    }
    EXPECT_GE(ok, 9);
}
