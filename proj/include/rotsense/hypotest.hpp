#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "rotsense/core.hpp"
#include "rotsense/spectra.hpp"
#include "rotsense/varimax.hpp"

namespace rotsense {

/// Null variance constant of n * sum_j u_j^4 for a Haar-uniform unit vector in
/// R^n (asymptotically 24/n). Scaling by sqrt(n k / 24) gives TS3 unit variance.
inline constexpr double kHaarKurtosisVariance = 24.0;
/// The constant 33 that appears in the published derivation; kept so the
/// difference can be measured. It under-scales TS3 (variance ~ 24/33).
inline constexpr double kPublishedKurtosisVariance = 33.0;

namespace detail {

// Population (1/n) central moments -> m4 / m2^2 (not excess).
inline double raw_kurtosis(const Eigen::Ref<const Vector>& x, Index column) {
    const double n = static_cast<double>(x.size());
    const double mean = x.mean();
    const auto centered = x.array() - mean;
    const double m2 = centered.square().sum() / n;
    const double m4 = centered.square().square().sum() / n;
    const double scale = x.cwiseAbs().maxCoeff();
    const double floor = 16.0 * std::numeric_limits<double>::epsilon() * scale;
    if (!(m2 > floor * floor)) {
        throw NumericError("kurtosis: column " + std::to_string(column) + " has zero variance");
    }
    return m4 / (m2 * m2);
}

inline void check_moment_input(const Matrix& m, const char* who) {
    require(m.rows() >= 4, std::string(who) + ": need n >= 4 rows, got " + std::to_string(m.rows()));
    require(m.cols() >= 1, std::string(who) + ": need at least one column");
}

}  // namespace detail

/// Excess kurtosis E[(X-mu)^4] / E[(X-mu)^2]^2 - 3 of every column.
inline Vector excess_kurtosis(const Matrix& m) {
    detail::check_moment_input(m, "excess_kurtosis");
    Vector out(m.cols());
    for (Index j = 0; j < m.cols(); ++j) out(j) = detail::raw_kurtosis(m.col(j), j) - 3.0;
    return out;
}

/// TS1: mean absolute excess kurtosis over columns.
inline double ts1_kurtosis(const Matrix& m) {
    return excess_kurtosis(m).cwiseAbs().mean();
}

/// TS3: TS1's kurtosis shifted back by +3 and centred at the Haar-null mean
/// 3n/(n+2), scaled by sqrt(n k / variance_constant).
inline double ts3_rescaled(const Matrix& m, double variance_constant = kHaarKurtosisVariance) {
    detail::check_moment_input(m, "ts3_rescaled");
    require(variance_constant > 0.0, "ts3_rescaled: variance constant must be positive");
    const double n = static_cast<double>(m.rows());
    const double k = static_cast<double>(m.cols());
    double mean_abs = 0.0;
    for (Index j = 0; j < m.cols(); ++j) mean_abs += std::abs(detail::raw_kurtosis(m.col(j), j));
    mean_abs /= k;
    return std::sqrt(n * k / variance_constant) * (mean_abs - 3.0 * n / (n + 2.0));
}

/// TS2: the maximised varimax objective.
inline double ts2_varimax(const Matrix& m, const VarimaxOptions& opt, Rng& rng) {
    return varimax_rotate(m, opt, rng).objective;
}

enum class PConvention {
    /// (1/N) #{TS_obs > TS_null,i}: large when the observation beats the null.
    paper,
    /// (1 + #{TS_null,i >= TS_obs}) / (N + 1): small means structure.
    standard_mc,
};

inline const char* to_string(PConvention c) {
    return c == PConvention::paper ? "paper" : "standard_mc";
}

inline PConvention parse_p_convention(const std::string& s) {
    if (s == "paper") return PConvention::paper;
    if (s == "standard_mc") return PConvention::standard_mc;
    throw InputError("unknown p-value convention '" + s + "' (expected paper or standard_mc)");
}

inline double monte_carlo_p(double observed, const std::vector<double>& null, PConvention c) {
    const double n = static_cast<double>(null.size());
    std::size_t count = 0;
    if (c == PConvention::paper) {
        for (double t : null) count += observed > t ? 1 : 0;
        return static_cast<double>(count) / n;
    }
    for (double t : null) count += t >= observed ? 1 : 0;
    return (1.0 + static_cast<double>(count)) / (n + 1.0);
}

struct TestOptions {
    int n_resample = 199;
    PConvention p_convention = PConvention::standard_mc;
    VarimaxOptions varimax{};
    ResampleMethod resample = ResampleMethod::uniform_direction;
    unsigned threads = 1;  // parallelism over resamples
};

struct TestReport {
    double ts1_obs = 0.0;
    double ts2_obs = 0.0;
    double ts3_obs = 0.0;
    std::vector<double> null_ts1;
    std::vector<double> null_ts2;
    double p_kur = 1.0;
    double p_var = 1.0;
    int n_resample = 0;
    Index n_rows = 0;
    Index k_used = 0;
    bool dropped_leading = false;
    std::uint64_t seed = 0;
    PConvention p_convention = PConvention::standard_mc;
    VarimaxOptions varimax{};
};

/// Monte-Carlo test for rotation-sensitive structure in the rows of `u`.
/// The observed matrix and every resample are varimax-rotated before their
/// statistics are taken. Resample i draws from substream(seed, i + 1) and the
/// observed rotation from substream(seed, 0), so the report depends only on
/// (u, options, seed) and not on the thread count.
inline TestReport run_test(const Matrix& u, const TestOptions& opt, std::uint64_t seed) {
    require(u.rows() >= 4 && u.cols() >= 2, "run_test: need n >= 4 and k >= 2, got " +
                                                std::to_string(u.rows()) + "x" + std::to_string(u.cols()));
    require(opt.n_resample >= 19, "run_test: n_resample must be >= 19, got " + std::to_string(opt.n_resample));
    require(u.allFinite(), "run_test: matrix has non-finite entries");

    VarimaxOptions inner = opt.varimax;
    inner.threads = 1;

    TestReport rep;
    rep.n_resample = opt.n_resample;
    rep.n_rows = u.rows();
    rep.k_used = u.cols();
    rep.seed = seed;
    rep.p_convention = opt.p_convention;
    rep.varimax = inner;

    {
        Rng rng = substream(seed, 0);
        const auto vm = varimax_rotate(u, inner, rng);
        rep.ts1_obs = ts1_kurtosis(vm.rotated);
        rep.ts2_obs = vm.objective;
        rep.ts3_obs = ts3_rescaled(vm.rotated);
    }

    rep.null_ts1.assign(static_cast<std::size_t>(opt.n_resample), 0.0);
    rep.null_ts2.assign(static_cast<std::size_t>(opt.n_resample), 0.0);
    parallel_for(static_cast<std::size_t>(opt.n_resample), opt.threads, [&](std::size_t i) {
        Rng rng = substream(seed, i + 1);
        const Matrix resampled = rotation_invariant_resample(u, rng, opt.resample);
        const auto vm = varimax_rotate(resampled, inner, rng);
        rep.null_ts1[i] = ts1_kurtosis(vm.rotated);
        rep.null_ts2[i] = vm.objective;
    });

    rep.p_kur = monte_carlo_p(rep.ts1_obs, rep.null_ts1, opt.p_convention);
    rep.p_var = monte_carlo_p(rep.ts2_obs, rep.null_ts2, opt.p_convention);
    return rep;
}

/// Runs the test on the leading k columns for every k in `ks` (after an
/// optional leading-component drop). All ranks share the same seed.
inline std::vector<std::pair<Index, TestReport>> rank_sweep(const TruncatedSVD& svd, const std::vector<Index>& ks,
                                                            bool drop_leading, const TestOptions& opt,
                                                            std::uint64_t seed) {
    require(!ks.empty(), "rank_sweep: empty rank list");
    const TruncatedSVD base = drop_leading ? drop_leading_component(svd) : svd;
    for (Index k : ks) {
        require(k >= 2 && k <= base.k(), "rank_sweep: k=" + std::to_string(k) + " outside [2, " +
                                             std::to_string(base.k()) + "]");
    }
    std::vector<std::pair<Index, TestReport>> out;
    out.reserve(ks.size());
    for (Index k : ks) {
        TestReport rep = run_test(base.U.leftCols(k), opt, seed);
        rep.dropped_leading = drop_leading;
        out.emplace_back(k, std::move(rep));
    }
    return out;
}

}  // namespace rotsense
