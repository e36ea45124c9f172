#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/SVD>

#include "rotsense/core.hpp"
#include "rotsense/spectra.hpp"

namespace rotsense {

struct VarimaxOptions {
    double tol = 1e-8;      // stop once the relative objective gain drops below this
    int max_iter = 1000;
    int restarts = 8;       // identity start plus restarts-1 Haar-random starts
    unsigned threads = 1;   // restarts run in parallel when > 1
};

struct VarimaxResult {
    Matrix R;         // k x k, det +1
    Matrix rotated;   // input * R
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
    int best_restart = 0;
    std::vector<double> trace;  // objective per iteration of the winning start
};

/// Varimax objective of an already rotated loading matrix:
///   sum_l [ mean_i M_il^4 - (mean_i M_il^2)^2 ]
/// This is the per-column variance of squared loadings with 1/n weights.
inline double varimax_objective(const Matrix& m) {
    const double inv_n = 1.0 / static_cast<double>(m.rows());
    double total = 0.0;
    for (Index l = 0; l < m.cols(); ++l) {
        const auto sq = m.col(l).array().square();
        const double second = sq.sum() * inv_n;
        const double fourth = sq.square().sum() * inv_n;
        total += fourth - second * second;
    }
    return total;
}

namespace detail {

struct VarimaxRun {
    Matrix R;
    Matrix rotated;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> trace;
};

// Kaiser-style fixed point: R <- polar factor of M^T (L^3 - L diag(mean L^2)).
inline VarimaxRun varimax_from(const Matrix& m, Matrix r, const VarimaxOptions& opt) {
    const double inv_n = 1.0 / static_cast<double>(m.rows());
    VarimaxRun run;
    Matrix l = m * r;
    double obj = varimax_objective(l);
    run.trace.push_back(obj);
    Matrix b(l.rows(), l.cols());
    for (int it = 1; it <= opt.max_iter; ++it) {
        const Eigen::RowVectorXd col_means = l.array().square().colwise().sum() * inv_n;
        b = l.array().cube().matrix() - l * col_means.asDiagonal();
        const Matrix g = m.transpose() * b;
        Eigen::JacobiSVD<Matrix> svd(g, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Matrix r_next = svd.matrixU() * svd.matrixV().transpose();
        Matrix l_next = m * r_next;
        const double obj_next = varimax_objective(l_next);
        run.iterations = it;
        if (obj_next < obj) {
            // Stalled at round-off level; keep the better iterate.
            run.converged = true;
            break;
        }
        const double gain = (obj_next - obj) / std::max(std::abs(obj), 1e-300);
        r = std::move(r_next);
        l = std::move(l_next);
        obj = obj_next;
        run.trace.push_back(obj);
        if (gain < opt.tol) {
            run.converged = true;
            break;
        }
    }
    run.R = std::move(r);
    run.rotated = std::move(l);
    run.objective = obj;
    return run;
}

}  // namespace detail

/// Maximises the varimax objective over rotations of `m` with multi-start
/// fixed-point iteration. Non-convergence is reported, not thrown.
inline VarimaxResult varimax_rotate(const Matrix& m, const VarimaxOptions& opt, Rng& rng) {
    const Index n = m.rows();
    const Index k = m.cols();
    require(n >= 2 && k >= 2, "varimax_rotate: need n >= 2 and k >= 2");
    require(opt.tol > 0.0, "varimax_rotate: tol must be positive");
    require(opt.max_iter >= 1 && opt.restarts >= 1, "varimax_rotate: max_iter and restarts must be >= 1");

    const std::uint64_t base = rng();
    std::vector<detail::VarimaxRun> runs(static_cast<std::size_t>(opt.restarts));
    parallel_for(runs.size(), opt.threads, [&](std::size_t s) {
        Matrix start = Matrix::Identity(k, k);
        if (s > 0) {
            Rng local = substream(base, s);
            start = sample_haar_rotation(k, local);
        }
        runs[s] = detail::varimax_from(m, std::move(start), opt);
    });

    std::size_t best = 0;
    for (std::size_t s = 1; s < runs.size(); ++s)
        if (runs[s].objective > runs[best].objective) best = s;

    auto& win = runs[best];
    VarimaxResult out;
    out.R = std::move(win.R);
    out.rotated = std::move(win.rotated);
    if (out.R.determinant() < 0.0) {
        // Column sign flips leave the objective unchanged.
        out.R.col(k - 1) = -out.R.col(k - 1);
        out.rotated.col(k - 1) = -out.rotated.col(k - 1);
    }
    out.objective = varimax_objective(out.rotated);
    out.iterations = win.iterations;
    out.converged = win.converged;
    out.best_restart = static_cast<int>(best);
    out.trace = std::move(win.trace);
    return out;
}

struct Canonical {
    Matrix Z;
    Matrix Y;
    std::vector<Index> permutation;  // output column j came from input column permutation[j]
    std::vector<int> signs;          // sign applied to input column permutation[j]
};

/// Fixes the signed-permutation ambiguity of a factorisation Z Y^T: every
/// column is oriented so its largest-magnitude Y entry is positive, then
/// columns are sorted by descending energy sum_i Z_ij^2. Z Y^T is unchanged.
inline Canonical canonicalize(const Matrix& z, const Matrix& y) {
    require(z.cols() == y.cols(), "canonicalize: Z and Y disagree on k");
    const Index k = z.cols();
    std::vector<int> sign(static_cast<std::size_t>(k), 1);
    Vector energy(k);
    for (Index j = 0; j < k; ++j) {
        Index arg = 0;
        double best = -1.0;
        for (Index i = 0; i < y.rows(); ++i) {
            const double a = std::abs(y(i, j));
            if (a > best) {
                best = a;
                arg = i;
            }
        }
        if (y.rows() > 0 && y(arg, j) < 0.0) sign[static_cast<std::size_t>(j)] = -1;
        energy(j) = z.col(j).squaredNorm();
    }
    std::vector<Index> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::stable_sort(perm.begin(), perm.end(), [&](Index a, Index b) { return energy(a) > energy(b); });

    Canonical out{Matrix(z.rows(), k), Matrix(y.rows(), k), perm, {}};
    for (Index j = 0; j < k; ++j) {
        const Index src = perm[static_cast<std::size_t>(j)];
        const int s = sign[static_cast<std::size_t>(src)];
        out.Z.col(j) = s * z.col(src);
        out.Y.col(j) = s * y.col(src);
        out.signs.push_back(s);
    }
    return out;
}

}  // namespace rotsense
