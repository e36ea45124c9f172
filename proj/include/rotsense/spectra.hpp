#pragma once

#include <cmath>
#include <iostream>
#include <limits>
#include <string>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "rotsense/core.hpp"

namespace rotsense {

/// Rank-k factor triple M ~ U diag(D) V^T.
struct TruncatedSVD {
    Matrix U;  // n x k, orthonormal columns
    Vector D;  // k, positive, non-increasing
    Matrix V;  // d x k, orthonormal columns
    Index dropped_zero = 0;  // requested components discarded as zero singular values

    Index k() const { return D.size(); }

    Matrix reconstruct() const { return U * D.asDiagonal() * V.transpose(); }

    /// Leading `rank` components.
    TruncatedSVD head(Index rank) const {
        require(rank >= 1 && rank <= k(), "head: rank " + std::to_string(rank) + " out of range [1, " +
                                              std::to_string(k()) + "]");
        return TruncatedSVD{U.leftCols(rank), D.head(rank), V.leftCols(rank), 0};
    }
};

namespace detail {

// Thin SVD of a matrix with rows >= cols; QR-preconditioned when tall so the
// bidiagonalisation runs on the small triangular factor.
inline void thin_svd_tall(const Matrix& m, Matrix& u, Vector& s, Matrix& v) {
    const Index rows = m.rows();
    const Index cols = m.cols();
    if (rows > 2 * cols) {
        Eigen::HouseholderQR<Matrix> qr(m);
        const Matrix r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
        Eigen::BDCSVD<Matrix> svd(r, Eigen::ComputeThinU | Eigen::ComputeThinV);
        if (svd.info() != Eigen::Success) throw NumericError("truncated_svd: SVD did not converge");
        Matrix padded = Matrix::Zero(rows, cols);
        padded.topRows(cols) = svd.matrixU();
        u = qr.householderQ() * padded;
        s = svd.singularValues();
        v = svd.matrixV();
        return;
    }
    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw NumericError("truncated_svd: SVD did not converge");
    u = svd.matrixU();
    s = svd.singularValues();
    v = svd.matrixV();
}

}  // namespace detail

/// Deterministic dense truncated SVD. Singular values that are zero at
/// working precision are cut off (with a warning on stderr) so every kept D
/// entry is strictly positive.
inline TruncatedSVD truncated_svd(const Matrix& m, Index k) {
    const Index n = m.rows();
    const Index d = m.cols();
    require(k >= 1 && k <= std::min(n, d), "truncated_svd: k=" + std::to_string(k) +
                                               " must lie in [1, min(n,d)=" +
                                               std::to_string(std::min(n, d)) + "]");
    if (!m.allFinite()) throw InputError("truncated_svd: matrix has non-finite entries");

    Matrix u, v;
    Vector s;
    if (n >= d) {
        detail::thin_svd_tall(m, u, s, v);
    } else {
        Matrix mt = m.transpose();
        detail::thin_svd_tall(mt, v, s, u);
    }

    const double cutoff = (s.size() > 0 ? s(0) : 0.0) * static_cast<double>(std::max(n, d)) *
                          std::numeric_limits<double>::epsilon();
    Index keep = k;
    while (keep > 0 && !(s(keep - 1) > cutoff)) --keep;
    if (keep == 0) throw NumericError("truncated_svd: matrix is numerically zero");

    TruncatedSVD out{u.leftCols(keep), s.head(keep), v.leftCols(keep), k - keep};
    if (out.dropped_zero > 0) {
        std::cerr << "warning: truncated_svd dropped " << out.dropped_zero
                  << " zero singular value(s); rank reduced to " << keep << '\n';
    }
    return out;
}

/// Removes the first singular triplet, which on embedding data mostly carries
/// the mean offset.
inline TruncatedSVD drop_leading_component(const TruncatedSVD& svd) {
    const Index k = svd.k();
    require(k >= 2, "drop_leading_component: need k >= 2, got " + std::to_string(k));
    return TruncatedSVD{svd.U.rightCols(k - 1), svd.D.tail(k - 1), svd.V.rightCols(k - 1), 0};
}

/// Haar-uniform draw from SO(k): sign-corrected QR of a Gaussian matrix, with
/// the last column negated when the determinant comes out -1.
inline Matrix sample_haar_rotation(Index k, Rng& rng) {
    require(k >= 1, "sample_haar_rotation: k must be >= 1");
    if (k == 1) return Matrix::Identity(1, 1);
    const Matrix g = standard_normal(k, k, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const auto r = qr.matrixQR().diagonal();
    for (Index j = 0; j < k; ++j)
        if (r(j) < 0.0) q.col(j) = -q.col(j);
    if (q.determinant() < 0.0) q.col(k - 1) = -q.col(k - 1);
    return q;
}

enum class ResampleMethod {
    /// Rotate each row by its own explicitly constructed Haar rotation.
    explicit_rotation,
    /// Draw each row's image directly: for a Haar R, R u is uniform on the
    /// sphere of radius |u|, so a normalised Gaussian direction has the same
    /// law at O(k) instead of O(k^3) cost per row.
    uniform_direction,
};

/// Rotates every row independently, keeping its Euclidean norm.
inline Matrix rotation_invariant_resample(const Matrix& u, Rng& rng,
                                          ResampleMethod method = ResampleMethod::uniform_direction) {
    const Index n = u.rows();
    const Index k = u.cols();
    require(n >= 1 && k >= 2, "rotation_invariant_resample: need n >= 1 and k >= 2");
    Matrix out(n, k);
    if (method == ResampleMethod::explicit_rotation) {
        for (Index i = 0; i < n; ++i) {
            const Matrix r = sample_haar_rotation(k, rng);
            // Row convention: u_i R^T equals (R u_i^T)^T.
            out.row(i) = u.row(i) * r.transpose();
        }
        return out;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector g(k);
    for (Index i = 0; i < n; ++i) {
        const double radius = u.row(i).norm();
        double gn = 0.0;
        do {
            for (Index j = 0; j < k; ++j) g(j) = normal(rng);
            gn = g.norm();
        } while (gn == 0.0);
        out.row(i) = (radius / gn) * g.transpose();
    }
    return out;
}

}  // namespace rotsense
