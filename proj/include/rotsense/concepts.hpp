#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rotsense/core.hpp"
#include "rotsense/io.hpp"
#include "rotsense/spectra.hpp"
#include "rotsense/varimax.hpp"

namespace rotsense {

/// Z (n x k loadings) and Y (d x k orthonormal concept dictionary) with
/// normalised(A) ~ Z Y^T at rank k.
struct ConceptModel {
    Matrix Y;
    Matrix Z;
    ScalingRecord scaling;
    Vector singular_values;  // D of the rank-k SVD that was rotated
    std::vector<std::string> ids;
    Index k = 0;
    std::uint64_t seed = 0;
    bool canonical = false;
    double varimax_objective = 0.0;
    bool varimax_converged = false;

    Matrix reconstruct_normalized() const { return Z * Y.transpose(); }

    void validate() const {
        require(Y.cols() == k && Z.cols() == k, "concept model: Y/Z column count disagrees with k");
        require(ids.size() == static_cast<std::size_t>(Z.rows()), "concept model: ids do not match Z rows");
        require(scaling.row_factors.size() == Z.rows() && scaling.col_factors.size() == Y.rows(),
                "concept model: scaling record does not match shapes");
        require(Y.allFinite() && Z.allFinite(), "concept model: non-finite entries");
    }
};

struct DecomposeOptions {
    Index k = 50;
    NormMode norm_mode = NormMode::degree;
    double eps = 1e-8;
    VarimaxOptions varimax{};
    bool canonicalize = true;
};

/// Normalise, truncate to rank k, varimax-rotate U D, and read off
/// Z = U D R and Y = V R (then fix signs/order).
inline ConceptModel decompose(const EmbeddingMatrix& a, const DecomposeOptions& opt, std::uint64_t seed) {
    a.validate();
    require(opt.k >= 2 && opt.k <= std::min(a.rows(), a.cols()),
            "decompose: k=" + std::to_string(opt.k) + " must lie in [2, min(n,d)=" +
                std::to_string(std::min(a.rows(), a.cols())) + "]");
    auto [normalized, scaling] = normalize(a.data, opt.norm_mode, opt.eps);
    const TruncatedSVD svd = truncated_svd(normalized, opt.k);
    require(svd.k() >= 2, "decompose: matrix has numerical rank < 2");

    const Matrix ud = svd.U * svd.D.asDiagonal();
    Rng rng = substream(seed, 0);
    const VarimaxResult vm = varimax_rotate(ud, opt.varimax, rng);

    ConceptModel model;
    model.Z = vm.rotated;
    model.Y = svd.V * vm.R;
    if (opt.canonicalize) {
        auto c = canonicalize(model.Z, model.Y);
        model.Z = std::move(c.Z);
        model.Y = std::move(c.Y);
    }
    model.scaling = std::move(scaling);
    model.singular_values = svd.D;
    model.ids = a.ids;
    model.k = svd.k();
    model.seed = seed;
    model.canonical = opt.canonicalize;
    model.varimax_objective = vm.objective;
    model.varimax_converged = vm.converged;
    return model;
}

/// Text loadings T Y (M x k).
inline Matrix loadings_for_text(const TextCorpus& t, const ConceptModel& model) {
    require(t.embeddings.cols() == model.Y.rows(), "loadings_for_text: text width " + std::to_string(t.embeddings.cols()) +
                                                       " != concept width " + std::to_string(model.Y.rows()));
    return t.embeddings * model.Y;
}

struct ScoredId {
    std::string id;
    double score = 0.0;
};

struct ScoredText {
    std::string text;
    double score = 0.0;
};

struct ConceptInterpretation {
    Index concept_index = 0;
    std::vector<ScoredId> top_images;
    std::vector<ScoredText> top_texts;
};

/// Top-r images by loading and top-r descriptions by projected text loading,
/// per concept.
inline std::vector<ConceptInterpretation> interpret(const ConceptModel& model, const TextCorpus& t, Index r) {
    require(r >= 1, "interpret: r must be >= 1");
    require(r <= t.size(), "interpret: r=" + std::to_string(r) + " exceeds corpus size " + std::to_string(t.size()));
    require(r <= model.Z.rows(), "interpret: r=" + std::to_string(r) + " exceeds sample count " + std::to_string(model.Z.rows()));
    const Matrix text_loadings = loadings_for_text(t, model);
    std::vector<ConceptInterpretation> out;
    out.reserve(static_cast<std::size_t>(model.k));
    for (Index j = 0; j < model.k; ++j) {
        ConceptInterpretation ci;
        ci.concept_index = j;
        for (Index i : top_r_indices(model.Z.col(j), r))
            ci.top_images.push_back({model.ids[static_cast<std::size_t>(i)], model.Z(i, j)});
        for (Index i : top_r_indices(text_loadings.col(j), r))
            ci.top_texts.push_back({t.descriptions[static_cast<std::size_t>(i)], text_loadings(i, j)});
        out.push_back(std::move(ci));
    }
    return out;
}

/// Weighted sum of concept directions; score samples with A C and texts with T C.
inline Vector concept_arithmetic(const ConceptModel& model, const std::vector<std::pair<Index, double>>& terms) {
    require(!terms.empty(), "concept_arithmetic: no terms");
    Vector c = Vector::Zero(model.Y.rows());
    for (const auto& [j, w] : terms) {
        require(j >= 0 && j < model.k, "concept_arithmetic: concept index " + std::to_string(j) + " out of range");
        c += w * model.Y.col(j);
    }
    return c;
}

struct SpuriousReport {
    std::vector<Index> flagged;
    Vector target_sim;
    Vector spurious_sim;
    double margin = 0.0;
};

namespace detail {

// Mean |cosine| of `direction` against every corpus row. A concept's sign is
// arbitrary, so alignment is measured without it.
inline double mean_abs_cosine(const Eigen::Ref<const Vector>& direction, const Matrix& rows, const char* which) {
    double total = 0.0;
    for (Index i = 0; i < rows.rows(); ++i) {
        const double nr = rows.row(i).norm();
        if (!(nr > 0.0)) throw InputError(std::string("detect_spurious: ") + which + " text " + std::to_string(i) + " has zero norm");
        total += std::abs(rows.row(i).dot(direction)) / (nr * direction.norm());
    }
    return total / static_cast<double>(rows.rows());
}

}  // namespace detail

/// Flags concept j when it sits closer to the spurious corpus than to the
/// target corpus by more than `margin`.
inline SpuriousReport detect_spurious(const ConceptModel& model, const TextCorpus& target, const TextCorpus& spurious,
                                      double margin = 0.05) {
    target.validate(model.Y.rows());
    spurious.validate(model.Y.rows());
    SpuriousReport rep;
    rep.margin = margin;
    rep.target_sim.resize(model.k);
    rep.spurious_sim.resize(model.k);
    for (Index j = 0; j < model.k; ++j) {
        rep.target_sim(j) = detail::mean_abs_cosine(model.Y.col(j), target.embeddings, "target");
        rep.spurious_sim(j) = detail::mean_abs_cosine(model.Y.col(j), spurious.embeddings, "spurious");
        if (rep.spurious_sim(j) - rep.target_sim(j) > margin) rep.flagged.push_back(j);
    }
    return rep;
}

/// Zeroes the loadings of `remove` and rebuilds Z' Y^T, optionally mapped back
/// to the original scale.
inline EmbeddingMatrix remove_and_reconstruct(const ConceptModel& model, const std::vector<Index>& remove,
                                              bool invert = true) {
    Matrix z = model.Z;
    for (Index j : remove) {
        require(j >= 0 && j < model.k, "remove_and_reconstruct: concept index " + std::to_string(j) + " out of range");
        z.col(j).setZero();
    }
    Matrix rec = z * model.Y.transpose();
    if (invert) rec = invert_scaling(rec, model.scaling);
    EmbeddingMatrix out;
    out.data = std::move(rec);
    out.ids = model.ids;
    out.source = "reconstruction";
    return out;
}

/// Mean row cosine between A and its reconstruction; zero rows of the
/// reconstruction score 0.
inline double reconstruction_fidelity(const Matrix& a, const Matrix& a_hat) {
    require(a.rows() == a_hat.rows() && a.cols() == a_hat.cols(), "reconstruction_fidelity: shape mismatch");
    require(a.rows() >= 1, "reconstruction_fidelity: empty matrix");
    double total = 0.0;
    for (Index i = 0; i < a.rows(); ++i) {
        const double na = a.row(i).norm();
        require(na > 0.0, "reconstruction_fidelity: row " + std::to_string(i) + " of A has zero norm");
        const double nh = a_hat.row(i).norm();
        if (nh > 0.0) total += a.row(i).dot(a_hat.row(i)) / (na * nh);
    }
    return total / static_cast<double>(a.rows());
}

}  // namespace rotsense
