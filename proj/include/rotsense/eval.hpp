#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include "rotsense/concepts.hpp"
#include "rotsense/core.hpp"
#include "rotsense/io.hpp"
#include "rotsense/spectra.hpp"

namespace rotsense {

// ---------------------------------------------------------------------------
// Zero-shot classification and group metrics
// ---------------------------------------------------------------------------

struct PromptSet {
    std::vector<std::string> class_names;
    Matrix embeddings;  // C x d

    void validate(std::optional<Index> width = std::nullopt) const {
        require(embeddings.rows() >= 2, "prompt set needs at least 2 classes");
        require(class_names.size() == static_cast<std::size_t>(embeddings.rows()),
                "prompt set: class name count does not match embedding rows");
        require(embeddings.allFinite(), "prompt set: non-finite embedding");
        for (Index c = 0; c < embeddings.rows(); ++c)
            require(embeddings.row(c).norm() > 0.0, "prompt set: class " + std::to_string(c) + " has a zero embedding");
        if (width) require(embeddings.cols() == *width, "prompt set: embedding width does not match images");
    }
};

/// argmax_c cosine(E_i, prompt_c); the lower class index wins ties.
inline std::vector<int> zero_shot_predict(const Matrix& e, const PromptSet& prompts) {
    prompts.validate(e.cols());
    Matrix p = prompts.embeddings;
    for (Index c = 0; c < p.rows(); ++c) p.row(c) /= p.row(c).norm();
    std::vector<int> out(static_cast<std::size_t>(e.rows()));
    for (Index i = 0; i < e.rows(); ++i) {
        const double ne = e.row(i).norm();
        require(ne > 0.0, "zero_shot_predict: image row " + std::to_string(i) + " has zero norm");
        int best = 0;
        double best_sim = -2.0;
        for (Index c = 0; c < p.rows(); ++c) {
            const double sim = e.row(i).dot(p.row(c)) / ne;
            if (sim > best_sim) {
                best_sim = sim;
                best = static_cast<int>(c);
            }
        }
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

struct GroupStat {
    Index n = 0;
    double acc = 0.0;
};

struct GroupMetrics {
    double avg_acc = 0.0;
    double worst_group_acc = 0.0;
    double gap = 0.0;
    std::map<int, GroupStat> per_group;
    double micro_f1 = 0.0;
    double macro_recall = 0.0;
    bool has_groups = false;
};

/// Accuracy, worst-group accuracy and gap, micro-F1 (equal to accuracy for
/// single-label prediction) and macro-recall over classes present in `labels`.
/// Without groups, worst-group accuracy equals the average.
inline GroupMetrics group_metrics(const std::vector<int>& preds, const std::vector<int>& labels,
                                  const std::optional<std::vector<int>>& groups = std::nullopt) {
    require(!preds.empty(), "group_metrics: empty input");
    require(preds.size() == labels.size(), "group_metrics: preds and labels differ in length");
    if (groups) require(groups->size() == labels.size(), "group_metrics: groups and labels differ in length");

    GroupMetrics m;
    std::size_t correct = 0;
    std::map<int, std::pair<Index, Index>> per_class;  // label -> (hits, total)
    std::map<int, std::pair<Index, Index>> per_group;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool hit = preds[i] == labels[i];
        correct += hit ? 1 : 0;
        auto& c = per_class[labels[i]];
        c.first += hit ? 1 : 0;
        ++c.second;
        if (groups) {
            auto& g = per_group[(*groups)[i]];
            g.first += hit ? 1 : 0;
            ++g.second;
        }
    }
    m.avg_acc = static_cast<double>(correct) / static_cast<double>(preds.size());
    m.micro_f1 = m.avg_acc;

    double recall = 0.0;
    for (const auto& [label, c] : per_class) recall += static_cast<double>(c.first) / static_cast<double>(c.second);
    m.macro_recall = recall / static_cast<double>(per_class.size());
    for (int p : preds) {
        if (!per_class.count(p)) {
            std::cerr << "warning: macro-recall skips predicted class " << p << " absent from ground truth\n";
            break;
        }
    }

    m.has_groups = groups.has_value();
    m.worst_group_acc = m.avg_acc;
    if (groups) {
        m.worst_group_acc = 1.0;
        for (const auto& [g, c] : per_group) {
            const double acc = static_cast<double>(c.first) / static_cast<double>(c.second);
            m.per_group[g] = GroupStat{c.second, acc};
            m.worst_group_acc = std::min(m.worst_group_acc, acc);
        }
    }
    m.gap = m.avg_acc - m.worst_group_acc;
    return m;
}

inline nlohmann::json to_json(const GroupMetrics& m) {
    nlohmann::json j;
    j["avg_acc"] = m.avg_acc;
    j["worst_group_acc"] = m.worst_group_acc;
    j["gap"] = m.gap;
    j["micro_f1"] = m.micro_f1;
    j["macro_recall"] = m.macro_recall;
    j["has_groups"] = m.has_groups;
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& [g, s] : m.per_group) groups.push_back({{"group", g}, {"n", s.n}, {"acc", s.acc}});
    j["per_group"] = groups;
    return j;
}

/// Markdown table with columns Avg, WG, Gap, Acc, mF1, MRec (fractions).
inline std::string metrics_markdown_table(const std::vector<std::pair<std::string, GroupMetrics>>& rows) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "| Method | Avg | WG | Gap | Acc | mF1 | MRec |\n";
    os << "|---|---|---|---|---|---|---|\n";
    for (const auto& [name, m] : rows) {
        os << "| " << name << " | " << m.avg_acc << " | " << m.worst_group_acc << " | " << m.gap << " | " << m.avg_acc
           << " | " << m.micro_f1 << " | " << m.macro_recall << " |\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Reconstruction fidelity and fixed dictionaries
// ---------------------------------------------------------------------------

/// Fidelity of the rank-k reconstruction (nothing removed, original scale)
/// for each k, sorted by k.
inline std::vector<std::pair<Index, double>> fidelity_curve(const EmbeddingMatrix& a, std::vector<Index> ks,
                                                            const DecomposeOptions& base, std::uint64_t seed) {
    require(!ks.empty(), "fidelity_curve: empty rank list");
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    std::vector<std::pair<Index, double>> out;
    for (Index k : ks) {
        DecomposeOptions opt = base;
        opt.k = k;
        const ConceptModel model = decompose(a, opt, seed);
        const EmbeddingMatrix rec = remove_and_reconstruct(model, {}, true);
        out.emplace_back(k, reconstruction_fidelity(a.data, rec.data));
    }
    return out;
}

struct FixedDictionaryFit {
    double residual = 0.0;
    Matrix Z;  // n x m minimiser of ||A - Z C_W^T||_F
};

/// Least-squares fit of A onto a fixed dictionary C_W (d x m) via its
/// pseudoinverse, so rank-deficient dictionaries are fine.
inline FixedDictionaryFit fixed_dictionary_fit(const Matrix& a, const Matrix& c_w) {
    require(c_w.cols() >= 1, "fixed_dictionary_fit: dictionary has no columns");
    require(a.cols() == c_w.rows(), "fixed_dictionary_fit: A width does not match dictionary rows");
    require(a.allFinite() && c_w.allFinite(), "fixed_dictionary_fit: non-finite input");
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(c_w);
    const Matrix pinv = cod.pseudoInverse();  // m x d
    FixedDictionaryFit fit;
    fit.Z = a * pinv.transpose();
    fit.residual = (a - fit.Z * c_w.transpose()).norm();
    return fit;
}

/// ||(I - P) C*||_F where P projects onto the column space of C_W.
inline double dictionary_misalignment(const Matrix& c_w, const Matrix& c_star) {
    require(c_w.rows() == c_star.rows(), "dictionary_misalignment: row counts differ");
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(c_w);
    const Matrix proj = c_w * cod.pseudoInverse();
    return (c_star - proj * c_star).norm();
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

/// Haar-distributed d x k frame with orthonormal columns.
inline Matrix random_orthonormal(Index d, Index k, Rng& rng) {
    require(k >= 1 && k <= d, "random_orthonormal: need 1 <= k <= d");
    const Matrix g = standard_normal(d, k, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(d, k);
    const auto r = qr.matrixQR().diagonal();
    for (Index j = 0; j < k; ++j)
        if (r(j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

inline EmbeddingMatrix make_gaussian_null(Index n, Index d, Rng& rng) {
    require(n >= 2 && d >= 2, "make_gaussian_null: dimensions must be >= 2");
    return EmbeddingMatrix::from(standard_normal(n, d, rng), "synthetic:gaussian_null");
}

/// Rows from 0.5 N(mu, I) + 0.5 N(-mu, I) with mu = e_1; labels hold the component.
inline EmbeddingMatrix make_gmm(Index n, Index d, Rng& rng) {
    require(n >= 2 && d >= 2, "make_gmm: dimensions must be >= 2");
    std::bernoulli_distribution coin(0.5);
    std::vector<int> comp(static_cast<std::size_t>(n));
    for (auto& c : comp) c = coin(rng) ? 1 : 0;
    Matrix a = standard_normal(n, d, rng);
    for (Index i = 0; i < n; ++i) a(i, 0) += comp[static_cast<std::size_t>(i)] ? 1.0 : -1.0;
    EmbeddingMatrix out = EmbeddingMatrix::from(std::move(a), "synthetic:gmm");
    out.labels = std::move(comp);
    return out;
}

enum class KurtosisFamily {
    /// Centred, unit-variance Bernoulli(0.1): kurtosis about 8.1.
    two_point,
    /// Exponential(1) minus 1: kurtosis 9.
    exponential,
};

inline KurtosisFamily parse_kurtosis_family(const std::string& s) {
    if (s == "two_point") return KurtosisFamily::two_point;
    if (s == "exponential") return KurtosisFamily::exponential;
    throw InputError("unknown kurtosis family '" + s + "' (expected two_point or exponential)");
}

inline const char* to_string(KurtosisFamily f) {
    return f == KurtosisFamily::two_point ? "two_point" : "exponential";
}

inline constexpr double kTwoPointRate = 0.1;

struct PlantedConcepts {
    EmbeddingMatrix A;
    Matrix Y;  // d x k planted dictionary
    Matrix Z;  // n x k planted loadings
};

/// A = Z* Y*^T + sigma * N(0,1) with Z* i.i.d. from `family` and Y* a random
/// orthonormal frame.
inline PlantedConcepts make_planted_concepts(Index n, Index d, Index k, KurtosisFamily family, double sigma,
                                             Rng& rng) {
    require(n >= 2 && d >= 2 && k >= 1 && k <= d, "make_planted_concepts: need n, d >= 2 and 1 <= k <= d");
    require(sigma >= 0.0, "make_planted_concepts: sigma must be >= 0");
    PlantedConcepts out;
    out.Y = random_orthonormal(d, k, rng);
    out.Z.resize(n, k);
    if (family == KurtosisFamily::two_point) {
        const double p = kTwoPointRate;
        const double sd = std::sqrt(p * (1.0 - p));
        std::bernoulli_distribution b(p);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < k; ++j) out.Z(i, j) = ((b(rng) ? 1.0 : 0.0) - p) / sd;
    } else {
        std::exponential_distribution<double> e(1.0);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < k; ++j) out.Z(i, j) = e(rng) - 1.0;
    }
    Matrix a = out.Z * out.Y.transpose();
    if (sigma > 0.0) a += sigma * standard_normal(n, d, rng);
    out.A = EmbeddingMatrix::from(std::move(a), std::string("synthetic:planted_") + to_string(family));
    return out;
}

struct SpuriousBenchmarkOptions {
    Index n = 2000;
    Index d = 64;
    Index nuisance = 2;         // extra concepts unrelated to class or background
    double nuisance_rate = 0.2;
    double sigma = 0.3;         // isotropic noise; per-entry sd is sigma / sqrt(d)
    double minority = 0.1;      // fraction whose background disagrees with the class
    double prompt_background = 1.0;  // weight of the background direction in class prompts
    double text_noise = 0.05;
};

/// Two classes x two backgrounds. Class c carries concept c and background b
/// carries concept 2 + b, each with an Exponential(1) magnitude; background
/// matches class for all but the `minority` fraction. Class prompts mix the
/// class direction with its majority background, which is what makes the
/// zero-shot classifier fail on minority groups.
struct SpuriousBenchmark {
    EmbeddingMatrix A;     // labels = class, groups = 2 * class + background
    PromptSet prompts;
    TextCorpus target;     // class descriptions
    TextCorpus spurious;   // background descriptions
    Matrix concepts;       // d x (4 + nuisance) planted frame
    Matrix background;     // d x 2 planted background directions
    Index k = 0;           // number of planted concepts
};

inline SpuriousBenchmark make_spurious_benchmark(const SpuriousBenchmarkOptions& opt, Rng& rng) {
    require(opt.n >= 2 && opt.d >= 4 + opt.nuisance, "make_spurious_benchmark: need n >= 2 and d >= 4 + nuisance");
    require(opt.minority >= 0.0 && opt.minority <= 1.0, "make_spurious_benchmark: minority must lie in [0,1]");
    const Index n = opt.n;
    const Index d = opt.d;
    const Index k = 4 + opt.nuisance;

    SpuriousBenchmark b;
    b.k = k;
    b.concepts = random_orthonormal(d, k, rng);
    b.background = b.concepts.middleCols(2, 2);

    std::bernoulli_distribution coin(0.5);
    std::bernoulli_distribution flip(opt.minority);
    std::bernoulli_distribution present(opt.nuisance_rate);
    std::exponential_distribution<double> mag(1.0);

    Matrix z = Matrix::Zero(n, k);
    std::vector<int> labels(static_cast<std::size_t>(n)), groups(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const int y = coin(rng) ? 1 : 0;
        const int g = flip(rng) ? 1 - y : y;
        z(i, y) = mag(rng);
        z(i, 2 + g) = mag(rng);
        for (Index j = 4; j < k; ++j)
            if (present(rng)) z(i, j) = mag(rng);
        labels[static_cast<std::size_t>(i)] = y;
        groups[static_cast<std::size_t>(i)] = 2 * y + g;
    }
    Matrix a = z * b.concepts.transpose() + (opt.sigma / std::sqrt(static_cast<double>(d))) * standard_normal(n, d, rng);
    b.A = EmbeddingMatrix::from(std::move(a), "synthetic:spurious_benchmark");
    b.A.labels = std::move(labels);
    b.A.groups = std::move(groups);

    b.prompts.class_names = {"class 0", "class 1"};
    b.prompts.embeddings.resize(2, d);
    for (Index c = 0; c < 2; ++c)
        b.prompts.embeddings.row(c) = (b.concepts.col(c) + opt.prompt_background * b.concepts.col(2 + c)).transpose();

    const double tn = opt.text_noise / std::sqrt(static_cast<double>(d));
    b.target.descriptions = {"a photo of class 0", "a photo of class 1"};
    b.target.embeddings = b.concepts.leftCols(2).transpose() + tn * standard_normal(2, d, rng);
    b.spurious.descriptions = {"background 0", "background 1"};
    b.spurious.embeddings = b.background.transpose() + tn * standard_normal(2, d, rng);
    return b;
}

struct SpuriousPipelineResult {
    GroupMetrics before;
    GroupMetrics after;
    SpuriousReport report;
    Index true_positives = 0;  // flagged concepts lying mostly in the background span
};

/// decompose -> detect_spurious -> remove -> zero-shot, on a benchmark with
/// known background directions. A flagged concept counts as a true positive
/// when more than half its energy lies in the planted background span.
inline SpuriousPipelineResult run_spurious_pipeline(const SpuriousBenchmark& b, const DecomposeOptions& opt,
                                                    double margin, std::uint64_t seed) {
    SpuriousPipelineResult out;
    out.before = group_metrics(zero_shot_predict(b.A.data, b.prompts), *b.A.labels, b.A.groups);
    const ConceptModel model = decompose(b.A, opt, seed);
    out.report = detect_spurious(model, b.target, b.spurious, margin);
    for (Index j : out.report.flagged)
        if ((b.background.transpose() * model.Y.col(j)).squaredNorm() > 0.5) ++out.true_positives;
    const EmbeddingMatrix cleaned = remove_and_reconstruct(model, out.report.flagged, true);
    out.after = group_metrics(zero_shot_predict(cleaned.data, b.prompts), *b.A.labels, b.A.groups);
    return out;
}

}  // namespace rotsense
