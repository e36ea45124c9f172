// Plant sparse concepts, test for rotation-sensitive structure, then recover
// the concept dictionary with a varimax-rotated SVD.

#include <iostream>

#include "rotsense/concepts.hpp"
#include "rotsense/eval.hpp"
#include "rotsense/hypotest.hpp"

int main() {
    using namespace rotsense;

    Rng rng = substream(2024, 0);
    const PlantedConcepts planted = make_planted_concepts(3000, 32, 5, KurtosisFamily::two_point, 0.05, rng);

    const TruncatedSVD svd = truncated_svd(planted.A.data, 5);
    TestOptions test;
    test.n_resample = 99;
    const TestReport rep = run_test(svd.U, test, 7);
    std::cout << "TS1 = " << rep.ts1_obs << "  p_kur = " << rep.p_kur << "\n";
    std::cout << "TS2 = " << rep.ts2_obs << "  p_var = " << rep.p_var << "\n";

    DecomposeOptions opt;
    opt.k = 5;
    opt.norm_mode = NormMode::none;
    const ConceptModel model = decompose(planted.A, opt, 7);

    // Each recovered concept should line up with one planted direction.
    const Matrix overlap = (model.Y.transpose() * planted.Y).cwiseAbs();
    for (Index j = 0; j < model.k; ++j) {
        Index best = 0;
        const double c = overlap.row(j).maxCoeff(&best);
        std::cout << "concept " << j << " ~ planted " << best << "  |cos| = " << c << "\n";
    }
}
