// Benchmark of the OpenMP kernels against their serial reference
// implementations. Prints one line per kernel with both timings and the
// speedup; the outputs are also compared so a divergence shows up here
// before it shows up in an analysis.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "spose/catalog.hpp"
#include "spose/choice.hpp"
#include "spose/embedding.hpp"
#include "spose/kernels.hpp"
#include "spose/numeric.hpp"
#include "spose/rng.hpp"

using namespace spose;

namespace {

double seconds(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename F>
double time_best_of(int reps, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        best = std::min(best, seconds(t0));
    }
    return best;
}

Embedding random_embedding(std::size_t m, std::size_t d, std::uint64_t seed) {
    Embedding emb(m, d);
    Rng rng(seed);
    for (double& w : emb.weights()) w = rng.unit();
    return emb;
}

void report(const char* name, double serial, double parallel, bool equal) {
    std::printf("%-24s serial %8.4fs  openmp %8.4fs  speedup %5.2fx  outputs %s\n", name, serial,
                parallel, serial / parallel, equal ? "equal" : "DIFFER");
}

}  // namespace

int main(int argc, char** argv) {
    std::size_t m = 200;
    std::size_t d = 60;
    std::size_t judgments_n = 200000;
    if (argc > 1) m = std::stoul(argv[1]);
    if (argc > 2) d = std::stoul(argv[2]);
    if (argc > 3) judgments_n = std::stoul(argv[3]);

#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP disabled at compile time; both columns run serial code\n");
#endif
    std::printf("m=%zu objects, d=%zu dims, n=%zu judgments\n\n", m, d, judgments_n);

    const Embedding emb = random_embedding(m, d, 1);
    const std::vector<Triplet> triplets = sample_triplets_with_replacement(m, judgments_n, 2);
    const JudgmentSet set = simulate_judgments(emb, triplets, 3);

    {
        std::vector<double> a(set.judgments.size()), b(set.judgments.size());
        const double ts = time_best_of(3, [&] {
            kernels::judgment_nll_serial(emb, set.judgments, a);
        });
        const double tp = time_best_of(3, [&] { kernels::judgment_nll(emb, set.judgments, b); });
        report("judgment_nll", ts, tp, a == b);
    }
    {
        std::vector<std::uint8_t> a(set.judgments.size()), b(set.judgments.size());
        const double ts = time_best_of(3, [&] {
            kernels::judgment_correct_serial(emb, set.judgments, a);
        });
        const double tp =
            time_best_of(3, [&] { kernels::judgment_correct(emb, set.judgments, b); });
        report("judgment_correct", ts, tp, a == b);
    }
    {
        std::vector<ObjectId> ids;
        for (ObjectId i = 0; i < std::min<std::size_t>(m, 64); ++i) ids.push_back(i);
        std::vector<double> a, b;
        const double ts = time_best_of(3, [&] { kernels::predicted_rsm_fill_serial(emb, ids, a); });
        const double tp = time_best_of(3, [&] { kernels::predicted_rsm_fill(emb, ids, b); });
        report("predicted_rsm_fill", ts, tp, a == b);
    }
    {
        const Embedding other = random_embedding(m, d, 4);
        std::vector<double> a, b;
        const double ts = time_best_of(3, [&] { a = kernels::column_pearson_serial(emb, other); });
        const double tp = time_best_of(3, [&] { b = kernels::column_pearson(emb, other); });
        report("column_pearson", ts, tp, a == b);
    }
    {
        const std::size_t stimuli = 24;
        std::vector<double> neural(stimuli * stimuli, 0.0);
        Rng rng(5);
        for (std::size_t i = 0; i < stimuli; ++i) {
            for (std::size_t j = i + 1; j < stimuli; ++j) {
                const double v = rng.unit();
                neural[i * stimuli + j] = v;
                neural[j * stimuli + i] = v;
            }
        }
        std::vector<double> model_ut;
        for (std::size_t i = 0; i < stimuli; ++i) {
            for (std::size_t j = i + 1; j < stimuli; ++j) model_ut.push_back(rng.unit());
        }
        const std::vector<double> model_ranks = average_ranks(model_ut);
        std::vector<std::vector<std::size_t>> perms(2000);
        for (auto& p : perms) p = rng.permutation(stimuli);
        std::vector<double> a, b;
        const double ts = time_best_of(3, [&] {
            a = kernels::permutation_rhos_serial(model_ranks, neural, stimuli, perms);
        });
        const double tp = time_best_of(3, [&] {
            b = kernels::permutation_rhos(model_ranks, neural, stimuli, perms);
        });
        report("permutation_rhos", ts, tp, a == b);
    }
    return 0;
}
