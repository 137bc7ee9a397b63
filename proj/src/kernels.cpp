#include "spose/kernels.hpp"

#include <cmath>

#include "spose/choice.hpp"
#include "spose/numeric.hpp"

namespace spose {
namespace kernels {

namespace {

double one_judgment_nll(const Embedding& emb, const Judgment& j) {
    const ChoiceDistribution d = choice_probabilities(emb, j.triplet);
    return -std::log(d.p[j.choice]);
}

std::uint8_t one_judgment_correct(const Embedding& emb, const Judgment& j) {
    return predict_choice(emb, j.triplet) == j.choice ? 1 : 0;
}

double one_pair_similarity(const Embedding& emb, const std::vector<ObjectId>& ids,
                           std::size_t i, std::size_t j) {
    double total = 0.0;
    std::size_t contexts = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (k == i || k == j) continue;
        const Judgment canon = canonicalize(ids[i], ids[j], ids[k], 2);
        const ChoiceDistribution d = choice_probabilities(emb, canon.triplet);
        total += d.p[canon.choice];
        ++contexts;
    }
    return contexts == 0 ? 0.0 : total / static_cast<double>(contexts);
}

double one_column_pearson(const Embedding& x, const Embedding& y, std::size_t dx,
                          std::size_t dy) {
    const std::size_t m = x.objects();
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        sx += x.at(i, dx);
        sy += y.at(i, dy);
    }
    const double mx = sx / static_cast<double>(m);
    const double my = sy / static_cast<double>(m);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double a = x.at(i, dx) - mx;
        const double b = y.at(i, dy) - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nan("");
    return sxy / std::sqrt(sxx * syy);
}

double one_permutation_rho(std::span<const double> model_ranks, const std::vector<double>& neural,
                           std::size_t n, const std::vector<std::size_t>& perm) {
    std::vector<double> permuted;
    permuted.reserve(model_ranks.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            permuted.push_back(neural[perm[i] * n + perm[j]]);
        }
    }
    const std::vector<double> ranks = average_ranks(permuted);
    return pearson(model_ranks, ranks);
}

}  // namespace

void judgment_nll(const Embedding& emb, std::span<const Judgment> judgments,
                  std::span<double> out) {
    const std::int64_t n = static_cast<std::int64_t>(judgments.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        out[i] = one_judgment_nll(emb, judgments[i]);
    }
}

void judgment_nll_serial(const Embedding& emb, std::span<const Judgment> judgments,
                         std::span<double> out) {
    for (std::size_t i = 0; i < judgments.size(); ++i) {
        out[i] = one_judgment_nll(emb, judgments[i]);
    }
}

void judgment_correct(const Embedding& emb, std::span<const Judgment> judgments,
                      std::span<std::uint8_t> out) {
    const std::int64_t n = static_cast<std::int64_t>(judgments.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        out[i] = one_judgment_correct(emb, judgments[i]);
    }
}

void judgment_correct_serial(const Embedding& emb, std::span<const Judgment> judgments,
                             std::span<std::uint8_t> out) {
    for (std::size_t i = 0; i < judgments.size(); ++i) {
        out[i] = one_judgment_correct(emb, judgments[i]);
    }
}

void predicted_rsm_fill(const Embedding& emb, const std::vector<ObjectId>& ids,
                        std::vector<double>& values) {
    const std::size_t n = ids.size();
    values.assign(n * n, 1.0);
    const std::int64_t pairs = static_cast<std::int64_t>(n * (n - 1) / 2);
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t p = 0; p < pairs; ++p) {
        // Unflatten the upper-triangle pair index.
        std::size_t i = 0;
        std::int64_t rem = p;
        while (rem >= static_cast<std::int64_t>(n - 1 - i)) {
            rem -= static_cast<std::int64_t>(n - 1 - i);
            ++i;
        }
        const std::size_t j = i + 1 + static_cast<std::size_t>(rem);
        const double s = one_pair_similarity(emb, ids, i, j);
        values[i * n + j] = s;
        values[j * n + i] = s;
    }
}

void predicted_rsm_fill_serial(const Embedding& emb, const std::vector<ObjectId>& ids,
                               std::vector<double>& values) {
    const std::size_t n = ids.size();
    values.assign(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = one_pair_similarity(emb, ids, i, j);
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
}

std::vector<double> column_pearson(const Embedding& x, const Embedding& y) {
    const std::size_t dx = x.dims(), dy = y.dims();
    std::vector<double> r(dx * dy);
    const std::int64_t total = static_cast<std::int64_t>(dx * dy);
#pragma omp parallel for schedule(static)
    for (std::int64_t idx = 0; idx < total; ++idx) {
        const std::size_t i = static_cast<std::size_t>(idx) / dy;
        const std::size_t j = static_cast<std::size_t>(idx) % dy;
        r[idx] = one_column_pearson(x, y, i, j);
    }
    return r;
}

std::vector<double> column_pearson_serial(const Embedding& x, const Embedding& y) {
    const std::size_t dx = x.dims(), dy = y.dims();
    std::vector<double> r(dx * dy);
    for (std::size_t i = 0; i < dx; ++i) {
        for (std::size_t j = 0; j < dy; ++j) {
            r[i * dy + j] = one_column_pearson(x, y, i, j);
        }
    }
    return r;
}

std::vector<double> permutation_rhos(std::span<const double> model_ranks,
                                     const std::vector<double>& neural, std::size_t n,
                                     const std::vector<std::vector<std::size_t>>& perms) {
    std::vector<double> rhos(perms.size());
    const std::int64_t count = static_cast<std::int64_t>(perms.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t t = 0; t < count; ++t) {
        rhos[t] = one_permutation_rho(model_ranks, neural, n, perms[t]);
    }
    return rhos;
}

std::vector<double> permutation_rhos_serial(std::span<const double> model_ranks,
                                            const std::vector<double>& neural, std::size_t n,
                                            const std::vector<std::vector<std::size_t>>& perms) {
    std::vector<double> rhos(perms.size());
    for (std::size_t t = 0; t < perms.size(); ++t) {
        rhos[t] = one_permutation_rho(model_ranks, neural, n, perms[t]);
    }
    return rhos;
}

}  // namespace kernels
}  // namespace spose
