#include "spose/stability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "spose/choice.hpp"
#include "spose/kernels.hpp"
#include "spose/numeric.hpp"

namespace spose {

std::vector<DimensionMatch> match_dimensions(const Embedding& target, const Embedding& reference,
                                             Warnings* warnings) {
    if (target.objects() != reference.objects()) {
        throw DomainError("match_dimensions: embeddings cover different object counts");
    }
    const std::vector<double> r = kernels::column_pearson(target, reference);
    const std::size_t dr = reference.dims();
    std::vector<DimensionMatch> out;
    out.reserve(target.dims());
    bool degenerate = false;
    for (std::size_t dt = 0; dt < target.dims(); ++dt) {
        DimensionMatch best{dt, 0, -2.0};
        for (std::size_t j = 0; j < dr; ++j) {
            double rij = r[dt * dr + j];
            if (std::isnan(rij)) {
                degenerate = true;
                rij = 0.0;
            }
            if (rij > best.r) {
                best.ref_dim = j;
                best.r = rij;
            }
        }
        out.push_back(best);
    }
    if (degenerate) {
        warn(warnings, "match_dimensions: constant column(s) encountered, correlation set to 0");
    }
    return out;
}

ReproducibilityReport reproducibility_scores(const Embedding& target,
                                             const std::vector<Embedding>& references,
                                             Warnings* warnings) {
    if (references.size() < 2) {
        throw DomainError("reproducibility_scores needs at least 2 reference runs, got " +
                          std::to_string(references.size()));
    }
    const double clip = 1.0 - 1e-7;
    std::vector<double> z_sum(target.dims(), 0.0);
    for (const Embedding& ref : references) {
        const std::vector<DimensionMatch> matches = match_dimensions(target, ref, warnings);
        for (std::size_t d = 0; d < target.dims(); ++d) {
            const double r = std::clamp(matches[d].r, -clip, clip);
            z_sum[d] += std::atanh(r);
        }
    }
    ReproducibilityReport report;
    report.run_count = references.size();
    report.scores.resize(target.dims());
    for (std::size_t d = 0; d < target.dims(); ++d) {
        report.scores[d] = std::tanh(z_sum[d] / static_cast<double>(references.size()));
    }
    return report;
}

Embedding prune_redundant(const Embedding& emb, double threshold) {
    if (threshold <= 0.0 || threshold >= 1.0) {
        throw DomainError("redundancy threshold must lie in (0,1)");
    }
    const std::vector<double> r = kernels::column_pearson(emb, emb);
    const std::size_t d = emb.dims();
    std::vector<std::size_t> keep;
    for (std::size_t dim = 0; dim < d; ++dim) {
        bool redundant = false;
        for (std::size_t kept : keep) {
            const double rij = r[dim * d + kept];
            if (!std::isnan(rij) && std::fabs(rij) > threshold) {
                redundant = true;
                break;
            }
        }
        if (!redundant) keep.push_back(dim);
    }
    Embedding out = emb;
    out.reorder_dims(keep);
    return out;
}

Embedding select_top_k(const Embedding& emb, ReproducibilityReport& report, std::size_t k) {
    if (report.scores.size() != emb.dims()) {
        throw DomainError("select_top_k: report covers a different dimensionality");
    }
    if (k > emb.dims()) {
        throw DomainError("select_top_k: asked for " + std::to_string(k) + " dimensions but only " +
                          std::to_string(emb.dims()) + " are available");
    }
    std::vector<std::size_t> order(emb.dims());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (report.scores[a] != report.scores[b]) return report.scores[a] > report.scores[b];
        return a < b;
    });
    order.resize(k);
    std::sort(order.begin(), order.end());  // stable identity before the weight-sum resort
    report.selected = order;
    Embedding out = emb;
    out.reorder_dims(order);
    out.sort_dims_by_weight_sum();
    return out;
}

namespace {

double accuracy_over(const Embedding& emb, const std::vector<Judgment>& judgments) {
    if (judgments.empty()) return 0.0;
    std::size_t hits = 0;
    for (const Judgment& j : judgments) {
        if (predict_choice(emb, j.triplet) == j.choice) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(judgments.size());
}

}  // namespace

std::vector<std::optional<std::size_t>> minimal_dimensions(const Embedding& emb,
                                                           const std::vector<Judgment>& judgments,
                                                           double retention) {
    if (retention <= 0.0 || retention > 1.0) {
        throw DomainError("retention must lie in (0, 1]");
    }
    const std::size_t m = emb.objects();
    std::vector<std::vector<Judgment>> per_object(m);
    for (const Judgment& j : judgments) {
        if (j.triplet.c >= m) throw DomainError("judgment references an object outside the embedding");
        per_object[j.triplet.a].push_back(j);
        per_object[j.triplet.b].push_back(j);
        per_object[j.triplet.c].push_back(j);
    }

    std::vector<std::optional<std::size_t>> counts(m);
    Embedding work = emb;
    for (std::size_t obj = 0; obj < m; ++obj) {
        if (per_object[obj].empty()) continue;  // reported as missing
        const double baseline = accuracy_over(emb, per_object[obj]);
        const double floor = retention * baseline;

        auto row = work.row(obj);
        std::size_t active = 0;
        for (double w : row) {
            if (w > 0.0) ++active;
        }

        // Zero the smallest nonzero weight while accuracy stays at or above
        // retention * baseline; the first violating step is not applied.
        while (active > 0) {
            std::size_t smallest = emb.dims();
            double smallest_w = std::numeric_limits<double>::infinity();
            for (std::size_t dim = 0; dim < emb.dims(); ++dim) {
                if (row[dim] > 0.0 && row[dim] < smallest_w) {
                    smallest_w = row[dim];
                    smallest = dim;
                }
            }
            const double saved = row[smallest];
            row[smallest] = 0.0;
            if (accuracy_over(work, per_object[obj]) >= floor) {
                --active;
            } else {
                row[smallest] = saved;
                break;
            }
        }
        counts[obj] = active;

        // Restore the probed row for the next object.
        auto original = emb.row(obj);
        std::copy(original.begin(), original.end(), row.begin());
    }
    return counts;
}

}  // namespace spose
