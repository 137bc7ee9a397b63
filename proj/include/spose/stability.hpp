#pragma once

#include <optional>
#include <vector>

#include "spose/catalog.hpp"
#include "spose/embedding.hpp"

namespace spose {

// Best reference dimension for one target dimension of one reference run.
struct DimensionMatch {
    std::size_t source_dim = 0;
    std::size_t ref_dim = 0;
    double r = 0.0;  // Pearson over the m objects; 0 for degenerate columns
};

// For every target dimension, the best-correlated dimension of `reference`.
// Both embeddings must cover the same objects in the same order.
std::vector<DimensionMatch> match_dimensions(const Embedding& target, const Embedding& reference,
                                             Warnings* warnings = nullptr);

struct ReproducibilityReport {
    std::vector<double> scores;          // per target dimension, in [-1, 1]
    std::size_t run_count = 0;           // number of reference runs
    std::vector<std::size_t> selected;   // filled by select_top_k (original indices)
};

// Fisher-z averaged best-match correlation against every reference run:
// score(dim) = tanh(mean_ref atanh(best r)), with r clipped to +-(1 - 1e-7).
ReproducibilityReport reproducibility_scores(const Embedding& target,
                                             const std::vector<Embedding>& references,
                                             Warnings* warnings = nullptr);

// Greedy redundancy pruning in the current dimension order: a dimension is
// kept iff |r| with every already-kept dimension stays at or below the
// threshold.
Embedding prune_redundant(const Embedding& emb, double threshold = 0.4);

// The k dimensions with the highest reproducibility scores (ties prefer the
// lower original index), re-sorted by descending weight sum. Weights are
// copied untouched; the chosen original indices are recorded in the report.
Embedding select_top_k(const Embedding& emb, ReproducibilityReport& report, std::size_t k);

// Per-object count of dimensions needed to retain `retention` of that
// object's baseline odd-one-out accuracy, zeroing the smallest nonzero
// weight iteratively. Objects without judgments get nullopt.
std::vector<std::optional<std::size_t>> minimal_dimensions(const Embedding& emb,
                                                           const std::vector<Judgment>& judgments,
                                                           double retention);

}  // namespace spose
