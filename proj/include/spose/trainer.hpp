#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spose/catalog.hpp"
#include "spose/embedding.hpp"

namespace spose {

// Everything a training run depends on. Two runs with equal configs and
// equal judgment files produce bitwise-identical embeddings.
struct TrainingConfig {
    std::size_t init_dims = 100;
    double lambda = 0.004;          // L1 sparsity weight
    std::size_t batch_size = 100;
    std::size_t epochs = 500;       // upper bound; early stopping usually ends sooner
    double learning_rate = 0.001;   // Adam defaults
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double prune_threshold = 0.1;   // drop dims whose max weight stays below this
    std::uint64_t seed = 0;
    double heldout_fraction = 0.1;  // internal split used for early stopping
    std::size_t patience = 10;      // epochs without relative improvement >= min_rel_improvement
    double min_rel_improvement = 1e-4;
    bool check_nonnegative_each_epoch = false;  // debug scan

    void validate() const;
};

struct LossTerms {
    double nll = 0.0;    // mean negative log-likelihood over the judgments
    double l1 = 0.0;     // lambda * sum of all weights (weights are non-negative)
    double total = 0.0;  // nll + l1
};

struct TrainReport {
    std::vector<double> train_nll;      // per epoch, on the training split
    std::vector<double> heldout_nll;    // per epoch, on the internal held-out split
    std::vector<double> l1_term;        // per epoch, lambda * sum of weights
    std::vector<double> epoch_seconds;
    std::size_t epochs_run = 0;
    bool early_stopped = false;
    std::size_t dims_before_pruning = 0;
    std::size_t final_dims = 0;
    std::vector<std::size_t> heldout_indices;  // judgment indices of the internal split
    TrainingConfig config;
};

// Mean NLL of the observed choices plus the L1 penalty. `emb` must be
// non-negative. An empty judgment list contributes nll = 0 (the L1 term is
// still reported).
LossTerms loss(const Embedding& emb, const std::vector<Judgment>& judgments, double lambda);

// Analytic gradient of loss(emb, batch, lambda).total with respect to every
// weight, as a row-major objects x dims matrix. The L1 subgradient at zero
// is 0; the projection step in train() holds weights at the boundary.
std::vector<double> gradient(const Embedding& emb, const std::vector<Judgment>& batch,
                             double lambda);

// Mini-batch Adam on the penalized choice NLL, with weights clamped to zero
// after every step. Per step the L1 term is scaled by batch/n so the
// penalty-to-data ratio does not depend on dataset size. After training,
// dimensions whose maximum weight is below prune_threshold are dropped and
// the rest are sorted by descending weight sum.
std::pair<Embedding, TrainReport> train(const JudgmentSet& judgments, std::size_t object_count,
                                        const TrainingConfig& config);

struct LambdaCell {
    double lambda = 0.0;
    double heldout_nll = 0.0;
    std::size_t final_dims = 0;
    bool failed = false;
    std::string error;
};

struct LambdaTable {
    double best_lambda = 0.0;
    std::vector<LambdaCell> cells;
};

// Grid search for the sparsity weight: one seeded train/validation split,
// one training run per lambda, argmin of validation NLL. Ties prefer the
// smaller lambda; failed cells are skipped with a warning.
LambdaTable cross_validate_lambda(const JudgmentSet& judgments, std::size_t object_count,
                                  const TrainingConfig& config, const std::vector<double>& grid,
                                  Warnings* warnings = nullptr, std::size_t jobs = 1);

}  // namespace spose
