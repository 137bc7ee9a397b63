#include "spose/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include "spose/choice.hpp"
#include "spose/kernels.hpp"
#include "spose/numeric.hpp"
#include "spose/rng.hpp"

namespace spose {

void TrainingConfig::validate() const {
    if (init_dims == 0) throw DomainError("init_dims must be positive");
    if (lambda < 0.0) throw DomainError("lambda must be non-negative");
    if (batch_size == 0) throw DomainError("batch_size must be positive");
    if (epochs == 0) throw DomainError("epochs must be positive");
    if (learning_rate <= 0.0) throw DomainError("learning_rate must be positive");
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
        throw DomainError("Adam betas must lie in (0,1)");
    }
    if (epsilon <= 0.0) throw DomainError("epsilon must be positive");
    if (prune_threshold < 0.0) throw DomainError("prune_threshold must be non-negative");
    if (heldout_fraction <= 0.0 || heldout_fraction >= 0.5) {
        throw DomainError("heldout_fraction must lie in (0, 0.5)");
    }
}

LossTerms loss(const Embedding& emb, const std::vector<Judgment>& judgments, double lambda) {
    emb.check_nonnegative();
    LossTerms out;
    if (!judgments.empty()) {
        std::vector<double> nll(judgments.size());
        kernels::judgment_nll(emb, judgments, nll);
        out.nll = mean(nll);
    }
    out.l1 = lambda * pairwise_sum(emb.weights());
    out.total = out.nll + out.l1;
    return out;
}

namespace {

// Accumulate the data gradient of one judgment into `grad` with weight w.
// With s_xy = x . y and p the slot probabilities, dNLL/ds_ab = p[2] - [y=2]
// and cyclically; the chain rule spreads each onto the two touched rows.
void accumulate_judgment_gradient(const Embedding& emb, const Judgment& j, double w,
                                  std::vector<double>& grad) {
    const Triplet& t = j.triplet;
    const ChoiceDistribution p = choice_probabilities(emb, t);
    const double g_ab = w * (p.p[2] - (j.choice == 2 ? 1.0 : 0.0));
    const double g_ac = w * (p.p[1] - (j.choice == 1 ? 1.0 : 0.0));
    const double g_bc = w * (p.p[0] - (j.choice == 0 ? 1.0 : 0.0));
    const std::size_t d = emb.dims();
    const auto xa = emb.row(t.a);
    const auto xb = emb.row(t.b);
    const auto xc = emb.row(t.c);
    double* ga = grad.data() + static_cast<std::size_t>(t.a) * d;
    double* gb = grad.data() + static_cast<std::size_t>(t.b) * d;
    double* gc = grad.data() + static_cast<std::size_t>(t.c) * d;
    for (std::size_t k = 0; k < d; ++k) {
        ga[k] += g_ab * xb[k] + g_ac * xc[k];
        gb[k] += g_ab * xa[k] + g_bc * xc[k];
        gc[k] += g_ac * xa[k] + g_bc * xb[k];
    }
}

void add_l1_subgradient(const Embedding& emb, double lambda, std::vector<double>& grad) {
    if (lambda == 0.0) return;
    const std::vector<double>& w = emb.weights();
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] > 0.0) grad[i] += lambda;
        // sign+(0) = 0: no pull at the boundary, the projection keeps zeros.
    }
}

}  // namespace

std::vector<double> gradient(const Embedding& emb, const std::vector<Judgment>& batch,
                             double lambda) {
    emb.check_nonnegative();
    std::vector<double> grad(emb.objects() * emb.dims(), 0.0);
    if (!batch.empty()) {
        const double w = 1.0 / static_cast<double>(batch.size());
        for (const Judgment& j : batch) {
            if (j.triplet.c >= emb.objects()) {
                throw DomainError("judgment references an object outside the embedding");
            }
            accumulate_judgment_gradient(emb, j, w, grad);
        }
    }
    add_l1_subgradient(emb, lambda, grad);
    return grad;
}

namespace {

double heldout_mean_nll(const Embedding& emb, const std::vector<Judgment>& heldout) {
    if (heldout.empty()) return 0.0;
    std::vector<double> nll(heldout.size());
    kernels::judgment_nll(emb, heldout, nll);
    return mean(nll);
}

}  // namespace

std::pair<Embedding, TrainReport> train(const JudgmentSet& judgments, std::size_t object_count,
                                        const TrainingConfig& config) {
    config.validate();
    if (judgments.judgments.empty()) throw DomainError("train: judgment set is empty");
    validate_against(judgments, object_count);

    const std::size_t m = object_count;
    const std::size_t d = config.init_dims;
    Rng rng(config.seed);

    // Seeded split: the held-out tail of a shuffled index list.
    std::vector<std::size_t> order = rng.permutation(judgments.judgments.size());
    std::size_t heldout_count =
        static_cast<std::size_t>(config.heldout_fraction * static_cast<double>(order.size()));
    if (heldout_count == 0 && order.size() >= 10) heldout_count = 1;
    std::vector<Judgment> trainset, heldout;
    trainset.reserve(order.size() - heldout_count);
    heldout.reserve(heldout_count);
    TrainReport report;
    report.config = config;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i < heldout_count) {
            heldout.push_back(judgments.judgments[order[i]]);
            report.heldout_indices.push_back(order[i]);
        } else {
            trainset.push_back(judgments.judgments[order[i]]);
        }
    }
    if (trainset.empty()) throw DomainError("train: no judgments left after the held-out split");

    Embedding emb(m, d);
    for (double& w : emb.weights()) w = rng.unit();

    std::vector<double> mom(m * d, 0.0), vel(m * d, 0.0);
    std::vector<double> grad(m * d);
    std::vector<std::size_t> epoch_order(trainset.size());
    for (std::size_t i = 0; i < epoch_order.size(); ++i) epoch_order[i] = i;

    const double step_lambda =
        config.lambda * static_cast<double>(std::min(config.batch_size, trainset.size())) /
        static_cast<double>(trainset.size());

    double best_heldout = std::numeric_limits<double>::infinity();
    std::size_t stale_epochs = 0;
    std::uint64_t step = 0;
    std::vector<Judgment> batch;
    batch.reserve(config.batch_size);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        rng.shuffle(epoch_order);

        for (std::size_t start = 0; start < epoch_order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(start + config.batch_size, epoch_order.size());
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) {
                batch.push_back(trainset[epoch_order[i]]);
            }

            std::fill(grad.begin(), grad.end(), 0.0);
            const double w = 1.0 / static_cast<double>(batch.size());
            for (const Judgment& j : batch) accumulate_judgment_gradient(emb, j, w, grad);
            add_l1_subgradient(emb, step_lambda, grad);

            ++step;
            const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
            std::vector<double>& weights = emb.weights();
            for (std::size_t i = 0; i < weights.size(); ++i) {
                const double g = grad[i];
                mom[i] = config.beta1 * mom[i] + (1.0 - config.beta1) * g;
                vel[i] = config.beta2 * vel[i] + (1.0 - config.beta2) * g * g;
                const double update = config.learning_rate * (mom[i] / bc1) /
                                      (std::sqrt(vel[i] / bc2) + config.epsilon);
                double w_new = weights[i] - update;
                if (w_new < 0.0) w_new = 0.0;  // projection onto the non-negative orthant
                weights[i] = w_new;
            }
        }

        if (config.check_nonnegative_each_epoch) emb.check_nonnegative();

        const LossTerms train_terms = loss(emb, trainset, config.lambda);
        const double ho_nll = heldout_mean_nll(emb, heldout);
        if (!std::isfinite(train_terms.total) || !std::isfinite(ho_nll)) {
            throw Error("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                        " (check the learning rate, currently " +
                        std::to_string(config.learning_rate) + ")");
        }
        report.train_nll.push_back(train_terms.nll);
        report.heldout_nll.push_back(ho_nll);
        report.l1_term.push_back(train_terms.l1);
        report.epoch_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        report.epochs_run = epoch + 1;

        // Plateau stop: `patience` epochs without a relative improvement of
        // the held-out NLL by at least min_rel_improvement.
        const double reference = heldout.empty() ? train_terms.nll : ho_nll;
        if (reference < best_heldout * (1.0 - config.min_rel_improvement)) {
            best_heldout = reference;
            stale_epochs = 0;
        } else {
            if (reference < best_heldout) best_heldout = reference;
            ++stale_epochs;
            if (stale_epochs >= config.patience) {
                report.early_stopped = true;
                break;
            }
        }
    }

    report.dims_before_pruning = emb.dims();

    // Drop dimensions whose maximum weight over objects stayed below the
    // threshold, then sort the survivors by descending weight sum.
    std::vector<std::size_t> keep;
    for (std::size_t dim = 0; dim < emb.dims(); ++dim) {
        if (emb.max_weight(dim) >= config.prune_threshold) keep.push_back(dim);
    }
    if (keep.empty()) {
        throw Error("all " + std::to_string(emb.dims()) +
                    " dimensions fell below the pruning threshold " +
                    std::to_string(config.prune_threshold) +
                    "; the embedding is empty (lambda too large?)");
    }
    emb.reorder_dims(keep);
    emb.sort_dims_by_weight_sum();
    report.final_dims = emb.dims();
    return {std::move(emb), std::move(report)};
}

LambdaTable cross_validate_lambda(const JudgmentSet& judgments, std::size_t object_count,
                                  const TrainingConfig& config, const std::vector<double>& grid,
                                  Warnings* warnings, std::size_t jobs) {
    if (grid.empty()) throw DomainError("cross_validate_lambda: empty grid");
    config.validate();
    if (judgments.judgments.empty()) throw DomainError("cross_validate_lambda: no judgments");

    // One shared validation split so every lambda is scored on the same data.
    Rng rng(mix64(config.seed, 0x9a7b));
    std::vector<std::size_t> order = rng.permutation(judgments.judgments.size());
    const std::size_t val_count = std::max<std::size_t>(
        1, static_cast<std::size_t>(config.heldout_fraction * static_cast<double>(order.size())));
    JudgmentSet trainset;
    trainset.provenance = judgments.provenance;
    std::vector<Judgment> validation;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i < val_count) {
            validation.push_back(judgments.judgments[order[i]]);
        } else {
            trainset.judgments.push_back(judgments.judgments[order[i]]);
        }
    }

    LambdaTable table;
    table.cells.resize(grid.size());
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, grid.size()));

    auto run_cell = [&](std::size_t g) {
        LambdaCell& cell = table.cells[g];
        cell.lambda = grid[g];
        try {
            TrainingConfig cfg = config;
            cfg.lambda = grid[g];
            auto [emb, rep] = train(trainset, object_count, cfg);
            cell.heldout_nll = loss(emb, validation, 0.0).nll;
            cell.final_dims = rep.final_dims;
        } catch (const std::exception& e) {
            cell.failed = true;
            cell.error = e.what();
        }
    };

    if (workers <= 1) {
        for (std::size_t g = 0; g < grid.size(); ++g) run_cell(g);
    } else {
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t g = next.fetch_add(1); g < grid.size(); g = next.fetch_add(1)) {
                    run_cell(g);
                }
            });
        }
        for (std::thread& t : pool) t.join();
    }

    bool any = false;
    double best_nll = std::numeric_limits<double>::infinity();
    double best_lambda = 0.0;
    for (const LambdaCell& cell : table.cells) {
        if (cell.failed) {
            warn(warnings, "lambda " + std::to_string(cell.lambda) + " failed: " + cell.error);
            continue;
        }
        any = true;
        const bool better = cell.heldout_nll < best_nll ||
                            (cell.heldout_nll == best_nll && cell.lambda < best_lambda);
        if (better) {
            best_nll = cell.heldout_nll;
            best_lambda = cell.lambda;
        }
    }
    if (!any) throw Error("cross_validate_lambda: every grid cell failed");
    table.best_lambda = best_lambda;
    return table;
}

}  // namespace spose
