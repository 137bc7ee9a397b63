#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spose/catalog.hpp"
#include "spose/embedding.hpp"

// Data-parallel inner loops, each in two variants: an OpenMP version (the
// default path) and a serial reference used by the tests and the benchmark
// tool. Every output element is computed independently by the same scalar
// code, so the two variants agree bitwise and results do not depend on the
// thread count. Float reductions over these outputs are done by the caller
// with pairwise_sum, which is order-fixed.

namespace spose::kernels {

// Per-judgment negative log-likelihood under the softmax choice model.
void judgment_nll(const Embedding& emb, std::span<const Judgment> judgments,
                  std::span<double> out);
void judgment_nll_serial(const Embedding& emb, std::span<const Judgment> judgments,
                         std::span<double> out);

// Per-judgment correctness indicator of the argmax prediction.
void judgment_correct(const Embedding& emb, std::span<const Judgment> judgments,
                      std::span<std::uint8_t> out);
void judgment_correct_serial(const Embedding& emb, std::span<const Judgment> judgments,
                             std::span<std::uint8_t> out);

// Model-predicted similarity matrix over `ids`: entry (i,j) is the mean,
// over every third object k from `ids`, of p(k odd | {i,j,k}); diagonal 1.
// `values` is a dense |ids| x |ids| row-major matrix.
void predicted_rsm_fill(const Embedding& emb, const std::vector<ObjectId>& ids,
                        std::vector<double>& values);
void predicted_rsm_fill_serial(const Embedding& emb, const std::vector<ObjectId>& ids,
                               std::vector<double>& values);

// Pearson correlations between every column of x and every column of y over
// the shared object axis. Row-major x.dims() by y.dims(); zero-variance
// columns produce NaN entries, interpreted by the callers.
std::vector<double> column_pearson(const Embedding& x, const Embedding& y);
std::vector<double> column_pearson_serial(const Embedding& x, const Embedding& y);

// Spearman rho of `model_ranks` (precomputed average ranks of the model
// RSM's upper triangle) against the relabeled neural RSM, for each
// permutation of the stimulus indices.
std::vector<double> permutation_rhos(std::span<const double> model_ranks,
                                     const std::vector<double>& neural, std::size_t n,
                                     const std::vector<std::vector<std::size_t>>& perms);
std::vector<double> permutation_rhos_serial(std::span<const double> model_ranks,
                                            const std::vector<double>& neural, std::size_t n,
                                            const std::vector<std::vector<std::size_t>>& perms);

}  // namespace spose::kernels
