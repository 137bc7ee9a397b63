#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spose/embedding.hpp"
#include "spose/evaluate.hpp"

namespace spose {

// Precomputed per-stimulus feature vectors (e.g. concatenated image and text
// encoder outputs), consumed as data.
struct FeatureMatrix {
    std::vector<ObjectId> ids;
    std::vector<std::string> columns;
    std::vector<double> values;  // row-major |ids| x |columns|

    std::size_t rows() const { return ids.size(); }
    std::size_t cols() const { return columns.size(); }
    double at(std::size_t r, std::size_t c) const { return values[r * columns.size() + c]; }
};

FeatureMatrix read_features(const std::string& path);
void write_features(const FeatureMatrix& fm, const std::string& path);

struct RidgeCvCell {
    double penalty = 0.0;
    double mse = 0.0;  // mean validation MSE across folds
    double r2 = 0.0;   // mean validation R^2 across folds
};

// One linear model per embedding dimension, on the raw feature scale.
struct RatingModel {
    std::size_t feature_count = 0;
    std::size_t target_count = 0;
    std::vector<double> weights;     // row-major target_count x feature_count
    std::vector<double> intercepts;  // per target
    std::vector<double> penalties;   // selected penalty per target
    std::vector<std::vector<RidgeCvCell>> cv_table;  // per target, per grid penalty
};

// Closed-form ridge per target dimension on standardized features (sample
// std, statistics from the training folds only), objective
// ||y - Zw - b||^2 + n * penalty * ||w||^2. The penalty is chosen per
// dimension by minimal mean validation MSE over `folds` deterministic folds
// (row i belongs to fold i mod folds); ties prefer the larger penalty.
RatingModel ridge_fit(const FeatureMatrix& features, const Embedding& targets,
                      const std::vector<double>& penalty_grid, std::size_t folds);

// Linear prediction followed by a clamp at zero (dimension values are
// non-negative by construction).
Embedding ridge_predict(const RatingModel& model, const FeatureMatrix& features);

// Spearman rho between the strict upper triangles, average ranks for ties.
double spearman_rsa(const RSM& model_rsm, const RSM& neural_rsm);

// One-sided permutation test: stimulus labels of the neural RSM are permuted
// jointly over rows and columns; p = (1 + #{rho_perm >= rho_obs}) / (1 + n).
double permutation_pvalue(const RSM& model_rsm, const RSM& neural_rsm, std::size_t n_perm,
                          std::uint64_t seed);

// Benjamini-Hochberg step-up at level q.
std::vector<bool> fdr_bh(const std::vector<double>& pvalues, double q = 0.05);

struct SiteResult {
    std::string site;
    double rho = 0.0;
    double pvalue = 1.0;
    bool significant = false;
    std::optional<double> normalized;  // rho / ceiling when a ceiling is supplied
    std::string roi;                   // empty = unlabeled
};

struct SearchlightResult {
    std::vector<SiteResult> sites;
    std::map<std::string, double> roi_mean_rho;
    std::map<std::string, double> roi_mean_normalized;  // only when ceilings are given
};

// Site-wise Spearman RSA with permutation significance and BH correction
// across sites. Per-site seeds derive from (seed, site id), so the result
// does not depend on evaluation order.
SearchlightResult searchlight(const RSM& model_rsm,
                              const std::map<std::string, RSM>& neural_rsms,
                              const std::map<std::string, double>* ceilings, std::size_t n_perm,
                              std::uint64_t seed, double q,
                              const std::map<std::string, std::string>* roi_map = nullptr,
                              Warnings* warnings = nullptr);

}  // namespace spose
