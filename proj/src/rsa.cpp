#include "spose/rsa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spose/kernels.hpp"
#include "spose/numeric.hpp"
#include "spose/rng.hpp"
#include "spose/tsv.hpp"

namespace spose {

FeatureMatrix read_features(const std::string& path) {
    std::ifstream in = tsv::open_input(path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing header line", path, 1);
    std::vector<std::string> header = tsv::split(tsv::strip_eol(line));
    if (header.empty() || header[0] != "id") {
        throw ParseError("feature header must start with 'id'", path, 1);
    }
    FeatureMatrix fm;
    fm.columns.assign(header.begin() + 1, header.end());
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = tsv::strip_eol(line);
        if (line.empty()) continue;
        std::vector<std::string> f = tsv::split(line);
        if (f.size() != fm.columns.size() + 1) {
            throw ParseError("expected " + std::to_string(fm.columns.size() + 1) + " fields", path,
                             lineno);
        }
        const long id = tsv::parse_long(f[0], path, lineno);
        if (id < 0) throw ParseError("ids must be non-negative", path, lineno);
        for (const ObjectId prev : fm.ids) {
            if (prev == static_cast<ObjectId>(id)) {
                throw ParseError("duplicate row id " + f[0], path, lineno);
            }
        }
        fm.ids.push_back(static_cast<ObjectId>(id));
        for (std::size_t c = 0; c < fm.columns.size(); ++c) {
            fm.values.push_back(tsv::parse_double(f[c + 1], path, lineno));
        }
    }
    return fm;
}

void write_features(const FeatureMatrix& fm, const std::string& path) {
    std::ofstream out = tsv::open_output(path);
    out << "id";
    for (const std::string& c : fm.columns) out << '\t' << c;
    out << '\n';
    for (std::size_t r = 0; r < fm.rows(); ++r) {
        out << fm.ids[r];
        for (std::size_t c = 0; c < fm.cols(); ++c) out << '\t' << tsv::format_double(fm.at(r, c));
        out << '\n';
    }
    if (!out) throw Error("write failed: " + path);
}

namespace {

// FNV-1a, so per-site seeds do not depend on the standard library's
// std::hash implementation.
std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> sd;  // sample standard deviation; constant columns get sd = 1
};

Standardizer fit_standardizer(const FeatureMatrix& fm, const std::vector<std::size_t>& rows) {
    const std::size_t p = fm.cols();
    Standardizer s;
    s.mean.assign(p, 0.0);
    s.sd.assign(p, 1.0);
    for (std::size_t r : rows) {
        for (std::size_t c = 0; c < p; ++c) s.mean[c] += fm.at(r, c);
    }
    for (double& mu : s.mean) mu /= static_cast<double>(rows.size());
    if (rows.size() > 1) {
        std::vector<double> ss(p, 0.0);
        for (std::size_t r : rows) {
            for (std::size_t c = 0; c < p; ++c) {
                const double d = fm.at(r, c) - s.mean[c];
                ss[c] += d * d;
            }
        }
        for (std::size_t c = 0; c < p; ++c) {
            const double var = ss[c] / static_cast<double>(rows.size() - 1);
            s.sd[c] = var > 0.0 ? std::sqrt(var) : 1.0;
        }
    }
    return s;
}

// Solve (A + shift*I) w = b in place via Cholesky; A is p x p row-major
// symmetric. Returns false when the shifted matrix is not positive definite.
bool cholesky_solve(std::vector<double> a, std::size_t p, double shift, std::vector<double>& b) {
    for (std::size_t i = 0; i < p; ++i) a[i * p + i] += shift;
    // decompose: a := L with a = L L^T
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a[i * p + j];
            for (std::size_t k = 0; k < j; ++k) sum -= a[i * p + k] * a[j * p + k];
            if (i == j) {
                if (sum <= 0.0) return false;
                a[i * p + i] = std::sqrt(sum);
            } else {
                a[i * p + j] = sum / a[j * p + j];
            }
        }
    }
    // forward then backward substitution
    for (std::size_t i = 0; i < p; ++i) {
        double sum = b[i];
        for (std::size_t k = 0; k < i; ++k) sum -= a[i * p + k] * b[k];
        b[i] = sum / a[i * p + i];
    }
    for (std::size_t ii = p; ii-- > 0;) {
        double sum = b[ii];
        for (std::size_t k = ii + 1; k < p; ++k) sum -= a[k * p + ii] * b[k];
        b[ii] = sum / a[ii * p + ii];
    }
    return true;
}

// Ridge weights on standardized features for the rows in `train`:
// w = (Z^T Z + n*penalty*I)^-1 Z^T (y - mean(y)), intercept = mean(y).
struct RidgeSolution {
    std::vector<double> w;  // standardized scale
    double intercept = 0.0;
    bool ok = true;
};

RidgeSolution ridge_solve(const FeatureMatrix& fm, const std::vector<double>& y,
                          const std::vector<std::size_t>& train, const Standardizer& st,
                          double penalty) {
    const std::size_t p = fm.cols();
    const std::size_t n = train.size();
    std::vector<double> z(n * p);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            z[r * p + c] = (fm.at(train[r], c) - st.mean[c]) / st.sd[c];
        }
    }
    double ybar = 0.0;
    for (std::size_t r : train) ybar += y[r];
    ybar /= static_cast<double>(n);

    std::vector<double> gram(p * p, 0.0);
    std::vector<double> rhs(p, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const double yc = y[train[r]] - ybar;
        for (std::size_t i = 0; i < p; ++i) {
            rhs[i] += z[r * p + i] * yc;
            for (std::size_t j = 0; j <= i; ++j) gram[i * p + j] += z[r * p + i] * z[r * p + j];
        }
    }
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = i + 1; j < p; ++j) gram[i * p + j] = gram[j * p + i];
    }

    RidgeSolution sol;
    sol.intercept = ybar;
    sol.w = rhs;
    sol.ok = cholesky_solve(std::move(gram), p, static_cast<double>(n) * penalty, sol.w);
    return sol;
}

double predict_standardized(const FeatureMatrix& fm, std::size_t row, const Standardizer& st,
                            const RidgeSolution& sol) {
    double v = sol.intercept;
    for (std::size_t c = 0; c < fm.cols(); ++c) {
        v += sol.w[c] * (fm.at(row, c) - st.mean[c]) / st.sd[c];
    }
    return v;
}

}  // namespace

RatingModel ridge_fit(const FeatureMatrix& features, const Embedding& targets,
                      const std::vector<double>& penalty_grid, std::size_t folds) {
    if (features.rows() != targets.objects()) {
        throw DomainError("ridge_fit: feature rows do not align with target rows");
    }
    if (features.rows() == 0 || features.cols() == 0) {
        throw DomainError("ridge_fit: empty feature matrix");
    }
    if (folds < 2) throw DomainError("ridge_fit needs at least 2 folds");
    if (penalty_grid.empty()) throw DomainError("ridge_fit: empty penalty grid");
    for (double a : penalty_grid) {
        if (a < 0.0) throw DomainError("ridge penalties must be non-negative");
    }
    if (folds > features.rows()) folds = features.rows();

    const std::size_t n = features.rows();
    const std::size_t p = features.cols();
    const std::size_t k = targets.dims();

    // Deterministic fold assignment: row i -> fold i mod folds.
    std::vector<std::vector<std::size_t>> fold_rows(folds);
    for (std::size_t i = 0; i < n; ++i) fold_rows[i % folds].push_back(i);
    std::vector<std::vector<std::size_t>> fold_train(folds);
    for (std::size_t f = 0; f < folds; ++f) {
        for (std::size_t i = 0; i < n; ++i) {
            if (i % folds != f) fold_train[f].push_back(i);
        }
    }
    std::vector<Standardizer> fold_std(folds);
    for (std::size_t f = 0; f < folds; ++f) fold_std[f] = fit_standardizer(features, fold_train[f]);

    RatingModel model;
    model.feature_count = p;
    model.target_count = k;
    model.weights.assign(k * p, 0.0);
    model.intercepts.assign(k, 0.0);
    model.penalties.assign(k, 0.0);
    model.cv_table.resize(k);

    std::vector<std::size_t> all_rows(n);
    std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
    const Standardizer full_std = fit_standardizer(features, all_rows);

    for (std::size_t dim = 0; dim < k; ++dim) {
        const std::vector<double> y = targets.column(dim);
        std::vector<RidgeCvCell>& cells = model.cv_table[dim];
        cells.resize(penalty_grid.size());

        // A single candidate needs no cross-validation.
        const std::size_t evaluated = penalty_grid.size() > 1 ? penalty_grid.size() : 0;
        if (evaluated == 0) {
            cells[0] = RidgeCvCell{penalty_grid[0], std::nan(""), std::nan("")};
        }
        for (std::size_t g = 0; g < evaluated; ++g) {
            const double penalty = penalty_grid[g];
            double mse_sum = 0.0, r2_sum = 0.0;
            for (std::size_t f = 0; f < folds; ++f) {
                const RidgeSolution sol =
                    ridge_solve(features, y, fold_train[f], fold_std[f], penalty);
                if (!sol.ok) {
                    throw Error("ridge_fit: singular system at penalty " + std::to_string(penalty) +
                                " (rank-deficient features need a positive penalty)");
                }
                double sse = 0.0, sst = 0.0, ybar = 0.0;
                for (std::size_t r : fold_rows[f]) ybar += y[r];
                ybar /= static_cast<double>(fold_rows[f].size());
                for (std::size_t r : fold_rows[f]) {
                    const double pred = predict_standardized(features, r, fold_std[f], sol);
                    sse += (y[r] - pred) * (y[r] - pred);
                    sst += (y[r] - ybar) * (y[r] - ybar);
                }
                mse_sum += sse / static_cast<double>(fold_rows[f].size());
                r2_sum += sst > 0.0 ? 1.0 - sse / sst : 0.0;
            }
            cells[g] = RidgeCvCell{penalty, mse_sum / static_cast<double>(folds),
                                   r2_sum / static_cast<double>(folds)};
        }

        std::size_t best = 0;
        for (std::size_t g = 1; g < evaluated; ++g) {
            // ties prefer the larger penalty
            if (cells[g].mse < cells[best].mse ||
                (cells[g].mse == cells[best].mse && cells[g].penalty > cells[best].penalty)) {
                best = g;
            }
        }
        model.penalties[dim] = cells[best].penalty;

        // Refit on everything, then fold the standardization into raw-scale
        // weights so prediction never needs the training statistics.
        const RidgeSolution sol =
            ridge_solve(features, y, all_rows, full_std, cells[best].penalty);
        if (!sol.ok) {
            throw Error("ridge_fit: singular system at selected penalty " +
                        std::to_string(cells[best].penalty));
        }
        double intercept = sol.intercept;
        for (std::size_t c = 0; c < p; ++c) {
            const double w_raw = sol.w[c] / full_std.sd[c];
            model.weights[dim * p + c] = w_raw;
            intercept -= w_raw * full_std.mean[c];
        }
        model.intercepts[dim] = intercept;
    }
    return model;
}

Embedding ridge_predict(const RatingModel& model, const FeatureMatrix& features) {
    if (features.cols() != model.feature_count) {
        throw DomainError("ridge_predict: feature count mismatch (model has " +
                          std::to_string(model.feature_count) + ", input has " +
                          std::to_string(features.cols()) + ")");
    }
    Embedding out(features.rows(), model.target_count);
    for (std::size_t r = 0; r < features.rows(); ++r) {
        for (std::size_t dim = 0; dim < model.target_count; ++dim) {
            double v = model.intercepts[dim];
            for (std::size_t c = 0; c < model.feature_count; ++c) {
                v += model.weights[dim * model.feature_count + c] * features.at(r, c);
            }
            out.at(r, dim) = v < 0.0 ? 0.0 : v;  // dimension values are non-negative
        }
    }
    return out;
}

double spearman_rsa(const RSM& model_rsm, const RSM& neural_rsm) {
    if (model_rsm.ids != neural_rsm.ids) throw DomainError("spearman_rsa: stimulus sets differ");
    if (model_rsm.size() < 4) throw DomainError("spearman_rsa needs at least 4 stimuli");
    return spearman(model_rsm.upper_triangle(), neural_rsm.upper_triangle());
}

double permutation_pvalue(const RSM& model_rsm, const RSM& neural_rsm, std::size_t n_perm,
                          std::uint64_t seed) {
    if (n_perm < 100) throw DomainError("permutation_pvalue needs n_perm >= 100");
    const double observed = spearman_rsa(model_rsm, neural_rsm);

    const std::vector<double> model_ranks = average_ranks(model_rsm.upper_triangle());
    // Permutations come from one sequential stream; evaluating them is the
    // parallel part.
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> perms(n_perm);
    for (auto& p : perms) p = rng.permutation(model_rsm.size());

    const std::vector<double> rhos =
        kernels::permutation_rhos(model_ranks, neural_rsm.values, neural_rsm.size(), perms);
    std::size_t ge = 0;
    for (double rho : rhos) {
        if (rho >= observed) ++ge;
    }
    return static_cast<double>(1 + ge) / static_cast<double>(1 + n_perm);
}

std::vector<bool> fdr_bh(const std::vector<double>& pvalues, double q) {
    if (q <= 0.0 || q >= 1.0) throw DomainError("fdr_bh: q must lie in (0,1)");
    const std::size_t m = pvalues.size();
    std::vector<bool> mask(m, false);
    if (m == 0) return mask;
    for (double p : pvalues) {
        if (!(p > 0.0) || p > 1.0) throw DomainError("fdr_bh: p-values must lie in (0,1]");
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return pvalues[a] < pvalues[b]; });
    std::size_t cutoff = 0;  // number of rejected ranks
    for (std::size_t rank = m; rank >= 1; --rank) {
        if (pvalues[order[rank - 1]] <=
            static_cast<double>(rank) * q / static_cast<double>(m)) {
            cutoff = rank;
            break;
        }
    }
    for (std::size_t rank = 0; rank < cutoff; ++rank) mask[order[rank]] = true;
    return mask;
}

SearchlightResult searchlight(const RSM& model_rsm,
                              const std::map<std::string, RSM>& neural_rsms,
                              const std::map<std::string, double>* ceilings, std::size_t n_perm,
                              std::uint64_t seed, double q,
                              const std::map<std::string, std::string>* roi_map,
                              Warnings* warnings) {
    if (neural_rsms.empty()) throw DomainError("searchlight: no sites given");

    SearchlightResult res;
    res.sites.reserve(neural_rsms.size());
    for (const auto& [site, rsm] : neural_rsms) {
        SiteResult sr;
        sr.site = site;
        const std::uint64_t site_seed = mix64(seed, fnv1a(site));
        sr.rho = spearman_rsa(model_rsm, rsm);
        sr.pvalue = permutation_pvalue(model_rsm, rsm, n_perm, site_seed);
        if (ceilings) {
            const auto it = ceilings->find(site);
            if (it == ceilings->end()) {
                throw DomainError("searchlight: no ceiling supplied for site '" + site + "'");
            }
            if (it->second == 0.0) throw DomainError("searchlight: zero ceiling for '" + site + "'");
            sr.normalized = sr.rho / it->second;
        }
        if (roi_map) {
            const auto it = roi_map->find(site);
            if (it != roi_map->end()) {
                sr.roi = it->second;
            } else {
                warn(warnings, "site '" + site + "' has no ROI label");
            }
        }
        res.sites.push_back(std::move(sr));
    }

    std::vector<double> pvals;
    pvals.reserve(res.sites.size());
    for (const SiteResult& sr : res.sites) pvals.push_back(sr.pvalue);
    const std::vector<bool> mask = fdr_bh(pvals, q);
    for (std::size_t i = 0; i < res.sites.size(); ++i) res.sites[i].significant = mask[i];

    std::map<std::string, std::vector<double>> roi_rho, roi_norm;
    for (const SiteResult& sr : res.sites) {
        if (sr.roi.empty()) continue;
        roi_rho[sr.roi].push_back(sr.rho);
        if (sr.normalized) roi_norm[sr.roi].push_back(*sr.normalized);
    }
    for (const auto& [roi, values] : roi_rho) res.roi_mean_rho[roi] = mean(values);
    for (const auto& [roi, values] : roi_norm) res.roi_mean_normalized[roi] = mean(values);
    return res;
}

}  // namespace spose
