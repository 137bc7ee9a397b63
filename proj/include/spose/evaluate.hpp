#pragma once

#include <map>
#include <string>
#include <vector>

#include "spose/catalog.hpp"
#include "spose/embedding.hpp"

namespace spose {

enum class RsmSemantics { probability, dot };

// Symmetric object-pair similarity matrix. Probability semantics means each
// off-diagonal entry is a choice probability in [0,1] with diagonal 1.
struct RSM {
    std::vector<ObjectId> ids;
    std::vector<double> values;  // row-major |ids| x |ids|
    RsmSemantics semantics = RsmSemantics::probability;

    std::size_t size() const { return ids.size(); }
    double at(std::size_t i, std::size_t j) const { return values[i * ids.size() + j]; }

    void check_symmetric(double tol = 1e-12) const;
    // Strict upper triangle, row by row.
    std::vector<double> upper_triangle() const;
};

// RSM file: "# semantics: probability|dot", then a square tab-separated
// matrix with an id header row and id first column.
RSM read_rsm(const std::string& path);
void write_rsm(const RSM& rsm, const std::string& path);

struct AccuracyResult {
    double accuracy = 0.0;
    std::size_t n = 0;
    double lo95 = 0.0;  // Wilson 95% interval
    double hi95 = 0.0;
};

// Fraction of judgments where the argmax prediction matches the recorded
// choice. The caller guarantees the judgments were not used in training.
AccuracyResult heldout_accuracy(const Embedding& emb, const std::vector<Judgment>& judgments);

// Model-side RSM: similarity(i,j) marginalizes p(third object odd) over all
// contexts from `subset`, mirroring how the measured RSM is assembled.
RSM predicted_rsm(const Embedding& emb, const std::vector<ObjectId>& subset);

// Behavioral RSM: similarity(i,j) = fraction of judgments containing {i,j}
// in which the third object was the odd one out. Every pair must be covered.
RSM measured_rsm(const std::vector<Judgment>& judgments, const std::vector<ObjectId>& subset);

// Pearson correlation over the strict upper triangles.
double rsm_correlation(const RSM& a, const RSM& b);

struct CategorizationResult {
    double top1_accuracy = 0.0;
    std::size_t n = 0;
    std::map<std::string, double> per_category_accuracy;
    // (true category, predicted category) -> count
    std::map<std::pair<std::string, std::string>, std::size_t> confusion;
};

// Leave-one-object-out nearest-centroid classification over the catalog's
// categories. Categories with fewer than 2 members are excluded with a
// warning; distance ties go to the lexicographically first category name.
CategorizationResult categorize(const Embedding& emb, const ObjectCatalog& catalog,
                                Warnings* warnings = nullptr);

}  // namespace spose
