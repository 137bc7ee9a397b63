#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "spose/error.hpp"

namespace spose {

// Non-negative objects x dims weight matrix. Row i is object i's vector.
// Dimensions are kept sorted by descending sum of weights across objects;
// producers (training, pruning, selection) re-establish that order.
class Embedding {
public:
    Embedding() = default;
    Embedding(std::size_t objects, std::size_t dims)
        : objects_(objects), dims_(dims), weights_(objects * dims, 0.0) {}
    Embedding(std::size_t objects, std::size_t dims, std::vector<double> weights);

    std::size_t objects() const { return objects_; }
    std::size_t dims() const { return dims_; }

    double at(std::size_t object, std::size_t dim) const {
        return weights_[object * dims_ + dim];
    }
    double& at(std::size_t object, std::size_t dim) { return weights_[object * dims_ + dim]; }

    std::span<const double> row(std::size_t object) const {
        return {weights_.data() + object * dims_, dims_};
    }
    std::span<double> row(std::size_t object) {
        return {weights_.data() + object * dims_, dims_};
    }

    const std::vector<double>& weights() const { return weights_; }
    std::vector<double>& weights() { return weights_; }

    const std::vector<std::string>& dim_labels() const { return dim_labels_; }
    void set_dim_labels(std::vector<std::string> labels);

    std::vector<double> column(std::size_t dim) const;
    // Per-dimension sum of weights across objects (the dimension sort key).
    std::vector<double> dim_sums() const;
    double max_weight(std::size_t dim) const;

    // Reorder columns; `order[k]` is the old index of new column k.
    void reorder_dims(const std::vector<std::size_t>& order);
    void sort_dims_by_weight_sum();

    void check_nonnegative() const;

private:
    std::size_t objects_ = 0;
    std::size_t dims_ = 0;
    std::vector<double> weights_;
    std::vector<std::string> dim_labels_;
};

// Embedding file: tab-separated, header "id\td0..d{k-1}", values round-trip
// at full double precision.
Embedding read_embedding(const std::string& path);
void write_embedding(const Embedding& emb, const std::string& path);

}  // namespace spose
