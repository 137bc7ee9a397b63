#include "spose/embedding.hpp"

#include <algorithm>
#include <numeric>

#include "spose/numeric.hpp"
#include "spose/tsv.hpp"

namespace spose {

Embedding::Embedding(std::size_t objects, std::size_t dims, std::vector<double> weights)
    : objects_(objects), dims_(dims), weights_(std::move(weights)) {
    if (weights_.size() != objects_ * dims_) {
        throw DomainError("embedding weight count does not match objects x dims");
    }
}

void Embedding::set_dim_labels(std::vector<std::string> labels) {
    if (!labels.empty() && labels.size() != dims_) {
        throw DomainError("dimension label count does not match dimensionality");
    }
    dim_labels_ = std::move(labels);
}

std::vector<double> Embedding::column(std::size_t dim) const {
    std::vector<double> col(objects_);
    for (std::size_t i = 0; i < objects_; ++i) col[i] = at(i, dim);
    return col;
}

std::vector<double> Embedding::dim_sums() const {
    std::vector<double> sums(dims_, 0.0);
    for (std::size_t d = 0; d < dims_; ++d) sums[d] = pairwise_sum(column(d));
    return sums;
}

double Embedding::max_weight(std::size_t dim) const {
    double best = 0.0;
    for (std::size_t i = 0; i < objects_; ++i) best = std::max(best, at(i, dim));
    return best;
}

void Embedding::reorder_dims(const std::vector<std::size_t>& order) {
    std::vector<double> next(objects_ * order.size());
    for (std::size_t i = 0; i < objects_; ++i) {
        for (std::size_t k = 0; k < order.size(); ++k) {
            next[i * order.size() + k] = at(i, order[k]);
        }
    }
    std::vector<std::string> labels;
    if (!dim_labels_.empty()) {
        labels.reserve(order.size());
        for (std::size_t old : order) labels.push_back(dim_labels_[old]);
    }
    dims_ = order.size();
    weights_ = std::move(next);
    dim_labels_ = std::move(labels);
}

void Embedding::sort_dims_by_weight_sum() {
    const std::vector<double> sums = dim_sums();
    std::vector<std::size_t> order(dims_);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sums[a] > sums[b]; });
    reorder_dims(order);
}

void Embedding::check_nonnegative() const {
    for (double w : weights_) {
        if (!(w >= 0.0)) throw DomainError("embedding contains a negative or NaN weight");
    }
}

Embedding read_embedding(const std::string& path) {
    std::ifstream in = tsv::open_input(path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing header line", path, 1);
    std::vector<std::string> header = tsv::split(tsv::strip_eol(line));
    if (header.empty() || header[0] != "id") {
        throw ParseError("embedding header must start with 'id'", path, 1);
    }
    const std::size_t dims = header.size() - 1;
    for (std::size_t d = 0; d < dims; ++d) {
        if (header[d + 1] != "d" + std::to_string(d)) {
            throw ParseError("expected dimension column d" + std::to_string(d), path, 1);
        }
    }

    std::vector<double> weights;
    long lineno = 1;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = tsv::strip_eol(line);
        if (line.empty()) continue;
        std::vector<std::string> f = tsv::split(line);
        if (f.size() != dims + 1) {
            throw ParseError("expected " + std::to_string(dims + 1) + " fields, got " +
                                 std::to_string(f.size()),
                             path, lineno);
        }
        const long id = tsv::parse_long(f[0], path, lineno);
        if (id < 0 || static_cast<std::size_t>(id) != rows) {
            throw ParseError("row ids must be dense 0..m-1", path, lineno);
        }
        for (std::size_t d = 0; d < dims; ++d) {
            weights.push_back(tsv::parse_double(f[d + 1], path, lineno));
        }
        ++rows;
    }
    Embedding emb(rows, dims, std::move(weights));
    emb.check_nonnegative();
    return emb;
}

void write_embedding(const Embedding& emb, const std::string& path) {
    std::ofstream out = tsv::open_output(path);
    out << "id";
    for (std::size_t d = 0; d < emb.dims(); ++d) out << "\td" << d;
    out << '\n';
    for (std::size_t i = 0; i < emb.objects(); ++i) {
        out << i;
        for (std::size_t d = 0; d < emb.dims(); ++d) {
            out << '\t' << tsv::format_double(emb.at(i, d));
        }
        out << '\n';
    }
    if (!out) throw Error("write failed: " + path);
}

}  // namespace spose
