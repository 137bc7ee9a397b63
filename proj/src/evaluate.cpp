#include "spose/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "spose/choice.hpp"
#include "spose/kernels.hpp"
#include "spose/numeric.hpp"
#include "spose/tsv.hpp"

namespace spose {

void RSM::check_symmetric(double tol) const {
    const std::size_t n = ids.size();
    if (values.size() != n * n) throw DomainError("RSM value count does not match id count");
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (std::fabs(at(i, j) - at(j, i)) > tol) {
                throw DomainError("RSM is not symmetric at (" + std::to_string(i) + "," +
                                  std::to_string(j) + ")");
            }
        }
    }
}

std::vector<double> RSM::upper_triangle() const {
    std::vector<double> out;
    const std::size_t n = ids.size();
    out.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) out.push_back(at(i, j));
    }
    return out;
}

RSM read_rsm(const std::string& path) {
    std::ifstream in = tsv::open_input(path);
    RSM rsm;
    std::string line;
    long lineno = 0;
    bool saw_semantics = false;
    bool saw_header = false;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = tsv::strip_eol(line);
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string tag = "# semantics: ";
            if (line.rfind(tag, 0) == 0) {
                const std::string value = line.substr(tag.size());
                if (value == "probability") {
                    rsm.semantics = RsmSemantics::probability;
                } else if (value == "dot") {
                    rsm.semantics = RsmSemantics::dot;
                } else {
                    throw ParseError("unknown semantics '" + value + "'", path, lineno);
                }
                saw_semantics = true;
            }
            continue;
        }
        std::vector<std::string> f = tsv::split(line);
        if (!saw_header) {
            if (f.empty() || f[0] != "id") {
                throw ParseError("RSM header must start with 'id'", path, lineno);
            }
            for (std::size_t i = 1; i < f.size(); ++i) {
                rsm.ids.push_back(static_cast<ObjectId>(tsv::parse_long(f[i], path, lineno)));
            }
            rsm.values.assign(rsm.ids.size() * rsm.ids.size(), 0.0);
            saw_header = true;
            continue;
        }
        if (f.size() != rsm.ids.size() + 1) {
            throw ParseError("expected " + std::to_string(rsm.ids.size() + 1) + " fields", path,
                             lineno);
        }
        if (row >= rsm.ids.size()) throw ParseError("too many matrix rows", path, lineno);
        if (static_cast<ObjectId>(tsv::parse_long(f[0], path, lineno)) != rsm.ids[row]) {
            throw ParseError("row id does not match header order", path, lineno);
        }
        for (std::size_t j = 0; j < rsm.ids.size(); ++j) {
            rsm.values[row * rsm.ids.size() + j] = tsv::parse_double(f[j + 1], path, lineno);
        }
        ++row;
    }
    if (!saw_semantics) throw ParseError("missing '# semantics:' line in " + path);
    if (!saw_header || row != rsm.ids.size()) {
        throw ParseError("RSM matrix is incomplete in " + path);
    }
    rsm.check_symmetric(1e-9);
    return rsm;
}

void write_rsm(const RSM& rsm, const std::string& path) {
    std::ofstream out = tsv::open_output(path);
    out << "# semantics: "
        << (rsm.semantics == RsmSemantics::probability ? "probability" : "dot") << '\n';
    out << "id";
    for (ObjectId id : rsm.ids) out << '\t' << id;
    out << '\n';
    for (std::size_t i = 0; i < rsm.size(); ++i) {
        out << rsm.ids[i];
        for (std::size_t j = 0; j < rsm.size(); ++j) {
            out << '\t' << tsv::format_double(rsm.at(i, j));
        }
        out << '\n';
    }
    if (!out) throw Error("write failed: " + path);
}

AccuracyResult heldout_accuracy(const Embedding& emb, const std::vector<Judgment>& judgments) {
    if (judgments.empty()) throw DomainError("heldout_accuracy: empty judgment set");
    std::vector<std::uint8_t> hit(judgments.size());
    kernels::judgment_correct(emb, judgments, hit);
    std::size_t hits = 0;
    for (std::uint8_t h : hit) hits += h;
    AccuracyResult res;
    res.n = judgments.size();
    res.accuracy = static_cast<double>(hits) / static_cast<double>(res.n);
    const Interval iv = wilson_interval(res.accuracy, res.n);
    res.lo95 = iv.lo;
    res.hi95 = iv.hi;
    return res;
}

RSM predicted_rsm(const Embedding& emb, const std::vector<ObjectId>& subset) {
    if (subset.size() < 3) throw DomainError("predicted_rsm needs at least 3 objects");
    RSM rsm;
    rsm.ids = subset;
    rsm.semantics = RsmSemantics::probability;
    kernels::predicted_rsm_fill(emb, subset, rsm.values);
    return rsm;
}

RSM measured_rsm(const std::vector<Judgment>& judgments, const std::vector<ObjectId>& subset) {
    if (subset.size() < 3) throw DomainError("measured_rsm needs at least 3 objects");
    const std::size_t n = subset.size();
    std::unordered_map<ObjectId, std::size_t> pos;
    for (std::size_t i = 0; i < n; ++i) pos.emplace(subset[i], i);

    std::vector<double> similar(n * n, 0.0);
    std::vector<double> seen(n * n, 0.0);
    for (const Judgment& j : judgments) {
        const auto ia = pos.find(j.triplet.a);
        const auto ib = pos.find(j.triplet.b);
        const auto ic = pos.find(j.triplet.c);
        if (ia == pos.end() || ib == pos.end() || ic == pos.end()) continue;
        const std::size_t slots[3] = {ia->second, ib->second, ic->second};
        for (int u = 0; u < 3; ++u) {
            for (int v = u + 1; v < 3; ++v) {
                const std::size_t p = slots[u] * n + slots[v];
                const std::size_t q = slots[v] * n + slots[u];
                seen[p] += 1.0;
                seen[q] += 1.0;
                // The pair counts as "judged similar" when the remaining
                // object was the odd one out.
                const int third = 3 - u - v;
                if (j.choice == third) {
                    similar[p] += 1.0;
                    similar[q] += 1.0;
                }
            }
        }
    }

    std::string uncovered;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (seen[i * n + j] == 0.0) {
                if (!uncovered.empty()) uncovered += ", ";
                uncovered += "(" + std::to_string(subset[i]) + "," + std::to_string(subset[j]) + ")";
            }
        }
    }
    if (!uncovered.empty()) {
        throw DomainError("measured_rsm: no judgments cover pair(s) " + uncovered);
    }

    RSM rsm;
    rsm.ids = subset;
    rsm.semantics = RsmSemantics::probability;
    rsm.values.assign(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j) rsm.values[i * n + j] = similar[i * n + j] / seen[i * n + j];
        }
    }
    return rsm;
}

double rsm_correlation(const RSM& a, const RSM& b) {
    if (a.ids != b.ids) throw DomainError("rsm_correlation: object sets differ");
    const std::vector<double> ua = a.upper_triangle();
    const std::vector<double> ub = b.upper_triangle();
    const double r = pearson(ua, ub);
    if (std::isnan(r)) {
        throw DomainError("rsm_correlation: constant upper triangle, correlation undefined");
    }
    return r;
}

CategorizationResult categorize(const Embedding& emb, const ObjectCatalog& catalog,
                                Warnings* warnings) {
    if (catalog.size() != emb.objects()) {
        throw DomainError("categorize: catalog and embedding cover different object counts");
    }
    auto groups = catalog.by_category();
    std::vector<std::string> names;
    for (auto& [name, members] : groups) {
        if (members.size() < 2) {
            warn(warnings, "category '" + name + "' has fewer than 2 members and is excluded");
        } else {
            names.push_back(name);
        }
    }
    std::sort(names.begin(), names.end());
    if (names.size() < 2) {
        throw DomainError("categorize needs at least 2 categories with >= 2 members");
    }

    const std::size_t d = emb.dims();
    std::unordered_map<std::string, std::vector<double>> sums;
    std::unordered_map<std::string, std::size_t> sizes;
    std::vector<std::pair<ObjectId, std::string>> probes;
    for (const std::string& name : names) {
        std::vector<double> s(d, 0.0);
        for (ObjectId id : groups[name]) {
            for (std::size_t k = 0; k < d; ++k) s[k] += emb.at(id, k);
            probes.emplace_back(id, name);
        }
        sums[name] = std::move(s);
        sizes[name] = groups[name].size();
    }
    std::sort(probes.begin(), probes.end());

    CategorizationResult res;
    std::map<std::string, std::size_t> cat_total, cat_hits;
    std::size_t hits = 0;
    for (const auto& [probe, truth] : probes) {
        std::string best_name;
        double best_dist = std::numeric_limits<double>::infinity();
        for (const std::string& name : names) {
            const std::vector<double>& sum = sums[name];
            const double count = static_cast<double>(sizes[name] - (name == truth ? 1 : 0));
            double dist2 = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double c =
                    (sum[k] - (name == truth ? emb.at(probe, k) : 0.0)) / count;
                const double diff = emb.at(probe, k) - c;
                dist2 += diff * diff;
            }
            // Ties go to the lexicographically first name; `names` is sorted,
            // so strict improvement implements that.
            if (dist2 < best_dist) {
                best_dist = dist2;
                best_name = name;
            }
        }
        ++cat_total[truth];
        ++res.confusion[{truth, best_name}];
        if (best_name == truth) {
            ++hits;
            ++cat_hits[truth];
        }
    }
    res.n = probes.size();
    res.top1_accuracy = static_cast<double>(hits) / static_cast<double>(res.n);
    for (const auto& [name, total] : cat_total) {
        res.per_category_accuracy[name] =
            static_cast<double>(cat_hits[name]) / static_cast<double>(total);
    }
    return res;
}

}  // namespace spose
