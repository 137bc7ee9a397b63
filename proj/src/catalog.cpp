#include "spose/catalog.hpp"

#include <algorithm>
#include <unordered_set>

#include "spose/rng.hpp"
#include "spose/tsv.hpp"

namespace spose {

ObjectCatalog::ObjectCatalog(std::vector<ObjectInfo> objects) : objects_(std::move(objects)) {
    if (objects_.size() < 3) {
        throw DomainError("catalog needs at least 3 objects, got " +
                          std::to_string(objects_.size()));
    }
    for (std::size_t i = 0; i < objects_.size(); ++i) {
        if (objects_[i].id != i) {
            throw DomainError("object ids must be dense 0..m-1 in order; position " +
                              std::to_string(i) + " has id " + std::to_string(objects_[i].id));
        }
        if (objects_[i].name.empty()) {
            throw DomainError("object " + std::to_string(i) + " has an empty name");
        }
    }
}

std::unordered_map<std::string, std::vector<ObjectId>> ObjectCatalog::by_category() const {
    std::unordered_map<std::string, std::vector<ObjectId>> groups;
    for (const ObjectInfo& obj : objects_) {
        if (!obj.category.empty()) groups[obj.category].push_back(obj.id);
    }
    return groups;
}

Triplet make_triplet(ObjectId a, ObjectId b, ObjectId c) {
    Judgment j = canonicalize(a, b, c, 0);
    return j.triplet;
}

Judgment canonicalize(ObjectId a, ObjectId b, ObjectId c, int choice, bool* reordered) {
    if (choice < 0 || choice > 2) {
        throw DomainError("choice must be in {0,1,2}, got " + std::to_string(choice));
    }
    ObjectId ids[3] = {a, b, c};
    if (ids[0] == ids[1] || ids[0] == ids[2] || ids[1] == ids[2]) {
        throw DomainError("triplet objects must be distinct");
    }
    const ObjectId chosen = ids[choice];
    std::sort(std::begin(ids), std::end(ids));
    Judgment out;
    out.triplet = Triplet{ids[0], ids[1], ids[2]};
    out.choice = chosen == ids[0] ? 0 : (chosen == ids[1] ? 1 : 2);
    if (reordered) *reordered = !(ids[0] == a && ids[1] == b && ids[2] == c);
    return out;
}

namespace {

const char* kCatalogHeader = "id\tname\tdescription\tcategory";

void expect_header(std::ifstream& in, const std::string& path, const char* expected) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing header line", path, 1);
    if (tsv::strip_eol(line) != expected) {
        throw ParseError(std::string("expected header '") + expected + "'", path, 1);
    }
}

}  // namespace

ObjectCatalog load_catalog(const std::string& path, Warnings* warnings) {
    std::ifstream in = tsv::open_input(path);
    expect_header(in, path, kCatalogHeader);

    std::vector<ObjectInfo> objects;
    std::unordered_set<std::string> seen_names;
    std::string line;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = tsv::strip_eol(line);
        if (line.empty()) continue;
        std::vector<std::string> f = tsv::split(line);
        if (f.size() != 3 && f.size() != 4) {
            throw ParseError("expected 3 or 4 tab-separated fields, got " +
                                 std::to_string(f.size()),
                             path, lineno);
        }
        ObjectInfo obj;
        const long id = tsv::parse_long(f[0], path, lineno);
        if (id < 0 || static_cast<std::size_t>(id) != objects.size()) {
            throw ParseError("ids must be dense 0..m-1 in file order; expected " +
                                 std::to_string(objects.size()) + ", got " + f[0],
                             path, lineno);
        }
        obj.id = static_cast<ObjectId>(id);
        obj.name = f[1];
        obj.description = f[2];
        obj.category = f.size() == 4 ? f[3] : std::string();
        if (obj.name.empty()) throw ParseError("object name must be non-empty", path, lineno);
        if (!seen_names.insert(obj.name).second) {
            warn(warnings, path + ":" + std::to_string(lineno) + ": duplicate object name '" +
                               obj.name + "'");
        }
        objects.push_back(std::move(obj));
    }
    return ObjectCatalog(std::move(objects));
}

void save_catalog(const ObjectCatalog& catalog, const std::string& path) {
    std::ofstream out = tsv::open_output(path);
    out << kCatalogHeader << '\n';
    for (const ObjectInfo& obj : catalog.objects()) {
        out << obj.id << '\t' << obj.name << '\t' << obj.description << '\t' << obj.category
            << '\n';
    }
    if (!out) throw Error("write failed: " + path);
}

std::uint64_t count_triplets(std::uint64_t m) {
    if (m < 3) throw DomainError("count_triplets needs m >= 3, got " + std::to_string(m));
    // m*(m-1)/2 is exact; the remaining factor of 3 divides the product of
    // three consecutive integers.
    const std::uint64_t pairs = m * (m - 1) / 2;
    return pairs * (m - 2) / 3;
}

namespace {

std::uint64_t choose2(std::uint64_t x) { return x < 2 ? 0 : x * (x - 1) / 2; }
std::uint64_t choose3(std::uint64_t x) { return x < 3 ? 0 : count_triplets(x); }

// Lexicographic unranking of a 3-combination of {0..m-1}.
void unrank_triplet(std::uint64_t rank, std::uint64_t m, std::uint64_t out[3]) {
    // first index i: combinations starting below i number C(m,3) - C(m-i,3)
    std::uint64_t lo = 0, hi = m - 3;
    const std::uint64_t total = choose3(m);
    while (lo < hi) {
        const std::uint64_t mid = (lo + hi + 1) / 2;
        if (total - choose3(m - mid) <= rank) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    const std::uint64_t i = lo;
    rank -= total - choose3(m - i);
    // second index j > i
    const std::uint64_t rem = m - i - 1;  // candidates above i
    std::uint64_t lo2 = 0, hi2 = rem - 2;
    const std::uint64_t total2 = choose2(rem);
    while (lo2 < hi2) {
        const std::uint64_t mid = (lo2 + hi2 + 1) / 2;
        if (total2 - choose2(rem - mid) <= rank) {
            lo2 = mid;
        } else {
            hi2 = mid - 1;
        }
    }
    const std::uint64_t j = i + 1 + lo2;
    rank -= total2 - choose2(rem - lo2);
    out[0] = i;
    out[1] = j;
    out[2] = j + 1 + rank;
}

}  // namespace

std::vector<Triplet> sample_triplets(std::size_t m, std::uint64_t n, std::uint64_t seed,
                                     const std::vector<ObjectId>& exclude) {
    std::vector<ObjectId> included;
    {
        std::unordered_set<ObjectId> drop(exclude.begin(), exclude.end());
        included.reserve(m);
        for (std::size_t i = 0; i < m; ++i) {
            if (!drop.count(static_cast<ObjectId>(i))) included.push_back(static_cast<ObjectId>(i));
        }
    }
    if (included.size() < 3) throw DomainError("fewer than 3 objects remain after exclusion");
    const std::uint64_t total = count_triplets(included.size());
    if (n > total) {
        throw DomainError("cannot sample " + std::to_string(n) + " distinct triplets from " +
                          std::to_string(total) + " available");
    }

    Rng rng(seed);
    // Floyd's algorithm: uniform n-subset of [0, total) in O(n) draws.
    std::unordered_set<std::uint64_t> chosen;
    std::vector<std::uint64_t> ranks;
    ranks.reserve(n);
    chosen.reserve(n * 2);
    for (std::uint64_t i = total - n; i < total; ++i) {
        const std::uint64_t j = rng.below(i + 1);
        if (chosen.insert(j).second) {
            ranks.push_back(j);
        } else {
            chosen.insert(i);
            ranks.push_back(i);
        }
    }
    rng.shuffle(ranks);

    std::vector<Triplet> out;
    out.reserve(n);
    for (std::uint64_t rank : ranks) {
        std::uint64_t idx[3];
        unrank_triplet(rank, included.size(), idx);
        out.push_back(Triplet{included[idx[0]], included[idx[1]], included[idx[2]]});
    }
    return out;
}

std::vector<Triplet> sample_triplets_with_replacement(std::size_t m, std::uint64_t n,
                                                      std::uint64_t seed,
                                                      const std::vector<ObjectId>& exclude) {
    std::vector<ObjectId> included;
    {
        std::unordered_set<ObjectId> drop(exclude.begin(), exclude.end());
        included.reserve(m);
        for (std::size_t i = 0; i < m; ++i) {
            if (!drop.count(static_cast<ObjectId>(i))) included.push_back(static_cast<ObjectId>(i));
        }
    }
    if (included.size() < 3) throw DomainError("fewer than 3 objects remain after exclusion");
    const std::uint64_t total = count_triplets(included.size());
    Rng rng(seed);
    std::vector<Triplet> out;
    out.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::uint64_t idx[3];
        unrank_triplet(rng.below(total), included.size(), idx);
        out.push_back(Triplet{included[idx[0]], included[idx[1]], included[idx[2]]});
    }
    return out;
}

std::vector<Triplet> enumerate_triplets(const std::vector<ObjectId>& ids) {
    std::vector<ObjectId> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    std::vector<Triplet> out;
    out.reserve(sorted.size() < 3 ? 0 : count_triplets(sorted.size()));
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        for (std::size_t j = i + 1; j < sorted.size(); ++j) {
            for (std::size_t k = j + 1; k < sorted.size(); ++k) {
                out.push_back(Triplet{sorted[i], sorted[j], sorted[k]});
            }
        }
    }
    return out;
}

std::vector<Triplet> enumerate_triplets(std::size_t m) {
    std::vector<ObjectId> ids(m);
    for (std::size_t i = 0; i < m; ++i) ids[i] = static_cast<ObjectId>(i);
    return enumerate_triplets(ids);
}

namespace {

const char* kJudgmentHeader = "a\tb\tc\tchoice";
const char* kRepeatHeader = "a\tb\tc\tchoice\trep";

Judgment parse_judgment_fields(const std::vector<std::string>& f, const std::string& path,
                               long lineno, std::size_t* normalized) {
    const long a = tsv::parse_long(f[0], path, lineno);
    const long b = tsv::parse_long(f[1], path, lineno);
    const long c = tsv::parse_long(f[2], path, lineno);
    const long choice = tsv::parse_long(f[3], path, lineno);
    if (a < 0 || b < 0 || c < 0) throw ParseError("object ids must be non-negative", path, lineno);
    if (choice < 0 || choice > 2) {
        throw ParseError("choice must be in {0,1,2}, got " + f[3], path, lineno);
    }
    bool reordered = false;
    Judgment j;
    try {
        j = canonicalize(static_cast<ObjectId>(a), static_cast<ObjectId>(b),
                         static_cast<ObjectId>(c), static_cast<int>(choice), &reordered);
    } catch (const DomainError& e) {
        throw ParseError(e.what(), path, lineno);
    }
    if (reordered && normalized) ++*normalized;
    return j;
}

}  // namespace

JudgmentSet read_judgments(const std::string& path, std::size_t* normalized) {
    std::ifstream in = tsv::open_input(path);
    expect_header(in, path, kJudgmentHeader);
    JudgmentSet set;
    std::string line;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = tsv::strip_eol(line);
        if (line.empty()) continue;
        std::vector<std::string> f = tsv::split(line);
        if (f.size() != 4) {
            throw ParseError("expected 4 tab-separated fields, got " + std::to_string(f.size()),
                             path, lineno);
        }
        set.judgments.push_back(parse_judgment_fields(f, path, lineno, normalized));
    }
    return set;
}

void write_judgments(const JudgmentSet& set, const std::string& path) {
    std::ofstream out = tsv::open_output(path);
    out << kJudgmentHeader << '\n';
    for (const Judgment& j : set.judgments) {
        out << j.triplet.a << '\t' << j.triplet.b << '\t' << j.triplet.c << '\t' << j.choice
            << '\n';
    }
    if (!out) throw Error("write failed: " + path);
}

RepeatedJudgments read_repeats(const std::string& path, std::size_t* normalized) {
    std::ifstream in = tsv::open_input(path);
    expect_header(in, path, kRepeatHeader);
    RepeatedJudgments out;
    std::unordered_map<std::uint64_t, std::size_t> index;  // packed triplet -> slot
    std::string line;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = tsv::strip_eol(line);
        if (line.empty()) continue;
        std::vector<std::string> f = tsv::split(line);
        if (f.size() != 5) {
            throw ParseError("expected 5 tab-separated fields, got " + std::to_string(f.size()),
                             path, lineno);
        }
        const Judgment j = parse_judgment_fields(f, path, lineno, normalized);
        const std::uint64_t key = (static_cast<std::uint64_t>(j.triplet.a) << 42) |
                                  (static_cast<std::uint64_t>(j.triplet.b) << 21) |
                                  static_cast<std::uint64_t>(j.triplet.c);
        auto [it, inserted] = index.emplace(key, out.triplets.size());
        if (inserted) {
            out.triplets.push_back(j.triplet);
            out.choices.emplace_back();
        }
        out.choices[it->second].push_back(j.choice);
    }
    return out;
}

void write_repeats(const std::vector<Triplet>& triplets,
                   const std::vector<std::vector<int>>& choices, const std::string& path) {
    if (triplets.size() != choices.size()) {
        throw DomainError("write_repeats: triplet/choice list size mismatch");
    }
    std::ofstream out = tsv::open_output(path);
    out << kRepeatHeader << '\n';
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        for (std::size_t r = 0; r < choices[i].size(); ++r) {
            out << triplets[i].a << '\t' << triplets[i].b << '\t' << triplets[i].c << '\t'
                << choices[i][r] << '\t' << r << '\n';
        }
    }
    if (!out) throw Error("write failed: " + path);
}

void validate_against(const JudgmentSet& set, std::size_t m) {
    for (const Judgment& j : set.judgments) {
        if (j.triplet.c >= m) {
            throw DomainError("judgment references object " + std::to_string(j.triplet.c) +
                              " but the catalog has only " + std::to_string(m) + " objects");
        }
    }
}

}  // namespace spose
