#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "spose/error.hpp"

namespace spose {

using ObjectId = std::uint32_t;

struct ObjectInfo {
    ObjectId id = 0;
    std::string name;
    std::string description;
    std::string category;  // empty = uncategorized
};

// The universe of objects. Ids are dense 0..m-1 in file order and are the
// only authoritative reference in judgment files; names are for humans.
class ObjectCatalog {
public:
    ObjectCatalog() = default;
    explicit ObjectCatalog(std::vector<ObjectInfo> objects);

    std::size_t size() const { return objects_.size(); }
    const ObjectInfo& object(ObjectId id) const { return objects_.at(id); }
    const std::vector<ObjectInfo>& objects() const { return objects_; }

    // Objects grouped by non-empty category label.
    std::unordered_map<std::string, std::vector<ObjectId>> by_category() const;

private:
    std::vector<ObjectInfo> objects_;
};

// Canonical triplet: a < b < c.
struct Triplet {
    ObjectId a = 0, b = 0, c = 0;

    ObjectId slot(int s) const { return s == 0 ? a : (s == 1 ? b : c); }
    bool operator==(const Triplet& o) const { return a == o.a && b == o.b && c == o.c; }
    auto operator<=>(const Triplet& o) const = default;
};

// One odd-one-out response: `choice` is the slot (0,1,2) of the odd object
// within the canonical triplet.
struct Judgment {
    Triplet triplet;
    int choice = 0;

    ObjectId chosen() const { return triplet.slot(choice); }
    bool operator==(const Judgment& o) const = default;
};

struct JudgmentSet {
    std::vector<Judgment> judgments;
    std::string provenance;
};

// Sort ids ascending and remap the choice so it still points at the same
// object. Throws DomainError on duplicate ids or a choice outside {0,1,2}.
Judgment canonicalize(ObjectId a, ObjectId b, ObjectId c, int choice, bool* reordered = nullptr);

Triplet make_triplet(ObjectId a, ObjectId b, ObjectId c);

// --- catalog file: tab-separated, header "id\tname\tdescription\tcategory" ---
ObjectCatalog load_catalog(const std::string& path, Warnings* warnings = nullptr);
void save_catalog(const ObjectCatalog& catalog, const std::string& path);

// Exact C(m, 3); no overflow up to m = 10^6. Throws DomainError for m < 3.
std::uint64_t count_triplets(std::uint64_t m);

// n distinct canonical triplets over 0..m-1 minus `exclude`, uniform over the
// n-subsets of all candidates. Identical arguments give identical output.
std::vector<Triplet> sample_triplets(std::size_t m, std::uint64_t n, std::uint64_t seed,
                                     const std::vector<ObjectId>& exclude = {});

// n independent uniform draws; duplicates allowed.
std::vector<Triplet> sample_triplets_with_replacement(std::size_t m, std::uint64_t n,
                                                      std::uint64_t seed,
                                                      const std::vector<ObjectId>& exclude = {});

// All C(k,3) triplets over the given ids, lexicographically ordered.
std::vector<Triplet> enumerate_triplets(const std::vector<ObjectId>& ids);
std::vector<Triplet> enumerate_triplets(std::size_t m);

// --- judgment file: tab-separated, header "a\tb\tc\tchoice" ---
// Non-canonical rows are normalized; `normalized`, when given, counts them.
JudgmentSet read_judgments(const std::string& path, std::size_t* normalized = nullptr);
void write_judgments(const JudgmentSet& set, const std::string& path);

// --- repeat file: same as judgment file plus a "rep" column ---
struct RepeatedJudgments {
    std::vector<Triplet> triplets;
    std::vector<std::vector<int>> choices;  // per triplet, one choice per repeat
};

RepeatedJudgments read_repeats(const std::string& path, std::size_t* normalized = nullptr);
void write_repeats(const std::vector<Triplet>& triplets,
                   const std::vector<std::vector<int>>& choices, const std::string& path);

// Judgments whose triplets lie within the catalog (all ids < m).
void validate_against(const JudgmentSet& set, std::size_t m);

}  // namespace spose
