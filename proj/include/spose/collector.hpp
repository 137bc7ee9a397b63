#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spose/catalog.hpp"

namespace spose {

enum class Modality { text_triplet, image_triplet };

// Template text with the three placeholders [Object_A], [Object_B],
// [Object_C], each appearing exactly once.
struct PromptTemplate {
    std::string text;
    Modality modality = Modality::text_triplet;

    void validate() const;
};

// The standard instruction for description-based triplets.
PromptTemplate default_text_template();
// The standard instruction for image-based triplets; placeholders carry the
// image references (this toolkit does not host or process the images).
PromptTemplate default_image_template();

struct RenderedPrompt {
    std::string text;
    // presentation position -> canonical slot of the triplet
    std::array<int, 3> order{0, 1, 2};
};

// Fill the placeholders with object descriptions in a seeded random
// presentation order. Fails when an object lacks a description.
RenderedPrompt render_prompt(const PromptTemplate& tmpl, const ObjectCatalog& catalog,
                             const Triplet& triplet, std::uint64_t permutation_seed);

enum class ResponseKind { choice, refusal, ambiguous };

struct ParsedResponse {
    ResponseKind kind = ResponseKind::ambiguous;
    int choice = -1;  // canonical slot when kind == choice
    std::string raw;
};

// Decode a model response: object names (or their full descriptions) are
// matched case-insensitively in the first answer sentence and mapped back to
// canonical slots. Zero or multiple distinct matches give `ambiguous`;
// refusal phrasing gives `refusal`.
ParsedResponse parse_response(const std::string& text, const RenderedPrompt& rendered,
                              const ObjectCatalog& catalog, const Triplet& triplet);

struct CollectorConfig {
    std::string endpoint;       // e.g. http://127.0.0.1:8080
    std::string path = "/v1/chat/completions";
    std::string model;
    double temperature = 0.01;
    std::size_t max_concurrent = 4;
    std::size_t per_minute_cap = 600;       // requests per rate window
    std::uint64_t rate_window_ms = 60000;   // shrink only for testing
    std::size_t retry_limit = 3;
    std::uint64_t retry_base_ms = 250;      // exponential backoff base
    bool replace_on_refusal = false;
    std::optional<ObjectId> reserve_object;  // substituted once on refusal
    std::string api_key_env;                 // name of the env var holding the key
    std::size_t repeats = 1;
    std::uint64_t seed = 0;
    std::size_t max_requests = 0;  // 0 = unlimited; otherwise stop after this many sends
    bool dry_run = false;          // render and log, never submit

    void validate() const;
};

struct CollectResult {
    JudgmentSet judgments;       // sorted by (triplet, rep)
    std::size_t completed = 0;   // resolved in this run or a previous one
    std::size_t failed = 0;      // terminal failures (refusals/ambiguity/retries exhausted)
    std::size_t skipped = 0;     // already resolved in the checkpoint
    std::size_t requests_sent = 0;
    bool interrupted = false;    // stopped by the request budget
};

// Submit every (triplet, repeat) pair not yet resolved in the checkpoint at
// `audit_path` (JSON lines, append-only, flushed after every response).
// Re-running with the same audit path resumes without re-submitting resolved
// work. Auth failures abort immediately; transient HTTP failures retry with
// exponential backoff up to the retry limit.
CollectResult collect(const std::vector<Triplet>& triplets, const PromptTemplate& tmpl,
                      const ObjectCatalog& catalog, const CollectorConfig& config,
                      const std::string& audit_path, Warnings* warnings = nullptr);

}  // namespace spose
