#include "spose/collector.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <json.hpp>

#include "spose/rng.hpp"

namespace spose {

using nlohmann::json;

namespace {

const char* kPlaceholders[3] = {"[Object_A]", "[Object_B]", "[Object_C]"};

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

// Case-insensitive needle search constrained to word boundaries.
bool contains_word(const std::string& haystack_lower, const std::string& needle_lower) {
    if (needle_lower.empty()) return false;
    std::size_t from = 0;
    while (true) {
        const std::size_t pos = haystack_lower.find(needle_lower, from);
        if (pos == std::string::npos) return false;
        const bool left_ok = pos == 0 || !is_word_char(haystack_lower[pos - 1]);
        const std::size_t end = pos + needle_lower.size();
        const bool right_ok = end >= haystack_lower.size() || !is_word_char(haystack_lower[end]);
        if (left_ok && right_ok) return true;
        from = pos + 1;
    }
}

// Phrasings that indicate the model declined the task.
const char* kRefusalMarkers[] = {
    "cannot assist",
    "can't assist",
    "cannot help with",
    "can't help with",
    "unable to assist",
    "unable to help",
    "i cannot provide",
    "i can't provide",
    "i cannot answer",
    "i can't answer",
    "i cannot comply",
    "not able to provide",
    "i must decline",
    "i won't be able",
    "will not be able to",
    "against my guidelines",
    "violates my guidelines",
    "as an ai, i cannot",
    "i'm sorry, but i cannot",
    "i am sorry, but i cannot",
    "i apologize, but i cannot",
    "sensitive information",
    "inappropriate content",
};

}  // namespace

void PromptTemplate::validate() const {
    for (const char* ph : kPlaceholders) {
        std::size_t count = 0;
        std::size_t pos = text.find(ph);
        while (pos != std::string::npos) {
            ++count;
            pos = text.find(ph, pos + 1);
        }
        if (count != 1) {
            throw DomainError(std::string("prompt template must contain '") + ph +
                              "' exactly once");
        }
    }
}

PromptTemplate default_text_template() {
    PromptTemplate t;
    t.modality = Modality::text_triplet;
    t.text =
        "Given a triplet of objects {'[Object_A]', '[Object_B]', '[Object_C]'}, which one in "
        "the triplet is the odd-one-out? Please give the answer first and then explain in "
        "detail.";
    return t;
}

PromptTemplate default_image_template() {
    PromptTemplate t;
    t.modality = Modality::image_triplet;
    t.text =
        "You are shown three object images side by side and are asked to report the image that "
        "was the least similar to the other two. You should focus your judgment on the object, "
        "but you are not given additional constraints as to the strategy you should use. If you "
        "did not recognize the object, you should base your judgment on your best guess of what "
        "the object could be. 1. Tell me your answer. 2. Tell me the location of the object you "
        "have chosen. 3. Explain the reasons.\n"
        "Image 1: [Object_A]\nImage 2: [Object_B]\nImage 3: [Object_C]";
    return t;
}

RenderedPrompt render_prompt(const PromptTemplate& tmpl, const ObjectCatalog& catalog,
                             const Triplet& triplet, std::uint64_t permutation_seed) {
    tmpl.validate();
    if (triplet.c >= catalog.size()) {
        throw DomainError("triplet references an object outside the catalog");
    }
    RenderedPrompt out;
    Rng rng(permutation_seed);
    std::vector<std::size_t> perm = rng.permutation(3);
    for (int p = 0; p < 3; ++p) out.order[p] = static_cast<int>(perm[p]);

    out.text = tmpl.text;
    for (int p = 0; p < 3; ++p) {
        const ObjectInfo& obj = catalog.object(triplet.slot(out.order[p]));
        if (obj.description.empty()) {
            throw Error("object '" + obj.name + "' (id " + std::to_string(obj.id) +
                        ") has no description to render");
        }
        const std::size_t pos = out.text.find(kPlaceholders[p]);
        out.text.replace(pos, std::string(kPlaceholders[p]).size(), obj.description);
    }
    return out;
}

ParsedResponse parse_response(const std::string& text, const RenderedPrompt& rendered,
                              const ObjectCatalog& catalog, const Triplet& triplet) {
    (void)rendered;  // names identify objects directly; order matters only for logging
    ParsedResponse out;
    out.raw = text;
    const std::string low = lower(text);

    for (const char* marker : kRefusalMarkers) {
        if (low.find(marker) != std::string::npos) {
            out.kind = ResponseKind::refusal;
            return out;
        }
    }

    // Only the first answer sentence counts; later text is explanation and
    // usually mentions all three objects.
    std::size_t cut = low.find_first_of(".!?\n");
    const std::string first = low.substr(0, cut == std::string::npos ? low.size() : cut);

    int matched_slot = -1;
    int matches = 0;
    for (int slot = 0; slot < 3; ++slot) {
        const ObjectInfo& obj = catalog.object(triplet.slot(slot));
        const bool hit = contains_word(first, lower(obj.name)) ||
                         (!obj.description.empty() &&
                          first.find(lower(obj.description)) != std::string::npos);
        if (hit) {
            ++matches;
            matched_slot = slot;
        }
    }
    if (matches == 1) {
        out.kind = ResponseKind::choice;
        out.choice = matched_slot;
    } else {
        out.kind = ResponseKind::ambiguous;
    }
    return out;
}

void CollectorConfig::validate() const {
    if (temperature < 0.0) throw DomainError("temperature must be non-negative");
    if (max_concurrent < 1) throw DomainError("max_concurrent must be at least 1");
    if (per_minute_cap < 1) throw DomainError("per_minute_cap must be at least 1");
    if (repeats < 1) throw DomainError("repeats must be at least 1");
    if (!dry_run && endpoint.empty()) throw DomainError("endpoint is required");
}

namespace {

// Sliding-window limiter: at most `cap` acquisitions in any trailing window.
class RateLimiter {
public:
    RateLimiter(std::size_t cap, std::uint64_t window_ms) : cap_(cap), window_ms_(window_ms) {}

    void acquire() {
        std::unique_lock<std::mutex> lock(mu_);
        while (true) {
            const auto now = std::chrono::steady_clock::now();
            while (!stamps_.empty() &&
                   now - stamps_.front() >= std::chrono::milliseconds(window_ms_)) {
                stamps_.pop_front();
            }
            if (stamps_.size() < cap_) {
                stamps_.push_back(now);
                return;
            }
            const auto wake = stamps_.front() + std::chrono::milliseconds(window_ms_);
            cv_.wait_until(lock, wake);
        }
    }

private:
    std::size_t cap_;
    std::uint64_t window_ms_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::chrono::steady_clock::time_point> stamps_;
};

struct Task {
    Triplet triplet;       // triplet actually submitted
    Triplet original;      // triplet the task started from (differs after replacement)
    std::size_t rep = 0;
    bool replaced = false;
};

std::string task_key(const Triplet& t, std::size_t rep) {
    return std::to_string(t.a) + "," + std::to_string(t.b) + "," + std::to_string(t.c) + "#" +
           std::to_string(rep);
}

// Serialized append-only JSONL writer, flushed per entry so a crash loses at
// most the in-flight responses.
class AuditLog {
public:
    explicit AuditLog(const std::string& path) : out_(path, std::ios::app) {
        if (!out_) throw Error("cannot open audit log " + path);
    }

    void append(const json& entry) {
        std::lock_guard<std::mutex> lock(mu_);
        out_ << entry.dump() << '\n';
        out_.flush();
    }

private:
    std::mutex mu_;
    std::ofstream out_;
};

struct HttpOutcome {
    bool ok = false;
    bool auth_failure = false;
    int status = 0;
    std::string body;
    std::string error;
};

HttpOutcome post_chat(const CollectorConfig& config, const std::string& prompt) {
    HttpOutcome out;
    httplib::Client client(config.endpoint);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(60, 0);
    httplib::Headers headers;
    if (!config.api_key_env.empty()) {
        const char* key = std::getenv(config.api_key_env.c_str());
        if (key && *key) headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    json body = {
        {"model", config.model},
        {"temperature", config.temperature},
        {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
    };
    auto res = client.Post(config.path, headers, body.dump(), "application/json");
    if (!res) {
        out.error = "connection error: " + httplib::to_string(res.error());
        return out;
    }
    out.status = res->status;
    out.body = res->body;
    if (res->status == 401 || res->status == 403) {
        out.auth_failure = true;
        out.error = "authentication failed (HTTP " + std::to_string(res->status) + ")";
        return out;
    }
    if (res->status != 200) {
        out.error = "HTTP " + std::to_string(res->status);
        return out;
    }
    out.ok = true;
    return out;
}

std::string extract_message(const std::string& body) {
    const json doc = json::parse(body, nullptr, false);
    if (doc.is_discarded()) throw Error("endpoint returned invalid JSON");
    try {
        return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        throw Error("endpoint response lacks choices[0].message.content");
    }
}

}  // namespace

CollectResult collect(const std::vector<Triplet>& triplets, const PromptTemplate& tmpl,
                      const ObjectCatalog& catalog, const CollectorConfig& config,
                      const std::string& audit_path, Warnings* warnings) {
    config.validate();
    tmpl.validate();

    CollectResult result;

    // Resolved work from an earlier run. A line truncated by a crash is
    // ignored; its task simply runs again.
    struct Resolved {
        Judgment judgment;
        bool has_judgment = false;
    };
    std::unordered_map<std::string, Resolved> done;
    {
        std::ifstream in(audit_path);
        std::string line;
        while (in && std::getline(in, line)) {
            if (line.empty()) continue;
            const json entry = json::parse(line, nullptr, false);
            if (entry.is_discarded() || !entry.contains("outcome")) continue;
            const std::string outcome = entry["outcome"].get<std::string>();
            if (outcome != "choice" && outcome != "failed") continue;
            Triplet orig{entry["a"].get<ObjectId>(), entry["b"].get<ObjectId>(),
                         entry["c"].get<ObjectId>()};
            Resolved r;
            if (outcome == "choice") {
                Triplet sub{entry["sub_a"].get<ObjectId>(), entry["sub_b"].get<ObjectId>(),
                            entry["sub_c"].get<ObjectId>()};
                r.judgment = Judgment{sub, entry["choice"].get<int>()};
                r.has_judgment = true;
            }
            done[task_key(orig, entry["rep"].get<std::size_t>())] = r;
        }
    }

    std::deque<Task> queue;
    for (const Triplet& t : triplets) {
        for (std::size_t rep = 0; rep < config.repeats; ++rep) {
            const auto it = done.find(task_key(t, rep));
            if (it != done.end()) {
                ++result.skipped;
                continue;
            }
            queue.push_back(Task{t, t, rep, false});
        }
    }

    AuditLog audit(audit_path);
    RateLimiter limiter(config.per_minute_cap, config.rate_window_ms);
    std::mutex mu;  // guards queue, done, result counters
    std::atomic<bool> abort{false};
    std::string abort_reason;
    std::atomic<std::size_t> budget_used{0};

    auto handle_terminal = [&](const Task& task, const std::string& outcome,
                               const RenderedPrompt& rendered, const std::string& raw,
                               int choice) {
        json entry = {
            {"a", task.original.a},   {"b", task.original.b},   {"c", task.original.c},
            {"rep", task.rep},        {"outcome", outcome},     {"raw", raw},
            {"sub_a", task.triplet.a}, {"sub_b", task.triplet.b}, {"sub_c", task.triplet.c},
            {"order", json::array({rendered.order[0], rendered.order[1], rendered.order[2]})},
            {"replaced", task.replaced},
        };
        if (outcome == "choice") entry["choice"] = choice;
        audit.append(entry);
        std::lock_guard<std::mutex> lock(mu);
        Resolved r;
        if (outcome == "choice") {
            r.judgment = Judgment{task.triplet, choice};
            r.has_judgment = true;
            ++result.completed;
        } else {
            ++result.failed;
        }
        done[task_key(task.original, task.rep)] = r;
    };

    auto log_event = [&](const Task& task, const std::string& outcome, const std::string& detail) {
        audit.append(json{{"a", task.original.a},
                          {"b", task.original.b},
                          {"c", task.original.c},
                          {"rep", task.rep},
                          {"outcome", outcome},
                          {"detail", detail}});
    };

    auto worker = [&] {
        while (!abort.load()) {
            Task task;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (queue.empty()) return;
                task = queue.front();
                queue.pop_front();
            }

            const std::uint64_t perm_seed =
                mix64(mix64(config.seed, (static_cast<std::uint64_t>(task.triplet.a) << 42) |
                                             (static_cast<std::uint64_t>(task.triplet.b) << 21) |
                                             task.triplet.c),
                      task.rep);
            RenderedPrompt rendered;
            try {
                rendered = render_prompt(tmpl, catalog, task.triplet, perm_seed);
            } catch (const std::exception& e) {
                handle_terminal(task, "failed", rendered, e.what(), -1);
                continue;
            }

            if (config.dry_run) {
                log_event(task, "dry-run", rendered.text);
                continue;
            }

            HttpOutcome http;
            bool sent = false;
            for (std::size_t attempt = 0; attempt <= config.retry_limit; ++attempt) {
                if (abort.load()) return;
                if (config.max_requests != 0) {
                    const std::size_t used = budget_used.fetch_add(1);
                    if (used >= config.max_requests) {
                        budget_used.fetch_sub(1);
                        std::lock_guard<std::mutex> lock(mu);
                        result.interrupted = true;
                        queue.push_front(task);
                        return;
                    }
                }
                limiter.acquire();
                {
                    std::lock_guard<std::mutex> lock(mu);
                    ++result.requests_sent;
                }
                http = post_chat(config, rendered.text);
                sent = true;
                if (http.ok) break;
                if (http.auth_failure) {
                    std::lock_guard<std::mutex> lock(mu);
                    abort_reason = http.error;
                    abort.store(true);
                    return;
                }
                if (attempt < config.retry_limit) {
                    const std::uint64_t delay = config.retry_base_ms << attempt;
                    std::this_thread::sleep_for(std::chrono::milliseconds(delay));
                }
            }
            if (!sent || !http.ok) {
                handle_terminal(task, "failed", rendered,
                                "retries exhausted: " + http.error, -1);
                continue;
            }

            std::string message;
            try {
                message = extract_message(http.body);
            } catch (const std::exception& e) {
                handle_terminal(task, "failed", rendered, e.what(), -1);
                continue;
            }
            const ParsedResponse parsed = parse_response(message, rendered, catalog, task.triplet);
            if (parsed.kind == ResponseKind::choice) {
                handle_terminal(task, "choice", rendered, parsed.raw, parsed.choice);
            } else if (parsed.kind == ResponseKind::refusal) {
                if (config.replace_on_refusal && config.reserve_object && !task.replaced) {
                    // Substitute the reserve object for the lowest-id member
                    // and resubmit once; the judgment is recorded against the
                    // substituted triplet.
                    const ObjectId reserve = *config.reserve_object;
                    if (reserve != task.triplet.b && reserve != task.triplet.c &&
                        reserve < catalog.size()) {
                        Task next = task;
                        next.triplet = make_triplet(reserve, task.triplet.b, task.triplet.c);
                        next.replaced = true;
                        log_event(task, "replacement", "refusal; retrying with object " +
                                                           std::to_string(reserve));
                        std::lock_guard<std::mutex> lock(mu);
                        queue.push_back(next);
                        continue;
                    }
                }
                handle_terminal(task, "failed", rendered, "refusal: " + parsed.raw, -1);
            } else {
                handle_terminal(task, "failed", rendered, "ambiguous: " + parsed.raw, -1);
            }
        }
    };

    std::vector<std::thread> pool;
    const std::size_t workers = std::max<std::size_t>(
        1, std::min<std::size_t>(config.max_concurrent, std::max<std::size_t>(queue.size(), 1)));
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();

    if (abort.load()) throw Error("collection aborted: " + abort_reason);
    if (result.interrupted) {
        warn(warnings, "request budget exhausted; resume with the same audit path to finish");
    }

    result.judgments.provenance = "collector";
    for (auto& [key, resolved] : done) {
        if (resolved.has_judgment) result.judgments.judgments.push_back(resolved.judgment);
    }
    std::sort(result.judgments.judgments.begin(), result.judgments.judgments.end(),
              [](const Judgment& a, const Judgment& b) {
                  if (a.triplet != b.triplet) return a.triplet < b.triplet;
                  return a.choice < b.choice;
              });
    return result;
}

}  // namespace spose
