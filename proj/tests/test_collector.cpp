#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "spose/choice.hpp"
#include "spose/collector.hpp"

using namespace spose;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ObjectCatalog test_catalog(std::size_t m = 10) {
    std::vector<ObjectInfo> objects;
    for (std::size_t i = 0; i < m; ++i) {
        objects.push_back(ObjectInfo{static_cast<ObjectId>(i), "obj" + std::to_string(i),
                                     "the obj" + std::to_string(i) + " item", "cat"});
    }
    return ObjectCatalog(std::move(objects));
}

// Deterministic chat-completion endpoint: answers with the name of the
// highest-id object in the prompt. Configurable refusals, flaky 500s, and
// auth enforcement; records arrival timestamps and a request counter.
class MockEndpoint {
public:
    explicit MockEndpoint(ObjectCatalog catalog) : catalog_(std::move(catalog)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                    httplib::Response& res) {
            {
                std::lock_guard<std::mutex> lock(mu_);
                ++requests_;
                stamps_.push_back(std::chrono::steady_clock::now());
            }
            if (require_auth_ && req.get_header_value("Authorization") != "Bearer sekrit") {
                res.status = 401;
                res.set_content("{}", "application/json");
                return;
            }
            const json body = json::parse(req.body, nullptr, false);
            const std::string prompt = body["messages"][0]["content"].get<std::string>();

            std::vector<ObjectId> present;
            for (const ObjectInfo& obj : catalog_.objects()) {
                if (prompt.find(obj.description) != std::string::npos) present.push_back(obj.id);
            }
            std::string key;
            for (ObjectId id : present) key += std::to_string(id) + ",";

            {
                std::lock_guard<std::mutex> lock(mu_);
                auto it = flaky_.find(key);
                if (it != flaky_.end() && it->second > 0) {
                    --it->second;
                    res.status = 500;
                    res.set_content("{}", "application/json");
                    return;
                }
            }

            std::string content;
            bool refuse = false;
            for (ObjectId id : present) refuse |= id == refuse_when_contains_;
            if (refuse) {
                content = "I'm sorry, but I cannot assist with this request.";
            } else if (present.size() == 3) {
                ObjectId pick = present[0];
                for (ObjectId id : present) pick = std::max(pick, id);
                content = "The odd one out is " + catalog_.object(pick).name +
                          ". It shares the fewest properties with obj" +
                          std::to_string(present[0]) + " and the rest.";
            } else {
                content = "I cannot tell which objects you mean.";
            }
            const json reply = {
                {"choices", json::array({json{{"message", json{{"role", "assistant"},
                                                               {"content", content}}}}})}};
            res.set_content(reply.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockEndpoint() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    std::size_t requests() const {
        std::lock_guard<std::mutex> lock(mu_);
        return requests_;
    }
    std::vector<std::chrono::steady_clock::time_point> stamps() const {
        std::lock_guard<std::mutex> lock(mu_);
        return stamps_;
    }
    void set_refusal_object(ObjectId id) { refuse_when_contains_ = id; }
    void set_flaky(const std::string& key, int failures) {
        std::lock_guard<std::mutex> lock(mu_);
        flaky_[key] = failures;
    }
    void require_auth() { require_auth_ = true; }

private:
    ObjectCatalog catalog_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    mutable std::mutex mu_;
    std::size_t requests_ = 0;
    std::vector<std::chrono::steady_clock::time_point> stamps_;
    std::map<std::string, int> flaky_;
    ObjectId refuse_when_contains_ = 9999;
    bool require_auth_ = false;
};

CollectorConfig base_config(const std::string& url) {
    CollectorConfig config;
    config.endpoint = url;
    config.model = "mock-model";
    config.max_concurrent = 3;
    config.per_minute_cap = 10000;
    config.retry_limit = 2;
    config.retry_base_ms = 20;
    config.seed = 5;
    return config;
}

struct TempDir {
    fs::path dir;
    TempDir() {
        static std::atomic<int> counter{0};
        dir = fs::temp_directory_path() /
              ("spose_collect_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(dir);
    }
    ~TempDir() { fs::remove_all(dir); }
    std::string file(const std::string& name) const { return (dir / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// The mock picks the highest id; map that to the canonical slot.
JudgmentSet expected_from_mock(const std::vector<Triplet>& triplets) {
    JudgmentSet set;
    set.provenance = "collector";
    for (const Triplet& t : triplets) set.judgments.push_back(Judgment{t, 2});
    std::sort(set.judgments.begin(), set.judgments.end(), [](const Judgment& a, const Judgment& b) {
        return a.triplet < b.triplet;
    });
    return set;
}

}  // namespace

TEST_CASE("the default text template renders descriptions in seeded order") {
    const ObjectCatalog catalog = test_catalog();
    const PromptTemplate tmpl = default_text_template();
    CHECK(tmpl.text.find("which one in the triplet is the odd-one-out?") != std::string::npos);
    CHECK(tmpl.text.find("Please give the answer first and then explain in detail.") !=
          std::string::npos);
    CHECK(tmpl.text.find("[Object_A]") != std::string::npos);

    const Triplet t{1, 4, 7};
    const RenderedPrompt a = render_prompt(tmpl, catalog, t, 11);
    const RenderedPrompt b = render_prompt(tmpl, catalog, t, 11);
    CHECK(a.text == b.text);
    CHECK(a.order == b.order);
    CHECK(a.text.find("[Object_") == std::string::npos);
    for (int slot = 0; slot < 3; ++slot) {
        CHECK(a.text.find(catalog.object(t.slot(slot)).description) != std::string::npos);
    }
}

TEST_CASE("the image template carries the instruction wording") {
    const PromptTemplate tmpl = default_image_template();
    CHECK(tmpl.text.find("report the image that was the least similar to the other two") !=
          std::string::npos);
    CHECK(tmpl.text.find("you should base your judgment on your best guess") != std::string::npos);
    CHECK(tmpl.modality == Modality::image_triplet);
    tmpl.validate();
}

TEST_CASE("templates must contain each placeholder exactly once") {
    PromptTemplate bad;
    bad.text = "compare [Object_A] with [Object_B]";
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad.text = "[Object_A] [Object_B] [Object_C] [Object_A]";
    CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("rendering fails for an object without a description") {
    std::vector<ObjectInfo> objects;
    for (std::size_t i = 0; i < 3; ++i) {
        objects.push_back(
            ObjectInfo{static_cast<ObjectId>(i), "obj" + std::to_string(i), "", ""});
    }
    const ObjectCatalog catalog{std::move(objects)};
    // the error names whichever object is rendered first
    CHECK_THROWS_WITH_AS(
        static_cast<void>(render_prompt(default_text_template(), catalog, Triplet{0, 1, 2}, 1)),
        doctest::Contains("has no description"), Error);
    try {
        static_cast<void>(render_prompt(default_text_template(), catalog, Triplet{0, 1, 2}, 1));
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("obj") != std::string::npos);
    }
}

TEST_CASE("responses naming one object decode to its canonical slot") {
    const ObjectCatalog catalog = test_catalog();
    const Triplet t{2, 5, 8};
    const RenderedPrompt rendered = render_prompt(default_text_template(), catalog, t, 3);
    const ParsedResponse one =
        parse_response("The answer is obj5. Because obj2 and obj8 go together.", rendered, catalog, t);
    CHECK(one.kind == ResponseKind::choice);
    CHECK(one.choice == 1);

    const ParsedResponse capitalized = parse_response("OBJ8 is the odd one.", rendered, catalog, t);
    CHECK(capitalized.kind == ResponseKind::choice);
    CHECK(capitalized.choice == 2);
}

TEST_CASE("two names in the first sentence are ambiguous") {
    const ObjectCatalog catalog = test_catalog();
    const Triplet t{2, 5, 8};
    const RenderedPrompt rendered = render_prompt(default_text_template(), catalog, t, 3);
    const ParsedResponse two =
        parse_response("Either obj2 or obj5 could be the odd one.", rendered, catalog, t);
    CHECK(two.kind == ResponseKind::ambiguous);
    const ParsedResponse none = parse_response("They all look alike.", rendered, catalog, t);
    CHECK(none.kind == ResponseKind::ambiguous);
    CHECK(none.raw == "They all look alike.");
}

TEST_CASE("name matching respects word boundaries") {
    std::vector<ObjectInfo> objects = {
        {0, "cat", "a cat", ""}, {1, "cattle", "some cattle", ""}, {2, "dog", "a dog", ""}};
    const ObjectCatalog catalog{std::move(objects)};
    const Triplet t{0, 1, 2};
    const RenderedPrompt rendered = render_prompt(default_text_template(), catalog, t, 1);
    const ParsedResponse r = parse_response("The cattle is the odd one out.", rendered, catalog, t);
    CHECK(r.kind == ResponseKind::choice);
    CHECK(r.choice == 1);
}

TEST_CASE("refusal fixtures are all classified as refusals") {
    const ObjectCatalog catalog = test_catalog();
    const Triplet t{0, 1, 2};
    const RenderedPrompt rendered = render_prompt(default_text_template(), catalog, t, 2);
    const char* fixtures[] = {
        "I'm sorry, but I cannot assist with that request.",
        "I cannot provide an answer to this.",
        "Unfortunately I am unable to help with comparing these items.",
        "I can't help with this one.",
        "This request appears to involve sensitive information, so I must decline.",
        "As an AI, I cannot make that judgment.",
        "I apologize, but I cannot comply with this request.",
        "Sorry, answering would go against my guidelines.",
        "I won't be able to answer that.",
        "I cannot answer because the images include inappropriate content.",
    };
    for (const char* text : fixtures) {
        const ParsedResponse r = parse_response(text, rendered, catalog, t);
        CHECK(r.kind == ResponseKind::refusal);
    }
}

TEST_CASE("all six presentation orders decode the mock answers correctly") {
    const ObjectCatalog catalog = test_catalog();
    const Triplet t{3, 6, 9};
    int seen_orders = 0;
    std::set<std::array<int, 3>> orders;
    for (std::uint64_t seed = 0; seed < 60 && orders.size() < 6; ++seed) {
        const RenderedPrompt rendered = render_prompt(default_text_template(), catalog, t, seed);
        orders.insert(rendered.order);
        // a slot-indexed answer: the object shown at presentation position 1
        const ObjectId shown = t.slot(rendered.order[1]);
        const std::string reply = "The odd one out is " + catalog.object(shown).name + ".";
        const ParsedResponse r = parse_response(reply, rendered, catalog, t);
        CHECK(r.kind == ResponseKind::choice);
        CHECK(t.slot(r.choice) == shown);
        ++seen_orders;
    }
    CHECK(orders.size() == 6);
    CHECK(seen_orders >= 6);
}

TEST_CASE("collect round-trips the scripted mock deterministically") {
    const ObjectCatalog catalog = test_catalog();
    MockEndpoint mock(catalog);
    const std::vector<Triplet> triplets = sample_triplets(10, 20, 31);
    TempDir tmp;
    CollectorConfig config = base_config(mock.url());

    Warnings warnings;
    const CollectResult res =
        collect(triplets, default_text_template(), catalog, config, tmp.file("audit.jsonl"),
                &warnings);
    CHECK(res.completed == 20);
    CHECK(res.failed == 0);
    const JudgmentSet expected = expected_from_mock(triplets);
    CHECK(res.judgments.judgments == expected.judgments);
    CHECK(res.judgments.provenance == "collector");
}

TEST_CASE("kill-and-resume produces a byte-identical judgment file") {
    const ObjectCatalog catalog = test_catalog();
    MockEndpoint mock(catalog);
    const std::vector<Triplet> triplets = sample_triplets(10, 24, 33);
    TempDir tmp;

    // uninterrupted reference run
    CollectorConfig config = base_config(mock.url());
    const CollectResult full =
        collect(triplets, default_text_template(), catalog, config, tmp.file("full.jsonl"));
    write_judgments(full.judgments, tmp.file("full.tsv"));

    // budget-limited run, then a resume; simulate a harsher crash by
    // truncating the checkpoint mid-line before resuming
    CollectorConfig limited = base_config(mock.url());
    limited.max_requests = 7;
    Warnings warnings;
    const CollectResult partial = collect(triplets, default_text_template(), catalog, limited,
                                          tmp.file("resume.jsonl"), &warnings);
    CHECK(partial.interrupted);
    CHECK(partial.requests_sent <= 7);
    CHECK(!warnings.empty());
    {
        std::string audit = slurp(tmp.file("resume.jsonl"));
        REQUIRE(audit.size() > 40);
        audit.resize(audit.size() - 25);  // tear the last line apart
        std::ofstream out(tmp.file("resume.jsonl"), std::ios::binary | std::ios::trunc);
        out << audit;
    }
    const CollectResult resumed = collect(triplets, default_text_template(), catalog, config,
                                          tmp.file("resume.jsonl"));
    CHECK(resumed.skipped > 0);
    write_judgments(resumed.judgments, tmp.file("resumed.tsv"));
    CHECK(slurp(tmp.file("resumed.tsv")) == slurp(tmp.file("full.tsv")));
}

TEST_CASE("resume never re-submits completed work") {
    const ObjectCatalog catalog = test_catalog();
    MockEndpoint mock(catalog);
    const std::vector<Triplet> triplets = sample_triplets(10, 12, 35);
    TempDir tmp;
    CollectorConfig config = base_config(mock.url());

    const CollectResult first =
        collect(triplets, default_text_template(), catalog, config, tmp.file("audit.jsonl"));
    CHECK(first.completed == 12);
    const std::size_t after_first = mock.requests();
    CHECK(after_first == 12);

    const CollectResult second =
        collect(triplets, default_text_template(), catalog, config, tmp.file("audit.jsonl"));
    CHECK(second.skipped == 12);
    CHECK(second.requests_sent == 0);
    CHECK(mock.requests() == after_first);
    CHECK(second.judgments.judgments == first.judgments.judgments);
}

TEST_CASE("the rate limiter caps every sliding window") {
    const ObjectCatalog catalog = test_catalog();
    MockEndpoint mock(catalog);
    const std::vector<Triplet> triplets = sample_triplets(10, 9, 37);
    TempDir tmp;
    CollectorConfig config = base_config(mock.url());
    config.max_concurrent = 4;
    config.per_minute_cap = 3;
    config.rate_window_ms = 400;

    const auto t0 = std::chrono::steady_clock::now();
    const CollectResult res =
        collect(triplets, default_text_template(), catalog, config, tmp.file("audit.jsonl"));
    CHECK(res.completed == 9);
    // 9 requests at 3 per 400 ms need at least two waits
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(elapsed >= 0.75);

    const auto stamps = mock.stamps();
    REQUIRE(stamps.size() == 9);
    for (std::size_t i = 0; i + 3 < stamps.size(); ++i) {
        const double gap = std::chrono::duration<double>(stamps[i + 3] - stamps[i]).count();
        CHECK(gap >= 0.4 * 0.9);  // margin for network jitter
    }
}

TEST_CASE("transient failures are retried with backoff") {
    const ObjectCatalog catalog = test_catalog();
    MockEndpoint mock(catalog);
    const std::vector<Triplet> triplets = {make_triplet(0, 1, 2)};
    mock.set_flaky("0,1,2,", 2);
    TempDir tmp;
    CollectorConfig config = base_config(mock.url());
    config.retry_limit = 3;

    const CollectResult res =
        collect(triplets, default_text_template(), catalog, config, tmp.file("audit.jsonl"));
    CHECK(res.completed == 1);
    CHECK(mock.requests() == 3);  // two 500s then success
}

TEST_CASE("exhausted retries mark the triplet failed") {
    const ObjectCatalog catalog = test_catalog();
    MockEndpoint mock(catalog);
    const std::vector<Triplet> triplets = {make_triplet(0, 1, 2), make_triplet(3, 4, 5)};
    mock.set_flaky("0,1,2,", 100);
    TempDir tmp;
    CollectorConfig config = base_config(mock.url());
    config.retry_limit = 1;

    const CollectResult res =
        collect(triplets, default_text_template(), catalog, config, tmp.file("audit.jsonl"));
    CHECK(res.completed == 1);
    CHECK(res.failed == 1);
    REQUIRE(res.judgments.judgments.size() == 1);
    CHECK(res.judgments.judgments[0].triplet == Triplet{3, 4, 5});
}

TEST_CASE("auth failures abort immediately") {
    const ObjectCatalog catalog = test_catalog();
    MockEndpoint mock(catalog);
    mock.require_auth();
    const std::vector<Triplet> triplets = sample_triplets(10, 5, 39);
    TempDir tmp;
    CollectorConfig config = base_config(mock.url());
    CHECK_THROWS_WITH_AS(static_cast<void>(collect(triplets, default_text_template(), catalog,
                                                   config, tmp.file("audit.jsonl"))),
                         doctest::Contains("authentication"), Error);

    // with the key exported under the configured env var it succeeds
    ::setenv("SPOSE_TEST_KEY", "sekrit", 1);
    config.api_key_env = "SPOSE_TEST_KEY";
    const CollectResult res =
        collect(triplets, default_text_template(), catalog, config, tmp.file("audit2.jsonl"));
    CHECK(res.completed == 5);
}

TEST_CASE("refusals trigger one replacement with the reserve object") {
    const ObjectCatalog catalog = test_catalog();
    MockEndpoint mock(catalog);
    mock.set_refusal_object(3);
    const std::vector<Triplet> triplets = {make_triplet(3, 4, 5), make_triplet(6, 7, 8)};
    TempDir tmp;
    CollectorConfig config = base_config(mock.url());
    config.replace_on_refusal = true;
    config.reserve_object = 9;

    const CollectResult res =
        collect(triplets, default_text_template(), catalog, config, tmp.file("audit.jsonl"));
    CHECK(res.completed == 2);
    CHECK(res.failed == 0);
    // (3,4,5) was replaced by (4,5,9); the mock then picks obj9
    REQUIRE(res.judgments.judgments.size() == 2);
    CHECK(res.judgments.judgments[0].triplet == Triplet{4, 5, 9});
    CHECK(res.judgments.judgments[0].chosen() == 9);

    // the audit links the replacement to the original triplet
    const std::string audit = slurp(tmp.file("audit.jsonl"));
    CHECK(audit.find("\"replacement\"") != std::string::npos);
    CHECK(audit.find("\"replaced\":true") != std::string::npos);
}

TEST_CASE("refusals without a reserve object fail the triplet") {
    const ObjectCatalog catalog = test_catalog();
    MockEndpoint mock(catalog);
    mock.set_refusal_object(3);
    const std::vector<Triplet> triplets = {make_triplet(3, 4, 5)};
    TempDir tmp;
    CollectorConfig config = base_config(mock.url());

    const CollectResult res =
        collect(triplets, default_text_template(), catalog, config, tmp.file("audit.jsonl"));
    CHECK(res.completed == 0);
    CHECK(res.failed == 1);
}

TEST_CASE("repeat mode collects every (triplet, rep) pair") {
    const ObjectCatalog catalog = test_catalog();
    MockEndpoint mock(catalog);
    const std::vector<Triplet> triplets = sample_triplets(10, 4, 41);
    TempDir tmp;
    CollectorConfig config = base_config(mock.url());
    config.repeats = 5;

    const CollectResult res =
        collect(triplets, default_text_template(), catalog, config, tmp.file("audit.jsonl"));
    CHECK(res.completed == 20);
    CHECK(res.judgments.judgments.size() == 20);
    // deterministic mock: every repeat agrees, usable as a ceiling protocol
    std::map<Triplet, std::vector<int>> grouped;
    for (const Judgment& j : res.judgments.judgments) grouped[j.triplet].push_back(j.choice);
    std::vector<std::vector<int>> repeats;
    for (auto& [t, choices] : grouped) {
        CHECK(choices.size() == 5);
        repeats.push_back(choices);
    }
    CHECK(noise_ceiling(repeats).ceiling == doctest::Approx(1.0));
}

TEST_CASE("dry-run renders and logs without submitting") {
    const ObjectCatalog catalog = test_catalog();
    const std::vector<Triplet> triplets = sample_triplets(10, 3, 43);
    TempDir tmp;
    CollectorConfig config;
    config.dry_run = true;
    config.model = "mock";

    const CollectResult res =
        collect(triplets, default_text_template(), catalog, config, tmp.file("audit.jsonl"));
    CHECK(res.requests_sent == 0);
    CHECK(res.judgments.judgments.empty());
    const std::string audit = slurp(tmp.file("audit.jsonl"));
    CHECK(audit.find("dry-run") != std::string::npos);
}

TEST_CASE("collector config validation") {
    CollectorConfig config;
    CHECK_THROWS_AS(config.validate(), DomainError);  // no endpoint
    config.endpoint = "http://x";
    config.temperature = -1.0;
    CHECK_THROWS_AS(config.validate(), DomainError);
    config.temperature = 0.01;
    config.max_concurrent = 0;
    CHECK_THROWS_AS(config.validate(), DomainError);
}
