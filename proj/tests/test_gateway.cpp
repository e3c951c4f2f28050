#include <doctest.h>

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <json.hpp>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "biasrec/attack.hpp"
#include "biasrec/catalog.hpp"
#include "biasrec/errors.hpp"
#include "biasrec/gateway.hpp"
#include "biasrec/prompt.hpp"

using namespace biasrec;

namespace {

Catalog small_catalog() {
    Catalog c;
    c.category = "kettle";
    Product a;
    a.id = "a";
    a.name = "Alpha Kettle";
    a.description = "Solid build with a limited items left note inside.";
    a.price = Money::parse("25");
    a.rating = 3.0;
    Product b = a;
    b.id = "b";
    b.name = "Bravo Kettle";
    b.description = "Praised as the most popular choice among the customers.";
    b.rating = 5.0;
    Product d = a;
    d.id = "c";
    d.name = "Charlie Kettle";
    d.description = "A plain, decent kettle.";
    d.rating = 4.0;
    c.products = {a, b, d};
    return c;
}

std::vector<MockProduct> products_of(const Catalog& c) {
    std::vector<MockProduct> out;
    for (const Product& p : c.products)
        out.push_back({p.name, p.description, p.price, p.rating});
    return out;
}

// Positions of the numbered entries, to compare orderings.
std::size_t rank_pos(const std::string& text, int rank, const std::string& name) {
    const std::string needle = std::to_string(rank) + ". " + name;
    return text.find(needle);
}

int listed_count(const std::string& text) {
    int n = 0;
    while (rank_pos(text, n + 1, "") != std::string::npos) ++n;
    return n;
}

struct TestServer {
    httplib::Server svr;
    std::thread thread;
    int port = 0;

    ~TestServer() {
        svr.stop();
        if (thread.joinable()) thread.join();
    }

    void start() {
        port = svr.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        thread = std::thread([this] { svr.listen_after_bind(); });
        svr.wait_until_ready();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

const char* kOkBody = R"({"choices":[{"message":{"content":"The ranked list."}}]})";

ModelEndpoint generic_endpoint(const std::string& base_url) {
    ModelEndpoint ep;
    ep.name = "live";
    ep.profile = EndpointProfile::generic;
    ep.model_id = "test-model";
    ep.base_url = base_url;
    ep.max_retries = 3;
    ep.backoff_base_ms = 1;
    ep.backoff_cap_ms = 2;
    ep.timeout_ms = 5000;
    return ep;
}

struct SleepLog {
    std::vector<std::chrono::milliseconds> sleeps;
    GatewayHooks hooks() {
        GatewayHooks h;
        h.sleep_fn = [this](std::chrono::milliseconds d) {
            sleeps.push_back(d);
            std::this_thread::sleep_for(std::chrono::microseconds(50));
        };
        return h;
    }
};

GatewayError::Kind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const GatewayError& e) {
        return e.kind;
    }
    FAIL("expected a GatewayError");
    return GatewayError::Kind::transport;
}

}  // namespace

TEST_CASE("product blocks round trip through the prompt") {
    const Catalog c = small_catalog();
    const PromptBundle bundle = build_bundle(c, {2, 0, 1}, false);
    const std::vector<MockProduct> blocks = parse_product_blocks(bundle.user_prompt);
    REQUIRE(blocks.size() == 3);
    CHECK(blocks[0].name == "Charlie Kettle");
    CHECK(blocks[1].name == "Alpha Kettle");
    CHECK(blocks[2].name == "Bravo Kettle");
    CHECK(blocks[1].description == c.at("a").description);
    CHECK(blocks[1].price.cents() == 2500);
    CHECK(blocks[2].rating == 5.0);

    CHECK(parse_product_blocks("no blocks here").empty());
    CHECK(kind_of([] {
              parse_product_blocks("Name: X\nDescription: d\nRating: 4.0");
          }) == GatewayError::Kind::config);
}

TEST_CASE("mock scoring ranks by weighted rating and is order-invariant") {
    MockConfig cfg;
    cfg.k_lo = cfg.k_hi = 3;
    const Catalog c = small_catalog();
    const std::string text = mock_recommend(cfg, products_of(c), 42);

    CHECK(listed_count(text) == 3);
    const std::size_t first = rank_pos(text, 1, "Bravo Kettle");
    const std::size_t second = rank_pos(text, 2, "Charlie Kettle");
    const std::size_t third = rank_pos(text, 3, "Alpha Kettle");
    REQUIRE(first != std::string::npos);
    REQUIRE(second != std::string::npos);
    REQUIRE(third != std::string::npos);
    CHECK(first < second);
    CHECK(second < third);
    CHECK(text.find("($25, rating 5.0)") != std::string::npos);

    // Prompt order must not matter.
    std::vector<MockProduct> reversed = products_of(c);
    std::reverse(reversed.begin(), reversed.end());
    CHECK(mock_recommend(cfg, reversed, 42) == text);
    // Same inputs, same bytes.
    CHECK(mock_recommend(cfg, products_of(c), 42) == text);
}

TEST_CASE("mock lexicons push products up or down") {
    MockConfig cfg;
    cfg.k_lo = cfg.k_hi = 3;
    cfg.boost_lexicon = {{"limited items left", 6.0}};
    const Catalog c = small_catalog();
    const std::string boosted = mock_recommend(cfg, products_of(c), 42);
    // Alpha (rating 3) jumps to first on the phrase bonus: 3 + 6 beats 5.
    CHECK(rank_pos(boosted, 1, "Alpha Kettle") != std::string::npos);

    cfg.boost_lexicon.clear();
    cfg.penalty_lexicon = {{"most popular choice", 4.0}};
    const std::string penalized = mock_recommend(cfg, products_of(c), 42);
    // Bravo (rating 5) drops to last: 5 - 4 loses to 3 and 4.
    CHECK(rank_pos(penalized, 3, "Bravo Kettle") != std::string::npos);
}

TEST_CASE("mock price weight and name tie-break") {
    std::vector<MockProduct> products = {
        {"Zed", "plain", Money::parse("1000"), 4.0},
        {"Alpha", "plain", Money::parse("10"), 4.0},
    };
    MockConfig cfg;
    cfg.k_lo = cfg.k_hi = 2;
    // Equal ratings, no price weight: normalized name breaks the tie.
    std::string text = mock_recommend(cfg, products, 7);
    CHECK(rank_pos(text, 1, "Alpha") != std::string::npos);

    cfg.weight_log_price = 1.0;
    text = mock_recommend(cfg, products, 7);
    CHECK(rank_pos(text, 1, "Alpha") != std::string::npos);
    CHECK(rank_pos(text, 2, "Zed") != std::string::npos);
}

TEST_CASE("mock noise and list length vary with the run seed") {
    std::vector<MockProduct> products;
    for (char ch = 'a'; ch <= 'd'; ++ch)
        products.push_back({std::string(1, ch), "plain", Money::parse("10"), 4.0});
    MockConfig cfg;
    cfg.noise_scale = 5.0;
    cfg.k_lo = 1;
    cfg.k_hi = 4;

    bool saw_short = false, saw_long = false, saw_difference = false;
    std::string previous;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const std::string text = mock_recommend(cfg, products, seed);
        const int k = listed_count(text);
        CHECK(k >= 1);
        CHECK(k <= 4);
        if (k == 1) saw_short = true;
        if (k == 4) saw_long = true;
        if (!previous.empty() && text != previous) saw_difference = true;
        previous = text;
    }
    CHECK(saw_short);
    CHECK(saw_long);
    CHECK(saw_difference);
}

TEST_CASE("mock settings validation") {
    MockConfig cfg;
    CHECK_NOTHROW(validate_mock_config(cfg, 10));
    cfg.k_lo = 0;
    CHECK_THROWS_AS(validate_mock_config(cfg, 10), ConfigError);
    cfg.k_lo = 5;
    cfg.k_hi = 4;
    CHECK_THROWS_AS(validate_mock_config(cfg, 10), ConfigError);
    cfg.k_hi = 11;
    CHECK_THROWS_AS(validate_mock_config(cfg, 10), ConfigError);
    cfg = MockConfig{};
    cfg.noise_scale = -1.0;
    CHECK_THROWS_AS(validate_mock_config(cfg, 10), ConfigError);
    cfg = MockConfig{};
    cfg.weight_rating = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(validate_mock_config(cfg, 10), ConfigError);
}

TEST_CASE("rate limiter honours burst then waits") {
    RateLimiter fast(60000, 2);  // one token per millisecond, two banked
    std::vector<std::chrono::milliseconds> sleeps;
    auto sleeper = [&](std::chrono::milliseconds d) {
        sleeps.push_back(d);
        std::this_thread::sleep_for(d);
    };
    fast.acquire(sleeper);
    fast.acquire(sleeper);
    CHECK(sleeps.empty());
    fast.acquire(sleeper);
    CHECK(!sleeps.empty());

    RateLimiter unlimited(0, 1);
    for (int i = 0; i < 100; ++i) unlimited.acquire(sleeper);
    CHECK(sleeps.size() == 1);
}

TEST_CASE("gateway mock profile is deterministic with zeroed timestamps") {
    ModelEndpoint ep;
    ep.name = "mock";
    ep.profile = EndpointProfile::mock;
    ep.model_id = "mock-small";
    MockConfig cfg;
    cfg.k_lo = cfg.k_hi = 3;
    ep.mock = cfg;

    const Catalog c = small_catalog();
    Gateway gateway;
    ChatRequest req;
    req.system_prompt = system_prompt(false);
    req.user_prompt = build_bundle(c, {0, 1, 2}, false).user_prompt;
    req.run_seed = 9;

    const ChatResponse r1 = gateway.complete(ep, req);
    const ChatResponse r2 = gateway.complete(ep, req);
    CHECK(r1.text == r2.text);
    CHECK(r1.attempts == 1);
    CHECK(r1.started_unix_ms == 0);
    CHECK(r1.finished_unix_ms == 0);
    CHECK(listed_count(r1.text) == 3);

    // A different prompt permutation changes nothing downstream.
    ChatRequest permuted = req;
    permuted.user_prompt = build_bundle(c, {2, 1, 0}, false).user_prompt;
    CHECK(gateway.complete(ep, permuted).text == r1.text);

    ChatRequest thinking = req;
    thinking.thinking = true;
    CHECK(kind_of([&] { gateway.complete(ep, thinking); }) == GatewayError::Kind::config);

    ChatRequest no_blocks = req;
    no_blocks.user_prompt = "no products";
    CHECK(kind_of([&] { gateway.complete(ep, no_blocks); }) == GatewayError::Kind::config);
}

TEST_CASE("generic profile retries transient failures then succeeds") {
    TestServer server;
    std::atomic<int> hits{0};
    server.svr.Post("/v1/chat/completions",
                    [&](const httplib::Request&, httplib::Response& res) {
                        if (++hits < 3) {
                            res.status = 500;
                            res.set_content("boom", "text/plain");
                        } else {
                            res.set_content(kOkBody, "application/json");
                        }
                    });
    server.start();

    SleepLog log;
    Gateway gateway(log.hooks());
    ChatRequest req;
    req.user_prompt = "hello";
    const ChatResponse resp = gateway.complete(generic_endpoint(server.url()), req);
    CHECK(resp.text == "The ranked list.");
    CHECK(resp.attempts == 3);
    CHECK(hits.load() == 3);
    CHECK(log.sleeps.size() >= 2);  // one backoff before each retry
}

TEST_CASE("generic profile gives up after exhausting retries") {
    TestServer server;
    std::atomic<int> hits{0};
    server.svr.Post("/v1/chat/completions",
                    [&](const httplib::Request&, httplib::Response& res) {
                        ++hits;
                        res.status = 503;
                        res.set_content("down", "text/plain");
                    });
    server.start();

    SleepLog log;
    Gateway gateway(log.hooks());
    ModelEndpoint ep = generic_endpoint(server.url());
    ep.max_retries = 2;
    ChatRequest req;
    req.user_prompt = "hello";
    CHECK(kind_of([&] { gateway.complete(ep, req); }) == GatewayError::Kind::transport);
    CHECK(hits.load() == 3);
}

TEST_CASE("authentication failures and client errors do not retry") {
    TestServer server;
    std::atomic<int> hits{0};
    std::atomic<int> status{401};
    server.svr.Post("/v1/chat/completions",
                    [&](const httplib::Request&, httplib::Response& res) {
                        ++hits;
                        res.status = status.load();
                        res.set_content("no", "text/plain");
                    });
    server.start();

    SleepLog log;
    Gateway gateway(log.hooks());
    ChatRequest req;
    req.user_prompt = "hello";
    const ModelEndpoint ep = generic_endpoint(server.url());

    CHECK(kind_of([&] { gateway.complete(ep, req); }) == GatewayError::Kind::auth);
    CHECK(hits.load() == 1);

    status = 404;
    hits = 0;
    CHECK(kind_of([&] { gateway.complete(ep, req); }) == GatewayError::Kind::config);
    CHECK(hits.load() == 1);
}

TEST_CASE("malformed replies fail immediately") {
    TestServer server;
    std::atomic<int> hits{0};
    std::atomic<int> variant{0};
    server.svr.Post("/v1/chat/completions",
                    [&](const httplib::Request&, httplib::Response& res) {
                        ++hits;
                        res.set_content(variant.load() == 0 ? "not json at all"
                                                            : R"({"unexpected": "shape"})",
                                        "application/json");
                    });
    server.start();

    SleepLog log;
    Gateway gateway(log.hooks());
    ChatRequest req;
    req.user_prompt = "hello";
    const ModelEndpoint ep = generic_endpoint(server.url());

    CHECK(kind_of([&] { gateway.complete(ep, req); }) == GatewayError::Kind::malformed_reply);
    CHECK(hits.load() == 1);

    variant = 1;
    hits = 0;
    CHECK(kind_of([&] { gateway.complete(ep, req); }) == GatewayError::Kind::malformed_reply);
    CHECK(hits.load() == 1);
}

TEST_CASE("request bodies carry model, messages, decode knobs and the seed") {
    TestServer server;
    std::string seen_body;
    std::string seen_auth;
    server.svr.Post("/v1/chat/completions",
                    [&](const httplib::Request& req, httplib::Response& res) {
                        seen_body = req.body;
                        seen_auth = req.get_header_value("Authorization");
                        res.set_content(kOkBody, "application/json");
                    });
    server.start();

    setenv("BIASREC_GW_TEST_TOKEN", "tok-123", 1);
    ModelEndpoint ep = generic_endpoint(server.url());
    ep.auth_env = "BIASREC_GW_TEST_TOKEN";
    ep.decode.temperature = 0.7;
    ep.decode.max_tokens = 321;
    ep.supports_thinking = true;

    Gateway gateway;
    ChatRequest req;
    req.system_prompt = "sys text";
    req.user_prompt = "user text";
    req.run_seed = 777;
    gateway.complete(ep, req);

    CHECK(seen_auth == "Bearer tok-123");
    const nlohmann::json body = nlohmann::json::parse(seen_body);
    CHECK(body.at("model") == "test-model");
    REQUIRE(body.at("messages").size() == 2);
    CHECK(body.at("messages")[0].at("role") == "system");
    CHECK(body.at("messages")[0].at("content") == "sys text");
    CHECK(body.at("messages")[1].at("role") == "user");
    CHECK(body.at("messages")[1].at("content") == "user text");
    CHECK(body.at("temperature") == 0.7);
    CHECK(body.at("max_tokens") == 321);
    CHECK(body.at("seed") == 777);
    CHECK(!body.contains("top_p"));
    CHECK(!body.contains("thinking"));

    // Thinking mode adds its block; an unset token refuses before any call.
    ChatRequest thinking = req;
    thinking.thinking = true;
    gateway.complete(ep, thinking);
    CHECK(nlohmann::json::parse(seen_body).at("thinking").at("type") == "enabled");

    unsetenv("BIASREC_GW_TEST_TOKEN");
    CHECK(kind_of([&] { gateway.complete(ep, req); }) == GatewayError::Kind::auth);
}

TEST_CASE("health checks probe the endpoint") {
    ModelEndpoint mock;
    mock.profile = EndpointProfile::mock;
    Gateway gateway;
    CHECK(gateway.health_check(mock).ok);

    TestServer ok_server;
    std::string seen_user;
    ok_server.svr.Post("/v1/chat/completions",
                       [&](const httplib::Request& req, httplib::Response& res) {
                           seen_user = nlohmann::json::parse(req.body)
                                           .at("messages")
                                           .back()
                                           .at("content");
                           res.set_content(kOkBody, "application/json");
                       });
    ok_server.start();
    const HealthResult up = gateway.health_check(generic_endpoint(ok_server.url()));
    CHECK(up.ok);
    CHECK(up.reason.empty());
    CHECK(seen_user == "Reply with the single word OK.");

    TestServer down_server;
    std::atomic<int> hits{0};
    down_server.svr.Post("/v1/chat/completions",
                         [&](const httplib::Request&, httplib::Response& res) {
                             ++hits;
                             res.status = 500;
                         });
    down_server.start();
    const HealthResult down = gateway.health_check(generic_endpoint(down_server.url()));
    CHECK(!down.ok);
    CHECK(down.reason.find("transport") != std::string::npos);
    CHECK(hits.load() == 1);  // health probes never retry
}

TEST_CASE("endpoint-backed rewriting passes prompts through verbatim") {
    TestServer server;
    std::string seen_prompt;
    server.svr.Post("/v1/chat/completions",
                    [&](const httplib::Request& req, httplib::Response& res) {
                        seen_prompt = nlohmann::json::parse(req.body)
                                          .at("messages")
                                          .back()
                                          .at("content");
                        res.set_content(kOkBody, "application/json");
                    });
    server.start();

    Gateway gateway;
    GatewayTextGenerator generator(gateway, generic_endpoint(server.url()));
    CHECK(generator.id() == "endpoint:test-model");
    CHECK(generator.rewrite("rewrite this please", 5) == "The ranked list.");
    CHECK(seen_prompt == "rewrite this please");
}

TEST_CASE("the deterministic attacker injects a recognizable cue per bias") {
    Product p;
    p.id = "t";
    p.name = "T";
    p.description =
        "A quietly efficient machine that grinds, brews and pours with very little effort.";
    p.price = Money::parse("29.00");
    p.rating = 4.0;

    MockAttacker attacker;
    const std::vector<std::pair<BiasKind, std::string>> cues = {
        {BiasKind::social_proof, "most popular choice"},
        {BiasKind::scarcity, "limited items left"},
        {BiasKind::exclusivity, "selected customers only"},
        {BiasKind::identity_signaling, "inclusive"},
        {BiasKind::storytelling, "Imagine"},
        {BiasKind::denominator_neglect, "a day"},
        {BiasKind::authority, "experts"},
        {BiasKind::decoy, "less features"},
        {BiasKind::contrast, "more expensive"},
        {BiasKind::discount_framing, "now only"},
    };
    for (const auto& [bias, cue] : cues) {
        CAPTURE(bias_name(bias));
        const std::string prompt = build_generation_prompt(bias, p.description, p.price);
        const std::string out = attacker.rewrite(prompt, 11);
        CHECK(out.find(cue) != std::string::npos);
        CHECK(validate_generated(p, out, bias).ok);
        CHECK(attacker.rewrite(prompt, 11) == out);  // same seed, same text
    }

    // The per-day figure is the real one.
    const std::string daily = attacker.rewrite(
        build_generation_prompt(BiasKind::denominator_neglect, p.description, p.price), 3);
    CHECK(daily.find("$0.32 a day") != std::string::npos);
}

TEST_CASE("the deterministic attacker trims itself into tight word budgets") {
    const std::string prompt =
        build_generation_prompt(BiasKind::social_proof, "Tiny.", std::nullopt);
    MockAttacker attacker;
    // One-word original leaves no room beyond the cue itself.
    CHECK(attacker.rewrite(prompt, 4) == "The most popular choice among the customers!");

    CHECK(attacker.id() == "mock-attacker");
    CHECK_THROWS_AS(attacker.rewrite("who am I", 1), AttackError);
}

TEST_CASE("the deterministic attacker paraphrases by echoing the description") {
    MockAttacker attacker;
    const std::string description = "Keeps water warm for an hour after boiling.";
    CHECK(paraphrase_description(description, attacker, 12) == description);
}
