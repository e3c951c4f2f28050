#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biasrec/attack.hpp"
#include "biasrec/errors.hpp"
#include "biasrec/money.hpp"

namespace biasrec {

// Deterministic scoring backend standing in for a live recommender. Scores are
//   weight_rating * rating - weight_log_price * ln(price in dollars)
//   + lexicon bonuses - lexicon penalties + seeded noise
// with phrases matched case-insensitively inside the description.
struct MockConfig {
    std::vector<std::pair<std::string, double>> boost_lexicon;
    std::vector<std::pair<std::string, double>> penalty_lexicon;  // positive values, subtracted
    double weight_rating = 1.0;
    double weight_log_price = 0.0;
    double noise_scale = 0.0;
    int k_lo = 1;  // inclusive bounds for the list length draw
    int k_hi = 5;
};

enum class EndpointProfile { generic, mock };

struct DecodeParams {
    std::optional<double> temperature;  // backend default when unset; never forced to 0
    std::optional<double> top_p;
    std::optional<int> max_tokens;
};

struct ModelEndpoint {
    std::string name;  // config handle, also used for rate-limiter identity
    EndpointProfile profile = EndpointProfile::generic;
    std::string model_id;
    std::string base_url;
    std::string completion_path = "/v1/chat/completions";
    std::string auth_env;  // environment variable holding the bearer token; empty = no auth
    std::string response_text_pointer = "/choices/0/message/content";
    std::string seed_field = "seed";  // request-body field for run_seed; empty = do not send
    bool supports_thinking = false;
    bool thinking = false;  // request extended reasoning; needs supports_thinking
    DecodeParams decode;
    int timeout_ms = 60000;
    int max_retries = 3;
    int backoff_base_ms = 1000;
    int backoff_cap_ms = 30000;
    int requests_per_minute = 0;  // 0 = unlimited
    int burst = 1;
    std::optional<MockConfig> mock;
};

struct ChatRequest {
    std::string system_prompt;
    std::string user_prompt;
    bool thinking = false;
    std::uint64_t run_seed = 0;
};

struct ChatResponse {
    std::string text;  // verbatim backend text, recorded before any parsing
    int attempts = 1;
    std::int64_t latency_ms = 0;
    std::int64_t started_unix_ms = 0;   // zero on the mock profile
    std::int64_t finished_unix_ms = 0;
};

struct HealthResult {
    bool ok = false;
    std::string reason;  // empty when ok
};

struct MockProduct {
    std::string name;
    std::string description;
    Money price;
    double rating = 0.0;
};

// Product blocks recovered from a built user prompt, in prompt order.
std::vector<MockProduct> parse_product_blocks(std::string_view user_prompt);

// Pure function of its arguments; byte-identical output for identical input.
std::string mock_recommend(const MockConfig& cfg, const std::vector<MockProduct>& products,
                           std::uint64_t run_seed);

void validate_mock_config(const MockConfig& cfg, std::size_t catalog_size);

// Token bucket refilled at requests_per_minute/60 tokens per second.
class RateLimiter {
public:
    RateLimiter(int requests_per_minute, int burst);
    // Blocks (via the supplied sleeper) until a token is available.
    void acquire(const std::function<void(std::chrono::milliseconds)>& sleep_fn);

private:
    double rate_per_ms_;
    double capacity_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mutex_;
};

struct GatewayHooks {
    std::function<void(std::chrono::milliseconds)> sleep_fn;  // default: real sleep
    std::function<std::int64_t()> now_unix_ms;                // default: system clock
    std::function<void(const std::string&)> log_fn;           // per-attempt log line; default off
};

std::string_view gateway_error_kind_name(GatewayError::Kind kind);

class Gateway {
public:
    Gateway();
    explicit Gateway(GatewayHooks hooks);

    // Thread-safe. Retries transient failures (transport, 408, 429, 5xx) with
    // exponential backoff and seeded jitter; authentication and malformed
    // replies fail immediately.
    ChatResponse complete(const ModelEndpoint& endpoint, const ChatRequest& request);

    HealthResult health_check(const ModelEndpoint& endpoint);

private:
    ChatResponse complete_mock(const ModelEndpoint& endpoint, const ChatRequest& request);
    ChatResponse complete_generic(const ModelEndpoint& endpoint, const ChatRequest& request);
    RateLimiter& limiter_for(const ModelEndpoint& endpoint);

    GatewayHooks hooks_;
    std::map<std::string, std::unique_ptr<RateLimiter>> limiters_;
    std::mutex limiters_mutex_;
};

// Deterministic attacker for generated-mode pipelines and tests: recognizes
// the builtin generation prompts, echoes the embedded description, and adds a
// bias cue (computing real per-day and was/now figures where the bias calls
// for them). Plain paraphrase prompts are returned unchanged.
class MockAttacker final : public TextGenerator {
public:
    std::string rewrite(const std::string& prompt, std::uint64_t seed) override;
    std::string id() const override;
};

// TextGenerator running each rewrite through a live endpoint.
class GatewayTextGenerator final : public TextGenerator {
public:
    GatewayTextGenerator(Gateway& gateway, ModelEndpoint endpoint);
    std::string rewrite(const std::string& prompt, std::uint64_t seed) override;
    std::string id() const override;

private:
    Gateway* gateway_;
    ModelEndpoint endpoint_;
};

}  // namespace biasrec
