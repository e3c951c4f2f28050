#pragma once

// Shared (de)serialization of endpoint settings for config files and archive
// manifests. Secrets never appear here: auth_env names the variable, tokens
// stay in the environment.

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "biasrec/errors.hpp"
#include "biasrec/gateway.hpp"

namespace biasrec::detail {

using ordered_json = nlohmann::ordered_json;

inline ordered_json mock_config_to_json(const MockConfig& cfg) {
    ordered_json out;
    ordered_json boost = ordered_json::object();
    for (const auto& [phrase, value] : cfg.boost_lexicon) boost[phrase] = value;
    ordered_json penalty = ordered_json::object();
    for (const auto& [phrase, value] : cfg.penalty_lexicon) penalty[phrase] = value;
    out["boost_lexicon"] = std::move(boost);
    out["penalty_lexicon"] = std::move(penalty);
    out["weight_rating"] = cfg.weight_rating;
    out["weight_log_price"] = cfg.weight_log_price;
    out["noise_scale"] = cfg.noise_scale;
    out["k_range"] = ordered_json::array({cfg.k_lo, cfg.k_hi});
    return out;
}

inline MockConfig mock_config_from_json(const ordered_json& node) {
    static const std::vector<std::string> known = {
        "boost_lexicon", "penalty_lexicon", "weight_rating",
        "weight_log_price", "noise_scale", "k_range",
    };
    for (const auto& [key, value] : node.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown mock setting '" + key + "'");
    MockConfig cfg;
    if (node.contains("boost_lexicon"))
        for (const auto& [phrase, value] : node.at("boost_lexicon").items())
            cfg.boost_lexicon.emplace_back(phrase, value.get<double>());
    if (node.contains("penalty_lexicon"))
        for (const auto& [phrase, value] : node.at("penalty_lexicon").items())
            cfg.penalty_lexicon.emplace_back(phrase, value.get<double>());
    if (node.contains("weight_rating")) cfg.weight_rating = node.at("weight_rating").get<double>();
    if (node.contains("weight_log_price"))
        cfg.weight_log_price = node.at("weight_log_price").get<double>();
    if (node.contains("noise_scale")) cfg.noise_scale = node.at("noise_scale").get<double>();
    if (node.contains("k_range")) {
        const auto& range = node.at("k_range");
        if (!range.is_array() || range.size() != 2)
            throw ConfigError("k_range must be a [lo, hi] pair");
        cfg.k_lo = range.at(0).get<int>();
        cfg.k_hi = range.at(1).get<int>();
    }
    return cfg;
}

inline ordered_json endpoint_to_json(const ModelEndpoint& ep) {
    ordered_json out;
    out["name"] = ep.name;
    out["profile"] = ep.profile == EndpointProfile::mock ? "mock" : "generic";
    out["model_id"] = ep.model_id;
    out["base_url"] = ep.base_url;
    out["completion_path"] = ep.completion_path;
    out["auth_env"] = ep.auth_env;
    out["response_text_pointer"] = ep.response_text_pointer;
    out["seed_field"] = ep.seed_field;
    out["supports_thinking"] = ep.supports_thinking;
    out["thinking"] = ep.thinking;
    ordered_json decode = ordered_json::object();
    if (ep.decode.temperature) decode["temperature"] = *ep.decode.temperature;
    if (ep.decode.top_p) decode["top_p"] = *ep.decode.top_p;
    if (ep.decode.max_tokens) decode["max_tokens"] = *ep.decode.max_tokens;
    out["decode"] = std::move(decode);
    out["timeout_ms"] = ep.timeout_ms;
    out["max_retries"] = ep.max_retries;
    out["backoff_base_ms"] = ep.backoff_base_ms;
    out["backoff_cap_ms"] = ep.backoff_cap_ms;
    out["requests_per_minute"] = ep.requests_per_minute;
    out["burst"] = ep.burst;
    if (ep.mock) out["mock"] = mock_config_to_json(*ep.mock);
    return out;
}

inline ModelEndpoint endpoint_from_json(const ordered_json& node) {
    static const std::vector<std::string> known = {
        "name",         "profile",        "model_id",          "base_url",
        "completion_path", "auth_env",    "response_text_pointer", "seed_field",
        "supports_thinking", "thinking",  "decode",            "timeout_ms", "max_retries",
        "backoff_base_ms", "backoff_cap_ms", "requests_per_minute", "burst",
        "mock",
    };
    for (const auto& [key, value] : node.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown endpoint setting '" + key + "'");
    ModelEndpoint ep;
    if (node.contains("name")) ep.name = node.at("name").get<std::string>();
    if (node.contains("profile")) {
        const std::string profile = node.at("profile").get<std::string>();
        if (profile == "mock")
            ep.profile = EndpointProfile::mock;
        else if (profile == "generic")
            ep.profile = EndpointProfile::generic;
        else
            throw ConfigError("unknown endpoint profile '" + profile + "'");
    }
    if (node.contains("model_id")) ep.model_id = node.at("model_id").get<std::string>();
    if (node.contains("base_url")) ep.base_url = node.at("base_url").get<std::string>();
    if (node.contains("completion_path"))
        ep.completion_path = node.at("completion_path").get<std::string>();
    if (node.contains("auth_env")) ep.auth_env = node.at("auth_env").get<std::string>();
    if (node.contains("response_text_pointer"))
        ep.response_text_pointer = node.at("response_text_pointer").get<std::string>();
    if (node.contains("seed_field")) ep.seed_field = node.at("seed_field").get<std::string>();
    if (node.contains("supports_thinking"))
        ep.supports_thinking = node.at("supports_thinking").get<bool>();
    if (node.contains("thinking")) ep.thinking = node.at("thinking").get<bool>();
    if (node.contains("decode")) {
        const auto& decode = node.at("decode");
        if (decode.contains("temperature"))
            ep.decode.temperature = decode.at("temperature").get<double>();
        if (decode.contains("top_p")) ep.decode.top_p = decode.at("top_p").get<double>();
        if (decode.contains("max_tokens"))
            ep.decode.max_tokens = decode.at("max_tokens").get<int>();
    }
    if (node.contains("timeout_ms")) ep.timeout_ms = node.at("timeout_ms").get<int>();
    if (node.contains("max_retries")) ep.max_retries = node.at("max_retries").get<int>();
    if (node.contains("backoff_base_ms"))
        ep.backoff_base_ms = node.at("backoff_base_ms").get<int>();
    if (node.contains("backoff_cap_ms")) ep.backoff_cap_ms = node.at("backoff_cap_ms").get<int>();
    if (node.contains("requests_per_minute"))
        ep.requests_per_minute = node.at("requests_per_minute").get<int>();
    if (node.contains("burst")) ep.burst = node.at("burst").get<int>();
    if (node.contains("mock")) ep.mock = mock_config_from_json(node.at("mock"));
    return ep;
}

}  // namespace biasrec::detail
