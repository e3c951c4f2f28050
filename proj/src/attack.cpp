#include "biasrec/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <regex>

#include <json.hpp>

#include "biasrec/embedded_assets.gen.hpp"
#include "biasrec/errors.hpp"
#include "biasrec/rng.hpp"
#include "biasrec/text.hpp"

namespace biasrec {

const std::vector<BiasKind>& all_bias_kinds() {
    static const std::vector<BiasKind> kinds = {
        BiasKind::social_proof,       BiasKind::scarcity,    BiasKind::exclusivity,
        BiasKind::identity_signaling, BiasKind::storytelling, BiasKind::denominator_neglect,
        BiasKind::authority,          BiasKind::decoy,       BiasKind::contrast,
        BiasKind::discount_framing,   BiasKind::sts_baseline,
    };
    return kinds;
}

std::string_view bias_name(BiasKind bias) {
    switch (bias) {
        case BiasKind::social_proof: return "social_proof";
        case BiasKind::scarcity: return "scarcity";
        case BiasKind::exclusivity: return "exclusivity";
        case BiasKind::identity_signaling: return "identity_signaling";
        case BiasKind::storytelling: return "storytelling";
        case BiasKind::denominator_neglect: return "denominator_neglect";
        case BiasKind::authority: return "authority";
        case BiasKind::decoy: return "decoy";
        case BiasKind::contrast: return "contrast";
        case BiasKind::discount_framing: return "discount_framing";
        case BiasKind::sts_baseline: return "sts_baseline";
    }
    throw AttackError("unreachable bias kind");
}

BiasKind bias_from_name(std::string_view name) {
    for (BiasKind k : all_bias_kinds())
        if (bias_name(k) == name) return k;
    throw AttackError("unknown bias kind '" + std::string(name) + "'");
}

bool expert_expressible(BiasKind bias) {
    return bias != BiasKind::storytelling && bias != BiasKind::denominator_neglect;
}

bool generation_applicable(BiasKind bias) {
    return bias != BiasKind::sts_baseline;
}

std::string_view attack_mode_name(AttackMode mode) {
    switch (mode) {
        case AttackMode::expert: return "expert";
        case AttackMode::generated: return "generated";
        case AttackMode::counterfactual: return "counterfactual";
    }
    throw AttackError("unreachable attack mode");
}

TemplateSet TemplateSet::builtin() {
    static const TemplateSet instance = from_json(assets::kAttackTemplatesJson);
    return instance;
}

TemplateSet TemplateSet::from_json(std::string_view json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw AttackError(std::string("template file is not valid JSON: ") + e.what());
    }
    TemplateSet set;
    if (!doc.contains("expert") || !doc.contains("generated") || !doc.contains("paraphrase"))
        throw AttackError("template file needs 'expert', 'generated' and 'paraphrase' entries");
    for (const auto& [key, value] : doc["expert"].items()) {
        const BiasKind bias = bias_from_name(key);
        if (!expert_expressible(bias))
            throw AttackError("template file carries an expert sentence for '" + key +
                              "', which has no fixed-sentence form");
        set.expert_.emplace_back(bias, value.get<std::string>());
    }
    for (const auto& [key, value] : doc["generated"].items()) {
        const BiasKind bias = bias_from_name(key);
        if (!generation_applicable(bias))
            throw AttackError("template file carries a generation prompt for '" + key + "'");
        set.generated_.emplace_back(bias, value.get<std::string>());
    }
    set.paraphrase_ = doc["paraphrase"].get<std::string>();
    for (BiasKind k : all_bias_kinds()) {
        if (expert_expressible(k) && !set.has_expert(k))
            throw AttackError("template file misses the expert sentence for '" +
                              std::string(bias_name(k)) + "'");
        if (generation_applicable(k)) set.generation_template(k);  // throws when missing
    }
    if (set.paraphrase_.empty()) throw AttackError("template file has an empty paraphrase prompt");
    return set;
}

bool TemplateSet::has_expert(BiasKind bias) const {
    for (const auto& [k, v] : expert_)
        if (k == bias) return true;
    return false;
}

const std::string& TemplateSet::expert_sentence(BiasKind bias) const {
    for (const auto& [k, v] : expert_)
        if (k == bias) return v;
    throw AttackError("no expert sentence for '" + std::string(bias_name(bias)) +
                      "' (storytelling and denominator_neglect have none)");
}

const std::string& TemplateSet::generation_template(BiasKind bias) const {
    for (const auto& [k, v] : generated_)
        if (k == bias) return v;
    throw AttackError("no generation prompt for '" + std::string(bias_name(bias)) + "'");
}

const std::string& TemplateSet::paraphrase_template() const {
    return paraphrase_;
}

namespace {

Product& find_target(Catalog& catalog, std::string_view target_id) {
    for (Product& p : catalog.products)
        if (p.id == target_id) return p;
    throw AttackError("no product with id '" + std::string(target_id) + "'");
}

std::string replace_all(std::string text, std::string_view placeholder, std::string_view value) {
    std::size_t pos = 0;
    while ((pos = text.find(placeholder, pos)) != std::string::npos) {
        text.replace(pos, placeholder.size(), value);
        pos += value.size();
    }
    return text;
}

}  // namespace

AttackedCatalog apply_expert(const Catalog& catalog, BiasKind bias, std::string_view target_id,
                             const TemplateSet& templates) {
    if (!expert_expressible(bias))
        throw AttackError("'" + std::string(bias_name(bias)) +
                          "' cannot be expressed as a fixed sentence");
    AttackedCatalog out;
    out.catalog = catalog;
    Product& target = find_target(out.catalog, target_id);
    target.description += ' ';
    target.description += templates.expert_sentence(bias);
    AttackSpec spec;
    spec.bias = bias;
    spec.mode = AttackMode::expert;
    spec.target_id = std::string(target_id);
    out.provenance = spec;
    return out;
}

std::string build_generation_prompt(BiasKind bias, std::string_view description,
                                    std::optional<Money> final_price,
                                    const TemplateSet& templates) {
    if (!generation_applicable(bias))
        throw AttackError("'" + std::string(bias_name(bias)) + "' has no generation prompt");
    std::string prompt = templates.generation_template(bias);
    const bool wants_price = prompt.find("{final_price}") != std::string::npos;
    if (wants_price && !final_price)
        throw AttackError("generation prompt for '" + std::string(bias_name(bias)) +
                          "' needs the final price");
    prompt = replace_all(std::move(prompt), "{description}", description);
    if (wants_price) prompt = replace_all(std::move(prompt), "{final_price}",
                                          final_price->to_display_string());
    return prompt;
}

namespace {

struct AmountMatch {
    std::size_t pos = std::string::npos;
    Money value;
};

Money parse_number_as_money(std::string digits) {
    digits.erase(std::remove(digits.begin(), digits.end(), ','), digits.end());
    return Money::parse(digits);
}

// Earliest per-day price mention: "$0.32 a day", "32 cents a day",
// "1 dollar per day". Text must already be lowercased.
std::optional<AmountMatch> find_per_day(const std::string& text) {
    static const std::regex dollar_sign(
        R"(\$\s*([0-9]+(?:\.[0-9]{1,2})?)\s*(?:a|per|/)\s*day)");
    static const std::regex dollars_word(
        R"(([0-9]+(?:\.[0-9]{1,2})?)\s*dollars?\s*(?:a|per)\s*day)");
    static const std::regex cents_word(
        R"(([0-9]+(?:\.[0-9]{1,2})?)\s*cents?\s*(?:a|per)\s*day)");

    std::optional<AmountMatch> best;
    auto consider = [&](const std::regex& re, bool cents) {
        std::smatch m;
        if (!std::regex_search(text, m, re)) return;
        AmountMatch found;
        found.pos = static_cast<std::size_t>(m.position(0));
        if (cents) {
            const double v = std::stod(m[1].str());
            found.value = Money::from_cents(static_cast<std::int64_t>(std::llround(v)));
        } else {
            found.value = parse_number_as_money(m[1].str());
        }
        if (!best || found.pos < best->pos) best = found;
    };
    consider(dollar_sign, false);
    consider(dollars_word, false);
    consider(cents_word, true);
    return best;
}

struct DiscountExtraction {
    std::optional<double> pct;
    std::optional<Money> stated_now;   // a current price the text claims
    bool cue_found = false;
};

DiscountExtraction extract_discount(const std::string& text) {
    DiscountExtraction out;

    // "Was $39, now only $29" and friends. Anchored to actual prices, so it
    // outranks the looser percentage cues.
    static const std::regex was_now(
        R"(was\s*\$?\s*([0-9][0-9,]*(?:\.[0-9]{1,2})?)[^0-9$%]{0,40}?now\s*(?:only\s*)?(?:just\s*)?\$?\s*([0-9][0-9,]*(?:\.[0-9]{1,2})?))");
    std::smatch m;
    if (std::regex_search(text, m, was_now)) {
        const Money before = parse_number_as_money(m[1].str());
        const Money now = parse_number_as_money(m[2].str());
        out.cue_found = true;
        out.stated_now = now;
        if (before.cents() > now.cents())
            out.pct = 100.0 * static_cast<double>(before.cents() - now.cents()) /
                      static_cast<double>(before.cents());
        return out;
    }

    static const std::regex pct_discount(
        R"(([0-9]+(?:\.[0-9]+)?)\s*%\s*(?:discount|off|savings?|lower|less|reduction))");
    static const std::regex discount_of(
        R"((?:discount|savings?|reduction)\s*of\s*([0-9]+(?:\.[0-9]+)?)\s*%)");
    if (std::regex_search(text, m, pct_discount) || std::regex_search(text, m, discount_of)) {
        out.cue_found = true;
        out.pct = std::stod(m[1].str());
        return out;
    }

    // "originally 55% higher": the old price was (100+N)% of today's, so the
    // effective discount off the old price is N/(100+N).
    static const std::regex pct_higher(R"(([0-9]+(?:\.[0-9]+)?)\s*%\s*higher)");
    if (std::regex_search(text, m, pct_higher)) {
        const double n = std::stod(m[1].str());
        out.cue_found = true;
        out.pct = 100.0 * n / (100.0 + n);
        return out;
    }

    static const std::regex dollars_off(R"(\$\s*([0-9][0-9,]*(?:\.[0-9]{1,2})?)\s*off)");
    if (std::regex_search(text, m, dollars_off)) {
        out.cue_found = true;
        out.stated_now = std::nullopt;
        // percentage resolvable only against the real price; caller fills it in
        out.pct = -static_cast<double>(parse_number_as_money(m[1].str()).cents());
        return out;
    }
    return out;
}

}  // namespace

ValidationReport validate_generated(const Product& original, std::string_view attacked_text,
                                    BiasKind bias, const ValidationConfig& config) {
    ValidationReport report;
    auto check = [&](std::string name, bool passed, std::string detail) {
        report.checks.push_back({std::move(name), passed, std::move(detail)});
        if (!passed) report.ok = false;
    };

    const std::string_view trimmed = trim(attacked_text);
    check("non_empty", !trimmed.empty(), trimmed.empty() ? "rewrite is empty" : "");
    if (trimmed.empty()) return report;

    const std::size_t original_words = word_count(original.description);
    const std::size_t rewritten_words = word_count(attacked_text);
    const double cap = config.word_multiplier * static_cast<double>(original_words);
    check("word_cap", static_cast<double>(rewritten_words) < cap,
          std::to_string(rewritten_words) + " words vs cap " + std::to_string(cap));

    const std::string lower = to_lower_ascii(attacked_text);

    if (bias == BiasKind::denominator_neglect) {
        const Money expected = original.price.per_day(config.per_day_days);
        const auto found = find_per_day(lower);
        if (!found) {
            check("per_day_present", false, "no per-day amount found");
        } else {
            report.extracted_per_day = found->value;
            const std::int64_t diff = std::llabs(found->value.cents() - expected.cents());
            check("per_day_present", true, "");
            check("per_day_amount", diff <= config.per_day_tolerance_cents,
                  "found " + found->value.to_display_string() + ", expected " +
                      expected.to_display_string());
        }
    }

    if (bias == BiasKind::discount_framing) {
        DiscountExtraction ex = extract_discount(lower);
        if (!ex.cue_found) {
            check("discount_cue", false, "no discount framing found");
        } else {
            check("discount_cue", true, "");
            // negative pct encodes a raw "$N off" amount, resolved here
            if (ex.pct && *ex.pct < 0.0) {
                const double off_cents = -*ex.pct;
                ex.pct = 100.0 * off_cents /
                         (static_cast<double>(original.price.cents()) + off_cents);
            }
            if (ex.stated_now) {
                check("stated_price", ex.stated_now->cents() == original.price.cents(),
                      "text claims a current price of " + ex.stated_now->to_display_string() +
                          ", product costs " + original.price.to_display_string());
            }
            if (ex.pct && *ex.pct > 0.0) {
                report.extracted_discount_pct = ex.pct;
                check("discount_extractable", true, "");
            } else {
                check("discount_extractable", false, "was/now pair is not a price cut");
            }
        }
    }
    return report;
}

GeneratedApplication apply_generated(const Catalog& catalog, BiasKind bias,
                                     std::string_view target_id, TextGenerator& attacker,
                                     std::uint64_t seed, bool paraphrase_others, int variant_index,
                                     const TemplateSet& templates, const ValidationConfig& config) {
    if (!generation_applicable(bias))
        throw AttackError("'" + std::string(bias_name(bias)) + "' cannot be generated");

    GeneratedApplication out;
    out.catalog.catalog = catalog;
    Product& target = find_target(out.catalog.catalog, target_id);

    const std::string prompt = build_generation_prompt(bias, target.description,
                                                       target.price, templates);
    const std::string rewritten{trim(attacker.rewrite(prompt, seed))};
    if (rewritten.empty()) throw AttackError("attacker returned empty output");

    out.target_report = validate_generated(target, rewritten, bias, config);
    target.description = rewritten;

    if (paraphrase_others) {
        for (Product& p : out.catalog.catalog.products) {
            if (p.id == target_id) continue;
            p.description = paraphrase_description(p.description, attacker,
                                                   hash_combine(seed, p.id), 3, templates, config);
        }
    }

    AttackSpec spec;
    spec.bias = bias;
    spec.mode = AttackMode::generated;
    spec.target_id = std::string(target_id);
    spec.variant_index = variant_index;
    spec.seed = seed;
    out.catalog.provenance = spec;
    out.catalog.attacker_id = attacker.id();
    out.catalog.paraphrased_others = paraphrase_others;
    return out;
}

std::string paraphrase_description(std::string_view description, TextGenerator& attacker,
                                   std::uint64_t seed, int max_attempts,
                                   const TemplateSet& templates, const ValidationConfig& config) {
    if (trim(description).empty()) throw AttackError("cannot paraphrase an empty description");
    const std::string prompt =
        replace_all(templates.paraphrase_template(), "{description}", description);
    const double cap = config.word_multiplier * static_cast<double>(word_count(description));
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        const std::string text{trim(attacker.rewrite(prompt, seed + static_cast<std::uint64_t>(attempt)))};
        if (text.empty()) continue;
        if (static_cast<double>(word_count(text)) < cap) return text;
    }
    throw AttackError("paraphrase exceeded the word cap in every attempt");
}

namespace {

AttackedCatalog wrap(const Catalog& catalog) {
    AttackedCatalog out;
    out.catalog = catalog;
    return out;
}

}  // namespace

AttackedCatalog counterfactual_half_price(const AttackedCatalog& base, std::string_view target_id) {
    AttackedCatalog out = base;
    Product& target = find_target(out.catalog, target_id);
    target.price = target.price.half();
    out.half_price = true;
    return out;
}

AttackedCatalog counterfactual_half_price(const Catalog& catalog, std::string_view target_id) {
    return counterfactual_half_price(wrap(catalog), target_id);
}

AttackedCatalog counterfactual_rating_delta(const AttackedCatalog& base, std::string_view target_id,
                                            double delta) {
    if (!(delta > 0.0 && delta <= 5.0))
        throw AttackError("rating delta must be in (0, 5]");
    AttackedCatalog out = base;
    Product& target = find_target(out.catalog, target_id);
    target.rating = std::round(std::max(0.0, target.rating - delta) * 10.0) / 10.0;
    out.applied_rating_delta = delta;
    return out;
}

AttackedCatalog counterfactual_rating_delta(const Catalog& catalog, std::string_view target_id,
                                            double delta) {
    return counterfactual_rating_delta(wrap(catalog), target_id, delta);
}

}  // namespace biasrec
