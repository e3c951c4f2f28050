#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biasrec/catalog.hpp"
#include "biasrec/money.hpp"

namespace biasrec {

enum class BiasKind {
    social_proof,
    scarcity,
    exclusivity,
    identity_signaling,
    storytelling,
    denominator_neglect,
    authority,
    decoy,
    contrast,
    discount_framing,
    sts_baseline,
};

const std::vector<BiasKind>& all_bias_kinds();
std::string_view bias_name(BiasKind bias);
BiasKind bias_from_name(std::string_view name);  // throws AttackError

// Storytelling and denominator neglect have no fixed-sentence form; the STS
// suffix exists only in fixed-sentence form.
bool expert_expressible(BiasKind bias);
bool generation_applicable(BiasKind bias);

enum class AttackMode { expert, generated, counterfactual };
std::string_view attack_mode_name(AttackMode mode);

struct AttackSpec {
    BiasKind bias = BiasKind::social_proof;
    AttackMode mode = AttackMode::expert;
    std::string target_id;
    int variant_index = 0;                    // generated mode
    std::uint64_t seed = 0;
    std::optional<double> rating_delta;       // counterfactual rating reduction
};

struct AttackedCatalog {
    Catalog catalog;
    std::optional<AttackSpec> provenance;
    std::string attacker_id;                  // generated mode: who rewrote
    bool paraphrased_others = false;
    bool half_price = false;
    double applied_rating_delta = 0.0;
};

// The shipped expert sentences and generation prompt templates, keyed by
// bias kind. builtin() loads the embedded copy.
class TemplateSet {
  public:
    static TemplateSet builtin();
    static TemplateSet from_json(std::string_view json_text);

    bool has_expert(BiasKind bias) const;
    const std::string& expert_sentence(BiasKind bias) const;       // throws if inexpressible
    const std::string& generation_template(BiasKind bias) const;   // throws for sts_baseline
    const std::string& paraphrase_template() const;

  private:
    TemplateSet() = default;
    std::vector<std::pair<BiasKind, std::string>> expert_;
    std::vector<std::pair<BiasKind, std::string>> generated_;
    std::string paraphrase_;
};

// Fixed-sentence attack: the template sentence joins the description after a
// single space. Everything else in the catalog is untouched.
AttackedCatalog apply_expert(const Catalog& catalog, BiasKind bias, std::string_view target_id,
                             const TemplateSet& templates = TemplateSet::builtin());

// Rewrite instruction for one description. final_price is required exactly
// for the two price-referencing biases and substituted in display form.
std::string build_generation_prompt(BiasKind bias, std::string_view description,
                                    std::optional<Money> final_price,
                                    const TemplateSet& templates = TemplateSet::builtin());

// Anything that can turn a rewrite prompt into text: an LLM endpoint adapter
// in production, scripted fakes in tests. The seed lets deterministic
// implementations vary across variants; live backends may ignore it.
class TextGenerator {
  public:
    virtual ~TextGenerator() = default;
    virtual std::string rewrite(const std::string& prompt, std::uint64_t seed) = 0;
    virtual std::string id() const = 0;
};

struct ValidationCheck {
    std::string name;
    bool passed = true;
    std::string detail;
};

struct ValidationReport {
    bool ok = true;                                 // all checks passed
    std::vector<ValidationCheck> checks;
    std::optional<double> extracted_discount_pct;
    std::optional<Money> extracted_per_day;
};

struct ValidationConfig {
    double word_multiplier = 2.0;      // rewrite must stay under this times the original words
    std::int64_t per_day_days = 90;
    std::int64_t per_day_tolerance_cents = 1;
};

// Bias-specific consistency checks on a rewritten description. Always: text
// non-empty and under the word cap. denominator_neglect: a per-day amount is
// present and equals price/90 rounded to cents. discount_framing: a discount
// cue is present, extractable as a percentage, and any stated current price
// equals the real one. Failures are report entries, never exceptions.
ValidationReport validate_generated(const Product& original, std::string_view attacked_text,
                                    BiasKind bias, const ValidationConfig& config = {});

struct GeneratedApplication {
    AttackedCatalog catalog;
    ValidationReport target_report;
};

// Full rewrite attack: target description replaced by the attacker's output
// for the bias prompt; with paraphrase_others, every other description is
// replaced by a paraphrase so the target's fresh wording does not stand out.
// The returned report carries the validation verdict; the catalog is returned
// either way so the caller can decide to retry.
GeneratedApplication apply_generated(const Catalog& catalog, BiasKind bias,
                                     std::string_view target_id, TextGenerator& attacker,
                                     std::uint64_t seed, bool paraphrase_others,
                                     int variant_index = 0,
                                     const TemplateSet& templates = TemplateSet::builtin(),
                                     const ValidationConfig& config = {});

// Paraphrase with the no-bias rewrite prompt. Retries with stepped seeds
// until the word cap holds, then errors.
std::string paraphrase_description(std::string_view description, TextGenerator& attacker,
                                   std::uint64_t seed, int max_attempts = 3,
                                   const TemplateSet& templates = TemplateSet::builtin(),
                                   const ValidationConfig& config = {});

// Counterfactual manipulations. Both compose: they accept an already-attacked
// catalog and preserve its provenance.
AttackedCatalog counterfactual_half_price(const AttackedCatalog& base, std::string_view target_id);
AttackedCatalog counterfactual_half_price(const Catalog& catalog, std::string_view target_id);

// delta is a positive reduction; the result is clamped at 0 and rounded to
// one decimal like every displayed rating.
AttackedCatalog counterfactual_rating_delta(const AttackedCatalog& base, std::string_view target_id,
                                            double delta);
AttackedCatalog counterfactual_rating_delta(const Catalog& catalog, std::string_view target_id,
                                            double delta);

}  // namespace biasrec
