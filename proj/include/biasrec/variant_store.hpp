#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "biasrec/attack.hpp"

namespace biasrec {

// On-disk pool of generated attack texts, shared between the generation step
// and later experiment runs. Layout under the root:
//
//   {dataset}/{bias}/{target_id}/{NNN}.txt   rewritten target descriptions
//   {dataset}/{bias}/validation.jsonl        one line per saved variant
//   {dataset}/_paraphrase/{product_id}/{NNN}.txt
//
// Variant indices must form a gap-free prefix 0..count-1; saves are
// idempotent for identical bytes and refuse to replace differing content.
class VariantStore {
public:
    explicit VariantStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }

    bool has_variant(std::string_view dataset, BiasKind bias, std::string_view target_id,
                     int index) const;
    std::string load_variant(std::string_view dataset, BiasKind bias, std::string_view target_id,
                             int index) const;
    void save_variant(std::string_view dataset, BiasKind bias, std::string_view target_id,
                      int index, std::string_view text);
    // Number of stored variants; throws when the files are not a gap-free prefix.
    int variant_count(std::string_view dataset, BiasKind bias, std::string_view target_id) const;

    bool has_paraphrase(std::string_view dataset, std::string_view product_id, int index) const;
    std::string load_paraphrase(std::string_view dataset, std::string_view product_id,
                                int index) const;
    void save_paraphrase(std::string_view dataset, std::string_view product_id, int index,
                         std::string_view text);

    void append_validation_line(std::string_view dataset, BiasKind bias,
                                std::string_view json_line);
    std::filesystem::path validation_path(std::string_view dataset, BiasKind bias) const;

    std::filesystem::path variant_path(std::string_view dataset, BiasKind bias,
                                       std::string_view target_id, int index) const;
    std::filesystem::path paraphrase_path(std::string_view dataset, std::string_view product_id,
                                          int index) const;

private:
    std::filesystem::path root_;
};

}  // namespace biasrec
