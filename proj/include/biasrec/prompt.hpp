#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "biasrec/catalog.hpp"

namespace biasrec {

// Serialized product block layout, format v1:
//   Name: ...
//   Description: ...
//   Price: $...
//   Rating: ...
//   <Label>: <value>   (attributes, stored order)
// blocks separated by one blank line. The layout is pinned by golden tests;
// bump the version if it ever changes.
inline constexpr int kProductBlockFormatVersion = 1;

struct PromptBundle {
    std::string system_prompt;
    std::string user_prompt;
    std::vector<std::size_t> permutation;  // catalog indices in prompt order
    bool defense = false;
};

// defense=false: the stock two-sentence recommender prompt. defense=true adds
// the impartiality sentence instructing the model to weigh only product
// characteristics. The defense text extends the default verbatim.
std::string system_prompt(bool defense);

// Registered messages for the three bundled categories; anything else uses
// the "I am looking for a {category}. Can I get some recommendations?" form.
std::string user_message(std::string_view category);

std::string serialize_products(const std::vector<Product>& products,
                               const std::vector<std::size_t>& permutation);

PromptBundle build_bundle(const Catalog& catalog, const std::vector<std::size_t>& permutation,
                          bool defense);

}  // namespace biasrec
