#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biasrec/catalog.hpp"

namespace biasrec {

struct Ranking {
    std::vector<std::string> ordered_ids;      // rank 1 first
    std::vector<std::size_t> match_offsets;    // offset of each first mention, normalized text
    std::vector<std::string> absent_ids;       // catalog order
};

// Rank by first occurrence of each product name in the normalized response
// (case-folded, whitespace collapsed, '&' spacing ignored). The catalog's
// no-substring-collision invariant makes the attribution unambiguous. A text
// mentioning no product yields an empty ranking, not an error.
Ranking parse_ranking(std::string_view response, const Catalog& catalog);

// 1-indexed rank, or nullopt when the product went unmentioned. Asking about
// an id outside the ranking's catalog is an error.
std::optional<int> rank_of(const Ranking& ranking, std::string_view product_id);

}  // namespace biasrec
