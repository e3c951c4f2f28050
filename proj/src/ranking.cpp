#include "biasrec/ranking.hpp"

#include <algorithm>

#include "biasrec/errors.hpp"
#include "biasrec/text.hpp"

namespace biasrec {

Ranking parse_ranking(std::string_view response, const Catalog& catalog) {
    const std::string text = normalize_for_match(response);
    std::vector<std::pair<std::size_t, const Product*>> hits;
    Ranking ranking;
    for (const Product& p : catalog.products) {
        const std::string needle = normalize_for_match(p.name);
        const std::size_t pos = text.find(needle);
        if (pos == std::string::npos)
            ranking.absent_ids.push_back(p.id);
        else
            hits.emplace_back(pos, &p);
    }
    std::sort(hits.begin(), hits.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [pos, p] : hits) {
        ranking.ordered_ids.push_back(p->id);
        ranking.match_offsets.push_back(pos);
    }
    return ranking;
}

std::optional<int> rank_of(const Ranking& ranking, std::string_view product_id) {
    for (std::size_t i = 0; i < ranking.ordered_ids.size(); ++i)
        if (ranking.ordered_ids[i] == product_id) return static_cast<int>(i) + 1;
    for (const std::string& id : ranking.absent_ids)
        if (id == product_id) return std::nullopt;
    throw ParseError("rank_of: unknown product id '" + std::string(product_id) + "'");
}

}  // namespace biasrec
