#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace biasrec {

// One recommender call. Lines of the archive's runs.jsonl, one record each.
// condition is the canonical fingerprint produced by Condition::key(); the
// variant index is derived from run_index but stored for auditability.
struct RunRecord {
    std::string run_id;                     // "<condition>#<run_index>"
    std::string condition;
    int run_index = 0;
    std::uint64_t run_seed = 0;
    int variant_index = -1;                 // -1 outside generated mode
    std::vector<std::string> permutation;   // product ids in prompt order
    std::string response_text;              // verbatim backend output
    std::vector<std::string> ranking_ids;   // parse_ranking result, rank order
    std::string endpoint;                   // endpoint name (transport handle)
    int attempts = 1;
    std::int64_t latency_ms = 0;
    std::int64_t started_unix_ms = 0;       // zero on the mock backend
    std::int64_t finished_unix_ms = 0;
};

// Single-line JSON with a fixed field order; archives must be byte-stable.
std::string run_record_to_json(const RunRecord& record);
RunRecord run_record_from_json(std::string_view line);

}  // namespace biasrec
