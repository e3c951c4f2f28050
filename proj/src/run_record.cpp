#include "biasrec/run_record.hpp"

#include <json.hpp>

#include "biasrec/errors.hpp"

namespace biasrec {

using ordered_json = nlohmann::ordered_json;

std::string run_record_to_json(const RunRecord& r) {
    ordered_json doc;
    doc["run_id"] = r.run_id;
    doc["condition"] = r.condition;
    doc["run_index"] = r.run_index;
    doc["run_seed"] = r.run_seed;
    doc["variant_index"] = r.variant_index;
    doc["permutation"] = r.permutation;
    doc["response_text"] = r.response_text;
    doc["ranking"] = r.ranking_ids;
    doc["endpoint"] = r.endpoint;
    doc["attempts"] = r.attempts;
    doc["latency_ms"] = r.latency_ms;
    doc["started_unix_ms"] = r.started_unix_ms;
    doc["finished_unix_ms"] = r.finished_unix_ms;
    return doc.dump();
}

RunRecord run_record_from_json(std::string_view line) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(line);
    } catch (const ordered_json::parse_error& e) {
        throw ArchiveError(std::string("bad run record line: ") + e.what());
    }
    RunRecord r;
    try {
        r.run_id = doc.at("run_id").get<std::string>();
        r.condition = doc.at("condition").get<std::string>();
        r.run_index = doc.at("run_index").get<int>();
        r.run_seed = doc.at("run_seed").get<std::uint64_t>();
        r.variant_index = doc.at("variant_index").get<int>();
        r.permutation = doc.at("permutation").get<std::vector<std::string>>();
        r.response_text = doc.at("response_text").get<std::string>();
        r.ranking_ids = doc.at("ranking").get<std::vector<std::string>>();
        r.endpoint = doc.at("endpoint").get<std::string>();
        r.attempts = doc.at("attempts").get<int>();
        r.latency_ms = doc.at("latency_ms").get<std::int64_t>();
        r.started_unix_ms = doc.at("started_unix_ms").get<std::int64_t>();
        r.finished_unix_ms = doc.at("finished_unix_ms").get<std::int64_t>();
    } catch (const ordered_json::exception& e) {
        throw ArchiveError(std::string("run record missing field: ") + e.what());
    }
    return r;
}

}  // namespace biasrec
