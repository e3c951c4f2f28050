#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "biasrec/attack.hpp"
#include "biasrec/catalog.hpp"
#include "biasrec/gateway.hpp"
#include "biasrec/metrics.hpp"
#include "biasrec/run_record.hpp"
#include "biasrec/variant_store.hpp"

namespace biasrec {

struct ExperimentParams {
    int repetitions = 100;         // R, runs per condition
    double alpha = 0.05;
    int variants_per_product = 50; // generated mode, cycled run_index mod variants
    std::uint64_t master_seed = 0;
    int workers = 1;               // concurrent backend calls within a condition
};

enum class ConditionMode { control, expert, generated };
std::string_view condition_mode_name(ConditionMode mode);
ConditionMode condition_mode_from_name(std::string_view name);

// One cell of the execution matrix. Pure controls leave bias/target empty;
// counterfactual manipulations (half_price, rating_delta) compose with any
// mode and always need a target.
struct Condition {
    std::string dataset;
    std::string endpoint_name;
    std::string model_id;
    bool thinking = false;
    bool defense = false;
    ConditionMode mode = ConditionMode::control;
    std::optional<BiasKind> bias;
    std::string target_id;
    bool half_price = false;
    std::optional<double> rating_delta;

    // Canonical fingerprint; doubles as the record grouping key and the basis
    // of per-run seeds, so its format is load-bearing for replayability.
    std::string key() const;

    bool is_control() const {
        return mode == ConditionMode::control && !half_price && !rating_delta;
    }
};

std::uint64_t condition_run_seed(std::uint64_t master_seed, std::string_view condition_key,
                                 int run_index);

struct SweepSettings {
    bool half_price = false;
    std::vector<double> rating_deltas;
};

struct ExperimentPlan {
    std::vector<std::string> datasets;
    std::vector<std::string> endpoint_names;
    std::vector<std::pair<BiasKind, ConditionMode>> attacks;  // mode never control
    std::vector<std::string> targets;  // empty = every product, one at a time
    std::vector<bool> defenses = {false};
    bool paraphrase_others = true;     // generated mode: rewrite non-targets too
    ExperimentParams params;
    SweepSettings sweep;
};

struct RunnerContext {
    std::map<std::string, Catalog> catalogs;         // by dataset name
    std::map<std::string, ModelEndpoint> endpoints;  // by endpoint name
    Gateway* gateway = nullptr;
    VariantStore* variants = nullptr;                // required for generated mode
    std::function<void(const std::string&)> progress;
};

// Append-only experiment store: manifest.json + runs.jsonl under one
// directory. Records are validated on open (seed re-derivation, contiguous
// per-condition indices, ranking reparse against the manifest's catalogs).
class Archive {
public:
    static Archive create(const std::filesystem::path& dir, nlohmann::ordered_json manifest);
    static Archive open(const std::filesystem::path& dir, bool truncate_torn_tail = false,
                        bool allow_seed_mismatch = false);

    const nlohmann::ordered_json& manifest() const { return manifest_; }
    const std::filesystem::path& dir() const { return dir_; }

    void append(const RunRecord& record);
    const std::vector<RunRecord>& records() const { return records_; }
    std::vector<RunRecord> records_for(std::string_view condition_key) const;
    int count_for(std::string_view condition_key) const;

    bool sealed() const;
    void seal();  // marks the manifest complete; reports refuse unsealed archives

private:
    Archive() = default;
    void write_manifest() const;

    std::filesystem::path dir_;
    nlohmann::ordered_json manifest_;
    std::vector<RunRecord> records_;
    std::ofstream out_;
};

void validate_plan(const ExperimentPlan& plan, const RunnerContext& ctx);

// Expansion order: dataset, endpoint, defense; control first, then per
// (bias, mode) each target. This order is the archive's record order.
std::vector<Condition> conditions_for_plan(const ExperimentPlan& plan,
                                           const std::map<std::string, Catalog>& catalogs);

// R runs of one condition appended to the archive, starting at the condition's
// current count (0 on fresh archives). Workers interleave backend calls; the
// writer persists records strictly in run order, so a crash leaves a
// contiguous, resumable prefix.
void run_condition(RunnerContext& ctx, Archive& archive, const Condition& condition,
                   const ExperimentParams& params, bool paraphrase_others = true);

struct ConditionResult {
    Condition condition;
    std::vector<ComparisonRow> rows;  // every product, catalog order
    AggregateCell rate_cell;          // over this condition's rows
    AggregateCell pos_cell;
    Outcome outcome = Outcome::none;
    Top1Result top1;
};

struct MatrixResult {
    std::vector<ConditionResult> conditions;  // attacked/counterfactual only
    // (condition key, error) for conditions that failed; such archives stay
    // unsealed and resumable, completed conditions are retained.
    std::vector<std::pair<std::string, std::string>> failures;
};

MatrixResult run_matrix(RunnerContext& ctx, const ExperimentPlan& plan,
                        const std::filesystem::path& archive_dir);

// Target-product rows pooled across the per-target conditions of one study arm.
struct StudyArm {
    std::vector<ComparisonRow> target_rows;
    AggregateCell rate_cell;
    AggregateCell pos_cell;
    Outcome outcome = Outcome::none;
};

// Halving the price covertly vs advertising a discount at full price, both
// against the same control.
struct HalfPriceStudy {
    StudyArm half_price;
    StudyArm discount_attack;
};

HalfPriceStudy run_half_price_study(RunnerContext& ctx, const std::string& dataset,
                                    const std::string& endpoint_name,
                                    const ExperimentParams& params,
                                    const std::filesystem::path& archive_dir,
                                    BiasKind bias = BiasKind::discount_framing,
                                    bool defense = false);

struct SweepPoint {
    double delta = 0.0;
    double mean_rate_diff = 0.0;  // mean over targets of (attacked - control) rate
    AggregateCell rate_cell;
};

struct RatingSweep {
    std::vector<SweepPoint> points;          // ascending delta
    std::optional<double> zero_crossing;     // linear interpolation, absent if no sign change
};

// Each delta pairs a rating reduction on the target with the bias attack; the
// crossing reports how much real rating the attack's lift is worth.
RatingSweep run_rating_sweep(RunnerContext& ctx, const std::string& dataset,
                             const std::string& endpoint_name, const ExperimentParams& params,
                             const std::vector<double>& deltas,
                             const std::filesystem::path& archive_dir,
                             BiasKind bias = BiasKind::social_proof, bool defense = false);

struct ResumeOutcome {
    int runs_executed = 0;  // 0 when the archive was already complete
    MatrixResult result;
};

// Completes missing runs with re-derived seeds; persisted runs are never
// re-executed. ctx supplies the gateway and variant store; catalogs and
// endpoints come from the manifest.
ResumeOutcome resume(RunnerContext& ctx, const std::filesystem::path& archive_dir,
                     bool override_seed_mismatch = false, bool truncate_torn_tail = false,
                     int workers = 1);

// Comparison of one finished archive, independent of how it was produced:
// every non-control condition against its (dataset, endpoint, defense)
// control.
MatrixResult analyze_archive(const Archive& archive);

}  // namespace biasrec
