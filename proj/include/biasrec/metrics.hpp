#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biasrec/run_record.hpp"

namespace biasrec {

// Visibility of one product across the R runs of one condition. Ranks are
// 1-indexed internally (MRR needs that); reported positions are rank - 1 to
// match the convention of the result tables, and pos_mean/pos_sd are over
// reported positions. pos_sd is the population standard deviation.
struct ProductStats {
    std::string product_id;
    int runs = 0;                        // R
    int rec_count = 0;
    double rate_pct = 0.0;               // 100 * rec_count / runs
    std::vector<int> positions;          // reported (0-indexed), one per recommended run
    std::optional<double> pos_mean;      // absent when never recommended
    std::optional<double> pos_sd;
    double mrr = 0.0;                    // sum(1/rank) / runs, absent runs add 0
};

ProductStats product_stats(const std::vector<RunRecord>& records, std::string_view product_id,
                           int expected_runs);

// Pre vs post for one product. Relative deltas are flagged undefined (absent)
// where their denominators vanish: delta_rel_rate when pre rate is 0,
// delta_rel_pos when either side has no positions or the pre mean is 0.
// delta_rel_pos is oriented so positive means improvement.
struct ComparisonRow {
    std::string product_id;
    ProductStats pre;
    ProductStats post;
    double delta_rate = 0.0;                  // percentage points
    std::optional<double> delta_pos;          // post mean - pre mean
    std::optional<double> delta_rel_rate;     // 100 * delta_rate / pre.rate_pct
    std::optional<double> delta_rel_pos;      // 100 * (pre - post) / pre
    double p_rate = 1.0;
    std::optional<double> p_pos;              // absent when a side has no positions
    bool sig_rate = false;
    bool sig_pos = false;
    double alpha = 0.05;
};

ComparisonRow compare(const ProductStats& pre, const ProductStats& post, double alpha = 0.05);

enum class MetricKind { rate, pos };
std::string_view metric_name(MetricKind metric);

// One result-table cell: mean delta over the statistically significant rows
// only. mean_delta is absent exactly when num_significant is 0; reports print
// that as N/A, never as a number.
struct AggregateCell {
    MetricKind metric = MetricKind::rate;
    std::optional<double> mean_delta;
    int num_significant = 0;
    int total_rows = 0;
};

AggregateCell aggregate(const std::vector<ComparisonRow>& rows, MetricKind metric);

enum class Outcome { positive, negative, ambiguous, none };
std::string_view outcome_name(Outcome outcome);

// Joint reading of the rate and position cells. Rate improves when its mean
// delta is positive, position improves when its mean delta is negative; a
// metric with no significant rows counts as unchanged.
//   improving + (improving|unchanged)  -> positive
//   worsening + (worsening|unchanged)  -> negative
//   improving + worsening              -> ambiguous
//   unchanged + unchanged              -> none
Outcome classify_outcome(const AggregateCell& rate_cell, const AggregateCell& pos_cell);

// Modal rank-1 product before and after; ties on the rank-1 count broken by
// higher recommendation count, then smaller id. A product flips when it is
// modal after but was not before.
struct Top1Result {
    std::optional<std::string> modal_pre;
    std::optional<std::string> modal_post;
    std::vector<std::pair<std::string, bool>> flags;  // per product id, flipped?
    int flip_count = 0;
};

Top1Result top1_flips(const std::vector<RunRecord>& pre_records,
                      const std::vector<RunRecord>& post_records,
                      const std::vector<std::string>& catalog_ids);

// Population statistics over the extracted discount percentages of a variant
// corpus; values absent from individual reports are tallied, an entirely
// empty extraction set is an error.
struct DiscountDistribution {
    int considered = 0;
    int with_value = 0;
    int missing = 0;
    double mean = 0.0;
    double sd = 0.0;
    double median = 0.0;
};

DiscountDistribution discount_distribution(const std::vector<std::optional<double>>& percentages);

}  // namespace biasrec
