#include "biasrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "biasrec/errors.hpp"
#include "biasrec/stats.hpp"

namespace biasrec {

ProductStats product_stats(const std::vector<RunRecord>& records, std::string_view product_id,
                           int expected_runs) {
    if (static_cast<int>(records.size()) != expected_runs)
        throw Error("product_stats: got " + std::to_string(records.size()) + " records, expected " +
                    std::to_string(expected_runs));
    if (expected_runs <= 0) throw Error("product_stats: run count must be positive");

    ProductStats s;
    s.product_id = std::string(product_id);
    s.runs = expected_runs;
    for (const RunRecord& r : records) {
        for (std::size_t i = 0; i < r.ranking_ids.size(); ++i) {
            if (r.ranking_ids[i] == product_id) {
                const int rank = static_cast<int>(i) + 1;
                ++s.rec_count;
                s.positions.push_back(rank - 1);
                s.mrr += 1.0 / static_cast<double>(rank);
                break;
            }
        }
    }
    s.rate_pct = 100.0 * static_cast<double>(s.rec_count) / static_cast<double>(s.runs);
    s.mrr /= static_cast<double>(s.runs);
    if (!s.positions.empty()) {
        double sum = 0.0;
        for (int p : s.positions) sum += p;
        const double mean = sum / static_cast<double>(s.positions.size());
        double sq = 0.0;
        for (int p : s.positions) sq += (p - mean) * (p - mean);
        s.pos_mean = mean;
        s.pos_sd = std::sqrt(sq / static_cast<double>(s.positions.size()));
    }
    return s;
}

ComparisonRow compare(const ProductStats& pre, const ProductStats& post, double alpha) {
    if (pre.product_id != post.product_id)
        throw Error("compare: product mismatch (" + pre.product_id + " vs " + post.product_id + ")");
    if (pre.runs != post.runs)
        throw Error("compare: run count mismatch (" + std::to_string(pre.runs) + " vs " +
                    std::to_string(post.runs) + ")");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("compare: alpha must be in (0, 1)");

    ComparisonRow row;
    row.product_id = pre.product_id;
    row.pre = pre;
    row.post = post;
    row.alpha = alpha;
    row.delta_rate = post.rate_pct - pre.rate_pct;
    if (pre.rate_pct != 0.0) row.delta_rel_rate = 100.0 * row.delta_rate / pre.rate_pct;
    if (pre.pos_mean && post.pos_mean) {
        row.delta_pos = *post.pos_mean - *pre.pos_mean;
        if (*pre.pos_mean != 0.0)
            row.delta_rel_pos = 100.0 * (*pre.pos_mean - *post.pos_mean) / *pre.pos_mean;
    }

    row.p_rate = fisher_exact(pre.rec_count, pre.runs - pre.rec_count, post.rec_count,
                              post.runs - post.rec_count);
    row.sig_rate = row.p_rate < alpha;

    if (!pre.positions.empty() && !post.positions.empty()) {
        std::vector<double> x(pre.positions.begin(), pre.positions.end());
        std::vector<double> y(post.positions.begin(), post.positions.end());
        row.p_pos = mann_whitney(x, y);
        row.sig_pos = *row.p_pos < alpha;
    }
    return row;
}

std::string_view metric_name(MetricKind metric) {
    return metric == MetricKind::rate ? "rate" : "pos";
}

AggregateCell aggregate(const std::vector<ComparisonRow>& rows, MetricKind metric) {
    AggregateCell cell;
    cell.metric = metric;
    cell.total_rows = static_cast<int>(rows.size());
    double sum = 0.0;
    for (const ComparisonRow& row : rows) {
        if (metric == MetricKind::rate) {
            if (!row.sig_rate) continue;
            sum += row.delta_rate;
        } else {
            if (!row.sig_pos) continue;
            // sig_pos implies both sides had positions, so delta_pos is set.
            sum += *row.delta_pos;
        }
        ++cell.num_significant;
    }
    if (cell.num_significant > 0) cell.mean_delta = sum / cell.num_significant;
    return cell;
}

std::string_view outcome_name(Outcome outcome) {
    switch (outcome) {
        case Outcome::positive: return "positive";
        case Outcome::negative: return "negative";
        case Outcome::ambiguous: return "ambiguous";
        case Outcome::none: return "none";
    }
    return "none";
}

namespace {

enum class Trend { improving, worsening, unchanged };

Trend trend_of(const AggregateCell& cell, bool negative_is_better) {
    if (cell.num_significant == 0 || !cell.mean_delta) return Trend::unchanged;
    const double d = negative_is_better ? -*cell.mean_delta : *cell.mean_delta;
    if (d > 0.0) return Trend::improving;
    if (d < 0.0) return Trend::worsening;
    return Trend::unchanged;
}

}  // namespace

Outcome classify_outcome(const AggregateCell& rate_cell, const AggregateCell& pos_cell) {
    const Trend rate = trend_of(rate_cell, false);
    const Trend pos = trend_of(pos_cell, true);
    const bool any_improving = rate == Trend::improving || pos == Trend::improving;
    const bool any_worsening = rate == Trend::worsening || pos == Trend::worsening;
    if (any_improving && any_worsening) return Outcome::ambiguous;
    if (any_improving) return Outcome::positive;
    if (any_worsening) return Outcome::negative;
    return Outcome::none;
}

namespace {

struct Top1Counts {
    std::map<std::string, int> first;  // times at rank 1
    std::map<std::string, int> seen;   // times recommended at all
};

Top1Counts count_top1(const std::vector<RunRecord>& records) {
    Top1Counts c;
    for (const RunRecord& r : records) {
        if (!r.ranking_ids.empty()) ++c.first[r.ranking_ids.front()];
        for (const std::string& id : r.ranking_ids) ++c.seen[id];
    }
    return c;
}

std::optional<std::string> modal_product(const Top1Counts& c) {
    std::optional<std::string> best;
    int best_first = 0;
    int best_seen = 0;
    for (const auto& [id, n] : c.first) {
        const int seen = c.seen.count(id) ? c.seen.at(id) : 0;
        if (!best || n > best_first || (n == best_first && seen > best_seen) ||
            (n == best_first && seen == best_seen && id < *best)) {
            best = id;
            best_first = n;
            best_seen = seen;
        }
    }
    return best;
}

}  // namespace

Top1Result top1_flips(const std::vector<RunRecord>& pre_records,
                      const std::vector<RunRecord>& post_records,
                      const std::vector<std::string>& catalog_ids) {
    Top1Result out;
    out.modal_pre = modal_product(count_top1(pre_records));
    out.modal_post = modal_product(count_top1(post_records));
    for (const std::string& id : catalog_ids) {
        const bool flipped = out.modal_post && *out.modal_post == id &&
                             (!out.modal_pre || *out.modal_pre != id);
        out.flags.emplace_back(id, flipped);
        if (flipped) ++out.flip_count;
    }
    return out;
}

DiscountDistribution discount_distribution(const std::vector<std::optional<double>>& percentages) {
    DiscountDistribution d;
    d.considered = static_cast<int>(percentages.size());
    std::vector<double> values;
    for (const auto& p : percentages) {
        if (p)
            values.push_back(*p);
        else
            ++d.missing;
    }
    d.with_value = static_cast<int>(values.size());
    if (values.empty()) throw Error("discount_distribution: no extractable percentages");

    double sum = 0.0;
    for (double v : values) sum += v;
    d.mean = sum / values.size();
    double sq = 0.0;
    for (double v : values) sq += (v - d.mean) * (v - d.mean);
    d.sd = std::sqrt(sq / values.size());

    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    d.median = n % 2 == 1 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
    return d;
}

}  // namespace biasrec
