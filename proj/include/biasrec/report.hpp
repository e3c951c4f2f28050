#pragma once

#include <optional>
#include <string>
#include <vector>

#include "biasrec/metrics.hpp"
#include "biasrec/runner.hpp"
#include "biasrec/variant_store.hpp"

namespace biasrec {

// One result-grid cell: the attacked product's rows pooled over every target
// of one (dataset, model, defense, bias, mode) group, significance-gated.
struct GridRow {
    std::string dataset;
    std::string model_id;
    bool thinking = false;
    bool defense = false;
    std::optional<BiasKind> bias;  // absent for pure counterfactual cells
    ConditionMode mode = ConditionMode::control;
    bool half_price = false;
    std::optional<double> rating_delta;
    AggregateCell rate_cell;
    AggregateCell pos_cell;
    Outcome outcome = Outcome::none;
    int targets = 0;        // conditions pooled into this cell
    std::string audit_key;  // condition fingerprint with the target wildcarded
};

std::vector<GridRow> build_grid(const Archive& archive);

// CSV emitters. Pure functions of their inputs: identical bytes on identical
// archives. They refuse unsealed archives. Absent aggregate means print as
// N/A, never 0. Floats use round-trip-stable formatting.
std::string grid_csv(const Archive& archive);
std::string per_product_csv(const Archive& archive);
std::string mrr_csv(const Archive& archive);
std::string top1_csv(const Archive& archive);

// Discount-extraction summary over the generated variant corpus recorded by
// the attack generation step (validation.jsonl per dataset).
std::string discounts_csv(const Archive& archive, const VariantStore& store);

// RFC-4180 style: quotes fields containing separators, doubles inner quotes.
std::string csv_escape(std::string_view field);

// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

}  // namespace biasrec
