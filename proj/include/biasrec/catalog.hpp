#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "biasrec/money.hpp"

namespace biasrec {

struct Product {
    std::string id;           // opaque, unique within a catalog
    std::string name;
    std::string description;
    Money price;
    double rating = 0.0;
    // Label/value pairs in file order; order matters for prompt rendering.
    std::vector<std::pair<std::string, std::string>> attributes;
};

struct Catalog {
    std::string category;     // singular noun used in the request message, e.g. "coffee machine"
    std::vector<Product> products;

    const Product* find(std::string_view id) const;
    const Product& at(std::string_view id) const;  // throws CatalogError
    std::vector<std::string> ids() const;
};

// Rating rendering: at least one decimal, a second only when needed
// ("4.1", "5.0", "4.15").
std::string format_rating(double rating);

// Enforced on every load and before every save:
//  - non-empty category, at least one product
//  - ids and names unique, no empty id/name/description
//  - price strictly positive, rating within [0, 5]
//  - after matching normalization no name may occur inside another name,
//    otherwise ranked responses cannot be attributed unambiguously
void validate_catalog(const Catalog& catalog);

Catalog parse_catalog(std::string_view json_text);
Catalog load_catalog_file(const std::string& path);
std::string catalog_to_json(const Catalog& catalog);
void save_catalog_file(const Catalog& catalog, const std::string& path);

// Bundled datasets: "coffee_machines", "cameras", "books".
const std::vector<std::string>& builtin_dataset_names();
Catalog load_builtin(std::string_view dataset);

// Shrunk mean rating: (count * mean + prior_weight * prior_mean) / (count + prior_weight).
double bayesian_average(double mean_rating, std::int64_t review_count, double prior_weight,
                        double prior_mean);

struct ReviewedProduct {
    std::string id;
    std::string name;
    std::string description;
    Money price;
    std::int64_t review_count = 0;
    double mean_rating = 0.0;
    std::vector<std::pair<std::string, std::string>> attributes;
};

struct IngestionConfig {
    double prior_weight = 10.0;
    // Defaults to the unweighted mean of the ingested rows' mean ratings.
    std::optional<double> prior_mean;
    // Displayed ratings keep one decimal like the bundled datasets.
    bool round_to_tenth = true;
};

Catalog ingest_reviews(std::string category, const std::vector<ReviewedProduct>& rows,
                       const IngestionConfig& config = {});

}  // namespace biasrec
