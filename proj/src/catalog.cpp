#include "biasrec/catalog.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "biasrec/embedded_assets.gen.hpp"
#include "biasrec/errors.hpp"
#include "biasrec/text.hpp"

namespace biasrec {

using ordered_json = nlohmann::ordered_json;

const Product* Catalog::find(std::string_view id) const {
    for (const Product& p : products) {
        if (p.id == id) return &p;
    }
    return nullptr;
}

const Product& Catalog::at(std::string_view id) const {
    if (const Product* p = find(id)) return *p;
    throw CatalogError("no product with id '" + std::string(id) + "'");
}

std::vector<std::string> Catalog::ids() const {
    std::vector<std::string> out;
    out.reserve(products.size());
    for (const Product& p : products) out.push_back(p.id);
    return out;
}

std::string format_rating(double rating) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", rating);
    std::string s = buf;
    if (s.size() >= 2 && s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
    return s;
}

void validate_catalog(const Catalog& catalog) {
    if (catalog.category.empty()) throw CatalogError("catalog category is empty");
    if (catalog.products.empty()) throw CatalogError("catalog has no products");
    std::vector<std::string> norms;
    norms.reserve(catalog.products.size());
    for (const Product& p : catalog.products) {
        if (p.id.empty()) throw CatalogError("product with empty id");
        if (p.name.empty()) throw CatalogError("product '" + p.id + "' has an empty name");
        if (p.description.empty())
            throw CatalogError("product '" + p.name + "' has an empty description");
        if (p.price.cents() <= 0)
            throw CatalogError("product '" + p.name + "' has a non-positive price");
        if (!(p.rating >= 0.0 && p.rating <= 5.0))
            throw CatalogError("product '" + p.name + "' has rating outside [0, 5]");
        norms.push_back(normalize_for_match(p.name));
        if (norms.back().empty())
            throw CatalogError("product '" + p.name + "' normalizes to an empty name");
    }
    for (std::size_t i = 0; i < catalog.products.size(); ++i) {
        for (std::size_t j = 0; j < catalog.products.size(); ++j) {
            if (i == j) continue;
            if (catalog.products[i].id == catalog.products[j].id && i < j)
                throw CatalogError("duplicate product id '" + catalog.products[i].id + "'");
            if (norms[i] == norms[j] && i < j)
                throw CatalogError("duplicate product name '" + catalog.products[i].name + "'");
            if (norms[i].find(norms[j]) != std::string::npos && norms[i] != norms[j])
                throw CatalogError("product name '" + catalog.products[j].name +
                                   "' occurs inside '" + catalog.products[i].name +
                                   "'; ranked mentions would be ambiguous");
        }
    }
}

Catalog parse_catalog(std::string_view json_text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(json_text);
    } catch (const ordered_json::parse_error& e) {
        throw CatalogError(std::string("catalog is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("category") || !doc.contains("products"))
        throw CatalogError("catalog must be an object with 'category' and 'products'");
    Catalog catalog;
    catalog.category = doc["category"].get<std::string>();
    const auto& arr = doc["products"];
    if (!arr.is_array()) throw CatalogError("'products' must be an array");
    std::size_t index = 0;
    for (const auto& item : arr) {
        Product p;
        p.id = item.contains("id") ? item["id"].get<std::string>() : std::to_string(index);
        p.name = item.value("name", std::string());
        p.description = item.value("description", std::string());
        if (!item.contains("price") || !item["price"].is_string())
            throw CatalogError("product '" + p.name + "': price must be a decimal string");
        p.price = Money::parse(item["price"].get<std::string>());
        if (!item.contains("rating") || !item["rating"].is_number())
            throw CatalogError("product '" + p.name + "': rating must be a number");
        p.rating = item["rating"].get<double>();
        if (item.contains("attributes")) {
            const auto& attrs = item["attributes"];
            if (!attrs.is_object())
                throw CatalogError("product '" + p.name + "': attributes must be an object");
            for (auto it = attrs.begin(); it != attrs.end(); ++it)
                p.attributes.emplace_back(it.key(), it.value().get<std::string>());
        }
        catalog.products.push_back(std::move(p));
        ++index;
    }
    validate_catalog(catalog);
    return catalog;
}

Catalog load_catalog_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CatalogError("cannot open catalog file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_catalog(buf.str());
    } catch (const CatalogError& e) {
        throw CatalogError(path + ": " + e.what());
    }
}

std::string catalog_to_json(const Catalog& catalog) {
    validate_catalog(catalog);
    ordered_json doc;
    doc["category"] = catalog.category;
    doc["products"] = ordered_json::array();
    for (const Product& p : catalog.products) {
        ordered_json item;
        item["id"] = p.id;
        item["name"] = p.name;
        item["description"] = p.description;
        item["price"] = p.price.to_decimal_string();
        item["rating"] = p.rating;
        ordered_json attrs = ordered_json::object();
        for (const auto& [label, value] : p.attributes) attrs[label] = value;
        item["attributes"] = attrs;
        doc["products"].push_back(std::move(item));
    }
    return doc.dump(2) + "\n";
}

void save_catalog_file(const Catalog& catalog, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CatalogError("cannot write catalog file: " + path);
    out << catalog_to_json(catalog);
    if (!out) throw CatalogError("failed writing catalog file: " + path);
}

const std::vector<std::string>& builtin_dataset_names() {
    static const std::vector<std::string> names = {"coffee_machines", "cameras", "books"};
    return names;
}

Catalog load_builtin(std::string_view dataset) {
    if (dataset == "coffee_machines") return parse_catalog(assets::kCoffeeMachinesJson);
    if (dataset == "cameras") return parse_catalog(assets::kCamerasJson);
    if (dataset == "books") return parse_catalog(assets::kBooksJson);
    throw CatalogError("unknown dataset '" + std::string(dataset) +
                       "' (expected coffee_machines, cameras or books)");
}

double bayesian_average(double mean_rating, std::int64_t review_count, double prior_weight,
                        double prior_mean) {
    if (review_count < 0) throw CatalogError("negative review count");
    if (prior_weight < 0.0) throw CatalogError("negative prior weight");
    const double denom = static_cast<double>(review_count) + prior_weight;
    if (denom <= 0.0) throw CatalogError("review count and prior weight are both zero");
    return (static_cast<double>(review_count) * mean_rating + prior_weight * prior_mean) / denom;
}

Catalog ingest_reviews(std::string category, const std::vector<ReviewedProduct>& rows,
                       const IngestionConfig& config) {
    if (rows.empty()) throw CatalogError("no products to ingest");
    double prior_mean;
    if (config.prior_mean) {
        prior_mean = *config.prior_mean;
    } else {
        double sum = 0.0;
        for (const ReviewedProduct& r : rows) sum += r.mean_rating;
        prior_mean = sum / static_cast<double>(rows.size());
    }
    Catalog catalog;
    catalog.category = std::move(category);
    for (const ReviewedProduct& r : rows) {
        Product p;
        p.id = r.id;
        p.name = r.name;
        p.description = r.description;
        p.price = r.price;
        double rating = bayesian_average(r.mean_rating, r.review_count, config.prior_weight,
                                         prior_mean);
        if (config.round_to_tenth) rating = std::round(rating * 10.0) / 10.0;
        p.rating = rating;
        p.attributes = r.attributes;
        catalog.products.push_back(std::move(p));
    }
    validate_catalog(catalog);
    return catalog;
}

}  // namespace biasrec
