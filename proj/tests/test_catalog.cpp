#include <doctest.h>

#include <string>

#include "biasrec/catalog.hpp"
#include "biasrec/errors.hpp"

using namespace biasrec;

namespace {

Catalog small_catalog() {
    Catalog c;
    c.category = "widget";
    Product a;
    a.id = "a";
    a.name = "Widget Alpha";
    a.description = "A fine widget for daily use.";
    a.price = Money::parse("19.99");
    a.rating = 4.2;
    a.attributes = {{"Color", "Red"}};
    Product b;
    b.id = "b";
    b.name = "Gadget Beta";
    b.description = "A sturdy gadget for the workshop.";
    b.price = Money::parse("49");
    b.rating = 3.8;
    c.products = {a, b};
    return c;
}

}  // namespace

TEST_CASE("round trip through JSON preserves every field") {
    const Catalog c = small_catalog();
    const Catalog back = parse_catalog(catalog_to_json(c));
    REQUIRE(back.products.size() == 2);
    CHECK(back.category == "widget");
    CHECK(back.products[0].id == "a");
    CHECK(back.products[0].name == "Widget Alpha");
    CHECK(back.products[0].description == "A fine widget for daily use.");
    CHECK(back.products[0].price.cents() == 1999);
    CHECK(back.products[0].rating == 4.2);
    REQUIRE(back.products[0].attributes.size() == 1);
    CHECK(back.products[0].attributes[0].first == "Color");
    CHECK(back.products[0].attributes[0].second == "Red");
    CHECK(back.products[1].attributes.empty());
    CHECK(catalog_to_json(back) == catalog_to_json(c));
}

TEST_CASE("validation rejects broken catalogs") {
    Catalog c = small_catalog();
    SUBCASE("duplicate ids") {
        c.products[1].id = "a";
        CHECK_THROWS_AS(validate_catalog(c), CatalogError);
    }
    SUBCASE("duplicate names") {
        c.products[1].name = "Widget Alpha";
        CHECK_THROWS_AS(validate_catalog(c), CatalogError);
    }
    SUBCASE("empty description") {
        c.products[0].description = "";
        CHECK_THROWS_AS(validate_catalog(c), CatalogError);
    }
    SUBCASE("zero price") {
        c.products[0].price = Money::from_cents(0);
        CHECK_THROWS_AS(validate_catalog(c), CatalogError);
    }
    SUBCASE("rating above five") {
        c.products[0].rating = 5.1;
        CHECK_THROWS_AS(validate_catalog(c), CatalogError);
    }
    SUBCASE("empty category") {
        c.category = "";
        CHECK_THROWS_AS(validate_catalog(c), CatalogError);
    }
    SUBCASE("no products") {
        c.products.clear();
        CHECK_THROWS_AS(validate_catalog(c), CatalogError);
    }
}

TEST_CASE("validation rejects names containing other names") {
    Catalog c = small_catalog();
    c.products[1].name = "Widget Alpha Pro";  // contains "Widget Alpha"
    CHECK_THROWS_AS(validate_catalog(c), CatalogError);

    // The containment check runs on normalized text, so spacing and case
    // variants collide too.
    c = small_catalog();
    c.products[1].name = "widget  ALPHA deluxe";
    CHECK_THROWS_AS(validate_catalog(c), CatalogError);
}

TEST_CASE("find and at") {
    const Catalog c = small_catalog();
    CHECK(c.find("a") != nullptr);
    CHECK(c.find("zz") == nullptr);
    CHECK(c.at("b").name == "Gadget Beta");
    CHECK_THROWS_AS(c.at("zz"), CatalogError);
    CHECK(c.ids() == std::vector<std::string>{"a", "b"});
}

TEST_CASE("builtin datasets load and validate") {
    CHECK(builtin_dataset_names() ==
          std::vector<std::string>{"coffee_machines", "cameras", "books"});
    const Catalog coffee = load_builtin("coffee_machines");
    CHECK(coffee.category == "coffee machine");
    CHECK(coffee.products.size() == 10);
    CHECK(coffee.at("0").name == "FrenchPress Classic");
    CHECK(coffee.at("0").price.cents() == 2900);
    CHECK(coffee.at("9").name == "CafePro Elite");
    for (const std::string& name : builtin_dataset_names())
        CHECK_NOTHROW(validate_catalog(load_builtin(name)));
    CHECK_THROWS_AS(load_builtin("nope"), CatalogError);
}

TEST_CASE("rating formatting keeps one decimal unless two are needed") {
    CHECK(format_rating(4.1) == "4.1");
    CHECK(format_rating(5.0) == "5.0");
    CHECK(format_rating(4.0) == "4.0");
    CHECK(format_rating(4.15) == "4.15");
}

TEST_CASE("bayesian average shrinks toward the prior") {
    CHECK(bayesian_average(5.0, 0, 10.0, 3.0) == doctest::Approx(3.0));
    CHECK(bayesian_average(5.0, 10, 10.0, 3.0) == doctest::Approx(4.0));
    // Large counts converge to the raw mean.
    CHECK(bayesian_average(4.5, 1000000, 10.0, 3.0) == doctest::Approx(4.5).epsilon(1e-4));
}

TEST_CASE("review ingestion applies the shrunk rating and keeps catalog invariants") {
    std::vector<ReviewedProduct> rows(2);
    rows[0].id = "x";
    rows[0].name = "Item X";
    rows[0].description = "First item.";
    rows[0].price = Money::parse("10");
    rows[0].review_count = 2;
    rows[0].mean_rating = 5.0;
    rows[1].id = "y";
    rows[1].name = "Item Y";
    rows[1].description = "Second item.";
    rows[1].price = Money::parse("20");
    rows[1].review_count = 200;
    rows[1].mean_rating = 4.0;

    IngestionConfig cfg;
    cfg.prior_weight = 2.0;
    const Catalog c = ingest_reviews("thing", rows, cfg);
    CHECK(c.category == "thing");
    // Default prior mean = mean of the two raw means = 4.5.
    // x: (2*5 + 2*4.5) / 4 = 4.75 -> rounded to 4.8
    CHECK(c.at("x").rating == doctest::Approx(4.8));
    // y: (200*4 + 2*4.5) / 202 = 4.00495 -> rounded to 4.0
    CHECK(c.at("y").rating == doctest::Approx(4.0));
    CHECK_NOTHROW(validate_catalog(c));
}
