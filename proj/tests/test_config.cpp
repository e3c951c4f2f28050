#include <doctest.h>

#include <cstdlib>
#include <json.hpp>
#include <string>

#include "biasrec/config.hpp"
#include "biasrec/errors.hpp"

using namespace biasrec;
using nlohmann::ordered_json;

namespace {

ordered_json base_config() {
    ordered_json doc;
    doc["master_seed"] = 42;
    doc["datasets"] = {"coffee_machines"};
    doc["endpoints"]["m1"]["profile"] = "mock";
    doc["endpoints"]["m1"]["model_id"] = "mock-small";
    doc["endpoints"]["m1"]["mock"]["k_range"] = {3, 5};
    return doc;
}

CliConfig parse(const ordered_json& doc) {
    return parse_config(doc.dump(), "/base");
}

}  // namespace

TEST_CASE("a minimal config fills in every default") {
    const CliConfig c = parse(base_config());
    CHECK(c.master_seed == 42);
    CHECK(c.output_dir == std::filesystem::path("/base/out"));
    CHECK(c.variant_dir == std::filesystem::path("/base/out/variants"));
    CHECK(c.template_file.empty());
    CHECK(c.attacker_endpoint.empty());
    REQUIRE(c.datasets.size() == 1);
    CHECK(c.datasets[0].name == "coffee_machines");
    CHECK(c.datasets[0].path.empty());
    REQUIRE(c.endpoints.count("m1") == 1);
    CHECK(c.endpoints.at("m1").model_id == "mock-small");
    CHECK(c.endpoints.at("m1").mock.has_value());
    CHECK(c.endpoints.at("m1").mock->k_lo == 3);

    // Plan defaults: everything configured, control-only, stock knobs.
    CHECK(c.plan.datasets == std::vector<std::string>{"coffee_machines"});
    CHECK(c.plan.endpoint_names == std::vector<std::string>{"m1"});
    CHECK(c.plan.attacks.empty());
    CHECK(c.plan.targets.empty());
    CHECK(c.plan.defenses == std::vector<bool>{false});
    CHECK(c.plan.paraphrase_others);
    CHECK(c.plan.params.repetitions == 100);
    CHECK(c.plan.params.alpha == 0.05);
    CHECK(c.plan.params.variants_per_product == 50);
    CHECK(c.plan.params.master_seed == 42);
    CHECK(!c.plan.sweep.half_price);
    CHECK(c.plan.sweep.rating_deltas.empty());
}

TEST_CASE("master_seed is mandatory and must be unsigned") {
    ordered_json doc = base_config();
    doc.erase("master_seed");
    CHECK_THROWS_AS(parse(doc), ConfigError);
    doc["master_seed"] = -3;
    CHECK_THROWS_AS(parse(doc), ConfigError);
    doc["master_seed"] = "42";
    CHECK_THROWS_AS(parse(doc), ConfigError);
}

TEST_CASE("unknown keys are rejected everywhere") {
    ordered_json doc = base_config();
    doc["surprise"] = 1;
    CHECK_THROWS_AS(parse(doc), ConfigError);

    doc = base_config();
    doc["plan"]["surprise"] = 1;
    CHECK_THROWS_AS(parse(doc), ConfigError);

    doc = base_config();
    doc["endpoints"]["m1"]["surprise"] = 1;
    CHECK_THROWS_AS(parse(doc), ConfigError);

    doc = base_config();
    doc["endpoints"]["m1"]["mock"]["surprise"] = 1;
    CHECK_THROWS_AS(parse(doc), ConfigError);
}

TEST_CASE("datasets may be bundled names or json file paths") {
    ordered_json doc = base_config();
    doc["datasets"] = {"coffee_machines", "extra/shoes.json"};
    const CliConfig c = parse(doc);
    REQUIRE(c.datasets.size() == 2);
    CHECK(c.datasets[1].name == "shoes");
    CHECK(c.datasets[1].path == std::filesystem::path("/base/extra/shoes.json"));

    doc["datasets"] = {"shoes.json", "other/shoes.json"};  // same stem
    CHECK_THROWS_AS(parse(doc), ConfigError);

    doc["datasets"] = {"shoes.yaml"};
    CHECK_THROWS_AS(parse(doc), ConfigError);

    doc["datasets"] = ordered_json::array();
    CHECK_THROWS_AS(parse(doc), ConfigError);
}

TEST_CASE("the endpoint handle wins over an embedded name") {
    ordered_json doc = base_config();
    doc["endpoints"]["m1"]["name"] = "something-else";
    const CliConfig c = parse(doc);
    CHECK(c.endpoints.at("m1").name == "m1");
}

TEST_CASE("the attacker endpoint must be configured") {
    ordered_json doc = base_config();
    doc["attacker_endpoint"] = "ghost";
    CHECK_THROWS_AS(parse(doc), ConfigError);
    doc["attacker_endpoint"] = "m1";
    CHECK(parse(doc).attacker_endpoint == "m1");
}

TEST_CASE("plan settings parse and propagate") {
    ordered_json doc = base_config();
    doc["plan"]["attacks"] = {{{"bias", "social_proof"}, {"mode", "expert"}},
                              {{"bias", "scarcity"}, {"mode", "generated"}}};
    doc["plan"]["targets"] = {"0", "1"};
    doc["plan"]["defenses"] = {false, true};
    doc["plan"]["paraphrase_others"] = false;
    doc["plan"]["repetitions"] = 7;
    doc["plan"]["alpha"] = 0.01;
    doc["plan"]["variants_per_product"] = 4;
    doc["plan"]["workers"] = 2;
    doc["plan"]["sweep"]["half_price"] = true;
    doc["plan"]["sweep"]["rating_deltas"] = {0.1, 0.2};

    const CliConfig c = parse(doc);
    REQUIRE(c.plan.attacks.size() == 2);
    CHECK(c.plan.attacks[0].first == BiasKind::social_proof);
    CHECK(c.plan.attacks[0].second == ConditionMode::expert);
    CHECK(c.plan.attacks[1].second == ConditionMode::generated);
    CHECK(c.plan.targets == std::vector<std::string>{"0", "1"});
    CHECK(c.plan.defenses == std::vector<bool>{false, true});
    CHECK(!c.plan.paraphrase_others);
    CHECK(c.plan.params.repetitions == 7);
    CHECK(c.plan.params.alpha == 0.01);
    CHECK(c.plan.params.variants_per_product == 4);
    CHECK(c.plan.params.workers == 2);
    CHECK(c.plan.sweep.half_price);
    CHECK(c.plan.sweep.rating_deltas == std::vector<double>{0.1, 0.2});
}

TEST_CASE("misspelled bias or mode names are config errors") {
    ordered_json doc = base_config();
    doc["plan"]["attacks"] = {{{"bias", "socia_proof"}, {"mode", "expert"}}};
    CHECK_THROWS_AS(parse(doc), ConfigError);

    doc["plan"]["attacks"] = {{{"bias", "social_proof"}, {"mode", "expertly"}}};
    CHECK_THROWS_AS(parse(doc), ConfigError);

    doc["plan"]["attacks"] = {{{"bias", "social_proof"}}};
    CHECK_THROWS_AS(parse(doc), ConfigError);
}

TEST_CASE("broken JSON and unreadable files are config errors") {
    CHECK_THROWS_AS(parse_config("{nope", "/base"), ConfigError);
    CHECK_THROWS_AS(parse_config("[1,2]", "/base"), ConfigError);
    CHECK_THROWS_AS(load_config("/does/not/exist.json"), ConfigError);
}

TEST_CASE("catalog loading resolves bundled datasets") {
    const CliConfig c = parse(base_config());
    const auto catalogs = load_config_catalogs(c);
    REQUIRE(catalogs.count("coffee_machines") == 1);
    CHECK(catalogs.at("coffee_machines").products.size() == 10);
}

TEST_CASE("preflight diagnostics catch the problems a run would hit") {
    // A clean mock config passes.
    CHECK(validate_config(parse(base_config())).empty());

    // Unreadable external catalog.
    ordered_json doc = base_config();
    doc["datasets"] = {"coffee_machines", "missing/file.json"};
    const auto ds_diags = validate_config(parse(doc));
    REQUIRE(!ds_diags.empty());
    CHECK(ds_diags[0].find("file") != std::string::npos);

    // Generic endpoint without a base URL or with an unresolvable secret.
    doc = base_config();
    doc["endpoints"]["live"]["profile"] = "generic";
    doc["endpoints"]["live"]["model_id"] = "live-model";
    CHECK(!validate_config(parse(doc)).empty());

    doc["endpoints"]["live"]["base_url"] = "http://localhost:1";
    doc["endpoints"]["live"]["auth_env"] = "BIASREC_TEST_SURELY_UNSET_TOKEN";
    unsetenv("BIASREC_TEST_SURELY_UNSET_TOKEN");
    const auto env_diags = validate_config(parse(doc));
    REQUIRE(!env_diags.empty());
    CHECK(env_diags[0].find("BIASREC_TEST_SURELY_UNSET_TOKEN") != std::string::npos);

    setenv("BIASREC_TEST_SURELY_UNSET_TOKEN", "token-value", 1);
    CHECK(validate_config(parse(doc)).empty());
    unsetenv("BIASREC_TEST_SURELY_UNSET_TOKEN");

    // Plan problems surface as diagnostics, not exceptions.
    doc = base_config();
    doc["plan"]["targets"] = {"frenchpress_classic"};
    const auto plan_diags = validate_config(parse(doc));
    REQUIRE(!plan_diags.empty());
    CHECK(plan_diags[0].find("frenchpress_classic") != std::string::npos);
}
