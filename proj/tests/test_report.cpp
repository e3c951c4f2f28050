#include <cstdlib>
#include <filesystem>
#include <string>

#include <unistd.h>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "biasrec/catalog.hpp"
#include "biasrec/errors.hpp"
#include "biasrec/gateway.hpp"
#include "biasrec/report.hpp"
#include "biasrec/runner.hpp"
#include "biasrec/variant_store.hpp"

using namespace biasrec;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;

    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("biasrec_report_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// Zero noise and a fixed list length make every run a pure function of the
// catalog, so the emitted reports are predictable byte for byte. The boost
// phrase sits inside the expert social-proof sentence; scarcity has no
// lexicon entry and must therefore move nothing.
void run_fixture(Gateway& gateway, const fs::path& dir) {
    MockConfig cfg;
    cfg.boost_lexicon = {{"most popular choice", 8.0}};
    cfg.weight_rating = 1.0;
    cfg.noise_scale = 0.0;
    cfg.k_lo = 3;
    cfg.k_hi = 3;
    RunnerContext ctx;
    ctx.catalogs.emplace("coffee_machines", load_builtin("coffee_machines"));
    ModelEndpoint ep;
    ep.name = "mk";
    ep.profile = EndpointProfile::mock;
    ep.model_id = "mock-recs";
    ep.mock = cfg;
    ctx.endpoints.emplace("mk", ep);
    ctx.gateway = &gateway;

    ExperimentPlan plan;
    plan.datasets = {"coffee_machines"};
    plan.endpoint_names = {"mk"};
    plan.attacks = {{BiasKind::social_proof, ConditionMode::expert},
                    {BiasKind::scarcity, ConditionMode::expert}};
    plan.targets = {"0", "3"};
    plan.params.repetitions = 8;
    plan.params.alpha = 0.25;
    plan.params.master_seed = 42;

    const MatrixResult result = run_matrix(ctx, plan, dir);
    REQUIRE(result.failures.empty());
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) break;
        lines.push_back(text.substr(pos, eol - pos));
        pos = eol + 1;
    }
    return lines;
}

std::vector<std::string> fields_of(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t comma = line.find(',', pos);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(pos));
            break;
        }
        fields.push_back(line.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return fields;
}

const std::string& line_with_prefix(const std::vector<std::string>& lines,
                                    const std::string& prefix) {
    for (const std::string& line : lines)
        if (line.rfind(prefix, 0) == 0) return line;
    static const std::string missing;
    REQUIRE_MESSAGE(false, "no line starts with: " << prefix);
    return missing;
}

}  // namespace

TEST_CASE("csv_escape quotes separators and doubles inner quotes") {
    CHECK(csv_escape("plain") == "plain");
    CHECK(csv_escape("") == "");
    CHECK(csv_escape("a,b") == "\"a,b\"");
    CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(csv_escape("line\nbreak") == "\"line\nbreak\"");
    CHECK(csv_escape("cr\rtail") == "\"cr\rtail\"");
    CHECK(csv_escape("pipes|are|fine") == "pipes|are|fine");
}

TEST_CASE("format_double emits the shortest round-trip form") {
    CHECK(format_double(0.0) == "0");
    CHECK(format_double(100.0) == "100");
    CHECK(format_double(-12.5) == "-12.5");
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(0.25) == "0.25");
    for (double value : {1.0 / 3.0, 2.0 / 7.0, 1e300, 5.1e-5, 123456.789,
                         0.30000000000000004}) {
        const std::string text = format_double(value);
        CHECK(std::strtod(text.c_str(), nullptr) == value);
    }
}

TEST_CASE("reports refuse unsealed archives") {
    TempDir tmp;
    Archive archive = Archive::create(tmp.path / "a", nlohmann::ordered_json::object());
    TempDir store_dir;
    VariantStore store(store_dir.path);
    CHECK_THROWS_WITH_AS(grid_csv(archive), doctest::Contains("is not sealed"), ArchiveError);
    CHECK_THROWS_WITH_AS(per_product_csv(archive), doctest::Contains("is not sealed"),
                         ArchiveError);
    CHECK_THROWS_WITH_AS(mrr_csv(archive), doctest::Contains("is not sealed"), ArchiveError);
    CHECK_THROWS_WITH_AS(top1_csv(archive), doctest::Contains("is not sealed"), ArchiveError);
    CHECK_THROWS_WITH_AS(discounts_csv(archive, store), doctest::Contains("is not sealed"),
                         ArchiveError);
}

TEST_CASE("csv reports freeze the deterministic fixture byte for byte") {
    Gateway gateway;
    TempDir tmp;
    run_fixture(gateway, tmp.path / "a");
    Archive archive = Archive::open(tmp.path / "a");

    SUBCASE("the grid pools targets per bias and prints N/A, never zero") {
        const std::string expected =
            "dataset,model,thinking,defense,bias,mode,half_price,rating_delta,metric,"
            "mean_delta,num_significant,targets,classification,audit\n"
            "coffee_machines,mock-recs,0,0,social_proof,expert,0,,rate,100,2,2,positive,"
            "ds=coffee_machines|model=mock-recs|think=0|def=0|mode=expert|bias=social_proof|"
            "target=*|half=0|rdelta=none\n"
            "coffee_machines,mock-recs,0,0,social_proof,expert,0,,pos,N/A,0,2,positive,"
            "ds=coffee_machines|model=mock-recs|think=0|def=0|mode=expert|bias=social_proof|"
            "target=*|half=0|rdelta=none\n"
            "coffee_machines,mock-recs,0,0,scarcity,expert,0,,rate,N/A,0,2,none,"
            "ds=coffee_machines|model=mock-recs|think=0|def=0|mode=expert|bias=scarcity|"
            "target=*|half=0|rdelta=none\n"
            "coffee_machines,mock-recs,0,0,scarcity,expert,0,,pos,N/A,0,2,none,"
            "ds=coffee_machines|model=mock-recs|think=0|def=0|mode=expert|bias=scarcity|"
            "target=*|half=0|rdelta=none\n";
        CHECK(grid_csv(archive) == expected);

        const std::vector<GridRow> grid = build_grid(archive);
        REQUIRE(grid.size() == 2);
        CHECK(grid[0].bias == BiasKind::social_proof);
        CHECK(grid[0].targets == 2);
        CHECK(grid[0].rate_cell.num_significant == 2);
        REQUIRE(grid[0].rate_cell.mean_delta.has_value());
        CHECK(*grid[0].rate_cell.mean_delta == 100.0);
        CHECK(grid[1].bias == BiasKind::scarcity);
        CHECK_FALSE(grid[1].rate_cell.mean_delta.has_value());
        CHECK(grid[1].rate_cell.num_significant == 0);
    }

    SUBCASE("per-product rows expose both sides of every comparison") {
        const std::vector<std::string> lines = lines_of(per_product_csv(archive));
        REQUIRE(lines.size() == 41);  // header + 4 conditions x 10 products
        CHECK(lines[0] ==
              "dataset,model,thinking,defense,bias,mode,target,product_id,product_name,runs,"
              "rec_before,rec_after,rate_before,rate_after,delta_rate,p_rate,sig_rate,"
              "pos_mean_before,pos_sd_before,pos_mean_after,pos_sd_after,delta_pos,p_pos,"
              "sig_pos,attacked,audit");

        const std::vector<std::string> target_row = fields_of(line_with_prefix(
            lines, "coffee_machines,mock-recs,0,0,social_proof,expert,3,3,"));
        REQUIRE(target_row.size() == 26);
        CHECK(target_row[8] == "BrewMaster Classic");
        CHECK(target_row[9] == "8");    // runs
        CHECK(target_row[10] == "0");   // never recommended before
        CHECK(target_row[11] == "8");   // always recommended after
        CHECK(target_row[12] == "0");
        CHECK(target_row[13] == "100");
        CHECK(target_row[14] == "100");
        CHECK(std::strtod(target_row[15].c_str(), nullptr) < 0.001);
        CHECK(target_row[16] == "1");
        CHECK(target_row[17] == "");    // no positions before
        CHECK(target_row[19] == "0");   // rank 1 reported as position 0
        CHECK(target_row[20] == "0");
        CHECK(target_row[21] == "");    // position delta undefined one-sided
        CHECK(target_row[22] == "");
        CHECK(target_row[23] == "0");
        CHECK(target_row[24] == "1");

        const std::vector<std::string> displaced_row = fields_of(line_with_prefix(
            lines, "coffee_machines,mock-recs,0,0,social_proof,expert,3,9,"));
        REQUIRE(displaced_row.size() == 26);
        CHECK(displaced_row[10] == "8");
        CHECK(displaced_row[11] == "8");
        CHECK(displaced_row[14] == "0");   // rate unchanged
        CHECK(displaced_row[15] == "1");   // degenerate table
        CHECK(displaced_row[16] == "0");
        CHECK(displaced_row[17] == "0");   // was the constant winner
        CHECK(displaced_row[19] == "1");   // pushed to rank 2
        CHECK(displaced_row[21] == "1");
        CHECK(std::strtod(displaced_row[22].c_str(), nullptr) < 0.01);
        CHECK(displaced_row[23] == "1");
        CHECK(displaced_row[24] == "0");
    }

    SUBCASE("mrr rows report reciprocal ranks before and after") {
        const std::vector<std::string> lines = lines_of(mrr_csv(archive));
        REQUIRE(lines.size() == 41);
        CHECK(lines[0] ==
              "dataset,model,thinking,defense,bias,mode,target,product_id,mrr_before,"
              "mrr_after,audit");
        CHECK(line_with_prefix(lines,
                               "coffee_machines,mock-recs,0,0,social_proof,expert,3,3,") ==
              "coffee_machines,mock-recs,0,0,social_proof,expert,3,3,0,1,"
              "ds=coffee_machines|model=mock-recs|think=0|def=0|mode=expert|"
              "bias=social_proof|target=3|half=0|rdelta=none");
        CHECK(line_with_prefix(lines,
                               "coffee_machines,mock-recs,0,0,social_proof,expert,3,9,") ==
              "coffee_machines,mock-recs,0,0,social_proof,expert,3,9,1,0.5,"
              "ds=coffee_machines|model=mock-recs|think=0|def=0|mode=expert|"
              "bias=social_proof|target=3|half=0|rdelta=none");
    }

    SUBCASE("top-1 rows flag modal flips toward the attacked product") {
        const std::string expected =
            "dataset,model,thinking,defense,bias,mode,target,modal_before,modal_after,"
            "flipped_products,flip_count,audit\n"
            "coffee_machines,mock-recs,0,0,social_proof,expert,0,9,0,0,1,"
            "ds=coffee_machines|model=mock-recs|think=0|def=0|mode=expert|bias=social_proof|"
            "target=0|half=0|rdelta=none\n"
            "coffee_machines,mock-recs,0,0,social_proof,expert,3,9,3,3,1,"
            "ds=coffee_machines|model=mock-recs|think=0|def=0|mode=expert|bias=social_proof|"
            "target=3|half=0|rdelta=none\n"
            "coffee_machines,mock-recs,0,0,scarcity,expert,0,9,9,,0,"
            "ds=coffee_machines|model=mock-recs|think=0|def=0|mode=expert|bias=scarcity|"
            "target=0|half=0|rdelta=none\n"
            "coffee_machines,mock-recs,0,0,scarcity,expert,3,9,9,,0,"
            "ds=coffee_machines|model=mock-recs|think=0|def=0|mode=expert|bias=scarcity|"
            "target=3|half=0|rdelta=none\n";
        CHECK(top1_csv(archive) == expected);
    }

    SUBCASE("emitters are pure: a second call reproduces the same bytes") {
        CHECK(grid_csv(archive) == grid_csv(archive));
        CHECK(per_product_csv(archive) == per_product_csv(archive));
    }
}

TEST_CASE("the discount summary reads the recorded validation journal") {
    Gateway gateway;
    TempDir tmp;
    run_fixture(gateway, tmp.path / "a");
    Archive archive = Archive::open(tmp.path / "a");
    TempDir store_dir;
    VariantStore store(store_dir.path);

    SUBCASE("without validation data the report refuses to guess") {
        CHECK_THROWS_WITH_AS(discounts_csv(archive, store),
                             doctest::Contains("no discount validation data"), ArchiveError);
    }

    SUBCASE("percentages aggregate into mean, spread and median") {
        store.append_validation_line("coffee_machines", BiasKind::discount_framing,
                                     R"({"target":"0","variant":0,"discount_pct":20.0})");
        store.append_validation_line("coffee_machines", BiasKind::discount_framing,
                                     R"({"target":"0","variant":1,"discount_pct":null})");
        store.append_validation_line("coffee_machines", BiasKind::discount_framing,
                                     R"({"target":"1","variant":0,"discount_pct":30.0})");
        CHECK(discounts_csv(archive, store) ==
              "dataset,bias,considered,with_value,missing,mean_pct,sd_pct,median_pct\n"
              "coffee_machines,discount_framing,3,2,1,25,5,25\n");
    }

    SUBCASE("a corrupt journal line is reported, not skipped") {
        store.append_validation_line("coffee_machines", BiasKind::discount_framing, "{broken");
        CHECK_THROWS_WITH_AS(discounts_csv(archive, store),
                             doctest::Contains("corrupt validation line"), ArchiveError);
    }
}
