#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "biasrec/attack.hpp"
#include "biasrec/catalog.hpp"
#include "biasrec/config.hpp"
#include "biasrec/errors.hpp"
#include "biasrec/gateway.hpp"
#include "biasrec/metrics.hpp"
#include "biasrec/report.hpp"
#include "biasrec/rng.hpp"
#include "biasrec/runner.hpp"
#include "biasrec/variant_store.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitPartial = 3;

using biasrec::BiasKind;
using biasrec::CliConfig;

std::string cell_text(const biasrec::AggregateCell& cell) {
    std::ostringstream out;
    if (cell.mean_delta)
        out << std::showpos << std::fixed << std::setprecision(2) << *cell.mean_delta
            << std::noshowpos;
    else
        out << "N/A";
    out << " (#p=" << cell.num_significant << ")";
    return out.str();
}

biasrec::TemplateSet templates_for(const CliConfig& config) {
    if (config.template_file.empty()) return biasrec::TemplateSet::builtin();
    std::ifstream in(config.template_file, std::ios::binary);
    if (!in)
        throw biasrec::ConfigError("cannot read template file " +
                                   config.template_file.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return biasrec::TemplateSet::from_json(buffer.str());
}

std::unique_ptr<biasrec::TextGenerator> attacker_for(const CliConfig& config,
                                                     biasrec::Gateway& gateway) {
    if (config.attacker_endpoint.empty()) return std::make_unique<biasrec::MockAttacker>();
    return std::make_unique<biasrec::GatewayTextGenerator>(
        gateway, config.endpoints.at(config.attacker_endpoint));
}

// Prints diagnostics; true means the config is usable.
bool preflight(const CliConfig& config) {
    const std::vector<std::string> diagnostics = biasrec::validate_config(config);
    for (const std::string& d : diagnostics) std::cerr << "error: " << d << '\n';
    return diagnostics.empty();
}

int cmd_validate(const std::string& config_path, bool offline) {
    const CliConfig config = biasrec::load_config(config_path);
    if (!preflight(config)) return kExitValidation;

    bool healthy = true;
    biasrec::Gateway gateway;
    std::set<std::string> names(config.plan.endpoint_names.begin(),
                                config.plan.endpoint_names.end());
    if (!config.attacker_endpoint.empty()) names.insert(config.attacker_endpoint);
    for (const std::string& name : names) {
        const biasrec::ModelEndpoint& ep = config.endpoints.at(name);
        if (offline && ep.profile != biasrec::EndpointProfile::mock) {
            std::cout << "endpoint " << name << ": skipped (offline)\n";
            continue;
        }
        const biasrec::HealthResult health = gateway.health_check(ep);
        if (health.ok) {
            std::cout << "endpoint " << name << ": ok\n";
        } else {
            std::cerr << "error: endpoint " << name << ": " << health.reason << '\n';
            healthy = false;
        }
    }
    if (!healthy) return kExitValidation;

    const auto catalogs = biasrec::load_config_catalogs(config);
    const auto conditions = biasrec::conditions_for_plan(config.plan, catalogs);
    std::cout << "config ok: " << catalogs.size() << " dataset(s), "
              << config.endpoints.size() << " endpoint(s), " << conditions.size()
              << " planned condition(s) x " << config.plan.params.repetitions << " runs\n";
    return kExitOk;
}

struct GenerateSelection {
    std::vector<std::string> datasets;  // empty = plan datasets
    std::vector<std::string> biases;    // empty = every generation-applicable bias
    int variants = 0;                   // 0 = plan variants_per_product
};

int cmd_generate_attacks(const std::string& config_path, const GenerateSelection& sel) {
    const CliConfig config = biasrec::load_config(config_path);
    if (!preflight(config)) return kExitValidation;
    const auto catalogs = biasrec::load_config_catalogs(config);
    const biasrec::TemplateSet templates = templates_for(config);

    std::vector<std::string> datasets =
        sel.datasets.empty() ? config.plan.datasets : sel.datasets;
    std::vector<BiasKind> biases;
    if (sel.biases.empty()) {
        for (BiasKind bias : biasrec::all_bias_kinds())
            if (biasrec::generation_applicable(bias)) biases.push_back(bias);
    } else {
        for (const std::string& name : sel.biases) {
            const BiasKind bias = biasrec::bias_from_name(name);
            if (!biasrec::generation_applicable(bias))
                throw biasrec::ConfigError("'" + name + "' cannot run in generated mode");
            biases.push_back(bias);
        }
    }
    const int n = sel.variants > 0 ? sel.variants : config.plan.params.variants_per_product;

    biasrec::Gateway gateway;
    const std::unique_ptr<biasrec::TextGenerator> attacker = attacker_for(config, gateway);
    biasrec::VariantStore store(config.variant_dir);
    const biasrec::ValidationConfig vcfg;
    int attacker_calls = 0;
    std::vector<std::string> failures;

    for (const std::string& ds : datasets) {
        const auto cat_it = catalogs.find(ds);
        if (cat_it == catalogs.end())
            throw biasrec::ConfigError("unknown dataset '" + ds + "'");
        const biasrec::Catalog& catalog = cat_it->second;

        try {
            for (const biasrec::Product& product : catalog.products) {
                for (int v = 0; v < n; ++v) {
                    if (store.has_paraphrase(ds, product.id, v)) continue;
                    const std::uint64_t seed = biasrec::hash_combine(
                        biasrec::hash_combine(config.master_seed, "para|" + ds + "|" + product.id),
                        static_cast<std::uint64_t>(v));
                    store.save_paraphrase(ds, product.id, v,
                                          biasrec::paraphrase_description(
                                              product.description, *attacker, seed, 3,
                                              templates, vcfg));
                    ++attacker_calls;
                }
            }
        } catch (const biasrec::Error& e) {
            failures.push_back("dataset " + ds + " paraphrases: " + e.what());
            continue;  // target variants without paraphrases would be unusable
        }

        for (BiasKind bias : biases) {
            const std::string bias_label(biasrec::bias_name(bias));
            try {
                for (const biasrec::Product& target : catalog.products) {
                    for (int v = store.variant_count(ds, bias, target.id); v < n; ++v) {
                        const std::uint64_t seed = biasrec::hash_combine(
                            biasrec::hash_combine(config.master_seed,
                                                  "gen|" + ds + "|" + bias_label + "|" +
                                                      target.id),
                            static_cast<std::uint64_t>(v));
                        const std::string prompt = biasrec::build_generation_prompt(
                            bias, target.description, target.price, templates);
                        const std::string text = attacker->rewrite(prompt, seed);
                        if (text.empty())
                            throw biasrec::AttackError("attacker returned empty text for " +
                                                       target.id);
                        store.save_variant(ds, bias, target.id, v, text);
                        ++attacker_calls;
                    }
                }
            } catch (const biasrec::Error& e) {
                failures.push_back("dataset " + ds + " bias " + bias_label + ": " + e.what());
                continue;
            }

            // validation.jsonl is rebuilt wholesale so it always mirrors the
            // store exactly, however many invocations it took to fill.
            std::filesystem::remove(store.validation_path(ds, bias));
            int pass = 0;
            int fail = 0;
            std::vector<std::optional<double>> discounts;
            for (const biasrec::Product& target : catalog.products) {
                for (int v = 0; v < n; ++v) {
                    const std::string text = store.load_variant(ds, bias, target.id, v);
                    const biasrec::ValidationReport report =
                        biasrec::validate_generated(target, text, bias, vcfg);
                    report.ok ? ++pass : ++fail;
                    nlohmann::ordered_json line;
                    line["dataset"] = ds;
                    line["bias"] = bias_label;
                    line["target"] = target.id;
                    line["variant"] = v;
                    line["ok"] = report.ok;
                    nlohmann::ordered_json checks = nlohmann::ordered_json::array();
                    for (const biasrec::ValidationCheck& check : report.checks) {
                        nlohmann::ordered_json c;
                        c["name"] = check.name;
                        c["passed"] = check.passed;
                        c["detail"] = check.detail;
                        checks.push_back(std::move(c));
                    }
                    line["checks"] = std::move(checks);
                    if (report.extracted_discount_pct)
                        line["discount_pct"] = *report.extracted_discount_pct;
                    else
                        line["discount_pct"] = nullptr;
                    if (report.extracted_per_day)
                        line["per_day_cents"] = report.extracted_per_day->cents();
                    else
                        line["per_day_cents"] = nullptr;
                    store.append_validation_line(ds, bias, line.dump());
                    if (bias == BiasKind::discount_framing)
                        discounts.push_back(report.extracted_discount_pct);
                }
            }
            std::cout << ds << " / " << bias_label << ": " << pass << " passed, " << fail
                      << " failed\n";
            if (bias == BiasKind::discount_framing && !discounts.empty()) {
                int with_value = 0;
                for (const auto& d : discounts)
                    if (d) ++with_value;
                if (with_value > 0) {
                    const biasrec::DiscountDistribution dist =
                        biasrec::discount_distribution(discounts);
                    std::cout << "  discounts: mean " << std::fixed << std::setprecision(1)
                              << dist.mean << "%, median " << dist.median << "%, sd "
                              << dist.sd << "% over " << dist.with_value << " of "
                              << dist.considered << " variants\n";
                }
            }
        }
    }
    std::cout << "attacker calls: " << attacker_calls << '\n';
    for (const std::string& f : failures) std::cerr << "error: " << f << '\n';
    return failures.empty() ? kExitOk : kExitPartial;
}

void print_matrix(const biasrec::MatrixResult& result) {
    for (const biasrec::ConditionResult& cr : result.conditions) {
        std::cout << cr.condition.key() << "\n  rate " << cell_text(cr.rate_cell) << "  pos "
                  << cell_text(cr.pos_cell) << "  -> " << biasrec::outcome_name(cr.outcome)
                  << "  top1 flips " << cr.top1.flip_count << '\n';
    }
    for (const auto& [key, error] : result.failures)
        std::cerr << "error: condition " << key << ": " << error << '\n';
}

struct RunOptions {
    std::string archive;
    std::string study;  // "", "half-price", "rating-sweep"
    std::string dataset;
    std::string endpoint;
    std::string bias;
};

int cmd_run(const std::string& config_path, const RunOptions& opts) {
    const CliConfig config = biasrec::load_config(config_path);
    if (!preflight(config)) return kExitValidation;

    auto catalogs = biasrec::load_config_catalogs(config);
    biasrec::Gateway gateway;
    biasrec::VariantStore store(config.variant_dir);
    biasrec::RunnerContext ctx;
    ctx.catalogs = std::move(catalogs);
    ctx.endpoints = config.endpoints;
    ctx.gateway = &gateway;
    ctx.variants = &store;
    ctx.progress = [](const std::string& line) { std::cerr << line << '\n'; };

    const std::filesystem::path archive_dir =
        opts.archive.empty() ? config.output_dir / "archive"
                             : std::filesystem::path(opts.archive);

    if (opts.study.empty()) {
        const biasrec::MatrixResult result =
            biasrec::run_matrix(ctx, config.plan, archive_dir);
        print_matrix(result);
        std::cout << "archive: " << archive_dir.string() << '\n';
        return result.failures.empty() ? kExitOk : kExitPartial;
    }

    const std::string dataset = opts.dataset.empty() ? config.plan.datasets.front()
                                                     : opts.dataset;
    const std::string endpoint =
        opts.endpoint.empty() ? config.plan.endpoint_names.front() : opts.endpoint;

    if (opts.study == "half-price") {
        const BiasKind bias = opts.bias.empty() ? BiasKind::discount_framing
                                                : biasrec::bias_from_name(opts.bias);
        const biasrec::HalfPriceStudy study = biasrec::run_half_price_study(
            ctx, dataset, endpoint, config.plan.params, archive_dir, bias);
        std::cout << "half price     rate " << cell_text(study.half_price.rate_cell)
                  << "  pos " << cell_text(study.half_price.pos_cell) << "  -> "
                  << biasrec::outcome_name(study.half_price.outcome) << '\n';
        std::cout << "discount attack rate " << cell_text(study.discount_attack.rate_cell)
                  << "  pos " << cell_text(study.discount_attack.pos_cell) << "  -> "
                  << biasrec::outcome_name(study.discount_attack.outcome) << '\n';
        std::cout << "archive: " << archive_dir.string() << '\n';
        return kExitOk;
    }
    if (opts.study == "rating-sweep") {
        if (config.plan.sweep.rating_deltas.empty())
            throw biasrec::ConfigError(
                "rating-sweep needs plan.sweep.rating_deltas in the config");
        const BiasKind bias = opts.bias.empty() ? BiasKind::social_proof
                                                : biasrec::bias_from_name(opts.bias);
        const biasrec::RatingSweep sweep = biasrec::run_rating_sweep(
            ctx, dataset, endpoint, config.plan.params, config.plan.sweep.rating_deltas,
            archive_dir, bias);
        for (const biasrec::SweepPoint& point : sweep.points)
            std::cout << "delta " << std::fixed << std::setprecision(2) << point.delta
                      << ": mean rate diff " << std::setprecision(3) << point.mean_rate_diff
                      << "  " << cell_text(point.rate_cell) << '\n';
        if (sweep.zero_crossing)
            std::cout << "attack lift cancelled at rating delta " << std::setprecision(3)
                      << *sweep.zero_crossing << '\n';
        else
            std::cout << "no zero crossing inside the swept range\n";
        std::cout << "archive: " << archive_dir.string() << '\n';
        return kExitOk;
    }
    throw biasrec::ConfigError("unknown study '" + opts.study + "'");
}

int cmd_resume(const std::string& config_path, const std::string& archive_dir,
               bool override_seed_mismatch, bool truncate_torn_tail) {
    const CliConfig config = biasrec::load_config(config_path);
    biasrec::Gateway gateway;
    biasrec::VariantStore store(config.variant_dir);
    biasrec::RunnerContext ctx;
    ctx.gateway = &gateway;
    ctx.variants = &store;
    ctx.progress = [](const std::string& line) { std::cerr << line << '\n'; };
    const biasrec::ResumeOutcome outcome =
        biasrec::resume(ctx, archive_dir, override_seed_mismatch, truncate_torn_tail,
                        config.plan.params.workers);
    std::cout << "runs executed: " << outcome.runs_executed << '\n';
    print_matrix(outcome.result);
    return outcome.result.failures.empty() ? kExitOk : kExitPartial;
}

struct ReportOptions {
    std::string archive;
    std::string kind;
    std::string out;
    std::string variant_dir;
    std::string config_path;
};

int cmd_report(const ReportOptions& opts) {
    const biasrec::Archive archive = biasrec::Archive::open(opts.archive);
    std::string csv;
    if (opts.kind == "grid") {
        csv = biasrec::grid_csv(archive);
    } else if (opts.kind == "per_product") {
        csv = biasrec::per_product_csv(archive);
    } else if (opts.kind == "mrr") {
        csv = biasrec::mrr_csv(archive);
    } else if (opts.kind == "top1") {
        csv = biasrec::top1_csv(archive);
    } else if (opts.kind == "discounts") {
        std::filesystem::path root;
        if (!opts.variant_dir.empty())
            root = opts.variant_dir;
        else if (!opts.config_path.empty())
            root = biasrec::load_config(opts.config_path).variant_dir;
        else
            throw biasrec::ConfigError(
                "the discounts report needs --variant-dir or --config");
        const biasrec::VariantStore store(root);
        csv = biasrec::discounts_csv(archive, store);
    } else {
        throw biasrec::ConfigError("unknown report kind '" + opts.kind + "'");
    }

    const std::filesystem::path out_path =
        opts.out.empty()
            ? std::filesystem::path(opts.archive) / "reports" / (opts.kind + ".csv")
            : std::filesystem::path(opts.out);
    std::filesystem::create_directories(out_path.parent_path());
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw biasrec::ArchiveError("cannot write " + out_path.string());
    out.write(csv.data(), static_cast<std::streamsize>(csv.size()));
    out.close();
    if (!out) throw biasrec::ArchiveError("write failed for " + out_path.string());
    std::cout << out_path.string() << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Measures how cognitive-bias edits to product descriptions shift "
                 "LLM recommendation visibility"};
    app.require_subcommand(1);

    std::string config_path;
    bool offline = false;
    CLI::App* validate = app.add_subcommand(
        "validate", "Check config, catalogs, templates, plan, and endpoint health");
    validate->add_option("--config", config_path, "Config file")->required();
    validate->add_flag("--offline", offline, "Skip network health checks");

    GenerateSelection gen_sel;
    CLI::App* generate = app.add_subcommand(
        "generate-attacks", "Fill the variant store with attacked rewrites and paraphrases");
    generate->add_option("--config", config_path, "Config file")->required();
    generate->add_option("--dataset", gen_sel.datasets, "Dataset selection (default: plan)");
    generate->add_option("--bias", gen_sel.biases,
                         "Bias selection (default: every rewrite-capable bias)");
    generate->add_option("--variants", gen_sel.variants,
                         "Variants per product (default: plan setting)");

    RunOptions run_opts;
    CLI::App* run = app.add_subcommand("run", "Execute the configured experiment matrix");
    run->add_option("--config", config_path, "Config file")->required();
    run->add_option("--archive", run_opts.archive,
                    "Archive directory (default: <output_dir>/archive)");
    run->add_option("--study", run_opts.study, "Focused study instead of the matrix")
        ->check(CLI::IsMember({"half-price", "rating-sweep"}));
    run->add_option("--dataset", run_opts.dataset, "Study dataset (default: first in plan)");
    run->add_option("--endpoint", run_opts.endpoint,
                    "Study endpoint (default: first in plan)");
    run->add_option("--bias", run_opts.bias, "Study bias override");

    std::string resume_archive;
    bool override_seed = false;
    bool truncate_tail = false;
    CLI::App* resume = app.add_subcommand("resume", "Complete the missing runs of an archive");
    resume->add_option("--config", config_path, "Config file")->required();
    resume->add_option("--archive", resume_archive, "Archive directory")->required();
    resume->add_flag("--override-seed-mismatch", override_seed,
                     "Proceed although recorded seeds do not re-derive");
    resume->add_flag("--truncate-torn-tail", truncate_tail,
                     "Drop a half-written trailing record");

    ReportOptions report_opts;
    CLI::App* report = app.add_subcommand("report", "Emit result tables from a sealed archive");
    report->add_option("--archive", report_opts.archive, "Archive directory")->required();
    report->add_option("--kind", report_opts.kind, "Report kind")
        ->required()
        ->check(CLI::IsMember({"grid", "per_product", "mrr", "top1", "discounts"}));
    report->add_option("--out", report_opts.out, "Output file (default under the archive)");
    report->add_option("--variant-dir", report_opts.variant_dir,
                       "Variant store root (discounts report)");
    report->add_option("--config", report_opts.config_path,
                       "Config file (discounts report fallback for the variant store)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (validate->parsed()) return cmd_validate(config_path, offline);
        if (generate->parsed()) return cmd_generate_attacks(config_path, gen_sel);
        if (run->parsed()) return cmd_run(config_path, run_opts);
        if (resume->parsed())
            return cmd_resume(config_path, resume_archive, override_seed, truncate_tail);
        if (report->parsed()) return cmd_report(report_opts);
    } catch (const biasrec::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const biasrec::ArchiveError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const biasrec::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}
