#include "biasrec/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "biasrec/errors.hpp"
#include "endpoint_json.hpp"

namespace biasrec {

namespace {

using nlohmann::ordered_json;

void reject_unknown_keys(const ordered_json& node, const std::vector<std::string>& known,
                         const std::string& where) {
    for (const auto& [key, value] : node.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown key '" + key + "' in " + where);
}

std::filesystem::path resolve(const std::filesystem::path& base_dir,
                              const std::filesystem::path& path) {
    if (path.empty() || path.is_absolute()) return path;
    return base_dir / path;
}

DatasetRef parse_dataset_ref(const std::string& entry, const std::filesystem::path& base_dir) {
    const auto& builtins = builtin_dataset_names();
    if (std::find(builtins.begin(), builtins.end(), entry) != builtins.end())
        return DatasetRef{entry, {}};
    std::filesystem::path path(entry);
    if (path.extension() != ".json")
        throw ConfigError("dataset '" + entry +
                          "' is neither a bundled catalog name nor a .json file path");
    DatasetRef ref;
    ref.name = path.stem().string();
    ref.path = resolve(base_dir, path);
    if (ref.name.empty()) throw ConfigError("dataset path '" + entry + "' has an empty stem");
    return ref;
}

std::vector<std::pair<BiasKind, ConditionMode>> parse_attacks(const ordered_json& node) {
    std::vector<std::pair<BiasKind, ConditionMode>> attacks;
    for (const auto& entry : node) {
        reject_unknown_keys(entry, {"bias", "mode"}, "plan.attacks entry");
        if (!entry.contains("bias") || !entry.contains("mode"))
            throw ConfigError("plan.attacks entries need both 'bias' and 'mode'");
        try {
            const BiasKind bias = bias_from_name(entry.at("bias").get<std::string>());
            const ConditionMode mode =
                condition_mode_from_name(entry.at("mode").get<std::string>());
            attacks.emplace_back(bias, mode);
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            throw ConfigError(std::string("plan.attacks: ") + e.what());
        }
    }
    return attacks;
}

ExperimentPlan parse_plan(const ordered_json& node, const CliConfig& config) {
    static const std::vector<std::string> known = {
        "endpoints", "datasets",  "attacks",     "targets",
        "defenses",  "paraphrase_others", "repetitions", "alpha",
        "variants_per_product", "workers", "sweep",
    };
    reject_unknown_keys(node, known, "plan");
    ExperimentPlan plan;
    if (node.contains("endpoints"))
        plan.endpoint_names = node.at("endpoints").get<std::vector<std::string>>();
    else
        for (const auto& [name, ep] : config.endpoints) plan.endpoint_names.push_back(name);
    if (node.contains("datasets"))
        plan.datasets = node.at("datasets").get<std::vector<std::string>>();
    else
        for (const DatasetRef& ds : config.datasets) plan.datasets.push_back(ds.name);
    if (node.contains("attacks")) plan.attacks = parse_attacks(node.at("attacks"));
    if (node.contains("targets"))
        plan.targets = node.at("targets").get<std::vector<std::string>>();
    if (node.contains("defenses")) plan.defenses = node.at("defenses").get<std::vector<bool>>();
    if (node.contains("paraphrase_others"))
        plan.paraphrase_others = node.at("paraphrase_others").get<bool>();
    if (node.contains("repetitions"))
        plan.params.repetitions = node.at("repetitions").get<int>();
    if (node.contains("alpha")) plan.params.alpha = node.at("alpha").get<double>();
    if (node.contains("variants_per_product"))
        plan.params.variants_per_product = node.at("variants_per_product").get<int>();
    if (node.contains("workers")) plan.params.workers = node.at("workers").get<int>();
    if (node.contains("sweep")) {
        const auto& sweep = node.at("sweep");
        reject_unknown_keys(sweep, {"half_price", "rating_deltas"}, "plan.sweep");
        if (sweep.contains("half_price"))
            plan.sweep.half_price = sweep.at("half_price").get<bool>();
        if (sweep.contains("rating_deltas"))
            plan.sweep.rating_deltas = sweep.at("rating_deltas").get<std::vector<double>>();
    }
    plan.params.master_seed = config.master_seed;
    return plan;
}

}  // namespace

CliConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(json_text);
    } catch (const ordered_json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
    static const std::vector<std::string> known = {
        "master_seed", "output_dir", "variant_dir", "template_file",
        "datasets",    "endpoints",  "attacker_endpoint", "plan",
    };
    reject_unknown_keys(doc, known, "config root");

    CliConfig config;
    if (!doc.contains("master_seed"))
        throw ConfigError("master_seed is mandatory; runs must be replayable");
    if (!doc.at("master_seed").is_number_unsigned())
        throw ConfigError("master_seed must be a non-negative integer");
    config.master_seed = doc.at("master_seed").get<std::uint64_t>();

    if (doc.contains("output_dir"))
        config.output_dir = doc.at("output_dir").get<std::string>();
    config.output_dir = resolve(base_dir, config.output_dir);
    if (doc.contains("variant_dir"))
        config.variant_dir = resolve(base_dir, doc.at("variant_dir").get<std::string>());
    else
        config.variant_dir = config.output_dir / "variants";
    if (doc.contains("template_file"))
        config.template_file = resolve(base_dir, doc.at("template_file").get<std::string>());

    if (!doc.contains("datasets") || doc.at("datasets").empty())
        throw ConfigError("config needs at least one dataset");
    std::set<std::string> dataset_names;
    for (const auto& entry : doc.at("datasets")) {
        DatasetRef ref = parse_dataset_ref(entry.get<std::string>(), base_dir);
        if (!dataset_names.insert(ref.name).second)
            throw ConfigError("dataset name '" + ref.name + "' appears twice");
        config.datasets.push_back(std::move(ref));
    }

    if (!doc.contains("endpoints") || doc.at("endpoints").empty())
        throw ConfigError("config needs at least one endpoint");
    for (const auto& [name, node] : doc.at("endpoints").items()) {
        if (name.empty()) throw ConfigError("endpoint handles cannot be empty");
        ModelEndpoint ep = detail::endpoint_from_json(node);
        ep.name = name;  // the handle wins over any embedded name
        config.endpoints.emplace(name, std::move(ep));
    }

    if (doc.contains("attacker_endpoint")) {
        config.attacker_endpoint = doc.at("attacker_endpoint").get<std::string>();
        if (!config.attacker_endpoint.empty() &&
            !config.endpoints.count(config.attacker_endpoint))
            throw ConfigError("attacker_endpoint '" + config.attacker_endpoint +
                              "' is not a configured endpoint");
    }

    config.plan = parse_plan(doc.contains("plan") ? doc.at("plan") : ordered_json::object(),
                             config);
    return config;
}

CliConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str(), path.has_parent_path() ? path.parent_path()
                                                             : std::filesystem::path("."));
}

std::map<std::string, Catalog> load_config_catalogs(const CliConfig& config) {
    std::map<std::string, Catalog> catalogs;
    for (const DatasetRef& ref : config.datasets) {
        Catalog catalog = ref.path.empty() ? load_builtin(ref.name)
                                           : load_catalog_file(ref.path.string());
        catalogs.emplace(ref.name, std::move(catalog));
    }
    return catalogs;
}

std::vector<std::string> validate_config(const CliConfig& config) {
    std::vector<std::string> diagnostics;

    std::map<std::string, Catalog> catalogs;
    for (const DatasetRef& ref : config.datasets) {
        try {
            Catalog catalog = ref.path.empty() ? load_builtin(ref.name)
                                               : load_catalog_file(ref.path.string());
            catalogs.emplace(ref.name, std::move(catalog));
        } catch (const Error& e) {
            diagnostics.push_back("dataset '" + ref.name + "': " + e.what());
        }
    }

    if (!config.template_file.empty()) {
        try {
            std::ifstream in(config.template_file, std::ios::binary);
            if (!in)
                throw ConfigError("cannot read template file " + config.template_file.string());
            std::ostringstream buffer;
            buffer << in.rdbuf();
            TemplateSet::from_json(buffer.str());
        } catch (const Error& e) {
            diagnostics.push_back(std::string("templates: ") + e.what());
        }
    }

    std::set<std::string> needed_endpoints(config.plan.endpoint_names.begin(),
                                           config.plan.endpoint_names.end());
    if (!config.attacker_endpoint.empty()) needed_endpoints.insert(config.attacker_endpoint);
    for (const std::string& name : needed_endpoints) {
        const auto it = config.endpoints.find(name);
        if (it == config.endpoints.end()) continue;  // validate_plan reports unknown names
        const ModelEndpoint& ep = it->second;
        if (ep.profile == EndpointProfile::mock) {
            if (!ep.mock) {
                diagnostics.push_back("endpoint '" + name +
                                      "': mock profile needs a mock section");
                continue;
            }
            for (const auto& [ds, catalog] : catalogs) {
                try {
                    validate_mock_config(*ep.mock, catalog.products.size());
                } catch (const Error& e) {
                    diagnostics.push_back("endpoint '" + name + "' with dataset '" + ds +
                                          "': " + e.what());
                }
            }
        } else {
            if (ep.base_url.empty())
                diagnostics.push_back("endpoint '" + name + "': base_url is required");
            if (ep.model_id.empty())
                diagnostics.push_back("endpoint '" + name + "': model_id is required");
            if (!ep.auth_env.empty() && std::getenv(ep.auth_env.c_str()) == nullptr)
                diagnostics.push_back("endpoint '" + name + "': environment variable " +
                                      ep.auth_env + " is not set");
        }
    }

    bool any_generated = false;
    for (const auto& [bias, mode] : config.plan.attacks)
        if (mode == ConditionMode::generated) any_generated = true;
    if (any_generated && !config.attacker_endpoint.empty() &&
        !config.endpoints.count(config.attacker_endpoint))
        diagnostics.push_back("attacker_endpoint '" + config.attacker_endpoint +
                              "' is not a configured endpoint");

    if (diagnostics.empty()) {
        // Plan checks need loaded catalogs, so they only run once those are clean.
        RunnerContext ctx;
        ctx.catalogs = std::move(catalogs);
        ctx.endpoints = config.endpoints;
        VariantStore probe(config.variant_dir);
        ctx.variants = &probe;
        try {
            validate_plan(config.plan, ctx);
        } catch (const Error& e) {
            diagnostics.push_back(std::string("plan: ") + e.what());
        }
    }
    return diagnostics;
}

}  // namespace biasrec
