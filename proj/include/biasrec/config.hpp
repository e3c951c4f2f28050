#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "biasrec/catalog.hpp"
#include "biasrec/gateway.hpp"
#include "biasrec/runner.hpp"

namespace biasrec {

// A dataset is either one of the bundled catalogs (referenced by name) or an
// external catalog file; the file stem becomes its name.
struct DatasetRef {
    std::string name;
    std::filesystem::path path;  // empty for bundled datasets
};

// One JSON document drives every command: endpoints (secrets referenced by
// environment variable name, never stored), datasets, the execution plan,
// and the output layout. master_seed is mandatory so every run is replayable.
struct CliConfig {
    std::uint64_t master_seed = 0;
    std::filesystem::path output_dir = "out";
    std::filesystem::path variant_dir;         // default: output_dir / "variants"
    std::filesystem::path template_file;       // empty = embedded templates
    std::vector<DatasetRef> datasets;
    std::map<std::string, ModelEndpoint> endpoints;  // keyed by handle
    std::string attacker_endpoint;             // empty = deterministic builtin attacker
    ExperimentPlan plan;
};

CliConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir);
CliConfig load_config(const std::filesystem::path& path);

// Loads and validates every referenced catalog; throws on the first failure.
std::map<std::string, Catalog> load_config_catalogs(const CliConfig& config);

// Collects every problem a run would hit: unloadable or invalid catalogs,
// template assets, plan consistency, unresolvable secret env vars. A clean
// config yields an empty list.
std::vector<std::string> validate_config(const CliConfig& config);

}  // namespace biasrec
