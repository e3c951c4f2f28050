#include "biasrec/runner.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "biasrec/prompt.hpp"
#include "biasrec/ranking.hpp"
#include "biasrec/rng.hpp"
#include "endpoint_json.hpp"

namespace fs = std::filesystem;

namespace biasrec {

namespace {

constexpr int kArchiveFormatVersion = 1;

std::string format_delta(double delta) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", delta);
    return buf;
}

}  // namespace

std::string_view condition_mode_name(ConditionMode mode) {
    switch (mode) {
        case ConditionMode::control: return "control";
        case ConditionMode::expert: return "expert";
        case ConditionMode::generated: return "generated";
    }
    throw ConfigError("unreachable condition mode");
}

ConditionMode condition_mode_from_name(std::string_view name) {
    if (name == "control") return ConditionMode::control;
    if (name == "expert") return ConditionMode::expert;
    if (name == "generated") return ConditionMode::generated;
    throw ConfigError("unknown condition mode '" + std::string(name) + "'");
}

std::string Condition::key() const {
    std::string out = "ds=" + dataset;
    out += "|model=" + model_id;
    out += "|think=";
    out += thinking ? '1' : '0';
    out += "|def=";
    out += defense ? '1' : '0';
    out += "|mode=";
    out += condition_mode_name(mode);
    out += "|bias=";
    out += bias ? bias_name(*bias) : std::string_view("none");
    out += "|target=";
    out += target_id.empty() ? "none" : target_id;
    out += "|half=";
    out += half_price ? '1' : '0';
    out += "|rdelta=";
    out += rating_delta ? format_delta(*rating_delta) : "none";
    return out;
}

std::uint64_t condition_run_seed(std::uint64_t master_seed, std::string_view condition_key,
                                 int run_index) {
    return hash_combine(hash_combine(master_seed, condition_key),
                        static_cast<std::uint64_t>(run_index));
}

namespace {

nlohmann::ordered_json condition_to_json(const Condition& c) {
    nlohmann::ordered_json out;
    out["key"] = c.key();
    out["dataset"] = c.dataset;
    out["endpoint"] = c.endpoint_name;
    out["model_id"] = c.model_id;
    out["thinking"] = c.thinking;
    out["defense"] = c.defense;
    out["mode"] = std::string(condition_mode_name(c.mode));
    if (c.bias)
        out["bias"] = std::string(bias_name(*c.bias));
    else
        out["bias"] = nullptr;
    out["target"] = c.target_id;
    out["half_price"] = c.half_price;
    if (c.rating_delta)
        out["rating_delta"] = *c.rating_delta;
    else
        out["rating_delta"] = nullptr;
    return out;
}

Condition condition_from_json(const nlohmann::ordered_json& node) {
    Condition c;
    c.dataset = node.at("dataset").get<std::string>();
    c.endpoint_name = node.at("endpoint").get<std::string>();
    c.model_id = node.at("model_id").get<std::string>();
    c.thinking = node.at("thinking").get<bool>();
    c.defense = node.at("defense").get<bool>();
    c.mode = condition_mode_from_name(node.at("mode").get<std::string>());
    if (!node.at("bias").is_null()) c.bias = bias_from_name(node.at("bias").get<std::string>());
    c.target_id = node.at("target").get<std::string>();
    c.half_price = node.at("half_price").get<bool>();
    if (!node.at("rating_delta").is_null()) c.rating_delta = node.at("rating_delta").get<double>();
    const std::string recorded = node.at("key").get<std::string>();
    if (recorded != c.key())
        throw ArchiveError("manifest condition key '" + recorded +
                           "' does not match its own fields");
    return c;
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file_atomic(const fs::path& path, std::string_view text) {
    const fs::path tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ArchiveError("cannot write " + tmp.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.close();
        if (!out) throw ArchiveError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

}  // namespace

void Archive::write_manifest() const {
    write_text_file_atomic(dir_ / "manifest.json", manifest_.dump(2) + "\n");
}

Archive Archive::create(const fs::path& dir, nlohmann::ordered_json manifest) {
    fs::create_directories(dir);
    if (fs::exists(dir / "manifest.json") || fs::exists(dir / "runs.jsonl"))
        throw ArchiveError("refusing to overwrite the existing archive at " + dir.string());
    Archive archive;
    archive.dir_ = dir;
    archive.manifest_ = std::move(manifest);
    if (!archive.manifest_.contains("format_version"))
        archive.manifest_["format_version"] = kArchiveFormatVersion;
    archive.manifest_["sealed"] = false;
    archive.write_manifest();
    archive.out_.open(dir / "runs.jsonl", std::ios::binary | std::ios::app);
    if (!archive.out_) throw ArchiveError("cannot open " + (dir / "runs.jsonl").string());
    return archive;
}

Archive Archive::open(const fs::path& dir, bool truncate_torn_tail, bool allow_seed_mismatch) {
    Archive archive;
    archive.dir_ = dir;
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path))
        throw ArchiveError("no manifest at " + manifest_path.string());
    try {
        archive.manifest_ = nlohmann::ordered_json::parse(read_text_file(manifest_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ArchiveError("corrupt manifest: " + std::string(e.what()));
    }
    if (archive.manifest_.value("format_version", -1) != kArchiveFormatVersion)
        throw ArchiveError("unsupported archive format version");

    const std::uint64_t master_seed = archive.manifest_.at("master_seed").get<std::uint64_t>();
    const int repetitions = archive.manifest_.at("params").at("repetitions").get<int>();

    std::map<std::string, Condition> conditions;
    std::map<std::string, int> expected_next;
    for (const auto& node : archive.manifest_.at("conditions")) {
        Condition c = condition_from_json(node);
        const std::string key = c.key();
        conditions.emplace(key, std::move(c));
        expected_next[key] = 0;
    }
    std::map<std::string, Catalog> catalogs;
    for (const auto& [name, node] : archive.manifest_.at("catalogs").items())
        catalogs.emplace(name, parse_catalog(node.dump()));

    const fs::path runs_path = dir / "runs.jsonl";
    std::string text = fs::exists(runs_path) ? read_text_file(runs_path) : std::string();
    if (!text.empty() && text.back() != '\n') {
        const std::size_t keep = text.rfind('\n');
        if (!truncate_torn_tail)
            throw ArchiveError("runs.jsonl ends mid-record (torn write); rerun with the "
                               "truncate-torn-tail option to drop the partial line");
        text = keep == std::string::npos ? std::string() : text.substr(0, keep + 1);
        write_text_file_atomic(runs_path, text);
    }

    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        const std::size_t eol = text.find('\n', pos);
        const std::string_view line(text.data() + pos, eol - pos);
        ++line_no;
        RunRecord record;
        try {
            record = run_record_from_json(line);
        } catch (const ArchiveError& e) {
            throw ArchiveError("runs.jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
        const auto cond_it = conditions.find(record.condition);
        if (cond_it == conditions.end())
            throw ArchiveError("record " + record.run_id + " references a condition missing "
                               "from the manifest");
        if (record.run_index < 0 || record.run_index >= repetitions)
            throw ArchiveError("record " + record.run_id + " has run index out of range");
        int& next = expected_next[record.condition];
        if (record.run_index != next)
            throw ArchiveError("records for condition '" + record.condition +
                               "' are not a contiguous prefix: expected index " +
                               std::to_string(next) + ", found " +
                               std::to_string(record.run_index));
        ++next;
        const std::uint64_t expected_seed =
            condition_run_seed(master_seed, record.condition, record.run_index);
        if (record.run_seed != expected_seed && !allow_seed_mismatch)
            throw ArchiveError("seed mismatch for " + record.run_id +
                               ": the manifest master seed does not reproduce the recorded "
                               "run seed; pass the explicit override to proceed");
        const Catalog& catalog = catalogs.at(cond_it->second.dataset);
        {
            std::vector<std::string> perm_sorted = record.permutation;
            std::sort(perm_sorted.begin(), perm_sorted.end());
            std::vector<std::string> ids = catalog.ids();
            std::sort(ids.begin(), ids.end());
            if (perm_sorted != ids)
                throw ArchiveError("record " + record.run_id +
                                   " permutation is not a permutation of the catalog");
        }
        const Ranking reparsed = parse_ranking(record.response_text, catalog);
        if (reparsed.ordered_ids != record.ranking_ids)
            throw ArchiveError("record " + record.run_id +
                               " ranking does not match a reparse of its response text");
        archive.records_.push_back(std::move(record));
        pos = eol + 1;
    }

    archive.out_.open(runs_path, std::ios::binary | std::ios::app);
    if (!archive.out_) throw ArchiveError("cannot open " + runs_path.string());
    return archive;
}

void Archive::append(const RunRecord& record) {
    out_ << run_record_to_json(record) << '\n';
    out_.flush();
    if (!out_) throw ArchiveError("append to runs.jsonl failed");
    records_.push_back(record);
}

std::vector<RunRecord> Archive::records_for(std::string_view condition_key) const {
    std::vector<RunRecord> out;
    for (const RunRecord& r : records_)
        if (r.condition == condition_key) out.push_back(r);
    return out;
}

int Archive::count_for(std::string_view condition_key) const {
    int count = 0;
    for (const RunRecord& r : records_)
        if (r.condition == condition_key) ++count;
    return count;
}

bool Archive::sealed() const {
    return manifest_.value("sealed", false);
}

void Archive::seal() {
    manifest_["sealed"] = true;
    manifest_["total_records"] = records_.size();
    write_manifest();
}

void validate_plan(const ExperimentPlan& plan, const RunnerContext& ctx) {
    if (plan.datasets.empty()) throw ConfigError("plan has no datasets");
    for (const std::string& ds : plan.datasets)
        if (!ctx.catalogs.count(ds)) throw ConfigError("unknown dataset '" + ds + "'");
    if (plan.endpoint_names.empty()) throw ConfigError("plan has no endpoints");
    std::set<std::pair<std::string, bool>> identities;
    for (const std::string& name : plan.endpoint_names) {
        const auto it = ctx.endpoints.find(name);
        if (it == ctx.endpoints.end()) throw ConfigError("unknown endpoint '" + name + "'");
        const ModelEndpoint& ep = it->second;
        if (ep.thinking && !ep.supports_thinking)
            throw ConfigError("endpoint '" + name + "' requests thinking but does not support it");
        if (!identities.emplace(ep.model_id, ep.thinking).second)
            throw ConfigError("endpoints must have distinct (model_id, thinking) identities; '" +
                              ep.model_id + "' appears twice");
    }
    bool any_generated = false;
    for (const auto& [bias, mode] : plan.attacks) {
        if (mode == ConditionMode::control)
            throw ConfigError("attack list entries cannot use control mode");
        if (mode == ConditionMode::expert && !expert_expressible(bias))
            throw ConfigError("'" + std::string(bias_name(bias)) +
                              "' has no expert sentence and cannot run in expert mode");
        if (mode == ConditionMode::generated && !generation_applicable(bias))
            throw ConfigError("'" + std::string(bias_name(bias)) +
                              "' cannot run in generated mode");
        if (mode == ConditionMode::generated) any_generated = true;
    }
    if (any_generated && ctx.variants == nullptr)
        throw ConfigError("generated mode needs a variant store");
    for (const std::string& target : plan.targets)
        for (const std::string& ds : plan.datasets)
            if (ctx.catalogs.at(ds).find(target) == nullptr)
                throw ConfigError("target '" + target + "' is not in dataset '" + ds + "'");
    if (plan.defenses.empty()) throw ConfigError("plan needs at least one defense setting");
    if (plan.defenses.size() > 2 ||
        (plan.defenses.size() == 2 && plan.defenses[0] == plan.defenses[1]))
        throw ConfigError("defense settings must be distinct");
    const ExperimentParams& p = plan.params;
    if (p.repetitions < 1) throw ConfigError("repetitions must be >= 1");
    if (!(p.alpha > 0.0 && p.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
    if (p.variants_per_product < 1) throw ConfigError("variants_per_product must be >= 1");
    if (p.workers < 1) throw ConfigError("workers must be >= 1");
    for (double delta : plan.sweep.rating_deltas)
        if (!(delta > 0.0 && delta <= 5.0))
            throw ConfigError("rating deltas must lie in (0, 5]");
}

std::vector<Condition> conditions_for_plan(const ExperimentPlan& plan,
                                           const std::map<std::string, Catalog>& catalogs) {
    std::vector<Condition> out;
    for (const std::string& ds : plan.datasets) {
        const Catalog& catalog = catalogs.at(ds);
        const std::vector<std::string> targets =
            plan.targets.empty() ? catalog.ids() : plan.targets;
        for (const std::string& ep : plan.endpoint_names) {
            for (bool defense : plan.defenses) {
                Condition control;
                control.dataset = ds;
                control.endpoint_name = ep;
                control.defense = defense;
                out.push_back(control);
                for (const auto& [bias, mode] : plan.attacks) {
                    for (const std::string& target : targets) {
                        Condition c;
                        c.dataset = ds;
                        c.endpoint_name = ep;
                        c.defense = defense;
                        c.mode = mode;
                        c.bias = bias;
                        c.target_id = target;
                        out.push_back(c);
                    }
                }
            }
        }
    }
    return out;
}

namespace {

// model_id and thinking live on the endpoint; conditions created by plan
// expansion get them stamped here so key() is complete.
void stamp_endpoint_identity(std::vector<Condition>& conditions,
                             const std::map<std::string, ModelEndpoint>& endpoints) {
    for (Condition& c : conditions) {
        const auto it = endpoints.find(c.endpoint_name);
        if (it == endpoints.end())
            throw ConfigError("unknown endpoint '" + c.endpoint_name + "'");
        c.model_id = it->second.model_id;
        c.thinking = it->second.thinking;
    }
}

Catalog apply_counterfactuals(Catalog catalog, const Condition& condition) {
    if (condition.half_price)
        catalog = counterfactual_half_price(catalog, condition.target_id).catalog;
    if (condition.rating_delta)
        catalog =
            counterfactual_rating_delta(catalog, condition.target_id, *condition.rating_delta)
                .catalog;
    return catalog;
}

// Catalog actually shown to the model for one variant slot: -1 for the single
// fixed catalog of control/expert conditions, the variant index otherwise.
Catalog catalog_for_variant(const RunnerContext& ctx, const Condition& condition,
                            const Catalog& base, int variant, bool paraphrase_others) {
    switch (condition.mode) {
        case ConditionMode::control:
            return apply_counterfactuals(base, condition);
        case ConditionMode::expert:
            return apply_counterfactuals(
                apply_expert(base, *condition.bias, condition.target_id).catalog, condition);
        case ConditionMode::generated: {
            if (ctx.variants == nullptr)
                throw ConfigError("generated mode needs a variant store");
            Catalog catalog = base;
            for (Product& p : catalog.products) {
                if (p.id == condition.target_id)
                    p.description = ctx.variants->load_variant(condition.dataset,
                                                               *condition.bias,
                                                               condition.target_id, variant);
                else if (paraphrase_others)
                    p.description =
                        ctx.variants->load_paraphrase(condition.dataset, p.id, variant);
            }
            return apply_counterfactuals(std::move(catalog), condition);
        }
    }
    throw ConfigError("unreachable condition mode");
}

}  // namespace

void run_condition(RunnerContext& ctx, Archive& archive, const Condition& condition,
                   const ExperimentParams& params, bool paraphrase_others) {
    if (ctx.gateway == nullptr) throw ConfigError("runner context has no gateway");
    const auto ep_it = ctx.endpoints.find(condition.endpoint_name);
    if (ep_it == ctx.endpoints.end())
        throw ConfigError("unknown endpoint '" + condition.endpoint_name + "'");
    const ModelEndpoint& endpoint = ep_it->second;
    const auto cat_it = ctx.catalogs.find(condition.dataset);
    if (cat_it == ctx.catalogs.end())
        throw ConfigError("unknown dataset '" + condition.dataset + "'");
    const Catalog& base = cat_it->second;
    if (!condition.target_id.empty() && base.find(condition.target_id) == nullptr)
        throw ConfigError("target '" + condition.target_id + "' is not in dataset '" +
                          condition.dataset + "'");
    if ((condition.half_price || condition.rating_delta || condition.mode != ConditionMode::control)
        && condition.target_id.empty())
        throw ConfigError("condition '" + condition.key() + "' needs a target product");

    const std::string key = condition.key();
    const int repetitions = params.repetitions;
    const int existing = archive.count_for(key);
    if (existing >= repetitions) return;

    std::map<int, Catalog> catalogs_by_variant;
    if (condition.mode == ConditionMode::generated) {
        for (int i = existing; i < repetitions; ++i) {
            const int variant = i % params.variants_per_product;
            if (!catalogs_by_variant.count(variant))
                catalogs_by_variant.emplace(
                    variant,
                    catalog_for_variant(ctx, condition, base, variant, paraphrase_others));
        }
    } else {
        catalogs_by_variant.emplace(
            -1, catalog_for_variant(ctx, condition, base, -1, paraphrase_others));
    }

    auto make_record = [&](int run_index) {
        const std::uint64_t seed = condition_run_seed(params.master_seed, key, run_index);
        const int variant = condition.mode == ConditionMode::generated
                                ? run_index % params.variants_per_product
                                : -1;
        const Catalog& catalog = catalogs_by_variant.at(variant);
        std::vector<std::size_t> permutation(catalog.products.size());
        for (std::size_t i = 0; i < permutation.size(); ++i) permutation[i] = i;
        Rng perm_rng(hash_combine(seed, "perm"));
        shuffle(permutation, perm_rng);
        const PromptBundle bundle = build_bundle(catalog, permutation, condition.defense);
        ChatRequest request;
        request.system_prompt = bundle.system_prompt;
        request.user_prompt = bundle.user_prompt;
        request.thinking = endpoint.thinking;
        request.run_seed = seed;
        const ChatResponse response = ctx.gateway->complete(endpoint, request);
        const Ranking ranking = parse_ranking(response.text, catalog);
        RunRecord record;
        record.run_id = key + "#" + std::to_string(run_index);
        record.condition = key;
        record.run_index = run_index;
        record.run_seed = seed;
        record.variant_index = variant;
        record.permutation.reserve(permutation.size());
        for (std::size_t idx : permutation) record.permutation.push_back(catalog.products[idx].id);
        record.response_text = response.text;
        record.ranking_ids = ranking.ordered_ids;
        record.endpoint = condition.endpoint_name;
        record.attempts = response.attempts;
        record.latency_ms = response.latency_ms;
        record.started_unix_ms = response.started_unix_ms;
        record.finished_unix_ms = response.finished_unix_ms;
        return record;
    };

    const int worker_count = std::min(params.workers, repetitions - existing);
    if (worker_count <= 1) {
        for (int i = existing; i < repetitions; ++i) archive.append(make_record(i));
        return;
    }

    // Workers race through the backend calls; the writer persists strictly in
    // run order so an interrupted condition leaves a contiguous prefix.
    std::mutex mutex;
    std::condition_variable cv;
    std::map<int, RunRecord> ready;
    std::exception_ptr first_error;
    std::atomic<bool> stop{false};
    std::atomic<int> next_index{existing};
    int active = worker_count;

    auto worker = [&] {
        for (;;) {
            if (stop.load()) break;
            const int i = next_index.fetch_add(1);
            if (i >= repetitions) break;
            try {
                RunRecord record = make_record(i);
                std::lock_guard<std::mutex> lock(mutex);
                ready.emplace(i, std::move(record));
            } catch (...) {
                std::lock_guard<std::mutex> lock(mutex);
                if (!first_error) first_error = std::current_exception();
                stop.store(true);
            }
            cv.notify_all();
        }
        {
            std::lock_guard<std::mutex> lock(mutex);
            --active;
        }
        cv.notify_all();
    };

    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(worker_count));
    for (int i = 0; i < worker_count; ++i) threads.emplace_back(worker);

    int expected = existing;
    {
        std::unique_lock<std::mutex> lock(mutex);
        while (expected < repetitions) {
            cv.wait(lock, [&] { return ready.count(expected) > 0 || active == 0; });
            while (true) {
                const auto it = ready.find(expected);
                if (it == ready.end()) break;
                RunRecord record = std::move(it->second);
                ready.erase(it);
                lock.unlock();
                archive.append(record);
                lock.lock();
                ++expected;
            }
            if (active == 0 && ready.find(expected) == ready.end()) break;
        }
    }
    stop.store(true);
    cv.notify_all();
    for (std::thread& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

namespace {

nlohmann::ordered_json build_manifest(const ExperimentPlan& plan, const RunnerContext& ctx,
                                      const std::vector<Condition>& conditions) {
    nlohmann::ordered_json m;
    m["format_version"] = kArchiveFormatVersion;
    m["master_seed"] = plan.params.master_seed;
    nlohmann::ordered_json params;
    params["repetitions"] = plan.params.repetitions;
    params["alpha"] = plan.params.alpha;
    params["variants_per_product"] = plan.params.variants_per_product;
    m["params"] = std::move(params);
    nlohmann::ordered_json p;
    p["datasets"] = plan.datasets;
    p["endpoints"] = plan.endpoint_names;
    nlohmann::ordered_json attacks = nlohmann::ordered_json::array();
    for (const auto& [bias, mode] : plan.attacks)
        attacks.push_back(nlohmann::ordered_json::array(
            {std::string(bias_name(bias)), std::string(condition_mode_name(mode))}));
    p["attacks"] = std::move(attacks);
    p["targets"] = plan.targets;
    p["defenses"] = plan.defenses;
    p["paraphrase_others"] = plan.paraphrase_others;
    nlohmann::ordered_json sweep;
    sweep["half_price"] = plan.sweep.half_price;
    sweep["rating_deltas"] = plan.sweep.rating_deltas;
    p["sweep"] = std::move(sweep);
    m["plan"] = std::move(p);
    nlohmann::ordered_json endpoints = nlohmann::ordered_json::object();
    for (const std::string& name : plan.endpoint_names)
        endpoints[name] = detail::endpoint_to_json(ctx.endpoints.at(name));
    m["endpoints"] = std::move(endpoints);
    nlohmann::ordered_json catalogs = nlohmann::ordered_json::object();
    for (const std::string& ds : plan.datasets)
        catalogs[ds] = nlohmann::ordered_json::parse(catalog_to_json(ctx.catalogs.at(ds)));
    m["catalogs"] = std::move(catalogs);
    nlohmann::ordered_json conds = nlohmann::ordered_json::array();
    for (const Condition& c : conditions) conds.push_back(condition_to_json(c));
    m["conditions"] = std::move(conds);
    if (ctx.variants)
        m["variant_root"] = ctx.variants->root().string();
    else
        m["variant_root"] = nullptr;
    return m;
}

Condition control_for(const Condition& attacked) {
    Condition control;
    control.dataset = attacked.dataset;
    control.endpoint_name = attacked.endpoint_name;
    control.model_id = attacked.model_id;
    control.thinking = attacked.thinking;
    control.defense = attacked.defense;
    return control;
}

double mean_of(const std::vector<double>& values) {
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

}  // namespace

MatrixResult analyze_archive(const Archive& archive) {
    const nlohmann::ordered_json& manifest = archive.manifest();
    const double alpha = manifest.at("params").at("alpha").get<double>();
    std::map<std::string, Catalog> catalogs;
    for (const auto& [name, node] : manifest.at("catalogs").items())
        catalogs.emplace(name, parse_catalog(node.dump()));
    std::vector<Condition> conditions;
    for (const auto& node : manifest.at("conditions"))
        conditions.push_back(condition_from_json(node));

    std::map<std::string, std::vector<RunRecord>> grouped;
    for (const RunRecord& r : archive.records()) grouped[r.condition].push_back(r);

    MatrixResult result;
    for (const Condition& condition : conditions) {
        if (condition.is_control()) continue;
        const auto post_it = grouped.find(condition.key());
        if (post_it == grouped.end()) continue;
        const auto control_it = grouped.find(control_for(condition).key());
        if (control_it == grouped.end()) continue;
        const std::vector<RunRecord>& post = post_it->second;
        const std::vector<RunRecord>& control = control_it->second;
        if (post.size() != control.size() || post.empty()) continue;
        const int runs = static_cast<int>(post.size());
        const Catalog& catalog = catalogs.at(condition.dataset);

        ConditionResult cr;
        cr.condition = condition;
        for (const Product& product : catalog.products)
            cr.rows.push_back(compare(product_stats(control, product.id, runs),
                                      product_stats(post, product.id, runs), alpha));
        cr.rate_cell = aggregate(cr.rows, MetricKind::rate);
        cr.pos_cell = aggregate(cr.rows, MetricKind::pos);
        cr.outcome = classify_outcome(cr.rate_cell, cr.pos_cell);
        cr.top1 = top1_flips(control, post, catalog.ids());
        result.conditions.push_back(std::move(cr));
    }
    return result;
}

MatrixResult run_matrix(RunnerContext& ctx, const ExperimentPlan& plan,
                        const fs::path& archive_dir) {
    validate_plan(plan, ctx);
    std::vector<Condition> conditions = conditions_for_plan(plan, ctx.catalogs);
    stamp_endpoint_identity(conditions, ctx.endpoints);
    Archive archive = Archive::create(archive_dir, build_manifest(plan, ctx, conditions));

    std::vector<std::pair<std::string, std::string>> failures;
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        const Condition& condition = conditions[i];
        if (ctx.progress)
            ctx.progress("condition " + std::to_string(i + 1) + "/" +
                         std::to_string(conditions.size()) + ": " + condition.key());
        try {
            run_condition(ctx, archive, condition, plan.params, plan.paraphrase_others);
        } catch (const std::exception& e) {
            failures.emplace_back(condition.key(), e.what());
        }
    }
    if (failures.empty()) archive.seal();

    MatrixResult result = analyze_archive(archive);
    result.failures = std::move(failures);
    return result;
}

namespace {

// Shared scaffolding of the two counterfactual studies: execute the given
// conditions into a fresh archive and hand back per-target comparison rows.
struct StudyExecution {
    Archive archive;
    std::map<std::string, std::vector<RunRecord>> grouped;
    int runs = 0;
};

StudyExecution execute_study(RunnerContext& ctx, const ExperimentPlan& plan,
                             std::vector<Condition> conditions, const fs::path& archive_dir) {
    stamp_endpoint_identity(conditions, ctx.endpoints);
    StudyExecution exec{Archive::create(archive_dir, build_manifest(plan, ctx, conditions)), {}, 0};
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        if (ctx.progress)
            ctx.progress("condition " + std::to_string(i + 1) + "/" +
                         std::to_string(conditions.size()) + ": " + conditions[i].key());
        run_condition(ctx, exec.archive, conditions[i], plan.params, plan.paraphrase_others);
    }
    exec.archive.seal();
    for (const RunRecord& r : exec.archive.records()) exec.grouped[r.condition].push_back(r);
    exec.runs = plan.params.repetitions;
    return exec;
}

ComparisonRow target_row(const StudyExecution& exec, const Condition& condition,
                         const std::string& control_key, double alpha) {
    const std::vector<RunRecord>& control = exec.grouped.at(control_key);
    const std::vector<RunRecord>& post = exec.grouped.at(condition.key());
    return compare(product_stats(control, condition.target_id, exec.runs),
                   product_stats(post, condition.target_id, exec.runs), alpha);
}

StudyArm build_arm(std::vector<ComparisonRow> rows) {
    StudyArm arm;
    arm.target_rows = std::move(rows);
    arm.rate_cell = aggregate(arm.target_rows, MetricKind::rate);
    arm.pos_cell = aggregate(arm.target_rows, MetricKind::pos);
    arm.outcome = classify_outcome(arm.rate_cell, arm.pos_cell);
    return arm;
}

}  // namespace

HalfPriceStudy run_half_price_study(RunnerContext& ctx, const std::string& dataset,
                                    const std::string& endpoint_name,
                                    const ExperimentParams& params, const fs::path& archive_dir,
                                    BiasKind bias, bool defense) {
    if (!expert_expressible(bias))
        throw ConfigError("the discount arm runs the expert attack; '" +
                          std::string(bias_name(bias)) + "' has none");
    ExperimentPlan plan;
    plan.datasets = {dataset};
    plan.endpoint_names = {endpoint_name};
    plan.attacks = {{bias, ConditionMode::expert}};
    plan.defenses = {defense};
    plan.params = params;
    plan.sweep.half_price = true;
    validate_plan(plan, ctx);

    const Catalog& catalog = ctx.catalogs.at(dataset);
    std::vector<Condition> conditions;
    Condition control;
    control.dataset = dataset;
    control.endpoint_name = endpoint_name;
    control.defense = defense;
    conditions.push_back(control);
    std::vector<Condition> half_conditions, attack_conditions;
    for (const std::string& target : catalog.ids()) {
        Condition half = control;
        half.target_id = target;
        half.half_price = true;
        half_conditions.push_back(half);
        Condition attack = control;
        attack.mode = ConditionMode::expert;
        attack.bias = bias;
        attack.target_id = target;
        attack_conditions.push_back(attack);
    }
    conditions.insert(conditions.end(), half_conditions.begin(), half_conditions.end());
    conditions.insert(conditions.end(), attack_conditions.begin(), attack_conditions.end());

    StudyExecution exec = execute_study(ctx, plan, conditions, archive_dir);
    stamp_endpoint_identity(half_conditions, ctx.endpoints);
    stamp_endpoint_identity(attack_conditions, ctx.endpoints);
    Condition stamped_control = control;
    {
        std::vector<Condition> one{stamped_control};
        stamp_endpoint_identity(one, ctx.endpoints);
        stamped_control = one.front();
    }

    HalfPriceStudy study;
    std::vector<ComparisonRow> half_rows, attack_rows;
    for (const Condition& c : half_conditions)
        half_rows.push_back(target_row(exec, c, stamped_control.key(), params.alpha));
    for (const Condition& c : attack_conditions)
        attack_rows.push_back(target_row(exec, c, stamped_control.key(), params.alpha));
    study.half_price = build_arm(std::move(half_rows));
    study.discount_attack = build_arm(std::move(attack_rows));
    return study;
}

RatingSweep run_rating_sweep(RunnerContext& ctx, const std::string& dataset,
                             const std::string& endpoint_name, const ExperimentParams& params,
                             const std::vector<double>& deltas, const fs::path& archive_dir,
                             BiasKind bias, bool defense) {
    if (deltas.empty()) throw ConfigError("rating sweep needs at least one delta");
    if (!expert_expressible(bias))
        throw ConfigError("the sweep runs the expert attack; '" + std::string(bias_name(bias)) +
                          "' has none");
    std::vector<double> sorted = deltas;
    std::sort(sorted.begin(), sorted.end());
    ExperimentPlan plan;
    plan.datasets = {dataset};
    plan.endpoint_names = {endpoint_name};
    plan.attacks = {{bias, ConditionMode::expert}};
    plan.defenses = {defense};
    plan.params = params;
    plan.sweep.rating_deltas = sorted;
    validate_plan(plan, ctx);

    const Catalog& catalog = ctx.catalogs.at(dataset);
    std::vector<Condition> conditions;
    Condition control;
    control.dataset = dataset;
    control.endpoint_name = endpoint_name;
    control.defense = defense;
    conditions.push_back(control);
    std::map<double, std::vector<Condition>> per_delta;
    for (double delta : sorted) {
        for (const std::string& target : catalog.ids()) {
            Condition c = control;
            c.mode = ConditionMode::expert;
            c.bias = bias;
            c.target_id = target;
            c.rating_delta = delta;
            per_delta[delta].push_back(c);
            conditions.push_back(c);
        }
    }

    StudyExecution exec = execute_study(ctx, plan, conditions, archive_dir);
    Condition stamped_control = control;
    {
        std::vector<Condition> one{stamped_control};
        stamp_endpoint_identity(one, ctx.endpoints);
        stamped_control = one.front();
    }

    RatingSweep sweep;
    for (double delta : sorted) {
        std::vector<Condition> conds = per_delta.at(delta);
        stamp_endpoint_identity(conds, ctx.endpoints);
        std::vector<ComparisonRow> rows;
        std::vector<double> diffs;
        for (const Condition& c : conds) {
            ComparisonRow row = target_row(exec, c, stamped_control.key(), params.alpha);
            diffs.push_back(row.delta_rate);
            rows.push_back(std::move(row));
        }
        SweepPoint point;
        point.delta = delta;
        point.mean_rate_diff = mean_of(diffs);
        point.rate_cell = aggregate(rows, MetricKind::rate);
        sweep.points.push_back(point);
    }

    for (std::size_t i = 0; i + 1 < sweep.points.size() && !sweep.zero_crossing; ++i) {
        const double y0 = sweep.points[i].mean_rate_diff;
        const double y1 = sweep.points[i + 1].mean_rate_diff;
        if (y0 == 0.0) {
            sweep.zero_crossing = sweep.points[i].delta;
        } else if ((y0 > 0.0 && y1 < 0.0) || (y0 < 0.0 && y1 > 0.0)) {
            const double x0 = sweep.points[i].delta;
            const double x1 = sweep.points[i + 1].delta;
            sweep.zero_crossing = x0 + (0.0 - y0) * (x1 - x0) / (y1 - y0);
        }
    }
    if (!sweep.zero_crossing && !sweep.points.empty() &&
        sweep.points.back().mean_rate_diff == 0.0)
        sweep.zero_crossing = sweep.points.back().delta;
    return sweep;
}

ResumeOutcome resume(RunnerContext& ctx, const fs::path& archive_dir, bool override_seed_mismatch,
                     bool truncate_torn_tail, int workers) {
    Archive archive = Archive::open(archive_dir, truncate_torn_tail, override_seed_mismatch);
    const nlohmann::ordered_json& manifest = archive.manifest();

    RunnerContext local;
    local.gateway = ctx.gateway;
    local.variants = ctx.variants;
    local.progress = ctx.progress;
    for (const auto& [name, node] : manifest.at("catalogs").items())
        local.catalogs.emplace(name, parse_catalog(node.dump()));
    for (const auto& [name, node] : manifest.at("endpoints").items()) {
        ModelEndpoint ep = detail::endpoint_from_json(node);
        local.endpoints.emplace(name, std::move(ep));
    }

    ExperimentParams params;
    params.master_seed = manifest.at("master_seed").get<std::uint64_t>();
    params.repetitions = manifest.at("params").at("repetitions").get<int>();
    params.alpha = manifest.at("params").at("alpha").get<double>();
    params.variants_per_product = manifest.at("params").at("variants_per_product").get<int>();
    params.workers = std::max(1, workers);
    const bool paraphrase_others = manifest.at("plan").value("paraphrase_others", true);

    ResumeOutcome outcome;
    for (const auto& node : manifest.at("conditions")) {
        const Condition condition = condition_from_json(node);
        const int missing = params.repetitions - archive.count_for(condition.key());
        if (missing <= 0) continue;
        if (local.progress)
            local.progress("resuming " + condition.key() + " (" + std::to_string(missing) +
                           " runs)");
        run_condition(local, archive, condition, params, paraphrase_others);
        outcome.runs_executed += missing;
    }
    if (!archive.sealed()) archive.seal();
    outcome.result = analyze_archive(archive);
    return outcome;
}

}  // namespace biasrec

