#include "biasrec/report.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "biasrec/errors.hpp"

namespace biasrec {

std::string csv_escape(std::string_view field) {
    const bool needs_quotes = field.find_first_of(",\"\n\r") != std::string_view::npos;
    if (!needs_quotes) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

std::string format_double(double value) {
    char buf[40];
    for (int precision : {15, 16, 17}) {
        std::snprintf(buf, sizeof(buf), "%.*g", precision, value);
        if (std::strtod(buf, nullptr) == value) break;
    }
    return buf;
}

namespace {

void require_sealed(const Archive& archive) {
    if (!archive.sealed())
        throw ArchiveError("archive at " + archive.dir().string() +
                           " is not sealed; finish the runs or resume first");
}

std::string flag(bool value) {
    return value ? "1" : "0";
}

std::string opt_double(const std::optional<double>& value) {
    return value ? format_double(*value) : std::string();
}

std::string cell_delta(const AggregateCell& cell) {
    return cell.mean_delta ? format_double(*cell.mean_delta) : std::string("N/A");
}

struct ArchiveView {
    double alpha = 0.05;
    std::map<std::string, Catalog> catalogs;
    struct Item {
        Condition condition;
        std::vector<RunRecord> control;
        std::vector<RunRecord> post;
        int runs = 0;
    };
    std::vector<Item> items;  // manifest order, complete attacked conditions only
};

Condition view_control_for(const Condition& attacked) {
    Condition control;
    control.dataset = attacked.dataset;
    control.endpoint_name = attacked.endpoint_name;
    control.model_id = attacked.model_id;
    control.thinking = attacked.thinking;
    control.defense = attacked.defense;
    return control;
}

ArchiveView gather(const Archive& archive) {
    require_sealed(archive);
    const nlohmann::ordered_json& manifest = archive.manifest();
    ArchiveView view;
    view.alpha = manifest.at("params").at("alpha").get<double>();
    for (const auto& [name, node] : manifest.at("catalogs").items())
        view.catalogs.emplace(name, parse_catalog(node.dump()));

    std::map<std::string, std::vector<RunRecord>> grouped;
    for (const RunRecord& r : archive.records()) grouped[r.condition].push_back(r);

    for (const auto& node : manifest.at("conditions")) {
        Condition condition;
        condition.dataset = node.at("dataset").get<std::string>();
        condition.endpoint_name = node.at("endpoint").get<std::string>();
        condition.model_id = node.at("model_id").get<std::string>();
        condition.thinking = node.at("thinking").get<bool>();
        condition.defense = node.at("defense").get<bool>();
        condition.mode = condition_mode_from_name(node.at("mode").get<std::string>());
        if (!node.at("bias").is_null())
            condition.bias = bias_from_name(node.at("bias").get<std::string>());
        condition.target_id = node.at("target").get<std::string>();
        condition.half_price = node.at("half_price").get<bool>();
        if (!node.at("rating_delta").is_null())
            condition.rating_delta = node.at("rating_delta").get<double>();
        if (condition.is_control()) continue;
        const auto post_it = grouped.find(condition.key());
        const auto control_it = grouped.find(view_control_for(condition).key());
        if (post_it == grouped.end() || control_it == grouped.end()) continue;
        if (post_it->second.empty() || post_it->second.size() != control_it->second.size())
            continue;
        ArchiveView::Item item;
        item.condition = condition;
        item.control = control_it->second;
        item.post = post_it->second;
        item.runs = static_cast<int>(item.post.size());
        view.items.push_back(std::move(item));
    }
    return view;
}

std::vector<ComparisonRow> rows_for(const ArchiveView& view, const ArchiveView::Item& item) {
    const Catalog& catalog = view.catalogs.at(item.condition.dataset);
    std::vector<ComparisonRow> rows;
    rows.reserve(catalog.products.size());
    for (const Product& product : catalog.products)
        rows.push_back(compare(product_stats(item.control, product.id, item.runs),
                               product_stats(item.post, product.id, item.runs), view.alpha));
    return rows;
}

ComparisonRow row_for_target(const ArchiveView& view, const ArchiveView::Item& item) {
    return compare(product_stats(item.control, item.condition.target_id, item.runs),
                   product_stats(item.post, item.condition.target_id, item.runs), view.alpha);
}

std::string wildcard_key(const Condition& condition) {
    Condition wildcard = condition;
    wildcard.target_id = "*";
    return wildcard.key();
}

std::string bias_label(const std::optional<BiasKind>& bias) {
    return bias ? std::string(bias_name(*bias)) : std::string("none");
}

}  // namespace

std::vector<GridRow> build_grid(const Archive& archive) {
    const ArchiveView view = gather(archive);

    std::vector<GridRow> grid;
    std::map<std::string, std::size_t> index_by_key;
    std::vector<std::vector<ComparisonRow>> rows_by_cell;

    for (const ArchiveView::Item& item : view.items) {
        if (item.condition.target_id.empty()) continue;
        const std::string cell_key = wildcard_key(item.condition);
        auto it = index_by_key.find(cell_key);
        if (it == index_by_key.end()) {
            GridRow row;
            row.dataset = item.condition.dataset;
            row.model_id = item.condition.model_id;
            row.thinking = item.condition.thinking;
            row.defense = item.condition.defense;
            row.bias = item.condition.bias;
            row.mode = item.condition.mode;
            row.half_price = item.condition.half_price;
            row.rating_delta = item.condition.rating_delta;
            row.audit_key = cell_key;
            it = index_by_key.emplace(cell_key, grid.size()).first;
            grid.push_back(std::move(row));
            rows_by_cell.emplace_back();
        }
        rows_by_cell[it->second].push_back(row_for_target(view, item));
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid[i].rate_cell = aggregate(rows_by_cell[i], MetricKind::rate);
        grid[i].pos_cell = aggregate(rows_by_cell[i], MetricKind::pos);
        grid[i].outcome = classify_outcome(grid[i].rate_cell, grid[i].pos_cell);
        grid[i].targets = static_cast<int>(rows_by_cell[i].size());
    }
    return grid;
}

std::string grid_csv(const Archive& archive) {
    const std::vector<GridRow> grid = build_grid(archive);
    std::string out =
        "dataset,model,thinking,defense,bias,mode,half_price,rating_delta,metric,"
        "mean_delta,num_significant,targets,classification,audit\n";
    for (const GridRow& row : grid) {
        for (MetricKind metric : {MetricKind::rate, MetricKind::pos}) {
            const AggregateCell& cell = metric == MetricKind::rate ? row.rate_cell : row.pos_cell;
            out += csv_escape(row.dataset) + ',';
            out += csv_escape(row.model_id) + ',';
            out += flag(row.thinking) + ',';
            out += flag(row.defense) + ',';
            out += bias_label(row.bias) + ',';
            out += std::string(condition_mode_name(row.mode)) + ',';
            out += flag(row.half_price) + ',';
            out += opt_double(row.rating_delta) + ',';
            out += std::string(metric_name(metric)) + ',';
            out += cell_delta(cell) + ',';
            out += std::to_string(cell.num_significant) + ',';
            out += std::to_string(row.targets) + ',';
            out += std::string(outcome_name(row.outcome)) + ',';
            out += csv_escape(row.audit_key) + '\n';
        }
    }
    return out;
}

std::string per_product_csv(const Archive& archive) {
    const ArchiveView view = gather(archive);
    std::string out =
        "dataset,model,thinking,defense,bias,mode,target,product_id,product_name,runs,"
        "rec_before,rec_after,rate_before,rate_after,delta_rate,p_rate,sig_rate,"
        "pos_mean_before,pos_sd_before,pos_mean_after,pos_sd_after,delta_pos,p_pos,sig_pos,"
        "attacked,audit\n";
    for (const ArchiveView::Item& item : view.items) {
        const Catalog& catalog = view.catalogs.at(item.condition.dataset);
        const std::vector<ComparisonRow> rows = rows_for(view, item);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const ComparisonRow& row = rows[i];
            out += csv_escape(item.condition.dataset) + ',';
            out += csv_escape(item.condition.model_id) + ',';
            out += flag(item.condition.thinking) + ',';
            out += flag(item.condition.defense) + ',';
            out += bias_label(item.condition.bias) + ',';
            out += std::string(condition_mode_name(item.condition.mode)) + ',';
            out += csv_escape(item.condition.target_id) + ',';
            out += csv_escape(row.product_id) + ',';
            out += csv_escape(catalog.products[i].name) + ',';
            out += std::to_string(row.pre.runs) + ',';
            out += std::to_string(row.pre.rec_count) + ',';
            out += std::to_string(row.post.rec_count) + ',';
            out += format_double(row.pre.rate_pct) + ',';
            out += format_double(row.post.rate_pct) + ',';
            out += format_double(row.delta_rate) + ',';
            out += format_double(row.p_rate) + ',';
            out += flag(row.sig_rate) + ',';
            out += opt_double(row.pre.pos_mean) + ',';
            out += opt_double(row.pre.pos_sd) + ',';
            out += opt_double(row.post.pos_mean) + ',';
            out += opt_double(row.post.pos_sd) + ',';
            out += opt_double(row.delta_pos) + ',';
            out += opt_double(row.p_pos) + ',';
            out += flag(row.sig_pos) + ',';
            out += flag(row.product_id == item.condition.target_id) + ',';
            out += csv_escape(item.condition.key()) + '\n';
        }
    }
    return out;
}

std::string mrr_csv(const Archive& archive) {
    const ArchiveView view = gather(archive);
    std::string out =
        "dataset,model,thinking,defense,bias,mode,target,product_id,mrr_before,mrr_after,"
        "audit\n";
    for (const ArchiveView::Item& item : view.items) {
        const Catalog& catalog = view.catalogs.at(item.condition.dataset);
        for (const Product& product : catalog.products) {
            const ProductStats before = product_stats(item.control, product.id, item.runs);
            const ProductStats after = product_stats(item.post, product.id, item.runs);
            out += csv_escape(item.condition.dataset) + ',';
            out += csv_escape(item.condition.model_id) + ',';
            out += flag(item.condition.thinking) + ',';
            out += flag(item.condition.defense) + ',';
            out += bias_label(item.condition.bias) + ',';
            out += std::string(condition_mode_name(item.condition.mode)) + ',';
            out += csv_escape(item.condition.target_id) + ',';
            out += csv_escape(product.id) + ',';
            out += format_double(before.mrr) + ',';
            out += format_double(after.mrr) + ',';
            out += csv_escape(item.condition.key()) + '\n';
        }
    }
    return out;
}

std::string top1_csv(const Archive& archive) {
    const ArchiveView view = gather(archive);
    std::string out =
        "dataset,model,thinking,defense,bias,mode,target,modal_before,modal_after,"
        "flipped_products,flip_count,audit\n";
    for (const ArchiveView::Item& item : view.items) {
        const Catalog& catalog = view.catalogs.at(item.condition.dataset);
        const Top1Result top1 = top1_flips(item.control, item.post, catalog.ids());
        std::string flipped;
        for (const auto& [id, is_flip] : top1.flags) {
            if (!is_flip) continue;
            if (!flipped.empty()) flipped += ';';
            flipped += id;
        }
        out += csv_escape(item.condition.dataset) + ',';
        out += csv_escape(item.condition.model_id) + ',';
        out += flag(item.condition.thinking) + ',';
        out += flag(item.condition.defense) + ',';
        out += bias_label(item.condition.bias) + ',';
        out += std::string(condition_mode_name(item.condition.mode)) + ',';
        out += csv_escape(item.condition.target_id) + ',';
        out += csv_escape(top1.modal_pre.value_or("")) + ',';
        out += csv_escape(top1.modal_post.value_or("")) + ',';
        out += csv_escape(flipped) + ',';
        out += std::to_string(top1.flip_count) + ',';
        out += csv_escape(item.condition.key()) + '\n';
    }
    return out;
}

std::string discounts_csv(const Archive& archive, const VariantStore& store) {
    require_sealed(archive);
    const nlohmann::ordered_json& manifest = archive.manifest();
    std::string out =
        "dataset,bias,considered,with_value,missing,mean_pct,sd_pct,median_pct\n";
    bool any = false;
    for (const auto& [dataset, node] : manifest.at("catalogs").items()) {
        const std::filesystem::path path = store.root() / dataset /
                                           std::string(bias_name(BiasKind::discount_framing)) /
                                           "validation.jsonl";
        if (!std::filesystem::exists(path)) continue;
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ArchiveError("cannot read " + path.string());
        std::vector<std::optional<double>> percentages;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            nlohmann::json record;
            try {
                record = nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error& e) {
                throw ArchiveError("corrupt validation line in " + path.string() + ": " +
                                   e.what());
            }
            if (record.contains("discount_pct") && !record.at("discount_pct").is_null())
                percentages.emplace_back(record.at("discount_pct").get<double>());
            else
                percentages.emplace_back(std::nullopt);
        }
        if (percentages.empty()) continue;
        any = true;
        int with_value = 0;
        for (const auto& p : percentages)
            if (p) ++with_value;
        out += csv_escape(dataset) + ',';
        out += std::string(bias_name(BiasKind::discount_framing)) + ',';
        out += std::to_string(percentages.size()) + ',';
        out += std::to_string(with_value) + ',';
        out += std::to_string(percentages.size() - static_cast<std::size_t>(with_value)) + ',';
        if (with_value > 0) {
            const DiscountDistribution dist = discount_distribution(percentages);
            out += format_double(dist.mean) + ',';
            out += format_double(dist.sd) + ',';
            out += format_double(dist.median) + '\n';
        } else {
            out += ",,\n";
        }
    }
    if (!any)
        throw ArchiveError("no discount validation data under " + store.root().string() +
                           "; generate discount variants first");
    return out;
}

}  // namespace biasrec
