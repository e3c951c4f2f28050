#include "biasrec/variant_store.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "biasrec/errors.hpp"
#include "biasrec/text.hpp"

namespace fs = std::filesystem;

namespace biasrec {
namespace {

void require_path_safe(std::string_view part, std::string_view what) {
    if (part.empty()) throw ArchiveError(std::string(what) + " must not be empty");
    for (char c : part) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ||
                        c == '.';
        if (!ok || part == "." || part == "..")
            throw ArchiveError(std::string(what) + " '" + std::string(part) +
                               "' is not a safe file name");
    }
}

std::string index_name(int index) {
    if (index < 0 || index > 999) throw ArchiveError("variant index out of range");
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%03d.txt", index);
    return buf;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_exact(const fs::path& path, std::string_view text, std::string_view what) {
    if (fs::exists(path)) {
        if (read_file(path) == text) return;
        throw ArchiveError(std::string(what) + " " + path.string() +
                           " already exists with different content");
    }
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArchiveError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.close();
    if (!out) throw ArchiveError("write failed for " + path.string());
}

int count_prefix(const fs::path& dir) {
    int count = 0;
    while (fs::exists(dir / index_name(count))) ++count;
    if (fs::exists(dir)) {
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string name = entry.path().filename().string();
            if (name.size() == 7 && name.ends_with(".txt")) {
                const int idx = std::stoi(name.substr(0, 3));
                if (idx >= count)
                    throw ArchiveError("variant files in " + dir.string() +
                                       " have a gap before index " + std::to_string(idx));
            }
        }
    }
    return count;
}

}  // namespace

VariantStore::VariantStore(fs::path root) : root_(std::move(root)) {}

fs::path VariantStore::variant_path(std::string_view dataset, BiasKind bias,
                                    std::string_view target_id, int index) const {
    require_path_safe(dataset, "dataset name");
    require_path_safe(target_id, "product id");
    return root_ / dataset / bias_name(bias) / target_id / index_name(index);
}

fs::path VariantStore::paraphrase_path(std::string_view dataset, std::string_view product_id,
                                       int index) const {
    require_path_safe(dataset, "dataset name");
    require_path_safe(product_id, "product id");
    return root_ / dataset / "_paraphrase" / product_id / index_name(index);
}

bool VariantStore::has_variant(std::string_view dataset, BiasKind bias,
                               std::string_view target_id, int index) const {
    return fs::exists(variant_path(dataset, bias, target_id, index));
}

std::string VariantStore::load_variant(std::string_view dataset, BiasKind bias,
                                       std::string_view target_id, int index) const {
    const fs::path path = variant_path(dataset, bias, target_id, index);
    if (!fs::exists(path)) throw ArchiveError("no stored variant at " + path.string());
    return read_file(path);
}

void VariantStore::save_variant(std::string_view dataset, BiasKind bias,
                                std::string_view target_id, int index, std::string_view text) {
    if (trim(text).empty()) throw ArchiveError("refusing to store an empty variant");
    write_exact(variant_path(dataset, bias, target_id, index), text, "variant");
}

int VariantStore::variant_count(std::string_view dataset, BiasKind bias,
                                std::string_view target_id) const {
    return count_prefix(variant_path(dataset, bias, target_id, 0).parent_path());
}

bool VariantStore::has_paraphrase(std::string_view dataset, std::string_view product_id,
                                  int index) const {
    return fs::exists(paraphrase_path(dataset, product_id, index));
}

std::string VariantStore::load_paraphrase(std::string_view dataset, std::string_view product_id,
                                          int index) const {
    const fs::path path = paraphrase_path(dataset, product_id, index);
    if (!fs::exists(path)) throw ArchiveError("no stored paraphrase at " + path.string());
    return read_file(path);
}

void VariantStore::save_paraphrase(std::string_view dataset, std::string_view product_id,
                                   int index, std::string_view text) {
    if (trim(text).empty()) throw ArchiveError("refusing to store an empty paraphrase");
    write_exact(paraphrase_path(dataset, product_id, index), text, "paraphrase");
}

std::filesystem::path VariantStore::validation_path(std::string_view dataset,
                                                    BiasKind bias) const {
    require_path_safe(dataset, "dataset name");
    return root_ / dataset / bias_name(bias) / "validation.jsonl";
}

void VariantStore::append_validation_line(std::string_view dataset, BiasKind bias,
                                          std::string_view json_line) {
    const fs::path path = validation_path(dataset, bias);
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw ArchiveError("cannot append to " + path.string());
    out.write(json_line.data(), static_cast<std::streamsize>(json_line.size()));
    out.put('\n');
    if (!out) throw ArchiveError("write failed for " + path.string());
}

}  // namespace biasrec
