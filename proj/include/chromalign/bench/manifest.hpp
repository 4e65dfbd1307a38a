#pragma once

// Benchmark manifests: source images to edit and (source, colour) tasks.
// Paths are relative to base_dir, which is the manifest file's directory or
// the dataset root; base_dir itself is never serialized.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalign/core/error.hpp"
#include "chromalign/core/hash.hpp"

namespace chromalign {

// A dataset or run that deviates from its manifest; every deviation is listed.
class DatasetError : public Error {
public:
    DatasetError(const std::string& what, std::vector<std::string> deviations)
        : Error(format(what, deviations)), deviations_(std::move(deviations)) {}
    const std::vector<std::string>& deviations() const noexcept { return deviations_; }

private:
    static std::string format(const std::string& what, const std::vector<std::string>& d) {
        std::string s = what;
        for (const auto& x : d) s += "\n  - " + x;
        return s;
    }
    std::vector<std::string> deviations_;
};

inline constexpr const char* kManifestSchema = "chromalign.manifest/1";

struct SourceEntry {
    std::string id;
    std::string subject;
    std::string prompt;
    int template_index = -1;            // generated sets only
    std::optional<std::uint64_t> seed;  // generated sets only
    std::string image_path;             // where the source image lives (or will be written)
    std::string mask_path;              // empty when masks come from the run
};

struct TaskEntry {
    std::string id;
    std::string source_id;
    std::string subject;
    std::string prompt;
    std::string color;
    std::string source_path;
    std::string mask_path;
    std::string reference_path;  // ground-truth edit, when the dataset has one
};

struct Manifest {
    std::string kind;  // "generated" | "colorbench"
    nlohmann::json provenance = nlohmann::json::object();
    std::vector<SourceEntry> sources;
    std::vector<TaskEntry> tasks;
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const std::string& rel) const { return rel.empty() ? std::filesystem::path{} : base_dir / rel; }
};

inline nlohmann::json manifest_to_json(const Manifest& m) {
    nlohmann::json sources = nlohmann::json::array(), tasks = nlohmann::json::array();
    for (const auto& s : m.sources) {
        nlohmann::json j = {{"id", s.id}, {"subject", s.subject}, {"prompt", s.prompt}, {"image_path", s.image_path}};
        if (s.template_index >= 0) j["template_index"] = s.template_index;
        if (s.seed) j["seed"] = *s.seed;
        if (!s.mask_path.empty()) j["mask_path"] = s.mask_path;
        sources.push_back(std::move(j));
    }
    for (const auto& t : m.tasks) {
        nlohmann::json j = {{"id", t.id},         {"source_id", t.source_id},     {"subject", t.subject},
                            {"prompt", t.prompt}, {"color", t.color},             {"source_path", t.source_path}};
        if (!t.mask_path.empty()) j["mask_path"] = t.mask_path;
        if (!t.reference_path.empty()) j["reference_path"] = t.reference_path;
        tasks.push_back(std::move(j));
    }
    return {{"schema", kManifestSchema}, {"kind", m.kind}, {"provenance", m.provenance},
            {"counts", {{"sources", m.sources.size()}, {"tasks", m.tasks.size()}}},
            {"sources", sources}, {"tasks", tasks}};
}

// Canonical text: sorted keys (nlohmann objects are ordered maps), 2-space indent.
inline std::string manifest_text(const Manifest& m) { return manifest_to_json(m).dump(2) + "\n"; }

inline std::string manifest_hash(const Manifest& m) { return sha256_hex(manifest_text(m)); }

inline Manifest manifest_from_json(const nlohmann::json& j, std::filesystem::path base_dir = {}) {
    if (!j.is_object() || j.value("schema", std::string()) != kManifestSchema)
        throw StructuralError("schema", std::string("expected ") + kManifestSchema);
    Manifest m;
    m.kind = j.value("kind", std::string());
    m.provenance = j.value("provenance", nlohmann::json::object());
    m.base_dir = std::move(base_dir);
    try {
        for (const auto& s : j.at("sources")) {
            SourceEntry e;
            e.id = s.at("id").get<std::string>();
            e.subject = s.at("subject").get<std::string>();
            e.prompt = s.at("prompt").get<std::string>();
            e.template_index = s.value("template_index", -1);
            if (s.contains("seed")) e.seed = s.at("seed").get<std::uint64_t>();
            e.image_path = s.value("image_path", std::string());
            e.mask_path = s.value("mask_path", std::string());
            m.sources.push_back(std::move(e));
        }
        for (const auto& t : j.at("tasks")) {
            TaskEntry e;
            e.id = t.at("id").get<std::string>();
            e.source_id = t.at("source_id").get<std::string>();
            e.subject = t.at("subject").get<std::string>();
            e.prompt = t.at("prompt").get<std::string>();
            e.color = t.at("color").get<std::string>();
            e.source_path = t.at("source_path").get<std::string>();
            e.mask_path = t.value("mask_path", std::string());
            e.reference_path = t.value("reference_path", std::string());
            m.tasks.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError("tasks", e.what());
    }
    return m;
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write manifest " + file.string());
    out << manifest_text(m);
}

inline Manifest load_manifest(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw NotFoundError("manifest " + file.string() + " not found");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError("$", std::string("manifest is not valid JSON: ") + e.what());
    }
    return manifest_from_json(j, file.parent_path());
}

}  // namespace chromalign
