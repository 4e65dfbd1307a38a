#pragma once

// Directory-backed document stores: one JSON document per session and
// content-addressed PNG artifacts with their provenance.

#include <algorithm>
#include <filesystem>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalign/core/array_file.hpp"
#include "chromalign/core/hash.hpp"
#include "chromalign/core/io.hpp"
#include "chromalign/edit/config.hpp"
#include "chromalign/service/engine.hpp"

namespace chromalign {

enum class InversionStatus { pending, running, ready, failed };
NLOHMANN_JSON_SERIALIZE_ENUM(InversionStatus, {{InversionStatus::pending, "pending"},
                                               {InversionStatus::running, "running"},
                                               {InversionStatus::ready, "ready"},
                                               {InversionStatus::failed, "failed"}})

struct MaskCandidates {
    std::string token;
    std::vector<std::string> artifacts;  // candidate masks, segmenter order
    int selected = -1;
    double score = 0.0;  // selection score of the chosen candidate
    bool fallback = false;
    Point point;
    std::string selected_artifact;
    std::vector<std::string> warnings;
};

inline void to_json(nlohmann::json& j, const MaskCandidates& m) {
    j = {{"token", m.token},       {"candidates", m.artifacts}, {"score", m.score},
         {"selected", m.selected}, {"fallback", m.fallback},    {"point", {m.point.x, m.point.y}},
         {"mask", m.selected_artifact}, {"warnings", m.warnings}};
}

inline void from_json(const nlohmann::json& j, MaskCandidates& m) {
    m.token = j.at("token").get<std::string>();
    m.artifacts = j.at("candidates").get<std::vector<std::string>>();
    m.score = j.at("score").get<double>();
    m.selected = j.at("selected").get<int>();
    m.fallback = j.at("fallback").get<bool>();
    m.point = {j.at("point").at(0).get<int>(), j.at("point").at(1).get<int>()};
    m.selected_artifact = j.at("mask").get<std::string>();
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
}

struct SessionRecord {
    std::string id;
    SourceDescriptor source;
    InversionStatus inversion = InversionStatus::pending;
    std::string inversion_job;
    std::string inversion_error;
    std::optional<double> reconstruction_psnr;
    std::string source_artifact;          // image the first turn edits
    std::string reconstruction_artifact;
    std::optional<MaskCandidates> mask;
    std::vector<nlohmann::json> turns;    // committed turns, append-only
    EditConfig config;
};

inline void to_json(nlohmann::json& j, const SessionRecord& r) {
    j = {{"id", r.id},
         {"source", r.source},
         {"inversion",
          {{"status", r.inversion}, {"job", r.inversion_job}, {"artifact", r.source_artifact},
           {"reconstruction", r.reconstruction_artifact}}},
         {"turns", r.turns},
         {"config", r.config}};
    if (!r.inversion_error.empty()) j["inversion"]["error"] = r.inversion_error;
    if (r.reconstruction_psnr) j["inversion"]["psnr_db"] = *r.reconstruction_psnr;
    j["mask"] = r.mask ? nlohmann::json(*r.mask) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, SessionRecord& r) {
    r.id = j.at("id").get<std::string>();
    r.source = j.at("source").get<SourceDescriptor>();
    const auto& inv = j.at("inversion");
    r.inversion = inv.at("status").get<InversionStatus>();
    r.inversion_job = inv.value("job", std::string());
    r.inversion_error = inv.value("error", std::string());
    r.source_artifact = inv.value("artifact", std::string());
    r.reconstruction_artifact = inv.value("reconstruction", std::string());
    if (inv.contains("psnr_db")) r.reconstruction_psnr = inv.at("psnr_db").get<double>();
    r.turns = j.at("turns").get<std::vector<nlohmann::json>>();
    if (!j.at("mask").is_null()) r.mask = j.at("mask").get<MaskCandidates>();
    r.config = edit_config_from_json(j.at("config"));
}

namespace detail {

inline std::string random_hex(int bytes) {
    static std::mutex mu;
    static std::mt19937_64 rng(std::random_device{}());
    std::lock_guard lock(mu);
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (int i = 0; i < bytes; ++i) {
        const auto b = static_cast<unsigned>(rng() & 0xff);
        out += digits[b >> 4];
        out += digits[b & 15];
    }
    return out;
}

// Write to a sibling temp file, then rename over the target.
inline void write_atomic(const std::filesystem::path& p, std::span<const unsigned char> bytes) {
    std::filesystem::create_directories(p.parent_path());
    const auto tmp = p.parent_path() / ("." + p.filename().string() + ".tmp-" + random_hex(4));
    write_bytes(tmp, bytes);
    std::filesystem::rename(tmp, p);
}

inline void write_atomic(const std::filesystem::path& p, const std::string& text) {
    write_atomic(p, std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

inline bool is_hex_id(const std::string& s, std::size_t min_len = 1) {
    return s.size() >= min_len && std::all_of(s.begin(), s.end(), [](char c) {
               return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
           });
}

}  // namespace detail

class SessionStore {
public:
    explicit SessionStore(std::filesystem::path root) : root_(std::move(root)) { std::filesystem::create_directories(root_); }

    std::string new_id() const {
        for (;;) {
            auto id = detail::random_hex(8);
            if (!std::filesystem::exists(root_ / id)) return id;
        }
    }

    void save(const SessionRecord& r) const {
        detail::write_atomic(root_ / r.id / "session.json", nlohmann::json(r).dump(2) + "\n");
    }

    std::optional<SessionRecord> load(const std::string& id) const {
        if (!detail::is_hex_id(id)) return std::nullopt;
        const auto p = root_ / id / "session.json";
        if (!std::filesystem::exists(p)) return std::nullopt;
        return detail::read_json(p).get<SessionRecord>();
    }

    std::vector<SessionRecord> all() const {
        std::vector<SessionRecord> out;
        for (const auto& e : std::filesystem::directory_iterator(root_))
            if (e.is_directory())
                if (auto r = load(e.path().filename().string())) out.push_back(std::move(*r));
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
        return out;
    }

private:
    std::filesystem::path root_;
};

// Artifacts are named by the SHA-256 of their bytes and never rewritten.
class ArtifactStore {
public:
    explicit ArtifactStore(std::filesystem::path root) : root_(std::move(root)) { std::filesystem::create_directories(root_); }

    std::string put(std::span<const unsigned char> bytes, const nlohmann::json& provenance) const {
        const std::string hash = sha256_hex(bytes);
        if (!std::filesystem::exists(root_ / (hash + ".png"))) {
            detail::write_atomic(root_ / (hash + ".json"), provenance.dump(2) + "\n");
            detail::write_atomic(root_ / (hash + ".png"), bytes);
        }
        return hash;
    }

    std::string put_image(const Image& im, const nlohmann::json& provenance) const {
        const auto png = encode_png(im);
        return put(png, provenance);
    }

    std::string put_mask(const Mask& m, const nlohmann::json& provenance) const {
        const auto png = encode_mask_png(m);
        return put(png, provenance);
    }

    bool contains(const std::string& hash) const {
        return detail::is_hex_id(hash, 64) && hash.size() == 64 && std::filesystem::exists(root_ / (hash + ".png"));
    }

    std::vector<unsigned char> bytes(const std::string& hash) const {
        if (!contains(hash)) throw NotFoundError("no artifact " + hash);
        return read_bytes(root_ / (hash + ".png"));
    }

    nlohmann::json provenance(const std::string& hash) const {
        if (!contains(hash)) throw NotFoundError("no artifact " + hash);
        const auto p = root_ / (hash + ".json");
        return std::filesystem::exists(p) ? detail::read_json(p) : nlohmann::json::object();
    }

    Image image(const std::string& hash) const { return decode_png(bytes(hash)); }
    Mask mask(const std::string& hash) const { return decode_mask_png(bytes(hash)); }

private:
    std::filesystem::path root_;
};

}  // namespace chromalign
