#pragma once

// Reference-colour assets: the inverted latent of a colour image plus the
// Value matrices of every cross-attention site at every step of its
// reconstruction. Extracted once per colour and reused for every edit.
//
// On-disk layout (format_version 1):
//   {root}/{color_id}/meta.json
//   {root}/{color_id}/latent_zT.f32
//   {root}/{color_id}/values/{region}_{block}_{layer}_t{t}.f32   [branches, heads, tokens, d_k]

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalign/attn/capture.hpp"
#include "chromalign/attn/hooks.hpp"
#include "chromalign/core/array_file.hpp"
#include "chromalign/core/hash.hpp"
#include "chromalign/core/image.hpp"
#include "chromalign/inversion/inversion.hpp"
#include "chromalign/model/backend.hpp"

namespace chromalign {

inline constexpr int kAssetFormatVersion = 1;

struct ReferenceColorAsset {
    std::string color_id;
    std::string model_id;
    std::string layout_hash;
    int steps = 0;
    double guidance_scale = 7.5;
    std::string prompt;
    std::string source_hash;  // identity of the extraction inputs
    Latent z_T;
    CaptureStore values;      // cross sites, Role::value only

    std::string content_hash() const;
};

struct ExtractionOptions {
    int steps = 50;
    double guidance_scale = 7.5;
    std::string prompt;  // empty: the reference is a colour field, not a scene
    InversionOptions inversion;
};

inline std::string value_file_name(const AttentionSite& s, int t) {
    return std::string(to_string(s.region)) + "_" + std::to_string(s.block_index) + "_" + std::to_string(s.layer_index) +
           "_t" + std::to_string(t) + ".f32";
}

namespace detail {

inline FloatArray pack_values(const AttentionCapture& c) { return pack_role(c, Role::value); }

inline std::string asset_meta_text(const ReferenceColorAsset& a, const std::string& content_hash) {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& [key, c] : a.values)
        recs.push_back({{"site", c.site}, {"timestep", c.timestep}, {"grid", {c.grid_height, c.grid_width}}});
    nlohmann::json meta = {{"format_version", kAssetFormatVersion},
                           {"color_id", a.color_id},
                           {"model_id", a.model_id},
                           {"layout_hash", a.layout_hash},
                           {"T", a.steps},
                           {"guidance", a.guidance_scale},
                           {"prompt", a.prompt},
                           {"source_hash", a.source_hash},
                           {"content_hash", content_hash},
                           {"records", recs}};
    return meta.dump(2) + "\n";
}

}  // namespace detail

// SHA-256 over the metadata (without the hash itself), the latent and every
// value array in record order.
inline std::string ReferenceColorAsset::content_hash() const {
    Sha256 h;
    h.update(detail::asset_meta_text(*this, ""));
    const auto lat = encode_f32(latent_array(z_T));
    h.update(std::span<const unsigned char>(lat));
    for (const auto& [key, c] : values) {
        const auto bytes = encode_f32(detail::pack_values(c));
        h.update(std::span<const unsigned char>(bytes));
    }
    return h.hex();
}

inline nlohmann::json asset_descriptor(const ReferenceColorAsset& a) {
    return {{"color_id", a.color_id}, {"model_id", a.model_id},       {"T", a.steps},
            {"guidance", a.guidance_scale}, {"content_hash", a.content_hash()}, {"source_hash", a.source_hash},
            {"format_version", kAssetFormatVersion}, {"records", a.values.size()}};
}

inline void save_asset(const ReferenceColorAsset& a, const std::filesystem::path& dir) {
    detail::write_text(dir / "meta.json", detail::asset_meta_text(a, a.content_hash()));
    write_f32(dir / "latent_zT.f32", latent_array(a.z_T));
    for (const auto& [key, c] : a.values) write_f32(dir / "values" / value_file_name(c.site, c.timestep), detail::pack_values(c));
}

inline ReferenceColorAsset load_asset(const std::filesystem::path& dir) {
    const auto meta = detail::read_json(dir / "meta.json");
    const int version = meta.at("format_version").get<int>();
    if (version != kAssetFormatVersion)
        throw Error("asset " + dir.string() + " has format_version " + std::to_string(version) + ", expected " +
                    std::to_string(kAssetFormatVersion));
    ReferenceColorAsset a;
    a.color_id = meta.at("color_id").get<std::string>();
    a.model_id = meta.at("model_id").get<std::string>();
    a.layout_hash = meta.at("layout_hash").get<std::string>();
    a.steps = meta.at("T").get<int>();
    a.guidance_scale = meta.at("guidance").get<double>();
    a.prompt = meta.at("prompt").get<std::string>();
    a.source_hash = meta.at("source_hash").get<std::string>();
    a.z_T = array_latent(read_f32(dir / "latent_zT.f32"));
    a.values.model_id = a.model_id;
    a.values.layout_hash = a.layout_hash;
    a.values.steps = a.steps;
    std::set<AttentionSite> sites;
    for (const auto& r : meta.at("records")) {
        AttentionCapture c;
        c.site = r.at("site").get<AttentionSite>();
        c.timestep = r.at("timestep").get<int>();
        c.grid_height = r.at("grid").at(0).get<int>();
        c.grid_width = r.at("grid").at(1).get<int>();
        detail::unpack_role(c, Role::value, read_f32(dir / "values" / value_file_name(c.site, c.timestep)));
        sites.insert(c.site);
        a.values.insert(std::move(c));
    }
    a.values.sites.assign(sites.begin(), sites.end());
    const std::string stored = meta.at("content_hash").get<std::string>();
    const std::string actual = a.content_hash();
    if (stored != actual)
        throw Error("asset " + dir.string() + " is corrupt: stored content hash " + stored + ", computed " + actual);
    return a;
}

// Every decoder cross site must hold a Value record for every step 1..T.
inline std::vector<std::string> asset_coverage_gaps(const ReferenceColorAsset& a, const ModelLayout& layout) {
    std::vector<std::string> gaps;
    for (const auto& s : decoder_cross_sites(layout))
        for (int t = 1; t <= a.steps; ++t) {
            const auto* c = a.values.find(s, t);
            if (!c || !has_role(c->roles(), Role::value)) gaps.push_back(gap_name(s, t));
        }
    return gaps;
}

inline void validate_asset(const ReferenceColorAsset& a, const ModelLayout& layout) {
    if (a.layout_hash != layout.layout_hash())
        throw ContractError("asset " + a.color_id + " was extracted with model " + a.model_id + " (layout " +
                            a.layout_hash + "), current layout is " + layout.layout_hash());
    auto gaps = asset_coverage_gaps(a, layout);
    if (!gaps.empty()) throw CoverageError("asset " + a.color_id + " is incomplete", std::move(gaps));
}

inline std::string extraction_source_hash(const DiffusionBackend& m, const Image& image, const ExtractionOptions& o) {
    Sha256 h;
    const Image q = quantized(image);
    h.update("chromalign-asset-v1|" + m.model_id() + "|" + m.layout().layout_hash() + "|" + std::to_string(o.steps) +
             "|" + nlohmann::json(o.guidance_scale).dump() + "|" + o.prompt + "|" + std::to_string(image.width) + "x" +
             std::to_string(image.height) + "|");
    std::vector<unsigned char> bytes(q.rgb.size());
    std::transform(q.rgb.begin(), q.rgb.end(), bytes.begin(), [](float v) { return to_byte(v); });
    h.update(std::span<const unsigned char>(bytes));
    return h.hex();
}

inline ReferenceColorAsset extract_reference_asset(const DiffusionBackend& m, const Image& color_image,
                                                   const std::string& color_id, const ExtractionOptions& o = {}) {
    require(!color_id.empty(), "color_id must not be empty");
    const auto inv = invert_image(m, color_image, o.prompt, o.steps, o.guidance_scale, o.inversion);
    auto capture = CaptureHook::all_steps(cross_sites(m.layout()), static_cast<RoleSet>(Role::value));
    HookSet hooks{&capture};
    if (o.steps > 0) reconstruct_latents(m, inv.trajectory, inv.schedule, &hooks);
    ReferenceColorAsset a;
    a.color_id = color_id;
    a.model_id = m.model_id();
    a.layout_hash = m.layout().layout_hash();
    a.steps = o.steps;
    a.guidance_scale = o.guidance_scale;
    a.prompt = o.prompt;
    a.source_hash = extraction_source_hash(m, color_image, o);
    a.z_T = inv.trajectory.z_T();
    a.values = o.steps > 0 ? capture.take() : CaptureStore{};
    a.values.model_id = a.model_id;
    a.values.layout_hash = a.layout_hash;
    a.values.steps = o.steps;
    return a;
}

// Directory-backed registry. Publication is write-to-temp then rename, so
// concurrent writers of distinct colour ids never see partial assets.
class AssetCache {
public:
    explicit AssetCache(std::filesystem::path root) : root_(std::move(root)) { std::filesystem::create_directories(root_); }

    const std::filesystem::path& root() const noexcept { return root_; }
    std::filesystem::path path_for(const std::string& color_id) const {
        check_id(color_id);
        return root_ / color_id;
    }

    bool contains(const std::string& color_id) const { return std::filesystem::exists(path_for(color_id) / "meta.json"); }

    ReferenceColorAsset load(const std::string& color_id) const {
        if (!contains(color_id)) throw NotFoundError("no colour asset '" + color_id + "' in " + root_.string());
        return load_asset(path_for(color_id));
    }

    std::optional<nlohmann::json> stored_meta(const std::string& color_id) const {
        if (!contains(color_id)) return std::nullopt;
        return detail::read_json(path_for(color_id) / "meta.json");
    }

    // Idempotent: identical content is a no-op; different content is refused.
    void publish(const ReferenceColorAsset& a) {
        const std::string hash = a.content_hash();
        std::lock_guard lock(mu_);
        if (auto meta = stored_meta(a.color_id)) {
            check_same(a.color_id, meta->at("content_hash").get<std::string>(), hash, "content");
            return;
        }
        const auto tmp = root_ / (".tmp-" + a.color_id + "-" + random_suffix());
        save_asset(a, tmp);
        std::error_code ec;
        std::filesystem::rename(tmp, path_for(a.color_id), ec);
        if (ec) {
            std::filesystem::remove_all(tmp);
            if (auto meta = stored_meta(a.color_id)) {
                check_same(a.color_id, meta->at("content_hash").get<std::string>(), hash, "content");
                return;
            }
            throw Error("cannot publish asset " + a.color_id + ": " + ec.message());
        }
        ++writes_;
    }

    // Returns the cached asset when the same inputs were extracted before;
    // inversion runs only on a miss.
    ReferenceColorAsset get_or_extract(const DiffusionBackend& m, const Image& image, const std::string& color_id,
                                       const ExtractionOptions& o = {}) {
        const std::string src = extraction_source_hash(m, image, o);
        if (auto meta = stored_meta(color_id)) {
            check_same(color_id, meta->at("source_hash").get<std::string>(), src, "source");
            ++hits_;
            return load(color_id);
        }
        ++extractions_;
        auto a = extract_reference_asset(m, image, color_id, o);
        publish(a);
        return a;
    }

    std::vector<nlohmann::json> list() const {
        std::vector<nlohmann::json> out;
        std::vector<std::string> ids;
        for (const auto& e : std::filesystem::directory_iterator(root_)) {
            const auto name = e.path().filename().string();
            if (e.is_directory() && name.front() != '.' && std::filesystem::exists(e.path() / "meta.json"))
                ids.push_back(name);
        }
        std::sort(ids.begin(), ids.end());
        for (const auto& id : ids) {
            auto meta = detail::read_json(root_ / id / "meta.json");
            meta.erase("records");
            out.push_back(std::move(meta));
        }
        return out;
    }

    long extractions() const noexcept { return extractions_; }
    long hits() const noexcept { return hits_; }
    long writes() const noexcept { return writes_; }

private:
    static void check_id(const std::string& id) {
        const bool ok = !id.empty() && id.front() != '.' &&
                        std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.'; });
        if (!ok) throw ValidationError({"color_id"});
    }

    static void check_same(const std::string& id, const std::string& stored, const std::string& incoming, const char* what) {
        if (stored != incoming)
            throw ConflictError("colour asset '" + id + "' already exists with different " + what + ": stored " + stored +
                                ", incoming " + incoming);
    }

    static std::string random_suffix() {
        static std::atomic<unsigned long> counter{0};
        std::random_device rd;
        return std::to_string(rd()) + "-" + std::to_string(counter++);
    }

    std::filesystem::path root_;
    std::mutex mu_;
    std::atomic<long> extractions_{0}, hits_{0}, writes_{0};
};

}  // namespace chromalign
