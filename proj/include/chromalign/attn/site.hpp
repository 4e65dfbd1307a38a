#pragma once

// Attention-site addressing for the 3-down / 1-mid / 3-up U-Net family.
// The layout is declared (JSON or built-in), never discovered from weights.

#include <compare>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalign/core/error.hpp"
#include "chromalign/core/hash.hpp"

namespace chromalign {

enum class Region { encoder = 0, mid = 1, decoder = 2 };
enum class AttnKind { self_attn = 0, cross_attn = 1 };

inline std::string_view to_string(Region r) {
    switch (r) {
        case Region::encoder: return "encoder";
        case Region::mid: return "mid";
        case Region::decoder: return "decoder";
    }
    return "?";
}

inline std::string_view to_string(AttnKind k) { return k == AttnKind::self_attn ? "self" : "cross"; }

inline Region region_from_string(std::string_view s) {
    if (s == "encoder") return Region::encoder;
    if (s == "mid") return Region::mid;
    if (s == "decoder") return Region::decoder;
    throw ContractError("unknown region '" + std::string(s) + "'");
}

inline AttnKind kind_from_string(std::string_view s) {
    if (s == "self") return AttnKind::self_attn;
    if (s == "cross") return AttnKind::cross_attn;
    throw ContractError("unknown attention kind '" + std::string(s) + "'");
}

struct AttentionSite {
    Region region = Region::encoder;
    int block_index = 1;   // 1-based within region
    int layer_index = 1;   // 1-based within block
    AttnKind kind = AttnKind::self_attn;
    int head_count = 1;
    int channel_dim = 1;   // per-head d_k

    auto key() const { return std::tuple(region, block_index, layer_index, kind); }
    friend bool operator==(const AttentionSite& a, const AttentionSite& b) { return a.key() == b.key(); }
    friend auto operator<=>(const AttentionSite& a, const AttentionSite& b) { return a.key() <=> b.key(); }

    bool is_cross() const noexcept { return kind == AttnKind::cross_attn; }
    bool is_self() const noexcept { return kind == AttnKind::self_attn; }

    // e.g. "decoder_1_3_cross"
    std::string name() const {
        return std::string(to_string(region)) + "_" + std::to_string(block_index) + "_" + std::to_string(layer_index) +
               "_" + std::string(to_string(kind));
    }
};

inline void to_json(nlohmann::json& j, const AttentionSite& s) {
    j = {{"region", to_string(s.region)}, {"block", s.block_index}, {"layer", s.layer_index},
         {"kind", to_string(s.kind)},     {"heads", s.head_count},  {"d_k", s.channel_dim}};
}

inline void from_json(const nlohmann::json& j, AttentionSite& s) {
    s.region = region_from_string(j.at("region").get<std::string>());
    s.block_index = j.at("block").get<int>();
    s.layer_index = j.at("layer").get<int>();
    s.kind = kind_from_string(j.at("kind").get<std::string>());
    s.head_count = j.value("heads", 1);
    s.channel_dim = j.value("d_k", 1);
}

struct BlockSpec {
    int layers = 1;
    int heads = 1;
    int head_dim = 1;
    int channels() const noexcept { return heads * head_dim; }
    friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct ModelLayout {
    std::string model_id = "unnamed";
    std::vector<BlockSpec> encoder;
    std::vector<BlockSpec> mid;
    std::vector<BlockSpec> decoder;
    int latent_channels = 4;
    int context_length = 77;
    int context_dim = 768;

    const std::vector<BlockSpec>& blocks(Region r) const {
        switch (r) {
            case Region::encoder: return encoder;
            case Region::mid: return mid;
            default: return decoder;
        }
    }

    bool is_three_one_three() const { return encoder.size() == 3 && mid.size() == 1 && decoder.size() == 3; }

    std::string layout_hash() const;
    friend bool operator==(const ModelLayout&, const ModelLayout&) = default;
};

inline nlohmann::json layout_to_json(const ModelLayout& l) {
    auto region = [](const std::vector<BlockSpec>& blocks) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& b : blocks) arr.push_back({{"layers", b.layers}, {"heads", b.heads}, {"d_k", b.head_dim}});
        return arr;
    };
    return {{"model_id", l.model_id},
            {"encoder", region(l.encoder)},
            {"mid", region(l.mid)},
            {"decoder", region(l.decoder)},
            {"latent_channels", l.latent_channels},
            {"context_length", l.context_length},
            {"context_dim", l.context_dim}};
}

inline std::string ModelLayout::layout_hash() const {
    nlohmann::json j = layout_to_json(*this);
    j.erase("model_id");
    return sha256_hex(j.dump()).substr(0, 16);
}

// Parses a model description; every structural defect names its field.
inline ModelLayout layout_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw StructuralError("$", "model description must be an object");
    ModelLayout l;
    l.model_id = j.value("model_id", std::string("unnamed"));
    for (Region r : {Region::encoder, Region::mid, Region::decoder}) {
        const std::string name(to_string(r));
        if (!j.contains(name)) throw StructuralError(name, "missing region");
        const auto& arr = j.at(name);
        if (!arr.is_array()) throw StructuralError(name, "region must be an array of blocks");
        std::vector<BlockSpec> blocks;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string where = name + "[" + std::to_string(i + 1) + "]";
            const auto& b = arr[i];
            for (const char* f : {"layers", "heads", "d_k"}) {
                if (!b.contains(f)) throw StructuralError(where + "." + f, "missing field");
                if (!b.at(f).is_number_integer() || b.at(f).get<int>() <= 0)
                    throw StructuralError(where + "." + f, "must be a positive integer");
            }
            blocks.push_back({b.at("layers").get<int>(), b.at("heads").get<int>(), b.at("d_k").get<int>()});
        }
        (r == Region::encoder ? l.encoder : r == Region::mid ? l.mid : l.decoder) = std::move(blocks);
    }
    l.latent_channels = j.value("latent_channels", 4);
    l.context_length = j.value("context_length", 77);
    l.context_dim = j.value("context_dim", 768);
    if (l.latent_channels <= 0) throw StructuralError("latent_channels", "must be positive");
    if (l.context_length <= 0) throw StructuralError("context_length", "must be positive");
    if (l.context_dim <= 0) throw StructuralError("context_dim", "must be positive");
    return l;
}

// Stable Diffusion v1.4 attention layout: 3 CrossAttnDownBlocks x 2, one mid
// transformer, 3 CrossAttnUpBlocks x 3. Channels 320/640/1280 with 8 heads.
inline ModelLayout sd14_layout() {
    ModelLayout l;
    l.model_id = "CompVis/stable-diffusion-v1-4";
    l.encoder = {{2, 8, 40}, {2, 8, 80}, {2, 8, 160}};
    l.mid = {{1, 8, 160}};
    l.decoder = {{3, 8, 160}, {3, 8, 80}, {3, 8, 40}};
    l.latent_channels = 4;
    l.context_length = 77;
    l.context_dim = 768;
    return l;
}

// Traversal order: encoder -> mid -> decoder, ascending block then layer;
// within a layer the self site precedes the cross site.
inline std::vector<AttentionSite> enumerate_sites(const ModelLayout& layout) {
    std::vector<AttentionSite> out;
    for (Region r : {Region::encoder, Region::mid, Region::decoder}) {
        const auto& blocks = layout.blocks(r);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const auto& spec = blocks[b];
            if (spec.layers <= 0)
                throw StructuralError(std::string(to_string(r)) + "[" + std::to_string(b + 1) + "].layers",
                                      "must be a positive integer");
            for (int l = 1; l <= spec.layers; ++l)
                for (AttnKind k : {AttnKind::self_attn, AttnKind::cross_attn})
                    out.push_back({r, static_cast<int>(b) + 1, l, k, spec.heads, spec.head_dim});
        }
    }
    return out;
}

inline std::vector<AttentionSite> enumerate_sites(const nlohmann::json& description) {
    return enumerate_sites(layout_from_json(description));
}

template <class Pred>
std::vector<AttentionSite> filter_sites(const std::vector<AttentionSite>& sites, Pred&& pred) {
    std::vector<AttentionSite> out;
    for (const auto& s : sites)
        if (pred(s)) out.push_back(s);
    return out;
}

inline std::vector<AttentionSite> cross_sites(const ModelLayout& l) {
    return filter_sites(enumerate_sites(l), [](const AttentionSite& s) { return s.is_cross(); });
}

inline std::vector<AttentionSite> self_sites(const ModelLayout& l) {
    return filter_sites(enumerate_sites(l), [](const AttentionSite& s) { return s.is_self(); });
}

inline std::vector<AttentionSite> decoder_cross_sites(const ModelLayout& l) {
    return filter_sites(enumerate_sites(l),
                        [](const AttentionSite& s) { return s.is_cross() && s.region == Region::decoder; });
}

}  // namespace chromalign
