#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalign/attn/site.hpp"
#include "chromalign/core/array_file.hpp"
#include "chromalign/core/error.hpp"
#include "chromalign/core/io.hpp"
#include "chromalign/core/tensor.hpp"

namespace chromalign {

// Classifier-free guidance evaluates the U-Net twice per step.
enum class Branch { conditional = 0, unconditional = 1 };

enum class Role : unsigned { query = 1u, key = 2u, value = 4u, map = 8u };
using RoleSet = unsigned;
inline constexpr RoleSet kAllRoles = 15u;
constexpr RoleSet operator|(Role a, Role b) { return static_cast<unsigned>(a) | static_cast<unsigned>(b); }
constexpr RoleSet operator|(RoleSet a, Role b) { return a | static_cast<unsigned>(b); }
constexpr bool has_role(RoleSet set, Role r) { return (set & static_cast<unsigned>(r)) != 0; }

inline const char* role_tag(Role r) {
    switch (r) {
        case Role::query: return "Q";
        case Role::key: return "K";
        case Role::value: return "V";
        case Role::map: return "map";
    }
    return "?";
}

// One head per entry; a role that was not captured is an empty vector.
struct BranchTensors {
    std::vector<Matrix> queries;  // spatial x d_k
    std::vector<Matrix> keys;     // context x d_k
    std::vector<Matrix> values;   // context x d_k
    std::vector<Matrix> maps;     // spatial x context, rows sum to 1

    std::vector<Matrix>& role(Role r) {
        switch (r) {
            case Role::query: return queries;
            case Role::key: return keys;
            case Role::value: return values;
            default: return maps;
        }
    }
    const std::vector<Matrix>& role(Role r) const { return const_cast<BranchTensors*>(this)->role(r); }
};

// Heads concatenated along channels: tokens x (heads * d_k).
inline Matrix merge_heads(const std::vector<Matrix>& heads) {
    if (heads.empty()) return {};
    const Eigen::Index d = heads[0].cols();
    Matrix out(heads[0].rows(), d * static_cast<Eigen::Index>(heads.size()));
    for (std::size_t h = 0; h < heads.size(); ++h) out.middleCols(static_cast<Eigen::Index>(h) * d, d) = heads[h];
    return out;
}

struct AttentionCapture {
    AttentionSite site;
    int timestep = 0;
    int grid_height = 0;  // spatial layout of the query tokens
    int grid_width = 0;
    std::vector<BranchTensors> branches;  // indexed by Branch

    bool has_branch(Branch b) const { return static_cast<std::size_t>(b) < branches.size(); }
    const BranchTensors& branch(Branch b) const {
        if (!has_branch(b)) throw NotFoundError("capture of " + site.name() + " has no such branch");
        return branches[static_cast<std::size_t>(b)];
    }

    RoleSet roles() const {
        RoleSet r = 0;
        if (branches.empty()) return r;
        for (Role role : {Role::query, Role::key, Role::value, Role::map})
            if (!branches[0].role(role).empty()) r |= static_cast<unsigned>(role);
        return r;
    }
};

class CaptureStore {
public:
    using Key = std::pair<std::tuple<Region, int, int, AttnKind>, int>;

    std::string model_id;
    std::string layout_hash;
    int steps = 0;
    std::vector<AttentionSite> sites;

    void insert(AttentionCapture c) {
        Key k{c.site.key(), c.timestep};
        records_.insert_or_assign(std::move(k), std::move(c));
    }

    const AttentionCapture* find(const AttentionSite& s, int timestep) const {
        auto it = records_.find(Key{s.key(), timestep});
        return it == records_.end() ? nullptr : &it->second;
    }

    const AttentionCapture& at(const AttentionSite& s, int timestep) const {
        if (const auto* c = find(s, timestep)) return *c;
        throw NotFoundError("no capture for site " + s.name() + " at timestep " + std::to_string(timestep));
    }

    bool contains(const AttentionSite& s, int timestep) const { return find(s, timestep) != nullptr; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }
    auto begin() const { return records_.begin(); }
    auto end() const { return records_.end(); }

    void save(const std::filesystem::path& dir) const;
    static CaptureStore load(const std::filesystem::path& dir);

private:
    std::map<Key, AttentionCapture> records_;
};

namespace detail {

// [branches, heads, rows, cols]
inline FloatArray pack_role(const AttentionCapture& c, Role r) {
    FloatArray a;
    const auto& first = c.branches.at(0).role(r);
    const auto rows = static_cast<std::uint32_t>(first.at(0).rows());
    const auto cols = static_cast<std::uint32_t>(first.at(0).cols());
    a.shape = {static_cast<std::uint32_t>(c.branches.size()), static_cast<std::uint32_t>(first.size()), rows, cols};
    for (const auto& b : c.branches)
        for (const Matrix& m : b.role(r)) {
            require(m.rows() == rows && m.cols() == cols, "capture heads have inconsistent shapes");
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j) a.values.push_back(m(i, j));
        }
    return a;
}

inline void unpack_role(AttentionCapture& c, Role r, const FloatArray& a) {
    require(a.shape.size() == 4, "capture array must be rank 4");
    if (c.branches.size() < a.shape[0]) c.branches.resize(a.shape[0]);
    std::size_t k = 0;
    for (std::uint32_t b = 0; b < a.shape[0]; ++b) {
        auto& dst = c.branches[b].role(r);
        dst.clear();
        for (std::uint32_t h = 0; h < a.shape[1]; ++h) {
            Matrix m(a.shape[2], a.shape[3]);
            for (std::uint32_t i = 0; i < a.shape[2]; ++i)
                for (std::uint32_t j = 0; j < a.shape[3]; ++j) m(i, j) = a.values[k++];
            dst.push_back(std::move(m));
        }
    }
}

inline std::string capture_file(const AttentionCapture& c, Role r) {
    return c.site.name() + "_t" + std::to_string(c.timestep) + "_" + role_tag(r) + ".f32";
}

}  // namespace detail

inline void CaptureStore::save(const std::filesystem::path& dir) const {
    nlohmann::json meta;
    meta["format_version"] = 1;
    meta["model_id"] = model_id;
    meta["layout_hash"] = layout_hash;
    meta["T"] = steps;
    meta["sites"] = sites;
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& [key, c] : records_) {
        nlohmann::json roles = nlohmann::json::array();
        for (Role r : {Role::query, Role::key, Role::value, Role::map}) {
            if (!has_role(c.roles(), r)) continue;
            roles.push_back(role_tag(r));
            write_f32(dir / "arrays" / detail::capture_file(c, r), detail::pack_role(c, r));
        }
        recs.push_back({{"site", c.site},
                        {"timestep", c.timestep},
                        {"grid", {c.grid_height, c.grid_width}},
                        {"branches", c.branches.size()},
                        {"roles", roles}});
    }
    meta["records"] = recs;
    detail::write_text(dir / "meta.json", meta.dump(2) + "\n");
}

inline CaptureStore CaptureStore::load(const std::filesystem::path& dir) {
    const auto meta = detail::read_json(dir / "meta.json");
    CaptureStore s;
    s.model_id = meta.at("model_id").get<std::string>();
    s.layout_hash = meta.at("layout_hash").get<std::string>();
    s.steps = meta.at("T").get<int>();
    s.sites = meta.at("sites").get<std::vector<AttentionSite>>();
    for (const auto& r : meta.at("records")) {
        AttentionCapture c;
        c.site = r.at("site").get<AttentionSite>();
        c.timestep = r.at("timestep").get<int>();
        c.grid_height = r.at("grid").at(0).get<int>();
        c.grid_width = r.at("grid").at(1).get<int>();
        c.branches.resize(r.at("branches").get<std::size_t>());
        for (const auto& tag : r.at("roles")) {
            const std::string t = tag.get<std::string>();
            const Role role = t == "Q" ? Role::query : t == "K" ? Role::key : t == "V" ? Role::value : Role::map;
            detail::unpack_role(c, role, read_f32(dir / "arrays" / detail::capture_file(c, role)));
        }
        s.insert(std::move(c));
    }
    return s;
}

}  // namespace chromalign
