#pragma once

// Attention instrumentation. A host U-Net calls into a HookSet at every
// attention site: keys and values may be rewritten between the projections
// and the A*V product, maps may be replaced after the softmax, and finished
// tensors may be observed. Q/K and the map computation are never touched by
// value alignment.

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "chromalign/attn/adain.hpp"
#include "chromalign/attn/capture.hpp"
#include "chromalign/attn/site.hpp"
#include "chromalign/core/error.hpp"

namespace chromalign {

struct AttentionEvent {
    const AttentionSite& site;
    int timestep;
    Branch branch;
};

// Pre-flight failure: every missing (site, timestep) pair is listed.
class CoverageError : public ContractError {
public:
    explicit CoverageError(std::string what, std::vector<std::string> gaps)
        : ContractError(format(what, gaps)), gaps_(std::move(gaps)) {}
    const std::vector<std::string>& gaps() const noexcept { return gaps_; }

private:
    static std::string format(const std::string& what, const std::vector<std::string>& gaps) {
        std::string s = what + ": " + std::to_string(gaps.size()) + " missing";
        for (std::size_t i = 0; i < gaps.size() && i < 8; ++i) s += (i ? ", " : " [") + gaps[i];
        if (!gaps.empty()) s += gaps.size() > 8 ? ", ...]" : "]";
        return s;
    }
    std::vector<std::string> gaps_;
};

inline std::string gap_name(const AttentionSite& s, int t) { return s.name() + "@t" + std::to_string(t); }

class AttentionHook {
public:
    virtual ~AttentionHook() = default;

    // Called once before the first step; throw here to abort before the run starts.
    virtual void prepare(const ModelLayout&, int /*steps*/) {}
    virtual void begin_step(int /*timestep*/) {}

    virtual void modify_keys(const AttentionEvent&, Matrix& /*keys: context x channels*/) {}
    virtual void modify_values(const AttentionEvent&, Matrix& /*values: context x channels*/) {}
    virtual void modify_map(const AttentionEvent&, int /*head*/, Matrix& /*map*/) {}

    virtual bool wants_observation(const AttentionEvent&) const { return false; }
    virtual void observe(const AttentionEvent&, int /*grid_h*/, int /*grid_w*/, const BranchTensors&) {}
};

class HookSet {
public:
    HookSet() = default;
    HookSet(std::initializer_list<AttentionHook*> hooks) : hooks_(hooks) {}

    void add(AttentionHook* h) {
        if (h) hooks_.push_back(h);
    }
    void add_all(const HookSet& other) { hooks_.insert(hooks_.end(), other.hooks_.begin(), other.hooks_.end()); }
    bool empty() const noexcept { return hooks_.empty(); }

    void prepare(const ModelLayout& l, int steps) {
        for (auto* h : hooks_) h->prepare(l, steps);
    }
    void begin_step(int t) {
        for (auto* h : hooks_) h->begin_step(t);
    }
    void modify_keys(const AttentionEvent& e, Matrix& k) {
        for (auto* h : hooks_) h->modify_keys(e, k);
    }
    void modify_values(const AttentionEvent& e, Matrix& v) {
        for (auto* h : hooks_) h->modify_values(e, v);
    }
    void modify_map(const AttentionEvent& e, int head, Matrix& m) {
        for (auto* h : hooks_) h->modify_map(e, head, m);
    }
    bool wants_observation(const AttentionEvent& e) const {
        return std::any_of(hooks_.begin(), hooks_.end(), [&](auto* h) { return h->wants_observation(e); });
    }
    void observe(const AttentionEvent& e, int gh, int gw, const BranchTensors& t) {
        for (auto* h : hooks_)
            if (h->wants_observation(e)) h->observe(e, gh, gw, t);
    }

private:
    std::vector<AttentionHook*> hooks_;
};

inline void validate_sites_exist(const ModelLayout& layout, const std::vector<AttentionSite>& requested) {
    const auto all = enumerate_sites(layout);
    const std::set<AttentionSite> present(all.begin(), all.end());
    for (const auto& s : requested)
        if (!present.count(s)) throw NotFoundError("site " + s.name() + " is not part of model " + layout.model_id);
}

// Records tensors into a CaptureStore. Observation only.
class CaptureHook : public AttentionHook {
public:
    CaptureHook(std::vector<AttentionSite> sites, std::vector<int> timesteps, RoleSet roles = kAllRoles)
        : sites_(sites.begin(), sites.end()), requested_(std::move(sites)), roles_(roles) {
        if (timesteps.empty()) all_timesteps_ = true;
        timesteps_.insert(timesteps.begin(), timesteps.end());
    }

    // Every timestep of the run.
    static CaptureHook all_steps(std::vector<AttentionSite> sites, RoleSet roles = kAllRoles) {
        return CaptureHook(std::move(sites), {}, roles);
    }

    void prepare(const ModelLayout& layout, int steps) override {
        validate_sites_exist(layout, requested_);
        for (int t : timesteps_)
            if (t < 1 || t > steps)
                throw ContractError("capture timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
        store_ = CaptureStore{};
        store_.model_id = layout.model_id;
        store_.layout_hash = layout.layout_hash();
        store_.steps = steps;
        store_.sites.assign(sites_.begin(), sites_.end());
    }

    bool wants_observation(const AttentionEvent& e) const override {
        return sites_.count(e.site) && (all_timesteps_ || timesteps_.count(e.timestep));
    }

    void observe(const AttentionEvent& e, int gh, int gw, const BranchTensors& t) override {
        AttentionCapture* rec = const_cast<AttentionCapture*>(store_.find(e.site, e.timestep));
        if (!rec) {
            AttentionCapture c;
            c.site = e.site;
            c.timestep = e.timestep;
            c.grid_height = gh;
            c.grid_width = gw;
            store_.insert(std::move(c));
            rec = const_cast<AttentionCapture*>(store_.find(e.site, e.timestep));
        }
        const auto idx = static_cast<std::size_t>(e.branch);
        if (rec->branches.size() <= idx) rec->branches.resize(idx + 1);
        auto& dst = rec->branches[idx];
        for (Role r : {Role::query, Role::key, Role::value, Role::map})
            if (has_role(roles_, r)) dst.role(r) = t.role(r);
    }

    const CaptureStore& store() const noexcept { return store_; }
    CaptureStore take() { return std::move(store_); }

private:
    std::set<AttentionSite> sites_;
    std::vector<AttentionSite> requested_;
    std::set<int> timesteps_;
    bool all_timesteps_ = false;
    RoleSet roles_;
    CaptureStore store_;
};

using TimestepPredicate = std::function<bool(int)>;

// Alignment fires while t > tau (integer comparison).
inline TimestepPredicate after_threshold(int tau) {
    return [tau](int t) { return t > tau; };
}
inline TimestepPredicate always() {
    return [](int) { return true; };
}
inline TimestepPredicate never() {
    return [](int) { return false; };
}

struct InjectionPlan {
    std::vector<AttentionSite> value_alignment_sites;   // decoder cross sites only
    std::vector<AttentionSite> self_replacement_sites;  // self sites
    TimestepPredicate alignment_predicate = never();
    TimestepPredicate replacement_predicate = always();

    void validate() const {
        for (const auto& s : value_alignment_sites)
            if (!(s.is_cross() && s.region == Region::decoder))
                throw ContractError("value alignment is restricted to decoder cross-attention sites; got " + s.name());
        for (const auto& s : self_replacement_sites)
            if (!s.is_self()) throw ContractError("self-map replacement site " + s.name() + " is not self-attention");
    }

    std::vector<int> alignment_timesteps(int steps) const {
        std::vector<int> out;
        for (int t = steps; t >= 1; --t)
            if (alignment_predicate(t)) out.push_back(t);
        return out;
    }
};

namespace detail {

inline const BranchTensors& pick_branch(const AttentionCapture& c, Branch b) {
    return c.has_branch(b) ? c.branches[static_cast<std::size_t>(b)] : c.branch(Branch::conditional);
}

}  // namespace detail

// V <- AdaIN(V, V_ref) at the plan's alignment sites and timesteps.
class ValueAlignmentHook : public AttentionHook {
public:
    ValueAlignmentHook(const CaptureStore& reference, InjectionPlan plan)
        : reference_(reference), plan_(std::move(plan)),
          sites_(plan_.value_alignment_sites.begin(), plan_.value_alignment_sites.end()) {
        plan_.validate();
    }

    void prepare(const ModelLayout& layout, int steps) override {
        validate_sites_exist(layout, plan_.value_alignment_sites);
        std::vector<std::string> gaps;
        for (int t = steps; t >= 1; --t) {
            if (!plan_.alignment_predicate(t)) continue;
            for (const auto& s : plan_.value_alignment_sites) {
                const auto* rec = reference_.find(s, t);
                if (!rec || !has_role(rec->roles(), Role::value)) gaps.push_back(gap_name(s, t));
            }
        }
        if (!gaps.empty()) throw CoverageError("reference values missing", std::move(gaps));
        aligned_steps_.clear();
        site_counts_.clear();
    }

    void begin_step(int t) override {
        active_ = plan_.alignment_predicate(t) && !sites_.empty();
        if (active_) aligned_steps_.push_back(t);
    }

    void modify_values(const AttentionEvent& e, Matrix& values) override {
        if (!active_ || !sites_.count(e.site)) return;
        const auto& ref = detail::pick_branch(reference_.at(e.site, e.timestep), e.branch);
        const Matrix target = merge_heads(ref.values);
        values = adain_per_head(values, target, e.site.head_count);
        ++site_counts_[e.site.name()];
    }

    // Timesteps (descending) at which alignment was active.
    const std::vector<int>& aligned_steps() const noexcept { return aligned_steps_; }
    // Per-site count of rewritten value matrices (all branches).
    const std::map<std::string, int>& site_counts() const noexcept { return site_counts_; }

private:
    const CaptureStore& reference_;
    InjectionPlan plan_;
    std::set<AttentionSite> sites_;
    bool active_ = false;
    std::vector<int> aligned_steps_;
    std::map<std::string, int> site_counts_;
};

// Self-attention map of the run <- stored source map.
class SelfMapReplacementHook : public AttentionHook {
public:
    SelfMapReplacementHook(const CaptureStore& source, InjectionPlan plan)
        : source_(source), plan_(std::move(plan)),
          sites_(plan_.self_replacement_sites.begin(), plan_.self_replacement_sites.end()) {
        plan_.validate();
    }

    void prepare(const ModelLayout& layout, int steps) override {
        validate_sites_exist(layout, plan_.self_replacement_sites);
        std::vector<std::string> gaps;
        for (int t = steps; t >= 1; --t) {
            if (!plan_.replacement_predicate(t)) continue;
            for (const auto& s : plan_.self_replacement_sites) {
                const auto* rec = source_.find(s, t);
                if (!rec || !has_role(rec->roles(), Role::map)) gaps.push_back(gap_name(s, t));
            }
        }
        if (!gaps.empty()) throw CoverageError("source self-attention maps missing", std::move(gaps));
        replaced_ = 0;
    }

    void begin_step(int t) override { active_ = plan_.replacement_predicate(t); }

    void modify_map(const AttentionEvent& e, int head, Matrix& map) override {
        if (!active_ || !sites_.count(e.site)) return;
        const auto& src = detail::pick_branch(source_.at(e.site, e.timestep), e.branch);
        const Matrix& stored = src.maps.at(static_cast<std::size_t>(head));
        if (stored.rows() != map.rows() || stored.cols() != map.cols())
            throw ContractError("self-attention map resolution mismatch at " + e.site.name() + ": stored " +
                                std::to_string(stored.rows()) + "x" + std::to_string(stored.cols()) + ", current " +
                                std::to_string(map.rows()) + "x" + std::to_string(map.cols()));
        map = stored;
        ++replaced_;
    }

    long replaced_count() const noexcept { return replaced_; }

private:
    const CaptureStore& source_;
    InjectionPlan plan_;
    std::set<AttentionSite> sites_;
    bool active_ = true;
    long replaced_ = 0;
};

enum class AmplifyTarget { key, value };

// Scales one context token's row of K or V before attention.
class AmplificationHook : public AttentionHook {
public:
    AmplificationHook(int token_index, float factor, AmplifyTarget which, std::vector<AttentionSite> sites)
        : token_(token_index), factor_(factor), which_(which), sites_(sites.begin(), sites.end()) {
        require(factor > 0.0f, "amplification factor must be positive");
        require(token_index >= 0, "token index must be non-negative");
    }

    void modify_keys(const AttentionEvent& e, Matrix& k) override {
        if (which_ == AmplifyTarget::key) apply(e, k);
    }
    void modify_values(const AttentionEvent& e, Matrix& v) override {
        if (which_ == AmplifyTarget::value) apply(e, v);
    }

private:
    void apply(const AttentionEvent& e, Matrix& m) const {
        if (!sites_.count(e.site) || e.branch != Branch::conditional) return;
        require(token_ < m.rows(), "token index beyond context length");
        m.row(token_) *= factor_;
    }

    int token_;
    float factor_;
    AmplifyTarget which_;
    std::set<AttentionSite> sites_;
};

}  // namespace chromalign
