#pragma once

// Session-oriented HTTP API over the engine.
//
//   POST /colors                 register a colour asset (multipart or JSON)
//   GET  /colors[/{id}]          registry listing / one descriptor
//   POST /sessions               start a session from image+prompt or seed+prompt
//   GET  /sessions/{id}
//   POST /sessions/{id}/mask     point/token prompt -> mask candidates
//   POST /sessions/{id}/turns    one edit turn
//   GET  /jobs/{id}
//   GET  /artifacts/{hash}       immutable PNGs
//   POST /eval                   benchmark evaluation job
//
// All pipeline work runs on the job queue's worker; it is the only writer of
// session documents after creation. JSON replies carry a "config" snapshot.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

// Eigen first: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include <Eigen/Core>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "chromalign/service/engine.hpp"
#include "chromalign/service/jobs.hpp"
#include "chromalign/service/store.hpp"

namespace chromalign {

struct ServiceOptions {
    std::filesystem::path root = "chromalign-service";  // sessions/, artifacts/, eval/
    EditConfig defaults;
    std::chrono::milliseconds job_start_delay{0};
};

// Descriptor derived from stored asset metadata; same keys as asset_descriptor.
inline nlohmann::json registry_descriptor(const nlohmann::json& meta) {
    return {{"color_id", meta.at("color_id")},         {"model_id", meta.at("model_id")},
            {"T", meta.at("T")},                       {"guidance", meta.at("guidance")},
            {"content_hash", meta.at("content_hash")}, {"source_hash", meta.at("source_hash")},
            {"format_version", meta.at("format_version")}, {"records", meta.at("records").size()}};
}

namespace detail {

// Uniform view over a multipart form or a JSON object body. In JSON bodies
// binary fields are base64 strings.
class RequestFields {
public:
    explicit RequestFields(const httplib::Request& req) : req_(req) {
        if (!req.is_multipart_form_data()) {
            if (req.body.empty()) body_ = nlohmann::json::object();
            else {
                try {
                    body_ = nlohmann::json::parse(req.body);
                } catch (const nlohmann::json::exception&) {
                    throw ValidationError({"$"});
                }
                if (!body_.is_object()) throw ValidationError({"$"});
            }
        }
    }

    bool has(const std::string& k) const {
        return req_.is_multipart_form_data() ? req_.has_file(k) : body_.contains(k) && !body_.at(k).is_null();
    }

    std::optional<nlohmann::json> value(const std::string& k) const {
        if (!has(k)) return std::nullopt;
        if (!req_.is_multipart_form_data()) return std::optional<nlohmann::json>(body_.at(k));
        const std::string text = req_.get_file_value(k).content;
        try {
            return nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception&) {
            return nlohmann::json(text);
        }
    }

    std::optional<std::string> text(const std::string& k) const {
        if (!has(k)) return std::nullopt;
        if (req_.is_multipart_form_data()) return req_.get_file_value(k).content;
        if (!body_.at(k).is_string()) throw ValidationError({k});
        return body_.at(k).get<std::string>();
    }

    std::optional<std::vector<unsigned char>> blob(const std::string& k) const {
        if (!has(k)) return std::nullopt;
        if (req_.is_multipart_form_data()) {
            const auto& c = req_.get_file_value(k).content;
            return std::vector<unsigned char>(c.begin(), c.end());
        }
        return base64_decode(*text(k));
    }

private:
    const httplib::Request& req_;
    nlohmann::json body_;
};

}  // namespace detail

class Service {
public:
    Service(Engine& engine, ServiceOptions opt)
        : engine_(engine),
          opt_(std::move(opt)),
          sessions_(opt_.root / "sessions"),
          artifacts_(opt_.root / "artifacts"),
          jobs_(engine.settings().device, opt_.job_start_delay) {
        opt_.defaults.validate();
        // Sessions whose source never finished are started again.
        for (auto& r : sessions_.all())
            if (r.inversion == InversionStatus::pending || r.inversion == InversionStatus::running) submit_source(r);
    }

    JobQueue& jobs() { return jobs_; }
    const ArtifactStore& artifacts() const { return artifacts_; }
    const SessionStore& sessions() const { return sessions_; }

    void mount(httplib::Server& s) {
        s.Post("/colors", wrap([this](const auto& req, auto& res) { post_color(req, res); }));
        s.Get("/colors", wrap([this](const auto&, auto& res) { list_colors(res); }));
        s.Get(R"(/colors/([A-Za-z0-9._-]+))", wrap([this](const auto& req, auto& res) { get_color(req.matches[1], res); }));
        s.Post("/sessions", wrap([this](const auto& req, auto& res) { post_session(req, res); }));
        s.Get(R"(/sessions/([0-9a-f]+))", wrap([this](const auto& req, auto& res) { get_session(req.matches[1], res); }));
        s.Post(R"(/sessions/([0-9a-f]+)/mask)", wrap([this](const auto& req, auto& res) { post_mask(req.matches[1], req, res); }));
        s.Post(R"(/sessions/([0-9a-f]+)/turns)", wrap([this](const auto& req, auto& res) { post_turn(req.matches[1], req, res); }));
        s.Get(R"(/jobs/([A-Za-z0-9-]+))", wrap([this](const auto& req, auto& res) { get_job(req.matches[1], res); }));
        s.Get(R"(/artifacts/([0-9a-f]+))", wrap([this](const auto& req, auto& res) { get_artifact(req.matches[1], res); }));
        s.Post("/eval", wrap([this](const auto& req, auto& res) { post_eval(req, res); }));
    }

private:
    struct Live {
        std::unique_ptr<EditSession> session;
        bool needs_advance = false;  // last committed turn is not yet the source
    };

    struct PendingColor {
        std::string job;
        std::string source_hash;
    };

    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    nlohmann::json snapshot(const EditConfig& c) const { return engine_.snapshot(c); }

    void reply(httplib::Response& res, int status, nlohmann::json body, const nlohmann::json& config) const {
        body["config"] = config;
        res.status = status;
        res.set_content(body.dump(2) + "\n", "application/json");
    }

    Handler wrap(std::function<void(const httplib::Request&, httplib::Response&)> f) const {
        return [this, f = std::move(f)](const httplib::Request& req, httplib::Response& res) {
            const auto cfg = snapshot(opt_.defaults);
            try {
                f(req, res);
            } catch (const ValidationError& e) {
                reply(res, 422, {{"error", e.what()}, {"fields", e.fields()}}, cfg);
            } catch (const ConflictError& e) {
                reply(res, 409, {{"error", e.what()}}, cfg);
            } catch (const NotFoundError& e) {
                reply(res, 404, {{"error", e.what()}}, cfg);
            } catch (const ContractError& e) {
                reply(res, 400, {{"error", e.what()}}, cfg);
            } catch (const std::exception& e) {
                reply(res, 500, {{"error", e.what()}}, cfg);
            }
        };
    }

    SessionRecord record_or_404(const std::string& id) const {
        auto r = sessions_.load(id);
        if (!r) throw NotFoundError("no session " + id);
        return *r;
    }

    nlohmann::json provenance(const std::string& kind, const std::string& session, const EditConfig& cfg) const {
        nlohmann::json p = {{"kind", kind}, {"config", snapshot(cfg)}};
        if (!session.empty()) p["session"] = session;
        return p;
    }

    // ---- colours ----

    void post_color(const httplib::Request& req, httplib::Response& res) {
        const detail::RequestFields f(req);
        std::vector<std::string> bad;
        const auto id = f.has("color_id") ? f.text("color_id") : std::nullopt;
        if (!id || id->empty()) bad.push_back("color_id");
        else {
            try {
                engine_.assets().path_for(*id);
            } catch (const ValidationError&) {
                bad.push_back("color_id");
            }
        }
        std::optional<Image> image;
        try {
            if (auto b = f.blob("image")) image = decode_png(*b);
        } catch (const Error&) {
        }
        if (!image) bad.push_back("image");
        if (!bad.empty()) throw ValidationError(bad);

        const auto prompt = f.text("prompt").value_or("");
        const auto opts = Engine::extraction_options(opt_.defaults, prompt);
        const std::string src_hash = extraction_source_hash(engine_.model(), *image, opts);
        const auto cfg = snapshot(opt_.defaults);

        std::lock_guard lock(colors_mu_);
        if (auto meta = engine_.assets().stored_meta(*id)) {
            if (meta->at("source_hash").get<std::string>() != src_hash)
                throw ConflictError("colour asset '" + *id + "' already exists with different content");
            reply(res, 200, {{"status", "ready"}, {"descriptor", registry_descriptor(*meta)}, {"job", nullptr}}, cfg);
            return;
        }
        if (auto it = pending_colors_.find(*id); it != pending_colors_.end()) {
            if (it->second.source_hash != src_hash)
                throw ConflictError("colour asset '" + *id + "' is being registered with different content");
            reply(res, 202, {{"status", "pending"}, {"color_id", *id}, {"job", it->second.job}}, cfg);
            return;
        }
        const std::string color_id = *id;
        const std::string job = jobs_.submit("extract_color", cfg, [this, color_id, im = *image, opts](JobContext& ctx) {
            ctx.phase(JobPhase::inverting);
            try {
                engine_.register_color(im, color_id, opts);
            } catch (...) {
                std::lock_guard l(colors_mu_);
                pending_colors_.erase(color_id);
                throw;
            }
            std::lock_guard l(colors_mu_);
            pending_colors_.erase(color_id);
            return nlohmann::json{{"descriptor", registry_descriptor(*engine_.assets().stored_meta(color_id))}};
        });
        pending_colors_[color_id] = {job, src_hash};
        reply(res, 202, {{"status", "pending"}, {"color_id", color_id}, {"job", job}}, cfg);
    }

    void list_colors(httplib::Response& res) {
        nlohmann::json ready = nlohmann::json::array(), pending = nlohmann::json::array();
        std::lock_guard lock(colors_mu_);
        for (const auto& id : stored_color_ids()) ready.push_back(registry_descriptor(*engine_.assets().stored_meta(id)));
        for (const auto& [id, p] : pending_colors_) pending.push_back({{"color_id", id}, {"job", p.job}});
        reply(res, 200, {{"colors", ready}, {"pending", pending}}, snapshot(opt_.defaults));
    }

    std::vector<std::string> stored_color_ids() const {
        std::vector<std::string> ids;
        for (const auto& m : engine_.assets().list()) ids.push_back(m.at("color_id").get<std::string>());
        return ids;
    }

    void get_color(const std::string& id, httplib::Response& res) {
        std::lock_guard lock(colors_mu_);
        if (auto meta = engine_.assets().stored_meta(id)) {
            reply(res, 200, {{"status", "ready"}, {"descriptor", registry_descriptor(*meta)}}, snapshot(opt_.defaults));
            return;
        }
        if (auto it = pending_colors_.find(id); it != pending_colors_.end()) {
            reply(res, 202, {{"status", "pending"}, {"color_id", id}, {"job", it->second.job}}, snapshot(opt_.defaults));
            return;
        }
        throw NotFoundError("no colour asset '" + id + "'");
    }

    // ---- sessions ----

    void post_session(const httplib::Request& req, httplib::Response& res) {
        const detail::RequestFields f(req);
        std::vector<std::string> bad;
        SessionRecord r;
        EditConfig cfg = opt_.defaults;
        if (auto c = f.value("config")) {
            try {
                cfg = edit_config_from_json(*c, opt_.defaults);
            } catch (const ValidationError& e) {
                bad.insert(bad.end(), e.fields().begin(), e.fields().end());
            }
        }
        const std::string kind = f.text("kind").value_or(f.has("image") ? "real" : "generated");
        const auto prompt = f.text("prompt");
        if (!prompt || prompt->empty()) bad.push_back("prompt");
        else r.source.prompt = *prompt;
        std::optional<Image> image;
        auto int_field = [&](const char* k, auto& out) {
            if (auto v = f.value(k)) {
                try {
                    out = v->get<std::decay_t<decltype(out)>>();
                } catch (const nlohmann::json::exception&) {
                    bad.push_back(k);
                }
            }
        };
        const int multiple = engine_.model().image_multiple();
        if (kind == "generated") {
            r.source.kind = SourceKind::generated;
            if (!f.has("seed")) bad.push_back("seed");
            int_field("seed", r.source.seed);
            int_field("width", r.source.width);
            int_field("height", r.source.height);
            if (r.source.width <= 0 || r.source.width % multiple) bad.push_back("width");
            if (r.source.height <= 0 || r.source.height % multiple) bad.push_back("height");
        } else if (kind == "real") {
            r.source.kind = SourceKind::real;
            try {
                if (auto b = f.blob("image")) image = conform_image(decode_png(*b), multiple, cfg.size_policy);
            } catch (const Error&) {
            }
            if (!image) bad.push_back("image");
        } else {
            bad.push_back("kind");
        }
        if (!bad.empty()) throw ValidationError(bad);

        r.id = sessions_.new_id();
        r.config = cfg;
        if (image) r.source.image = artifacts_.put_image(*image, provenance("upload", r.id, cfg));
        submit_source(r);
        reply(res, 202, {{"session", nlohmann::json(r)}, {"job", r.inversion_job}}, snapshot(cfg));
    }

    // Saves the record with its new job id before the job can run.
    void submit_source(SessionRecord& r) {
        std::lock_guard lock(submit_mu_);
        r.inversion = InversionStatus::pending;
        r.inversion_job = jobs_.submit(
            "source", snapshot(r.config), [this, id = r.id](JobContext& ctx) { return run_source(ctx, id); }, r.id);
        sessions_.save(r);
    }

    nlohmann::json run_source(JobContext& ctx, const std::string& id) {
        {
            std::lock_guard lock(submit_mu_);  // the submitter has saved the record
        }
        SessionRecord r = record_or_404(id);
        ctx.phase(JobPhase::inverting);
        r.inversion = InversionStatus::running;
        sessions_.save(r);
        try {
            auto live = std::make_unique<Live>();
            live->session = std::make_unique<EditSession>(prepare(r, ctx), r.config);
            const auto& src = live->session->source();
            r.source_artifact = artifacts_.put_image(src.input, provenance("source", id, r.config));
            r.reconstruction_artifact = artifacts_.put_image(src.reconstruction, provenance("reconstruction", id, r.config));
            r.reconstruction_psnr = src.reconstruction_psnr;
            r.inversion = InversionStatus::ready;
            r.inversion_error.clear();
            live_[id] = std::move(live);
        } catch (const std::exception& e) {
            r.inversion = InversionStatus::failed;
            r.inversion_error = e.what();
            sessions_.save(r);
            throw;
        }
        sessions_.save(r);
        nlohmann::json out = {{"session", id}, {"source", r.source_artifact}, {"reconstruction", r.reconstruction_artifact}};
        if (r.reconstruction_psnr) out["psnr_db"] = *r.reconstruction_psnr;
        return out;
    }

    SourceState prepare(const SessionRecord& r, JobContext&) {
        std::optional<Image> im;
        if (r.source.kind == SourceKind::real) im = artifacts_.image(r.source.image);
        return engine_.start_source(r.source, im ? &*im : nullptr, r.config);
    }

    // In-memory state for a session, rebuilt from the store after a restart:
    // the original source, then the re-inversion of the last committed turn.
    Live& live(const SessionRecord& r, JobContext& ctx) {
        if (auto it = live_.find(r.id); it != live_.end()) return *it->second;
        ctx.phase(JobPhase::inverting);
        SourceState src = prepare(r, ctx);
        auto l = std::make_unique<Live>();
        if (!r.turns.empty()) {
            const Image last = artifacts_.image(r.turns.back().at("output").get<std::string>());
            SourceState next = prepare_real_source(engine_.model(), last, r.source.prompt, r.config);
            if (!r.config.refresh_captures) next.captures = std::move(src.captures);
            src = std::move(next);
        }
        l->session = std::make_unique<EditSession>(std::move(src), r.config);
        for (std::size_t i = 0; i < r.turns.size(); ++i) {
            EditTurn stub;
            stub.index = static_cast<int>(i) + 1;
            l->session->record(std::move(stub));
        }
        return *(live_[r.id] = std::move(l));
    }

    void get_session(const std::string& id, httplib::Response& res) const {
        const auto r = record_or_404(id);
        reply(res, 200, {{"session", nlohmann::json(r)}}, snapshot(r.config));
    }

    static void require_ready(const SessionRecord& r) {
        if (r.inversion != InversionStatus::ready)
            throw ConflictError("session " + r.id + " source is " + nlohmann::json(r.inversion).get<std::string>() +
                                " (job " + r.inversion_job + ")");
    }

    static std::optional<Point> point_field(const detail::RequestFields& f, std::vector<std::string>& bad) {
        auto v = f.value("point");
        if (!v) return std::nullopt;
        try {
            return Point{v->at(0).get<int>(), v->at(1).get<int>()};
        } catch (const nlohmann::json::exception&) {
            bad.push_back("point");
            return std::nullopt;
        }
    }

    void post_mask(const std::string& id, const httplib::Request& req, httplib::Response& res) {
        const auto r = record_or_404(id);
        const detail::RequestFields f(req);
        std::vector<std::string> bad;
        const auto token = f.text("token");
        if (!token || token->empty()) bad.push_back("token");
        const auto point = point_field(f, bad);
        if (!bad.empty()) throw ValidationError(bad);
        if (r.inversion != InversionStatus::ready) {
            reply(res, 409, {{"error", "session source is not ready"}, {"inversion_job", r.inversion_job}}, snapshot(r.config));
            return;
        }
        const std::string job = jobs_.submit(
            "mask", snapshot(r.config),
            [this, id, tok = *token, point](JobContext& ctx) {
                SessionRecord rec = record_or_404(id);
                Live& l = live(rec, ctx);
                if (l.needs_advance) {
                    ctx.phase(JobPhase::inverting);
                    l.session->advance(engine_.model());
                    l.needs_advance = false;
                }
                ctx.phase(JobPhase::masking);
                MaskCandidates mc;
                mc.token = tok;
                try {
                    const auto om = engine_.mask(l.session->source(), tok, point, rec.config);
                    for (const auto& c : om.candidates) mc.artifacts.push_back(artifacts_.put_mask(c, provenance("mask_candidate", id, rec.config)));
                    mc.selected = om.selected;
                    mc.score = om.score;
                    mc.fallback = om.fallback;
                    mc.point = om.point;
                    mc.selected_artifact = artifacts_.put_mask(om.mask, provenance("mask", id, rec.config));
                    mc.warnings = om.warnings;
                } catch (const MaskGenerationError& e) {
                    for (const auto& c : e.candidates()) mc.artifacts.push_back(artifacts_.put_mask(c, provenance("mask_candidate", id, rec.config)));
                    mc.warnings.push_back(e.what());
                    rec.mask = mc;
                    sessions_.save(rec);
                    throw;
                }
                rec.mask = mc;
                sessions_.save(rec);
                return nlohmann::json{{"mask", mc}};
            },
            id);
        reply(res, 202, {{"job", job}, {"session", id}}, snapshot(r.config));
    }

    void post_turn(const std::string& id, const httplib::Request& req, httplib::Response& res) {
        const auto r = record_or_404(id);
        const detail::RequestFields f(req);
        std::vector<std::string> bad;
        const auto token = f.text("token");
        if (!token || token->empty()) bad.push_back("token");
        const auto color = f.text("color_id");
        if (!color || color->empty()) bad.push_back("color_id");
        const auto point = point_field(f, bad);
        EditConfig cfg = r.config;
        if (auto o = f.value("overrides")) {
            try {
                cfg = edit_config_from_json(*o, r.config);
            } catch (const ValidationError& e) {
                bad.insert(bad.end(), e.fields().begin(), e.fields().end());
            }
        }
        // Candidate index from the last mask request, or an uploaded mask.
        std::optional<std::string> mask_artifact;
        std::optional<Mask> mask_upload;
        if (auto c = f.value("candidate")) {
            const int k = c->is_number_integer() ? c->get<int>() : -1;
            if (!r.mask || k < 0 || k >= static_cast<int>(r.mask->artifacts.size())) bad.push_back("candidate");
            else mask_artifact = r.mask->artifacts[static_cast<std::size_t>(k)];
        }
        try {
            if (auto b = f.blob("mask")) mask_upload = decode_mask_png(*b);
        } catch (const Error&) {
            bad.push_back("mask");
        }
        if (!bad.empty()) throw ValidationError(bad);

        const auto snap = snapshot(cfg);
        if (r.inversion != InversionStatus::ready) {
            reply(res, 409, {{"error", "session source is not ready"}, {"inversion_job", r.inversion_job}}, snap);
            return;
        }
        {
            std::lock_guard lock(colors_mu_);
            if (!engine_.assets().contains(*color)) {
                if (auto it = pending_colors_.find(*color); it != pending_colors_.end()) {
                    reply(res, 409, {{"error", "colour asset '" + *color + "' is not ready"}, {"asset_job", it->second.job}}, snap);
                    return;
                }
                throw NotFoundError("no colour asset '" + *color + "'");
            }
        }
        const std::string job = jobs_.submit(
            "turn", snap,
            [this, id, tok = *token, color_id = *color, point, cfg, mask_artifact, mask_upload](JobContext& ctx) {
                return run_turn(ctx, id, tok, color_id, point, cfg, mask_artifact, mask_upload);
            },
            id);
        reply(res, 202, {{"job", job}, {"session", id}}, snap);
    }

    nlohmann::json run_turn(JobContext& ctx, const std::string& id, const std::string& token, const std::string& color_id,
                            std::optional<Point> point, const EditConfig& cfg, const std::optional<std::string>& mask_artifact,
                            const std::optional<Mask>& mask_upload) {
        SessionRecord rec = record_or_404(id);
        Live& l = live(rec, ctx);
        if (l.needs_advance) {
            ctx.phase(JobPhase::inverting);
            l.session->advance(engine_.model());
            l.needs_advance = false;
        }
        ctx.phase(JobPhase::masking);
        const ReferenceColorAsset asset = engine_.assets().load(color_id);
        TurnSpec spec;
        spec.object_token = token;
        spec.asset = &asset;
        spec.point = point;
        const auto& src = l.session->source();
        if (mask_artifact) spec.mask_override = artifacts_.mask(*mask_artifact);
        if (mask_upload) spec.mask_override = *mask_upload;
        if (spec.mask_override && (spec.mask_override->width != src.input.width || spec.mask_override->height != src.input.height))
            spec.mask_override = resize_nearest(*spec.mask_override, src.input.width, src.input.height);
        engine_.edit(*l.session, spec, cfg, [&](int t) {
            ctx.phase(JobPhase::denoising);
            ctx.progress(cfg.steps - t + 1, cfg.steps);
        });
        l.needs_advance = true;
        const EditTurn& turn = l.session->turns().back();
        nlohmann::json j = turn_to_json(turn);
        j["output"] = artifacts_.put_image(turn.result, provenance("turn_output", id, cfg));
        j["mask_artifact"] = artifacts_.put_mask(turn.mask.mask, provenance("turn_mask", id, cfg));
        j["job"] = ctx.id();
        rec.turns.push_back(j);
        sessions_.save(rec);
        return nlohmann::json{{"turn", j}};
    }

    // ---- jobs, artifacts, evaluation ----

    void get_job(const std::string& id, httplib::Response& res) const {
        auto s = jobs_.status(id);
        if (!s) throw NotFoundError("no job " + id);
        reply(res, 200, {{"job", to_json_value(*s)}}, s->config);
    }

    void get_artifact(const std::string& hash, httplib::Response& res) const {
        if (!artifacts_.contains(hash)) throw NotFoundError("no artifact " + hash);
        const auto bytes = artifacts_.bytes(hash);
        res.set_header("ETag", "\"" + hash + "\"");
        res.set_header("Cache-Control", "public, max-age=31536000, immutable");
        res.set_header("X-Chromalign-Provenance", artifacts_.provenance(hash).dump());
        res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    }

    void post_eval(const httplib::Request& req, httplib::Response& res) {
        const detail::RequestFields f(req);
        std::vector<std::string> bad;
        const auto manifest = f.text("manifest");
        if (!manifest || manifest->empty()) bad.push_back("manifest");
        const auto run_dir = f.text("run_dir");
        if (!run_dir || run_dir->empty()) bad.push_back("run_dir");
        if (!bad.empty()) throw ValidationError(bad);
        const std::filesystem::path out = f.text("out").value_or((opt_.root / "eval" / detail::random_hex(8)).string());
        const auto snap = snapshot(opt_.defaults);
        const std::string job = jobs_.submit("eval", snap, [this, m = *manifest, rd = *run_dir, out](JobContext&) {
            const auto o = engine_.run_eval(m, rd, out);
            return nlohmann::json{{"csv", o.csv_path.string()},
                                  {"json", o.json_path.string()},
                                  {"csv_sha256", sha256_hex(o.csv)},
                                  {"expected", o.result.expected},
                                  {"evaluated", o.result.samples.size()},
                                  {"missing", o.result.missing}};
        });
        reply(res, 202, {{"job", job}, {"out", out.string()}}, snap);
    }

    Engine& engine_;
    ServiceOptions opt_;
    SessionStore sessions_;
    ArtifactStore artifacts_;
    std::mutex colors_mu_;
    std::map<std::string, PendingColor> pending_colors_;
    std::mutex submit_mu_;
    std::map<std::string, std::unique_ptr<Live>> live_;  // worker thread only
    JobQueue jobs_;  // last: its worker stops before the state above goes away
};

// Binds and serves until stop() is called on the server.
inline void serve(Service& service, httplib::Server& server, const std::string& host, int port) {
    service.mount(server);
    if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace chromalign
