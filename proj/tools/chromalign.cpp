#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

// Eigen first: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include <Eigen/Core>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "chromalign/bench/datasets.hpp"
#include "chromalign/probe/probes.hpp"
#include "chromalign/service/engine.hpp"
#include "chromalign/service/service.hpp"

namespace fs = std::filesystem;
using namespace chromalign;
using nlohmann::json;

namespace {

// Exit codes: 0 ok, 1 failure, 2 usage (CLI11), 3 not found, 4 conflict, 5 invalid input.
enum Exit { kOk = 0, kFailure = 1, kNotFound = 3, kConflict = 4, kInvalid = 5 };

struct Common {
    std::string model;
    std::string assets;
    std::string config_file;
    std::vector<std::string> sets;  // key=value, value parsed as JSON when possible
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--model", c.model, "Model description (default: $CHROMALIGN_MODEL or tiny)");
    cmd->add_option("--assets", c.assets, "Colour asset root (default: $CHROMALIGN_ASSET_ROOT)");
    cmd->add_option("--config", c.config_file, "EditConfig JSON file");
    cmd->add_option("--set", c.sets, "Config override key=value (repeatable)");
}

EditConfig load_config(const Common& c) {
    json j = json::object();
    if (!c.config_file.empty()) j = detail::read_json(c.config_file);
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError({kv});
        const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
        try {
            j[key] = json::parse(value);
        } catch (const json::exception&) {
            j[key] = value;
        }
    }
    return edit_config_from_json(j);
}

Engine make_engine(const Common& c) {
    auto s = EngineSettings::from_env();
    if (!c.model.empty()) s.model = c.model;
    if (!c.assets.empty()) s.asset_root = c.assets;
    return Engine(std::move(s));
}

std::optional<Point> parse_point(const std::string& s) {
    if (s.empty()) return std::nullopt;
    const auto comma = s.find(',');
    if (comma == std::string::npos) throw ValidationError({"point"});
    try {
        return Point{std::stoi(s.substr(0, comma)), std::stoi(s.substr(comma + 1))};
    } catch (const std::exception&) {
        throw ValidationError({"point"});
    }
}

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

// Source given either as --image or as --seed (generated).
struct SourceArgs {
    std::string image;
    std::optional<std::uint64_t> seed;
    std::string prompt;
    int width = 512, height = 512;

    void add(CLI::App* cmd) {
        cmd->add_option("--image", image, "Real source image (PNG)");
        cmd->add_option("--seed", seed, "Seed of a generated source");
        cmd->add_option("--prompt", prompt, "Source prompt")->required();
        cmd->add_option("--width", width, "Generated source width");
        cmd->add_option("--height", height, "Generated source height");
    }

    SourceState build(const Engine& e, const EditConfig& cfg) const {
        if (image.empty() == !seed.has_value()) throw ValidationError({"image|seed"});
        SourceDescriptor d;
        d.prompt = prompt;
        if (seed) {
            d.kind = SourceKind::generated;
            d.seed = *seed;
            d.width = width;
            d.height = height;
            return e.start_source(d, nullptr, cfg);
        }
        d.kind = SourceKind::real;
        const Image im = read_png(image);
        return e.start_source(d, &im, cfg);
    }
};

json source_summary(const SourceState& s) {
    json j = {{"kind", s.kind}, {"prompt", s.prompt}, {"input_hash", s.input_hash}, {"width", s.input.width}, {"height", s.input.height}};
    if (s.kind == SourceKind::generated) j["seed"] = s.seed;
    if (s.reconstruction_psnr) j["reconstruction_psnr_db"] = *s.reconstruction_psnr;
    return j;
}

void write_source(const SourceState& s, const fs::path& out) {
    fs::create_directories(out);
    write_png(out / "source.png", s.input);
    write_png(out / "reconstruction.png", s.reconstruction);
    for (int t = s.trajectory.steps; t >= 0; --t)
        write_f32(out / "trajectory" / ("z_" + std::to_string(t) + ".f32"), latent_array(s.trajectory.at_step(t)));
    detail::write_text(out / "source.json", source_summary(s).dump(2) + "\n");
}

// "token:color" or "token:color:x,y".
TurnSpec parse_turn(const std::string& s, std::string& color) {
    const auto a = s.find(':');
    if (a == std::string::npos) throw ValidationError({"turn"});
    TurnSpec spec;
    spec.object_token = s.substr(0, a);
    const auto b = s.find(':', a + 1);
    color = s.substr(a + 1, b == std::string::npos ? std::string::npos : b - a - 1);
    if (b != std::string::npos) spec.point = parse_point(s.substr(b + 1));
    if (spec.object_token.empty() || color.empty()) throw ValidationError({"turn"});
    return spec;
}

json turn_summary(const EditTurn& t, const EditConfig& cfg, const Engine& e) {
    json j = turn_to_json(t);
    j["provenance"] = e.snapshot(cfg);
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Image-guided object colour editing for latent diffusion"};
    app.require_subcommand(1);

    // invert
    Common inv_c;
    SourceArgs inv_src;
    std::string inv_out;
    auto* inv = app.add_subcommand("invert", "Invert (or generate) a source and write its trajectory");
    add_common(inv, inv_c);
    inv_src.add(inv);
    inv->add_option("--out", inv_out, "Output directory")->required();
    inv->callback([&] {
        const auto cfg = load_config(inv_c);
        auto e = make_engine(inv_c);
        const auto s = inv_src.build(e, cfg);
        write_source(s, inv_out);
        json j = source_summary(s);
        j["provenance"] = e.snapshot(cfg);
        print(j);
    });

    // extract-color
    Common ex_c;
    std::string ex_image, ex_color, ex_id, ex_prompt;
    int ex_size = 512;
    auto* ex = app.add_subcommand("extract-color", "Extract and cache a reference colour asset");
    add_common(ex, ex_c);
    ex->add_option("--image", ex_image, "Reference colour image (PNG)");
    ex->add_option("--pure", ex_color, "Use a built-in pure colour instead of an image");
    ex->add_option("--size", ex_size, "Side of the pure colour image");
    ex->add_option("--id", ex_id, "Colour id (default: the pure colour name)");
    ex->add_option("--prompt", ex_prompt, "Prompt used during extraction");
    ex->callback([&] {
        const auto cfg = load_config(ex_c);
        auto e = make_engine(ex_c);
        if (ex_image.empty() == ex_color.empty()) throw ValidationError({"image|pure"});
        const Image im = ex_image.empty() ? pure_color_image(pure_color(ex_color), ex_size, ex_size) : read_png(ex_image);
        const std::string id = ex_id.empty() ? ex_color : ex_id;
        if (id.empty()) throw ValidationError({"id"});
        const auto before = e.assets().extractions();
        const auto a = e.register_color(im, id, Engine::extraction_options(cfg, ex_prompt));
        json j = asset_descriptor(a);
        j["cached"] = e.assets().extractions() == before;
        j["path"] = e.assets().path_for(id).string();
        print(j);
    });

    // mask
    Common mk_c;
    SourceArgs mk_src;
    std::string mk_token, mk_point, mk_out;
    auto* mk = app.add_subcommand("mask", "Object mask from an object token and optional point");
    add_common(mk, mk_c);
    mk_src.add(mk);
    mk->add_option("--token", mk_token, "Object token in the prompt")->required();
    mk->add_option("--point", mk_point, "Prompt point x,y (default: attention centroid)");
    mk->add_option("--out", mk_out, "Output directory")->required();
    mk->callback([&] {
        const auto cfg = load_config(mk_c);
        auto e = make_engine(mk_c);
        const auto s = mk_src.build(e, cfg);
        const auto om = e.mask(s, mk_token, parse_point(mk_point), cfg);
        const fs::path out(mk_out);
        write_mask_png(out / "mask.png", om.mask);
        write_mask_png(out / "attention_mask.png", om.cross.mask);
        for (std::size_t i = 0; i < om.candidates.size(); ++i)
            write_mask_png(out / "candidates" / (std::to_string(i) + ".png"), om.candidates[i]);
        json j = {{"selected", om.selected}, {"score", om.score},       {"fallback", om.fallback},
                  {"point", {om.point.x, om.point.y}}, {"area", om.mask.area()}, {"candidates", om.candidates.size()},
                  {"warnings", om.warnings}, {"provenance", e.snapshot(cfg)}};
        detail::write_text(out / "mask.json", j.dump(2) + "\n");
        print(j);
    });

    // edit and multi-turn share the turn loop
    auto run_turns = [](const Common& c, const SourceArgs& src, const std::vector<std::string>& turns,
                        const std::string& mask_file, const std::string& out_dir) {
        const auto cfg = load_config(c);
        auto e = make_engine(c);
        EditSession session(src.build(e, cfg), cfg);
        const fs::path out(out_dir);
        write_png(out / "source.png", session.source().input);
        json summary = {{"source", source_summary(session.source())}, {"turns", json::array()}};
        for (std::size_t i = 0; i < turns.size(); ++i) {
            std::string color;
            TurnSpec spec = parse_turn(turns[i], color);
            const auto asset = e.assets().load(color);
            spec.asset = &asset;
            if (i == 0 && !mask_file.empty()) spec.mask_override = read_mask_png(mask_file);
            if (i > 0) session.advance(e.model());
            e.edit(session, spec);
            const auto& t = session.turns().back();
            save_turn(t, out / ("turn_" + std::to_string(t.index)));
            summary["turns"].push_back(turn_summary(t, cfg, e));
        }
        write_png(out / "result.png", session.turns().back().result);
        detail::write_text(out / "session.json", summary.dump(2) + "\n");
        print(summary);
    };

    Common ed_c;
    SourceArgs ed_src;
    std::string ed_token, ed_color, ed_point, ed_mask, ed_out;
    auto* ed = app.add_subcommand("edit", "One colour edit turn");
    add_common(ed, ed_c);
    ed_src.add(ed);
    ed->add_option("--token", ed_token, "Object token in the prompt")->required();
    ed->add_option("--color", ed_color, "Registered colour id")->required();
    ed->add_option("--point", ed_point, "Segmenter point x,y");
    ed->add_option("--mask", ed_mask, "Mask override (PNG)");
    ed->add_option("--out", ed_out, "Output directory")->required();
    ed->callback([&] {
        const std::string turn = ed_token + ":" + ed_color + (ed_point.empty() ? "" : ":" + ed_point);
        run_turns(ed_c, ed_src, {turn}, ed_mask, ed_out);
    });

    Common mt_c;
    SourceArgs mt_src;
    std::vector<std::string> mt_turns;
    std::string mt_mask, mt_out;
    auto* mt = app.add_subcommand("multi-turn", "Sequential turns, each on the re-inverted previous output");
    add_common(mt, mt_c);
    mt_src.add(mt);
    mt->add_option("--turn", mt_turns, "token:color[:x,y], in order (repeatable)")->required();
    mt->add_option("--mask", mt_mask, "Mask override for the first turn (PNG)");
    mt->add_option("--out", mt_out, "Output directory")->required();
    mt->callback([&] { run_turns(mt_c, mt_src, mt_turns, mt_mask, mt_out); });

    // eval
    Common ev_c;
    std::string ev_manifest, ev_run, ev_out;
    double ev_missing = 0.05;
    auto* ev = app.add_subcommand("eval", "Score a run directory against a manifest");
    add_common(ev, ev_c);
    ev->add_option("--manifest", ev_manifest, "Manifest JSON or ColorBench root")->required();
    ev->add_option("--run-dir", ev_run, "Directory of {task id}.png targets")->required();
    ev->add_option("--out", ev_out, "Report directory")->required();
    ev->add_option("--max-missing", ev_missing, "Fail at or above this missing fraction");
    ev->callback([&] {
        auto e = make_engine(ev_c);
        EvalOptions o;
        o.max_missing_fraction = ev_missing;
        const auto r = e.run_eval(ev_manifest, ev_run, ev_out, o);
        json j = {{"csv", r.csv_path.string()}, {"json", r.json_path.string()}, {"expected", r.result.expected},
                  {"evaluated", r.result.samples.size()}, {"missing", r.result.missing}, {"mean", r.result.table.mean},
                  {"providers", r.result.providers}};
        print(j);
    });

    // bench
    auto* bench = app.add_subcommand("bench", "Benchmark datasets");
    bench->require_subcommand(1);
    std::string bg_out, bg_subjects, bg_colors;
    std::uint64_t bg_seed = SeedPolicy{}.base_seed;
    auto* bg = bench->add_subcommand("build-generated", "Write the generated-prompt manifest");
    bg->add_option("--out", bg_out, "Manifest path")->required();
    bg->add_option("--subjects", bg_subjects, "Comma-separated subject subset");
    bg->add_option("--colors", bg_colors, "Comma-separated colour subset");
    bg->add_option("--base-seed", bg_seed, "Base seed of the per-source seed stream");
    bg->callback([&] {
        auto split = [](const std::string& s) {
            std::vector<std::string> v;
            std::size_t start = 0;
            while (start <= s.size()) {
                const auto c = s.find(',', start);
                v.push_back(s.substr(start, c == std::string::npos ? std::string::npos : c - start));
                if (c == std::string::npos) break;
                start = c + 1;
            }
            return v;
        };
        const auto subjects = bg_subjects.empty() ? generated_subjects() : split(bg_subjects);
        const auto colors = bg_colors.empty() ? all_color_names() : split(bg_colors);
        const auto m = build_generated_manifest(subjects, {kPromptTemplates.begin(), kPromptTemplates.end()}, colors, SeedPolicy{bg_seed});
        save_manifest(m, bg_out);
        print({{"manifest", bg_out}, {"sources", m.sources.size()}, {"tasks", m.tasks.size()}, {"sha256", manifest_hash(m)}});
    });
    std::string vc_root;
    auto* vc = bench->add_subcommand("validate-colorbench", "Check a ColorBench tree");
    vc->add_option("--root", vc_root, "Dataset root")->required();
    int vc_status = kOk;
    vc->callback([&] {
        const auto r = validate_colorbench(vc_root);
        print({{"ok", r.ok()}, {"sources", r.sources}, {"pairs", r.pairs}, {"subjects", r.subjects}, {"deviations", r.deviations}});
        if (!r.ok()) vc_status = kInvalid;
    });

    // probe
    auto* probe = app.add_subcommand("probe", "Attention probes");
    probe->require_subcommand(1);
    Common pm_c;
    SourceArgs pm_src;
    std::string pm_token, pm_out;
    bool pm_per_step = false;
    int pm_res = kHeatmapResolution;
    auto* pm = probe->add_subcommand("maps", "Cross-attention heatmaps of one token");
    add_common(pm, pm_c);
    pm_src.add(pm);
    pm->add_option("--token", pm_token, "Token to map")->required();
    pm->add_flag("--per-timestep", pm_per_step, "One map per timestep instead of the mean");
    pm->add_option("--resolution", pm_res, "Heatmap side");
    pm->add_option("--out", pm_out, "Output directory")->required();
    pm->callback([&] {
        const auto cfg = load_config(pm_c);
        auto e = make_engine(pm_c);
        const auto s = pm_src.build(e, cfg);
        HeatmapOptions o;
        o.reduction = pm_per_step ? Reduction::per_timestep : Reduction::mean;
        o.resolution = pm_res;
        const auto h = aggregate_cross_maps(s.captures, e.model().tokenize(s.prompt), pm_token, o);
        export_heatmaps(h, pm_out);
        print({{"index", (fs::path(pm_out) / "index.json").string()}, {"entries", h.entries.size()}});
    });

    Common pa_c;
    std::string pa_prompt, pa_token, pa_target = "value", pa_out;
    float pa_factor = 2.0f;
    AmplificationOptions pa_opt;
    auto* pa = probe->add_subcommand("amplify", "Generate with one token's key or value scaled");
    add_common(pa, pa_c);
    pa->add_option("--prompt", pa_prompt, "Prompt")->required();
    pa->add_option("--token", pa_token, "Token to amplify")->required();
    pa->add_option("--factor", pa_factor, "Scale factor (1 = plain generation)");
    pa->add_option("--target", pa_target, "key or value")->check(CLI::IsMember({"key", "value"}));
    pa->add_option("--seed", pa_opt.seed, "Seed");
    pa->add_option("--steps", pa_opt.steps, "Denoising steps");
    pa->add_option("--width", pa_opt.width, "Width");
    pa->add_option("--height", pa_opt.height, "Height");
    pa->add_flag("--decoder-only", pa_opt.decoder_only, "Scale only decoder cross sites");
    pa->add_option("--out", pa_out, "Output directory")->required();
    pa->callback([&] {
        auto e = make_engine(pa_c);
        const auto r = amplification_probe(e.model(), pa_prompt, pa_token, pa_factor,
                                           pa_target == "key" ? AmplifyTarget::key : AmplifyTarget::value, pa_opt);
        const fs::path out(pa_out);
        write_png(out / "image.png", r.image);
        export_heatmaps(r.heatmap, out / "maps");
        json sites = json::array();
        for (const auto& s : r.sites) sites.push_back(s.name());
        json j = {{"token", r.token}, {"token_index", r.token_index}, {"factor", r.factor}, {"target", pa_target},
                  {"seed", pa_opt.seed}, {"steps", pa_opt.steps}, {"sites", sites}, {"image", "image.png"}, {"maps", "maps/index.json"}};
        detail::write_text(out / "index.json", j.dump(2) + "\n");
        print(j);
    });

    Common pl_c;
    SourceArgs pl_src;
    std::string pl_token, pl_mask, pl_out;
    auto* pl = probe->add_subcommand("leakage", "Share of a colour token's attention inside the object mask");
    add_common(pl, pl_c);
    pl_src.add(pl);
    pl->add_option("--token", pl_token, "Colour token")->required();
    pl->add_option("--mask", pl_mask, "Object mask (PNG)")->required();
    pl->add_option("--out", pl_out, "Output directory")->required();
    pl->callback([&] {
        const auto cfg = load_config(pl_c);
        auto e = make_engine(pl_c);
        const auto s = pl_src.build(e, cfg);
        const auto rep = leakage_report(s.captures, e.model().tokenize(s.prompt), pl_token, read_mask_png(pl_mask));
        const auto j = leakage_to_json(rep);
        detail::write_text(fs::path(pl_out) / "index.json", j.dump(2) + "\n");
        print({{"index", (fs::path(pl_out) / "index.json").string()}, {"entries", rep.entries.size()}});
    });

    // serve
    Common sv_c;
    std::string sv_host = "127.0.0.1", sv_root = "chromalign-service";
    int sv_port = 8080;
    auto* sv = app.add_subcommand("serve", "Run the HTTP service");
    add_common(sv, sv_c);
    sv->add_option("--host", sv_host, "Bind address");
    sv->add_option("--port", sv_port, "Port");
    sv->add_option("--root", sv_root, "Session and artifact store");
    sv->callback([&] {
        ServiceOptions o;
        o.root = sv_root;
        o.defaults = load_config(sv_c);
        auto e = make_engine(sv_c);
        Service service(e, o);
        httplib::Server server;
        std::cerr << "listening on " << sv_host << ":" << sv_port << "\n";
        serve(service, server, sv_host, sv_port);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const DatasetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const NotFoundError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNotFound;
    } catch (const ConflictError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConflict;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return vc_status;
}
