#include "dereflect/cli.hpp"

#include <chrono>
#include <fstream>
#include <optional>

#include <opencv2/imgproc.hpp>

#include "CLI11.hpp"
#include "json.hpp"

#include "dereflect/align.hpp"
#include "dereflect/checkpoint.hpp"
#include "dereflect/datagen.hpp"
#include "dereflect/image_io.hpp"
#include "dereflect/kernels.hpp"
#include "dereflect/metrics.hpp"
#include "dereflect/trainer.hpp"

#ifndef DEREFLECT_CODE_VERSION
#define DEREFLECT_CODE_VERSION "unknown"
#endif

namespace dereflect::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::uint64_t seed = 0;
    std::string config_path;
    int jobs = 1;
    std::string out;
};

void add_common(CLI::App* app, Common& c, bool out_required = true) {
    app->add_option("--seed", c.seed, "Base random seed");
    app->add_option("--config", c.config_path, "JSON config file");
    app->add_option("--jobs", c.jobs, "Worker threads for compute kernels")->check(CLI::PositiveNumber);
    auto* o = app->add_option("--out", c.out, "Output directory");
    if (out_required) o->required();
}

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("config " + path + " is not valid JSON: " + e.what());
    }
}

void require_dir(const std::string& path, const char* what) {
    if (!fs::is_directory(path)) throw ValidationError(std::string(what) + " '" + path + "' is not a directory");
}

void require_file(const std::string& path, const char* what) {
    if (!fs::is_regular_file(path)) throw ValidationError(std::string(what) + " '" + path + "' does not exist");
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

class Run {
public:
    Run(std::string name, const Common& c) : name_(std::move(name)), common_(c), start_(clock::now()) {}

    // Everything needed to repeat the run; wall time is the only field
    // that differs between repetitions.
    void finish(const json& config) const {
        const double wall = std::chrono::duration<double>(clock::now() - start_).count();
        const json m = {{"subcommand", name_},
                        {"config", config},
                        {"seed", common_.seed},
                        {"jobs", common_.jobs},
                        {"code_version", DEREFLECT_CODE_VERSION},
                        {"wall_time_s", wall}};
        write_text(fs::path(common_.out) / "run_manifest.json", m.dump(2) + "\n");
    }

private:
    using clock = std::chrono::steady_clock;
    std::string name_;
    Common common_;
    clock::time_point start_;
};

// ---------------------------------------------------------------- synth

struct SynthArgs {
    Common common;
    std::string t_dir, r_dir;
    int scenes = 10;
    int per_scene = 3;
    int size = 64;
};

std::string scene_name(int i) {
    char id[16];
    std::snprintf(id, sizeof id, "s%04d", i);
    return id;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    if (a.t_dir.empty() != a.r_dir.empty()) throw ValidationError("--t-dir and --r-dir must be given together");
    if (a.scenes < 1 || a.per_scene < 1) throw ValidationError("--n and --per-scene must be positive");
    if (a.size < 8) throw ValidationError("--size must be at least 8");
    std::vector<fs::path> t_pool, r_pool;
    if (!a.t_dir.empty()) {
        require_dir(a.t_dir, "--t-dir");
        require_dir(a.r_dir, "--r-dir");
        t_pool = io::list_images(a.t_dir);
        r_pool = io::list_images(a.r_dir);
        if (t_pool.empty() || r_pool.empty()) throw ValidationError("source directories contain no images");
    }
    const fs::path root(a.common.out);
    const datagen::HeuristicRealismScorer scorer;
    std::vector<datagen::ManifestRecord> records;
    for (int i = 0; i < a.scenes; ++i) {
        const std::string id = scene_name(i);
        datagen::SceneGroup group;
        if (t_pool.empty()) {
            group = datagen::procedural_corpus(1, a.per_scene, a.size, a.common.seed, i).front();
        } else {
            Rng rng = make_stream(a.common.seed, "synth", std::uint64_t(i));
            auto pick = [&](const std::vector<fs::path>& pool) {
                return io::fit_square(io::read_image(pool[std::uniform_int_distribution<std::size_t>(
                                          0, pool.size() - 1)(rng)]),
                                      a.size);
            };
            const ImageTensor t = pick(t_pool);
            std::vector<ImageTensor> refl;
            for (int k = 0; k < a.per_scene; ++k) refl.push_back(pick(r_pool));
            group = datagen::generate_scene(t, refl, rng, id);
        }
        const std::string t_rel = "T/" + id + ".png";
        io::write_png(root / t_rel, group.transmission());
        for (const datagen::MixTriple& tri : group.triples) {
            datagen::ManifestRecord r;
            r.scene_id = tri.scene_id;
            r.name = tri.name;
            r.t_path = t_rel;
            r.r_path = "R/" + tri.name + ".png";
            r.m_path = "M/" + tri.name + ".png";
            r.gamma1 = tri.coeffs.gamma1;
            r.gamma2 = tri.coeffs.gamma2;
            r.score = scorer.score(tri);
            io::write_png(root / r.r_path, tri.reflection);
            io::write_png(root / r.m_path, tri.mixed);
            // per-mix copy of T so eval/preview can pair files by name
            io::write_png(root / "GT" / (tri.name + ".png"), group.transmission());
            records.push_back(r);
        }
    }
    datagen::write_manifest(root / "manifest.jsonl", records);
    out << "wrote " << records.size() << " triples in " << a.scenes << " scenes to " << root.string() << "\n";
    Run("synth", a.common)
        .finish({{"t_dir", a.t_dir},
                 {"r_dir", a.r_dir},
                 {"n", a.scenes},
                 {"per_scene", a.per_scene},
                 {"size", a.size},
                 {"source", t_pool.empty() ? "procedural" : "directories"}});
    return kExitOk;
}

// ---------------------------------------------------------------- filter

struct FilterArgs {
    Common common;
    std::string manifest;
    double keep = datagen::kReferenceKeepFraction;
    std::optional<double> threshold;
    std::string scorer = "stored";
};

int cmd_filter(const FilterArgs& a, std::ostream& out) {
    require_file(a.manifest, "--manifest");
    if (!(a.keep > 0.0 && a.keep <= 1.0)) throw ValidationError("--keep must be in (0,1]");
    const fs::path src_dir = fs::absolute(a.manifest).parent_path();
    std::vector<datagen::ManifestRecord> records = datagen::read_manifest(a.manifest);

    if (a.scorer != "stored") {
        std::unique_ptr<datagen::RealismScorer> scorer;
        if (a.scorer == "heuristic") {
            scorer = std::make_unique<datagen::HeuristicRealismScorer>();
        } else if (a.scorer == "embedding") {
            const char* cache = std::getenv("DEREFLECT_CACHE");
            if (!cache) throw ValidationError("the embedding scorer needs DEREFLECT_CACHE");
            scorer = datagen::load_embedding_scorer(cache);
        } else {
            throw ValidationError("unknown scorer '" + a.scorer + "'");
        }
        for (auto& r : records) {
            datagen::MixTriple t;
            t.scene_id = r.scene_id;
            t.name = r.name;
            t.transmission = io::read_image(src_dir / r.t_path);
            t.mixed = io::read_image(src_dir / r.m_path);
            t.coeffs = {r.gamma1, r.gamma2};
            r.score = scorer->score(t);
        }
    }

    std::vector<datagen::ManifestRecord> kept;
    if (a.threshold) {
        std::vector<double> scores;
        std::vector<std::string> ids;
        for (const auto& r : records) {
            scores.push_back(r.score);
            ids.push_back(r.scene_id);
        }
        for (std::size_t i : datagen::rank_by_score(scores, ids))
            if (records[i].score >= *a.threshold) kept.push_back(records[i]);
    } else {
        kept = datagen::filter_records(records, a.keep);
    }

    const fs::path dst_dir = fs::absolute(a.common.out);
    fs::create_directories(dst_dir);
    for (auto& r : kept) {
        auto rebase = [&](std::string& p) {
            if (!p.empty()) p = fs::relative(src_dir / p, dst_dir).generic_string();
        };
        rebase(r.t_path);
        rebase(r.r_path);
        rebase(r.m_path);
    }
    datagen::write_manifest(dst_dir / "manifest.jsonl", kept);
    out << "kept " << kept.size() << " of " << records.size() << " triples\n";
    json cfg = {{"manifest", a.manifest}, {"scorer", a.scorer}, {"kept", kept.size()}, {"total", records.size()}};
    if (a.threshold) cfg["threshold"] = *a.threshold;
    else cfg["keep"] = a.keep;
    Run("filter", a.common).finish(cfg);
    return kExitOk;
}

// ---------------------------------------------------------------- align

struct AlignArgs {
    Common common;
    std::string mixed, gt;
};

align::AlignConfig align_config(const json& j) {
    align::AlignConfig c;
    if (!j.contains("align")) return c;
    const json& a = j.at("align");
    c.ratio_threshold = a.value("ratio_threshold", c.ratio_threshold);
    c.inlier_tol = a.value("inlier_tol", c.inlier_tol);
    c.max_iters = a.value("max_iters", c.max_iters);
    c.min_inliers = a.value("min_inliers", c.min_inliers);
    c.confidence = a.value("confidence", c.confidence);
    return c;
}

int cmd_align(const AlignArgs& a, std::ostream& out, std::ostream& err) {
    require_dir(a.mixed, "--mixed");
    require_dir(a.gt, "--gt");
    const align::AlignConfig cfg = align_config(load_config(a.common.config_path));
    const auto files = io::list_images(a.mixed);
    if (files.empty()) throw ValidationError("--mixed contains no images");
    for (const auto& f : files) {
        if (!fs::exists(fs::path(a.gt) / f.filename())) {
            throw ValidationError("no ground truth for " + f.filename().string());
        }
    }
    const fs::path root(a.common.out);
    std::string report;
    int failures = 0;
    std::uint64_t index = 0;
    for (const auto& f : files) {
        const std::string name = f.filename().string();
        json line = {{"name", name}};
        try {
            const ImageTensor mixed = io::read_image(f);
            const ImageTensor gt = io::read_image(fs::path(a.gt) / f.filename());
            const auto matches = align::detect_and_match(mixed, gt, cfg);
            Rng rng = make_stream(a.common.seed, "align", index);
            const align::HomographyFit fit = align::estimate_homography(matches, rng, cfg);
            const align::WarpResult w = align::warp_to_reference(mixed, fit.h, gt.height(), gt.width());
            const std::string stem = f.stem().string();
            io::write_png(root / "warped" / (stem + ".png"), w.image);
            io::write_mask_png(root / "masks" / (stem + ".png"), w.valid, gt.height(), gt.width());
            line["n_matches"] = matches.size();
            line["n_inliers"] = fit.n_inliers;
            line["corner_shift_px"] = align::corner_shift(fit.h, gt.height(), gt.width());
        } catch (const std::exception& e) {
            ++failures;
            line["error"] = e.what();
            err << name << ": " << e.what() << "\n";
        }
        report += line.dump() + "\n";
        ++index;
    }
    write_text(root / "report.jsonl", report);
    out << "aligned " << files.size() - failures << " of " << files.size() << " pairs\n";
    Run("align", a.common)
        .finish({{"mixed", a.mixed},
                 {"gt", a.gt},
                 {"ratio_threshold", cfg.ratio_threshold},
                 {"inlier_tol", cfg.inlier_tol},
                 {"max_iters", cfg.max_iters},
                 {"min_inliers", cfg.min_inliers},
                 {"confidence", cfg.confidence}});
    return failures == 0 ? kExitOk : kExitRuntime;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    Common common;
    bool seed_given = false;
    std::string stage = "all";
    std::string data;
    std::string init;
    bool allow_out_of_order = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    require_file(a.data, "--data");
    if (!a.init.empty()) require_file(a.init, "--init");
    const json cfg = load_config(a.common.config_path);
    const json stage_cfg = cfg.value("stages", json::object());

    std::vector<train::Stage> stages;
    if (a.stage == "all") {
        stages.assign(std::begin(train::kAllStages), std::end(train::kAllStages));
    } else {
        stages.push_back(train::stage_from_name(a.stage));
    }
    std::vector<train::StageConfig> configs;
    for (train::Stage s : stages) {
        train::StageConfig sc = train::StageConfig::from_json(s, stage_cfg.value(train::stage_name(s), json::object()));
        if (a.seed_given || !stage_cfg.value(train::stage_name(s), json::object()).contains("seed")) {
            sc.seed = a.common.seed;
        }
        if (a.allow_out_of_order) sc.allow_out_of_order = true;
        configs.push_back(sc);
    }

    net::Model model = [&] {
        if (!a.init.empty()) return net::load_checkpoint(a.init);
        net::ModelConfig mc = net::ModelConfig::from_json(cfg.value("model", json::object()));
        if (a.seed_given || !cfg.value("model", json::object()).contains("init_seed")) mc.init_seed = a.common.seed;
        return net::Model(mc);
    }();
    // ordering is checked before any data is read
    for (const auto& sc : configs) {
        if (sc.allow_out_of_order || sc.stage == train::Stage::prior) break;
        const char* need = sc.stage == train::Stage::foundation   ? "prior"
                           : sc.stage == train::Stage::invariant ? "foundation"
                                                                 : "invariant";
        if (!model.has_stage(need)) {
            throw ValidationError(std::string("stage '") + train::stage_name(sc.stage) + "' requires a completed '" +
                                  need + "' stage; pass --init with such a checkpoint");
        }
        break;
    }

    const auto data = datagen::load_scene_groups(a.data);
    const fs::path root(a.common.out);
    fs::create_directories(root);
    std::ofstream log(root / "train_log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write training log");
    const train::LogSink sink = [&](const train::LogRecord& r) { log << r.to_json().dump() << "\n"; };

    json stage_json = json::array();
    for (const auto& sc : configs) {
        const auto result = train::run_stage(model, data, sc, sink);
        log.flush();
        if (configs.size() > 1) {
            net::save_checkpoint(model, root / (std::string("checkpoint_") + train::stage_name(sc.stage) + ".bin"));
        }
        out << train::stage_name(sc.stage) << ": " << result.log.size() << " steps";
        if (!result.log.empty()) out << ", final loss " << result.log.back().total();
        out << "\n";
        stage_json.push_back(sc.to_json());
    }
    net::save_checkpoint(model, root / "checkpoint.bin");
    Run("train", a.common)
        .finish({{"stage", a.stage},
                 {"data", a.data},
                 {"init", a.init},
                 {"model", model.config().to_json()},
                 {"stages", stage_json}});
    return kExitOk;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
    Common common;
    std::string ckpt, input;
};

int cmd_infer(const InferArgs& a, std::ostream& out, std::ostream& err) {
    require_file(a.ckpt, "--ckpt");
    std::vector<fs::path> files;
    if (fs::is_directory(a.input)) files = io::list_images(a.input);
    else if (fs::is_regular_file(a.input)) files.push_back(a.input);
    else throw ValidationError("--in '" + a.input + "' does not exist");
    if (files.empty()) throw ValidationError("--in contains no images");
    const net::Model model = net::load_checkpoint(a.ckpt);
    bool warned = false;
    for (const auto& f : files) {
        const net::InferResult r = model.infer(io::read_image(f));
        if (r.untrained_warning && !warned) {
            err << "warning: checkpoint has no trained conditioning branch; outputs are not dereflected\n";
            warned = true;
        }
        io::write_png(fs::path(a.common.out) / (f.stem().string() + ".png"), r.image);
    }
    out << "wrote " << files.size() << " images\n";
    Run("infer", a.common)
        .finish({{"ckpt", a.ckpt},
                 {"in", a.input},
                 {"noise_seed", model.config().noise_seed},
                 {"stages_completed", model.stages_completed},
                 {"untrained_warning", warned}});
    return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    Common common;
    std::string pred, gt, name = "toy";
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    require_dir(a.pred, "--pred");
    require_dir(a.gt, "--gt");
    const metrics::BenchmarkReport report = metrics::evaluate_benchmark(a.pred, a.gt, a.name);
    const fs::path root(a.common.out);
    write_text(root / "report.jsonl", metrics::to_jsonl(report));
    const std::string table = metrics::summary_table(report);
    write_text(root / "summary.txt", table);
    out << table;
    Run("eval", a.common)
        .finish({{"pred", a.pred}, {"gt", a.gt}, {"benchmark", a.name}, {"errors", report.errors.size()}});
    return report.errors.empty() ? kExitOk : kExitValidation;
}

// ---------------------------------------------------------------- preview

struct PreviewArgs {
    Common common;
    std::string mixed, output, gt;
};

int cmd_preview(const PreviewArgs& a, std::ostream& out) {
    require_dir(a.mixed, "--mixed");
    require_dir(a.output, "--output");
    if (!a.gt.empty()) require_dir(a.gt, "--gt");
    const auto files = io::list_images(a.mixed);
    if (files.empty()) throw ValidationError("--mixed contains no images");
    std::vector<std::vector<ImageTensor>> rows;
    for (const auto& f : files) {
        std::vector<fs::path> cells = {f, fs::path(a.output) / f.filename()};
        if (!a.gt.empty()) cells.push_back(fs::path(a.gt) / f.filename());
        std::vector<ImageTensor> row;
        for (const auto& c : cells) {
            if (!fs::exists(c)) throw ValidationError("missing counterpart " + c.string());
            row.push_back(io::read_image(c));
            require_same_shape(row.front(), row.back(), "preview cell");
        }
        rows.push_back(std::move(row));
    }
    const int h = rows.front().front().height(), w = rows.front().front().width();
    const int cols = int(rows.front().size());
    ImageTensor grid(3, h * int(rows.size()), w * cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (int c = 0; c < cols; ++c) {
            const ImageTensor& cell = rows[r][c];
            if (cell.height() != h || cell.width() != w) throw ValidationError("preview images differ in size");
            for (int ch = 0; ch < 3; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) grid.at(ch, int(r) * h + y, c * w + x) = cell.at(ch, y, x);
        }
    }
    io::write_png(fs::path(a.common.out) / "preview.png", grid);
    out << "wrote " << rows.size() << "x" << cols << " grid\n";
    Run("preview", a.common).finish({{"mixed", a.mixed}, {"output", a.output}, {"gt", a.gt}, {"rows", rows.size()}});
    return kExitOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Single-image reflection removal toolkit", "dereflect"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate mixed images from transmission/reflection pools");
    add_common(s, synth.common);
    s->add_option("--t-dir", synth.t_dir, "Transmission image directory");
    s->add_option("--r-dir", synth.r_dir, "Reflection image directory");
    s->add_option("--n", synth.scenes, "Number of scenes");
    s->add_option("--per-scene", synth.per_scene, "Reflections per scene");
    s->add_option("--size", synth.size, "Square output size");

    FilterArgs filter;
    double threshold = 0.0;
    auto* f = app.add_subcommand("filter", "Keep the most realistic triples of a manifest");
    add_common(f, filter.common);
    f->add_option("--manifest", filter.manifest, "Input manifest.jsonl")->required();
    auto* keep_opt = f->add_option("--keep", filter.keep, "Fraction kept by rank");
    auto* thr_opt = f->add_option("--threshold", threshold, "Keep scores >= threshold instead");
    keep_opt->excludes(thr_opt);
    f->add_option("--scorer", filter.scorer, "stored | heuristic | embedding");

    AlignArgs al;
    auto* a = app.add_subcommand("align", "Register mixed images to their ground truth");
    add_common(a, al.common);
    a->add_option("--mixed", al.mixed, "Mixed image directory")->required();
    a->add_option("--gt", al.gt, "Ground-truth directory")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Run training stages");
    add_common(t, tr.common);
    t->add_option("--stage", tr.stage, "prior | foundation | invariant | decoder | all");
    t->add_option("--data", tr.data, "Dataset manifest.jsonl")->required();
    t->add_option("--init", tr.init, "Checkpoint to start from");
    t->add_flag("--allow-out-of-order", tr.allow_out_of_order, "Skip the stage-ordering check");

    InferArgs inf;
    auto* i = app.add_subcommand("infer", "Remove reflections from images");
    add_common(i, inf.common);
    i->add_option("--ckpt", inf.ckpt, "Checkpoint")->required();
    i->add_option("--in", inf.input, "Image file or directory")->required();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "PSNR/SSIM of predictions against ground truth");
    add_common(e, ev.common);
    e->add_option("--pred", ev.pred, "Prediction directory")->required();
    e->add_option("--gt", ev.gt, "Ground-truth directory")->required();
    e->add_option("--name", ev.name, "Benchmark name");

    PreviewArgs pv;
    auto* p = app.add_subcommand("preview", "Side-by-side comparison grid");
    add_common(p, pv.common);
    p->add_option("--mixed", pv.mixed, "Mixed image directory")->required();
    p->add_option("--output", pv.output, "Model output directory")->required();
    p->add_option("--gt", pv.gt, "Ground-truth directory");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << "\n";
        CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return kExitValidation;
    }

    CLI::App* chosen = app.get_subcommands().front();
    const std::string name = chosen->get_name();
    try {
        auto prepare = [&](Common& c) {
            kernels::set_num_threads(c.jobs);
            fs::create_directories(c.out);
        };
        if (name == "synth") {
            prepare(synth.common);
            return cmd_synth(synth, out);
        }
        if (name == "filter") {
            if (thr_opt->count()) filter.threshold = threshold;
            prepare(filter.common);
            return cmd_filter(filter, out);
        }
        if (name == "align") {
            prepare(al.common);
            return cmd_align(al, out, err);
        }
        if (name == "train") {
            tr.seed_given = t->get_option("--seed")->count() > 0;
            prepare(tr.common);
            return cmd_train(tr, out);
        }
        if (name == "infer") {
            prepare(inf.common);
            return cmd_infer(inf, out, err);
        }
        if (name == "eval") {
            prepare(ev.common);
            return cmd_eval(ev, out);
        }
        if (name == "preview") {
            prepare(pv.common);
            return cmd_preview(pv, out);
        }
    } catch (const ValidationError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& ex) {
        err << "runtime failure: " << ex.what() << "\n";
        return kExitRuntime;
    }
    return kExitValidation;
}

} // namespace dereflect::cli
