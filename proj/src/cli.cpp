#include "nodule/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include "nodule/data_model.hpp"
#include "nodule/errors.hpp"
#include "nodule/evaluation.hpp"
#include "nodule/ingestion.hpp"
#include "nodule/losses.hpp"
#include "nodule/network.hpp"
#include "nodule/phantom.hpp"
#include "nodule/preprocess.hpp"
#include "nodule/retrieval.hpp"
#include "nodule/training.hpp"

namespace nodule::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    std::optional<int> side;
    std::string out;
};

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError(path, "cannot write");
    f << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError(path, "cannot open");
    return json::parse(f);
}

void write_run_config(const fs::path& dir, const std::string& command, const json& options) {
    write_json(dir / "run-config.json", json{{"command", command}, {"options", options}});
}

fs::path require_out(const Globals& g) {
    if (g.out.empty()) throw ArgumentError("--out is required");
    fs::create_directories(g.out);
    return g.out;
}

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
    int n_sure = 40;
    int n_unsure = 60;
    double separation = 1.0;
    double spacing = 0.5;
    int raters = 4;
    double rater_noise = 0.3;
    int distractors = 3;
};

int cmd_phantom(const Globals& g, const PhantomArgs& a, std::ostream& out) {
    PhantomSpec spec;
    spec.n_sure = a.n_sure;
    spec.n_unsure = a.n_unsure;
    spec.side = g.side.value_or(spec.side);
    spec.class_separation = a.separation;
    spec.seed = g.seed;
    spec.spacing_mm = a.spacing;
    spec.raters = a.raters;
    spec.rater_noise = a.rater_noise;
    spec.distractors = a.distractors;
    spec.validate();
    const auto dir = require_out(g);
    const auto manifest = write_phantom_dataset(spec, dir);
    write_run_config(dir, "phantom",
                     json{{"n_sure", spec.n_sure}, {"n_unsure", spec.n_unsure}, {"side", spec.side},
                          {"separation", spec.class_separation}, {"seed", spec.seed}, {"spacing", spec.spacing_mm},
                          {"raters", spec.raters}, {"rater_noise", spec.rater_noise}, {"distractors", spec.distractors}});
    out << "wrote " << manifest.entries.size() << " entries to " << (dir / "manifest.jsonl").string() << '\n';
    return 0;
}

// ---------------------------------------------------------------- ingest

int cmd_ingest(const Globals& g, const std::string& manifest, double threshold, std::ostream& out) {
    const auto dir = require_out(g);
    const auto s = ingest_manifest(manifest, dir, threshold);
    write_run_config(dir, "ingest", json{{"manifest", manifest}, {"mad_threshold", threshold}});
    out << "sure " << s.sure << ", unsure kept " << s.unsure_kept << " of " << s.unsure_in << '\n';
    return 0;
}

// ---------------------------------------------------------------- preprocess

struct PreprocessArgs {
    std::string data;
    std::string modality = "cube64";
    double spacing = kDefaultSpacingMm;
    bool lung_mask = false;
};

Mask3 resample_mask(const Mask3& mask, const RawHeader& geom, double target) {
    Volume v = Volume::make(mask_to_float(mask), geom.spacing, geom.origin);
    const Volume r = resample_isotropic(v, target);
    Mask3 m(r.voxels.shape());
    for (std::size_t i = 0; i < m.values().size(); ++i) m[i] = r.voxels[i] >= 0.5f ? 1 : 0;
    return m;
}

int cmd_preprocess(const Globals& g, const PreprocessArgs& a, std::ostream& out) {
    const int side = g.side.value_or(kDefaultSide);
    const Modality modality = parse_modality(a.modality);
    const fs::path root = a.data;
    auto manifest = read_manifest(root / "manifest.jsonl");
    const auto dir = require_out(g);
    for (auto& e : manifest.entries) {
        Volume vol = read_volume(root / e.volume_path);
        if (a.lung_mask) vol = apply_mask(vol, lung_mask(vol));
        vol = resample_isotropic(vol, a.spacing);
        const auto patch = extract_patch(vol, e.nodule_center_mm, e.nodule_diameter_mm, modality, side);
        const std::string patch_rel = "patches/" + e.id + ".bin";
        write_patch(dir / patch_rel, patch);
        e.volume_path = fs::relative(fs::absolute(root / e.volume_path), fs::absolute(dir)).generic_string();
        for (auto& p : e.rater_mask_paths) p = fs::relative(fs::absolute(root / p), fs::absolute(dir)).generic_string();
        if (e.consensus_mask_path) {
            const fs::path src = root / *e.consensus_mask_path;
            RawHeader geom;
            read_raw(src, &geom);
            const Mask3 m = resample_mask(read_mask(src), geom, a.spacing);
            const auto patch_mask = extract_mask(m, vol.spacing, vol.origin, e.nodule_center_mm, e.nodule_diameter_mm,
                                                 modality, side);
            const std::string mask_rel = "patch_masks/" + e.id + ".bin";
            write_mask(dir / mask_rel, patch_mask, {a.spacing, a.spacing, a.spacing});
            e.consensus_mask_path = fs::relative(fs::absolute(src), fs::absolute(dir)).generic_string();
            e.mask_path = mask_rel;
        }
        e.patch_path = patch_rel;
    }
    write_manifest(dir / "manifest.jsonl", manifest);
    write_run_config(dir, "preprocess",
                     json{{"data", a.data}, {"modality", to_string(modality)}, {"side", side}, {"spacing", a.spacing},
                          {"lung_mask", a.lung_mask}, {"seed", g.seed}});
    out << "wrote " << manifest.entries.size() << " patches to " << (dir / "patches").string() << '\n';
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string config;
    std::string data;
    std::optional<int> epochs, folds, divisor, fold_limit;
    std::optional<double> lr, alpha, beta, gamma, delta, delta_prime;
    std::optional<std::string> mode;
    bool no_adaptive = false;
    bool no_fnet = false;
    bool no_augment = false;
};

RunConfig resolve_run_config(const Globals& g, const TrainArgs& a, bool seed_given) {
    RunConfig c;
    if (!a.config.empty()) c = read_json(a.config).get<RunConfig>();
    if (seed_given) c.seed = g.seed;
    if (g.side) c.side = *g.side;
    if (a.epochs) c.max_epochs = *a.epochs;
    if (a.folds) c.folds = *a.folds;
    if (a.divisor) c.model = BackboneConfig{}.scaled(*a.divisor);
    if (a.lr) c.lr = *a.lr;
    if (a.alpha) c.weights.alpha = *a.alpha;
    if (a.beta) c.weights.beta = *a.beta;
    if (a.gamma) c.weights.gamma = *a.gamma;
    if (a.delta) c.weights.delta = *a.delta;
    if (a.delta_prime) c.weights.delta_prime = *a.delta_prime;
    if (a.mode) c.weights.mode = parse_margin_mode(*a.mode);
    if (a.no_adaptive) c.weights.adaptive = false;
    if (a.no_fnet) c.model.use_fnet = false;
    if (a.no_augment) c.augment = false;
    c.model.side = c.side;
    c.validate();
    return c;
}

std::vector<std::string> ids_of(std::span<const SureSample> all, std::span<const std::size_t> idx) {
    std::vector<std::string> ids;
    for (auto i : idx) ids.push_back(all[i].nodule_id);
    return ids;
}

int cmd_train(const Globals& g, const TrainArgs& a, bool seed_given, std::ostream& out, std::ostream& err) {
    const RunConfig config = resolve_run_config(g, a, seed_given);
    const auto data = load_patch_dataset(a.data);
    for (const auto& s : data.sure) {
        if (s.patch.side != config.side) {
            throw ConfigError("patch side " + std::to_string(s.patch.side) + " differs from --side " +
                              std::to_string(config.side));
        }
    }
    const auto dir = require_out(g);
    json resolved = config;
    resolved["data"] = a.data;
    resolved["fold_limit"] = a.fold_limit ? json(*a.fold_limit) : json(nullptr);
    write_run_config(dir, "train", resolved);

    const auto folds = make_folds(data.sure, config.folds, config.val_fraction, config.seed);
    const int n_run = std::min(config.folds, a.fold_limit.value_or(config.folds));
    std::vector<EpochLog> all_logs;
    for (int f = 0; f < n_run; ++f) {
        const auto& split = folds[static_cast<std::size_t>(f)];
        const auto train = gather<SureSample>(data.sure, split.train);
        const auto val = gather<SureSample>(data.sure, split.val);
        const fs::path fold_dir = dir / ("fold_" + std::to_string(f));
        fs::create_directories(fold_dir);
        TrainOptions opts;
        opts.fold = f;
        opts.diagnostics_dir = fold_dir;
        opts.on_epoch = [&](const EpochLog& r) {
            char line[128];
            std::snprintf(line, sizeof line, "fold %d epoch %d loss %.5f val_bce %.5f\n", r.fold, r.epoch, r.total,
                          r.val_bce);
            err << line << std::flush;
        };
        auto result = train_fold(train, val, data.unsure, config, opts);
        save_checkpoint(fold_dir / "best.ckpt", result.model,
                        json{{"fold", f}, {"best_epoch", result.best_epoch}, {"best_val_bce", result.best_val_bce}});
        write_json(fold_dir / "split.json", json{{"train", ids_of(data.sure, split.train)},
                                                 {"val", ids_of(data.sure, split.val)},
                                                 {"test", ids_of(data.sure, split.test)}});
        // The retrieval database holds every non-test sure nodule of the fold.
        auto db_samples = train;
        db_samples.insert(db_samples.end(), val.begin(), val.end());
        write_database(fold_dir / "db.jsonl", build_database(result.model, db_samples));
        write_log_csv(fold_dir / "log.csv", result.log);
        all_logs.insert(all_logs.end(), result.log.begin(), result.log.end());
        out << "fold " << f << ": best epoch " << result.best_epoch << '\n';
    }
    write_log_csv(dir / "log.csv", all_logs);
    return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string ckpt;
    std::string data;
    int k = kDefaultNeighbours;
    int cam_limit = -1;
};

struct FoldJob {
    fs::path ckpt;
    std::vector<std::string> test_ids;
    std::optional<fs::path> db;
    int fold = 0;
};

std::vector<FoldJob> fold_jobs(const fs::path& ckpt, std::span<const SureSample> sure) {
    std::vector<FoldJob> jobs;
    auto job_for = [&](const fs::path& file, int fold) {
        FoldJob j;
        j.ckpt = file;
        j.fold = fold;
        const auto split = file.parent_path() / "split.json";
        if (fs::exists(split)) {
            j.test_ids = read_json(split).at("test").get<std::vector<std::string>>();
        } else {
            for (const auto& s : sure) j.test_ids.push_back(s.nodule_id);
        }
        if (fs::exists(file.parent_path() / "db.jsonl")) j.db = file.parent_path() / "db.jsonl";
        return j;
    };
    if (fs::is_directory(ckpt)) {
        for (int f = 0;; ++f) {
            const auto file = ckpt / ("fold_" + std::to_string(f)) / "best.ckpt";
            if (!fs::exists(file)) break;
            jobs.push_back(job_for(file, f));
        }
        if (jobs.empty()) throw IoError(ckpt, "no fold_<k>/best.ckpt found");
    } else {
        if (!fs::exists(ckpt)) throw IoError(ckpt, "checkpoint not found");
        jobs.push_back(job_for(ckpt, 0));
    }
    return jobs;
}

int cmd_evaluate(const Globals& g, const EvaluateArgs& a, std::ostream& out) {
    const auto data = load_patch_dataset(a.data);
    const auto dir = require_out(g);
    write_run_config(dir, "evaluate", json{{"ckpt", a.ckpt}, {"data", a.data}, {"k", a.k}, {"cam_limit", a.cam_limit}});
    std::map<std::string, const SureSample*> by_id;
    for (const auto& s : data.sure) by_id[s.nodule_id] = &s;

    const RetrievalMode modes[] = {RetrievalMode::machine, RetrievalMode::expert, RetrievalMode::concat};
    std::vector<MetricReport> cls_reports;
    std::map<std::string, std::vector<MetricReport>> ret_reports;
    json folds = json::array();
    int cams = 0;
    for (const auto& job : fold_jobs(a.ckpt, data.sure)) {
        auto loaded = load_checkpoint(job.ckpt);
        auto& model = loaded.model;
        model->eval();
        const double t = 0.5;
        std::vector<SureSample> test;
        for (const auto& id : job.test_ids) {
            auto it = by_id.find(id);
            if (it == by_id.end()) throw DataError("test nodule " + id + " missing from --data");
            test.push_back(*it->second);
        }
        const auto probs = predict_probs(model, test);
        std::vector<int> labels;
        for (const auto& s : test) labels.push_back(s.label);
        const auto report = compute_metrics(probs, labels, t);
        cls_reports.push_back(report);
        json fold{{"fold", job.fold}, {"classification", report}};

        if (job.db) {
            const auto db = read_database(*job.db);
            const auto records = build_database(model, test);
            json ret;
            for (auto m : modes) {
                const auto r = evaluate_diagnosis(records, db, a.k, m);
                ret[std::string(to_string(m))] = r;
                ret_reports[std::string(to_string(m))].push_back(r);
            }
            fold["retrieval"] = ret;
        }
        folds.push_back(fold);

        torch::NoGradGuard guard;
        const auto dtype = model->parameters().front().scalar_type();
        for (std::size_t i = 0; i < test.size(); ++i) {
            if (a.cam_limit >= 0 && cams >= a.cam_limit) break;
            const auto o = model->forward(patch_tensor(test[i].patch, dtype));
            const auto cam = compute_cam(o, t);
            const auto sp = o.seg_prob[0].to(torch::kDouble).contiguous();
            Grid3<double> seg({sp.size(0), sp.size(1), sp.size(2)});
            std::copy_n(sp.data_ptr<double>(), seg.values().size(), seg.values().begin());
            export_cam_overlay(dir / "cam", test[i].nodule_id, test[i].patch, cam.cam_c, seg, cam.cls, test[i].label);
            ++cams;
        }
    }
    json summary{{"classification", summarize(cls_reports)}};
    for (const auto& [mode, reports] : ret_reports) summary["retrieval"][mode] = summarize(reports);
    write_json(dir / "metrics.json", json{{"folds", folds}, {"summary", summary}, {"k", a.k}});
    const auto s = summarize(cls_reports);
    char line[160];
    std::snprintf(line, sizeof line, "AUC %.4f +/- %.4f, accuracy %.4f +/- %.4f over %d fold(s)\n", s.auc.mean,
                  s.auc.stddev, s.accuracy.mean, s.accuracy.stddev, s.accuracy.count);
    out << line;
    return 0;
}

// ---------------------------------------------------------------- diagnose

struct DiagnoseArgs {
    std::string ckpt;
    std::string db;
    std::string input;
    std::string mode = "concat";
    int k = kDefaultNeighbours;
    std::string report;
    std::string data;
};

void write_report(const fs::path& html, const DiagnosisResult& r, const NodulePatch& query, const std::string& data) {
    const fs::path assets = html.parent_path() / (html.stem().string() + "_files");
    write_png(assets / "query.png", render_slice(query));
    std::map<std::string, fs::path> patches;
    if (!data.empty()) {
        for (const auto& e : read_manifest(fs::path(data) / "manifest.jsonl").entries) {
            if (e.patch_path) patches[e.id] = fs::path(data) / *e.patch_path;
        }
    }
    std::ofstream f(html);
    if (!f) throw IoError(html, "cannot write report");
    const auto rel = assets.filename().string();
    f << "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>Nodule retrieval</title>\n"
      << "<style>body{font-family:sans-serif}td,th{padding:4px 8px}img{width:128px;image-rendering:pixelated}</style>"
      << "</head><body>\n<h1>Retrieval diagnosis</h1>\n";
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.4f", r.diag);
    f << "<p>mode " << to_string(r.mode) << ", K=" << r.neighbours.size() << ", diag=" << buf << "</p>\n";
    f << "<p><img src=\"" << rel << "/query.png\" alt=\"query\"></p>\n<table>\n"
      << "<tr><th>rank</th><th>nodule</th><th>distance</th><th>label</th><th>slice</th></tr>\n";
    for (std::size_t i = 0; i < r.neighbours.size(); ++i) {
        const auto& n = r.neighbours[i];
        std::snprintf(buf, sizeof buf, "%.6f", n.distance);
        f << "<tr><td>" << i + 1 << "</td><td>" << n.nodule_id << "</td><td>" << buf << "</td><td>"
          << (n.label ? "malignant" : "benign") << "</td><td>";
        if (auto it = patches.find(n.nodule_id); it != patches.end()) {
            const auto png = n.nodule_id + ".png";
            write_png(assets / png, render_slice(read_patch(it->second)));
            f << "<img src=\"" << rel << '/' << png << "\" alt=\"" << n.nodule_id << "\">";
        }
        f << "</td></tr>\n";
    }
    f << "</table>\n</body></html>\n";
}

int cmd_diagnose(const Globals& g, const DiagnoseArgs& a, std::ostream& out) {
    auto loaded = load_checkpoint(a.ckpt);
    loaded.model->eval();
    const auto db = read_database(a.db);
    const auto patch = read_patch(a.input);
    const auto mode = parse_retrieval_mode(a.mode);
    const auto query = make_record(loaded.model, patch, fs::path(a.input).stem().string(), 0);
    const auto r = retrieve(query, db, a.k, mode);

    char buf[160];
    std::snprintf(buf, sizeof buf, "diag %.6f (cls_prob %.6f, reg_score %.6f)\n", r.diag, query.cls_prob, query.reg_score);
    out << buf << "rank\tnodule\tdistance\tlabel\n";
    for (std::size_t i = 0; i < r.neighbours.size(); ++i) {
        const auto& n = r.neighbours[i];
        std::snprintf(buf, sizeof buf, "%zu\t%s\t%.6f\t%d\n", i + 1, n.nodule_id.c_str(), n.distance, n.label);
        out << buf;
    }
    if (!a.report.empty()) {
        const fs::path html = a.report;
        if (html.has_parent_path()) fs::create_directories(html.parent_path());
        write_report(html, r, patch, a.data);
    }
    fs::path cfg_dir = g.out;
    if (cfg_dir.empty() && !a.report.empty()) cfg_dir = fs::path(a.report).parent_path();
    if (cfg_dir.empty()) cfg_dir = ".";
    fs::create_directories(cfg_dir);
    write_run_config(cfg_dir, "diagnose",
                     json{{"ckpt", a.ckpt}, {"db", a.db}, {"input", a.input}, {"mode", a.mode}, {"k", a.k},
                          {"report", a.report}, {"data", a.data}});
    return 0;
}

// ---------------------------------------------------------------- relabel-report

int cmd_relabel(const Globals& g, const DiagnoseArgs& a, std::ostream& out) {
    auto loaded = load_checkpoint(a.ckpt);
    loaded.model->eval();
    const auto db = read_database(a.db);
    const auto data = load_patch_dataset(a.data);
    const auto mode = parse_retrieval_mode(a.mode);
    // Bucket b holds mean scores rounding to b (1..5); counts of new labels 0 and 1.
    std::array<std::array<int, 2>, 5> hist{};
    json rows = json::array();
    for (const auto& u : data.unsure) {
        const auto rec = make_record(loaded.model, u.patch, u.nodule_id, 0);
        const auto r = retrieve(rec, db, a.k, mode);
        const int label = r.diag >= 0.5 ? 1 : 0;
        const int bucket = std::clamp(static_cast<int>(std::lround(u.malignancy_score)), 1, 5);
        ++hist[static_cast<std::size_t>(bucket - 1)][static_cast<std::size_t>(label)];
        rows.push_back(json{{"nodule_id", u.nodule_id}, {"score", u.malignancy_score}, {"diag", r.diag}, {"label", label}});
    }
    json buckets = json::array();
    out << "score\tbenign\tmalignant\n";
    for (int b = 0; b < 5; ++b) {
        const auto& h = hist[static_cast<std::size_t>(b)];
        buckets.push_back(json{{"score", b + 1}, {"benign", h[0]}, {"malignant", h[1]}});
        out << b + 1 << '\t' << h[0] << '\t' << h[1] << '\n';
    }
    const auto dir = require_out(g);
    write_json(dir / "relabel.json", json{{"mode", a.mode}, {"k", a.k}, {"buckets", buckets}, {"nodules", rows}});
    write_run_config(dir, "relabel-report",
                     json{{"ckpt", a.ckpt}, {"db", a.db}, {"data", a.data}, {"mode", a.mode}, {"k", a.k}});
    return 0;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Lung nodule classification, segmentation and retrieval", "nodule"};
    app.require_subcommand(1);
    Globals g;
    int side = 0;
    auto* seed_opt = app.add_option("--seed", g.seed, "Seed for every random draw");
    auto* side_opt = app.add_option("--side", side, "Patch side in voxels");
    app.add_option("--out", g.out, "Output directory");
    app.fallthrough();

    PhantomArgs pa;
    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic dataset");
    phantom->add_option("--n-sure", pa.n_sure, "Labelled nodules");
    phantom->add_option("--n-unsure", pa.n_unsure, "Rater-scored nodules");
    phantom->add_option("--separation", pa.separation, "Class separation in [0,1]");
    phantom->add_option("--spacing", pa.spacing, "Voxel spacing (mm)");
    phantom->add_option("--raters", pa.raters, "Raters per unsure nodule");
    phantom->add_option("--rater-noise", pa.rater_noise, "Rater score noise");
    phantom->add_option("--distractors", pa.distractors, "Distractor blobs per patch");

    std::string manifest;
    double mad = kDefaultMadThreshold;
    auto* ingest = app.add_subcommand("ingest", "Filter rater-scored nodules and build consensus masks");
    ingest->add_option("--manifest", manifest, "Input manifest.jsonl")->required();
    ingest->add_option("--mad-threshold", mad, "Keep nodules whose score MAD is at most this");

    PreprocessArgs pp;
    auto* preprocess = app.add_subcommand("preprocess", "Crop two-window patches");
    preprocess->add_option("--data", pp.data, "Directory with manifest.jsonl")->required();
    preprocess->add_option("--modality", pp.modality, "cube64 | x | x-resize-64 | x-padding-64");
    preprocess->add_option("--spacing", pp.spacing, "Isotropic spacing (mm)");
    preprocess->add_flag("--lung-mask", pp.lung_mask, "Mask out everything outside the lungs");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Cross-validated training");
    train->add_option("--config", ta.config, "RunConfig JSON");
    train->add_option("--data", ta.data, "Preprocessed directory")->required();
    train->add_option("--epochs", ta.epochs, "Epochs per fold");
    train->add_option("--folds", ta.folds, "Number of folds");
    train->add_option("--fold-limit", ta.fold_limit, "Train only the first N folds");
    train->add_option("--channel-divisor", ta.divisor, "Divide every layer width by this");
    train->add_option("--lr", ta.lr, "Adam learning rate");
    train->add_option("--alpha", ta.alpha, "CAM-SEM loss weight");
    train->add_option("--beta", ta.beta, "Segmentation loss weight");
    train->add_option("--gamma", ta.gamma, "Regression loss weight");
    train->add_option("--delta", ta.delta, "Margin for ndl_over_bkg");
    train->add_option("--delta-prime", ta.delta_prime, "Margin for bkg_over_ndl");
    train->add_option("--mode", ta.mode, "ndl_over_bkg | bkg_over_ndl");
    train->add_flag("--no-adaptive", ta.no_adaptive, "Drop the |P - t| factor of the CAM loss");
    train->add_flag("--no-fnet", ta.no_fnet, "Disable segmentation feature fusion");
    train->add_flag("--no-augment", ta.no_augment, "Disable flips and rotations");

    EvaluateArgs ea;
    auto* evaluate = app.add_subcommand("evaluate", "Metrics and CAM overlays");
    evaluate->add_option("--ckpt", ea.ckpt, "Checkpoint file or training output directory")->required();
    evaluate->add_option("--data", ea.data, "Preprocessed directory")->required();
    evaluate->add_option("--k", ea.k, "Neighbours for retrieval metrics");
    evaluate->add_option("--cam-limit", ea.cam_limit, "Maximum overlays to write (-1 = all)");

    DiagnoseArgs da;
    auto* diagnose = app.add_subcommand("diagnose", "Retrieval-based diagnosis of one patch");
    diagnose->add_option("--ckpt", da.ckpt, "Checkpoint")->required();
    diagnose->add_option("--db", da.db, "Database db.jsonl")->required();
    diagnose->add_option("--input", da.input, "Patch .bin")->required();
    diagnose->add_option("--mode", da.mode, "machine | expert | concat");
    diagnose->add_option("--k", da.k, "Neighbours");
    diagnose->add_option("--report", da.report, "Write an HTML gallery here");
    diagnose->add_option("--data", da.data, "Preprocessed directory for neighbour images");

    DiagnoseArgs ra;
    auto* relabel = app.add_subcommand("relabel-report", "Retrieval labels of unsure nodules by score bucket");
    relabel->add_option("--ckpt", ra.ckpt, "Checkpoint")->required();
    relabel->add_option("--db", ra.db, "Database db.jsonl")->required();
    relabel->add_option("--data", ra.data, "Preprocessed directory")->required();
    relabel->add_option("--mode", ra.mode, "machine | expert | concat");
    relabel->add_option("--k", ra.k, "Neighbours");

    std::vector<std::string> argv_store{"nodule"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& s : argv_store) argv.push_back(s.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << one_line(e.what()) << '\n';
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return 2;
    }
    if (side_opt->count() > 0) g.side = side;

    try {
        if (*phantom) return cmd_phantom(g, pa, out);
        if (*ingest) return cmd_ingest(g, manifest, mad, out);
        if (*preprocess) return cmd_preprocess(g, pp, out);
        if (*train) return cmd_train(g, ta, seed_opt->count() > 0, out, err);
        if (*evaluate) return cmd_evaluate(g, ea, out);
        if (*diagnose) return cmd_diagnose(g, da, out);
        if (*relabel) return cmd_relabel(g, ra, out);
    } catch (const TrainingDiverged& e) {
        err << "error: " << one_line(e.what());
        if (!e.snapshot.empty()) err << " (snapshot " << e.snapshot.string() << ')';
        err << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << one_line(e.what()) << '\n';
        return 1;
    }
    return 1;
}

}  // namespace nodule::cli
