#include "nodule/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "nodule/errors.hpp"
#include "nodule/evaluation.hpp"
#include "nodule/preprocess.hpp"
#include "nodule/random.hpp"

namespace nodule {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (batch_size != 1) throw ConfigError("only batch_size 1 is supported");
    if (folds < 2) throw ConfigError("folds must be at least 2");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0,1)");
    weights.validate();
    model_config().validate();
}

BackboneConfig RunConfig::model_config() const {
    BackboneConfig c = model;
    c.side = side;
    return c;
}

void to_json(json& j, const RunConfig& c) {
    j = json{{"lr", c.lr},
             {"max_epochs", c.max_epochs},
             {"batch_size", c.batch_size},
             {"folds", c.folds},
             {"val_fraction", c.val_fraction},
             {"weights", c.weights},
             {"seed", c.seed},
             {"side", c.side},
             {"model", c.model_config()},
             {"augment", c.augment},
             {"adam", {{"beta1", c.adam_beta1}, {"beta2", c.adam_beta2}, {"eps", c.adam_eps}}}};
}

void from_json(const json& j, RunConfig& c) {
    c = RunConfig{};
    c.lr = j.value("lr", c.lr);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.folds = j.value("folds", c.folds);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
    c.seed = j.value("seed", c.seed);
    c.side = j.value("side", c.side);
    if (j.contains("model")) c.model = j.at("model").get<BackboneConfig>();
    if (j.contains("channel_divisor")) c.model = c.model.scaled(j.at("channel_divisor").get<int>());
    c.model.side = c.side;
    c.augment = j.value("augment", c.augment);
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        c.adam_beta1 = a.value("beta1", c.adam_beta1);
        c.adam_beta2 = a.value("beta2", c.adam_beta2);
        c.adam_eps = a.value("eps", c.adam_eps);
    }
}

// ---------------------------------------------------------------- folds

namespace {

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    // Fisher-Yates with our own draws so the order is library independent.
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

std::vector<FoldSplit> make_folds(std::span<const int> labels, int k, double val_fraction, std::uint64_t seed) {
    if (k < 2) throw ArgumentError("need at least 2 folds");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ArgumentError("val_fraction must lie in (0,1)");
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ArgumentError("labels must be 0 or 1");
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    for (const auto& c : by_class) {
        if (c.size() < static_cast<std::size_t>(k)) throw DataError("stratification impossible");
    }
    Rng rng(mix_seed(seed, 0x464f4c44));
    // fold_of[i]: each class is shuffled and dealt round-robin.
    std::vector<int> fold_of(labels.size(), 0);
    for (auto& c : by_class) {
        shuffle(c, rng);
        for (std::size_t r = 0; r < c.size(); ++r) fold_of[c[r]] = static_cast<int>(r % static_cast<std::size_t>(k));
    }

    std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        auto& split = folds[static_cast<std::size_t>(f)];
        for (const auto& c : by_class) {
            std::vector<std::size_t> rest;
            for (auto i : c) (fold_of[i] == f ? split.test : rest).push_back(i);
            shuffle(rest, rng);
            const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(rest.size())));
            split.val.insert(split.val.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
            split.train.insert(split.train.end(), rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
        }
        std::ranges::sort(split.test);
        std::ranges::sort(split.val);
        std::ranges::sort(split.train);
    }
    return folds;
}

std::vector<FoldSplit> make_folds(std::span<const SureSample> sure, int k, double val_fraction, std::uint64_t seed) {
    std::vector<int> labels;
    labels.reserve(sure.size());
    for (const auto& s : sure) labels.push_back(s.label);
    return make_folds(labels, k, val_fraction, seed);
}

Mask3 downsample_mask(const Mask3& mask, int factor) {
    if (factor < 1) throw ArgumentError("downsample factor must be positive");
    Shape3 out_shape;
    for (int a = 0; a < 3; ++a) {
        if (mask.dim(a) % factor != 0) throw ArgumentError("mask side not divisible by " + std::to_string(factor));
        out_shape[static_cast<std::size_t>(a)] = mask.dim(a) / factor;
    }
    Mask3 out(out_shape);
    for (std::int64_t z = 0; z < out_shape[0]; ++z)
        for (std::int64_t y = 0; y < out_shape[1]; ++y)
            for (std::int64_t x = 0; x < out_shape[2]; ++x) out(z, y, x) = mask(z * factor, y * factor, x * factor);
    return out;
}

// ---------------------------------------------------------------- training

std::vector<double> predict_probs(SynergicNet& model, std::span<const SureSample> samples) {
    torch::NoGradGuard guard;
    model->eval();
    const auto dtype = model->parameters().front().scalar_type();
    std::vector<double> probs;
    probs.reserve(samples.size());
    for (const auto& s : samples) probs.push_back(model->forward(patch_tensor(s.patch, dtype)).cls_prob[0].item<double>());
    return probs;
}

double mean_bce(SynergicNet& model, std::span<const SureSample> samples) {
    if (samples.empty()) return 0.0;
    const auto probs = predict_probs(model, samples);
    double sum = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) sum += bce_loss(probs[i], samples[i].label);
    return sum / static_cast<double>(samples.size());
}

TrainResult train_fold(std::span<const SureSample> train, std::span<const SureSample> val,
                       std::span<const UnsureSample> unsure, const RunConfig& config, const TrainOptions& options) {
    config.validate();
    if (train.empty()) throw DataError("empty training set");
    const auto& w = config.weights;
    const bool use_unsure = w.beta > 0.0 || w.gamma > 0.0;
    if (use_unsure && unsure.empty()) throw DataError("unsure cohort is empty but beta or gamma is nonzero");

    const auto fold_seed = mix_seed(config.seed, 0x4d4f44, static_cast<std::uint64_t>(options.fold));
    TrainResult result;
    result.model = make_model(config.model_config(), fold_seed);
    auto& model = result.model;
    const auto dtype = model->parameters().front().scalar_type();
    torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(config.lr)
                                                    .betas({config.adam_beta1, config.adam_beta2})
                                                    .eps(config.adam_eps));
    Rng rng(mix_seed(config.seed, 0x545241494e, static_cast<std::uint64_t>(options.fold)));
    const int stride = config.side / config.model_config().feature_side();

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<torch::Tensor> best;
    std::int64_t iteration = 0;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        shuffle(order, rng);
        model->train();
        EpochLog row;
        row.fold = options.fold;
        row.epoch = epoch;
        for (auto si : order) {
            const auto& s = train[si];
            const auto sure_seed = rng.next();
            NodulePatch sp = config.augment ? augment(s.patch, std::nullopt, sure_seed).first : s.patch;

            std::optional<ModelOutputs> uo;
            UnsureTargets targets;
            if (use_unsure) {
                const auto& u = unsure[rng.below(unsure.size())];
                const auto unsure_seed = rng.next();
                NodulePatch up = u.patch;
                Mask3 um = u.seg_mask;
                if (config.augment) {
                    auto [p, m] = augment(u.patch, u.seg_mask, unsure_seed);
                    up = std::move(p);
                    um = std::move(*m);
                }
                targets.mask = mask_tensor(downsample_mask(um, stride), dtype);
                targets.normalized_score = u.normalized_score;
                uo = model->forward(patch_tensor(up, dtype));
            }
            const auto so = model->forward(patch_tensor(sp, dtype));
            const auto terms = compute_losses(so, s.label, uo ? &*uo : nullptr, uo ? &targets : nullptr, w);
            ++iteration;

            const double total = terms.total.item<double>();
            if (!std::isfinite(total)) {
                fs::path snap;
                if (options.diagnostics_dir) {
                    snap = *options.diagnostics_dir / "diverged.ckpt";
                    save_checkpoint(snap, model, json{{"epoch", epoch}, {"iteration", iteration}});
                }
                char msg[256];
                std::snprintf(msg, sizeof msg, "loss diverged at epoch %d iteration %lld (cls=%g cam=%g seg=%g reg=%g)",
                              epoch, static_cast<long long>(iteration), terms.cls.item<double>(),
                              terms.cam.item<double>(), terms.seg.item<double>(), terms.reg.item<double>());
                throw TrainingDiverged(msg, snap);
            }
            opt.zero_grad();
            terms.total.backward();
            opt.step();

            row.total += total;
            row.cls += terms.cls.item<double>();
            row.cam += terms.cam.item<double>();
            row.seg += terms.seg.item<double>();
            row.reg += terms.reg.item<double>();
        }
        const auto n = static_cast<double>(train.size());
        row.total /= n;
        row.cls /= n;
        row.cam /= n;
        row.seg /= n;
        row.reg /= n;
        row.iteration = iteration;

        const auto probs = predict_probs(model, val.empty() ? train : val);
        const auto& vs = val.empty() ? train : val;
        std::vector<int> labels;
        double bce = 0.0;
        for (std::size_t i = 0; i < vs.size(); ++i) {
            labels.push_back(vs[i].label);
            bce += bce_loss(probs[i], vs[i].label);
        }
        row.val_bce = bce / static_cast<double>(vs.size());
        const auto m = compute_metrics(probs, labels, w.threshold);
        row.val_auc = m.auc;
        row.val_accuracy = m.accuracy;

        if (best.empty() || row.val_bce < result.best_val_bce) {
            best = snapshot_parameters(model);
            result.best_val_bce = row.val_bce;
            result.best_epoch = epoch;
        }
        result.final_val_bce = row.val_bce;
        result.log.push_back(row);
        if (options.on_epoch) options.on_epoch(row);
    }
    restore_parameters(model, best);
    model->eval();
    return result;
}

void write_log_csv(const fs::path& path, std::span<const EpochLog> log) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError(path, "cannot write log");
    out << "fold,epoch,iteration,total,cls,cam,seg,reg,val_bce,val_auc,val_accuracy\n";
    char buf[512];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof buf, "%d,%d,%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,", r.fold, r.epoch,
                      static_cast<long long>(r.iteration), r.total, r.cls, r.cam, r.seg, r.reg, r.val_bce);
        out << buf;
        if (r.val_auc) {
            std::snprintf(buf, sizeof buf, "%.10g", *r.val_auc);
            out << buf;
        }
        std::snprintf(buf, sizeof buf, ",%.10g\n", r.val_accuracy);
        out << buf;
    }
}

PatchDataset load_patch_dataset(const fs::path& dir) {
    const auto manifest = read_manifest(dir / "manifest.jsonl");
    PatchDataset ds;
    for (const auto& e : manifest.entries) {
        if (!e.patch_path) throw DataError("manifest entry " + e.id + " has no patch_path; run preprocess first");
        auto patch = read_patch(dir / *e.patch_path);
        if (e.cohort == Cohort::sure) {
            if (!e.label) throw DataError("sure entry " + e.id + " has no label");
            ds.sure.push_back({std::move(patch), *e.label, e.id});
        } else {
            if (!e.mask_path) throw DataError("unsure entry " + e.id + " has no mask_path");
            if (!e.mean_score) throw DataError("unsure entry " + e.id + " has no mean_score");
            ds.unsure.push_back(UnsureSample::make(std::move(patch), read_mask(dir / *e.mask_path), *e.mean_score, e.id));
        }
    }
    return ds;
}

}  // namespace nodule
