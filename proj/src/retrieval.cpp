#include "nodule/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "nodule/errors.hpp"

namespace nodule {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(RetrievalMode m) {
    switch (m) {
        case RetrievalMode::machine: return "machine";
        case RetrievalMode::expert: return "expert";
        case RetrievalMode::concat: return "concat";
    }
    return "concat";
}

RetrievalMode parse_retrieval_mode(std::string_view name) {
    if (name == "machine") return RetrievalMode::machine;
    if (name == "expert") return RetrievalMode::expert;
    if (name == "concat") return RetrievalMode::concat;
    throw ArgumentError("unknown retrieval mode: " + std::string(name));
}

void to_json(json& j, const RetrievalRecord& r) {
    j = json{{"nodule_id", r.nodule_id}, {"cls_prob", r.cls_prob}, {"reg_score", r.reg_score}, {"label", r.label}};
}

void from_json(const json& j, RetrievalRecord& r) {
    r.nodule_id = j.at("nodule_id").get<std::string>();
    r.cls_prob = j.at("cls_prob").get<double>();
    r.reg_score = j.at("reg_score").get<double>();
    r.label = j.at("label").get<int>();
}

std::vector<double> feature_vector(const RetrievalRecord& r, RetrievalMode mode) {
    switch (mode) {
        case RetrievalMode::machine: return {r.cls_prob};
        case RetrievalMode::expert: return {r.reg_score};
        case RetrievalMode::concat: return {r.cls_prob, r.reg_score};
    }
    return {};
}

double euclidean_distance(const RetrievalRecord& a, const RetrievalRecord& b, RetrievalMode mode) {
    const auto fa = feature_vector(a, mode);
    const auto fb = feature_vector(b, mode);
    double sq = 0.0;
    for (std::size_t i = 0; i < fa.size(); ++i) sq += (fa[i] - fb[i]) * (fa[i] - fb[i]);
    return std::sqrt(sq);
}

DiagnosisResult retrieve(const RetrievalRecord& query, std::span<const RetrievalRecord> db, int k, RetrievalMode mode) {
    if (k <= 0) throw ArgumentError("K must be positive");
    if (db.size() < static_cast<std::size_t>(k)) {
        throw ArgumentError("database holds " + std::to_string(db.size()) + " records, fewer than K=" + std::to_string(k));
    }
    std::vector<Neighbour> all;
    all.reserve(db.size());
    for (const auto& r : db) all.push_back({r.nodule_id, euclidean_distance(query, r, mode), r.label});
    auto closer = [](const Neighbour& a, const Neighbour& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        if (a.nodule_id != b.nodule_id) return a.nodule_id < b.nodule_id;
        return a.label < b.label;
    };
    const auto kk = static_cast<std::ptrdiff_t>(k);
    std::partial_sort(all.begin(), all.begin() + kk, all.end(), closer);
    all.resize(static_cast<std::size_t>(k));

    DiagnosisResult out;
    out.mode = mode;
    int positives = 0;
    for (const auto& n : all) positives += n.label;
    out.diag = static_cast<double>(positives) / static_cast<double>(k);
    out.neighbours = std::move(all);
    return out;
}

RetrievalRecord make_record(SynergicNet& model, const NodulePatch& patch, std::string id, int label) {
    torch::NoGradGuard guard;
    const auto dtype = model->parameters().front().scalar_type();
    const auto o = model->forward(patch_tensor(patch, dtype));
    return {std::move(id), o.cls_prob[0].item<double>(), o.reg_score[0].item<double>(), label};
}

std::vector<RetrievalRecord> build_database(SynergicNet& model, std::span<const SureSample> samples) {
    std::vector<RetrievalRecord> db;
    db.reserve(samples.size());
    for (const auto& s : samples) db.push_back(make_record(model, s.patch, s.nodule_id, s.label));
    return db;
}

MetricReport evaluate_diagnosis(std::span<const RetrievalRecord> test, std::span<const RetrievalRecord> db, int k,
                                RetrievalMode mode) {
    std::unordered_set<std::string> ids;
    for (const auto& r : db) ids.insert(r.nodule_id);
    for (const auto& t : test) {
        if (ids.contains(t.nodule_id)) throw DataError("leakage: test nodule " + t.nodule_id + " is in the database");
    }
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& t : test) {
        scores.push_back(retrieve(t, db, k, mode).diag);
        labels.push_back(t.label);
    }
    return compute_metrics(scores, labels);
}

void write_database(const fs::path& path, std::span<const RetrievalRecord> db) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError(path, "cannot write database");
    for (const auto& r : db) out << json(r).dump() << '\n';
}

std::vector<RetrievalRecord> read_database(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open database");
    std::vector<RetrievalRecord> db;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        db.push_back(json::parse(line).get<RetrievalRecord>());
    }
    return db;
}

}  // namespace nodule
