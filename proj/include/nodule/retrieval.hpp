#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nodule/data_model.hpp"
#include "nodule/evaluation.hpp"
#include "nodule/network.hpp"

namespace nodule {

inline constexpr int kDefaultNeighbours = 20;

/// machine: CNet probability; expert: RNet score; concat: both.
enum class RetrievalMode { machine, expert, concat };

std::string_view to_string(RetrievalMode m);
RetrievalMode parse_retrieval_mode(std::string_view name);

struct RetrievalRecord {
    std::string nodule_id;
    double cls_prob = 0.5;
    double reg_score = 0.0;
    int label = 0;

    bool operator==(const RetrievalRecord&) const = default;
};

void to_json(nlohmann::json& j, const RetrievalRecord& r);
void from_json(const nlohmann::json& j, RetrievalRecord& r);

struct Neighbour {
    std::string nodule_id;
    double distance = 0.0;
    int label = 0;
};

struct DiagnosisResult {
    double diag = 0.0;
    std::vector<Neighbour> neighbours;  // ascending distance, ties by id
    RetrievalMode mode = RetrievalMode::concat;
};

std::vector<double> feature_vector(const RetrievalRecord& r, RetrievalMode mode);
double euclidean_distance(const RetrievalRecord& a, const RetrievalRecord& b, RetrievalMode mode);

/// K nearest database records and the mean of their labels. Throws
/// ArgumentError when the database holds fewer than K records.
DiagnosisResult retrieve(const RetrievalRecord& query, std::span<const RetrievalRecord> db, int k = kDefaultNeighbours,
                         RetrievalMode mode = RetrievalMode::concat);

/// Eval-mode forward pass of one patch.
RetrievalRecord make_record(SynergicNet& model, const NodulePatch& patch, std::string id, int label);
std::vector<RetrievalRecord> build_database(SynergicNet& model, std::span<const SureSample> samples);

/// Diag scores of every test record fed to compute_metrics. Throws
/// DataError("leakage") when a test id is also in the database.
MetricReport evaluate_diagnosis(std::span<const RetrievalRecord> test, std::span<const RetrievalRecord> db, int k,
                                RetrievalMode mode);

/// JSON-lines persistence.
void write_database(const std::filesystem::path& path, std::span<const RetrievalRecord> db);
std::vector<RetrievalRecord> read_database(const std::filesystem::path& path);

}  // namespace nodule
