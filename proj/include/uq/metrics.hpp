#pragma once

#include "uq/distributions.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace uq {

double rmse(std::span<const double> pred_means, std::span<const double> targets);

double mean_nll(std::span<const GaussianPrediction> preds, std::span<const double> targets);
double mean_nll(std::span<const GenGaussianPrediction> preds, std::span<const double> targets);

// {0.05, 0.10, ..., 0.95}
std::vector<double> default_ece_levels();

// Mean over levels p of |p - fraction of PIT values <= p|.
double ece_from_pit(std::span<const double> pit, std::span<const double> levels);
double ece(std::span<const GaussianPrediction> preds, std::span<const double> targets,
           std::span<const double> levels);
double ece(std::span<const GenGaussianPrediction> preds, std::span<const double> targets,
           std::span<const double> levels);

// 1-based ranks; ties share the average rank.
std::vector<double> average_ranks(std::span<const double> values);

double pearson(std::span<const double> a, std::span<const double> b);
// Pearson correlation of average ranks; 0 when either side has no rank variance.
double spearman(std::span<const double> a, std::span<const double> b);

// Spearman correlation between per-sample error and predicted uncertainty.
double euc(std::span<const double> errors, std::span<const double> uncertainties);

// P(random OOD score > random ID score), ties counted one half.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

// OOD is the positive class; one point per distinct threshold, from (0,0) to (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> id_scores, std::span<const double> ood_scores);

struct MetricsReport {
    std::optional<double> rmse;
    std::optional<double> nll;
    std::optional<double> ece;
    std::optional<double> euc;
    std::optional<double> auroc;
    std::size_t n = 0;
    std::string experiment;
    std::string dataset;
    std::string method;
    std::uint64_t seed = 0;
    std::string timestamp;
    std::vector<double> ece_levels;
};

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

// JSON schema for a serialized MetricsReport.
nlohmann::json metrics_report_schema();
// Checks required keys and value ranges; returns an empty string when valid.
std::string validate_metrics_report(const nlohmann::json& j);

// Appends one row, writing the header first if the file is new or empty.
void append_metrics_csv(const std::filesystem::path& path, const MetricsReport& r);

std::string utc_timestamp();

} // namespace uq
