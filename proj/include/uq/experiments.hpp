#pragma once

#include "uq/baselines.hpp"
#include "uq/data.hpp"
#include "uq/io.hpp"
#include "uq/metrics.hpp"
#include "uq/nn.hpp"
#include "uq/posthoc.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace uq {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kLibraryVersion = "0.1.0";

struct DatasetSpec {
    std::string kind = "toy";  // toy | csv
    ToySpec toy;
    std::filesystem::path path;  // csv; relative paths resolve against the config dir, then UQ_DATA_DIR
    std::vector<std::string> targets;
    SplitFractions fractions;
};

struct LearnerSpec {
    NetShape shape;
    AdamWConfig optimizer;
    TrainSchedule schedule;
};

struct PosthocSpec {
    LearnerSpec learner;
    ConditioningMode mode = ConditioningMode::hybrid;
    HeadKind head = HeadKind::gaussian;
    // Update budget as a fraction of the base model's total updates; 0 leaves
    // the schedule's own max_steps untouched.
    double budget_fraction = 0.0;
};

struct OodSpec {
    double lo = 4.0;  // toy interval
    double hi = 6.0;
    std::size_t n = 1000;
    std::vector<AugmentationSpec> augmentations;  // probe augmentations of the augmented arm
};

struct CrossnetSpec {
    std::vector<AugmentationSpec> augmentations;  // one base model per entry, same list used as test shifts
};

struct SweepSpec {
    std::string axis = "probe_fraction";  // probe_fraction | model_width
    std::vector<double> probe_fractions{0.1, 0.5, 1.0};
    std::map<std::string, std::vector<std::size_t>> widths{
        {"small", {16, 16, 16}}, {"medium", {32, 32, 32}}, {"large", {50, 50, 50}}};
    std::uint64_t update_budget = 2000;
};

struct ExperimentConfig {
    std::string name = "experiment";
    DatasetSpec dataset;
    std::vector<std::uint64_t> seeds{0};
    LearnerSpec base;
    PosthocSpec posthoc;
    ProbeConfig probe;
    LearnerSpec ensemble;
    std::size_t ensemble_members = 5;
    OodSpec ood;
    PerturbationSweep perturb;
    CrossnetSpec crossnet;
    SweepSpec sweep;
    std::filesystem::path output_dir = "runs";
    std::filesystem::path source_dir;  // directory of the config file

    json raw;  // the parsed document, used for hashing
};

json experiment_config_schema();
ExperimentConfig parse_experiment_config(const json& j, const std::filesystem::path& source_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string config_hash(const ExperimentConfig& cfg);

std::filesystem::path resolve_data_path(const ExperimentConfig& cfg);
DatasetTable load_dataset(const ExperimentConfig& cfg, std::uint64_t seed);

struct BaseRun {
    std::shared_ptr<const BaseModel> model;
    TrainTrace trace;
};

// Base model trained on rows augmented per batch; the plain path is train_mse.
BaseRun train_base(const ExperimentConfig& cfg, const DatasetTable& data, std::uint64_t seed,
                   const std::vector<AugmentationSpec>& augmentations = {});

PosthocFit fit_posthoc_run(const ExperimentConfig& cfg, std::shared_ptr<const BaseModel> base,
                           const TrainTrace& base_trace, const DatasetTable& data, std::uint64_t seed,
                           ConditioningMode mode, const ProbeConfig& probe);

// Metrics on a split, original target units. Variance is the OOD/EUC score.
MetricsReport evaluate_posthoc(const PosthocModel& m, const DatasetTable& data, Split split);
MetricsReport evaluate_ensemble(const EnsembleModel& e, const DatasetTable& data, Split split);

// Mean predicted variance per row (averaged over channels), standardized units.
std::vector<double> row_mean_variance(const Matrix& variance);

struct ToyRecovery {
    std::uint64_t seed = 0;
    std::map<std::string, double> corr;  // mode -> Pearson(pred var, true sigma^2)
    std::map<std::string, double> nll;   // mode -> test NLL
    double oracle_nll = 0.0;
    double base_rmse = 0.0;
};

ToyRecovery run_toy_recovery(const ExperimentConfig& cfg, std::uint64_t seed,
                             const std::vector<ConditioningMode>& modes);

struct OodResult {
    std::uint64_t seed = 0;
    double auroc_plain = 0.0;
    double auroc_augmented = 0.0;
    std::vector<RocPoint> roc_plain, roc_augmented;
    double id_mean_variance = 0.0;   // augmented arm
    double ood_mean_variance = 0.0;  // augmented arm
    double lambda_fit = 0.0;         // augmented arm
    double lambda_fit_plain = 0.0;
};

OodResult run_toy_ood(const ExperimentConfig& cfg, std::uint64_t seed);

struct PerturbRow {
    double sigma = 0.0;
    double mean_uncertainty = 0.0;           // g(x_s, f(x_s))
    double mean_uncertainty_ablation = 0.0;  // g(x_s, f(x))
    double rmse = 0.0;                       // base model on x_s, original units
};

std::vector<PerturbRow> run_perturb(const PosthocModel& m, const DatasetTable& data, const PerturbationSweep& sweep,
                                    std::uint64_t seed);

// Nondecreasing except for at most `allowed` adjacent drops, each no larger
// than `tolerance` times the range of the series.
bool nearly_nondecreasing(std::span<const double> v, std::size_t allowed, double tolerance);

struct CrossnetResult {
    std::uint64_t seed = 0;
    std::vector<std::string> labels;
    std::vector<std::vector<double>> auroc;  // [base b][test shift a]
    std::vector<std::vector<double>> rmse;   // base b on shift a, original units
    double offdiag_spearman = 0.0;
};

CrossnetResult run_crossnet(const ExperimentConfig& cfg, std::uint64_t seed);

struct UciCell {
    std::string method;
    std::optional<MetricsReport> report;
    std::string error;
};

std::vector<UciCell> run_uci_seed(const ExperimentConfig& cfg, std::uint64_t seed);

struct TableRow {
    std::string dataset;
    std::string method;
    std::size_t runs = 0;
    double nll_mean = 0.0, nll_std = 0.0;
    double ece_mean = 0.0, ece_std = 0.0;
    double rmse_mean = 0.0;
    std::string error;
};

std::vector<TableRow> aggregate_table(const std::string& dataset, const std::vector<std::vector<UciCell>>& per_seed);
std::string render_table(const std::vector<TableRow>& rows);
std::string table_csv(const std::vector<TableRow>& rows);

struct SweepCell {
    std::string label;
    std::uint64_t seed = 0;
    std::uint64_t updates = 0;
    MetricsReport report;
};

std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg, std::uint64_t seed);

std::string trace_csv(const TrainTrace& trace);

} // namespace uq
