#pragma once

#include "uq/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace uq {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Split : std::uint8_t { train, val, test };

struct ColumnStats {
    double mean = 0.0;
    double std = 1.0;  // population standard deviation
};

// Per-column affine map between original and standardized units.
struct Standardizer {
    std::vector<ColumnStats> features;
    std::vector<ColumnStats> targets;

    static std::vector<ColumnStats> fit(const Matrix& raw, std::span<const std::size_t> rows);

    Matrix standardize_features(const Matrix& raw) const;
    Matrix destandardize_features(const Matrix& standardized) const;
    Matrix standardize_targets(const Matrix& raw) const;
    Matrix destandardize_targets(const Matrix& standardized) const;
    // Variances scale by std^2 per target channel.
    Matrix destandardize_variances(const Matrix& standardized) const;
};

struct SplitFractions {
    double train = 0.72;
    double val = 0.08;
    double test = 0.20;

    void validate() const;
};

// Features and targets are stored standardized; the standardizer maps them back.
struct DatasetTable {
    std::string name;
    Matrix features;
    Matrix targets;
    std::vector<Split> split;
    Standardizer standardizer;
    std::vector<std::string> feature_names;
    std::vector<std::string> target_names;
    std::vector<std::string> dropped_columns;
    std::size_t rejected_rows = 0;
    std::uint64_t seed = 0;
    SplitFractions fractions;

    // Ground truth in original target units; synthetic data only.
    Matrix true_mean;
    Matrix true_sigma;

    std::size_t rows() const { return features.rows(); }
    std::size_t input_width() const { return features.cols(); }
    std::size_t output_width() const { return targets.cols(); }
    std::vector<std::size_t> indices(Split s) const;
    std::size_t count(Split s) const;
    void validate() const;
};

enum class ToyMean { x_sin_x, linear };
enum class ToyNoise { linear_abs, constant, none };

ToyMean parse_toy_mean(const std::string& s);
ToyNoise parse_toy_noise(const std::string& s);
std::string to_string(ToyMean m);
std::string to_string(ToyNoise n);

double toy_mean(ToyMean fn, double x);
double toy_sigma(ToyNoise fn, double x);

struct ToySpec {
    std::size_t n_train = 2000;  // train + validation rows
    std::size_t n_test = 1000;
    double x_lo = -4.0;
    double x_hi = 4.0;
    ToyMean mean_fn = ToyMean::x_sin_x;
    ToyNoise noise_fn = ToyNoise::linear_abs;
    std::uint64_t seed = 0;
    double val_fraction = 0.1;

    void validate() const;
};

DatasetTable gen_toy(const ToySpec& spec);

// Test-only rows drawn on [lo, hi] from the same generative process, expressed
// in the standardized space of `reference`.
DatasetTable gen_toy_interval(const ToySpec& spec, const DatasetTable& reference, double lo, double hi,
                              std::size_t n, std::uint64_t seed);

DatasetTable load_csv(const std::filesystem::path& path, const std::vector<std::string>& target_cols,
                      std::uint64_t seed, SplitFractions fractions = {});

enum class AugmentationKind { gauss_noise, feature_scale_jitter, feature_dropout, sign_flip };

std::string to_string(AugmentationKind k);
AugmentationKind parse_augmentation_kind(const std::string& s);

struct AugmentationSpec {
    AugmentationKind kind = AugmentationKind::gauss_noise;
    // gauss_noise: noise std; feature_scale_jitter: factor drawn from [1-param, 1+param];
    // feature_dropout: per-feature drop probability. Unused by sign_flip.
    double param = 0.0;
    std::vector<std::size_t> subset;  // sign_flip columns; empty = all
    double probability = 1.0;          // per-row application probability

    void validate() const;
};

// Applies each augmentation independently per row, in list order.
void apply_augmentations(Matrix& x, std::span<const AugmentationSpec> augs, Rng& rng);
void apply_augmentation(Matrix& x, const AugmentationSpec& aug, Rng& rng);

struct ProbeConfig {
    double fraction = 0.1;
    std::vector<AugmentationSpec> augmentations;
    std::uint64_t seed = 0;
};

struct Probe {
    DatasetTable data;                     // sampled train rows plus all val/test rows
    std::vector<std::size_t> source_rows;  // sampled rows of the parent table
    ProbeConfig config;

    bool augmented() const { return !config.augmentations.empty(); }
};

// floor(fraction * n_train) train rows drawn without replacement.
Probe make_probe(const DatasetTable& data, const ProbeConfig& cfg, std::size_t batch_size);

using ClampBounds = std::pair<double, double>;

Matrix perturb(const Matrix& x, double sigma, std::optional<ClampBounds> clamp, Rng& rng);

struct PerturbationSweep {
    std::vector<double> sigmas{0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5};
    std::optional<ClampBounds> clamp;

    void validate() const;
};

} // namespace uq
