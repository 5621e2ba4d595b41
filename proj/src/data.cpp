#include "uq/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace uq {

std::vector<ColumnStats> Standardizer::fit(const Matrix& raw, std::span<const std::size_t> rows) {
    if (rows.empty()) throw DataError("standardizer: no rows to fit on");
    std::vector<ColumnStats> stats(raw.cols());
    const double n = static_cast<double>(rows.size());
    for (std::size_t c = 0; c < raw.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t r : rows) mean += raw(r, c);
        mean /= n;
        double var = 0.0;
        for (std::size_t r : rows) var += (raw(r, c) - mean) * (raw(r, c) - mean);
        stats[c] = {mean, std::sqrt(var / n)};
    }
    return stats;
}

namespace {

Matrix forward_map(const Matrix& m, const std::vector<ColumnStats>& stats, bool inverse) {
    if (m.cols() != stats.size()) throw ShapeError("standardizer: column count mismatch");
    Matrix out = m;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c)
            row[c] = inverse ? row[c] * stats[c].std + stats[c].mean : (row[c] - stats[c].mean) / stats[c].std;
    }
    return out;
}

} // namespace

Matrix Standardizer::standardize_features(const Matrix& raw) const { return forward_map(raw, features, false); }
Matrix Standardizer::destandardize_features(const Matrix& s) const { return forward_map(s, features, true); }
Matrix Standardizer::standardize_targets(const Matrix& raw) const { return forward_map(raw, targets, false); }
Matrix Standardizer::destandardize_targets(const Matrix& s) const { return forward_map(s, targets, true); }

Matrix Standardizer::destandardize_variances(const Matrix& s) const {
    if (s.cols() != targets.size()) throw ShapeError("standardizer: variance column count mismatch");
    Matrix out = s;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] *= targets[c].std * targets[c].std;
    }
    return out;
}

void SplitFractions::validate() const {
    if (train <= 0.0 || val < 0.0 || test < 0.0 || std::fabs(train + val + test - 1.0) > 1e-9)
        throw DataError("split fractions must be nonnegative, train > 0, and sum to 1");
}

std::vector<std::size_t> DatasetTable::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
        if (split[i] == s) out.push_back(i);
    return out;
}

std::size_t DatasetTable::count(Split s) const {
    return static_cast<std::size_t>(std::count(split.begin(), split.end(), s));
}

void DatasetTable::validate() const {
    if (features.rows() != targets.rows() || split.size() != features.rows())
        throw DataError("dataset '" + name + "': row counts disagree");
    if (!features.all_finite() || !targets.all_finite()) throw DataError("dataset '" + name + "': non-finite value");
    for (const auto& s : standardizer.features)
        if (!(s.std > 0.0)) throw DataError("dataset '" + name + "': zero-variance feature retained");
    for (const auto& s : standardizer.targets)
        if (!(s.std > 0.0)) throw DataError("dataset '" + name + "': zero-variance target");
}

ToyMean parse_toy_mean(const std::string& s) {
    if (s == "x_sin_x") return ToyMean::x_sin_x;
    if (s == "linear") return ToyMean::linear;
    throw std::invalid_argument("unknown toy mean function '" + s + "'");
}

ToyNoise parse_toy_noise(const std::string& s) {
    if (s == "linear_abs") return ToyNoise::linear_abs;
    if (s == "constant") return ToyNoise::constant;
    if (s == "none") return ToyNoise::none;
    throw std::invalid_argument("unknown toy noise function '" + s + "'");
}

std::string to_string(ToyMean m) { return m == ToyMean::x_sin_x ? "x_sin_x" : "linear"; }

std::string to_string(ToyNoise n) {
    switch (n) {
    case ToyNoise::linear_abs: return "linear_abs";
    case ToyNoise::constant: return "constant";
    case ToyNoise::none: return "none";
    }
    return "?";
}

double toy_mean(ToyMean fn, double x) { return fn == ToyMean::x_sin_x ? x * std::sin(x) : 2.0 * x; }

double toy_sigma(ToyNoise fn, double x) {
    switch (fn) {
    case ToyNoise::linear_abs: return 0.1 + 0.3 * std::fabs(x) / 4.0;
    case ToyNoise::constant: return 0.2;
    case ToyNoise::none: return 0.0;
    }
    return 0.0;
}

void ToySpec::validate() const {
    if (!(x_lo < x_hi)) throw DataError("toy spec: x_lo must be < x_hi");
    if (n_train == 0 || n_test == 0) throw DataError("toy spec: counts must be positive");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw DataError("toy spec: val_fraction in [0,1)");
}

namespace {

struct RawToy {
    Matrix x, y, mu, sigma;
};

RawToy sample_toy(const ToySpec& spec, double lo, double hi, std::size_t n, Rng& rng) {
    RawToy raw{Matrix(n, 1), Matrix(n, 1), Matrix(n, 1), Matrix(n, 1)};
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.uniform(lo, hi);
        const double mu = toy_mean(spec.mean_fn, x);
        const double sd = toy_sigma(spec.noise_fn, x);
        raw.x(i, 0) = x;
        raw.mu(i, 0) = mu;
        raw.sigma(i, 0) = sd;
        raw.y(i, 0) = sd > 0.0 ? mu + sd * rng.normal() : mu;
    }
    return raw;
}

} // namespace

DatasetTable gen_toy(const ToySpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Rng id_rng = rng.split("toy-train");
    Rng test_rng = rng.split("toy-test");
    RawToy train = sample_toy(spec, spec.x_lo, spec.x_hi, spec.n_train, id_rng);
    RawToy test = sample_toy(spec, spec.x_lo, spec.x_hi, spec.n_test, test_rng);

    DatasetTable t;
    t.name = "toy";
    t.seed = spec.seed;
    t.feature_names = {"x"};
    t.target_names = {"y"};
    const std::size_t n = spec.n_train + spec.n_test;
    t.split.assign(n, Split::train);
    const auto n_val = static_cast<std::size_t>(std::floor(spec.val_fraction * static_cast<double>(spec.n_train)));
    const auto order = rng.split("toy-val").permutation(spec.n_train);
    for (std::size_t i = 0; i < n_val; ++i) t.split[order[i]] = Split::val;
    for (std::size_t i = spec.n_train; i < n; ++i) t.split[i] = Split::test;
    t.fractions = {1.0 - spec.val_fraction, spec.val_fraction, 0.0};

    const Matrix x = vconcat(train.x, test.x);
    const Matrix y = vconcat(train.y, test.y);
    t.true_mean = vconcat(train.mu, test.mu);
    t.true_sigma = vconcat(train.sigma, test.sigma);

    const auto train_rows = t.indices(Split::train);
    t.standardizer.features = Standardizer::fit(x, train_rows);
    t.standardizer.targets = Standardizer::fit(y, train_rows);
    t.features = t.standardizer.standardize_features(x);
    t.targets = t.standardizer.standardize_targets(y);
    t.validate();
    return t;
}

DatasetTable gen_toy_interval(const ToySpec& spec, const DatasetTable& reference, double lo, double hi,
                              std::size_t n, std::uint64_t seed) {
    if (!(lo < hi) || n == 0) throw DataError("toy interval: need lo < hi and n > 0");
    Rng rng = Rng(seed).split("toy-interval");
    RawToy raw = sample_toy(spec, lo, hi, n, rng);
    DatasetTable t;
    t.name = "toy[" + std::to_string(lo) + "," + std::to_string(hi) + "]";
    t.seed = seed;
    t.feature_names = reference.feature_names;
    t.target_names = reference.target_names;
    t.standardizer = reference.standardizer;
    t.split.assign(n, Split::test);
    t.features = t.standardizer.standardize_features(raw.x);
    t.targets = t.standardizer.standardize_targets(raw.y);
    t.true_mean = raw.mu;
    t.true_sigma = raw.sigma;
    return t;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string trim(std::string s) {
    const auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && issp(static_cast<unsigned char>(s.back()))) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && issp(static_cast<unsigned char>(s[i]))) ++i;
    s.erase(0, i);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

bool parse_double(const std::string& cell, double& out) {
    const std::string t = trim(cell);
    if (t.empty()) return false;
    const char* first = t.data();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), out);
    return ec == std::errc() && ptr == t.data() + t.size() && std::isfinite(out);
}

} // namespace

DatasetTable load_csv(const std::filesystem::path& path, const std::vector<std::string>& target_cols,
                      std::uint64_t seed, SplitFractions fractions) {
    fractions.validate();
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file '" + path.string() + "'");
    if (target_cols.empty()) throw DataError("no target columns selected");

    std::string line;
    if (!std::getline(in, line)) throw DataError("CSV file '" + path.string() + "' is empty");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    std::vector<std::string> header = split_csv_line(line);
    for (auto& h : header) h = trim(h);

    std::vector<std::size_t> target_idx;
    for (const auto& name : target_cols) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError("target column '" + name + "' not in CSV header");
        target_idx.push_back(static_cast<std::size_t>(it - header.begin()));
    }
    std::vector<std::size_t> feature_idx;
    for (std::size_t c = 0; c < header.size(); ++c)
        if (std::find(target_idx.begin(), target_idx.end(), c) == target_idx.end()) feature_idx.push_back(c);

    std::vector<double> xs, ys;
    std::size_t rejected = 0;
    std::size_t n = 0;
    std::vector<double> row(header.size());
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto cells = split_csv_line(line);
        bool ok = cells.size() == header.size();
        for (std::size_t c = 0; ok && c < cells.size(); ++c) ok = parse_double(cells[c], row[c]);
        if (!ok) {
            ++rejected;
            continue;
        }
        for (std::size_t c : feature_idx) xs.push_back(row[c]);
        for (std::size_t c : target_idx) ys.push_back(row[c]);
        ++n;
    }
    if (rejected > 0)
        std::cerr << "warning: " << path.string() << ": rejected " << rejected << " non-numeric row(s)\n";
    if (n < 3) throw DataError("CSV file '" + path.string() + "' has fewer than 3 numeric rows");

    Matrix x(n, feature_idx.size(), std::move(xs));
    Matrix y(n, target_idx.size(), std::move(ys));

    DatasetTable t;
    t.name = path.stem().string();
    t.seed = seed;
    t.fractions = fractions;
    t.rejected_rows = rejected;
    t.target_names = target_cols;
    t.split.assign(n, Split::train);
    const auto order = Rng(seed).split("csv-split").permutation(n);
    const auto n_test = static_cast<std::size_t>(std::llround(fractions.test * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(fractions.val * static_cast<double>(n)));
    if (n_test + n_val >= n) throw DataError("split leaves no training rows");
    for (std::size_t i = 0; i < n_test; ++i) t.split[order[i]] = Split::test;
    for (std::size_t i = n_test; i < n_test + n_val; ++i) t.split[order[i]] = Split::val;

    const auto train_rows = t.indices(Split::train);
    auto fstats = Standardizer::fit(x, train_rows);
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < fstats.size(); ++c) {
        if (fstats[c].std > 1e-12 * std::max(1.0, std::fabs(fstats[c].mean))) {
            keep.push_back(c);
        } else {
            t.dropped_columns.push_back(header[feature_idx[c]]);
            std::cerr << "warning: " << path.string() << ": dropping constant column '" << header[feature_idx[c]]
                      << "'\n";
        }
    }
    Matrix xk(n, keep.size());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < keep.size(); ++j) xk(r, j) = x(r, keep[j]);
    for (std::size_t c : keep) {
        t.feature_names.push_back(header[feature_idx[c]]);
        t.standardizer.features.push_back(fstats[c]);
    }
    if (keep.empty()) throw DataError("CSV file '" + path.string() + "' has no non-constant feature columns");
    t.standardizer.targets = Standardizer::fit(y, train_rows);
    t.features = t.standardizer.standardize_features(xk);
    t.targets = t.standardizer.standardize_targets(y);
    t.validate();
    return t;
}

std::string to_string(AugmentationKind k) {
    switch (k) {
    case AugmentationKind::gauss_noise: return "gauss_noise";
    case AugmentationKind::feature_scale_jitter: return "feature_scale_jitter";
    case AugmentationKind::feature_dropout: return "feature_dropout";
    case AugmentationKind::sign_flip: return "sign_flip";
    }
    return "?";
}

AugmentationKind parse_augmentation_kind(const std::string& s) {
    if (s == "gauss_noise") return AugmentationKind::gauss_noise;
    if (s == "feature_scale_jitter") return AugmentationKind::feature_scale_jitter;
    if (s == "feature_dropout") return AugmentationKind::feature_dropout;
    if (s == "sign_flip") return AugmentationKind::sign_flip;
    throw std::invalid_argument("unknown augmentation kind '" + s + "'");
}

void AugmentationSpec::validate() const {
    if (!(probability >= 0.0 && probability <= 1.0))
        throw std::invalid_argument("augmentation probability must be in [0, 1]");
    switch (kind) {
    case AugmentationKind::gauss_noise:
        if (!(param >= 0.0)) throw std::invalid_argument("gauss_noise sigma must be >= 0");
        break;
    case AugmentationKind::feature_scale_jitter:
        if (!(param >= 0.0 && param < 1.0)) throw std::invalid_argument("feature_scale_jitter range must be in [0, 1)");
        break;
    case AugmentationKind::feature_dropout:
        if (!(param >= 0.0 && param <= 1.0)) throw std::invalid_argument("feature_dropout p must be in [0, 1]");
        break;
    case AugmentationKind::sign_flip: break;
    }
}

void apply_augmentation(Matrix& x, const AugmentationSpec& aug, Rng& rng) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
        if (!rng.bernoulli(aug.probability)) continue;
        auto row = x.row(r);
        switch (aug.kind) {
        case AugmentationKind::gauss_noise:
            if (aug.param > 0.0)
                for (double& v : row) v += rng.normal(0.0, aug.param);
            break;
        case AugmentationKind::feature_scale_jitter:
            for (double& v : row) v *= rng.uniform(1.0 - aug.param, 1.0 + aug.param);
            break;
        case AugmentationKind::feature_dropout:
            for (double& v : row)
                if (rng.bernoulli(aug.param)) v = 0.0;
            break;
        case AugmentationKind::sign_flip:
            if (aug.subset.empty()) {
                for (double& v : row) v = -v;
            } else {
                for (std::size_t c : aug.subset) {
                    if (c >= row.size()) throw ShapeError("sign_flip: column out of range");
                    row[c] = -row[c];
                }
            }
            break;
        }
    }
}

void apply_augmentations(Matrix& x, std::span<const AugmentationSpec> augs, Rng& rng) {
    for (const auto& a : augs) apply_augmentation(x, a, rng);
}

Probe make_probe(const DatasetTable& data, const ProbeConfig& cfg, std::size_t batch_size) {
    if (!(cfg.fraction > 0.0 && cfg.fraction <= 1.0)) throw DataError("probe fraction must be in (0, 1]");
    for (const auto& a : cfg.augmentations) a.validate();
    const auto train = data.indices(Split::train);
    const auto n_probe = static_cast<std::size_t>(std::floor(cfg.fraction * static_cast<double>(train.size())));
    if (n_probe == 0 || n_probe < batch_size)
        throw DataError("probe of " + std::to_string(n_probe) + " rows is smaller than one batch (" +
                        std::to_string(batch_size) + ")");

    auto order = Rng(cfg.seed).split("probe").permutation(train.size());
    std::vector<bool> chosen(data.rows(), false);
    for (std::size_t i = 0; i < n_probe; ++i) chosen[train[order[i]]] = true;

    std::vector<std::size_t> keep;
    Probe probe;
    probe.config = cfg;
    for (std::size_t r = 0; r < data.rows(); ++r) {
        if (data.split[r] != Split::train || chosen[r]) keep.push_back(r);
        if (chosen[r]) probe.source_rows.push_back(r);
    }

    DatasetTable& t = probe.data;
    t = data;
    t.name = data.name + "/probe";
    t.features = data.features.gather_rows(keep);
    t.targets = data.targets.gather_rows(keep);
    t.split.clear();
    for (std::size_t r : keep) t.split.push_back(data.split[r]);
    if (!data.true_mean.empty()) {
        t.true_mean = data.true_mean.gather_rows(keep);
        t.true_sigma = data.true_sigma.gather_rows(keep);
    }
    return probe;
}

Matrix perturb(const Matrix& x, double sigma, std::optional<ClampBounds> clamp, Rng& rng) {
    if (!(sigma >= 0.0)) throw DomainError("perturb: sigma must be >= 0");
    if (clamp && !(clamp->first <= clamp->second)) throw DomainError("perturb: clamp lo > hi");
    Matrix out = x;
    for (double& v : out.values()) {
        if (sigma > 0.0) v += rng.normal(0.0, sigma);
        if (clamp) v = std::clamp(v, clamp->first, clamp->second);
    }
    return out;
}

void PerturbationSweep::validate() const {
    if (sigmas.empty()) throw std::invalid_argument("perturbation sweep: no noise levels");
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        if (!(sigmas[i] >= 0.0)) throw std::invalid_argument("perturbation sweep: negative sigma");
        if (i > 0 && !(sigmas[i] > sigmas[i - 1]))
            throw std::invalid_argument("perturbation sweep: sigmas must be strictly increasing");
    }
    if (clamp && !(clamp->first <= clamp->second)) throw std::invalid_argument("perturbation sweep: clamp lo > hi");
}

} // namespace uq
