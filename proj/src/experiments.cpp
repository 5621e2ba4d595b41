#include "uq/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace uq {

// ---------------------------------------------------------------------------
// Config parsing

json experiment_config_schema() {
    const json num = {{"type", "number"}};
    const json count = {{"type", "integer"}, {"minimum", 0}};
    const json widths = {{"type", "array"}, {"items", count}};
    const json augmentation = {
        {"type", "object"},
        {"required", {"kind"}},
        {"properties",
         {{"kind", {{"enum", {"gauss_noise", "feature_scale_jitter", "feature_dropout", "sign_flip"}}}},
          {"sigma", num},
          {"range", num},
          {"p", num},
          {"subset", widths},
          {"probability", num}}}};
    const json learner = {
        {"type", "object"},
        {"properties",
         {{"hidden", widths},
          {"activation", {{"enum", {"relu", "tanh"}}}},
          {"dropout", num},
          {"lr", num},
          {"beta1", num},
          {"beta2", num},
          {"eps", num},
          {"weight_decay", num},
          {"max_epochs", count},
          {"batch_size", count},
          {"patience", count},
          {"eval_every", count},
          {"max_steps", count}}}};
    json posthoc = learner;
    posthoc["properties"]["mode"] = {{"enum", {"input_only", "output_only", "hybrid"}}};
    posthoc["properties"]["head"] = {{"enum", {"gaussian", "gengauss"}}};
    posthoc["properties"]["budget_fraction"] = num;
    json ensemble = learner;
    ensemble["properties"]["members"] = count;

    return {
        {"$schema", "https://json-schema.org/draft/2020-12/schema"},
        {"title", "ExperimentConfig"},
        {"type", "object"},
        {"required", {"dataset", "seeds"}},
        {"properties",
         {{"name", {{"type", "string"}}},
          {"dataset",
           {{"type", "object"},
            {"required", {"kind"}},
            {"properties",
             {{"kind", {{"enum", {"toy", "csv"}}}},
              {"n_train", count},
              {"n_test", count},
              {"x_lo", num},
              {"x_hi", num},
              {"mean", {{"enum", {"x_sin_x", "linear"}}}},
              {"noise", {{"enum", {"linear_abs", "constant", "none"}}}},
              {"val_fraction", num},
              {"path", {{"type", "string"}}},
              {"targets", {{"type", "array"}, {"items", {{"type", "string"}}}}},
              {"split", {{"type", "object"}, {"properties", {{"train", num}, {"val", num}, {"test", num}}}}}}}}},
          {"seeds", {{"type", "array"}, {"minItems", 1}, {"items", count}}},
          {"base", learner},
          {"posthoc", posthoc},
          {"ensemble", ensemble},
          {"probe",
           {{"type", "object"},
            {"properties", {{"fraction", num}, {"augmentations", {{"type", "array"}, {"items", augmentation}}}}}}},
          {"ood",
           {{"type", "object"},
            {"properties",
             {{"lo", num}, {"hi", num}, {"n", count}, {"augmentations", {{"type", "array"}, {"items", augmentation}}}}}}},
          {"perturb",
           {{"type", "object"},
            {"properties",
             {{"sigmas", {{"type", "array"}, {"items", num}}},
              {"clamp", {{"type", {"array", "null"}}, {"items", num}, {"minItems", 2}, {"maxItems", 2}}}}}}},
          {"crossnet",
           {{"type", "object"}, {"properties", {{"augmentations", {{"type", "array"}, {"items", augmentation}}}}}}},
          {"sweep",
           {{"type", "object"},
            {"properties",
             {{"axis", {{"enum", {"probe_fraction", "model_width"}}}},
              {"probe_fractions", {{"type", "array"}, {"items", num}}},
              {"widths", {{"type", "object"}, {"additionalProperties", widths}}},
              {"update_budget", count}}}}},
          {"output_dir", {{"type", "string"}}}}},
        {"additionalProperties", false},
    };
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

LearnerSpec parse_learner(const json& j, LearnerSpec spec, const std::string& where,
                          std::initializer_list<const char*> extra = {}) {
    std::vector<const char*> keys{"hidden", "activation", "dropout", "lr", "beta1", "beta2", "eps", "weight_decay",
                                  "max_epochs", "batch_size", "patience", "eval_every", "max_steps"};
    keys.insert(keys.end(), extra.begin(), extra.end());
    for (const auto& [key, _] : j.items()) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return key == a; }))
            throw ConfigError(where + ": unknown key '" + key + "'");
    }
    read(j, "hidden", spec.shape.hidden);
    if (j.contains("activation")) spec.shape.activation = parse_activation(j.at("activation").get<std::string>());
    read(j, "dropout", spec.shape.dropout_p);
    read(j, "lr", spec.optimizer.lr);
    read(j, "beta1", spec.optimizer.beta1);
    read(j, "beta2", spec.optimizer.beta2);
    read(j, "eps", spec.optimizer.eps);
    read(j, "weight_decay", spec.optimizer.weight_decay);
    read(j, "max_epochs", spec.schedule.max_epochs);
    read(j, "batch_size", spec.schedule.batch_size);
    read(j, "patience", spec.schedule.early_stop_patience);
    read(j, "eval_every", spec.schedule.eval_every);
    read(j, "max_steps", spec.schedule.max_steps);
    spec.optimizer.validate();
    spec.schedule.validate();
    if (spec.shape.hidden.empty()) throw ConfigError(where + ": hidden must list at least one layer");
    return spec;
}

std::vector<AugmentationSpec> parse_augmentations(const json& j) {
    std::vector<AugmentationSpec> out;
    for (const auto& a : j) out.push_back(augmentation_from_json(a));
    return out;
}

} // namespace

ExperimentConfig parse_experiment_config(const json& j, const std::filesystem::path& source_dir) {
    ExperimentConfig cfg;
    cfg.raw = j;
    cfg.source_dir = source_dir;
    try {
        check_keys(j, {"name", "dataset", "seeds", "base", "posthoc", "ensemble", "probe", "ood", "perturb",
                       "crossnet", "sweep", "output_dir"},
                   "config");
        read(j, "name", cfg.name);

        const json& d = j.at("dataset");
        check_keys(d, {"kind", "n_train", "n_test", "x_lo", "x_hi", "mean", "noise", "val_fraction", "path", "targets",
                       "split"},
                   "dataset");
        cfg.dataset.kind = d.at("kind").get<std::string>();
        if (cfg.dataset.kind == "toy") {
            auto& t = cfg.dataset.toy;
            read(d, "n_train", t.n_train);
            read(d, "n_test", t.n_test);
            read(d, "x_lo", t.x_lo);
            read(d, "x_hi", t.x_hi);
            read(d, "val_fraction", t.val_fraction);
            if (d.contains("mean")) t.mean_fn = parse_toy_mean(d.at("mean").get<std::string>());
            if (d.contains("noise")) t.noise_fn = parse_toy_noise(d.at("noise").get<std::string>());
            t.validate();
        } else if (cfg.dataset.kind == "csv") {
            cfg.dataset.path = d.at("path").get<std::string>();
            cfg.dataset.targets = d.at("targets").get<std::vector<std::string>>();
            if (cfg.dataset.targets.empty()) throw ConfigError("dataset: targets must not be empty");
            if (d.contains("split")) {
                const auto& s = d.at("split");
                read(s, "train", cfg.dataset.fractions.train);
                read(s, "val", cfg.dataset.fractions.val);
                read(s, "test", cfg.dataset.fractions.test);
            }
            cfg.dataset.fractions.validate();
        } else {
            throw ConfigError("dataset.kind must be 'toy' or 'csv'");
        }

        cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (cfg.seeds.empty()) throw ConfigError("seeds must not be empty");

        if (j.contains("base")) cfg.base = parse_learner(j.at("base"), cfg.base, "base");

        LearnerSpec post_defaults;
        post_defaults.shape.hidden = {50, 50, 50};
        post_defaults.shape.activation = Activation::tanh;
        post_defaults.optimizer.weight_decay = 0.01;
        cfg.posthoc.learner = post_defaults;
        if (j.contains("posthoc")) {
            const auto& p = j.at("posthoc");
            cfg.posthoc.learner = parse_learner(p, post_defaults, "posthoc", {"mode", "head", "budget_fraction"});
            if (p.contains("mode")) cfg.posthoc.mode = parse_conditioning_mode(p.at("mode").get<std::string>());
            if (p.contains("head")) cfg.posthoc.head = parse_head_kind(p.at("head").get<std::string>());
            read(p, "budget_fraction", cfg.posthoc.budget_fraction);
            if (cfg.posthoc.budget_fraction < 0.0) throw ConfigError("posthoc.budget_fraction must be >= 0");
        }

        cfg.ensemble = cfg.base;
        if (j.contains("ensemble")) {
            const auto& e = j.at("ensemble");
            cfg.ensemble = parse_learner(e, cfg.base, "ensemble", {"members"});
            read(e, "members", cfg.ensemble_members);
            if (cfg.ensemble_members < 2) throw ConfigError("ensemble.members must be >= 2");
        }

        if (j.contains("probe")) {
            const auto& p = j.at("probe");
            check_keys(p, {"fraction", "augmentations"}, "probe");
            read(p, "fraction", cfg.probe.fraction);
            if (p.contains("augmentations")) cfg.probe.augmentations = parse_augmentations(p.at("augmentations"));
            if (!(cfg.probe.fraction > 0.0 && cfg.probe.fraction <= 1.0))
                throw ConfigError("probe.fraction must be in (0, 1]");
        }

        if (j.contains("ood")) {
            const auto& o = j.at("ood");
            check_keys(o, {"lo", "hi", "n", "augmentations"}, "ood");
            read(o, "lo", cfg.ood.lo);
            read(o, "hi", cfg.ood.hi);
            read(o, "n", cfg.ood.n);
            if (o.contains("augmentations")) cfg.ood.augmentations = parse_augmentations(o.at("augmentations"));
        }

        if (j.contains("perturb")) {
            const auto& p = j.at("perturb");
            check_keys(p, {"sigmas", "clamp"}, "perturb");
            read(p, "sigmas", cfg.perturb.sigmas);
            if (p.contains("clamp") && !p.at("clamp").is_null()) {
                const auto c = p.at("clamp").get<std::vector<double>>();
                if (c.size() != 2 || !(c[0] < c[1])) throw ConfigError("perturb.clamp must be [lo, hi] with lo < hi");
                cfg.perturb.clamp = ClampBounds{c[0], c[1]};
            }
            cfg.perturb.validate();
        }

        if (j.contains("crossnet")) {
            const auto& c = j.at("crossnet");
            check_keys(c, {"augmentations"}, "crossnet");
            if (c.contains("augmentations")) cfg.crossnet.augmentations = parse_augmentations(c.at("augmentations"));
        }

        if (j.contains("sweep")) {
            const auto& s = j.at("sweep");
            check_keys(s, {"axis", "probe_fractions", "widths", "update_budget"}, "sweep");
            read(s, "axis", cfg.sweep.axis);
            if (cfg.sweep.axis != "probe_fraction" && cfg.sweep.axis != "model_width")
                throw ConfigError("sweep.axis must be 'probe_fraction' or 'model_width'");
            read(s, "probe_fractions", cfg.sweep.probe_fractions);
            if (s.contains("widths"))
                cfg.sweep.widths = s.at("widths").get<std::map<std::string, std::vector<std::size_t>>>();
            read(s, "update_budget", cfg.sweep.update_budget);
            if (cfg.sweep.update_budget == 0) throw ConfigError("sweep.update_budget must be > 0");
        }

        if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    json j;
    try {
        j = read_json_file(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    return parse_experiment_config(j, path.parent_path());
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(canonical_dump(cfg.raw)); }

std::filesystem::path resolve_data_path(const ExperimentConfig& cfg) {
    const auto& p = cfg.dataset.path;
    if (p.is_absolute()) return p;
    std::vector<std::filesystem::path> candidates;
    if (!cfg.source_dir.empty()) candidates.push_back(cfg.source_dir / p);
    candidates.push_back(p);
    if (const char* root = std::getenv("UQ_DATA_DIR")) candidates.push_back(std::filesystem::path(root) / p);
    for (const auto& c : candidates)
        if (std::filesystem::exists(c)) return c;
    return candidates.back();
}

DatasetTable load_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.dataset.kind == "toy") {
        ToySpec spec = cfg.dataset.toy;
        spec.seed = seed;
        return gen_toy(spec);
    }
    DatasetTable t = load_csv(resolve_data_path(cfg), cfg.dataset.targets, seed, cfg.dataset.fractions);
    t.name = cfg.dataset.path.stem().string();
    return t;
}

// ---------------------------------------------------------------------------
// Training helpers

namespace {

class AugmentedMseTask : public TrainingTask {
public:
    AugmentedMseTask(const DatasetTable& data, std::vector<AugmentationSpec> augs)
        : inner_(data), data_(data), augs_(std::move(augs)), train_(data.indices(Split::train)) {}

    std::size_t train_rows() const override { return train_.size(); }

    Batch make_batch(std::span<const std::size_t> rows, Rng& rng) const override {
        std::vector<std::size_t> idx(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) idx[i] = train_[rows[i]];
        Matrix x = data_.features.gather_rows(idx);
        apply_augmentations(x, augs_, rng);
        return {std::move(x), data_.targets.gather_rows(idx)};
    }

    double loss(const Matrix& output, const Matrix& targets, Matrix* grad) const override {
        return mse_loss(output, targets, grad);
    }

    double validation_loss(const Mlp& net) const override { return inner_.validation_loss(net); }

private:
    MseTask inner_;
    const DatasetTable& data_;
    std::vector<AugmentationSpec> augs_;
    std::vector<std::size_t> train_;
};

} // namespace

BaseRun train_base(const ExperimentConfig& cfg, const DatasetTable& data, std::uint64_t seed,
                   const std::vector<AugmentationSpec>& augmentations) {
    const std::vector<HeadActivation> heads(data.output_width(), HeadActivation::identity);
    Rng root(seed);
    std::string tag = "base";
    for (const auto& a : augmentations) tag += "+" + to_string(a.kind);
    Rng init = root.split(tag + "/init");
    Mlp net(cfg.base.shape.make(data.input_width(), heads), init);
    Rng train_rng = root.split(tag + "/train");
    TrainTrace trace;
    if (augmentations.empty()) {
        trace = train_mse(net, data, cfg.base.schedule, cfg.base.optimizer, train_rng);
    } else {
        AugmentedMseTask task(data, augmentations);
        trace = fit(net, task, cfg.base.schedule, cfg.base.optimizer, train_rng);
    }
    auto model = std::make_shared<BaseModel>(BaseModel{data.name, std::move(net), data.standardizer, seed});
    return {std::move(model), std::move(trace)};
}

PosthocFit fit_posthoc_run(const ExperimentConfig& cfg, std::shared_ptr<const BaseModel> base,
                           const TrainTrace& base_trace, const DatasetTable& data, std::uint64_t seed,
                           ConditioningMode mode, const ProbeConfig& probe_cfg) {
    ProbeConfig pc = probe_cfg;
    pc.seed = seed;
    TrainSchedule sched = cfg.posthoc.learner.schedule;
    if (cfg.posthoc.budget_fraction > 0.0) {
        sched.max_steps = std::max<std::uint64_t>(
            1, static_cast<std::uint64_t>(std::llround(cfg.posthoc.budget_fraction * static_cast<double>(base_trace.steps))));
    }
    const Probe probe = make_probe(data, pc, sched.batch_size);
    Rng rng = Rng(seed).split("posthoc/" + to_string(mode));
    return fit_posthoc(std::move(base), probe, cfg.posthoc.learner.shape, mode, cfg.posthoc.head, sched,
                       cfg.posthoc.learner.optimizer, rng);
}

std::vector<double> row_mean_variance(const Matrix& variance) {
    std::vector<double> out(variance.rows(), 0.0);
    for (std::size_t r = 0; r < variance.rows(); ++r) {
        const auto row = variance.row(r);
        out[r] = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
    }
    return out;
}

namespace {

MetricsReport gaussian_report(const Matrix& mean, const Matrix& variance, const Matrix& y) {
    std::vector<GaussianPrediction> preds;
    std::vector<double> sq_err;
    for (std::size_t i = 0; i < y.size(); ++i) {
        preds.push_back({mean.values()[i], variance.values()[i]});
        const double e = mean.values()[i] - y.values()[i];
        sq_err.push_back(e * e);
    }
    MetricsReport r;
    r.n = y.rows();
    r.rmse = rmse(mean.values(), y.values());
    r.nll = mean_nll(preds, y.values());
    r.ece_levels = default_ece_levels();
    r.ece = ece(preds, y.values(), r.ece_levels);
    r.euc = euc(sq_err, variance.values());
    r.timestamp = utc_timestamp();
    return r;
}

} // namespace

MetricsReport evaluate_posthoc(const PosthocModel& m, const DatasetTable& data, Split split) {
    const auto rows = data.indices(split);
    if (rows.empty()) throw DataError("evaluate: split has no rows");
    const Matrix x = data.features.gather_rows(rows);
    const Standardizer& s = data.standardizer;
    const Matrix y = s.destandardize_targets(data.targets.gather_rows(rows));
    const Matrix mean = s.destandardize_targets(m.base->predict(x));
    const HeadOutput head = predict_head(m, x);
    const Matrix variance = s.destandardize_variances(head.variance);

    MetricsReport r;
    if (m.head == HeadKind::gaussian) {
        r = gaussian_report(mean, variance, y);
    } else {
        std::vector<GenGaussianPrediction> preds;
        std::vector<double> sq_err;
        for (std::size_t i = 0; i < y.rows(); ++i) {
            for (std::size_t c = 0; c < y.cols(); ++c) {
                preds.push_back({mean(i, c), head.alpha(i, c) * s.targets[c].std, head.beta(i, c)});
                const double e = mean(i, c) - y(i, c);
                sq_err.push_back(e * e);
            }
        }
        r.n = y.rows();
        r.rmse = rmse(mean.values(), y.values());
        r.nll = mean_nll(preds, y.values());
        r.ece_levels = default_ece_levels();
        r.ece = ece(preds, y.values(), r.ece_levels);
        r.euc = euc(sq_err, variance.values());
        r.timestamp = utc_timestamp();
    }
    r.dataset = data.name;
    r.method = to_string(m.mode) + (m.head == HeadKind::gengauss ? "_gg" : "");
    return r;
}

MetricsReport evaluate_ensemble(const EnsembleModel& e, const DatasetTable& data, Split split) {
    const auto rows = data.indices(split);
    if (rows.empty()) throw DataError("evaluate: split has no rows");
    const Matrix x = data.features.gather_rows(rows);
    const Standardizer& s = data.standardizer;
    const Matrix y = s.destandardize_targets(data.targets.gather_rows(rows));
    const EnsemblePrediction p = ensemble_predict(e, x);
    MetricsReport r = gaussian_report(s.destandardize_targets(p.mean), s.destandardize_variances(p.variance), y);
    r.dataset = data.name;
    r.method = "ensemble";
    return r;
}

// ---------------------------------------------------------------------------
// Toy experiments

ToyRecovery run_toy_recovery(const ExperimentConfig& cfg, std::uint64_t seed,
                             const std::vector<ConditioningMode>& modes) {
    if (cfg.dataset.kind != "toy") throw ConfigError("toy recovery needs a toy dataset");
    const DatasetTable data = load_dataset(cfg, seed);
    const BaseRun base = train_base(cfg, data, seed);
    const auto rows = data.indices(Split::test);
    const Matrix x = data.features.gather_rows(rows);
    const Standardizer& s = data.standardizer;
    const Matrix y = s.destandardize_targets(data.targets.gather_rows(rows));
    const Matrix mean = s.destandardize_targets(base.model->predict(x));

    ToyRecovery out;
    out.seed = seed;
    out.base_rmse = rmse(mean.values(), y.values());
    std::vector<double> true_var;
    std::vector<GaussianPrediction> oracle;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double sg = data.true_sigma(rows[i], 0);
        true_var.push_back(sg * sg);
        oracle.push_back({data.true_mean(rows[i], 0), sg * sg});
    }
    out.oracle_nll = mean_nll(oracle, y.values());

    for (auto mode : modes) {
        const PosthocFit f = fit_posthoc_run(cfg, base.model, base.trace, data, seed, mode, cfg.probe);
        const Matrix v = s.destandardize_variances(predict_variance(f.model, x));
        std::vector<GaussianPrediction> preds;
        for (std::size_t i = 0; i < rows.size(); ++i) preds.push_back({mean(i, 0), v(i, 0)});
        out.corr[to_string(mode)] = pearson(v.values(), true_var);
        out.nll[to_string(mode)] = mean_nll(preds, y.values());
    }
    return out;
}

OodResult run_toy_ood(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.dataset.kind != "toy") throw ConfigError("toy OOD needs a toy dataset");
    if (cfg.ood.augmentations.empty()) throw ConfigError("ood.augmentations must not be empty");
    const DatasetTable data = load_dataset(cfg, seed);
    ToySpec spec = cfg.dataset.toy;
    spec.seed = seed;
    const DatasetTable ood = gen_toy_interval(spec, data, cfg.ood.lo, cfg.ood.hi, cfg.ood.n, splitmix64(seed ^ 0x00D));
    const BaseRun base = train_base(cfg, data, seed);

    const Matrix x_id = data.features.gather_rows(data.indices(Split::test));
    const Matrix x_train = data.features.gather_rows(data.indices(Split::train));

    ProbeConfig plain = cfg.probe;
    plain.augmentations.clear();
    ProbeConfig augmented = cfg.probe;
    augmented.augmentations = cfg.ood.augmentations;

    OodResult out;
    out.seed = seed;
    for (int arm = 0; arm < 2; ++arm) {
        const PosthocFit f =
            fit_posthoc_run(cfg, base.model, base.trace, data, seed, cfg.posthoc.mode, arm ? augmented : plain);
        const auto id_scores = row_mean_variance(predict_variance(f.model, x_id));
        const auto ood_scores = row_mean_variance(predict_variance(f.model, ood.features));
        const double a = auroc(id_scores, ood_scores);
        double lambda = 0.0;
        if (cfg.posthoc.mode != ConditioningMode::input_only)
            lambda = epistemic_diagnostics(f.model, x_train, ood.features).lambda_fit;
        if (arm == 0) {
            out.auroc_plain = a;
            out.roc_plain = roc_curve(id_scores, ood_scores);
            out.lambda_fit_plain = lambda;
        } else {
            out.auroc_augmented = a;
            out.roc_augmented = roc_curve(id_scores, ood_scores);
            out.lambda_fit = lambda;
            out.id_mean_variance = std::accumulate(id_scores.begin(), id_scores.end(), 0.0) / id_scores.size();
            out.ood_mean_variance = std::accumulate(ood_scores.begin(), ood_scores.end(), 0.0) / ood_scores.size();
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Perturbation sweep

std::vector<PerturbRow> run_perturb(const PosthocModel& m, const DatasetTable& data, const PerturbationSweep& sweep,
                                    std::uint64_t seed) {
    sweep.validate();
    const auto rows = data.indices(Split::test);
    if (rows.empty()) throw DataError("perturb: no test rows");
    const Matrix x = data.features.gather_rows(rows);
    const Standardizer& s = data.standardizer;
    const Matrix y = s.destandardize_targets(data.targets.gather_rows(rows));
    const Rng noise = Rng(seed).split("perturb");

    std::vector<double> sigmas{0.0};
    sigmas.insert(sigmas.end(), sweep.sigmas.begin(), sweep.sigmas.end());
    std::vector<PerturbRow> out;
    for (double sigma : sigmas) {
        // Every level reuses the same noise stream, so levels differ only in scale.
        Rng r = noise;
        const Matrix xs = perturb(x, sigma, sweep.clamp, r);
        auto mean_var = [&](const Matrix& v) {
            const auto per_row = row_mean_variance(s.destandardize_variances(v));
            return std::accumulate(per_row.begin(), per_row.end(), 0.0) / static_cast<double>(per_row.size());
        };
        PerturbRow row;
        row.sigma = sigma;
        row.mean_uncertainty = mean_var(predict_variance(m, xs));
        row.mean_uncertainty_ablation = m.mode == ConditioningMode::input_only
                                            ? row.mean_uncertainty
                                            : mean_var(predict_counterfactual(m, xs, x));
        row.rmse = rmse(s.destandardize_targets(m.base->predict(xs)).values(), y.values());
        out.push_back(row);
    }
    return out;
}

bool nearly_nondecreasing(std::span<const double> v, std::size_t allowed, double tolerance) {
    if (v.size() < 2) return true;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double range = *hi - *lo;
    std::size_t drops = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] >= v[i - 1]) continue;
        if (v[i - 1] - v[i] > tolerance * range) return false;
        if (++drops > allowed) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Cross-network counterfactuals

CrossnetResult run_crossnet(const ExperimentConfig& cfg, std::uint64_t seed) {
    const auto& augs = cfg.crossnet.augmentations;
    if (augs.size() < 2) throw ConfigError("crossnet.augmentations needs at least 2 entries");
    const DatasetTable data = load_dataset(cfg, seed);
    const BaseRun plain = train_base(cfg, data, seed);
    ProbeConfig probe = cfg.probe;
    probe.augmentations.clear();
    const PosthocFit g = fit_posthoc_run(cfg, plain.model, plain.trace, data, seed, ConditioningMode::hybrid, probe);

    const auto rows = data.indices(Split::test);
    const Matrix x = data.features.gather_rows(rows);
    const Standardizer& s = data.standardizer;
    const Matrix y = s.destandardize_targets(data.targets.gather_rows(rows));

    std::vector<Matrix> shifted;
    for (std::size_t a = 0; a < augs.size(); ++a) {
        AugmentationSpec test_aug = augs[a];
        test_aug.probability = 1.0;
        Matrix xa = x;
        Rng r = Rng(seed).split("crossnet/shift", a);
        apply_augmentation(xa, test_aug, r);
        shifted.push_back(std::move(xa));
    }

    CrossnetResult out;
    out.seed = seed;
    const std::size_t b_count = augs.size();
    out.auroc.assign(b_count, std::vector<double>(b_count, 0.0));
    out.rmse.assign(b_count, std::vector<double>(b_count, 0.0));
    std::vector<double> off_rmse, off_auroc;
    for (std::size_t b = 0; b < b_count; ++b) {
        out.labels.push_back(to_string(augs[b].kind));
        const BaseRun fb = train_base(cfg, data, seed, {augs[b]});
        // The auxiliary net reads f_b through the counterfactual path; its own base stays untouched.
        PosthocModel probe_model = g.model;
        probe_model.base = fb.model;
        const auto id_scores = row_mean_variance(predict_counterfactual(probe_model, x, x));
        for (std::size_t a = 0; a < b_count; ++a) {
            const auto ood_scores = row_mean_variance(predict_counterfactual(probe_model, x, shifted[a]));
            out.auroc[b][a] = auroc(id_scores, ood_scores);
            out.rmse[b][a] = rmse(s.destandardize_targets(fb.model->predict(shifted[a])).values(), y.values());
            if (a != b) {
                off_rmse.push_back(out.rmse[b][a]);
                off_auroc.push_back(out.auroc[b][a]);
            }
        }
    }
    out.offdiag_spearman = spearman(off_rmse, off_auroc);
    return out;
}

// ---------------------------------------------------------------------------
// UCI suite

std::vector<UciCell> run_uci_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    std::vector<UciCell> cells;
    DatasetTable data;
    try {
        data = load_dataset(cfg, seed);
    } catch (const std::exception& e) {
        for (const char* m : {"ensemble", "output_only", "input_only", "hybrid"}) cells.push_back({m, std::nullopt, e.what()});
        return cells;
    }

    try {
        Rng rng = Rng(seed).split("ensemble");
        const EnsembleFit ens = train_ensemble(data, cfg.ensemble_members, cfg.ensemble.shape, cfg.ensemble.schedule,
                                               cfg.ensemble.optimizer, rng);
        MetricsReport r = evaluate_ensemble(ens.model, data, Split::test);
        r.seed = seed;
        cells.push_back({"ensemble", r, {}});
    } catch (const std::exception& e) {
        cells.push_back({"ensemble", std::nullopt, e.what()});
    }

    std::optional<BaseRun> base;
    std::string base_error;
    try {
        base = train_base(cfg, data, seed);
    } catch (const std::exception& e) {
        base_error = e.what();
    }
    for (auto mode : {ConditioningMode::output_only, ConditioningMode::input_only, ConditioningMode::hybrid}) {
        if (!base) {
            cells.push_back({to_string(mode), std::nullopt, "base model: " + base_error});
            continue;
        }
        try {
            const PosthocFit f = fit_posthoc_run(cfg, base->model, base->trace, data, seed, mode, cfg.probe);
            MetricsReport r = evaluate_posthoc(f.model, data, Split::test);
            r.seed = seed;
            r.method = to_string(mode);
            cells.push_back({to_string(mode), r, {}});
        } catch (const std::exception& e) {
            cells.push_back({to_string(mode), std::nullopt, e.what()});
        }
    }
    return cells;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::string method_label(const std::string& m) {
    if (m == "ensemble") return "Ensemble";
    if (m == "output_only") return "Output-only";
    if (m == "input_only") return "Input-only";
    if (m == "hybrid") return "Hybrid";
    return m;
}

std::string fmt(double v, int prec = 2) {
    if (!std::isfinite(v)) return "n/a";
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(prec) << v;
    return ss.str();
}

} // namespace

std::vector<TableRow> aggregate_table(const std::string& dataset, const std::vector<std::vector<UciCell>>& per_seed) {
    std::vector<std::string> order;
    for (const auto& seed_cells : per_seed)
        for (const auto& c : seed_cells)
            if (std::find(order.begin(), order.end(), c.method) == order.end()) order.push_back(c.method);

    std::vector<TableRow> rows;
    for (const auto& method : order) {
        TableRow row;
        row.dataset = dataset;
        row.method = method;
        std::vector<double> nll, ece_v, rm;
        for (const auto& seed_cells : per_seed) {
            for (const auto& c : seed_cells) {
                if (c.method != method) continue;
                if (c.report) {
                    nll.push_back(*c.report->nll);
                    ece_v.push_back(*c.report->ece);
                    rm.push_back(*c.report->rmse);
                } else if (row.error.empty()) {
                    row.error = c.error;
                }
            }
        }
        row.runs = nll.size();
        std::tie(row.nll_mean, row.nll_std) = mean_std(nll);
        std::tie(row.ece_mean, row.ece_std) = mean_std(ece_v);
        row.rmse_mean = mean_std(rm).first;
        rows.push_back(row);
    }
    return rows;
}

std::string render_table(const std::vector<TableRow>& rows) {
    std::vector<std::string> datasets, methods;
    for (const auto& r : rows) {
        if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    }
    auto cell = [](double m, double s, std::size_t runs) {
        if (runs == 0) return std::string("failed");
        return fmt(m) + " ± " + fmt(s);
    };
    std::ostringstream out;
    out << std::left << std::setw(12) << "Dataset";
    for (const auto& m : methods) out << " | " << std::setw(13) << (method_label(m) + " NLL") << " | " << std::setw(13) << (method_label(m) + " ECE");
    out << '\n';
    for (const auto& d : datasets) {
        out << std::left << std::setw(12) << d;
        for (const auto& m : methods) {
            const auto it = std::find_if(rows.begin(), rows.end(), [&](const TableRow& r) { return r.dataset == d && r.method == m; });
            if (it == rows.end()) {
                out << " | " << std::setw(13) << "-" << " | " << std::setw(13) << "-";
                continue;
            }
            out << " | " << std::setw(13) << cell(it->nll_mean, it->nll_std, it->runs) << " | " << std::setw(13)
                << cell(it->ece_mean, it->ece_std, it->runs);
        }
        out << '\n';
    }
    for (const auto& r : rows)
        if (!r.error.empty()) out << "note: " << r.dataset << "/" << r.method << ": " << r.error << '\n';
    return out.str();
}

std::string table_csv(const std::vector<TableRow>& rows) {
    std::ostringstream out;
    out.precision(10);
    out << "dataset,method,runs,nll_mean,nll_std,ece_mean,ece_std,rmse_mean,error\n";
    for (const auto& r : rows) {
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out << r.dataset << ',' << r.method << ',' << r.runs << ',' << r.nll_mean << ',' << r.nll_std << ','
            << r.ece_mean << ',' << r.ece_std << ',' << r.rmse_mean << ',' << err << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Sweeps

std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg, std::uint64_t seed) {
    const DatasetTable data = load_dataset(cfg, seed);
    const BaseRun base = train_base(cfg, data, seed);

    std::vector<std::pair<std::string, ExperimentConfig>> cells;
    if (cfg.sweep.axis == "probe_fraction") {
        for (double f : cfg.sweep.probe_fractions) {
            ExperimentConfig c = cfg;
            c.probe.fraction = f;
            std::ostringstream label;
            label << "probe=" << f;
            cells.emplace_back(label.str(), c);
        }
    } else {
        for (const auto& [label, widths] : cfg.sweep.widths) {
            ExperimentConfig c = cfg;
            c.posthoc.learner.shape.hidden = widths;
            cells.emplace_back("width=" + label, c);
        }
    }

    std::vector<SweepCell> out;
    for (auto& [label, c] : cells) {
        // Equal update counts across cells: no epoch cap, no early stop.
        c.posthoc.budget_fraction = 0.0;
        c.posthoc.learner.schedule.max_epochs = 0;
        c.posthoc.learner.schedule.max_steps = cfg.sweep.update_budget;
        c.posthoc.learner.schedule.early_stop_patience = std::numeric_limits<std::size_t>::max();
        const PosthocFit f = fit_posthoc_run(c, base.model, base.trace, data, seed, c.posthoc.mode, c.probe);
        SweepCell cell;
        cell.label = label;
        cell.seed = seed;
        cell.updates = f.trace.steps;
        cell.report = evaluate_posthoc(f.model, data, Split::test);
        cell.report.seed = seed;
        cell.report.experiment = "sweep:" + label;
        out.push_back(cell);
    }
    return out;
}

std::string trace_csv(const TrainTrace& trace) {
    std::ostringstream out;
    out.precision(17);
    out << "evaluation,epoch,step,train_loss,val_loss,best\n";
    for (std::size_t i = 0; i < trace.evaluations.size(); ++i) {
        const auto& e = trace.evaluations[i];
        out << i << ',' << e.epoch << ',' << e.step << ',' << e.train_loss << ',' << e.val_loss << ','
            << (i == trace.best_evaluation ? 1 : 0) << '\n';
    }
    return out.str();
}

} // namespace uq
