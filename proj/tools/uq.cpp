#include "uq/experiments.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace uq;

namespace {

struct CommonOptions {
    std::string config;
    std::string out;
    bool force = false;
    std::uint64_t seed_offset = 0;
    std::string base;
    std::string posthoc;
    std::string mode;
};

// Collects artifacts for one command and writes the manifest last.
class Run {
public:
    Run(std::string command, const ExperimentConfig& cfg, const CommonOptions& opts)
        : command_(std::move(command)), cfg_(cfg), started_(std::chrono::steady_clock::now()) {
        dir_ = opts.out.empty() ? cfg.output_dir / command_ : fs::path(opts.out);
        if (fs::exists(dir_ / "manifest.json") && !opts.force)
            throw ConfigError("output directory '" + dir_.string() + "' already holds a run; pass --force to overwrite");
        fs::create_directories(dir_);
        for (auto s : cfg.seeds) seeds_.push_back(s + opts.seed_offset);
    }

    const std::vector<std::uint64_t>& seeds() const { return seeds_; }
    const fs::path& dir() const { return dir_; }

    void write(const std::string& name, const std::string& contents) {
        write_file_atomic(dir_ / name, contents);
        artifacts_.push_back(name);
    }
    void write(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

    void finish() {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
        json m = {{"command", command_},
                  {"config_hash", config_hash(cfg_)},
                  {"config", cfg_.raw},
                  {"seeds", seeds_},
                  {"artifacts", artifacts_},
                  {"wall_clock_seconds", secs},
                  {"library_version", kLibraryVersion},
                  {"finished", utc_timestamp()}};
        write_json_file(dir_ / "manifest.json", m);
        std::cout << "wrote " << artifacts_.size() << " artifacts to " << dir_.string() << " (" << secs << " s)\n";
    }

private:
    std::string command_;
    const ExperimentConfig& cfg_;
    fs::path dir_;
    std::vector<std::uint64_t> seeds_;
    std::vector<std::string> artifacts_;
    std::chrono::steady_clock::time_point started_;
};

std::string seed_tag(std::uint64_t s) { return "seed" + std::to_string(s); }

MetricsReport tag(MetricsReport r, const std::string& experiment, std::uint64_t seed) {
    r.experiment = experiment;
    r.seed = seed;
    if (r.timestamp.empty()) r.timestamp = utc_timestamp();
    return r;
}

void write_report(Run& run, const std::string& name, const MetricsReport& r) {
    const json j = to_json(r);
    if (const auto err = validate_metrics_report(j); !err.empty()) throw std::runtime_error("invalid report: " + err);
    run.write(name, j);
    append_metrics_csv(run.dir() / "metrics.csv", r);
}

std::shared_ptr<const BaseModel> load_base(const fs::path& path) {
    return std::make_shared<const BaseModel>(base_model_from_json(read_json_file(path)));
}

fs::path base_path_for(const CommonOptions& o, std::uint64_t seed) {
    fs::path p(o.base);
    return fs::is_directory(p) ? p / ("base_" + seed_tag(seed) + ".json") : p;
}

fs::path posthoc_path_for(const CommonOptions& o, std::uint64_t seed, const std::string& mode) {
    fs::path p(o.posthoc);
    return fs::is_directory(p) ? p / ("posthoc_" + mode + "_" + seed_tag(seed) + ".json") : p;
}

BaseRun base_for(const CommonOptions& o, const ExperimentConfig& cfg, const DatasetTable& data, std::uint64_t seed) {
    if (o.base.empty()) return train_base(cfg, data, seed);
    return {load_base(base_path_for(o, seed)), {}};
}

std::vector<ConditioningMode> modes_for(const CommonOptions& o, const ExperimentConfig& cfg) {
    if (o.mode == "all")
        return {ConditioningMode::input_only, ConditioningMode::output_only, ConditioningMode::hybrid};
    if (!o.mode.empty()) return {parse_conditioning_mode(o.mode)};
    return {cfg.posthoc.mode};
}

// ---------------------------------------------------------------------------

void cmd_train_base(const ExperimentConfig& cfg, const CommonOptions& o) {
    Run run("train-base", cfg, o);
    for (auto seed : run.seeds()) {
        const DatasetTable data = load_dataset(cfg, seed);
        const BaseRun b = train_base(cfg, data, seed);
        run.write("base_" + seed_tag(seed) + ".json", to_json(*b.model));
        run.write("base_trace_" + seed_tag(seed) + ".csv", trace_csv(b.trace));
        run.write("dataset_" + seed_tag(seed) + ".json", dataset_manifest(data));
        std::cout << "seed " << seed << ": " << b.trace.steps << " updates, best val MSE " << b.trace.best_val_loss << '\n';
    }
    run.finish();
}

void cmd_fit_posthoc(const ExperimentConfig& cfg, const CommonOptions& o) {
    Run run("fit-posthoc", cfg, o);
    for (auto seed : run.seeds()) {
        const DatasetTable data = load_dataset(cfg, seed);
        const BaseRun b = base_for(o, cfg, data, seed);
        if (o.base.empty()) run.write("base_" + seed_tag(seed) + ".json", to_json(*b.model));
        for (auto mode : modes_for(o, cfg)) {
            const PosthocFit f = fit_posthoc_run(cfg, b.model, b.trace, data, seed, mode, cfg.probe);
            const std::string stem = to_string(mode) + "_" + seed_tag(seed);
            run.write("posthoc_" + stem + ".json", to_json(f.model));
            run.write("posthoc_trace_" + stem + ".csv", trace_csv(f.trace));
            const MetricsReport r = tag(evaluate_posthoc(f.model, data, Split::test), "fit-posthoc", seed);
            write_report(run, "report_" + stem + ".json", r);
            std::cout << stem << ": NLL " << *r.nll << " ECE " << *r.ece << " EUC " << *r.euc << " RMSE " << *r.rmse << '\n';
        }
    }
    run.finish();
}

void cmd_eval(const ExperimentConfig& cfg, const CommonOptions& o) {
    if (o.base.empty() || o.posthoc.empty()) throw ConfigError("eval needs --base and --posthoc");
    Run run("eval", cfg, o);
    for (auto seed : run.seeds()) {
        const DatasetTable data = load_dataset(cfg, seed);
        const auto base = load_base(base_path_for(o, seed));
        for (auto mode : modes_for(o, cfg)) {
            const PosthocModel m = posthoc_from_json(read_json_file(posthoc_path_for(o, seed, to_string(mode))), base);
            const MetricsReport r = tag(evaluate_posthoc(m, data, Split::test), "eval", seed);
            write_report(run, "report_" + to_string(m.mode) + "_" + seed_tag(seed) + ".json", r);
            std::cout << seed_tag(seed) << " " << to_string(m.mode) << ": NLL " << *r.nll << " ECE " << *r.ece << '\n';
        }
    }
    run.finish();
}

std::string roc_csv(const std::vector<RocPoint>& pts) {
    std::ostringstream out;
    out.precision(10);
    out << "fpr,tpr\n";
    for (const auto& p : pts) out << p.fpr << ',' << p.tpr << '\n';
    return out.str();
}

void cmd_ood(const ExperimentConfig& cfg, const CommonOptions& o) {
    Run run("ood", cfg, o);
    json summary = json::array();
    for (auto seed : run.seeds()) {
        const OodResult r = run_toy_ood(cfg, seed);
        run.write("roc_plain_" + seed_tag(seed) + ".csv", roc_csv(r.roc_plain));
        run.write("roc_augmented_" + seed_tag(seed) + ".csv", roc_csv(r.roc_augmented));
        summary.push_back({{"seed", seed},
                           {"auroc_plain", r.auroc_plain},
                           {"auroc_augmented", r.auroc_augmented},
                           {"auroc_gain", r.auroc_augmented - r.auroc_plain},
                           {"id_mean_variance", r.id_mean_variance},
                           {"ood_mean_variance", r.ood_mean_variance},
                           {"lambda_fit", r.lambda_fit},
                           {"lambda_fit_plain", r.lambda_fit_plain}});
        std::cout << seed_tag(seed) << ": AUROC plain " << r.auroc_plain << " augmented " << r.auroc_augmented
                  << " lambda " << r.lambda_fit << '\n';
    }
    run.write("ood_report.json", json{{"experiment", "ood"}, {"interval", {cfg.ood.lo, cfg.ood.hi}}, {"runs", summary}});
    run.finish();
}

void cmd_perturb(const ExperimentConfig& cfg, const CommonOptions& o) {
    Run run("perturb", cfg, o);
    std::ostringstream csv;
    csv.precision(10);
    csv << "seed,sigma,mean_uncertainty,mean_uncertainty_ablation,rmse,trend_ok,ablation_spearman\n";
    for (auto seed : run.seeds()) {
        const DatasetTable data = load_dataset(cfg, seed);
        const PosthocModel model = [&] {
            if (!o.posthoc.empty()) {
                if (o.base.empty()) throw ConfigError("perturb with --posthoc also needs --base");
                return posthoc_from_json(read_json_file(posthoc_path_for(o, seed, to_string(cfg.posthoc.mode))),
                                         load_base(base_path_for(o, seed)));
            }
            const BaseRun b = base_for(o, cfg, data, seed);
            return fit_posthoc_run(cfg, b.model, b.trace, data, seed, cfg.posthoc.mode, cfg.probe).model;
        }();
        const auto rows = run_perturb(model, data, cfg.perturb, seed);
        std::vector<double> full, ablation, sig;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            full.push_back(rows[i].mean_uncertainty);
            ablation.push_back(rows[i].mean_uncertainty_ablation);
            sig.push_back(rows[i].sigma);
        }
        const bool ok = nearly_nondecreasing(full, 1, 0.02);
        const double rho = spearman(sig, ablation);
        for (const auto& r : rows)
            csv << seed << ',' << r.sigma << ',' << r.mean_uncertainty << ',' << r.mean_uncertainty_ablation << ','
                << r.rmse << ',' << (ok ? 1 : 0) << ',' << rho << '\n';
        std::cout << seed_tag(seed) << ": trend " << (ok ? "nondecreasing" : "violated") << ", ablation spearman " << rho << '\n';
    }
    run.write("perturb.csv", csv.str());
    run.finish();
}

void cmd_crossnet(const ExperimentConfig& cfg, const CommonOptions& o) {
    Run run("crossnet", cfg, o);
    std::ostringstream matrix, scatter;
    matrix.precision(10);
    scatter.precision(10);
    matrix << "seed,base,shift,auroc,rmse\n";
    scatter << "seed,base,shift,rmse,auroc,diagonal\n";
    json summary = json::array();
    for (auto seed : run.seeds()) {
        const CrossnetResult r = run_crossnet(cfg, seed);
        for (std::size_t b = 0; b < r.labels.size(); ++b) {
            for (std::size_t a = 0; a < r.labels.size(); ++a) {
                matrix << seed << ',' << r.labels[b] << ',' << r.labels[a] << ',' << r.auroc[b][a] << ',' << r.rmse[b][a] << '\n';
                scatter << seed << ',' << r.labels[b] << ',' << r.labels[a] << ',' << r.rmse[b][a] << ',' << r.auroc[b][a]
                        << ',' << (a == b ? 1 : 0) << '\n';
            }
        }
        summary.push_back({{"seed", seed}, {"labels", r.labels}, {"auroc", r.auroc}, {"rmse", r.rmse},
                           {"offdiag_spearman", r.offdiag_spearman}});
        std::cout << seed_tag(seed) << ": off-diagonal spearman(RMSE, AUROC) " << r.offdiag_spearman << '\n';
    }
    run.write("crossnet_matrix.csv", matrix.str());
    run.write("crossnet_scatter.csv", scatter.str());
    run.write("crossnet_report.json", json{{"experiment", "crossnet"}, {"runs", summary}});
    run.finish();
}

void cmd_uci_suite(const fs::path& config_dir, const CommonOptions& o) {
    std::vector<fs::path> configs;
    if (fs::is_directory(config_dir)) {
        for (const auto& e : fs::directory_iterator(config_dir))
            if (e.path().extension() == ".json" && e.path().stem().string().rfind("uci_", 0) == 0) configs.push_back(e.path());
    } else {
        configs.push_back(config_dir);
    }
    std::sort(configs.begin(), configs.end());
    if (configs.empty()) throw ConfigError("no uci_*.json configs in '" + config_dir.string() + "'");

    // The suite manifest is keyed by the concatenated dataset configs.
    json suite = {{"name", "uci-suite"}, {"configs", json::array()}};
    std::vector<ExperimentConfig> parsed;
    for (const auto& p : configs) {
        parsed.push_back(load_experiment_config(p));
        suite["configs"].push_back(parsed.back().raw);
    }
    ExperimentConfig suite_cfg = parsed.front();
    suite_cfg.raw = suite;
    suite_cfg.seeds = {};
    Run run("uci-suite", suite_cfg, o);

    std::vector<TableRow> table;
    for (const auto& cfg : parsed) {
        std::vector<std::vector<UciCell>> per_seed;
        for (auto s : cfg.seeds) {
            const std::uint64_t seed = s + o.seed_offset;
            per_seed.push_back(run_uci_seed(cfg, seed));
            for (const auto& c : per_seed.back()) {
                if (c.report) {
                    const MetricsReport r = tag(*c.report, "uci-suite", seed);
                    write_report(run, "report_" + cfg.name + "_" + c.method + "_" + seed_tag(seed) + ".json", r);
                }
            }
            std::cout << cfg.name << " " << seed_tag(seed) << " done\n";
        }
        const auto rows = aggregate_table(cfg.name, per_seed);
        table.insert(table.end(), rows.begin(), rows.end());
    }
    const std::string text = render_table(table);
    std::cout << text;
    run.write("table.txt", text);
    run.write("table.csv", table_csv(table));
    run.finish();
}

void cmd_sweep(const ExperimentConfig& cfg, const CommonOptions& o, const std::string& axis) {
    ExperimentConfig c = cfg;
    if (!axis.empty()) c.sweep.axis = axis;
    Run run("sweep", c, o);
    json summary = json::array();
    for (auto seed : run.seeds()) {
        for (const auto& cell : run_sweep(c, seed)) {
            std::string stem = cell.label;
            std::replace(stem.begin(), stem.end(), '=', '_');
            write_report(run, "report_" + stem + "_" + seed_tag(seed) + ".json", cell.report);
            summary.push_back({{"cell", cell.label}, {"seed", seed}, {"updates", cell.updates}, {"report", to_json(cell.report)}});
            std::cout << seed_tag(seed) << " " << cell.label << ": " << cell.updates << " updates, NLL " << *cell.report.nll << '\n';
        }
    }
    run.write("sweep_summary.json", json{{"axis", c.sweep.axis}, {"update_budget", c.sweep.update_budget}, {"cells", summary}});
    run.finish();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Post-hoc uncertainty estimation experiments"};
    app.require_subcommand(0, 1);
    bool print_schema = false;
    app.add_flag("--print-schema", print_schema, "Print the experiment config JSON schema and exit");

    CommonOptions o;
    std::string sweep_axis;
    auto add_common = [&](CLI::App* sub, bool needs_config = true) {
        auto* c = sub->add_option("--config", o.config, "Experiment config (JSON)");
        if (needs_config) c->required();
        sub->add_option("--out", o.out, "Output directory");
        sub->add_flag("--force", o.force, "Overwrite an existing run in the output directory");
        sub->add_option("--seed-offset", o.seed_offset, "Added to every configured seed");
    };

    auto* train_base_cmd = app.add_subcommand("train-base", "Train MSE base models, one per seed");
    add_common(train_base_cmd);
    auto* fit_cmd = app.add_subcommand("fit-posthoc", "Fit auxiliary variance networks and evaluate them");
    add_common(fit_cmd);
    fit_cmd->add_option("--base", o.base, "Base checkpoint file or train-base output directory");
    fit_cmd->add_option("--mode", o.mode, "input_only | output_only | hybrid | all (default: config)");
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate saved post-hoc checkpoints on the test split");
    add_common(eval_cmd);
    eval_cmd->add_option("--base", o.base, "Base checkpoint file or directory")->required();
    eval_cmd->add_option("--posthoc", o.posthoc, "Post-hoc checkpoint file or directory")->required();
    eval_cmd->add_option("--mode", o.mode, "Mode of the checkpoints to load");
    auto* ood_cmd = app.add_subcommand("ood", "Toy shifted-interval OOD detection, plain vs augmented probe");
    add_common(ood_cmd);
    auto* perturb_cmd = app.add_subcommand("perturb", "Input perturbation sweep with counterfactual ablation");
    add_common(perturb_cmd);
    perturb_cmd->add_option("--base", o.base, "Base checkpoint file or directory");
    perturb_cmd->add_option("--posthoc", o.posthoc, "Post-hoc checkpoint file or directory");
    auto* crossnet_cmd = app.add_subcommand("crossnet", "Augmented base models against augmented test sets");
    add_common(crossnet_cmd);
    auto* uci_cmd = app.add_subcommand("uci-suite", "Ensemble and post-hoc methods over every uci_*.json config");
    add_common(uci_cmd);
    auto* sweep_cmd = app.add_subcommand("sweep", "Probe-fraction or model-width sweep at a fixed update budget");
    add_common(sweep_cmd);
    sweep_cmd->add_option("--axis", sweep_axis, "probe_fraction | model_width (default: config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (print_schema) {
        std::cout << experiment_config_schema().dump(2) << '\n';
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return 2;
    }

    try {
        auto* sub = app.get_subcommands().front();
        if (sub == uci_cmd) {
            cmd_uci_suite(o.config, o);
            return 0;
        }
        const ExperimentConfig cfg = load_experiment_config(o.config);
        if (sub == train_base_cmd) cmd_train_base(cfg, o);
        else if (sub == fit_cmd) cmd_fit_posthoc(cfg, o);
        else if (sub == eval_cmd) cmd_eval(cfg, o);
        else if (sub == ood_cmd) cmd_ood(cfg, o);
        else if (sub == perturb_cmd) cmd_perturb(cfg, o);
        else if (sub == crossnet_cmd) cmd_crossnet(cfg, o);
        else if (sub == sweep_cmd) cmd_sweep(cfg, o, sweep_axis);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
