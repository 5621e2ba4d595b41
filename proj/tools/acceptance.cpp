// Acceptance runner: one PASS/FAIL line per criterion.
//
//   uq_acceptance [--criterion N] [--configs DIR] [--tests PATH] [--report DIR]
//
// Exits 0 only if every selected criterion passes.

#include "uq/experiments.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>
#include <sys/wait.h>

using namespace uq;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string summary;
    json detail = json::object();
};

struct Env {
    fs::path configs;
    fs::path tests;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 3) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(precision);
    os << v;
    return os.str();
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

ExperimentConfig toy_config(const Env& env) { return load_experiment_config(env.configs / "toy.json"); }

Outcome unit_suite(const Env& env) {
    const auto t0 = Clock::now();
    const std::string cmd = env.tests.string() + " --minimal > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    const double secs = seconds_since(t0);
    const bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
    Outcome o;
    o.pass = ok && secs < 120.0;
    o.summary = std::string("unit/property suite ") + (ok ? "passed" : "FAILED") + " in " + fmt(secs, 1) + " s (limit 120 s)";
    o.detail = {{"exit_ok", ok}, {"seconds", secs}};
    return o;
}

Outcome toy_recovery(const Env& env) {
    const auto cfg = toy_config(env);
    const auto t0 = Clock::now();
    bool ok = true;
    std::string worst;
    Outcome o;
    for (auto seed : cfg.seeds) {
        const ToyRecovery r = run_toy_recovery(cfg, seed, {ConditioningMode::hybrid});
        const double corr = r.corr.at("hybrid");
        const double gap = r.nll.at("hybrid") - r.oracle_nll;
        ok = ok && corr >= 0.9 && gap <= 0.1;
        worst += " seed" + std::to_string(seed) + ":corr=" + fmt(corr) + ",gap=" + fmt(gap);
        o.detail["seeds"].push_back({{"seed", seed}, {"corr", corr}, {"nll", r.nll.at("hybrid")}, {"oracle_nll", r.oracle_nll}});
    }
    const double secs = seconds_since(t0);
    o.pass = ok && secs < 300.0;
    o.summary = "toy hybrid recovery (corr >= 0.9, NLL - oracle <= 0.1)" + worst + ", " + fmt(secs, 1) + " s";
    o.detail["seconds"] = secs;
    return o;
}

Outcome conditioning_ablation(const Env& env) {
    const auto cfg = toy_config(env);
    bool ok = true;
    std::string line;
    Outcome o;
    for (auto seed : cfg.seeds) {
        const ToyRecovery r =
            run_toy_recovery(cfg, seed, {ConditioningMode::input_only, ConditioningMode::output_only});
        const double diff = r.corr.at("input_only") - r.corr.at("output_only");
        ok = ok && diff >= 0.3;
        line += " seed" + std::to_string(seed) + ":" + fmt(r.corr.at("input_only")) + "-" + fmt(r.corr.at("output_only")) +
                "=" + fmt(diff);
        o.detail["seeds"].push_back(
            {{"seed", seed}, {"input_only", r.corr.at("input_only")}, {"output_only", r.corr.at("output_only")}});
    }
    o.pass = ok;
    o.summary = "input_only minus output_only correlation >= 0.3 in every seed;" + line;
    return o;
}

Outcome uci(const Env& env) {
    const auto t0 = Clock::now();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(env.configs))
        if (e.path().filename().string().rfind("uci_", 0) == 0 && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());

    Outcome o;
    std::size_t wins = 0, complete = 0;
    std::optional<TableRow> wine, boston;
    std::vector<TableRow> all;
    for (const auto& f : files) {
        const ExperimentConfig cfg = load_experiment_config(f);
        std::vector<std::vector<UciCell>> per_seed;
        for (auto seed : cfg.seeds) per_seed.push_back(run_uci_seed(cfg, seed));
        const std::string name = cfg.dataset.path.stem().string();
        const auto rows = aggregate_table(name, per_seed);
        all.insert(all.end(), rows.begin(), rows.end());
        const auto find = [&](const std::string& method) -> std::optional<TableRow> {
            for (const auto& r : rows)
                if (r.method == method && r.error.empty() && r.runs == cfg.seeds.size()) return r;
            return std::nullopt;
        };
        const auto ens = find("ensemble");
        const auto hyb = find("hybrid");
        if (ens && hyb) {
            ++complete;
            if (hyb->nll_mean < ens->nll_mean) ++wins;
        }
        if (name == "wine") wine = hyb;
        if (name == "boston") boston = hyb;
        std::cerr << render_table(rows);
    }
    const double secs = seconds_since(t0);
    const bool a = complete >= 5 && wins >= 4;
    const bool b = wine && wine->nll_mean <= 1.3 && wine->ece_mean <= 0.10;
    const bool c = boston && boston->nll_mean <= 3.0;
    o.pass = a && b && c && secs < 1800.0;
    o.summary = "UCI: (a) hybrid beats ensemble NLL on " + std::to_string(wins) + "/" + std::to_string(complete) +
                " datasets (need >= 4 of 5) " + (a ? "ok" : "FAIL") + "; (b) wine NLL " +
                (wine ? fmt(wine->nll_mean) : "n/a") + " ECE " + (wine ? fmt(wine->ece_mean) : "n/a") + " " +
                (b ? "ok" : "FAIL") + "; (c) boston NLL " + (boston ? fmt(boston->nll_mean) : "n/a") + " " +
                (c ? "ok" : "FAIL") + "; " + fmt(secs, 0) + " s (limit 1800 s)";
    for (const auto& r : all)
        o.detail["table"].push_back({{"dataset", r.dataset}, {"method", r.method}, {"runs", r.runs},
                                     {"nll_mean", r.nll_mean}, {"nll_std", r.nll_std}, {"ece_mean", r.ece_mean},
                                     {"ece_std", r.ece_std}, {"rmse_mean", r.rmse_mean}, {"error", r.error}});
    o.detail["table_text"] = render_table(all);
    o.detail["seconds"] = secs;
    return o;
}

std::vector<OodResult> ood_runs(const Env& env) {
    const auto cfg = toy_config(env);
    std::vector<OodResult> out;
    for (auto seed : cfg.seeds) out.push_back(run_toy_ood(cfg, seed));
    return out;
}

Outcome ood_augmentation(const Env& env) {
    const auto runs = ood_runs(env);
    std::vector<double> plain, aug;
    Outcome o;
    for (const auto& r : runs) {
        plain.push_back(r.auroc_plain);
        aug.push_back(r.auroc_augmented);
        o.detail["seeds"].push_back({{"seed", r.seed}, {"plain", r.auroc_plain}, {"augmented", r.auroc_augmented}});
    }
    const double gain = mean(aug) - mean(plain);
    o.pass = gain >= 0.10 && mean(aug) >= 0.85;
    o.summary = "toy OOD AUROC augmented " + fmt(mean(aug)) + " vs plain " + fmt(mean(plain)) + " (gain " + fmt(gain) +
                ", need >= 0.10 and augmented >= 0.85)";
    return o;
}

Outcome perturbation(const Env& env) {
    const auto cfg = toy_config(env);
    const std::size_t levels = cfg.perturb.sigmas.size();
    std::vector<double> curve(levels, 0.0), ablation(levels, 0.0);
    Outcome o;
    for (auto seed : cfg.seeds) {
        const DatasetTable data = load_dataset(cfg, seed);
        const BaseRun base = train_base(cfg, data, seed);
        const PosthocFit f = fit_posthoc_run(cfg, base.model, base.trace, data, seed, ConditioningMode::hybrid, cfg.probe);
        const auto rows = run_perturb(f.model, data, cfg.perturb, seed);
        json seed_rows = json::array();
        // rows[0] is the clean reference; the sweep levels follow.
        for (std::size_t i = 0; i < levels; ++i) {
            curve[i] += rows[i + 1].mean_uncertainty / static_cast<double>(cfg.seeds.size());
            ablation[i] += rows[i + 1].mean_uncertainty_ablation / static_cast<double>(cfg.seeds.size());
        }
        for (const auto& r : rows)
            seed_rows.push_back({{"sigma", r.sigma}, {"mean", r.mean_uncertainty}, {"ablation", r.mean_uncertainty_ablation},
                                 {"rmse", r.rmse}});
        o.detail["seeds"].push_back({{"seed", seed}, {"rows", seed_rows}});
    }
    const bool mono = nearly_nondecreasing(curve, 1, 0.02);
    const double rho = spearman(cfg.perturb.sigmas, ablation);
    o.pass = mono && rho >= 0.9;
    std::string c;
    for (double v : curve) c += (c.empty() ? "" : ",") + fmt(v, 4);
    o.summary = "perturbation: mean uncertainty [" + c + "] nondecreasing (<= 1 inversion of 2%) " +
                (mono ? "ok" : "FAIL") + "; ablation Spearman " + fmt(rho) + " (need >= 0.9)";
    o.detail["curve"] = curve;
    o.detail["ablation"] = ablation;
    return o;
}

Outcome crossnet(const Env& env) {
    const auto cfg = load_experiment_config(env.configs / "crossnet_concrete.json");
    std::size_t positive = 0;
    std::string line;
    Outcome o;
    for (auto seed : cfg.seeds) {
        const CrossnetResult r = run_crossnet(cfg, seed);
        if (r.offdiag_spearman > 0.0) ++positive;
        line += " seed" + std::to_string(seed) + ":" + fmt(r.offdiag_spearman);
        o.detail["seeds"].push_back({{"seed", seed}, {"labels", r.labels}, {"auroc", r.auroc}, {"rmse", r.rmse},
                                     {"spearman", r.offdiag_spearman}});
    }
    o.pass = positive >= 2;
    o.summary = "cross-network Spearman(RMSE, AUROC) positive in " + std::to_string(positive) + "/" +
                std::to_string(cfg.seeds.size()) + " seeds (need >= 2);" + line;
    return o;
}

Outcome epistemic(const Env& env) {
    const auto runs = ood_runs(env);
    bool ok = true;
    std::string line;
    Outcome o;
    for (const auto& r : runs) {
        ok = ok && r.lambda_fit > 0.0 && r.ood_mean_variance > r.id_mean_variance;
        line += " seed" + std::to_string(r.seed) + ":lambda=" + fmt(r.lambda_fit, 4) + ",ood=" + fmt(r.ood_mean_variance, 4) +
                ",id=" + fmt(r.id_mean_variance, 4);
        o.detail["seeds"].push_back({{"seed", r.seed}, {"lambda", r.lambda_fit}, {"ood_mean", r.ood_mean_variance},
                                     {"id_mean", r.id_mean_variance}});
    }
    o.pass = ok;
    o.summary = "epistemic slope > 0 and OOD mean variance > ID mean in every seed;" + line;
    return o;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    int only = 0;
    Env env{UQ_CONFIG_DIR, UQ_TESTS_PATH};
    std::string report_dir;
    app.add_option("--criterion", only, "Run a single criterion (1-8)")->check(CLI::Range(1, 8));
    app.add_option("--configs", env.configs, "Directory holding toy.json, uci_*.json and crossnet_concrete.json");
    app.add_option("--tests", env.tests, "Unit test executable");
    app.add_option("--report", report_dir, "Write criterion_N.json files here");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Outcome (*)(const Env&)> checks{unit_suite, toy_recovery, conditioning_ablation, uci,
                                                      ood_augmentation, perturbation, crossnet, epistemic};
    bool all = true;
    for (int i = 1; i <= 8; ++i) {
        if (only != 0 && i != only) continue;
        Outcome o;
        const auto t0 = Clock::now();
        try {
            o = checks[static_cast<std::size_t>(i - 1)](env);
        } catch (const std::exception& e) {
            o.pass = false;
            o.summary = std::string("error: ") + e.what();
        }
        all = all && o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i << ": " << o.summary << std::endl;
        if (!report_dir.empty()) {
            fs::create_directories(report_dir);
            o.detail["criterion"] = i;
            o.detail["pass"] = o.pass;
            o.detail["summary"] = o.summary;
            o.detail["wall_seconds"] = seconds_since(t0);
            write_json_file(fs::path(report_dir) / ("criterion_" + std::to_string(i) + ".json"), o.detail);
        }
    }
    return all ? 0 : 1;
}
