#include "uq/metrics.hpp"

#include "uq/numerics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>
#include <sstream>

namespace uq {

namespace {

void same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw ShapeError(std::string(what) + ": length mismatch");
    if (a == 0) throw DomainError(std::string(what) + ": empty input");
}

} // namespace

double rmse(std::span<const double> pred_means, std::span<const double> targets) {
    same_size(pred_means.size(), targets.size(), "rmse");
    double ss = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) ss += (pred_means[i] - targets[i]) * (pred_means[i] - targets[i]);
    return std::sqrt(ss / static_cast<double>(targets.size()));
}

double mean_nll(std::span<const GaussianPrediction> preds, std::span<const double> targets) {
    same_size(preds.size(), targets.size(), "mean_nll");
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) s += gauss_nll(preds[i], targets[i]);
    return s / static_cast<double>(preds.size());
}

double mean_nll(std::span<const GenGaussianPrediction> preds, std::span<const double> targets) {
    same_size(preds.size(), targets.size(), "mean_nll");
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) s += gengauss_nll(preds[i], targets[i]);
    return s / static_cast<double>(preds.size());
}

std::vector<double> default_ece_levels() {
    std::vector<double> levels;
    for (int j = 1; j <= 19; ++j) levels.push_back(0.05 * j);
    return levels;
}

double ece_from_pit(std::span<const double> pit, std::span<const double> levels) {
    if (pit.empty() || levels.empty()) throw DomainError("ece: empty input");
    std::vector<double> sorted(pit.begin(), pit.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    double gap = 0.0;
    for (double p : levels) {
        const auto covered = std::upper_bound(sorted.begin(), sorted.end(), p) - sorted.begin();
        gap += std::fabs(p - static_cast<double>(covered) / n);
    }
    return gap / static_cast<double>(levels.size());
}

double ece(std::span<const GaussianPrediction> preds, std::span<const double> targets,
           std::span<const double> levels) {
    same_size(preds.size(), targets.size(), "ece");
    std::vector<double> pit(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) pit[i] = gauss_cdf(preds[i], targets[i]);
    return ece_from_pit(pit, levels);
}

double ece(std::span<const GenGaussianPrediction> preds, std::span<const double> targets,
           std::span<const double> levels) {
    same_size(preds.size(), targets.size(), "ece");
    std::vector<double> pit(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) pit[i] = gengauss_cdf(preds[i], targets[i]);
    return ece_from_pit(pit, levels);
}

std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    same_size(a.size(), b.size(), "pearson");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double spearman(std::span<const double> a, std::span<const double> b) {
    same_size(a.size(), b.size(), "spearman");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    return pearson(ra, rb);
}

double euc(std::span<const double> errors, std::span<const double> uncertainties) {
    return spearman(errors, uncertainties);
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    if (id_scores.empty() || ood_scores.empty()) throw DomainError("auroc: empty score set");
    std::vector<double> all(id_scores.begin(), id_scores.end());
    all.insert(all.end(), ood_scores.begin(), ood_scores.end());
    const auto ranks = average_ranks(all);
    double ood_rank_sum = 0.0;
    for (std::size_t i = id_scores.size(); i < all.size(); ++i) ood_rank_sum += ranks[i];
    const double n_ood = static_cast<double>(ood_scores.size());
    const double u = ood_rank_sum - n_ood * (n_ood + 1.0) / 2.0;
    return u / (n_ood * static_cast<double>(id_scores.size()));
}

std::vector<RocPoint> roc_curve(std::span<const double> id_scores, std::span<const double> ood_scores) {
    if (id_scores.empty() || ood_scores.empty()) throw DomainError("roc_curve: empty score set");
    struct Scored {
        double score;
        bool ood;
    };
    std::vector<Scored> all;
    for (double s : id_scores) all.push_back({s, false});
    for (double s : ood_scores) all.push_back({s, true});
    std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
    const double n_id = static_cast<double>(id_scores.size());
    const double n_ood = static_cast<double>(ood_scores.size());
    std::vector<RocPoint> pts{{0.0, 0.0}};
    double fp = 0.0, tp = 0.0;
    for (std::size_t i = 0; i < all.size(); ++i) {
        (all[i].ood ? tp : fp) += 1.0;
        if (i + 1 == all.size() || all[i + 1].score != all[i].score) pts.push_back({fp / n_id, tp / n_ood});
    }
    return pts;
}

namespace {

void put_optional(nlohmann::json& j, const char* key, const std::optional<double>& v) {
    j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> get_optional(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

} // namespace

nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    put_optional(j, "rmse", r.rmse);
    put_optional(j, "nll", r.nll);
    put_optional(j, "ece", r.ece);
    put_optional(j, "euc", r.euc);
    put_optional(j, "auroc", r.auroc);
    j["n"] = r.n;
    j["experiment"] = r.experiment;
    j["dataset"] = r.dataset;
    j["method"] = r.method;
    j["seed"] = r.seed;
    j["timestamp"] = r.timestamp;
    j["ece_levels"] = r.ece_levels;
    return j;
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.rmse = get_optional(j, "rmse");
    r.nll = get_optional(j, "nll");
    r.ece = get_optional(j, "ece");
    r.euc = get_optional(j, "euc");
    r.auroc = get_optional(j, "auroc");
    r.n = j.at("n").get<std::size_t>();
    r.experiment = j.value("experiment", "");
    r.dataset = j.value("dataset", "");
    r.method = j.value("method", "");
    r.seed = j.value("seed", std::uint64_t{0});
    r.timestamp = j.value("timestamp", "");
    r.ece_levels = j.value("ece_levels", std::vector<double>{});
    return r;
}

nlohmann::json metrics_report_schema() {
    using nlohmann::json;
    const json opt_num = {{"type", json::array({"number", "null"})}};
    return {
        {"$schema", "https://json-schema.org/draft/2020-12/schema"},
        {"title", "MetricsReport"},
        {"type", "object"},
        {"required", {"rmse", "nll", "ece", "euc", "auroc", "n", "experiment", "seed", "timestamp"}},
        {"properties",
         {{"rmse", opt_num},
          {"nll", opt_num},
          {"ece", {{"type", json::array({"number", "null"})}, {"minimum", 0}, {"maximum", 1}}},
          {"euc", {{"type", json::array({"number", "null"})}, {"minimum", -1}, {"maximum", 1}}},
          {"auroc", {{"type", json::array({"number", "null"})}, {"minimum", 0}, {"maximum", 1}}},
          {"n", {{"type", "integer"}, {"minimum", 0}}},
          {"experiment", {{"type", "string"}}},
          {"dataset", {{"type", "string"}}},
          {"method", {{"type", "string"}}},
          {"seed", {{"type", "integer"}}},
          {"timestamp", {{"type", "string"}}},
          {"ece_levels", {{"type", "array"}, {"items", {{"type", "number"}}}}}}},
    };
}

std::string validate_metrics_report(const nlohmann::json& j) {
    if (!j.is_object()) return "report is not an object";
    const auto schema = metrics_report_schema();
    for (const auto& key : schema.at("required")) {
        if (!j.contains(key.get<std::string>())) return "missing key '" + key.get<std::string>() + "'";
    }
    auto in_range = [&](const char* key, double lo, double hi) -> std::string {
        const auto& v = j.at(key);
        if (v.is_null()) return {};
        if (!v.is_number()) return std::string(key) + " is not a number";
        const double d = v.get<double>();
        if (d < lo || d > hi) return std::string(key) + " out of range";
        return {};
    };
    for (const char* key : {"rmse", "nll"})
        if (!j.at(key).is_null() && !j.at(key).is_number()) return std::string(key) + " is not a number";
    if (auto e = in_range("ece", 0.0, 1.0); !e.empty()) return e;
    if (auto e = in_range("euc", -1.0, 1.0); !e.empty()) return e;
    if (auto e = in_range("auroc", 0.0, 1.0); !e.empty()) return e;
    if (!j.at("n").is_number_integer()) return "n is not an integer";
    if (!j.at("experiment").is_string() || !j.at("timestamp").is_string()) return "experiment/timestamp not strings";
    return {};
}

void append_metrics_csv(const std::filesystem::path& path, const MetricsReport& r) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for appending");
    auto cell = [](const std::optional<double>& v) {
        if (!v) return std::string();
        std::ostringstream ss;
        ss.precision(17);
        ss << *v;
        return ss.str();
    };
    if (fresh) out << "experiment,dataset,method,seed,n,rmse,nll,ece,euc,auroc,timestamp\n";
    out << r.experiment << ',' << r.dataset << ',' << r.method << ',' << r.seed << ',' << r.n << ','
        << cell(r.rmse) << ',' << cell(r.nll) << ',' << cell(r.ece) << ',' << cell(r.euc) << ','
        << cell(r.auroc) << ',' << r.timestamp << '\n';
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace uq
