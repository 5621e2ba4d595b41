#include "uq/metrics.hpp"
#include "uq/numerics.hpp"

#include <doctest.h>

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

using namespace uq;

namespace {

double brute_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
    double s = 0.0;
    for (double o : ood)
        for (double i : id) s += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
    return s / (id.size() * ood.size());
}

std::vector<double> brute_ranks(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double less = 0.0, equal = 0.0;
        for (double w : v) {
            less += w < v[i];
            equal += w == v[i];
        }
        r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
}

double brute_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = a.size();
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i] / n;
        mb += b[i] / n;
    }
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// Rounded draws so ties are common.
std::vector<double> draws(std::size_t n, Rng& rng, double shift = 0.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = std::round(4.0 * (rng.normal() + shift)) / 4.0;
    return v;
}

} // namespace

TEST_CASE("rmse") {
    const std::vector<double> t{1.0, 2.0, 3.0};
    CHECK(rmse(t, t) == 0.0);
    CHECK(rmse(std::vector<double>{1.0, -1.0}, std::vector<double>{0.0, 0.0}) == doctest::Approx(1.0));
    const std::vector<double> p{1.5, 1.0, 4.0};
    std::vector<double> ps, ts;
    for (std::size_t i = 0; i < 3; ++i) {
        ps.push_back(-3.0 * p[i]);
        ts.push_back(-3.0 * t[i]);
    }
    CHECK(rmse(ps, ts) == doctest::Approx(3.0 * rmse(p, t)).epsilon(1e-14));
    CHECK_THROWS(rmse(p, std::vector<double>{1.0}));
}

TEST_CASE("mean nll") {
    const std::vector<double> y{0.3, -1.0, 2.0};
    std::vector<GaussianPrediction> exact;
    for (double v : y) exact.push_back({v, 1.0});
    CHECK(mean_nll(exact, y) == doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));

    Rng rng(2);
    std::vector<GaussianPrediction> preds;
    std::vector<double> targets;
    double oracle = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double mu = rng.normal(), s = std::exp(rng.normal(0.0, 0.5)), t = rng.normal(mu, 2.0 * s);
        preds.push_back({mu, s * s});
        targets.push_back(t);
        oracle -= std::log(boost::math::pdf(boost::math::normal_distribution<double>(mu, s), t)) / 100.0;
    }
    CHECK(std::fabs(mean_nll(preds, targets) - oracle) <= 1e-10);

    const std::vector<GaussianPrediction> two{{0.0, 1.0}, {0.0, 4.0}};
    const std::vector<double> ty{1.0, 1.0};
    CHECK(mean_nll(two, ty) == doctest::Approx(0.5 * (gauss_nll(two[0], 1.0) + gauss_nll(two[1], 1.0))).epsilon(1e-15));
}

TEST_CASE("ece") {
    const std::vector<double> single{0.6};
    const std::vector<double> half{0.5};
    CHECK(ece_from_pit(single, half) == doctest::Approx(0.5));

    const auto levels = default_ece_levels();
    REQUIRE(levels.size() == 19);
    CHECK(levels.front() == doctest::Approx(0.05));
    CHECK(levels.back() == doctest::Approx(0.95));

    // PIT values one per interval between grid points: exact calibration.
    std::vector<double> pit;
    for (int i = 0; i < 20; ++i) pit.push_back(0.025 + 0.05 * i);
    CHECK(ece_from_pit(pit, levels) == doctest::Approx(0.0).epsilon(1e-12));

    Rng rng(3);
    std::vector<GaussianPrediction> preds;
    std::vector<double> y;
    for (int i = 0; i < 10000; ++i) {
        const double mu = rng.normal(), s2 = std::exp(rng.normal());
        preds.push_back({mu, s2});
        y.push_back(rng.normal(mu, std::sqrt(s2)));
    }
    CHECK(ece(preds, y, levels) < 0.02);

    // overconfident predictions are miscalibrated
    std::vector<GaussianPrediction> narrow = preds;
    for (auto& p : narrow) p.sigma2 *= 0.1;
    CHECK(ece(narrow, y, levels) > 0.1);

    // affine change of units applied to targets and distributions leaves ECE unchanged
    std::vector<GaussianPrediction> scaled;
    std::vector<double> ys;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        scaled.push_back({5.0 + 3.0 * preds[i].mu, 9.0 * preds[i].sigma2});
        ys.push_back(5.0 + 3.0 * y[i]);
    }
    CHECK(ece(scaled, ys, levels) == doctest::Approx(ece(preds, y, levels)).epsilon(1e-12));

    std::vector<GenGaussianPrediction> gg;
    for (const auto& p : preds) gg.push_back({p.mu, std::sqrt(2.0 * p.sigma2), 2.0});
    CHECK(ece(gg, y, levels) == doctest::Approx(ece(preds, y, levels)).epsilon(1e-12));

    CHECK_THROWS(ece_from_pit(std::vector<double>{}, levels));
}

TEST_CASE("spearman and euc") {
    const std::vector<double> e{1.0, 2.0, 3.0};
    CHECK(euc(e, e) == doctest::Approx(1.0));
    CHECK(euc(e, std::vector<double>{3.0, 1.0, 2.0}) == doctest::Approx(-0.5));
    CHECK(euc(e, std::vector<double>{2.0, 2.0, 2.0}) == 0.0);
    CHECK(average_ranks(std::vector<double>{5.0, 1.0, 5.0, 3.0}) == std::vector<double>{3.5, 1.0, 3.5, 2.0});

    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 5 + trial * 6;
        const auto a = draws(n, rng);
        const auto b = draws(n, rng);
        CHECK(average_ranks(a) == brute_ranks(a));
        const auto ra = brute_ranks(a), rb = brute_ranks(b);
        CHECK(spearman(a, b) == doctest::Approx(brute_pearson(ra, rb)).epsilon(1e-12));
        CHECK(pearson(a, b) == doctest::Approx(brute_pearson(a, b)).epsilon(1e-12));
        // invariance under strictly monotone maps of either side
        std::vector<double> ea, lb;
        for (double v : a) ea.push_back(std::exp(v));
        for (double v : b) lb.push_back(-1.0 / (10.0 + v));
        CHECK(euc(ea, lb) == doctest::Approx(euc(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("auroc") {
    CHECK(auroc(std::vector<double>{0.1, 0.2}, std::vector<double>{0.5, 0.9}) == 1.0);
    CHECK(auroc(std::vector<double>{0.1, 0.3}, std::vector<double>{0.2, 0.4}) == doctest::Approx(0.75));
    CHECK(auroc(std::vector<double>{1.0, 1.0}, std::vector<double>{1.0}) == 0.5);

    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const auto id = draws(10 + trial * 6, rng);
        const auto ood = draws(7 + trial * 5, rng, 0.5);
        CHECK(auroc(id, ood) == brute_auroc(id, ood));
        CHECK(auroc(id, ood) + auroc(ood, id) == 1.0);
    }

    std::vector<double> a(20000), b(20000);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    CHECK(std::fabs(auroc(a, b) - 0.5) <= 0.02);
    CHECK_THROWS(auroc(std::vector<double>{}, b));
}

TEST_CASE("roc curve") {
    const std::vector<double> id{0.1, 0.3, 0.3}, ood{0.3, 0.4};
    const auto roc = roc_curve(id, ood);
    REQUIRE(roc.size() >= 2);
    CHECK(roc.front().fpr == 0.0);
    CHECK(roc.front().tpr == 0.0);
    CHECK(roc.back().fpr == 1.0);
    CHECK(roc.back().tpr == 1.0);
    double area = 0.0;
    for (std::size_t i = 1; i < roc.size(); ++i) {
        CHECK(roc[i].fpr >= roc[i - 1].fpr);
        CHECK(roc[i].tpr >= roc[i - 1].tpr);
        area += (roc[i].fpr - roc[i - 1].fpr) * 0.5 * (roc[i].tpr + roc[i - 1].tpr);
    }
    CHECK(area == doctest::Approx(auroc(id, ood)).epsilon(1e-12));
}

TEST_CASE("metrics report serialization") {
    MetricsReport r;
    r.rmse = 1.5;
    r.nll = 2.0;
    r.ece = 0.05;
    r.n = 10;
    r.experiment = "e";
    r.dataset = "d";
    r.method = "hybrid";
    r.seed = 3;
    r.timestamp = utc_timestamp();
    r.ece_levels = default_ece_levels();
    const auto j = to_json(r);
    CHECK(validate_metrics_report(j).empty());
    const MetricsReport back = metrics_report_from_json(j);
    CHECK(back.rmse == r.rmse);
    CHECK(back.nll == r.nll);
    CHECK_FALSE(back.auroc.has_value());
    CHECK(back.method == "hybrid");

    auto broken = j;
    broken["ece"] = 3.0;
    CHECK_FALSE(validate_metrics_report(broken).empty());
    broken = j;
    broken.erase("seed");
    CHECK_FALSE(validate_metrics_report(broken).empty());
    CHECK(metrics_report_schema().contains("properties"));

    const auto path = std::filesystem::temp_directory_path() / "uq_test_metrics.csv";
    std::filesystem::remove(path);
    append_metrics_csv(path, r);
    append_metrics_csv(path, r);
    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 3);
}
