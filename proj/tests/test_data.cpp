#include "uq/data.hpp"
#include "uq/io.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace uq;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& contents) {
    const fs::path dir = fs::temp_directory_path() / "uq_test_data";
    fs::create_directories(dir);
    const fs::path p = dir / name;
    std::ofstream(p) << contents;
    return p;
}

std::string random_csv(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::string s = "a,b,c,y\n";
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.normal(3.0, 2.0), b = rng.uniform(-1.0, 5.0), c = rng.normal();
        s += std::to_string(a) + "," + std::to_string(b) + "," + std::to_string(c) + "," +
             std::to_string(2.0 * a - b + 0.1 * rng.normal() + 10.0) + "\n";
    }
    return s;
}

} // namespace

TEST_CASE("three-row csv standardizes with the population std") {
    const auto p = write_temp("three.csv", "x,y\n1,10\n2,20\n3,30\n");
    const DatasetTable t = load_csv(p, {"y"}, 0, SplitFractions{1.0, 0.0, 0.0});
    REQUIRE(t.rows() == 3);
    std::multiset<double> got;
    for (std::size_t r = 0; r < 3; ++r) got.insert(t.features(r, 0));
    const double z = 1.0 / std::sqrt(2.0 / 3.0);
    auto it = got.begin();
    CHECK(*it++ == doctest::Approx(-z).epsilon(1e-12));
    CHECK(*it++ == doctest::Approx(0.0));
    CHECK(*it == doctest::Approx(z).epsilon(1e-12));
    CHECK(z == doctest::Approx(1.2247).epsilon(1e-4));
    CHECK(t.standardizer.features[0].std == doctest::Approx(std::sqrt(2.0 / 3.0)));
}

TEST_CASE("target destandardization round trips") {
    const auto p = write_temp("rand.csv", random_csv(200, 1));
    const DatasetTable t = load_csv(p, {"y"}, 4);
    const Matrix back = t.standardizer.standardize_targets(t.standardizer.destandardize_targets(t.targets));
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(std::fabs(back.values()[i] - t.targets.values()[i]) <= 1e-12);
    const Matrix fx = t.standardizer.standardize_features(t.standardizer.destandardize_features(t.features));
    for (std::size_t i = 0; i < fx.size(); ++i) CHECK(std::fabs(fx.values()[i] - t.features.values()[i]) <= 1e-12);
    const Matrix v = t.standardizer.destandardize_variances(Matrix{{2.0}});
    CHECK(v(0, 0) == doctest::Approx(2.0 * std::pow(t.standardizer.targets[0].std, 2)));
}

TEST_CASE("csv splits are seeded and follow the fractions") {
    const auto p = write_temp("rand2.csv", random_csv(500, 2));
    const DatasetTable a = load_csv(p, {"y"}, 7);
    const DatasetTable b = load_csv(p, {"y"}, 7);
    const DatasetTable c = load_csv(p, {"y"}, 8);
    CHECK(a.split == b.split);
    CHECK(a.features == b.features);
    CHECK(a.split != c.split);
    CHECK(a.count(Split::test) == 100);
    CHECK(a.count(Split::val) == 40);
    CHECK(a.count(Split::train) == 360);
    CHECK(a.input_width() == 3);
    CHECK(a.output_width() == 1);
}

TEST_CASE("standardizer uses train rows only") {
    const auto p = write_temp("rand3.csv", random_csv(300, 3));
    const DatasetTable t = load_csv(p, {"y"}, 1);
    const auto train = t.indices(Split::train);
    const Matrix raw = t.standardizer.destandardize_features(t.features);
    const auto recomputed = Standardizer::fit(raw, train);
    for (std::size_t c = 0; c < t.input_width(); ++c) {
        CHECK(recomputed[c].mean == doctest::Approx(t.standardizer.features[c].mean).epsilon(1e-12));
        CHECK(recomputed[c].std == doctest::Approx(t.standardizer.features[c].std).epsilon(1e-12));
        double m = 0.0, v = 0.0;
        for (std::size_t r : train) m += t.features(r, c) / train.size();
        for (std::size_t r : train) v += (t.features(r, c) - m) * (t.features(r, c) - m) / train.size();
        CHECK(std::fabs(m) <= 1e-9);
        CHECK(std::fabs(std::sqrt(v) - 1.0) <= 1e-9);
    }
    // Moving a test row far away leaves the statistics untouched.
    Matrix shifted = raw;
    const auto test = t.indices(Split::test);
    shifted(test.front(), 0) += 1e6;
    CHECK(Standardizer::fit(shifted, train)[0].mean == recomputed[0].mean);
}

TEST_CASE("csv error handling") {
    CHECK_THROWS_AS(load_csv("/nonexistent/file.csv", {"y"}, 0), DataError);
    const auto p = write_temp("bad.csv", "a,k,y\n1,5,2\n2,5,x\n3,5,4\n4,5,5\n5,5,7\n");
    const DatasetTable t = load_csv(p, {"y"}, 0, SplitFractions{1.0, 0.0, 0.0});
    CHECK(t.rejected_rows == 1);
    CHECK(t.rows() == 4);
    REQUIRE(t.dropped_columns.size() == 1);
    CHECK(t.dropped_columns[0] == "k");
    CHECK(t.input_width() == 1);
    CHECK_THROWS_AS(load_csv(p, {"missing"}, 0), DataError);
    const json m = dataset_manifest(t);
    CHECK(m.at("dropped_columns") == json::array({"k"}));
    CHECK(m.at("n") == 4);
}

TEST_CASE("toy generator") {
    ToySpec spec;
    spec.n_train = 10000;
    spec.seed = 3;
    const DatasetTable t = gen_toy(spec);
    CHECK(t.rows() == 11000);
    CHECK(t.count(Split::test) == 1000);
    const Matrix y = t.standardizer.destandardize_targets(t.targets);
    const Matrix x = t.standardizer.destandardize_features(t.features);
    double m = 0.0, v = 0.0;
    const auto train = t.indices(Split::train);
    std::vector<double> z;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        if (t.split[r] == Split::test) continue;
        CHECK(x(r, 0) >= -4.0);
        CHECK(x(r, 0) <= 4.0);
        CHECK(t.true_mean(r, 0) == doctest::Approx(x(r, 0) * std::sin(x(r, 0))));
        CHECK(t.true_sigma(r, 0) == doctest::Approx(0.1 + 0.3 * std::fabs(x(r, 0)) / 4.0));
        z.push_back((y(r, 0) - t.true_mean(r, 0)) / t.true_sigma(r, 0));
    }
    for (double e : z) m += e / z.size();
    for (double e : z) v += (e - m) * (e - m) / (z.size() - 1);
    CHECK(v == doctest::Approx(1.0).epsilon(0.05));

    const DatasetTable again = gen_toy(spec);
    CHECK(again.targets == t.targets);

    ToySpec quiet = spec;
    quiet.noise_fn = ToyNoise::none;
    const DatasetTable q = gen_toy(quiet);
    const Matrix qy = q.standardizer.destandardize_targets(q.targets);
    for (std::size_t r = 0; r < q.rows(); ++r) CHECK(qy(r, 0) == doctest::Approx(q.true_mean(r, 0)).epsilon(1e-12));

    ToySpec bad = spec;
    bad.x_lo = 5.0;
    CHECK_THROWS_AS(gen_toy(bad), DataError);
}

TEST_CASE("toy interval rows share the reference standardization") {
    ToySpec spec;
    spec.n_train = 500;
    const DatasetTable ref = gen_toy(spec);
    const DatasetTable ood = gen_toy_interval(spec, ref, 4.0, 6.0, 300, 9);
    CHECK(ood.rows() == 300);
    CHECK(ood.count(Split::test) == 300);
    const Matrix x = ref.standardizer.destandardize_features(ood.features);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        CHECK(x(r, 0) >= 4.0 - 1e-12);
        CHECK(x(r, 0) <= 6.0 + 1e-12);
    }
}

TEST_CASE("probe subsampling") {
    ToySpec spec;
    spec.n_train = 1000;
    spec.val_fraction = 0.0;
    const DatasetTable t = gen_toy(spec);
    REQUIRE(t.count(Split::train) == 1000);

    const Probe full = make_probe(t, ProbeConfig{1.0, {}, 0}, 32);
    CHECK(full.data.features == t.features);
    CHECK(full.data.split == t.split);
    CHECK_FALSE(full.augmented());

    const Probe tenth = make_probe(t, ProbeConfig{0.1, {}, 1}, 32);
    CHECK(tenth.data.count(Split::train) == 100);
    CHECK(tenth.data.count(Split::test) == t.count(Split::test));
    const std::set<std::size_t> uniq(tenth.source_rows.begin(), tenth.source_rows.end());
    CHECK(uniq.size() == 100);
    for (std::size_t r : tenth.source_rows) CHECK(t.split[r] == Split::train);

    const Probe other = make_probe(t, ProbeConfig{0.1, {}, 2}, 32);
    CHECK(other.data.count(Split::train) == 100);
    CHECK(other.source_rows != tenth.source_rows);

    CHECK_THROWS_AS(make_probe(t, ProbeConfig{0.01, {}, 0}, 128), DataError);
    CHECK_THROWS_AS(make_probe(t, ProbeConfig{0.0, {}, 0}, 1), DataError);

    AugmentationSpec noise{AugmentationKind::gauss_noise, 0.5, {}, 0.5};
    const Probe aug = make_probe(t, ProbeConfig{1.0, {noise}, 0}, 32);
    CHECK(aug.augmented());
    CHECK(probe_manifest(aug).dump().find("gauss_noise") != std::string::npos);
}

TEST_CASE("augmentations") {
    Rng rng(4);
    const Matrix base(2000, 3, 1.0);

    Matrix flipped = base;
    apply_augmentation(flipped, {AugmentationKind::sign_flip, 0.0, {1}, 1.0}, rng);
    for (std::size_t r = 0; r < flipped.rows(); ++r) {
        CHECK(flipped(r, 0) == 1.0);
        CHECK(flipped(r, 1) == -1.0);
    }

    Matrix dropped = base;
    apply_augmentation(dropped, {AugmentationKind::feature_dropout, 0.3, {}, 1.0}, rng);
    std::size_t zeros = 0;
    for (double v : dropped.values()) zeros += v == 0.0;
    CHECK(static_cast<double>(zeros) / dropped.size() == doctest::Approx(0.3).epsilon(0.1));

    Matrix jitter = base;
    apply_augmentation(jitter, {AugmentationKind::feature_scale_jitter, 0.2, {}, 1.0}, rng);
    for (double v : jitter.values()) {
        CHECK(v >= 0.8);
        CHECK(v <= 1.2);
    }

    Matrix half = base;
    apply_augmentation(half, {AugmentationKind::gauss_noise, 1.0, {}, 0.5}, rng);
    std::size_t touched = 0;
    for (std::size_t r = 0; r < half.rows(); ++r) touched += half(r, 0) != 1.0;
    CHECK(static_cast<double>(touched) / half.rows() == doctest::Approx(0.5).epsilon(0.1));

    Matrix never = base;
    apply_augmentation(never, {AugmentationKind::gauss_noise, 1.0, {}, 0.0}, rng);
    CHECK(never == base);

    CHECK_THROWS(AugmentationSpec{AugmentationKind::gauss_noise, 1.0, {}, 1.5}.validate());
    CHECK_THROWS(AugmentationSpec{AugmentationKind::feature_dropout, 1.5, {}, 1.0}.validate());
}

TEST_CASE("perturbation") {
    Rng rng(6);
    const Matrix x{{0.2, 1.0}, {-3.0, 0.5}};
    CHECK(perturb(x, 0.0, std::nullopt, rng) == x);

    const Matrix one(100, 1, 1.0);
    const Matrix clamped = perturb(one, 1e3, ClampBounds{0.0, 1.0}, rng);
    for (double v : clamped.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    std::size_t at_top = 0;
    for (double v : clamped.values()) at_top += v == 1.0;
    CHECK(at_top > 30);

    const Matrix zeros(100000, 1, 0.0);
    const Matrix noisy = perturb(zeros, 0.3, std::nullopt, rng);
    double m = 0.0, v = 0.0;
    for (double e : noisy.values()) m += e / noisy.size();
    for (double e : noisy.values()) v += (e - m) * (e - m) / noisy.size();
    CHECK(std::sqrt(v) == doctest::Approx(0.3).epsilon(0.03));

    CHECK_THROWS_AS(perturb(x, -1.0, std::nullopt, rng), DomainError);
    CHECK_THROWS(PerturbationSweep{{0.1, 0.1}, std::nullopt}.validate());
    CHECK_NOTHROW(PerturbationSweep{}.validate());
}
