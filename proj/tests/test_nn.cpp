#include "uq/data.hpp"
#include "uq/io.hpp"
#include "uq/nn.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace uq;

namespace {

Mlp zero_net(std::vector<std::size_t> widths, std::vector<HeadActivation> heads) {
    MlpConfig cfg{std::move(widths), Activation::relu, std::move(heads), 0.0};
    Rng rng(0);
    Mlp net(cfg, rng);
    auto flat = net.params().flatten();
    std::fill(flat.begin(), flat.end(), 0.0);
    net.params().assign(flat);
    return net;
}

// Loss = sum(out .* w) so dLoss/dOut = w.
double weighted_sum(const Matrix& out, const Matrix& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * w.values()[i];
    return s;
}

void check_gradients(Activation act, HeadActivation head, double dropout) {
    MlpConfig cfg{{4, 7, 5, 3}, act, {head, HeadActivation::identity, head}, dropout};
    Rng rng(11);
    Mlp net(cfg, rng);
    const Matrix x = testsupport::random_matrix(6, 4, rng);
    const Matrix w = testsupport::random_matrix(6, 3, rng);
    const Rng dropout_rng(99);

    Rng r1 = dropout_rng;
    net.params().zero_grad();
    net.forward(x, Mode::train, &r1);
    net.backward(w);
    const auto analytic = net.params().flatten_grad();

    const auto loss_at = [&](const std::vector<double>& theta) {
        Mlp probe(cfg, net.params());
        probe.params().assign(theta);
        Rng r = dropout_rng;
        return weighted_sum(probe.forward(x, Mode::train, &r), w);
    };
    const auto numeric = testsupport::numeric_gradient(loss_at, net.params().flatten());
    CHECK(testsupport::max_relative_error(analytic, numeric) <= 1e-4);
}

} // namespace

TEST_CASE("config validation") {
    CHECK_THROWS(MlpConfig{{3}, Activation::relu, {HeadActivation::identity}, 0.0}.validate());
    CHECK_THROWS(MlpConfig{{3, 0, 1}, Activation::relu, {HeadActivation::identity}, 0.0}.validate());
    CHECK_THROWS(MlpConfig{{3, 1}, Activation::relu, {HeadActivation::identity}, 1.0}.validate());
    CHECK_THROWS(MlpConfig{{3, 2}, Activation::relu, {HeadActivation::identity}, 0.0}.validate());
    CHECK_NOTHROW(MlpConfig{{3, 4, 2}, Activation::tanh, {HeadActivation::identity, HeadActivation::softplus_positive}, 0.5}.validate());
}

TEST_CASE("zero-weight nets") {
    const Matrix x{{1.0, -2.0}, {0.5, 3.0}};
    auto ident = zero_net({2, 5, 2}, {HeadActivation::identity, HeadActivation::identity});
    CHECK(ident.predict(x) == Matrix(2, 2, 0.0));
    auto sp = zero_net({2, 5, 2}, {HeadActivation::softplus_positive, HeadActivation::softplus_positive});
    const Matrix out = sp.predict(x);
    for (double v : out.values()) CHECK(v == doctest::Approx(std::log(2.0) + kVarianceFloor).epsilon(1e-12));
}

TEST_CASE("eval mode is deterministic and ignores dropout") {
    MlpConfig cfg{{3, 16, 2}, Activation::relu, {HeadActivation::identity, HeadActivation::softplus_positive}, 0.5};
    Rng rng(5);
    Mlp net(cfg, rng);
    const Matrix x = testsupport::random_matrix(4, 3, rng);
    Rng d(1);
    const Matrix a = net.forward(x, Mode::eval, &d);
    const Matrix b = net.forward(x, Mode::eval, &d);
    CHECK(a == b);
    CHECK(a == net.predict(x));
    for (std::size_t r = 0; r < a.rows(); ++r) CHECK(a(r, 1) > 0.0);
    CHECK_THROWS_AS(net.predict(Matrix(2, 4)), ShapeError);
}

TEST_CASE("single linear layer gradient matches hand calculus") {
    MlpConfig cfg{{2, 1}, Activation::relu, {HeadActivation::identity}, 0.0};
    ParameterStore p;
    DenseLayer l;
    l.weight = Matrix{{0.5}, {-1.0}};
    l.bias = {0.25};
    p.layers.push_back(l);
    Mlp net(cfg, p);
    const Matrix x{{2.0, 3.0}};
    const Matrix y{{1.0}};
    net.params().zero_grad();
    const Matrix out = net.forward(x, Mode::train);
    Matrix grad(1, 1);
    mse_loss(out, y, &grad);
    net.backward(grad);
    const double yhat = 0.5 * 2.0 - 3.0 + 0.25;
    CHECK(out(0, 0) == doctest::Approx(yhat));
    CHECK(net.params().layers[0].grad_weight(0, 0) == doctest::Approx(2.0 * (yhat - 1.0) * 2.0));
    CHECK(net.params().layers[0].grad_weight(1, 0) == doctest::Approx(2.0 * (yhat - 1.0) * 3.0));
    CHECK(net.params().layers[0].grad_bias[0] == doctest::Approx(2.0 * (yhat - 1.0)));
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
    MlpConfig cfg{{3, 8, 2}, Activation::tanh, {HeadActivation::identity, HeadActivation::softplus_positive}, 0.0};
    Rng rng(2);
    Mlp net(cfg, rng);
    net.forward(testsupport::random_matrix(5, 3, rng), Mode::train);
    net.backward(Matrix(5, 2));
    for (double g : net.params().flatten_grad()) CHECK(g == 0.0);
}

TEST_CASE("backward needs a fresh train-mode forward") {
    MlpConfig cfg{{3, 4, 1}, Activation::relu, {HeadActivation::identity}, 0.0};
    Rng rng(3);
    Mlp net(cfg, rng);
    CHECK_THROWS_AS(net.backward(Matrix(2, 1)), UsageError);
    net.forward(Matrix(2, 3), Mode::train);
    CHECK_THROWS_AS(net.backward(Matrix(3, 1)), UsageError);
    net.forward(Matrix(2, 3), Mode::train);
    net.backward(Matrix(2, 1));
    CHECK_THROWS_AS(net.backward(Matrix(2, 1)), UsageError);
    net.forward(Matrix(2, 3), Mode::eval);
    CHECK_THROWS_AS(net.backward(Matrix(2, 1)), UsageError);
}

TEST_CASE("finite-difference gradient check for every activation/head combination") {
    for (auto act : {Activation::relu, Activation::tanh})
        for (auto head : {HeadActivation::identity, HeadActivation::softplus_positive})
            for (double p : {0.0, 0.3}) {
                CAPTURE(to_string(act));
                CAPTURE(to_string(head));
                CAPTURE(p);
                check_gradients(act, head, p);
            }
}

TEST_CASE("inverted dropout keeps the expectation of a linear layer") {
    // One hidden layer with identity-like behaviour: relu of positive inputs.
    MlpConfig cfg{{1, 200, 1}, Activation::relu, {HeadActivation::identity}, 0.4};
    ParameterStore p;
    DenseLayer l1, l2;
    l1.weight = Matrix(1, 200, 1.0);
    l1.bias.assign(200, 0.0);
    l2.weight = Matrix(200, 1, 1.0 / 200.0);
    l2.bias = {0.0};
    p.layers = {l1, l2};
    Mlp net(cfg, p);
    const Matrix x{{2.0}};
    Rng d(8);
    double mean = 0.0;
    std::size_t zeros = 0, total = 0;
    const int trials = 2000;
    for (int t = 0; t < trials; ++t) mean += net.forward(x, Mode::train, &d)(0, 0) / trials;
    CHECK(mean == doctest::Approx(net.predict(x)(0, 0)).epsilon(0.01));

    // Each hidden unit is dropped with probability p and survivors are scaled by 1/(1-p).
    MlpConfig wide{{1, 1000, 1000}, Activation::relu, std::vector<HeadActivation>(1000, HeadActivation::identity), 0.4};
    ParameterStore q;
    DenseLayer a, b;
    a.weight = Matrix(1, 1000, 1.0);
    a.bias.assign(1000, 0.0);
    b.weight = Matrix::identity(1000);
    b.bias.assign(1000, 0.0);
    q.layers = {a, b};
    Mlp probe(wide, q);
    const Matrix out = probe.forward(Matrix{{1.0}}, Mode::train, &d);
    for (double v : out.values()) {
        ++total;
        if (v == 0.0) ++zeros;
        else CHECK(v == doctest::Approx(1.0 / 0.6));
    }
    CHECK(static_cast<double>(zeros) / total == doctest::Approx(0.4).epsilon(0.1));
}

TEST_CASE("AdamW worked examples") {
    auto one_param = [](double theta, double grad, AdamWConfig cfg) {
        ParameterStore p;
        DenseLayer l;
        l.weight = Matrix{{theta}};
        l.bias = {0.0};
        l.grad_weight = Matrix{{grad}};
        l.grad_bias = {0.0};
        p.layers.push_back(l);
        AdamW opt(cfg, p);
        opt.step(p);
        CHECK(p.step == 1);
        return p.layers[0].weight(0, 0);
    };
    AdamWConfig cfg{0.1, 0.9, 0.999, 1e-8, 0.01};
    // theta' = theta(1 - lr*wd) - lr * mhat / (sqrt(vhat) + eps), with mhat = vhat = 1 at t = 1.
    CHECK(one_param(1.0, 1.0, cfg) == doctest::Approx(1.0 * (1.0 - 0.1 * 0.01) - 0.1 * 1.0 / (1.0 + 1e-8)).epsilon(1e-12));
    CHECK(one_param(1.0, 1.0, cfg) == doctest::Approx(0.899).epsilon(1e-6));
    CHECK(one_param(0.7, 0.0, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0}) == 0.7);
    CHECK(one_param(0.7, 0.0, cfg) == doctest::Approx(0.7 * (1.0 - 0.1 * 0.01)).epsilon(1e-15));
    CHECK_THROWS(AdamWConfig{0.0}.validate());
    CHECK_THROWS(AdamWConfig{0.1, 1.0}.validate());
}

TEST_CASE("zero_grad clears every slot") {
    MlpConfig cfg{{2, 3, 1}, Activation::relu, {HeadActivation::identity}, 0.0};
    Rng rng(4);
    Mlp net(cfg, rng);
    net.forward(Matrix{{1, 2}}, Mode::train);
    net.backward(Matrix{{1}});
    net.params().zero_grad();
    for (double g : net.params().flatten_grad()) CHECK(g == 0.0);
}

namespace {

DatasetTable linear_table(std::size_t n, std::uint64_t seed) {
    ToySpec spec;
    spec.n_train = n;
    spec.n_test = 100;
    spec.mean_fn = ToyMean::linear;
    spec.noise_fn = ToyNoise::none;
    spec.seed = seed;
    return gen_toy(spec);
}

class ConstantLossTask : public TrainingTask {
public:
    std::size_t train_rows() const override { return 10; }
    Batch make_batch(std::span<const std::size_t> rows, Rng&) const override {
        return {Matrix(rows.size(), 1), Matrix(rows.size(), 1)};
    }
    double loss(const Matrix& out, const Matrix&, Matrix* grad) const override {
        if (grad) grad->fill(0.0);
        return 1.0 + 0.0 * out(0, 0);
    }
    double validation_loss(const Mlp&) const override { return 1.0; }
};

} // namespace

TEST_CASE("train_mse fits a noiseless linear target") {
    const DatasetTable data = linear_table(600, 1);
    MlpConfig cfg = NetShape{{32, 32}, Activation::relu, 0.0}.make(1, {HeadActivation::identity});
    Rng rng(1);
    Mlp net(cfg, rng);
    TrainSchedule sched;
    sched.max_epochs = 300;
    sched.batch_size = 64;
    sched.early_stop_patience = 30;
    AdamWConfig opt;
    opt.lr = 3e-3;
    Rng train_rng(2);
    train_mse(net, data, sched, opt, train_rng);
    const auto val = data.indices(Split::val);
    const Matrix pred = data.standardizer.destandardize_targets(net.predict(data.features.gather_rows(val)));
    const Matrix truth = data.standardizer.destandardize_targets(data.targets.gather_rows(val));
    double ss = 0.0;
    for (std::size_t i = 0; i < val.size(); ++i) ss += std::pow(pred(i, 0) - truth(i, 0), 2);
    CHECK(std::sqrt(ss / val.size()) < 1e-2);
}

TEST_CASE("patience 1 with a constant loss stops after two evaluations") {
    MlpConfig cfg{{1, 2, 1}, Activation::relu, {HeadActivation::identity}, 0.0};
    Rng rng(0);
    Mlp net(cfg, rng);
    TrainSchedule s;
    s.max_epochs = 50;
    s.batch_size = 5;
    s.early_stop_patience = 1;
    ConstantLossTask task;
    Rng r(1);
    const TrainTrace t = fit(net, task, s, AdamWConfig{}, r);
    CHECK(t.evaluations.size() == 2);
    CHECK(t.early_stopped);
}

TEST_CASE("seeded training is reproducible and never returns worse than the best evaluation") {
    const DatasetTable data = linear_table(300, 3);
    auto run = [&] {
        MlpConfig cfg = NetShape{{16}, Activation::tanh, 0.2}.make(1, {HeadActivation::identity});
        Rng rng(9);
        Mlp net(cfg, rng);
        TrainSchedule s;
        s.max_epochs = 20;
        s.batch_size = 32;
        Rng r(10);
        const TrainTrace t = train_mse(net, data, s, AdamWConfig{}, r);
        return std::make_pair(t, net.params().flatten());
    };
    const auto [t1, p1] = run();
    const auto [t2, p2] = run();
    CHECK(p1 == p2);
    REQUIRE(t1.evaluations.size() == t2.evaluations.size());
    for (std::size_t i = 0; i < t1.evaluations.size(); ++i) CHECK(t1.evaluations[i].val_loss == t2.evaluations[i].val_loss);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : t1.evaluations) best = std::min(best, e.val_loss);
    CHECK(t1.best_val_loss == best);
}

TEST_CASE("train_mse rejects tables without a validation split") {
    DatasetTable t = linear_table(200, 4);
    for (auto& s : t.split)
        if (s == Split::val) s = Split::train;
    MlpConfig cfg = NetShape{{4}, Activation::relu, 0.0}.make(1, {HeadActivation::identity});
    Rng rng(0);
    Mlp net(cfg, rng);
    Rng r(0);
    CHECK_THROWS(train_mse(net, t, TrainSchedule{}, AdamWConfig{}, r));
}

TEST_CASE("network checkpoint round trip is bit-exact") {
    MlpConfig cfg{{3, 9, 2}, Activation::tanh, {HeadActivation::identity, HeadActivation::softplus_positive}, 0.1};
    Rng rng(21);
    Mlp net(cfg, rng);
    net.params().step = 17;
    const json j = to_json(net);
    const Mlp back = mlp_from_json(json::parse(j.dump()));
    CHECK(back.config() == cfg);
    CHECK(back.params().flatten() == net.params().flatten());
    CHECK(back.params().step == 17);
    const Matrix x = testsupport::random_matrix(5, 3, rng);
    CHECK(back.predict(x) == net.predict(x));
}
