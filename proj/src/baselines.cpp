#include "uq/baselines.hpp"

#include "uq/distributions.hpp"

#include <cmath>
#include <numbers>

namespace uq {

double joint_gauss_nll(const Matrix& output, const Matrix& targets, Matrix* grad) {
    const std::size_t n = targets.rows();
    const std::size_t k = targets.cols();
    if (n == 0) throw DomainError("joint_gauss_nll: empty batch");
    if (output.rows() != n || output.cols() != 2 * k) throw ShapeError("joint_gauss_nll: expected [mu, var] output");
    if (grad && (grad->rows() != n || grad->cols() != 2 * k)) throw ShapeError("joint_gauss_nll: gradient shape");
    const double inv_n = 1.0 / static_cast<double>(n);
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < k; ++c) {
            const double mu = output(r, c);
            const double v = output(r, k + c);
            const double res = mu - targets(r, c);
            total += 0.5 * (res * res / v + std::log(v)) + half_log_2pi;
            if (grad) {
                (*grad)(r, c) = res / v * inv_n;
                (*grad)(r, k + c) = 0.5 * (1.0 / v - res * res / (v * v)) * inv_n;
            }
        }
    }
    return total * inv_n;
}

JointNllTask::JointNllTask(const DatasetTable& data) : data_(data), train_(data.indices(Split::train)) {
    const auto val = data.indices(Split::val);
    if (train_.empty()) throw std::invalid_argument("JointNllTask: empty training split");
    if (val.empty()) throw std::invalid_argument("JointNllTask: empty validation split");
    val_x_ = data.features.gather_rows(val);
    val_y_ = data.targets.gather_rows(val);
}

Batch JointNllTask::make_batch(std::span<const std::size_t> rows, Rng&) const {
    std::vector<std::size_t> idx(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) idx[i] = train_[rows[i]];
    return {data_.features.gather_rows(idx), data_.targets.gather_rows(idx)};
}

double JointNllTask::loss(const Matrix& output, const Matrix& targets, Matrix* grad) const {
    return joint_gauss_nll(output, targets, grad);
}

double JointNllTask::validation_loss(const Mlp& net) const {
    return joint_gauss_nll(net.predict(val_x_), val_y_, nullptr);
}

namespace {

std::vector<HeadActivation> member_heads(std::size_t k) {
    std::vector<HeadActivation> heads(k, HeadActivation::identity);
    heads.resize(2 * k, HeadActivation::softplus_positive);
    return heads;
}

} // namespace

EnsembleFit train_ensemble(const DatasetTable& data, std::size_t members, const NetShape& shape,
                           const TrainSchedule& schedule, const AdamWConfig& opt, Rng& rng) {
    if (members < 2) throw std::invalid_argument("train_ensemble: need at least 2 members");
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < members; ++i) seeds.push_back(rng.split("member", i).seed());
    return train_ensemble(data, seeds, shape, schedule, opt);
}

EnsembleFit train_ensemble(const DatasetTable& data, const std::vector<std::uint64_t>& member_seeds,
                           const NetShape& shape, const TrainSchedule& schedule, const AdamWConfig& opt) {
    if (member_seeds.size() < 2) throw std::invalid_argument("train_ensemble: need at least 2 members");
    const MlpConfig cfg = shape.make(data.input_width(), member_heads(data.output_width()));
    JointNllTask task(data);
    EnsembleFit out;
    out.model.standardizer = data.standardizer;
    out.model.member_seeds = member_seeds;
    for (std::uint64_t seed : member_seeds) {
        Rng rng(seed);
        Rng init = rng.split("init");
        Mlp net(cfg, init);
        Rng train_rng = rng.split("train");
        out.traces.push_back(fit(net, task, schedule, opt, train_rng));
        out.model.members.push_back(std::move(net));
    }
    return out;
}

EnsemblePrediction ensemble_predict(const EnsembleModel& e, const Matrix& x) {
    if (e.members.size() < 2) throw std::invalid_argument("ensemble_predict: need at least 2 members");
    const std::size_t k = e.members.front().config().output_width() / 2;
    std::vector<Matrix> outs;
    for (const auto& m : e.members) {
        if (m.config().input_width() != x.cols()) throw ShapeError("ensemble_predict: input width mismatch");
        outs.push_back(m.predict(x));
    }
    EnsemblePrediction p{Matrix(x.rows(), k), Matrix(x.rows(), k), Matrix(x.rows(), k)};
    std::vector<GaussianPrediction> cell(outs.size());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t m = 0; m < outs.size(); ++m) cell[m] = {outs[m](r, c), outs[m](r, k + c)};
            const auto mix = ensemble_mixture_moments(cell);
            p.mean(r, c) = mix.mu;
            p.variance(r, c) = mix.sigma2;
            p.epistemic(r, c) = ensemble_epistemic_variance(cell);
        }
    }
    return p;
}

PosthocFit fit_output_only_baseline(std::shared_ptr<const BaseModel> base, const Probe& probe,
                                    const NetShape& aux_shape, HeadKind head, const TrainSchedule& schedule,
                                    const AdamWConfig& opt, Rng& rng) {
    return fit_posthoc(std::move(base), probe, aux_shape, ConditioningMode::output_only, head, schedule, opt, rng);
}

json to_json(const EnsembleModel& e) {
    json members = json::array();
    for (const auto& m : e.members) members.push_back(to_json(m));
    return {{"members", members},
            {"member_seeds", e.member_seeds},
            {"standardizer", to_json(e.standardizer)},
            {"M", e.members.size()}};
}

EnsembleModel ensemble_from_json(const json& j) {
    EnsembleModel e;
    for (const auto& m : j.at("members")) e.members.push_back(mlp_from_json(m));
    e.member_seeds = j.value("member_seeds", std::vector<std::uint64_t>{});
    e.standardizer = standardizer_from_json(j.at("standardizer"));
    if (e.members.size() < 2) throw DataError("ensemble checkpoint has fewer than 2 members");
    return e;
}

} // namespace uq
