#include "uq/posthoc.hpp"

#include "uq/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace uq {

std::string to_string(ConditioningMode m) {
    switch (m) {
    case ConditioningMode::input_only: return "input_only";
    case ConditioningMode::output_only: return "output_only";
    case ConditioningMode::hybrid: return "hybrid";
    }
    return "?";
}

std::string to_string(HeadKind h) { return h == HeadKind::gaussian ? "gaussian" : "gengauss"; }

ConditioningMode parse_conditioning_mode(const std::string& s) {
    if (s == "input_only") return ConditioningMode::input_only;
    if (s == "output_only") return ConditioningMode::output_only;
    if (s == "hybrid") return ConditioningMode::hybrid;
    throw std::invalid_argument("unknown conditioning mode '" + s + "'");
}

HeadKind parse_head_kind(const std::string& s) {
    if (s == "gaussian") return HeadKind::gaussian;
    if (s == "gengauss") return HeadKind::gengauss;
    throw std::invalid_argument("unknown head '" + s + "'");
}

json to_json(const BaseModel& base) {
    return {{"name", base.name},
            {"network", to_json(base.net)},
            {"standardizer", to_json(base.standardizer)},
            {"seed", base.seed}};
}

BaseModel base_model_from_json(const json& j) {
    return BaseModel{j.value("name", ""), mlp_from_json(j.at("network")), standardizer_from_json(j.at("standardizer")),
                     j.value("seed", std::uint64_t{0})};
}

std::string base_checkpoint_hash(const BaseModel& base) { return sha256_hex(canonical_dump(to_json(base))); }

std::size_t aux_input_width(ConditioningMode mode, std::size_t input_width, std::size_t output_width) {
    switch (mode) {
    case ConditioningMode::input_only: return input_width;
    case ConditioningMode::output_only: return output_width;
    case ConditioningMode::hybrid: return input_width + output_width;
    }
    return 0;
}

std::vector<HeadActivation> aux_heads(HeadKind head, std::size_t output_width) {
    const std::size_t n = head == HeadKind::gaussian ? output_width : 2 * output_width;
    return std::vector<HeadActivation>(n, HeadActivation::softplus_positive);
}

Matrix conditioning_input(ConditioningMode mode, const Matrix& x, const Matrix& f) {
    if (x.rows() != f.rows()) throw ShapeError("conditioning_input: row count mismatch");
    switch (mode) {
    case ConditioningMode::input_only: return x;
    case ConditioningMode::output_only: return f;
    case ConditioningMode::hybrid: return hconcat(x, f);
    }
    return {};
}

HeadOutput decode_head(HeadKind head, const Matrix& raw, std::size_t k) {
    HeadOutput out;
    if (head == HeadKind::gaussian) {
        if (raw.cols() != k) throw ShapeError("decode_head: expected K variance channels");
        out.variance = raw;
        return out;
    }
    if (raw.cols() != 2 * k) throw ShapeError("decode_head: expected 2K (alpha, beta) channels");
    out.variance = Matrix(raw.rows(), k);
    out.alpha = Matrix(raw.rows(), k);
    out.beta = Matrix(raw.rows(), k);
    for (std::size_t r = 0; r < raw.rows(); ++r) {
        for (std::size_t c = 0; c < k; ++c) {
            const double alpha = raw(r, c);
            const double beta = std::clamp(raw(r, k + c), kShapeMin, kShapeMax);
            out.alpha(r, c) = alpha;
            out.beta(r, c) = beta;
            out.variance(r, c) = gengauss_variance({0.0, alpha, beta});
        }
    }
    return out;
}

double detached_nll(HeadKind head, const Matrix& raw, const Matrix& residual, Matrix* grad) {
    const std::size_t n = residual.rows();
    const std::size_t k = residual.cols();
    if (n == 0) throw DomainError("detached_nll: empty batch");
    const std::size_t expect = head == HeadKind::gaussian ? k : 2 * k;
    if (raw.rows() != n || raw.cols() != expect) throw ShapeError("detached_nll: output/residual shape mismatch");
    if (grad && (grad->rows() != n || grad->cols() != expect)) throw ShapeError("detached_nll: gradient shape");

    const double inv_n = 1.0 / static_cast<double>(n);
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < k; ++c) {
            const double res = residual(r, c);
            if (head == HeadKind::gaussian) {
                const double v = raw(r, c);
                total += 0.5 * (res * res / v + std::log(v)) + half_log_2pi;
                if (grad) (*grad)(r, c) = 0.5 * (1.0 / v - res * res / (v * v)) * inv_n;
            } else {
                const double alpha = raw(r, c);
                const double beta_raw = raw(r, k + c);
                const double beta = std::clamp(beta_raw, kShapeMin, kShapeMax);
                const double z = std::fabs(res) / alpha;
                const double zb = z > 0.0 ? std::pow(z, beta) : 0.0;
                total += -std::log(beta) + std::log(2.0 * alpha) + ln_gamma(1.0 / beta) + zb;
                if (grad) {
                    (*grad)(r, c) = (1.0 - beta * zb) / alpha * inv_n;
                    double dbeta = 0.0;
                    if (beta_raw > kShapeMin && beta_raw < kShapeMax) {
                        dbeta = -1.0 / beta - digamma(1.0 / beta) / (beta * beta);
                        if (z > 0.0) dbeta += zb * std::log(z);
                    }
                    (*grad)(r, k + c) = dbeta * inv_n;
                }
            }
        }
    }
    return total * inv_n;
}

namespace {

class PosthocTask : public TrainingTask {
public:
    PosthocTask(const BaseModel& base, const Probe& probe, ConditioningMode mode, HeadKind head)
        : base_(base), probe_(probe), mode_(mode), head_(head), train_(probe.data.indices(Split::train)) {
        const auto val = probe.data.indices(Split::val);
        if (train_.empty()) throw std::invalid_argument("fit_posthoc: empty probe");
        if (val.empty()) throw std::invalid_argument("fit_posthoc: probe has no validation rows");
        const Matrix vx = probe.data.features.gather_rows(val);
        const Matrix vf = base.predict(vx);
        val_inputs_ = conditioning_input(mode, vx, vf);
        val_residual_ = residual(vf, probe.data.targets.gather_rows(val));
        if (!probe.augmented()) train_f_ = base.predict(probe.data.features.gather_rows(train_));
    }

    std::size_t train_rows() const override { return train_.size(); }

    Batch make_batch(std::span<const std::size_t> rows, Rng& rng) const override {
        std::vector<std::size_t> idx(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) idx[i] = train_[rows[i]];
        Matrix x = probe_.data.features.gather_rows(idx);
        Matrix f;
        if (probe_.augmented()) {
            apply_augmentations(x, probe_.config.augmentations, rng);
            f = base_.predict(x);
        } else {
            f = train_f_.gather_rows(rows);
        }
        Matrix y = probe_.data.targets.gather_rows(idx);
        return {conditioning_input(mode_, x, f), residual(f, y)};
    }

    double loss(const Matrix& output, const Matrix& targets, Matrix* grad) const override {
        return detached_nll(head_, output, targets, grad);
    }

    double validation_loss(const Mlp& net) const override {
        return detached_nll(head_, net.predict(val_inputs_), val_residual_, nullptr);
    }

private:
    static Matrix residual(const Matrix& f, const Matrix& y) {
        Matrix r = f;
        for (std::size_t i = 0; i < r.size(); ++i) r.values()[i] -= y.values()[i];
        return r;
    }

    const BaseModel& base_;
    const Probe& probe_;
    ConditioningMode mode_;
    HeadKind head_;
    std::vector<std::size_t> train_;
    Matrix train_f_;
    Matrix val_inputs_;
    Matrix val_residual_;
};

} // namespace

PosthocFit fit_posthoc(std::shared_ptr<const BaseModel> base, const Probe& probe, const NetShape& aux_shape,
                       ConditioningMode mode, HeadKind head, const TrainSchedule& schedule,
                       const AdamWConfig& opt, Rng& rng) {
    if (!base) throw std::invalid_argument("fit_posthoc: no base model");
    const std::size_t d = base->net.config().input_width();
    const std::size_t k = base->net.config().output_width();
    if (probe.data.input_width() != d || probe.data.output_width() != k)
        throw ShapeError("fit_posthoc: probe widths do not match the base model");

    const MlpConfig cfg = aux_shape.make(aux_input_width(mode, d, k), aux_heads(head, k));
    Rng init_rng = rng.split("aux-init");
    PosthocFit result{PosthocModel{base, Mlp(cfg, init_rng), mode, head, base_checkpoint_hash(*base), probe_manifest(probe)},
                      {}};
    PosthocTask task(*base, probe, mode, head);
    Rng train_rng = rng.split("aux-train");
    result.trace = fit(result.model.aux, task, schedule, opt, train_rng);
    return result;
}

HeadOutput predict_head(const PosthocModel& m, const Matrix& x) {
    const Matrix f = m.base->predict(x);
    return decode_head(m.head, m.aux.predict(conditioning_input(m.mode, x, f)), f.cols());
}

Matrix predict_variance(const PosthocModel& m, const Matrix& x) { return predict_head(m, x).variance; }

HeadOutput predict_head_counterfactual(const PosthocModel& m, const Matrix& x_input, const Matrix& x_for_base) {
    if (m.mode == ConditioningMode::input_only)
        throw UsageError("predict_counterfactual: input-only models do not read base outputs");
    if (x_input.rows() != x_for_base.rows()) throw ShapeError("predict_counterfactual: row count mismatch");
    const Matrix f = m.base->predict(x_for_base);
    return decode_head(m.head, m.aux.predict(conditioning_input(m.mode, x_input, f)), f.cols());
}

Matrix predict_counterfactual(const PosthocModel& m, const Matrix& x_input, const Matrix& x_for_base) {
    return predict_head_counterfactual(m, x_input, x_for_base).variance;
}

namespace {

double row_mean(std::span<const double> row) {
    double s = 0.0;
    for (double v : row) s += v;
    return s / static_cast<double>(row.size());
}

} // namespace

EpistemicDiagnostics epistemic_diagnostics(const PosthocModel& m, const Matrix& train_x, const Matrix& eval_x) {
    if (m.mode == ConditioningMode::input_only)
        throw UsageError("epistemic_diagnostics: needs a model conditioned on base outputs");
    if (train_x.rows() == 0 || eval_x.rows() == 0) throw DomainError("epistemic_diagnostics: empty input");

    EpistemicDiagnostics d;
    const Matrix f_train = m.base->predict(train_x);
    const std::size_t k = f_train.cols();
    d.manifold_lo.assign(k, 0.0);
    d.manifold_hi.assign(k, 0.0);
    bool degenerate = true;
    for (std::size_t c = 0; c < k; ++c) {
        const auto col = f_train.col(c);
        const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
        d.manifold_lo[c] = *lo;
        d.manifold_hi[c] = *hi;
        if (*hi > *lo) degenerate = false;
    }
    if (degenerate) throw DomainError("epistemic_diagnostics: base outputs on training inputs are all equal");

    const Matrix v_train = predict_variance(m, train_x);
    double id_mean = 0.0;
    for (std::size_t r = 0; r < v_train.rows(); ++r) id_mean += row_mean(v_train.row(r));
    d.id_mean_variance = id_mean / static_cast<double>(v_train.rows());

    const Matrix f_eval = m.base->predict(eval_x);
    const Matrix v_eval = predict_variance(m, eval_x);
    double sdd = 0.0, sde = 0.0;
    for (std::size_t r = 0; r < f_eval.rows(); ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double f = f_eval(r, c);
            const double gap = std::max({d.manifold_lo[c] - f, 0.0, f - d.manifold_hi[c]});
            ss += gap * gap;
        }
        const double dist = std::sqrt(ss);
        const double excess = row_mean(v_eval.row(r)) - d.id_mean_variance;
        d.distances.push_back(dist);
        d.excess_variance.push_back(excess);
        sdd += dist * dist;
        sde += dist * excess;
    }
    d.lambda_fit = sdd > 0.0 ? sde / sdd : 0.0;
    return d;
}

json to_json(const PosthocModel& m) {
    return {{"base_hash", m.base_hash},
            {"aux", to_json(m.aux)},
            {"mode", to_string(m.mode)},
            {"head", to_string(m.head)},
            {"probe", m.probe}};
}

PosthocModel posthoc_from_json(const json& j, std::shared_ptr<const BaseModel> base, bool allow_base_mismatch) {
    if (!base) throw std::invalid_argument("posthoc_from_json: no base model");
    const std::string hash = j.at("base_hash").get<std::string>();
    if (!allow_base_mismatch && hash != base_checkpoint_hash(*base))
        throw DataError("posthoc checkpoint was fit against a different base model (hash " + hash.substr(0, 12) + ")");
    PosthocModel m{std::move(base), mlp_from_json(j.at("aux")), parse_conditioning_mode(j.at("mode").get<std::string>()),
                   parse_head_kind(j.at("head").get<std::string>()), hash, j.value("probe", json::object())};
    const std::size_t d = m.base->net.config().input_width();
    const std::size_t k = m.base->net.config().output_width();
    if (m.aux.config().input_width() != aux_input_width(m.mode, d, k) ||
        m.aux.config().output_width() != aux_heads(m.head, k).size())
        throw ShapeError("posthoc checkpoint widths do not match the base model");
    return m;
}

} // namespace uq
