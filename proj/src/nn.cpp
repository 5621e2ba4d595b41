#include "uq/nn.hpp"

#include "uq/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace uq {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

std::string to_string(HeadActivation h) {
    return h == HeadActivation::identity ? "identity" : "softplus_positive";
}

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

HeadActivation parse_head_activation(const std::string& s) {
    if (s == "identity") return HeadActivation::identity;
    if (s == "softplus_positive" || s == "softplus") return HeadActivation::softplus_positive;
    throw std::invalid_argument("unknown head activation '" + s + "'");
}

void MlpConfig::validate() const {
    if (layer_widths.size() < 2) throw std::invalid_argument("MlpConfig: need at least 2 layer widths");
    if (std::any_of(layer_widths.begin(), layer_widths.end(), [](std::size_t w) { return w == 0; }))
        throw std::invalid_argument("MlpConfig: widths must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
        throw std::invalid_argument("MlpConfig: dropout_p must be in [0, 1)");
    if (!head_activations.empty() && head_activations.size() != output_width())
        throw std::invalid_argument("MlpConfig: one head activation per output channel required");
}

MlpConfig NetShape::make(std::size_t input_width, std::vector<HeadActivation> heads) const {
    MlpConfig cfg;
    cfg.layer_widths.push_back(input_width);
    cfg.layer_widths.insert(cfg.layer_widths.end(), hidden.begin(), hidden.end());
    cfg.layer_widths.push_back(heads.size());
    cfg.activation = activation;
    cfg.head_activations = std::move(heads);
    cfg.dropout_p = dropout_p;
    cfg.validate();
    return cfg;
}

void ParameterStore::zero_grad() {
    for (auto& l : layers) {
        l.grad_weight.fill(0.0);
        std::fill(l.grad_bias.begin(), l.grad_bias.end(), 0.0);
    }
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

std::vector<double> ParameterStore::flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& l : layers) {
        out.insert(out.end(), l.weight.values().begin(), l.weight.values().end());
        out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
    return out;
}

std::vector<double> ParameterStore::flatten_grad() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& l : layers) {
        out.insert(out.end(), l.grad_weight.values().begin(), l.grad_weight.values().end());
        out.insert(out.end(), l.grad_bias.begin(), l.grad_bias.end());
    }
    return out;
}

void ParameterStore::assign(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw ShapeError("ParameterStore::assign: size mismatch");
    std::size_t pos = 0;
    for (auto& l : layers) {
        auto w = l.weight.values();
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), w.size(), w.begin());
        pos += w.size();
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(), l.bias.begin());
        pos += l.bias.size();
    }
}

namespace {

double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

DenseLayer make_layer(std::size_t fan_in, std::size_t fan_out) {
    return DenseLayer{Matrix(fan_in, fan_out), std::vector<double>(fan_out, 0.0), Matrix(fan_in, fan_out),
                      std::vector<double>(fan_out, 0.0)};
}

// out = x * W + b
Matrix affine(const Matrix& x, const DenseLayer& layer) {
    Matrix out = matmul(x, layer.weight);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
    }
    return out;
}

} // namespace

Mlp::Mlp(MlpConfig config, Rng& init_rng) : config_(std::move(config)) {
    config_.validate();
    if (config_.head_activations.empty())
        config_.head_activations.assign(config_.output_width(), HeadActivation::identity);
    const auto& w = config_.layer_widths;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        DenseLayer layer = make_layer(w[l], w[l + 1]);
        const double bound = config_.activation == Activation::relu
                                 ? std::sqrt(6.0 / static_cast<double>(w[l]))
                                 : std::sqrt(6.0 / static_cast<double>(w[l] + w[l + 1]));
        for (double& v : layer.weight.values()) v = init_rng.uniform(-bound, bound);
        params_.layers.push_back(std::move(layer));
    }
}

Mlp::Mlp(MlpConfig config, ParameterStore params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    if (config_.head_activations.empty())
        config_.head_activations.assign(config_.output_width(), HeadActivation::identity);
    const auto& w = config_.layer_widths;
    if (params_.layers.size() + 1 != w.size()) throw ShapeError("Mlp: layer count does not match config");
    for (std::size_t l = 0; l < params_.layers.size(); ++l) {
        auto& layer = params_.layers[l];
        if (layer.weight.rows() != w[l] || layer.weight.cols() != w[l + 1] || layer.bias.size() != w[l + 1])
            throw ShapeError("Mlp: parameter shape does not match config at layer " + std::to_string(l));
        layer.grad_weight = Matrix(w[l], w[l + 1]);
        layer.grad_bias.assign(w[l + 1], 0.0);
    }
}

Matrix Mlp::run(const Matrix& x, Mode mode, Rng* dropout_rng, Cache* cache) const {
    if (x.cols() != config_.input_width())
        throw ShapeError("Mlp: input has " + std::to_string(x.cols()) + " columns, expected " +
                         std::to_string(config_.input_width()));
    const bool drop = mode == Mode::train && config_.dropout_p > 0.0;
    if (drop && dropout_rng == nullptr) throw UsageError("Mlp: train-mode dropout needs an rng");
    const double keep_scale = 1.0 / (1.0 - config_.dropout_p);
    const std::size_t n_layers = params_.layers.size();

    if (cache) {
        cache->inputs.assign(n_layers, Matrix());
        cache->pre.assign(n_layers, Matrix());
        cache->masks.assign(n_layers, Matrix());
    }

    Matrix a = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
        Matrix z = affine(a, params_.layers[l]);
        if (cache) {
            cache->inputs[l] = std::move(a);
            cache->pre[l] = z;
        }
        if (l + 1 < n_layers) {
            for (double& v : z.values())
                v = config_.activation == Activation::relu ? std::max(v, 0.0) : std::tanh(v);
            if (drop) {
                Matrix mask(z.rows(), z.cols());
                for (double& m : mask.values()) m = dropout_rng->bernoulli(config_.dropout_p) ? 0.0 : keep_scale;
                for (std::size_t i = 0; i < z.size(); ++i) z.values()[i] *= mask.values()[i];
                if (cache) cache->masks[l] = std::move(mask);
            }
            a = std::move(z);
        } else {
            for (std::size_t r = 0; r < z.rows(); ++r) {
                auto row = z.row(r);
                for (std::size_t c = 0; c < row.size(); ++c)
                    if (config_.head_activations[c] == HeadActivation::softplus_positive)
                        row[c] = softplus(row[c]) + kVarianceFloor;
            }
            a = std::move(z);
        }
    }
    if (cache) cache->valid = true;
    return a;
}

Matrix Mlp::forward(const Matrix& x, Mode mode, Rng* dropout_rng) {
    if (mode == Mode::eval) {
        cache_.valid = false;
        return run(x, mode, nullptr, nullptr);
    }
    return run(x, mode, dropout_rng, &cache_);
}

Matrix Mlp::predict(const Matrix& x) const { return run(x, Mode::eval, nullptr, nullptr); }

void Mlp::backward(const Matrix& upstream_grad) {
    if (!cache_.valid) throw UsageError("Mlp::backward: no train-mode forward pass cached");
    const std::size_t n_layers = params_.layers.size();
    const Matrix& last_pre = cache_.pre.back();
    if (upstream_grad.rows() != last_pre.rows() || upstream_grad.cols() != last_pre.cols())
        throw UsageError("Mlp::backward: upstream gradient does not match the cached batch");

    Matrix g = upstream_grad;
    for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        auto pre = last_pre.row(r);
        for (std::size_t c = 0; c < row.size(); ++c)
            if (config_.head_activations[c] == HeadActivation::softplus_positive) row[c] *= sigmoid(pre[c]);
    }

    for (std::size_t l = n_layers; l-- > 0;) {
        auto& layer = params_.layers[l];
        const Matrix& a = cache_.inputs[l];
        // grad_W += a^T g ; grad_b += column sums of g
        for (std::size_t r = 0; r < a.rows(); ++r) {
            auto arow = a.row(r);
            auto grow = g.row(r);
            for (std::size_t i = 0; i < arow.size(); ++i) {
                const double ai = arow[i];
                if (ai == 0.0) continue;
                auto dst = layer.grad_weight.row(i);
                for (std::size_t j = 0; j < grow.size(); ++j) dst[j] += ai * grow[j];
            }
            for (std::size_t j = 0; j < grow.size(); ++j) layer.grad_bias[j] += grow[j];
        }
        if (l == 0) break;

        // g_prev = (g W^T) * mask * act'(pre)
        Matrix gp(g.rows(), layer.weight.rows());
        for (std::size_t r = 0; r < g.rows(); ++r) {
            auto grow = g.row(r);
            auto dst = gp.row(r);
            for (std::size_t i = 0; i < dst.size(); ++i) {
                auto wrow = layer.weight.row(i);
                double acc = 0.0;
                for (std::size_t j = 0; j < grow.size(); ++j) acc += grow[j] * wrow[j];
                dst[i] = acc;
            }
        }
        const Matrix& pre = cache_.pre[l - 1];
        const Matrix& mask = cache_.masks[l - 1];
        auto gv = gp.values();
        auto pv = pre.values();
        for (std::size_t i = 0; i < gv.size(); ++i) {
            if (!mask.empty()) gv[i] *= mask.values()[i];
            if (config_.activation == Activation::relu) {
                if (pv[i] <= 0.0) gv[i] = 0.0;
            } else {
                const double t = std::tanh(pv[i]);
                gv[i] *= 1.0 - t * t;
            }
        }
        g = std::move(gp);
    }
    cache_.valid = false;
}

void AdamWConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("AdamW: lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("AdamW: betas must be in [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("AdamW: eps must be > 0");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("AdamW: weight_decay must be >= 0");
}

AdamW::AdamW(AdamWConfig config, const ParameterStore& params) : config_(config) {
    config_.validate();
    for (const auto& l : params.layers) {
        m_w_.emplace_back(l.weight.rows(), l.weight.cols());
        v_w_.emplace_back(l.weight.rows(), l.weight.cols());
        m_b_.emplace_back(l.bias.size(), 0.0);
        v_b_.emplace_back(l.bias.size(), 0.0);
    }
}

void AdamW::step(ParameterStore& params) {
    if (params.layers.size() != m_w_.size()) throw ShapeError("AdamW: parameter store changed shape");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const double decay = 1.0 - config_.lr * config_.weight_decay;
    auto update = [&](std::span<double> theta, std::span<const double> grad, std::span<double> m,
                      std::span<double> v) {
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grad[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            theta[i] = theta[i] * decay - config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& layer = params.layers[l];
        update(layer.weight.values(), layer.grad_weight.values(), m_w_[l].values(), v_w_[l].values());
        update(layer.bias, layer.grad_bias, m_b_[l], v_b_[l]);
    }
    ++params.step;
}

void TrainSchedule::validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainSchedule: batch_size must be >= 1");
    if (early_stop_patience < 1) throw std::invalid_argument("TrainSchedule: patience must be >= 1");
    if (max_epochs < 1 && max_steps == 0) throw std::invalid_argument("TrainSchedule: no training budget");
}

TrainTrace fit(Mlp& net, const TrainingTask& task, const TrainSchedule& schedule, const AdamWConfig& opt,
               Rng& rng) {
    schedule.validate();
    const std::size_t n = task.train_rows();
    if (n == 0) throw std::invalid_argument("fit: empty training split");

    AdamW optimizer(opt, net.params());
    Rng order_rng = rng.split("shuffle");
    Rng dropout_rng = rng.split("dropout");

    TrainTrace trace;
    std::vector<double> best = net.params().flatten();
    trace.best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    bool stop = false;

    const std::size_t epochs = schedule.max_epochs == 0 ? std::numeric_limits<std::size_t>::max()
                                                        : schedule.max_epochs;

    auto evaluate = [&](std::size_t epoch) {
        EvalRecord rec;
        rec.epoch = epoch;
        rec.step = trace.steps;
        rec.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        rec.val_loss = task.validation_loss(net);
        loss_sum = 0.0;
        loss_count = 0;
        trace.evaluations.push_back(rec);
        if (!std::isfinite(rec.val_loss)) throw TrainingDiverged("validation loss is not finite", trace);
        if (rec.val_loss < trace.best_val_loss) {
            trace.best_val_loss = rec.val_loss;
            trace.best_evaluation = trace.evaluations.size() - 1;
            best = net.params().flatten();
            since_best = 0;
        } else if (++since_best >= schedule.early_stop_patience) {
            trace.early_stopped = true;
            stop = true;
        }
    };

    std::size_t epoch = 0;
    for (; epoch < epochs && !stop; ++epoch) {
        Rng batch_rng = rng.split("augment", epoch);
        const auto order = order_rng.permutation(n);
        for (std::size_t start = 0; start < n && !stop; start += schedule.batch_size) {
            const std::size_t len = std::min(schedule.batch_size, n - start);
            const std::span<const std::size_t> rows(order.data() + start, len);
            Batch batch = task.make_batch(rows, batch_rng);
            Matrix out = net.forward(batch.inputs, Mode::train, &dropout_rng);
            Matrix grad(out.rows(), out.cols());
            const double loss = task.loss(out, batch.targets, &grad);
            if (!std::isfinite(loss)) throw TrainingDiverged("training loss is not finite", trace);
            loss_sum += loss;
            ++loss_count;
            net.params().zero_grad();
            net.backward(grad);
            optimizer.step(net.params());
            ++trace.steps;
            if (schedule.eval_every > 0 && trace.steps % schedule.eval_every == 0) evaluate(epoch);
            if (schedule.max_steps > 0 && trace.steps >= schedule.max_steps) stop = true;
        }
        if (schedule.eval_every == 0 && !trace.early_stopped) evaluate(epoch);
    }
    if (!trace.early_stopped && (trace.evaluations.empty() || trace.evaluations.back().step != trace.steps))
        evaluate(epoch == 0 ? 0 : epoch - 1);
    net.params().assign(best);
    net.params().zero_grad();
    return trace;
}

double mse_loss(const Matrix& output, const Matrix& targets, Matrix* grad) {
    if (output.rows() != targets.rows() || output.cols() != targets.cols())
        throw ShapeError("mse_loss: shape mismatch");
    const double denom = static_cast<double>(output.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < output.size(); ++i) {
        const double d = output.values()[i] - targets.values()[i];
        sum += d * d;
        if (grad) grad->values()[i] = 2.0 * d / denom;
    }
    return sum / denom;
}

MseTask::MseTask(const DatasetTable& data) : data_(data), train_(data.indices(Split::train)) {
    const auto val = data.indices(Split::val);
    if (train_.empty()) throw std::invalid_argument("train_mse: empty train split");
    if (val.empty()) throw std::invalid_argument("train_mse: empty validation split");
    val_x_ = data.features.gather_rows(val);
    val_y_ = data.targets.gather_rows(val);
}

Batch MseTask::make_batch(std::span<const std::size_t> rows, Rng&) const {
    std::vector<std::size_t> idx(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) idx[i] = train_[rows[i]];
    return {data_.features.gather_rows(idx), data_.targets.gather_rows(idx)};
}

double MseTask::loss(const Matrix& output, const Matrix& targets, Matrix* grad) const {
    return mse_loss(output, targets, grad);
}

double MseTask::validation_loss(const Mlp& net) const { return mse_loss(net.predict(val_x_), val_y_, nullptr); }

TrainTrace train_mse(Mlp& net, const DatasetTable& data, const TrainSchedule& schedule, const AdamWConfig& opt,
                     Rng& rng) {
    MseTask task(data);
    return fit(net, task, schedule, opt, rng);
}

} // namespace uq
