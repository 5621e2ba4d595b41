#pragma once

#include "uq/numerics.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uq {

struct DatasetTable;

enum class Activation { relu, tanh };
enum class HeadActivation { identity, softplus_positive };
enum class Mode { train, eval };

// Added to every softplus_positive head output.
inline constexpr double kVarianceFloor = 1e-6;

std::string to_string(Activation a);
std::string to_string(HeadActivation h);
Activation parse_activation(const std::string& s);
HeadActivation parse_head_activation(const std::string& s);

struct MlpConfig {
    std::vector<std::size_t> layer_widths;  // input, hidden..., output
    Activation activation = Activation::relu;
    std::vector<HeadActivation> head_activations;  // one per output channel
    double dropout_p = 0.0;

    std::size_t input_width() const { return layer_widths.front(); }
    std::size_t output_width() const { return layer_widths.back(); }
    void validate() const;

    friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

// Hidden-layer layout shared by base, auxiliary and ensemble networks; the
// input and output widths are filled in where the network is built.
struct NetShape {
    std::vector<std::size_t> hidden{100, 100, 100};
    Activation activation = Activation::relu;
    double dropout_p = 0.0;

    MlpConfig make(std::size_t input_width, std::vector<HeadActivation> heads) const;
};

struct DenseLayer {
    Matrix weight;  // fan_in x fan_out
    std::vector<double> bias;
    Matrix grad_weight;
    std::vector<double> grad_bias;
};

struct ParameterStore {
    std::vector<DenseLayer> layers;
    std::uint64_t step = 0;

    void zero_grad();
    std::size_t parameter_count() const;
    // Flat views over every parameter / gradient, layer by layer (weights then bias).
    std::vector<double> flatten() const;
    std::vector<double> flatten_grad() const;
    void assign(std::span<const double> flat);
};

class Mlp {
public:
    Mlp(MlpConfig config, Rng& init_rng);
    Mlp(MlpConfig config, ParameterStore params);

    const MlpConfig& config() const { return config_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    // Train mode caches activations for backward(); dropout draws from rng.
    Matrix forward(const Matrix& x, Mode mode, Rng* dropout_rng = nullptr);
    // Eval-mode forward pass without touching the cache; safe for shared readers.
    Matrix predict(const Matrix& x) const;
    // Accumulates dLoss/dParams given dLoss/dOutput of the last train-mode forward.
    void backward(const Matrix& upstream_grad);

private:
    struct Cache {
        std::vector<Matrix> inputs;  // input to each layer
        std::vector<Matrix> pre;     // pre-activation of each layer
        std::vector<Matrix> masks;   // inverted-dropout scale per hidden layer (empty if unused)
        bool valid = false;
    };

    Matrix run(const Matrix& x, Mode mode, Rng* dropout_rng, Cache* cache) const;

    MlpConfig config_;
    ParameterStore params_;
    Cache cache_;
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    void validate() const;
};

class AdamW {
public:
    AdamW(AdamWConfig config, const ParameterStore& params);
    void step(ParameterStore& params);
    std::uint64_t steps_taken() const { return t_; }

private:
    AdamWConfig config_;
    std::vector<Matrix> m_w_, v_w_;
    std::vector<std::vector<double>> m_b_, v_b_;
    std::uint64_t t_ = 0;
};

struct TrainSchedule {
    std::size_t max_epochs = 100;
    std::size_t batch_size = 128;
    std::size_t early_stop_patience = 8;
    std::size_t eval_every = 0;  // update steps between evaluations; 0 = once per epoch
    std::uint64_t max_steps = 0;  // 0 = bounded by max_epochs only

    void validate() const;
};

struct EvalRecord {
    std::size_t epoch = 0;
    std::uint64_t step = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainTrace {
    std::vector<EvalRecord> evaluations;
    std::size_t best_evaluation = 0;
    double best_val_loss = 0.0;
    std::uint64_t steps = 0;
    bool early_stopped = false;
};

struct TrainingDiverged : std::runtime_error {
    TrainingDiverged(const std::string& what, TrainTrace t)
        : std::runtime_error(what), trace(std::move(t)) {}
    TrainTrace trace;
};

struct Batch {
    Matrix inputs;
    Matrix targets;
};

// A minibatch objective over a fixed set of training rows.
class TrainingTask {
public:
    virtual ~TrainingTask() = default;
    virtual std::size_t train_rows() const = 0;
    virtual Batch make_batch(std::span<const std::size_t> rows, Rng& rng) const = 0;
    // Mean loss over the batch; writes dLoss/dOutput into grad when non-null.
    virtual double loss(const Matrix& output, const Matrix& targets, Matrix* grad) const = 0;
    virtual double validation_loss(const Mlp& net) const = 0;
};

// Shuffled minibatch AdamW with evaluation-based early stopping. On return the
// network holds the parameters of the best evaluation.
TrainTrace fit(Mlp& net, const TrainingTask& task, const TrainSchedule& schedule,
               const AdamWConfig& opt, Rng& rng);

class MseTask : public TrainingTask {
public:
    explicit MseTask(const DatasetTable& data);
    std::size_t train_rows() const override { return train_.size(); }
    Batch make_batch(std::span<const std::size_t> rows, Rng& rng) const override;
    double loss(const Matrix& output, const Matrix& targets, Matrix* grad) const override;
    double validation_loss(const Mlp& net) const override;

private:
    const DatasetTable& data_;
    std::vector<std::size_t> train_;
    Matrix val_x_, val_y_;
};

double mse_loss(const Matrix& output, const Matrix& targets, Matrix* grad);

TrainTrace train_mse(Mlp& net, const DatasetTable& data, const TrainSchedule& schedule,
                     const AdamWConfig& opt, Rng& rng);

} // namespace uq
