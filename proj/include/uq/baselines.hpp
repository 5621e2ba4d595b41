#pragma once

#include "uq/data.hpp"
#include "uq/io.hpp"
#include "uq/nn.hpp"
#include "uq/posthoc.hpp"

#include <memory>
#include <vector>

namespace uq {

// Joint Gaussian NLL over a two-block output [mu_1..mu_K, var_1..var_K].
double joint_gauss_nll(const Matrix& output, const Matrix& targets, Matrix* grad);

class JointNllTask : public TrainingTask {
public:
    explicit JointNllTask(const DatasetTable& data);
    std::size_t train_rows() const override { return train_.size(); }
    Batch make_batch(std::span<const std::size_t> rows, Rng& rng) const override;
    double loss(const Matrix& output, const Matrix& targets, Matrix* grad) const override;
    double validation_loss(const Mlp& net) const override;

private:
    const DatasetTable& data_;
    std::vector<std::size_t> train_;
    Matrix val_x_, val_y_;
};

struct EnsembleModel {
    std::vector<Mlp> members;
    std::vector<std::uint64_t> member_seeds;
    Standardizer standardizer;

    std::size_t size() const { return members.size(); }
};

struct EnsembleFit {
    EnsembleModel model;
    std::vector<TrainTrace> traces;
};

// Member i is seeded from rng.split("member", i).
EnsembleFit train_ensemble(const DatasetTable& data, std::size_t members, const NetShape& shape,
                           const TrainSchedule& schedule, const AdamWConfig& opt, Rng& rng);
EnsembleFit train_ensemble(const DatasetTable& data, const std::vector<std::uint64_t>& member_seeds,
                           const NetShape& shape, const TrainSchedule& schedule, const AdamWConfig& opt);

// Standardized target units.
struct EnsemblePrediction {
    Matrix mean;
    Matrix variance;   // mixture variance
    Matrix epistemic;  // spread of member means alone
};

EnsemblePrediction ensemble_predict(const EnsembleModel& e, const Matrix& x);

PosthocFit fit_output_only_baseline(std::shared_ptr<const BaseModel> base, const Probe& probe,
                                    const NetShape& aux_shape, HeadKind head, const TrainSchedule& schedule,
                                    const AdamWConfig& opt, Rng& rng);

json to_json(const EnsembleModel& e);
EnsembleModel ensemble_from_json(const json& j);

} // namespace uq
