#pragma once

#include "uq/data.hpp"
#include "uq/io.hpp"
#include "uq/nn.hpp"

#include <memory>
#include <string>
#include <vector>

namespace uq {

enum class ConditioningMode { input_only, output_only, hybrid };
enum class HeadKind { gaussian, gengauss };

std::string to_string(ConditioningMode m);
std::string to_string(HeadKind h);
ConditioningMode parse_conditioning_mode(const std::string& s);
HeadKind parse_head_kind(const std::string& s);

// A frozen MSE-trained point predictor. Inputs and outputs are in the
// standardized units of its standardizer.
struct BaseModel {
    std::string name;
    Mlp net;
    Standardizer standardizer;
    std::uint64_t seed = 0;

    Matrix predict(const Matrix& x) const { return net.predict(x); }
};

json to_json(const BaseModel& base);
BaseModel base_model_from_json(const json& j);
std::string base_checkpoint_hash(const BaseModel& base);

std::size_t aux_input_width(ConditioningMode mode, std::size_t input_width, std::size_t output_width);
std::vector<HeadActivation> aux_heads(HeadKind head, std::size_t output_width);
Matrix conditioning_input(ConditioningMode mode, const Matrix& x, const Matrix& f);

// Decoded auxiliary output, standardized target units. alpha/beta are only
// filled for the generalized Gaussian head.
struct HeadOutput {
    Matrix variance;
    Matrix alpha;
    Matrix beta;
};

HeadOutput decode_head(HeadKind head, const Matrix& raw, std::size_t output_width);

// Mean over rows of the NLL summed over channels, with the mean prediction
// held fixed: residual = f(x) - y carries no gradient. Writes dLoss/dRaw.
double detached_nll(HeadKind head, const Matrix& raw, const Matrix& residual, Matrix* grad);

struct PosthocModel {
    std::shared_ptr<const BaseModel> base;
    Mlp aux;
    ConditioningMode mode = ConditioningMode::hybrid;
    HeadKind head = HeadKind::gaussian;
    std::string base_hash;
    json probe;
};

struct PosthocFit {
    PosthocModel model;
    TrainTrace trace;
};

PosthocFit fit_posthoc(std::shared_ptr<const BaseModel> base, const Probe& probe, const NetShape& aux_shape,
                       ConditioningMode mode, HeadKind head, const TrainSchedule& schedule,
                       const AdamWConfig& opt, Rng& rng);

// g(x, f(x)) evaluated in eval mode.
HeadOutput predict_head(const PosthocModel& m, const Matrix& x);
Matrix predict_variance(const PosthocModel& m, const Matrix& x);

// g(x_input, f(x_for_base)). Output-only models ignore x_input.
HeadOutput predict_head_counterfactual(const PosthocModel& m, const Matrix& x_input, const Matrix& x_for_base);
Matrix predict_counterfactual(const PosthocModel& m, const Matrix& x_input, const Matrix& x_for_base);

struct EpistemicDiagnostics {
    std::vector<double> manifold_lo;   // per output channel, over f(train_x)
    std::vector<double> manifold_hi;
    std::vector<double> distances;     // per eval row, Euclidean distance to the box
    std::vector<double> excess_variance;  // per eval row, predicted minus ID-mean variance
    double id_mean_variance = 0.0;
    double lambda_fit = 0.0;  // least-squares slope through the origin of excess vs distance
};

EpistemicDiagnostics epistemic_diagnostics(const PosthocModel& m, const Matrix& train_x, const Matrix& eval_x);

json to_json(const PosthocModel& m);
// Throws DataError if the checkpoint was fit against a different base unless
// allow_base_mismatch is set.
PosthocModel posthoc_from_json(const json& j, std::shared_ptr<const BaseModel> base,
                               bool allow_base_mismatch = false);

} // namespace uq
