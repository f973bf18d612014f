#pragma once

// Prediction accuracy / MSE, counterfactual accuracy / MSE and the
// counterfactual change ratio (CCR) in its masked and segment-pair forms.

#include "counts/counterfactual.hpp"
#include "counts/model.hpp"
#include "counts/synthgen.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace counts {

// Sequence MSE normalization: squared error averaged over time steps, or the
// per-instance squared L2 norm summed over steps.
enum class MseNorm { kPerStep, kPerInstance };

std::string to_string(MseNorm n);
MseNorm mse_norm_from_string(const std::string& s);

struct MetricOptions {
    double eps_denom = 1e-8;
    int shift = 20;
    double threshold = 0.5;
    MseNorm mse_norm = MseNorm::kPerStep;

    void validate() const;
};

nlohmann::json to_json(const MetricOptions& o);
MetricOptions metric_options_from_json(const nlohmann::json& j, MetricOptions base = {});

double sequence_error(const Vector& a, const Vector& b, MseNorm norm);

// Accuracy of argmax predictions, or mean sequence error.
double prediction_metric(const std::vector<Prediction>& predictions, const Examples& test, MseNorm norm);
double prediction_metric(const ModelParams& model, const Examples& test, MseNorm norm = MseNorm::kPerStep);

// `achieved[i]` is the model's output at x_cf of explanation i.
double counterfactual_metric(const std::vector<OutputDist>& achieved, const std::vector<CfTarget>& targets,
                             MseNorm norm);
double counterfactual_metric(const std::function<OutputDist(const Matrix&)>& f, const std::vector<Matrix>& x_cf,
                             const std::vector<CfTarget>& targets, MseNorm norm = MseNorm::kPerStep);

// |mask .* (x - x_cf)|_1 / (|(1 - mask) .* (x - x_cf)|_1 + eps_denom).
double ccr_masked(const Matrix& x, const Matrix& x_cf, const Matrix& mask, double eps_denom);
// |x2 - x2_cf|_1 / (|x1 - x1_cf|_1 + eps_denom).
double ccr_pair(const Matrix& x1, const Matrix& x2, const Matrix& x1_cf, const Matrix& x2_cf, double eps_denom);

// Binarize at `threshold`, shift right by `shift` steps with zero fill, truncate.
Vector spike_cf_target(const Vector& y_pred, int shift = 20, double threshold = 0.5);

// Counterfactual targets for the examples `ids` of `ds`, given predictions for
// every example. Toy: `target_class` if set, else the next class after the
// prediction. Pairs: the first segment (even id) keeps its own prediction and the
// second is handled like toy. Spike: spike_cf_target of the predicted sequence.
std::vector<CfTarget> default_targets(const synth::Dataset& ds, const std::vector<Prediction>& predictions,
                                      const std::vector<std::size_t>& ids, std::optional<int> target_class,
                                      const MetricOptions& opt = {});

// m_mask repeated over T steps (D x T); the toy mask as a 1 x 12 matrix.
Matrix spike_mask(const std::vector<int>& m_mask, int T);
Matrix toy_mask_matrix();

struct MetricsReport {
    Task task = Task::kClassification;
    double prediction = 0.0;      // accuracy or MSE
    double counterfactual = 0.0;  // accuracy or MSE
    double ccr = 0.0;
    std::string ccr_variant;  // toy_masked | spike_masked | pair
    std::optional<double> ccr_1_active;
    std::optional<double> ccr_2_active;
    std::size_t n_evaluated = 0;
    std::size_t n_skipped_degenerate = 0;

    nlohmann::json to_json() const;
};

// One explanation as seen by the evaluator.
struct EvalItem {
    std::size_t id = 0;  // index into to_examples(dataset)
    Matrix x_cf;
    CfTarget target;
    OutputDist achieved;  // f(x_cf)
};

MetricsReport evaluate(const synth::Dataset& ds, const std::vector<Prediction>& predictions,
                       const std::vector<EvalItem>& items, const MetricOptions& opt = {});

}  // namespace counts
