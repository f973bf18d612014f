#pragma once

// Counterfactual explanation search by abduction, action and prediction.
//
// Abduction samples the exogenous variables from q(u_l, u_g | x, y_pred) once.
// Action replaces the input by x'. Prediction evaluates p(y | do(x'), u) as the
// average of p(y | z, u) over z ~ p(z | x', u); x' never passes through the
// inference networks. The search descends the discrepancy between that
// prediction and the target with u and the z noise frozen.

#include "counts/model.hpp"

#include <functional>
#include <string>

namespace counts {

struct ExplainConfig {
    int m_u = 8;
    int n_z = 8;
    double step_size = 0.01;
    double epsilon = 0.05;
    int max_iters = 500;
    std::uint64_t seed = 0;
    double l1_weight = 0.1;  // RGD only

    void validate() const;
};

nlohmann::json to_json(const ExplainConfig& c);
ExplainConfig explain_from_json(const nlohmann::json& j, ExplainConfig base = {});

// Defaults per task. The spike preset takes larger steps because the per-step
// squared error has much smaller input gradients than the toy cross-entropy.
ExplainConfig toy_explain_config();
ExplainConfig spike_explain_config();

// Counterfactual label: a class or a target sequence.
struct CfTarget {
    int label = -1;
    Vector sequence;
};

struct ExplanationResult {
    Matrix x_cf;
    CfTarget y_target;
    OutputDist y_achieved;
    int iterations = 0;
    double final_discrepancy = 0.0;
    bool converged = false;
};

struct IterationState {
    int iteration;
    const Matrix& x;
    double discrepancy;
    std::uint64_t exogenous_digest;  // 0 when no exogenous variables are held
};
using IterationObserver = std::function<void(const IterationState&)>;

// m_u reparameterized draws of (u_l, u_g) from q(u | x, y); `z` is left empty.
std::vector<LatentSample> abduct(const ModelParams& params, const Matrix& x, const Vector& y_encoded, int m_u,
                                 std::uint64_t seed);
// Label encoding of the model's own prediction at x (argmax class or mean sequence).
Vector predicted_encoding(const ModelParams& params, const Matrix& x);

// Frozen standard-normal z noise, z_dim x (m_u * n_z); column r*n_z + s pairs
// u sample r with z draw s.
Matrix z_noise(const ArchConfig& arch, int m_u, int n_z, std::uint64_t seed);

// Average over the n_z columns of `noise` (z_dim x n_z) of p(y | z, u), z ~ p(z | x', u).
OutputDist interventional_y(const ModelParams& params, const Matrix& x_prime, const LatentSample& u, int n_z,
                            const Matrix& noise);

// Mean over u samples of the interventional mass (classification) or density
// (regression) at y_cf.
double cf_likelihood(const ModelParams& params, const Matrix& x_prime, const std::vector<LatentSample>& u_samples,
                     const Matrix& noise, const CfTarget& y_cf);
double log_cf_likelihood(const ModelParams& params, const Matrix& x_prime,
                         const std::vector<LatentSample>& u_samples, const Matrix& noise, const CfTarget& y_cf);

class CounterfactualObjective {
public:
    CounterfactualObjective(const ModelParams& params, std::vector<LatentSample> u_samples, Matrix noise, int n_z,
                            CfTarget target);

    // Discrepancy d(x') and optionally its gradient with respect to x' (D x T).
    double evaluate(const Matrix& x_prime, Matrix* grad = nullptr) const;
    // MC interventional output at x', averaged over all (u, z) draws.
    OutputDist prediction(const Matrix& x_prime) const;
    double likelihood(const Matrix& x_prime) const;
    double log_likelihood(const Matrix& x_prime) const;

    const std::vector<LatentSample>& u_samples() const { return u_; }
    const Matrix& noise() const { return noise_; }
    std::uint64_t exogenous_digest() const;

private:
    ad::Var raw_output(ad::Tape& tape, ad::Var x_flat) const;

    const ModelParams* params_;
    std::vector<LatentSample> u_;
    Matrix noise_;
    int n_z_;
    CfTarget target_;
    Matrix ul_cols_, ug_cols_;
};

// Descent loop shared by both explainers: x <- x - step * grad until d < eps or
// max_iters. With l1_weight > 0 the penalty l1 * |x - anchor|_1 is handled
// coordinate-wise: a coordinate at its anchor moves only when |g| > l1, and a
// step crossing the anchor stops on it.
using Discrepancy = std::function<double(const Matrix& x, Matrix* grad)>;
struct DescentOutcome {
    Matrix x;
    int iterations = 0;
    double discrepancy = 0.0;
    bool converged = false;
};
DescentOutcome descend(const Discrepancy& d, const Matrix& x0, const ExplainConfig& cfg, double l1_weight,
                       const std::function<void(int, const Matrix&, double)>& observer = nullptr);

ExplanationResult explain(const ModelParams& params, const Matrix& x, const CfTarget& y_cf, const ExplainConfig& cfg,
                          const IterationObserver& observer = nullptr);

// Differentiable predictor for RGD: raw output (logits, or mean and log-variance rows).
using GraphPredictor = std::function<ad::Var(const net::Bound&, ad::Var x_flat)>;
// q(y | x) of a plain (or CounTS) model.
GraphPredictor direct_predictor();
// Mean-propagation path of a CounTS model (prediction class held fixed).
GraphPredictor mean_path_predictor();

ExplanationResult rgd_explain(const ModelParams& params, const GraphPredictor& f, const Matrix& x,
                              const CfTarget& y_cf, const ExplainConfig& cfg,
                              const IterationObserver& observer = nullptr);

// Discrepancy between a raw output column and the target: cross-entropy or
// per-step mean squared error of the mean.
double output_discrepancy(const ArchConfig& arch, const OutputDist& out, const CfTarget& target);

// Per-instance seed used by batch explanation.
std::uint64_t instance_seed(std::uint64_t seed, std::uint64_t id);

enum class Method { kCounts, kRgd };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

// Explains data[ids[i]] towards targets[i] in parallel; instance i uses
// instance_seed(cfg.seed, ids[i]). RGD attacks q(y | x) of a plain model and
// the mean-propagation path of a CounTS model.
std::vector<ExplanationResult> explain_batch(const ModelParams& params, const Examples& data,
                                             const std::vector<std::size_t>& ids,
                                             const std::vector<CfTarget>& targets, Method method,
                                             const ExplainConfig& cfg);

}  // namespace counts
