#pragma once

// Variational objective: reconstruction, the two KL regularizers, the entropy
// of q(y | x), the supervised term log q(y_obs | x), and the training loop.
//
// Expectations over y follow q(y | x): exact enumeration over classes for
// classification, reparameterized samples for sequence regression. The
// observed label enters only through the supervised term.

#include "counts/model.hpp"

#include <functional>
#include <optional>

namespace counts {

struct McConfig {
    int n_y = 1;
    int n_u = 1;
    int n_z = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainConfig {
    int epochs = 60;
    int batch_size = 64;
    double learning_rate = 1e-3;
    double lambda_sup = 1.0;
    McConfig mc;
    std::uint64_t seed = 0;
    // Linear ramp of the KL weight from 0 to 1 over this many epochs (0: off).
    int kl_warmup_epochs = 0;

    void validate() const;
    double kl_weight(int epoch) const;
};

nlohmann::json to_json(const McConfig& c);
nlohmann::json to_json(const TrainConfig& c);
// Missing keys keep the defaults of `base`.
McConfig mc_from_json(const nlohmann::json& j, McConfig base = {});
TrainConfig train_from_json(const nlohmann::json& j, TrainConfig base = {});

struct LossBreakdown {
    double recon = 0.0;
    double kl_z = 0.0;
    double kl_u = 0.0;
    double ent_y = 0.0;
    double l_y = 0.0;
    double total = 0.0;

    double elbo() const { return recon - kl_z - kl_u + ent_y; }
};

// Closed-form KL of diagonal Gaussians, summed over all entries.
double gaussian_kl(const GaussianHead& a, const GaussianHead& b);
double categorical_entropy(const Vector& probs);
// Sum over entries of the differential entropy of N(mean, exp(log_var)).
double gaussian_entropy(const GaussianHead& h);
double gaussian_log_density(const Vector& y, const GaussianHead& h);

// Standard-normal draws for one objective evaluation over B instances.
// Column layout: y replicate k in [0, Y), u sample r, z sample s, instance i
//   y:   k*B + i                 (T x n_y*B, regression only)
//   u:   (r*Y + k)*B + i         (ul_dim / ug_dim rows)
//   z:   ((s*n_u + r)*Y + k)*B + i
// where Y = num_classes for classification and n_y for regression.
struct McNoise {
    Matrix y;
    Matrix u_l;
    Matrix u_g;
    Matrix z;
};

// Noise for instance i is drawn from a stream keyed by (seed, salt, content of
// x_i), so duplicated instances receive identical draws.
McNoise draw_noise(const ArchConfig& arch, const McConfig& mc, const Matrix& x_flat, std::uint64_t salt);

// Batch labels: classes or sequences (one column per instance).
struct Labels {
    std::vector<int> classes;
    Matrix sequences;
};
Labels labels_of(const ArchConfig& arch, const Examples& batch, std::size_t begin, std::size_t end);
Matrix inputs_of(const Examples& batch, std::size_t begin, std::size_t end);

namespace net {

struct LossGraph {
    ad::Var recon, kl_z, kl_u, ent_y, l_y, total;  // 1x1 batch means
};

// Plain variants reduce to total = -mean(l_y).
// `kl_weight` scales both KL terms inside `total` (the breakdown stays unweighted).
LossGraph build_loss(const Bound& b, ad::Var x, const Labels& labels, double lambda_sup, const McConfig& mc,
                     const McNoise& noise, double kl_weight = 1.0);

ad::Var gaussian_kl(const Head& a, const Head& b);  // 1 x B
ad::Var kl_to_standard(const Head& a);              // 1 x B

}  // namespace net

LossBreakdown elbo_terms(const ModelParams& params, const Matrix& x, const McConfig& mc);
double supervised_term(const ModelParams& params, const Matrix& x, int label, const Vector& sequence = Vector());
LossBreakdown loss(const ModelParams& params, const Examples& batch, const TrainConfig& cfg);
// Gradient of loss(params, batch, cfg).total with the same noise, one matrix per tensor.
std::vector<Matrix> loss_gradient(const ModelParams& params, const Examples& batch, const TrainConfig& cfg);

class Adam {
public:
    explicit Adam(const ModelParams& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(ModelParams& params, const std::vector<Matrix>& grads);

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Matrix> m_, v_;
};

struct TrainResult {
    ModelParams params;
    std::vector<LossBreakdown> history;  // per epoch, mean over steps
    std::vector<double> val_metric;      // per epoch; NaN without a validator
};

// Initialization used by `train`: seeded weights plus the training-set input mean and spread.
ModelParams initial_params(const Examples& data, const ArchConfig& arch, const TrainConfig& cfg);

using Validator = std::function<double(const ModelParams&)>;
TrainResult train(const Examples& data, const ArchConfig& arch, const TrainConfig& cfg,
                  const Validator& validator = nullptr);

}  // namespace counts
