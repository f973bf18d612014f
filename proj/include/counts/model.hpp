#pragma once

// Generative networks p(z | x, u_l, u_g), p(y | u_l, u_g, z) and inference
// networks q(y | x), q(u_l, u_g, z | x, y), plus mean-propagation prediction.
//
// Two backbones exist. `dense` flattens the input and uses two-hidden-layer
// perceptrons for every factor (toy data). `temporal` runs two stride-2
// temporal convolutions (T_mid = T_in / 4) before per-head layers; u_g is a
// temporal mean pool (spike data). The `plain` variant carries only q(y | x)
// and serves as the ordinary predictor attacked by the RGD baseline.

#include "counts/autodiff.hpp"
#include "counts/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace counts {

enum class Backbone { kDense, kTemporal };
enum class Activation { kTanh, kIdentity };
enum class Variant { kCounts, kPlain };

inline constexpr double kLogVarMin = -8.0;
inline constexpr double kLogVarMax = 8.0;

struct ArchConfig {
    int D = 1;
    int T_in = 12;
    int T_mid = 1;
    int H_z = 8;
    int H_l = 2;
    int H_g = 2;
    int hidden = 64;
    int conv_channels = 16;
    int kernel = 5;
    Task task = Task::kClassification;
    int num_classes = 2;
    Backbone backbone = Backbone::kDense;
    Activation activation = Activation::kTanh;
    Variant variant = Variant::kCounts;
    // Initial bias of every latent log-variance output.
    double latent_log_var_init = -4.0;

    void validate() const;
    bool classification() const { return task == Task::kClassification; }
    int input_dim() const { return D * T_in; }
    // Width of the label encoding fed to q(u, z | x, y): one-hot or the sequence.
    int label_dim() const { return classification() ? num_classes : T_in; }
    // Rows of a raw output layer: logits, or mean and log-variance per step.
    int output_dim() const { return classification() ? num_classes : 2 * T_in; }
    int ul_dim() const { return H_l * T_mid; }
    int ug_dim() const { return H_g; }
    int z_dim() const { return H_z * T_mid; }

    bool operator==(const ArchConfig&) const = default;
};

ArchConfig toy_arch();
ArchConfig spike_arch();

nlohmann::json to_json(const ArchConfig& a);
ArchConfig arch_from_json(const nlohmann::json& j);

std::string to_string(Task t);
Task task_from_string(const std::string& s);

struct GaussianHead {
    Matrix mean;
    Matrix log_var;

    void validate() const;
};

struct OutputDist {
    Task task = Task::kClassification;
    Vector probs;        // classification
    GaussianHead gauss;  // regression, T x 1

    void validate() const;
    // Argmax class or mean sequence.
    int argmax() const;
    Vector mean() const { return gauss.mean.col(0); }
};

struct LatentSample {
    Matrix u_l;  // H_l x T_mid
    Vector u_g;  // H_g
    Matrix z;    // H_z x T_mid
};

struct LatentHeads {
    GaussianHead u_l;
    GaussianHead u_g;
    GaussianHead z;
};

struct Prediction {
    int label = -1;   // classification
    Vector sequence;  // regression: mean of p(y | u, z)
    OutputDist dist;
};

class ModelParams {
public:
    ModelParams() = default;
    // Glorot-uniform weights, zero biases; deterministic in `seed`.
    ModelParams(const ArchConfig& arch, std::uint64_t seed);

    const ArchConfig& arch() const { return arch_; }

    struct Tensor {
        std::string name;
        Matrix value;
    };
    const std::vector<Tensor>& tensors() const { return tensors_; }
    std::vector<Tensor>& tensors() { return tensors_; }
    const Matrix& get(const std::string& name) const;
    Matrix& get(const std::string& name);
    std::size_t index_of(const std::string& name) const;
    std::size_t parameter_count() const;

    // Non-trainable per-(channel, step) input centering, D x T_in. Subtracted
    // from every input before the first layer.
    const Matrix& input_offset() const { return input_offset_; }
    void set_input_offset(Matrix offset);
    // Non-trainable positive divisor applied after centering.
    double input_scale() const { return input_scale_; }
    void set_input_scale(double scale);

    void check_finite() const;
    bool operator==(const ModelParams& o) const;

private:
    void add(const std::string& name, Eigen::Index rows, Eigen::Index cols);

    ArchConfig arch_;
    std::vector<Tensor> tensors_;
    Matrix input_offset_;
    double input_scale_ = 1.0;

    friend ModelParams load_model(const std::filesystem::path&);
};

// Per-(channel, step) mean of the inputs.
Matrix input_mean(const Examples& data);
// Root mean square of the inputs after subtracting `mean`; 1 if that is zero.
double input_spread(const Examples& data, const Matrix& mean);

// D x T <-> (D*T) column, row c*T + t.
Vector flatten(const Matrix& x);
Matrix unflatten(const Vector& v, int channels, int steps);

// One-hot class or the label sequence, as fed to q(u, z | x, y).
Vector encode_label(const ArchConfig& arch, int label, const Vector& sequence);

OutputDist q_y(const ModelParams& params, const Matrix& x);
LatentHeads q_latents(const ModelParams& params, const Matrix& x, const Vector& y_encoded);
GaussianHead p_z(const ModelParams& params, const Matrix& x, const Matrix& u_l, const Vector& u_g);
OutputDist p_y(const ModelParams& params, const Matrix& u_l, const Vector& u_g, const Matrix& z);
Matrix reparam_sample(const GaussianHead& head, const Matrix& noise);

Prediction predict(const ModelParams& params, const Matrix& x);
std::vector<Prediction> predict_batch(const ModelParams& params, const Examples& data);

// Model file: magic "CNTSMDL\0", u32 version, u32-prefixed ArchConfig JSON,
// input offset matrix, input scale as a 1 x 1 matrix, then u32 tensor count and
// per tensor: u32-prefixed name, u32
// rows, u32 cols, rows*cols little-endian f64 in column-major order.
inline constexpr std::uint32_t kModelVersion = 1;
void save_model(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

namespace net {

// Model tensors placed on a tape, either as constants or trainable leaves.
class Bound {
public:
    Bound(ad::Tape& tape, const ModelParams& params, bool trainable);

    ad::Var operator[](const std::string& name) const;
    const std::vector<ad::Var>& vars() const { return vars_; }
    const ModelParams& params() const { return *params_; }
    const ArchConfig& arch() const { return params_->arch(); }
    ad::Tape& tape() const { return *tape_; }

private:
    ad::Tape* tape_;
    const ModelParams* params_;
    std::vector<ad::Var> vars_;
};

struct Head {
    ad::Var mean;
    ad::Var log_var;  // clamped
};

struct Latents {
    Head u_l;
    Head u_g;
    Head z;
};

// Inputs are flattened (D*T_in) x B columns of raw (uncentered) series.
ad::Var q_y_raw(const Bound& b, ad::Var x);
Latents q_latents(const Bound& b, ad::Var x, ad::Var y_encoded);
// `x` may have one column while the latents have B; features are broadcast.
Head p_z(const Bound& b, ad::Var x, ad::Var u_l, ad::Var u_g);
ad::Var p_y_raw(const Bound& b, ad::Var u_l, ad::Var u_g, ad::Var z);

// Splits a raw regression output (2n rows) into a clamped Gaussian head.
Head split_head(ad::Var raw);
ad::Var sample(const Head& h, ad::Var noise);

OutputDist to_output(const ArchConfig& arch, const Matrix& raw, Eigen::Index col);

}  // namespace net

}  // namespace counts
