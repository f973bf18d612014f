#include "counts/error.hpp"
#include "counts/model.hpp"

namespace counts::net {

using ad::Var;

namespace {

Var act(const ArchConfig& a, Var v) { return a.activation == Activation::kTanh ? ad::tanh(v) : ad::identity(v); }

Var dense(const Bound& b, const std::string& name, Var in) {
    return ad::add_bias(ad::matmul(b[name + ".W"], in), b[name + ".b"]);
}

Var mlp(const Bound& b, const std::string& net, Var in) {
    const ArchConfig& a = b.arch();
    Var h = act(a, dense(b, net + ".0", in));
    h = act(a, dense(b, net + ".1", h));
    return dense(b, net + ".2", h);
}

Var pointwise(const Bound& b, const std::string& name, Var in, int c_in, int steps) {
    return ad::conv1d(in, b[name + ".W"], b[name + ".b"], c_in, steps, 1, 1, 0);
}

// Two stride-2 convolutions: (c_in * T_in) rows -> (C * T_mid) rows.
Var extract(const Bound& b, const std::string& net, Var in, int c_in) {
    const ArchConfig& a = b.arch();
    const int pad = a.kernel / 2;
    const int t1 = ad::conv_out_len(a.T_in, a.kernel, 2, pad);
    Var h = act(a, ad::conv1d(in, b[net + ".c0.W"], b[net + ".c0.b"], c_in, a.T_in, a.kernel, 2, pad));
    return act(a, ad::conv1d(h, b[net + ".c1.W"], b[net + ".c1.b"], a.conv_channels, t1, a.kernel, 2, pad));
}

Var center(const Bound& b, Var x) {
    const ArchConfig& a = b.arch();
    if (x.rows() != a.input_dim()) throw ShapeError("input has " + std::to_string(x.rows()) + " rows, expected " +
                                                    std::to_string(a.input_dim()));
    const Vector offset = flatten(b.params().input_offset());
    return ad::scale(ad::add_bias(x, b.tape().constant(-offset)), 1.0 / b.params().input_scale());
}

Var broadcast(Var a, Eigen::Index cols) {
    if (a.cols() == cols) return a;
    if (a.cols() != 1) throw ShapeError("cannot broadcast " + std::to_string(a.cols()) + " columns");
    return ad::tile_cols(a, static_cast<int>(cols));
}

Head split(Var raw, Eigen::Index n) {
    return Head{ad::rows(raw, 0, n), ad::clamp(ad::rows(raw, n, n), kLogVarMin, kLogVarMax)};
}

void require_rows(Var v, Eigen::Index rows, const char* what) {
    if (v.rows() != rows)
        throw ShapeError(std::string(what) + " has " + std::to_string(v.rows()) + " rows, expected " +
                         std::to_string(rows));
}

}  // namespace

Bound::Bound(ad::Tape& tape, const ModelParams& params, bool trainable) : tape_(&tape), params_(&params) {
    vars_.reserve(params.tensors().size());
    for (const auto& t : params.tensors()) vars_.push_back(trainable ? tape.variable(t.value) : tape.constant(t.value));
}

Var Bound::operator[](const std::string& name) const { return vars_[params_->index_of(name)]; }

Head split_head(Var raw) {
    if (raw.rows() % 2 != 0) throw ShapeError("raw Gaussian output needs an even row count");
    return split(raw, raw.rows() / 2);
}

Var sample(const Head& h, Var noise) {
    if (noise.rows() != h.mean.rows() || noise.cols() != h.mean.cols())
        throw ShapeError("noise shape does not match head");
    return h.mean + ad::exp(ad::scale(h.log_var, 0.5)) * noise;
}

Var q_y_raw(const Bound& b, Var x) {
    const ArchConfig& a = b.arch();
    Var xc = center(b, x);
    if (a.backbone == Backbone::kDense) return mlp(b, "q_y", xc);
    Var f = extract(b, "q_y", xc, a.D);
    Var h = act(a, dense(b, "q_y.h", f));
    return dense(b, "q_y.o", h);
}

Latents q_latents(const Bound& b, Var x, Var y_encoded) {
    const ArchConfig& a = b.arch();
    if (a.variant != Variant::kCounts) throw ConfigError("plain predictor has no latent networks");
    require_rows(y_encoded, a.label_dim(), "label encoding");
    Var xc = center(b, x);
    Var y = broadcast(y_encoded, xc.cols());
    xc = broadcast(xc, y.cols());
    if (a.backbone == Backbone::kDense) {
        Var raw = mlp(b, "q_lat", ad::vcat({xc, y}));
        const Eigen::Index nl = a.ul_dim(), ng = a.ug_dim(), nz = a.z_dim();
        return Latents{split_head(ad::rows(raw, 0, 2 * nl)), split_head(ad::rows(raw, 2 * nl, 2 * ng)),
                       split_head(ad::rows(raw, 2 * (nl + ng), 2 * nz))};
    }
    // Classification labels become constant extra channels; a sequence is one channel.
    Var ych = a.classification() ? ad::repeat_time(y, a.T_in) : y;
    const int c_in = a.D + (a.classification() ? a.num_classes : 1);
    Var f = extract(b, "q_lat", ad::vcat({xc, ych}), c_in);
    const int C = a.conv_channels;
    Var ul = pointwise(b, "q_lat.ul", f, C, a.T_mid);
    Var z = pointwise(b, "q_lat.z", f, C, a.T_mid);
    Var ug = dense(b, "q_lat.ug", ad::time_mean(f, C, a.T_mid));
    return Latents{split_head(ul), split_head(ug), split_head(z)};
}

Head p_z(const Bound& b, Var x, Var u_l, Var u_g) {
    const ArchConfig& a = b.arch();
    if (a.variant != Variant::kCounts) throw ConfigError("plain predictor has no latent networks");
    require_rows(u_l, a.ul_dim(), "u_l");
    require_rows(u_g, a.ug_dim(), "u_g");
    if (u_l.cols() != u_g.cols()) throw ShapeError("u_l and u_g batch sizes differ");
    Var xc = center(b, x);
    if (a.backbone == Backbone::kDense) {
        Var raw = mlp(b, "p_z", ad::vcat({broadcast(xc, u_l.cols()), u_l, u_g}));
        return split_head(raw);
    }
    Var f = broadcast(extract(b, "p_z", xc, a.D), u_l.cols());
    const int c_mix = a.conv_channels + a.H_l + a.H_g;
    Var h = act(a, pointwise(b, "p_z.m", ad::vcat({f, u_l, ad::repeat_time(u_g, a.T_mid)}), c_mix, a.T_mid));
    return split_head(pointwise(b, "p_z.o", h, a.conv_channels, a.T_mid));
}

Var p_y_raw(const Bound& b, Var u_l, Var u_g, Var z) {
    const ArchConfig& a = b.arch();
    if (a.variant != Variant::kCounts) throw ConfigError("plain predictor has no latent networks");
    require_rows(u_l, a.ul_dim(), "u_l");
    require_rows(u_g, a.ug_dim(), "u_g");
    require_rows(z, a.z_dim(), "z");
    if (a.backbone == Backbone::kDense) return mlp(b, "p_y", ad::vcat({u_l, u_g, z}));
    Var in = ad::vcat({u_l, z, ad::repeat_time(u_g, a.T_mid)});
    Var h = act(a, dense(b, "p_y.h", in));
    return dense(b, "p_y.o", h);
}

OutputDist to_output(const ArchConfig& a, const Matrix& raw, Eigen::Index col) {
    OutputDist d;
    d.task = a.task;
    if (a.classification()) {
        const Vector logits = raw.col(col);
        const Vector e = (logits.array() - logits.maxCoeff()).exp().matrix();
        d.probs = e / e.sum();
    } else {
        const Eigen::Index T = a.T_in;
        d.gauss.mean = raw.col(col).head(T);
        d.gauss.log_var = raw.col(col).segment(T, T).cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
    }
    return d;
}

}  // namespace counts::net
