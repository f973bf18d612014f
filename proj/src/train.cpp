#include "counts/error.hpp"
#include "counts/objective.hpp"
#include "counts/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace counts {

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566;

}  // namespace

ModelParams initial_params(const Examples& data, const ArchConfig& arch, const TrainConfig& cfg) {
    if (data.empty()) throw ConfigError("training set is empty");
    ModelParams params(arch, cfg.seed);
    const Matrix mean = input_mean(data);
    params.set_input_offset(mean);
    params.set_input_scale(input_spread(data, mean));
    return params;
}

TrainResult train(const Examples& data, const ArchConfig& arch, const TrainConfig& cfg, const Validator& validator) {
    cfg.validate();
    TrainResult result{initial_params(data, arch, cfg), {}, {}};
    ModelParams& params = result.params;
    Adam opt(params, cfg.learning_rate);

    std::vector<std::size_t> order(data.size());
    std::uint64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = derive_rng(cfg.seed, kShuffleStream, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng);

        LossBreakdown sum;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            Examples batch;
            batch.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) batch.push_back(data[order[i]]);
            const Matrix x = inputs_of(batch, 0, batch.size());
            const Labels labels = labels_of(arch, batch, 0, batch.size());

            ad::Tape tape;
            net::Bound b(tape, params, true);
            ++step;
            net::LossGraph g = net::build_loss(b, tape.constant(x), labels, cfg.lambda_sup, cfg.mc,
                                               draw_noise(arch, cfg.mc, x, step), cfg.kl_weight(epoch));
            const double total = g.total.value()(0, 0);
            if (!std::isfinite(total))
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + ": loss is " + std::to_string(total));
            tape.backward(g.total);
            std::vector<Matrix> grads;
            grads.reserve(b.vars().size());
            for (ad::Var v : b.vars()) {
                grads.push_back(tape.grad(v));
                if (!grads.back().allFinite())
                    throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + ", step " +
                                       std::to_string(step));
            }
            opt.step(params, grads);

            const double w = static_cast<double>(end - begin);
            sum.recon += w * g.recon.value()(0, 0);
            sum.kl_z += w * g.kl_z.value()(0, 0);
            sum.kl_u += w * g.kl_u.value()(0, 0);
            sum.ent_y += w * g.ent_y.value()(0, 0);
            sum.l_y += w * g.l_y.value()(0, 0);
            sum.total += w * total;
        }
        const double n = static_cast<double>(data.size());
        result.history.push_back(
            LossBreakdown{sum.recon / n, sum.kl_z / n, sum.kl_u / n, sum.ent_y / n, sum.l_y / n, sum.total / n});
        result.val_metric.push_back(validator ? validator(params) : std::numeric_limits<double>::quiet_NaN());
    }
    params.check_finite();
    return result;
}

}  // namespace counts
