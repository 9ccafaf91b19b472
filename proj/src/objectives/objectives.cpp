#include "shapegan/objectives.hpp"

#include <optional>
#include <string>

#include "shapegan/error.hpp"
#include "shapegan/ops.hpp"

namespace shapegan {

void LossWeights::validate() const {
    for (double w : {adversarial, reconstruction, shape, gradient_penalty}) {
        if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
    }
}

Tensor loss_reconstruction(const Tensor& x, const Tensor& x_hat) {
    if (x.shape() != x_hat.shape()) {
        throw ConfigError("loss_reconstruction: shape mismatch " + shape_string(x.shape()) +
                          " vs " + shape_string(x_hat.shape()));
    }
    return mean(square(sub(x, x_hat)));
}

Tensor gradient_penalty(const Tensor& blend_values, const CriticFn& critic) {
    EnableGradGuard recording;
    std::optional<Tape> local;
    Tape* tape = Tape::active();
    if (!tape) tape = &local.emplace();
    const Tensor blend = tape->watch(blend_values.detach());
    const Tensor scores = critic(blend);
    const Tensor grad = backward(sum(scores), blend, /*higher_order=*/true);
    return mean(square(add_scalar(l2_norm_per_row(grad), -1.0)));
}

CriticLossParts loss_critic(const FeatureBatchPair& pair, const CriticFn& critic,
                            std::span<const double> blend_eps, double lambda_gp) {
    const Tensor& real = pair.real.value;
    const Tensor& fake = pair.fake.value;
    if (real.shape() != fake.shape()) {
        throw ConfigError("loss_critic: real " + shape_string(real.shape()) + " and fake " +
                          shape_string(fake.shape()) + " batches differ");
    }
    const std::size_t n = real.dim(0);
    if (blend_eps.size() != n) {
        throw UsageError("loss_critic: expected " + std::to_string(n) + " blend weights");
    }
    std::vector<double> eps(blend_eps.begin(), blend_eps.end());
    std::vector<double> one_minus(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(eps[i] >= 0.0 && eps[i] <= 1.0)) throw UsageError("loss_critic: blend weight outside [0, 1]");
        one_minus[i] = 1.0 - eps[i];
    }

    const Tensor real_score = mean(critic(real));
    const Tensor fake_score = mean(critic(fake));
    Tensor total = sub(fake_score, real_score);
    double penalty = 0.0;
    if (lambda_gp > 0.0) {
        const Tensor e = broadcast_rows(Tensor({n}, eps), real.shape());
        const Tensor f = broadcast_rows(Tensor({n}, one_minus), real.shape());
        const Tensor blend = add(mul(e, real.detach()), mul(f, fake.detach()));
        const Tensor gp = gradient_penalty(blend, critic);
        penalty = gp.item();
        total = add(total, scalar_mul(gp, lambda_gp));
    }
    return {total, real_score.item() - fake_score.item(), penalty};
}

Tensor loss_generator_adv(const FeatureMap& fake, const CriticFn& critic) {
    return scalar_mul(mean(critic(fake.value)), -1.0);
}

Tensor dice_loss(const Tensor& pred, const Tensor& ref, double smoothing) {
    if (pred.shape() != ref.shape()) {
        throw ConfigError("dice_loss: shape mismatch " + shape_string(pred.shape()) + " vs " +
                          shape_string(ref.shape()));
    }
    const Tensor overlap = add_scalar(scalar_mul(sum_rows(mul(pred, ref)), 2.0), smoothing);
    const Tensor total = add_scalar(add(sum_rows(pred), sum_rows(ref)), smoothing);
    return add_scalar(scalar_mul(mean(div(overlap, total)), -1.0), 1.0);
}

Tensor loss_shape(const Model& unet, const Tensor& interp_image, const Tensor& source_image) {
    Tensor reference;
    {
        NoGradGuard no_grad;
        reference = segment(unet, source_image).detach();
    }
    return loss_shape_to_mask(unet, interp_image, reference);
}

Tensor loss_shape_to_mask(const Model& unet, const Tensor& interp_image,
                          const Tensor& reference_mask) {
    // The plain parameter values are constants on any tape.
    const Tensor pred = segment(unet, unet.params.values(), interp_image);
    return dice_loss(pred, reference_mask.detach());
}

Tensor loss_unet_supervised(const Tensor& pred_mask, const Tensor& gt_mask) {
    for (double v : gt_mask.data()) {
        if (v != 0.0 && v != 1.0) throw ConfigError("loss_unet_supervised: ground-truth mask is not binary");
    }
    return dice_loss(pred_mask, gt_mask);
}

Tensor loss_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw ConfigError("loss_cross_entropy: logits " + shape_string(logits.shape()) +
                          " do not match " + std::to_string(labels.size()) + " labels");
    }
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<double> onehot(n * k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= k) throw ConfigError("loss_cross_entropy: label out of range");
        onehot[i * k + labels[i]] = 1.0;
    }
    const Tensor picked = sum(mul(log_softmax(logits), Tensor({n, k}, std::move(onehot))));
    return scalar_mul(picked, -1.0 / static_cast<double>(n));
}

}  // namespace shapegan
