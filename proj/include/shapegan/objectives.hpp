#pragma once

#include <functional>
#include <span>
#include <vector>

#include "shapegan/networks.hpp"
#include "shapegan/tensor.hpp"

namespace shapegan {

struct LossWeights {
    double adversarial = 1.0;
    double reconstruction = 10.0;
    double shape = 1.0;
    double gradient_penalty = 10.0;

    void validate() const;
};

inline constexpr double kDiceSmoothing = 1.0;

// Scores a batch of features (any shape with a leading batch axis) as N x 1.
using CriticFn = std::function<Tensor(const Tensor& features)>;

struct FeatureBatchPair {
    FeatureMap real;  // endpoint features
    FeatureMap fake;  // interpolated features
};

struct CriticLossParts {
    Tensor total;       // mean D(fake) - mean D(real) + lambda_gp * penalty
    double gap = 0.0;   // mean D(real) - mean D(fake)
    double penalty = 0.0;
};

// Mean squared error over all elements.
Tensor loss_reconstruction(const Tensor& x, const Tensor& x_hat);

// Wasserstein critic loss with gradient penalty taken at blend points
// eps * real + (1 - eps) * fake, one eps per sample. The input gradient is
// recorded on the active tape, so the penalty is differentiable with respect
// to whatever the critic closes over.
CriticLossParts loss_critic(const FeatureBatchPair& pair, const CriticFn& critic,
                            std::span<const double> blend_eps, double lambda_gp);

// Mean squared deviation of per-sample input-gradient norms from 1.
Tensor gradient_penalty(const Tensor& blend_values, const CriticFn& critic);

// -mean D(fake).
Tensor loss_generator_adv(const FeatureMap& fake, const CriticFn& critic);

// Soft Dice: 1 - (2 sum(p r) + s) / (sum p + sum r + s) per sample, averaged.
Tensor dice_loss(const Tensor& pred, const Tensor& ref, double smoothing = kDiceSmoothing);

// Dice between the UNet masks of the interpolated image and of the source,
// with the network weights and the source mask held constant.
Tensor loss_shape(const Model& unet, const Tensor& interp_image, const Tensor& source_image);
// Same, against a given reference mask (e.g. ground truth).
Tensor loss_shape_to_mask(const Model& unet, const Tensor& interp_image, const Tensor& reference_mask);

// Dice against a binary ground-truth mask.
Tensor loss_unet_supervised(const Tensor& pred_mask, const Tensor& gt_mask);

// Mean negative log-likelihood of integer labels under row-wise softmax.
Tensor loss_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace shapegan
