#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shapegan/networks.hpp"
#include "shapegan/synthetic.hpp"
#include "shapegan/trainer.hpp"

namespace shapegan {

inline constexpr double kMaskThreshold = 0.5;
inline const std::vector<double> kDefaultAlphas = {0.25, 0.5, 0.75, 1.0};

struct GridPanel {
    double alpha = 0.0;
    Tensor image;  // C x S x S
};

struct InterpolationGrid {
    Tensor source;
    Tensor target;
    std::vector<GridPanel> panels;  // ascending alpha
};

// Translates one image toward another: D(interpolate(E(x), E(y), alpha)).
// Images are N x C x S x S; alpha is one value or one per sample.
Tensor translate(const Nets& nets, InterpolationMode mode, const Tensor& source, const Tensor& target,
                 std::span<const double> alpha);

// checkpoint must hold trained parameter sets (null is a UsageError).
// Alphas must be strictly increasing within [0, 1].
InterpolationGrid render_grid(const Checkpoint* checkpoint, const Tensor& source, const Tensor& target,
                              std::span<const double> alphas);
// source | panels | target, left to right: C x S x (2 + panels) S.
Tensor compose_grid(const InterpolationGrid& grid);

// 2|A n B| / (|A| + |B|) on masks binarized at the threshold; 1 when both are empty.
double set_dice(const Tensor& a, const Tensor& b, double threshold = kMaskThreshold);

struct ShapeScore {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> per_sample;
};

// Eval sample j of the source domain is translated toward eval sample j + 1
// of the target domain (a different shape, so copying the target contour is
// penalized). U's mask of the result is scored against the source's
// ground-truth mask.
ShapeScore shape_preservation_score(const Checkpoint* checkpoint, const Dataset& dataset, double alpha);
// Same scoring on the untranslated source images: the UNet's own quality.
ShapeScore unet_calibration_score(const Checkpoint* checkpoint, const Dataset& dataset);

struct ClassifierOptions {
    std::size_t iterations = 300;
    std::size_t batch_size = 16;
    AdamHyper adam{1e-3, 0.9, 0.999, 1e-8};
};

struct QualityClassifier {
    Model model;
    double heldout_accuracy = 0.0;
    std::vector<std::size_t> heldout_predictions;
};

// Domain classifier trained on the training split, scored on the eval split.
QualityClassifier train_quality_classifier(const Dataset& dataset, std::uint64_t seed,
                                           const ClassifierOptions& options = {});
std::vector<std::size_t> classify(const Model& classifier, const Tensor& images);
// Softmax probabilities, N x K.
Tensor class_probabilities(const Model& classifier, const Tensor& images);

struct TranslationScore {
    double target_rate = 0.0;         // fraction assigned to the target domain
    double target_probability = 0.0;  // mean softmax probability of the target domain
};

TranslationScore classify_translated(const Checkpoint* checkpoint, const Model& classifier,
                                     const Dataset& dataset, double alpha);

struct ReportRow {
    std::string name;
    double accuracy = 0.0;
    double dice_mean = 0.0;
    double dice_std = 0.0;
    bool present = true;  // false when the ablation checkpoint was not supplied
};

struct EvalReport {
    std::size_t source_domain = 0;
    std::size_t target_domain = 1;
    double alpha = 1.0;
    std::vector<ReportRow> rows;  // real held-out, no-shape ablation, full model

    // Full model minus ablation; empty without an ablation.
    std::optional<double> dice_delta() const;
    std::optional<double> accuracy_delta() const;
    std::string to_csv() const;
    std::string to_table() const;
};

// Alpha defaults to full transfer.
EvalReport emit_report(const Checkpoint& full, const Checkpoint* ablation, const Dataset& dataset,
                       const QualityClassifier& classifier, double alpha = 1.0);

}  // namespace shapegan
