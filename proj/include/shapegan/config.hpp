#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "shapegan/adam.hpp"
#include "shapegan/networks.hpp"
#include "shapegan/objectives.hpp"

namespace shapegan {

enum class ShapeReference { unet, ground_truth };

// Per-sample alpha during training: uniform on (0, 1], or a fixed value.
struct AlphaSampling {
    bool uniform = true;
    double fixed = 1.0;

    std::string to_string() const;
    static AlphaSampling parse(const std::string& text);
    bool operator==(const AlphaSampling&) const = default;
};

struct TrainConfig {
    std::size_t n_critic = 5;
    LossWeights weights;
    AdamHyper encoder_adam;
    AdamHyper decoder_adam;
    AdamHyper interpolator_adam;
    AdamHyper critic_adam;
    AdamHyper unet_adam;
    std::size_t batch_size = 16;
    std::size_t max_iterations = 2000;
    std::size_t image_size = 32;
    std::size_t image_channels = 3;
    std::size_t feature_channels = 64;
    AlphaSampling alpha_sampling;
    InterpolationMode interpolation = InterpolationMode::learned;
    std::uint64_t seed = 1;
    std::size_t unet_pretrain_iters = 200;
    bool recon_updates_encoder = true;
    // When false the adversarial and shape terms only reach I and D.
    bool generator_updates_encoder = true;
    ShapeReference shape_reference = ShapeReference::unet;
    std::size_t source_domain = 0;
    std::size_t target_domain = 1;
    std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
    bool early_stop = false;
    std::size_t early_stop_window = 100;
    double early_stop_tolerance = 1e-4;

    void validate() const;
    ArchitectureOptions architecture() const;
};

// key = value lines. '#' starts a comment. Unknown keys are a ConfigError
// naming the key.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
// Applies one key = value assignment.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);
// Every key with its resolved value, in a fixed order. Round-trips exactly.
std::string serialize_config(const TrainConfig& config);

}  // namespace shapegan
