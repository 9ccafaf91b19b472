#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "shapegan/config.hpp"
#include "shapegan/networks.hpp"
#include "shapegan/rng.hpp"
#include "shapegan/synthetic.hpp"

namespace shapegan {

// The five trained networks.
struct Nets {
    Model encoder;
    Model decoder;
    Model interpolator;
    Model critic;
    Model unet;

    static Nets create(const TrainConfig& config);
    // Stable order used by checkpoints: encoder, decoder, interpolator, critic, unet.
    std::vector<std::pair<const char*, Model*>> all();
    std::vector<std::pair<const char*, const Model*>> all() const;
};

struct Batch {
    Tensor images;  // N x C x S x S
    Tensor masks;   // N x 1 x S x S
};

Batch make_batch(const std::vector<const ImageSample*>& samples);

// How many updates each step kind has applied.
struct StepCounters {
    std::uint64_t critic = 0;
    std::uint64_t reconstruction = 0;
    std::uint64_t generator = 0;
    std::uint64_t unet = 0;
    bool operator==(const StepCounters&) const = default;
};

struct TraceRow {
    std::uint64_t iteration = 0;
    double critic = 0.0;
    double reconstruction = 0.0;
    double adversarial = 0.0;
    double shape = 0.0;
    double unet = 0.0;
};

std::string trace_header();
std::string format_trace_row(const TraceRow& row);

struct GeneratorLosses {
    double adversarial = 0.0;
    double shape = 0.0;
};

struct Checkpoint {
    TrainConfig config;
    std::uint64_t iteration = 0;  // completed outer iterations
    bool unet_pretrained = false;
    std::string rng_state;
    Nets nets;
    std::vector<double> recon_history;  // recent recon losses for early stopping
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// State of one training run. Step functions update exactly their declared
// parameter sets; anything else is left bitwise unchanged.
class Trainer {
public:
    explicit Trainer(TrainConfig config);
    explicit Trainer(Checkpoint checkpoint);

    const TrainConfig& config() const noexcept { return config_; }
    Nets& nets() noexcept { return nets_; }
    const Nets& nets() const noexcept { return nets_; }
    Rng& rng() noexcept { return rng_; }
    const StepCounters& counters() const noexcept { return counters_; }
    std::uint64_t iteration() const noexcept { return iteration_; }

    // Updates the critic only.
    double critic_step(const Batch& x, const Batch& y);
    // Updates D, plus E when recon_updates_encoder is set.
    double reconstruction_step(const Batch& x);
    // Updates E, I, D. Critic and UNet are frozen.
    GeneratorLosses generator_step(const Batch& x, const Batch& y);
    // Updates U only.
    double unet_step(const Batch& batch);

    // Phase 1 if not done yet, then outer iterations until max_iterations or
    // early stop. The trace callback sees each row as it is produced; the
    // checkpoint callback fires every checkpoint_every iterations.
    struct Hooks {
        std::function<void(const TraceRow&)> on_row;
        std::function<void(const Checkpoint&)> on_checkpoint;
    };
    std::vector<TraceRow> run(const Dataset& dataset, const Hooks& hooks = {});
    // UNet pretraining on its own; run() calls it when needed.
    void pretrain_unet(const Dataset& dataset);

    Checkpoint checkpoint() const;
    // Numeric failures keep the last state from before the failing iteration.
    const std::optional<Checkpoint>& last_good() const noexcept { return last_good_; }
    bool stopped_early() const noexcept { return stopped_early_; }

private:
    std::vector<double> sample_alpha(std::size_t n);
    Batch sample(const std::vector<const ImageSample*>& pool);
    TraceRow outer_iteration(const Dataset& dataset);

    TrainConfig config_;
    Nets nets_;
    Rng rng_;
    StepCounters counters_;
    std::uint64_t iteration_ = 0;
    bool unet_pretrained_ = false;
    bool stopped_early_ = false;
    std::vector<double> recon_history_;
    std::optional<Checkpoint> last_good_;
};

struct TrainingResult {
    Checkpoint final_state;
    std::vector<TraceRow> trace;
    bool early_stopped = false;
};

// Convenience wrapper: fresh trainer over the dataset.
TrainingResult run_training(const Dataset& dataset, const TrainConfig& config,
                            const Trainer::Hooks& hooks = {});

}  // namespace shapegan
