#include "shapegan/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "shapegan/error.hpp"
#include "shapegan/objectives.hpp"
#include "shapegan/ops.hpp"

namespace shapegan {

namespace {

std::vector<Tensor> concat(std::span<const Tensor> a, std::span<const Tensor> b) {
    std::vector<Tensor> out(a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

CriticFn critic_fn(const Model& critic, std::span<const Tensor> weights) {
    return [&critic, weights](const Tensor& f) {
        return forward(critic.arch, weights, f.rank() > 2 ? flatten(f) : f);
    };
}

std::vector<const ImageSample*> all_train(const Dataset& ds) {
    std::vector<const ImageSample*> out;
    for (const auto& s : ds.train) out.push_back(&s);
    return out;
}

}  // namespace

Nets Nets::create(const TrainConfig& config) {
    const ArchitectureOptions o = config.architecture();
    Nets n{make_model(NetKind::encoder, o, config.seed), make_model(NetKind::decoder, o, config.seed),
           make_model(NetKind::interpolator, o, config.seed), make_model(NetKind::critic, o, config.seed),
           make_model(NetKind::unet, o, config.seed)};
    n.encoder.params.reset_optimizer(config.encoder_adam);
    n.decoder.params.reset_optimizer(config.decoder_adam);
    n.interpolator.params.reset_optimizer(config.interpolator_adam);
    n.critic.params.reset_optimizer(config.critic_adam);
    n.unet.params.reset_optimizer(config.unet_adam);
    return n;
}

std::vector<std::pair<const char*, Model*>> Nets::all() {
    return {{"encoder", &encoder}, {"decoder", &decoder}, {"interpolator", &interpolator},
            {"critic", &critic}, {"unet", &unet}};
}

std::vector<std::pair<const char*, const Model*>> Nets::all() const {
    return {{"encoder", &encoder}, {"decoder", &decoder}, {"interpolator", &interpolator},
            {"critic", &critic}, {"unet", &unet}};
}

Batch make_batch(const std::vector<const ImageSample*>& samples) {
    if (samples.empty()) throw ConfigError("empty batch");
    const Shape is = samples.front()->image.shape();
    const Shape ms = samples.front()->mask.shape();
    std::vector<double> img, mask;
    img.reserve(samples.size() * shape_numel(is));
    mask.reserve(samples.size() * shape_numel(ms));
    for (const auto* s : samples) {
        if (s->image.shape() != is || s->mask.shape() != ms) throw ConfigError("batch samples differ in shape");
        img.insert(img.end(), s->image.data().begin(), s->image.data().end());
        mask.insert(mask.end(), s->mask.data().begin(), s->mask.data().end());
    }
    Shape bi = is, bm = ms;
    bi.insert(bi.begin(), samples.size());
    bm.insert(bm.begin(), samples.size());
    return {Tensor(bi, std::move(img)), Tensor(bm, std::move(mask))};
}

std::string trace_header() { return "iteration,critic,recon,adv,shape,unet"; }

std::string format_trace_row(const TraceRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g",
                  static_cast<unsigned long long>(r.iteration), r.critic, r.reconstruction,
                  r.adversarial, r.shape, r.unet);
    return buf;
}

Trainer::Trainer(TrainConfig config)
    : config_(std::move(config)), nets_((config_.validate(), Nets::create(config_))),
      rng_(derive_seed(config_.seed, 0x7ea1)) {}

Trainer::Trainer(Checkpoint c)
    : config_(std::move(c.config)), nets_(std::move(c.nets)), iteration_(c.iteration),
      unet_pretrained_(c.unet_pretrained), recon_history_(std::move(c.recon_history)) {
    config_.validate();
    // Hyperparameters follow the (possibly overridden) config; moments and
    // step counts come from the checkpoint.
    nets_.encoder.params.optimizer().hyper = config_.encoder_adam;
    nets_.decoder.params.optimizer().hyper = config_.decoder_adam;
    nets_.interpolator.params.optimizer().hyper = config_.interpolator_adam;
    nets_.critic.params.optimizer().hyper = config_.critic_adam;
    nets_.unet.params.optimizer().hyper = config_.unet_adam;
    rng_.restore(c.rng_state);
}

std::vector<double> Trainer::sample_alpha(std::size_t n) {
    std::vector<double> a(n);
    for (auto& v : a) v = config_.alpha_sampling.uniform ? rng_.uniform_open_closed() : config_.alpha_sampling.fixed;
    return a;
}

Batch Trainer::sample(const std::vector<const ImageSample*>& pool) {
    std::vector<const ImageSample*> picked(config_.batch_size);
    for (auto& p : picked) p = pool[rng_.below(pool.size())];
    return make_batch(picked);
}

double Trainer::critic_step(const Batch& x, const Batch& y) {
    const std::size_t n = x.images.dim(0);
    if (y.images.dim(0) != n) throw ConfigError("critic_step: source and target batches differ in size");
    const std::vector<double> alpha = sample_alpha(n);
    std::vector<double> eps(n);
    for (auto& e : eps) e = rng_.uniform();

    FeatureMap fy, fake;
    {
        NoGradGuard no_grad;
        const FeatureMap fx = encode(nets_.encoder, x.images, FeatureRole::source);
        fy = encode(nets_.encoder, y.images, FeatureRole::target);
        fake = interpolate(fx, fy, alpha, config_.interpolation, &nets_.interpolator);
    }
    Tape tape;
    const std::vector<Tensor> w = tape.watch(nets_.critic.params.values());
    const CriticLossParts parts =
        loss_critic({fy, fake}, critic_fn(nets_.critic, w), eps, config_.weights.gradient_penalty);
    const std::vector<Tensor> grads = backward(parts.total, w);
    adam_step(nets_.critic.params, grads);
    ++counters_.critic;
    return parts.total.item();
}

double Trainer::reconstruction_step(const Batch& x) {
    Tape tape;
    const std::vector<Tensor> wd = tape.watch(nets_.decoder.params.values());
    const std::vector<Tensor> we = config_.recon_updates_encoder ? tape.watch(nets_.encoder.params.values())
                                                                 : nets_.encoder.params.values();
    const FeatureMap f = encode(nets_.encoder, we, x.images);
    const Tensor loss = loss_reconstruction(x.images, decode(nets_.decoder, wd, f));
    const Tensor scaled = scalar_mul(loss, config_.weights.reconstruction);
    if (config_.recon_updates_encoder) {
        const std::vector<Tensor> grads = backward(scaled, concat(wd, we));
        adam_step(nets_.decoder.params, std::span(grads).first(wd.size()));
        adam_step(nets_.encoder.params, std::span(grads).subspan(wd.size()));
    } else {
        adam_step(nets_.decoder.params, backward(scaled, wd));
    }
    ++counters_.reconstruction;
    return loss.item();
}

GeneratorLosses Trainer::generator_step(const Batch& x, const Batch& y) {
    const std::size_t n = x.images.dim(0);
    if (y.images.dim(0) != n) throw ConfigError("generator_step: source and target batches differ in size");
    const std::vector<double> alpha = sample_alpha(n);
    const bool learned = config_.interpolation == InterpolationMode::learned;
    const bool update_e = config_.generator_updates_encoder;
    const bool with_shape = config_.weights.shape > 0.0;

    Tape tape;
    const std::vector<Tensor> we = update_e ? tape.watch(nets_.encoder.params.values())
                                            : nets_.encoder.params.values();
    const std::vector<Tensor> wi = learned ? tape.watch(nets_.interpolator.params.values())
                                           : nets_.interpolator.params.values();
    const std::vector<Tensor> wd = with_shape ? tape.watch(nets_.decoder.params.values())
                                              : nets_.decoder.params.values();
    const FeatureMap fx = encode(nets_.encoder, we, x.images, FeatureRole::source);
    const FeatureMap fy = encode(nets_.encoder, we, y.images, FeatureRole::target);
    const FeatureMap fake = interpolate(fx, fy, alpha, config_.interpolation, &nets_.interpolator, wi);
    const Tensor adv = loss_generator_adv(fake, critic_fn(nets_.critic, nets_.critic.params.values()));

    auto shape_loss = [&](const FeatureMap& f) {
        const Tensor translated = decode(nets_.decoder, wd, f);
        return config_.shape_reference == ShapeReference::unet
                   ? loss_shape(nets_.unet, translated, x.images)
                   : loss_shape_to_mask(nets_.unet, translated, x.masks);
    };

    GeneratorLosses out;
    out.adversarial = adv.item();
    Tensor total = scalar_mul(adv, config_.weights.adversarial);
    if (with_shape) {
        const Tensor shape = shape_loss(fake);
        out.shape = shape.item();
        total = add(total, scalar_mul(shape, config_.weights.shape));
    } else {
        // Reported for comparison; it carries no gradient.
        NoGradGuard no_grad;
        out.shape = shape_loss({fake.value.detach(), fake.role}).item();
    }

    std::vector<Tensor> wrt;
    if (update_e) wrt = concat(wrt, we);
    if (learned) wrt = concat(wrt, wi);
    if (with_shape) wrt = concat(wrt, wd);
    if (!wrt.empty()) {
        const std::vector<Tensor> grads = backward(total, wrt);
        std::span<const Tensor> rest(grads);
        if (update_e) {
            adam_step(nets_.encoder.params, rest.first(we.size()));
            rest = rest.subspan(we.size());
        }
        if (learned) {
            adam_step(nets_.interpolator.params, rest.first(wi.size()));
            rest = rest.subspan(wi.size());
        }
        if (with_shape) adam_step(nets_.decoder.params, rest);
    }
    ++counters_.generator;
    return out;
}

double Trainer::unet_step(const Batch& batch) {
    Tape tape;
    const std::vector<Tensor> w = tape.watch(nets_.unet.params.values());
    const Tensor loss = loss_unet_supervised(segment(nets_.unet, w, batch.images), batch.masks);
    adam_step(nets_.unet.params, backward(loss, w));
    ++counters_.unet;
    return loss.item();
}

void Trainer::pretrain_unet(const Dataset& dataset) {
    const auto pool = all_train(dataset);
    if (pool.empty()) throw ConfigError("dataset has no training images");
    for (std::size_t i = 0; i < config_.unet_pretrain_iters; ++i) unet_step(sample(pool));
    unet_pretrained_ = true;
}

TraceRow Trainer::outer_iteration(const Dataset& dataset) {
    const auto source = dataset.select(Split::train, config_.source_domain);
    const auto target = dataset.select(Split::train, config_.target_domain);
    auto pair = source;
    pair.insert(pair.end(), target.begin(), target.end());
    const auto everything = all_train(dataset);

    TraceRow row;
    row.iteration = iteration_ + 1;
    for (std::size_t m = 0; m < config_.n_critic; ++m) {
        const Batch x = sample(source);
        const Batch y = sample(target);
        row.critic += critic_step(x, y);
        row.reconstruction += reconstruction_step(sample(pair));
    }
    row.critic /= static_cast<double>(config_.n_critic);
    row.reconstruction /= static_cast<double>(config_.n_critic);
    const Batch x = sample(source);
    const Batch y = sample(target);
    const GeneratorLosses g = generator_step(x, y);
    row.adversarial = g.adversarial;
    row.shape = g.shape;
    row.unet = unet_step(sample(everything));
    return row;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.config = config_;
    c.iteration = iteration_;
    c.unet_pretrained = unet_pretrained_;
    c.rng_state = rng_.state();
    c.nets = nets_;
    c.recon_history = recon_history_;
    return c;
}

std::vector<TraceRow> Trainer::run(const Dataset& dataset, const Hooks& hooks) {
    if (dataset.size != config_.image_size) {
        throw ConfigError("dataset images are " + std::to_string(dataset.size) + " pixels but image_size is " +
                          std::to_string(config_.image_size));
    }
    for (std::size_t d : {config_.source_domain, config_.target_domain}) {
        const std::size_t have = dataset.select(Split::train, d).size();
        if (have < config_.batch_size) {
            throw ConfigError("domain " + std::to_string(d) + " has " + std::to_string(have) +
                              " training images, fewer than batch_size " + std::to_string(config_.batch_size));
        }
    }
    stopped_early_ = false;
    if (!unet_pretrained_) {
        last_good_ = checkpoint();
        try {
            pretrain_unet(dataset);
        } catch (const NumericError& e) {
            auto keep = last_good_;
            *this = Trainer(*keep);
            last_good_ = std::move(keep);
            throw NumericError(std::string("UNet pretraining: ") + e.what());
        }
    }
    std::vector<TraceRow> trace;
    const std::size_t window = config_.early_stop_window;
    while (iteration_ < config_.max_iterations) {
        last_good_ = checkpoint();
        TraceRow row;
        try {
            row = outer_iteration(dataset);
        } catch (const NumericError& e) {
            const std::uint64_t failed = iteration_ + 1;
            auto keep = last_good_;
            *this = Trainer(*keep);
            last_good_ = std::move(keep);
            throw NumericError("iteration " + std::to_string(failed) + ": " + e.what());
        }
        ++iteration_;
        trace.push_back(row);
        if (hooks.on_row) hooks.on_row(row);

        recon_history_.push_back(row.reconstruction);
        if (recon_history_.size() > 2 * window) recon_history_.erase(recon_history_.begin());
        if (config_.checkpoint_every > 0 && iteration_ % config_.checkpoint_every == 0 && hooks.on_checkpoint) {
            hooks.on_checkpoint(checkpoint());
        }
        if (config_.early_stop && recon_history_.size() == 2 * window) {
            const auto mid = recon_history_.begin() + static_cast<std::ptrdiff_t>(window);
            const double before = std::accumulate(recon_history_.begin(), mid, 0.0) / static_cast<double>(window);
            const double after = std::accumulate(mid, recon_history_.end(), 0.0) / static_cast<double>(window);
            if (std::abs(after - before) < config_.early_stop_tolerance) {
                stopped_early_ = true;
                break;
            }
        }
    }
    return trace;
}

TrainingResult run_training(const Dataset& dataset, const TrainConfig& config, const Trainer::Hooks& hooks) {
    Trainer trainer(config);
    TrainingResult result;
    result.trace = trainer.run(dataset, hooks);
    result.final_state = trainer.checkpoint();
    result.early_stopped = trainer.stopped_early();
    return result;
}

}  // namespace shapegan
