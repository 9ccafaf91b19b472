#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "shapegan/error.hpp"
#include "shapegan/objectives.hpp"
#include "shapegan/ops.hpp"
#include "shapegan/trainer.hpp"

using namespace shapegan;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config() {
    TrainConfig c;
    c.image_size = 16;
    c.feature_channels = 8;
    c.batch_size = 2;
    c.n_critic = 2;
    c.max_iterations = 4;
    c.unet_pretrain_iters = 2;
    return c;
}

Dataset small_dataset(std::size_t n = 8) {
    DatasetConfig d;
    d.size = 16;
    d.n_per_domain = n;
    return generate_dataset(d);
}

Batch batch_of(const Dataset& ds, std::size_t domain, std::size_t offset = 0, std::size_t n = 2) {
    const auto pool = ds.select(Split::train, domain);
    std::vector<const ImageSample*> picked(pool.begin() + offset, pool.begin() + offset + n);
    return make_batch(picked);
}

// Which of the five networks differ between two snapshots.
std::vector<std::string> changed(const Nets& before, const Nets& after) {
    std::vector<std::string> out;
    const auto a = before.all();
    const auto b = after.all();
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].second->params.bitwise_equal(b[i].second->params)) out.push_back(a[i].first);
    }
    return out;
}

using Names = std::vector<std::string>;

std::vector<std::string> trace_lines(const std::vector<TraceRow>& rows) {
    std::vector<std::string> out;
    for (const auto& r : rows) out.push_back(format_trace_row(r));
    return out;
}

}  // namespace

TEST_CASE("config text round trips and rejects unknown keys") {
    TrainConfig c;
    CHECK(c.n_critic == 5);
    CHECK(c.weights.gradient_penalty == 10.0);
    c.weights.shape = 0.25;
    c.critic_adam.learning_rate = 3e-5;
    c.alpha_sampling = AlphaSampling::parse("fixed:0.5");
    c.interpolation = InterpolationMode::linear;
    c.recon_updates_encoder = false;
    c.seed = 123456789012345ULL;
    const std::string text = serialize_config(c);
    const TrainConfig back = parse_config(text);
    CHECK(serialize_config(back) == text);
    CHECK(back.weights.shape == 0.25);
    CHECK(back.alpha_sampling.fixed == 0.5);
    CHECK_FALSE(back.alpha_sampling.uniform);

    const TrainConfig partial = parse_config("# comment\n n_critic = 3 \nlambda_shape=0\n");
    CHECK(partial.n_critic == 3);
    CHECK(partial.weights.shape == 0.0);
    try {
        parse_config("n_critc = 3\n");
        FAIL("expected an unknown key error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("n_critc") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("n_critic 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("n_critic = -1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("alpha_sampling = fixed:0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("early_stop = maybe\n"), ConfigError);

    TrainConfig bad;
    bad.batch_size = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.target_domain = bad.source_domain;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.weights.gradient_penalty = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.critic_adam.beta2 = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("each step updates exactly its declared networks") {
    const Dataset ds = small_dataset();
    const Batch x = batch_of(ds, 0);
    const Batch y = batch_of(ds, 1);

    Trainer t(small_config());
    Nets before = t.nets();
    t.critic_step(x, y);
    CHECK(changed(before, t.nets()) == Names{"critic"});

    before = t.nets();
    t.reconstruction_step(x);
    CHECK(changed(before, t.nets()) == Names{"encoder", "decoder"});

    before = t.nets();
    t.generator_step(x, y);
    CHECK(changed(before, t.nets()) == Names{"encoder", "decoder", "interpolator"});

    before = t.nets();
    t.unet_step(x);
    CHECK(changed(before, t.nets()) == Names{"unet"});

    TrainConfig literal = small_config();
    literal.recon_updates_encoder = false;
    Trainer l(literal);
    before = l.nets();
    l.reconstruction_step(x);
    CHECK(changed(before, l.nets()) == Names{"decoder"});

    TrainConfig linear = small_config();
    linear.interpolation = InterpolationMode::linear;
    Trainer lin(linear);
    before = lin.nets();
    lin.generator_step(x, y);
    CHECK(changed(before, lin.nets()) == Names{"encoder", "decoder"});
}

TEST_CASE("critic step moves its loss downhill on a fixed batch") {
    const Dataset ds = small_dataset();
    const Batch x = batch_of(ds, 0);
    const Batch y = batch_of(ds, 1);
    TrainConfig c = small_config();
    c.weights.gradient_penalty = 0.0;
    c.alpha_sampling = AlphaSampling::parse("fixed:0.5");
    Trainer t(c);
    // With a fixed alpha and no penalty the loss is a pure function of the
    // critic, so the second call reports the loss after the first update.
    const double first = t.critic_step(x, y);
    const double second = t.critic_step(x, y);
    CHECK(second < first);

    Trainer a(small_config()), b(small_config());
    a.critic_step(x, y);
    b.critic_step(x, y);
    CHECK(a.nets().critic.params.bitwise_equal(b.nets().critic.params));
}

TEST_CASE("reconstruction overfits a single image") {
    const Dataset ds = small_dataset();
    const Batch one = batch_of(ds, 0, 0, 1);
    TrainConfig c = small_config();
    c.encoder_adam.learning_rate = 1e-3;
    c.decoder_adam.learning_rate = 1e-3;
    Trainer t(c);
    const double start = t.reconstruction_step(one);
    double last = start;
    for (int i = 1; i < 200; ++i) last = t.reconstruction_step(one);
    NoGradGuard no_grad;
    const FeatureMap f = encode(t.nets().encoder, one.images);
    const double after = loss_reconstruction(one.images, decode(t.nets().decoder, f)).item();
    MESSAGE("recon start " << start << " after 200 steps " << after);
    CHECK(after < start);
    CHECK(after < 0.02);
    CHECK(last < start);
}

TEST_CASE("generator step with zero shape weight is a pure adversarial step") {
    const Dataset ds = small_dataset();
    const Batch x = batch_of(ds, 0);
    const Batch y = batch_of(ds, 1);
    TrainConfig c = small_config();
    c.weights.shape = 0.0;
    c.alpha_sampling = AlphaSampling::parse("fixed:0.75");
    Trainer t(c);
    const Nets start = t.nets();
    const GeneratorLosses g = t.generator_step(x, y);
    CHECK(changed(start, t.nets()) == Names{"encoder", "interpolator"});

    // Same update computed by hand from the adversarial term alone.
    Nets manual = start;
    Tape tape;
    const std::vector<Tensor> we = tape.watch(manual.encoder.params.values());
    const std::vector<Tensor> wi = tape.watch(manual.interpolator.params.values());
    const FeatureMap fx = encode(manual.encoder, we, x.images, FeatureRole::source);
    const FeatureMap fy = encode(manual.encoder, we, y.images, FeatureRole::target);
    const std::vector<double> alpha(2, 0.75);
    const FeatureMap fake = interpolate(fx, fy, alpha, InterpolationMode::learned, &manual.interpolator, wi);
    const Model& critic = manual.critic;
    const Tensor adv = loss_generator_adv(
        fake, [&](const Tensor& f) { return forward(critic.arch, critic.params.values(), flatten(f)); });
    CHECK(adv.item() == g.adversarial);
    std::vector<Tensor> wrt = we;
    wrt.insert(wrt.end(), wi.begin(), wi.end());
    const std::vector<Tensor> grads = backward(scalar_mul(adv, c.weights.adversarial), wrt);
    adam_step(manual.encoder.params, std::span(grads).first(we.size()));
    adam_step(manual.interpolator.params, std::span(grads).subspan(we.size()));
    CHECK(manual.encoder.params.bitwise_equal(t.nets().encoder.params));
    CHECK(manual.interpolator.params.bitwise_equal(t.nets().interpolator.params));
}

TEST_CASE("generator step lowers the adversarial loss on a fixed batch") {
    const Dataset ds = small_dataset();
    const Batch x = batch_of(ds, 0);
    const Batch y = batch_of(ds, 1);
    TrainConfig c = small_config();
    c.weights.shape = 0.0;
    c.alpha_sampling = AlphaSampling::parse("fixed:1");
    c.encoder_adam.learning_rate = 1e-5;
    c.interpolator_adam.learning_rate = 1e-5;
    Trainer t(c);
    const double first = t.generator_step(x, y).adversarial;
    const double second = t.generator_step(x, y).adversarial;
    CHECK(second < first);
}

TEST_CASE("unet step is deterministic and reaches a low Dice loss after pretraining") {
    const Dataset ds = small_dataset();
    const Batch x = batch_of(ds, 0);
    Trainer a(small_config()), b(small_config());
    CHECK(a.unet_step(x) == b.unet_step(x));
    CHECK(a.nets().unet.params.bitwise_equal(b.nets().unet.params));

    DatasetConfig dc;
    dc.n_per_domain = 64;
    const Dataset full = generate_dataset(dc);
    TrainConfig c;
    c.batch_size = 8;
    Trainer t(c);
    t.pretrain_unet(full);
    CHECK(t.counters().unet == c.unet_pretrain_iters);
    double total = 0.0;
    std::size_t chunks = 0;
    for (std::size_t i = 0; i + 16 <= full.train.size(); i += 16) {
        std::vector<const ImageSample*> part;
        for (std::size_t j = i; j < i + 16; ++j) part.push_back(&full.train[j]);
        const Batch bt = make_batch(part);
        NoGradGuard no_grad;
        total += loss_unet_supervised(segment(t.nets().unet, bt.images), bt.masks).item();
        ++chunks;
    }
    const double dice = total / static_cast<double>(chunks);
    MESSAGE("unet Dice loss after pretraining " << dice);
    CHECK(dice < 0.1);

    // Held-out masks, binarized at 0.5.
    double heldout = 0.0;
    for (const ImageSample& s : full.eval) {
        Shape shape = s.image.shape();
        shape.insert(shape.begin(), 1);
        NoGradGuard no_grad;
        const Tensor m = segment(t.nets().unet, reshape(s.image, shape));
        std::size_t both = 0, a = 0, b = 0;
        for (std::size_t i = 0; i < m.numel(); ++i) {
            const bool p = m[i] >= 0.5, g = s.mask[i] == 1.0;
            both += p && g;
            a += p;
            b += g;
        }
        heldout += a + b == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
    }
    heldout /= static_cast<double>(full.eval.size());
    MESSAGE("held-out unet Dice " << heldout);
    CHECK(heldout >= 0.9);
}

TEST_CASE("training runs are deterministic and follow the critic schedule") {
    const Dataset ds = small_dataset();
    const TrainingResult a = run_training(ds, small_config());
    const TrainingResult b = run_training(ds, small_config());
    REQUIRE(a.trace.size() == 4);
    CHECK(trace_lines(a.trace) == trace_lines(b.trace));
    CHECK(serialize_checkpoint(a.final_state) == serialize_checkpoint(b.final_state));
    CHECK(a.trace.front().iteration == 1);
    CHECK(a.trace.back().iteration == 4);

    for (std::size_t n_critic : {1, 3}) {
        TrainConfig c = small_config();
        c.n_critic = n_critic;
        c.max_iterations = 3;
        Trainer t(c);
        t.run(ds);
        CHECK(t.counters().critic == 3 * n_critic);
        CHECK(t.counters().reconstruction == 3 * n_critic);
        CHECK(t.counters().generator == 3);
        CHECK(t.counters().unet == c.unet_pretrain_iters + 3);
    }

    TrainConfig other = small_config();
    other.seed = 2;
    CHECK(trace_lines(run_training(ds, other).trace) != trace_lines(a.trace));
}

TEST_CASE("checkpoints round trip and reject corruption") {
    const Dataset ds = small_dataset();
    Trainer t(small_config());
    t.run(ds);
    const Checkpoint c = t.checkpoint();
    const std::string bytes = serialize_checkpoint(c);
    CHECK(bytes.substr(0, 4) == "SGCK");
    const Checkpoint back = parse_checkpoint(bytes);
    CHECK(back.iteration == c.iteration);
    CHECK(back.rng_state == c.rng_state);
    CHECK(back.recon_history == c.recon_history);
    const auto na = c.nets.all();
    const auto nb = back.nets.all();
    for (std::size_t i = 0; i < na.size(); ++i) {
        CAPTURE(na[i].first);
        CHECK(na[i].second->params.bitwise_equal(nb[i].second->params));
        const AdamState& sa = na[i].second->params.optimizer();
        const AdamState& sb = nb[i].second->params.optimizer();
        CHECK(sa.step == sb.step);
        for (std::size_t k = 0; k < sa.first_moment.size(); ++k) {
            CHECK(sa.first_moment[k].bitwise_equal(sb.first_moment[k]));
            CHECK(sa.second_moment[k].bitwise_equal(sb.second_moment[k]));
        }
    }
    CHECK(serialize_checkpoint(back) == bytes);

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(parse_checkpoint(bad_magic), ParseError);
    std::string bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(parse_checkpoint(bad_version), ParseError);
    for (std::size_t cut : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
        CAPTURE(cut);
        CHECK_THROWS_AS(parse_checkpoint(std::string_view(bytes).substr(0, cut)), ParseError);
    }
    CHECK_THROWS_AS(parse_checkpoint(bytes + "x"), ParseError);

    const fs::path p = fs::temp_directory_path() / "shapegan_test_ckpt.sgck";
    save_checkpoint(p, c);
    CHECK(serialize_checkpoint(load_checkpoint(p)) == bytes);
    fs::remove(p);
    CHECK_THROWS_AS(load_checkpoint(fs::temp_directory_path() / "shapegan_test_missing.sgck"), IoError);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted trace") {
    const Dataset ds = small_dataset();
    TrainConfig c = small_config();
    c.max_iterations = 5;
    c.checkpoint_every = 2;
    std::vector<Checkpoint> saved;
    Trainer::Hooks hooks;
    hooks.on_checkpoint = [&](const Checkpoint& k) { saved.push_back(k); };
    const TrainingResult whole = run_training(ds, c, hooks);
    REQUIRE(saved.size() == 2);
    CHECK(saved[0].iteration == 2);
    CHECK(saved[1].iteration == 4);

    for (const Checkpoint& k : saved) {
        CAPTURE(k.iteration);
        Trainer resumed(parse_checkpoint(serialize_checkpoint(k)));
        const auto rest = resumed.run(ds);
        const std::vector<TraceRow> tail(whole.trace.begin() + static_cast<std::ptrdiff_t>(k.iteration),
                                         whole.trace.end());
        CHECK(trace_lines(rest) == trace_lines(tail));
        CHECK(serialize_checkpoint(resumed.checkpoint()) == serialize_checkpoint(whole.final_state));
    }
}

TEST_CASE("early stop, small datasets, and numeric failures") {
    const Dataset ds = small_dataset();
    TrainConfig c = small_config();
    c.max_iterations = 20;
    c.early_stop = true;
    c.early_stop_window = 2;
    c.early_stop_tolerance = 1e9;
    const TrainingResult r = run_training(ds, c);
    CHECK(r.early_stopped);
    CHECK(r.trace.size() == 4);

    TrainConfig big = small_config();
    big.batch_size = 9;
    CHECK_THROWS_AS(run_training(ds, big), ConfigError);
    TrainConfig wrong_size = small_config();
    wrong_size.image_size = 24;
    CHECK_THROWS_AS(run_training(ds, wrong_size), ConfigError);

    TrainConfig blowup = small_config();
    blowup.max_iterations = 10;
    blowup.encoder_adam.learning_rate = 1e300;
    blowup.decoder_adam.learning_rate = 1e300;
    Trainer t(blowup);
    CHECK_THROWS_AS(t.run(ds), NumericError);
    REQUIRE(t.last_good().has_value());
    const Checkpoint& good = *t.last_good();
    CHECK(good.iteration == t.iteration());
    CHECK(serialize_checkpoint(good) == serialize_checkpoint(t.checkpoint()));
    for (const auto& [name, model] : good.nets.all()) {
        for (const Tensor& v : model->params.values()) {
            for (double x : v.data()) REQUIRE(std::isfinite(x));
        }
    }
}
