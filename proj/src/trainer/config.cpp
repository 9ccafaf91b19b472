#include "shapegan/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <vector>

#include "shapegan/error.hpp"

namespace shapegan {

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size()) {
        throw ConfigError("config key " + key + ": expected a number, got '" + text + "'");
    }
    return v;
}

template <typename T>
T parse_unsigned(const std::string& key, const std::string& text) {
    T v = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size()) {
        throw ConfigError("config key " + key + ": expected a non-negative integer, got '" + text + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("config key " + key + ": expected true or false, got '" + text + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Field {
    std::string key;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

Field real(std::string key, double TrainConfig::*member) {
    return {key, [member](const TrainConfig& c) { return format_double(c.*member); },
            [key, member](TrainConfig& c, const std::string& v) { c.*member = parse_double(key, v); }};
}

Field count(std::string key, std::size_t TrainConfig::*member) {
    return {key, [member](const TrainConfig& c) { return std::to_string(c.*member); },
            [key, member](TrainConfig& c, const std::string& v) {
                c.*member = parse_unsigned<std::size_t>(key, v);
            }};
}

Field flag(std::string key, bool TrainConfig::*member) {
    return {key, [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); },
            [key, member](TrainConfig& c, const std::string& v) { c.*member = parse_bool(key, v); }};
}

Field weight(std::string key, double LossWeights::*member) {
    return {key, [member](const TrainConfig& c) { return format_double(c.weights.*member); },
            [key, member](TrainConfig& c, const std::string& v) {
                c.weights.*member = parse_double(key, v);
            }};
}

Field adam(const std::string& net, const char* what, AdamHyper TrainConfig::*hyper,
           double AdamHyper::*member) {
    std::string key = net + "." + what;
    return {key, [hyper, member](const TrainConfig& c) { return format_double((c.*hyper).*member); },
            [key, hyper, member](TrainConfig& c, const std::string& v) {
                (c.*hyper).*member = parse_double(key, v);
            }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> t = {
            count("n_critic", &TrainConfig::n_critic),
            weight("lambda_adv", &LossWeights::adversarial),
            weight("lambda_rec", &LossWeights::reconstruction),
            weight("lambda_shape", &LossWeights::shape),
            weight("lambda_gp", &LossWeights::gradient_penalty),
        };
        const std::pair<const char*, AdamHyper TrainConfig::*> nets[] = {
            {"encoder", &TrainConfig::encoder_adam},
            {"decoder", &TrainConfig::decoder_adam},
            {"interpolator", &TrainConfig::interpolator_adam},
            {"critic", &TrainConfig::critic_adam},
            {"unet", &TrainConfig::unet_adam},
        };
        for (const auto& [name, hyper] : nets) {
            t.push_back(adam(name, "lr", hyper, &AdamHyper::learning_rate));
            t.push_back(adam(name, "beta1", hyper, &AdamHyper::beta1));
            t.push_back(adam(name, "beta2", hyper, &AdamHyper::beta2));
            t.push_back(adam(name, "epsilon", hyper, &AdamHyper::epsilon));
        }
        t.push_back(count("batch_size", &TrainConfig::batch_size));
        t.push_back(count("max_iterations", &TrainConfig::max_iterations));
        t.push_back(count("image_size", &TrainConfig::image_size));
        t.push_back(count("image_channels", &TrainConfig::image_channels));
        t.push_back(count("feature_channels", &TrainConfig::feature_channels));
        t.push_back({"alpha_sampling", [](const TrainConfig& c) { return c.alpha_sampling.to_string(); },
                     [](TrainConfig& c, const std::string& v) { c.alpha_sampling = AlphaSampling::parse(v); }});
        t.push_back({"interpolation",
                     [](const TrainConfig& c) {
                         return std::string(c.interpolation == InterpolationMode::learned ? "learned" : "linear");
                     },
                     [](TrainConfig& c, const std::string& v) {
                         if (v == "learned") c.interpolation = InterpolationMode::learned;
                         else if (v == "linear") c.interpolation = InterpolationMode::linear;
                         else throw ConfigError("config key interpolation: expected learned or linear, got '" + v + "'");
                     }});
        t.push_back({"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
                     [](TrainConfig& c, const std::string& v) { c.seed = parse_unsigned<std::uint64_t>("seed", v); }});
        t.push_back(count("unet_pretrain_iters", &TrainConfig::unet_pretrain_iters));
        t.push_back(flag("recon_updates_encoder", &TrainConfig::recon_updates_encoder));
        t.push_back(flag("generator_updates_encoder", &TrainConfig::generator_updates_encoder));
        t.push_back({"shape_reference",
                     [](const TrainConfig& c) {
                         return std::string(c.shape_reference == ShapeReference::unet ? "unet" : "ground_truth");
                     },
                     [](TrainConfig& c, const std::string& v) {
                         if (v == "unet") c.shape_reference = ShapeReference::unet;
                         else if (v == "ground_truth") c.shape_reference = ShapeReference::ground_truth;
                         else throw ConfigError("config key shape_reference: expected unet or ground_truth, got '" + v + "'");
                     }});
        t.push_back(count("source_domain", &TrainConfig::source_domain));
        t.push_back(count("target_domain", &TrainConfig::target_domain));
        t.push_back(count("checkpoint_every", &TrainConfig::checkpoint_every));
        t.push_back(flag("early_stop", &TrainConfig::early_stop));
        t.push_back(count("early_stop_window", &TrainConfig::early_stop_window));
        t.push_back(real("early_stop_tolerance", &TrainConfig::early_stop_tolerance));
        return t;
    }();
    return table;
}

}  // namespace

std::string AlphaSampling::to_string() const {
    return uniform ? "uniform" : "fixed:" + format_double(fixed);
}

AlphaSampling AlphaSampling::parse(const std::string& text) {
    if (text == "uniform") return {};
    if (text.rfind("fixed:", 0) == 0) {
        const double v = parse_double("alpha_sampling", text.substr(6));
        if (!(v > 0.0 && v <= 1.0)) throw ConfigError("config key alpha_sampling: fixed alpha must be in (0, 1]");
        return {false, v};
    }
    throw ConfigError("config key alpha_sampling: expected uniform or fixed:<alpha>, got '" + text + "'");
}

void TrainConfig::validate() const {
    if (n_critic < 1) throw ConfigError("n_critic must be at least 1");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    weights.validate();
    for (const AdamHyper* h : {&encoder_adam, &decoder_adam, &interpolator_adam, &critic_adam, &unet_adam}) {
        if (!(h->learning_rate > 0.0) || !(h->epsilon > 0.0)) {
            throw ConfigError("learning rates and epsilons must be positive");
        }
        if (!(h->beta1 >= 0.0 && h->beta1 < 1.0) || !(h->beta2 >= 0.0 && h->beta2 < 1.0)) {
            throw ConfigError("Adam betas must be in [0, 1)");
        }
    }
    if (source_domain == target_domain) throw ConfigError("source_domain and target_domain must differ");
    if (early_stop && early_stop_window < 2) throw ConfigError("early_stop_window must be at least 2");
    make_architecture(NetKind::encoder, architecture());
}

ArchitectureOptions TrainConfig::architecture() const {
    ArchitectureOptions o;
    o.image_channels = image_channels;
    o.image_size = image_size;
    o.feature_channels = feature_channels;
    return o;
}

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (f.key == key) {
            f.set(config, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text, std::move(base));
}

std::string serialize_config(const TrainConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
    return out;
}

}  // namespace shapegan
