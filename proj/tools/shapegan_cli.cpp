#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "shapegan/config.hpp"
#include "shapegan/error.hpp"
#include "shapegan/evaluation.hpp"
#include "shapegan/gradcheck.hpp"
#include "shapegan/netpbm.hpp"
#include "shapegan/ops.hpp"
#include "shapegan/synthetic.hpp"
#include "shapegan/trainer.hpp"

namespace fs = std::filesystem;
using namespace shapegan;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

fs::path beside(const fs::path& out, const char* suffix) {
    fs::path p = out;
    p += suffix;
    return p;
}

double parse_number(const std::string& text, const char* what) {
    double v = 0.0;
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || text.empty()) {
        throw UsageError(std::string("malformed ") + what + " '" + text + "'");
    }
    return v;
}

std::vector<double> parse_alphas(const std::string& text) {
    std::vector<double> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = text.find(',', start);
        out.push_back(parse_number(text.substr(start, comma - start), "alpha list entry"));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

void apply_threads() {
    const char* env = std::getenv("SHAPEGAN_THREADS");
    if (!env || !*env) return;
    const double n = parse_number(env, "SHAPEGAN_THREADS value");
    if (n < 1 || n != static_cast<double>(static_cast<std::size_t>(n))) {
        throw UsageError("SHAPEGAN_THREADS must be a positive integer");
    }
    set_num_threads(static_cast<std::size_t>(n));
}

std::string dataset_config_text(const DatasetConfig& c) {
    std::ostringstream out;
    out.precision(17);
    out << "domains = " << c.domains << "\nn_per_domain = " << c.n_per_domain << "\nsize = " << c.size
        << "\nseed = " << c.seed << "\npaired_eval_fraction = " << c.paired_eval_fraction << '\n';
    return out.str();
}

int gen_data(const fs::path& out, const DatasetConfig& config) {
    config.validate();
    const auto rows = build_dataset(config, out);
    write_text(out / "run.conf", dataset_config_text(config));
    std::size_t train = 0;
    for (const auto& r : rows) train += r.split == Split::train;
    std::printf("wrote %zu training and %zu eval images to %s\n", train, rows.size() - train, out.string().c_str());
    return 0;
}

// Keeps the header and rows up to `through`, so a resumed trace has no gaps or repeats.
std::string trace_prefix(const fs::path& path, std::uint64_t through) {
    std::string kept = trace_header() + "\n";
    if (!fs::exists(path)) return kept;
    std::istringstream in(read_text(path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::size_t comma = line.find(',');
        std::uint64_t it = 0;
        auto [p, ec] = std::from_chars(line.data(), line.data() + comma, it);
        if (ec != std::errc() || it > through) break;
        kept += line + "\n";
    }
    return kept;
}

struct TrainArgs {
    fs::path data;
    fs::path config;
    fs::path out;
    fs::path resume;
    std::vector<std::string> overrides;
    bool quiet = false;
};

void apply_overrides(TrainConfig& c, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const std::size_t eq = o.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + o + "'");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        set_config_value(c, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
}

int train(const TrainArgs& a) {
    const Dataset dataset = load_dataset(a.data);
    std::optional<Trainer> trainer;
    if (!a.resume.empty()) {
        if (!a.config.empty()) throw UsageError("--config cannot be combined with --resume; use --set to extend a run");
        Checkpoint c = load_checkpoint(a.resume);
        apply_overrides(c.config, a.overrides);
        c.config.validate();
        trainer.emplace(std::move(c));
    } else {
        TrainConfig c = a.config.empty() ? TrainConfig{} : load_config(a.config);
        apply_overrides(c, a.overrides);
        c.validate();
        trainer.emplace(c);
    }
    make_dir(a.out);
    write_text(a.out / "config.resolved", serialize_config(trainer->config()));

    const fs::path trace_path = a.out / "trace.csv";
    const std::string prefix = a.resume.empty() ? trace_header() + "\n" : trace_prefix(trace_path, trainer->iteration());
    write_text(trace_path, prefix);
    std::ofstream trace(trace_path, std::ios::app);
    if (!trace) throw IoError("cannot open " + trace_path.string());

    const std::uint64_t total = trainer->config().max_iterations;
    const std::uint64_t every = std::max<std::uint64_t>(1, total / 50);
    Trainer::Hooks hooks;
    hooks.on_row = [&](const TraceRow& r) {
        trace << format_trace_row(r) << '\n';
        trace.flush();
        if (!trace) throw IoError("failed writing " + trace_path.string());
        if (!a.quiet && (r.iteration % every == 0 || r.iteration == total)) {
            std::fprintf(stderr, "iter %llu/%llu critic %.4f recon %.5f adv %.4f shape %.4f unet %.4f\n",
                         static_cast<unsigned long long>(r.iteration), static_cast<unsigned long long>(total),
                         r.critic, r.reconstruction, r.adversarial, r.shape, r.unet);
        }
    };
    hooks.on_checkpoint = [&](const Checkpoint& c) {
        char name[48];
        std::snprintf(name, sizeof name, "ckpt_%08llu.sgck", static_cast<unsigned long long>(c.iteration));
        save_checkpoint(a.out / name, c);
        save_checkpoint(a.out / "latest.sgck", c);
    };
    try {
        trainer->run(dataset, hooks);
    } catch (const NumericError&) {
        if (trainer->last_good()) save_checkpoint(a.out / "last_good.sgck", *trainer->last_good());
        throw;
    }
    save_checkpoint(a.out / "final.sgck", trainer->checkpoint());
    std::printf("finished at iteration %llu%s; checkpoint %s\n", static_cast<unsigned long long>(trainer->iteration()),
                trainer->stopped_early() ? " (early stop)" : "", (a.out / "final.sgck").string().c_str());
    return 0;
}

int interpolate_cmd(const fs::path& ckpt, const fs::path& source, const fs::path& target,
                    const std::string& alphas_text, const fs::path& out) {
    const std::vector<double> alphas = parse_alphas(alphas_text);
    const Checkpoint c = load_checkpoint(ckpt);
    const InterpolationGrid grid =
        render_grid(&c, netpbm::read_image(source), netpbm::read_image(target), alphas);
    netpbm::write_image(out, compose_grid(grid));
    std::ostringstream conf;
    conf << "ckpt = " << ckpt.string() << "\nsource = " << source.string() << "\ntarget = " << target.string()
         << "\nalphas = " << alphas_text << "\n" << serialize_config(c.config);
    write_text(beside(out, ".conf"), conf.str());
    std::printf("wrote %zu-panel grid to %s\n", grid.panels.size() + 2, out.string().c_str());
    return 0;
}

struct EvalArgs {
    fs::path ckpt;
    fs::path ablation;
    fs::path data;
    fs::path out;
    double alpha = 1.0;
    std::uint64_t seed = 1;
    std::size_t classifier_iterations = ClassifierOptions{}.iterations;
};

int eval_cmd(const EvalArgs& a) {
    if (!(a.alpha >= 0.0 && a.alpha <= 1.0)) throw UsageError("--alpha must lie in [0, 1]");
    const Checkpoint full = load_checkpoint(a.ckpt);
    std::optional<Checkpoint> ablation;
    if (!a.ablation.empty()) ablation = load_checkpoint(a.ablation);
    const Dataset dataset = load_dataset(a.data);
    ClassifierOptions opts;
    opts.iterations = a.classifier_iterations;
    const QualityClassifier classifier = train_quality_classifier(dataset, a.seed, opts);
    const EvalReport report = emit_report(full, ablation ? &*ablation : nullptr, dataset, classifier, a.alpha);
    write_text(a.out, report.to_csv());
    write_text(beside(a.out, ".txt"), report.to_table());
    std::ostringstream conf;
    conf.precision(17);
    conf << "ckpt = " << a.ckpt.string() << "\nablation_ckpt = " << a.ablation.string() << "\ndata = " << a.data.string()
         << "\nalpha = " << a.alpha << "\nseed = " << a.seed << "\nclassifier_iterations = " << a.classifier_iterations
         << "\n" << serialize_config(full.config);
    write_text(beside(a.out, ".conf"), conf.str());
    std::fputs(report.to_table().c_str(), stdout);
    return 0;
}

int grad_check(const std::string& level_text) {
    const GradLevel level = parse_grad_level(level_text);
    const auto results = run_gradcheck(level, [](const GradResult& r) {
        std::printf("%-4s %-64s rel err %.3e (tol %.0e, %zu coords)\n", r.passed() ? "ok" : "FAIL", r.name.c_str(),
                    r.error, r.tolerance, r.coordinates);
        std::fflush(stdout);
    });
    require_passing(results);
    std::printf("all %zu gradient checks passed\n", results.size());
    return 0;
}

int report_cmd(const fs::path& ckpt) {
    const Checkpoint c = load_checkpoint(ckpt);
    std::printf("checkpoint %s\niteration %llu\nunet pretrained %s\n", ckpt.string().c_str(),
                static_cast<unsigned long long>(c.iteration), c.unet_pretrained ? "yes" : "no");
    for (const auto& [name, model] : c.nets.all()) {
        std::size_t n = 0;
        for (const auto& t : model->params.values()) n += t.numel();
        std::printf("%-13s %9zu parameters, adam step %llu\n", name, n,
                    static_cast<unsigned long long>(model->params.optimizer().step));
    }
    std::fputs(serialize_config(c.config).c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Shape-preserving feature-space attribute transfer"};
    app.require_subcommand(1);

    DatasetConfig dc;
    fs::path gen_out;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-domain dataset");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--domains", dc.domains, "Number of attribute domains (2 to 4)")->capture_default_str();
    gen->add_option("--n-per-domain", dc.n_per_domain, "Training images per domain")->capture_default_str();
    gen->add_option("--size", dc.size, "Image side length")->capture_default_str();
    gen->add_option("--seed", dc.seed, "Dataset seed")->capture_default_str();
    gen->add_option("--paired-frac", dc.paired_eval_fraction, "Paired eval images per domain, as a fraction of n")
        ->capture_default_str();

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "Train all networks");
    tr->add_option("--data", ta.data, "Dataset directory")->required();
    tr->add_option("--config", ta.config, "Config file (key = value)");
    tr->add_option("--out", ta.out, "Output directory for checkpoints and trace")->required();
    tr->add_option("--resume", ta.resume, "Checkpoint to continue from");
    tr->add_option("--set", ta.overrides, "Config override key=value (repeatable)");
    tr->add_flag("--quiet", ta.quiet, "No progress lines");

    fs::path ip_ckpt, ip_src, ip_tgt, ip_out;
    std::string ip_alphas = "0.25,0.5,0.75,1";
    auto* ip = app.add_subcommand("interpolate", "Render an interpolation grid");
    ip->add_option("--ckpt", ip_ckpt, "Checkpoint")->required();
    ip->add_option("--source", ip_src, "Source image (PPM)")->required();
    ip->add_option("--target", ip_tgt, "Target image (PPM)")->required();
    ip->add_option("--alphas", ip_alphas, "Comma-separated, strictly increasing")->capture_default_str();
    ip->add_option("--out", ip_out, "Composite PPM")->required();

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Score a checkpoint");
    ev->add_option("--ckpt", ea.ckpt, "Full-model checkpoint")->required();
    ev->add_option("--ablation-ckpt", ea.ablation, "Checkpoint trained without the shape loss");
    ev->add_option("--data", ea.data, "Dataset directory")->required();
    ev->add_option("--out", ea.out, "Report (CSV; the aligned table goes to <out>.txt)")->required();
    ev->add_option("--alpha", ea.alpha, "Interpolation strength")->capture_default_str();
    ev->add_option("--seed", ea.seed, "Classifier seed")->capture_default_str();
    ev->add_option("--classifier-iters", ea.classifier_iterations, "Classifier training iterations")
        ->capture_default_str();

    std::string level = "quick";
    auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
    gc->add_option("--level", level, "quick or full")->capture_default_str();

    fs::path rp_ckpt;
    auto* rp = app.add_subcommand("report", "Summarize a checkpoint");
    rp->add_option("--ckpt", rp_ckpt, "Checkpoint")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        apply_threads();
        if (*gen) return gen_data(gen_out, dc);
        if (*tr) return train(ta);
        if (*ip) return interpolate_cmd(ip_ckpt, ip_src, ip_tgt, ip_alphas, ip_out);
        if (*ev) return eval_cmd(ea);
        if (*gc) return grad_check(level);
        if (*rp) return report_cmd(rp_ckpt);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 2;
}
