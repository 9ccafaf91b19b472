#include "shapegan/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>

#include "shapegan/error.hpp"
#include "shapegan/ops.hpp"

namespace shapegan {

namespace {

constexpr std::size_t kEvalChunk = 16;

void require_trained(const Checkpoint* c, const char* what) {
    if (!c) throw UsageError(std::string(what) + ": no checkpoint given");
    for (const auto& [name, model] : c->nets.all()) {
        if (model->params.size() == 0) {
            throw UsageError(std::string(what) + ": checkpoint has no " + name + " parameters");
        }
    }
}

Tensor stack(const std::vector<const Tensor*>& items) {
    Shape s = items.front()->shape();
    std::vector<double> v;
    v.reserve(items.size() * items.front()->numel());
    for (const auto* t : items) {
        if (t->shape() != s) throw ConfigError("cannot stack tensors of different shapes");
        v.insert(v.end(), t->data().begin(), t->data().end());
    }
    s.insert(s.begin(), items.size());
    return Tensor(s, std::move(v));
}

Tensor sample_of(const Tensor& batch, std::size_t i) {
    Shape s(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t n = shape_numel(s);
    auto d = batch.data().subspan(i * n, n);
    return Tensor(s, std::vector<double>(d.begin(), d.end()));
}

struct PairedEval {
    std::vector<const ImageSample*> sources;
    std::vector<const ImageSample*> targets;  // partner of each source, shifted by one
};

PairedEval paired_eval(const Checkpoint& c, const Dataset& dataset) {
    const auto src = dataset.select(Split::eval, c.config.source_domain);
    const auto tgt = dataset.select(Split::eval, c.config.target_domain);
    if (src.empty() || tgt.empty()) throw UsageError("dataset has no paired evaluation split for this domain pair");
    PairedEval p;
    p.sources = src;
    for (std::size_t j = 0; j < src.size(); ++j) p.targets.push_back(tgt[(j + 1) % tgt.size()]);
    return p;
}

// Runs fn(first, count) over [0, n) in fixed-size chunks.
template <typename Fn>
void chunked(std::size_t n, Fn fn) {
    for (std::size_t first = 0; first < n; first += kEvalChunk) fn(first, std::min(kEvalChunk, n - first));
}

ShapeScore summarize(std::vector<double> values) {
    ShapeScore s;
    s.per_sample = std::move(values);
    if (s.per_sample.empty()) return s;
    double total = 0.0;
    for (double v : s.per_sample) total += v;
    s.mean = total / static_cast<double>(s.per_sample.size());
    double sq = 0.0;
    for (double v : s.per_sample) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(s.per_sample.size()));
    return s;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

Tensor translate(const Nets& nets, InterpolationMode mode, const Tensor& source, const Tensor& target,
                 std::span<const double> alpha) {
    NoGradGuard no_grad;
    const FeatureMap fx = encode(nets.encoder, source, FeatureRole::source);
    const FeatureMap fy = encode(nets.encoder, target, FeatureRole::target);
    return decode(nets.decoder, interpolate(fx, fy, alpha, mode, &nets.interpolator));
}

InterpolationGrid render_grid(const Checkpoint* checkpoint, const Tensor& source, const Tensor& target,
                              std::span<const double> alphas) {
    require_trained(checkpoint, "render_grid");
    if (alphas.empty()) throw UsageError("render_grid: at least one alpha is required");
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        if (!(alphas[i] >= 0.0 && alphas[i] <= 1.0)) throw UsageError("render_grid: alpha outside [0, 1]");
        if (i > 0 && !(alphas[i] > alphas[i - 1])) throw UsageError("render_grid: alphas must be strictly increasing");
    }
    const Shape expected = checkpoint->nets.encoder.arch.input_shape();
    if (source.shape() != expected || target.shape() != expected) {
        throw ConfigError("render_grid: images must be " + shape_string(expected) + ", got " +
                          shape_string(source.shape()) + " and " + shape_string(target.shape()));
    }
    Shape batched = expected;
    batched.insert(batched.begin(), 1);
    const Tensor x = source.with_shape(batched);
    const Tensor y = target.with_shape(batched);
    InterpolationGrid grid{source, target, {}};
    for (double a : alphas) {
        const Tensor out = translate(checkpoint->nets, checkpoint->config.interpolation, x, y,
                                     std::span<const double>(&a, 1));
        grid.panels.push_back({a, out.with_shape(expected)});
    }
    return grid;
}

Tensor compose_grid(const InterpolationGrid& grid) {
    const std::size_t c = grid.source.dim(0), h = grid.source.dim(1), w = grid.source.dim(2);
    std::vector<const Tensor*> tiles = {&grid.source};
    for (const auto& p : grid.panels) tiles.push_back(&p.image);
    tiles.push_back(&grid.target);
    const std::size_t cols = tiles.size();
    std::vector<double> out(c * h * w * cols);
    for (std::size_t t = 0; t < cols; ++t) {
        auto v = tiles[t]->data();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    out[(ch * h + y) * (w * cols) + t * w + x] = v[(ch * h + y) * w + x];
    }
    return Tensor({c, h, w * cols}, std::move(out));
}

double set_dice(const Tensor& a, const Tensor& b, double threshold) {
    if (a.shape() != b.shape()) {
        throw ConfigError("set_dice: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const bool ia = a[i] > threshold, ib = b[i] > threshold;
        na += ia;
        nb += ib;
        both += ia && ib;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

ShapeScore shape_preservation_score(const Checkpoint* checkpoint, const Dataset& dataset, double alpha) {
    require_trained(checkpoint, "shape_preservation_score");
    const PairedEval p = paired_eval(*checkpoint, dataset);
    std::vector<double> scores;
    chunked(p.sources.size(), [&](std::size_t first, std::size_t count) {
        std::vector<const Tensor*> xs, ys;
        for (std::size_t i = first; i < first + count; ++i) {
            xs.push_back(&p.sources[i]->image);
            ys.push_back(&p.targets[i]->image);
        }
        const Tensor out = translate(checkpoint->nets, checkpoint->config.interpolation, stack(xs), stack(ys),
                                     std::span<const double>(&alpha, 1));
        NoGradGuard no_grad;
        const Tensor masks = segment(checkpoint->nets.unet, out);
        for (std::size_t i = 0; i < count; ++i) {
            scores.push_back(set_dice(sample_of(masks, i), p.sources[first + i]->mask));
        }
    });
    return summarize(std::move(scores));
}

ShapeScore unet_calibration_score(const Checkpoint* checkpoint, const Dataset& dataset) {
    require_trained(checkpoint, "unet_calibration_score");
    const PairedEval p = paired_eval(*checkpoint, dataset);
    std::vector<double> scores;
    chunked(p.sources.size(), [&](std::size_t first, std::size_t count) {
        std::vector<const Tensor*> xs;
        for (std::size_t i = first; i < first + count; ++i) xs.push_back(&p.sources[i]->image);
        NoGradGuard no_grad;
        const Tensor masks = segment(checkpoint->nets.unet, stack(xs));
        for (std::size_t i = 0; i < count; ++i) {
            scores.push_back(set_dice(sample_of(masks, i), p.sources[first + i]->mask));
        }
    });
    return summarize(std::move(scores));
}

TranslationScore classify_translated(const Checkpoint* checkpoint, const Model& classifier,
                                     const Dataset& dataset, double alpha) {
    require_trained(checkpoint, "classify_translated");
    if (classifier.params.size() == 0) throw UsageError("classify_translated: classifier is untrained");
    const std::size_t target = checkpoint->config.target_domain;
    if (target >= classifier.arch.output_shape().front()) {
        throw ConfigError("classify_translated: classifier does not know domain " + std::to_string(target));
    }
    const PairedEval p = paired_eval(*checkpoint, dataset);
    std::size_t hits = 0;
    double prob = 0.0;
    chunked(p.sources.size(), [&](std::size_t first, std::size_t count) {
        std::vector<const Tensor*> xs, ys;
        for (std::size_t i = first; i < first + count; ++i) {
            xs.push_back(&p.sources[i]->image);
            ys.push_back(&p.targets[i]->image);
        }
        const Tensor out = translate(checkpoint->nets, checkpoint->config.interpolation, stack(xs), stack(ys),
                                     std::span<const double>(&alpha, 1));
        const Tensor probs = class_probabilities(classifier, out);
        const std::size_t k = probs.dim(1);
        for (std::size_t i = 0; i < count; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < k; ++j) {
                if (probs[i * k + j] > probs[i * k + best]) best = j;
            }
            hits += best == target;
            prob += probs[i * k + target];
        }
    });
    const double n = static_cast<double>(p.sources.size());
    return {static_cast<double>(hits) / n, prob / n};
}

std::optional<double> EvalReport::dice_delta() const {
    if (rows.size() < 3 || !rows[1].present) return std::nullopt;
    return rows[2].dice_mean - rows[1].dice_mean;
}

std::optional<double> EvalReport::accuracy_delta() const {
    if (rows.size() < 3 || !rows[1].present) return std::nullopt;
    return rows[2].accuracy - rows[1].accuracy;
}

std::string EvalReport::to_csv() const {
    std::string out = "source,target,alpha,row,accuracy,shape_dice_mean,shape_dice_std\n";
    for (const auto& r : rows) {
        out += std::to_string(source_domain) + "," + std::to_string(target_domain) + "," + fmt(alpha) + "," +
               r.name + "," + (r.present ? fmt(r.accuracy) + "," + fmt(r.dice_mean) + "," + fmt(r.dice_std)
                                         : std::string("n/a,n/a,n/a")) +
               "\n";
    }
    return out;
}

std::string EvalReport::to_table() const {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "domains %zu -> %zu, alpha %.2f\n", source_domain, target_domain, alpha);
    out << buf;
    std::snprintf(buf, sizeof buf, "%-36s %10s %12s %10s\n", "data set", "accuracy", "shape dice", "dice std");
    out << buf;
    const char* labels[] = {"real held-out (baseline)", "translated, no shape loss", "translated, full model"};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const char* label = i < 3 ? labels[i] : r.name.c_str();
        if (r.present) {
            std::snprintf(buf, sizeof buf, "%-36s %10.4f %12.4f %10.4f\n", label, r.accuracy, r.dice_mean, r.dice_std);
        } else {
            std::snprintf(buf, sizeof buf, "%-36s %10s %12s %10s\n", label, "n/a", "n/a", "n/a");
        }
        out << buf;
    }
    if (auto d = dice_delta()) {
        std::snprintf(buf, sizeof buf, "shape dice gain over ablation: %+.4f\n", *d);
        out << buf;
    }
    return out.str();
}

EvalReport emit_report(const Checkpoint& full, const Checkpoint* ablation, const Dataset& dataset,
                       const QualityClassifier& classifier, double alpha) {
    EvalReport report;
    report.source_domain = full.config.source_domain;
    report.target_domain = full.config.target_domain;
    report.alpha = alpha;
    if (ablation && (ablation->config.source_domain != report.source_domain ||
                     ablation->config.target_domain != report.target_domain)) {
        throw ConfigError("ablation checkpoint was trained on a different domain pair");
    }

    // Baseline: classifier on real held-out images of the pair's domains.
    ReportRow real{"real_heldout"};
    {
        std::size_t hits = 0, total = 0;
        std::vector<const ImageSample*> pool;
        for (std::size_t d : {report.source_domain, report.target_domain}) {
            const auto part = dataset.select(Split::eval, d);
            pool.insert(pool.end(), part.begin(), part.end());
        }
        chunked(pool.size(), [&](std::size_t first, std::size_t count) {
            std::vector<const Tensor*> xs;
            for (std::size_t i = first; i < first + count; ++i) xs.push_back(&pool[i]->image);
            const auto pred = classify(classifier.model, stack(xs));
            for (std::size_t i = 0; i < count; ++i) hits += pred[i] == pool[first + i]->domain;
            total += count;
        });
        real.accuracy = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
        const ShapeScore cal = unet_calibration_score(&full, dataset);
        real.dice_mean = cal.mean;
        real.dice_std = cal.stddev;
    }
    report.rows.push_back(real);

    auto translated = [&](const char* name, const Checkpoint* c) {
        ReportRow row{name};
        if (!c) {
            row.present = false;
            return row;
        }
        row.accuracy = classify_translated(c, classifier.model, dataset, alpha).target_rate;
        const ShapeScore s = shape_preservation_score(c, dataset, alpha);
        row.dice_mean = s.mean;
        row.dice_std = s.stddev;
        return row;
    };
    report.rows.push_back(translated("translated_no_shape", ablation));
    report.rows.push_back(translated("translated_full", &full));
    return report;
}

}  // namespace shapegan
