#include <cmath>
#include <vector>

#include "shapegan/error.hpp"
#include "shapegan/evaluation.hpp"
#include "shapegan/objectives.hpp"
#include "shapegan/ops.hpp"
#include "shapegan/rng.hpp"

namespace shapegan {

namespace {

Tensor logits_of(const Model& m, std::span<const Tensor> w, const Tensor& images) {
    return forward(m.arch, w, images);
}

Tensor gather_images(const std::vector<const ImageSample*>& pool, std::span<const std::size_t> idx) {
    const std::size_t n = pool.front()->image.numel();
    Shape s = pool.front()->image.shape();
    s.insert(s.begin(), idx.size());
    std::vector<double> v;
    v.reserve(idx.size() * n);
    for (std::size_t i : idx) v.insert(v.end(), pool[i]->image.data().begin(), pool[i]->image.data().end());
    return Tensor(s, std::move(v));
}

}  // namespace

Tensor class_probabilities(const Model& classifier, const Tensor& images) {
    NoGradGuard no_grad;
    const Tensor ls = log_softmax(logits_of(classifier, classifier.params.values(), images));
    std::vector<double> p(ls.numel());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(ls[i]);
    return Tensor(ls.shape(), std::move(p));
}

std::vector<std::size_t> classify(const Model& classifier, const Tensor& images) {
    NoGradGuard no_grad;
    const Tensor lg = logits_of(classifier, classifier.params.values(), images);
    const std::size_t n = lg.dim(0), k = lg.dim(1);
    std::vector<std::size_t> out(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 1; j < k; ++j) {
            if (lg[i * k + j] > lg[i * k + out[i]]) out[i] = j;
        }
    }
    return out;
}

QualityClassifier train_quality_classifier(const Dataset& dataset, std::uint64_t seed,
                                           const ClassifierOptions& options) {
    if (dataset.train.empty()) throw UsageError("cannot train a classifier on an empty training split");
    if (dataset.domains < 2) throw ConfigError("a quality classifier needs at least two domains");
    if (options.batch_size == 0) throw ConfigError("classifier batch size must be positive");
    ArchitectureOptions ao;
    ao.image_channels = dataset.train.front().image.dim(0);
    ao.image_size = dataset.size;
    ao.num_classes = dataset.domains;
    QualityClassifier qc;
    qc.model = make_model(NetKind::classifier, ao, derive_seed(seed, 0xc1a5));
    qc.model.params.reset_optimizer(options.adam);

    std::vector<const ImageSample*> pool;
    for (const auto& s : dataset.train) pool.push_back(&s);
    Rng rng(derive_seed(seed, 0xc1a5, 1));
    std::vector<std::size_t> idx(options.batch_size), labels(options.batch_size);
    for (std::size_t it = 0; it < options.iterations; ++it) {
        for (std::size_t b = 0; b < idx.size(); ++b) {
            idx[b] = rng.below(pool.size());
            labels[b] = pool[idx[b]]->domain;
        }
        const Tensor x = gather_images(pool, idx);
        Tape tape;
        const std::vector<Tensor> w = tape.watch(qc.model.params.values());
        const Tensor loss = loss_cross_entropy(logits_of(qc.model, w, x), labels);
        adam_step(qc.model.params, backward(loss, w));
    }

    std::size_t hits = 0;
    for (std::size_t first = 0; first < dataset.eval.size(); first += 32) {
        const std::size_t count = std::min<std::size_t>(32, dataset.eval.size() - first);
        std::vector<const ImageSample*> chunk;
        std::vector<std::size_t> all;
        for (std::size_t i = 0; i < count; ++i) {
            chunk.push_back(&dataset.eval[first + i]);
            all.push_back(i);
        }
        const auto pred = classify(qc.model, gather_images(chunk, all));
        for (std::size_t i = 0; i < count; ++i) {
            qc.heldout_predictions.push_back(pred[i]);
            hits += pred[i] == chunk[i]->domain;
        }
    }
    qc.heldout_accuracy = dataset.eval.empty() ? 0.0
                                               : static_cast<double>(hits) / static_cast<double>(dataset.eval.size());
    return qc;
}

}  // namespace shapegan
