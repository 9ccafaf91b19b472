#include "shapegan/tensor.hpp"

#include <algorithm>
#include <cstring>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <optional>
#include <sstream>

#include "shapegan/error.hpp"
#include "shapegan/ops.hpp"

namespace shapegan {

namespace {

thread_local Tape* active_tape = nullptr;
thread_local bool recording_enabled = true;

#if defined(__GLIBC__)
// Large weight gradients are allocated and freed every step. Served from
// fresh mmap pages they page-fault on every touch, so keep them on the heap.
const bool heap_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
}();
#endif

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)) {
    for (auto d : shape_) {
        if (d == 0) throw ConfigError("tensor dimensions must be positive: " + shape_string(shape_));
    }
    if (shape_numel(shape_) != data.size()) {
        throw ConfigError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_string(shape_));
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor::Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data,
               std::shared_ptr<detail::Node> node)
    : shape_(std::move(shape)), data_(std::move(data)), node_(std::move(node)) {}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }
Tensor Tensor::ones(const Shape& shape) { return full(shape, 1.0); }
Tensor Tensor::full(const Shape& shape, double value) {
    return Tensor(shape, std::vector<double>(shape_numel(shape), value));
}
Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::span<const double> Tensor::data() const noexcept {
    if (!data_) return {};
    return {data_->data(), data_->size()};
}

double Tensor::item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape_));
    return (*data_)[0];
}

bool Tensor::on_tape() const noexcept { return node_ && node_->tape != nullptr; }

bool Tensor::bitwise_equal(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    if (numel() != other.numel()) return false;
    if (numel() == 0) return true;
    return std::memcmp(data_->data(), other.data_->data(), numel() * sizeof(double)) == 0;
}

Tape::Tape() : previous_(active_tape) { active_tape = this; }

Tape::~Tape() {
    for (auto& node : nodes_) {
        node->tape = nullptr;
        // Backward closures may capture tensors that point back at their own
        // node; clearing them breaks any reference cycle.
        node->backward = nullptr;
        node->inputs.clear();
    }
    active_tape = previous_;
}

Tape* Tape::active() noexcept { return active_tape; }

Tensor Tape::watch(const Tensor& value) {
    if (!value.defined()) throw UsageError("cannot watch an undefined tensor");
    auto node = std::make_shared<detail::Node>();
    node->tape = this;
    node->index = nodes_.size();
    node->op = "leaf";
    nodes_.push_back(node);
    return value.with_node(std::move(node));
}

std::vector<Tensor> Tape::watch(std::span<const Tensor> values) {
    std::vector<Tensor> out;
    out.reserve(values.size());
    for (const auto& v : values) out.push_back(watch(v));
    return out;
}

std::shared_ptr<detail::Node> Tape::record(const char* op, std::vector<const Tensor*> inputs,
                                           detail::BackwardFn backward) {
    std::vector<std::shared_ptr<detail::Node>> refs;
    refs.reserve(inputs.size());
    bool any = false;
    for (const Tensor* t : inputs) {
        if (t->node() && t->node()->tape == this) {
            refs.push_back(t->node());
            any = true;
        } else {
            refs.push_back(nullptr);
        }
    }
    if (!any) return nullptr;
    auto node = std::make_shared<detail::Node>();
    node->tape = this;
    node->index = nodes_.size();
    node->op = op;
    node->inputs = std::move(refs);
    node->backward = std::move(backward);
    nodes_.push_back(node);
    return node;
}

NoGradGuard::NoGradGuard() : previous_(recording_enabled) { recording_enabled = false; }
NoGradGuard::~NoGradGuard() { recording_enabled = previous_; }

EnableGradGuard::EnableGradGuard() : previous_(recording_enabled) { recording_enabled = true; }
EnableGradGuard::~EnableGradGuard() { recording_enabled = previous_; }

bool grad_enabled() noexcept { return recording_enabled; }

std::vector<Tensor> backward(const Tensor& output, std::span<const Tensor> wrt, bool higher_order) {
    if (output.numel() != 1) {
        throw UsageError("backward requires a one-element output, got shape " +
                         shape_string(output.shape()));
    }
    if (!output.on_tape()) throw UsageError("backward output is not recorded on a live tape");
    Tape* tape = output.node()->tape;
    const std::size_t top = output.node()->index;
    std::size_t lowest = top;
    for (const auto& w : wrt) {
        if (!w.on_tape() || w.node()->tape != tape) {
            throw UsageError("backward target of shape " + shape_string(w.shape()) +
                             " is detached from the output's tape");
        }
        lowest = std::min(lowest, w.node()->index);
    }

    std::optional<NoGradGuard> no_grad;
    if (!higher_order) no_grad.emplace();

    std::vector<std::optional<Tensor>> grads(top + 1);
    grads[top] = Tensor::ones(output.shape());
    for (std::size_t i = top + 1; i-- > lowest;) {
        if (!grads[i]) continue;
        // Copy what we need: higher-order recording may grow the tape.
        const detail::Node& current = tape->node(i);
        if (!current.backward) continue;
        auto backward_fn = current.backward;
        auto inputs = current.inputs;
        std::vector<Tensor> input_grads = backward_fn(*grads[i]);
        for (std::size_t k = 0; k < inputs.size(); ++k) {
            if (!inputs[k] || k >= input_grads.size() || !input_grads[k].defined()) continue;
            auto& slot = grads[inputs[k]->index];
            if (slot) {
                slot = add(*slot, input_grads[k]);
            } else {
                slot = input_grads[k];
            }
        }
        // Free intermediate gradients that are no longer needed.
        if (i != top) {
            bool keep = false;
            for (const auto& w : wrt) keep = keep || w.node()->index == i;
            if (!keep) grads[i].reset();
        }
    }

    std::vector<Tensor> result;
    result.reserve(wrt.size());
    for (const auto& w : wrt) {
        const auto& g = grads[w.node()->index];
        result.push_back(g ? *g : Tensor::zeros(w.shape()));
    }
    return result;
}

Tensor backward(const Tensor& output, const Tensor& wrt, bool higher_order) {
    return backward(output, std::span<const Tensor>(&wrt, 1), higher_order).front();
}

}  // namespace shapegan
