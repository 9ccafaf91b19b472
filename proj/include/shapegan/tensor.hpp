#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace shapegan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;
class Tensor;

namespace detail {

// Returns one gradient per recorded input, in input order. An empty Tensor
// means "no contribution".
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_output)>;

struct Node {
    Tape* tape = nullptr;  // reset to null when the owning tape is destroyed
    std::size_t index = 0;
    const char* op = "";
    std::vector<std::shared_ptr<Node>> inputs;  // null for constant inputs
    BackwardFn backward;
};

}  // namespace detail

// Dense row-major array of doubles. Storage is immutable and shared, so
// copies are cheap and a Tensor without a tape node is a plain value.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(const Shape& shape);
    static Tensor ones(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const noexcept { return data_ ? data_->size() : 0; }
    bool defined() const noexcept { return static_cast<bool>(data_); }

    std::span<const double> data() const noexcept;
    double operator[](std::size_t i) const { return (*data_)[i]; }
    double item() const;

    const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
    // True when the tensor is recorded on a live tape.
    bool on_tape() const noexcept;
    Tensor detach() const { return Tensor(shape_, data_, nullptr); }
    Tensor with_node(std::shared_ptr<detail::Node> node) const {
        return Tensor(shape_, data_, std::move(node));
    }
    // Same storage under another shape of equal size; drops the node.
    Tensor with_shape(Shape shape) const { return Tensor(std::move(shape), data_, nullptr); }

    // Internal constructor used by primitives.
    Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data,
           std::shared_ptr<detail::Node> node);

    bool bitwise_equal(const Tensor& other) const;

private:
    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    std::shared_ptr<detail::Node> node_;
};

// Append-only record of primitive applications. Constructing a Tape makes it
// the active tape of the calling thread until it is destroyed; tapes nest.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a leaf so gradients can be taken with respect to it.
    Tensor watch(const Tensor& value);
    std::vector<Tensor> watch(std::span<const Tensor> values);

    std::size_t size() const noexcept { return nodes_.size(); }
    const detail::Node& node(std::size_t i) const { return *nodes_.at(i); }

    static Tape* active() noexcept;

    // Used by primitives; returns null when nothing needs recording.
    std::shared_ptr<detail::Node> record(const char* op, std::vector<const Tensor*> inputs,
                                         detail::BackwardFn backward);

private:
    std::vector<std::shared_ptr<detail::Node>> nodes_;
    Tape* previous_;
};

// Disables recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Re-enables recording inside a NoGradGuard scope.
class EnableGradGuard {
public:
    EnableGradGuard();
    ~EnableGradGuard();
    EnableGradGuard(const EnableGradGuard&) = delete;
    EnableGradGuard& operator=(const EnableGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

// Reverse-mode gradient of a one-element tensor. With higher_order set, the
// backward rules are themselves recorded so the returned gradients can be
// differentiated again.
std::vector<Tensor> backward(const Tensor& output, std::span<const Tensor> wrt,
                             bool higher_order = false);
Tensor backward(const Tensor& output, const Tensor& wrt, bool higher_order = false);

}  // namespace shapegan
