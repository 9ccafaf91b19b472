#pragma once

#include <cmath>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "shapegan/error.hpp"
#include "shapegan/tensor.hpp"

namespace shapegan::detail {

inline bool wants_grad(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) return false;
    Tape* tape = Tape::active();
    if (!tape) return false;
    for (const Tensor* t : inputs) {
        if (t->node() && t->node()->tape == tape) return true;
    }
    return false;
}

inline void check_finite(const char* op, const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + " produced a non-finite value");
        }
    }
}

// Wraps computed output data into a Tensor, recording a tape node when any
// input is on the active tape. make_backward is only invoked in that case.
template <class MakeBackward>
Tensor finish(const char* op, Shape shape, std::vector<double> data,
              std::initializer_list<const Tensor*> inputs, MakeBackward&& make_backward) {
    check_finite(op, data);
    auto storage = std::make_shared<const std::vector<double>>(std::move(data));
    std::shared_ptr<Node> node;
    if (wants_grad(inputs)) {
        node = Tape::active()->record(op, std::vector<const Tensor*>(inputs), make_backward());
    }
    return Tensor(std::move(shape), std::move(storage), std::move(node));
}

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ConfigError(message);
}

}  // namespace shapegan::detail
