#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shapegan/tensor.hpp"

namespace shapegan {

struct AdamHyper {
    double learning_rate = 1e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamHyper hyper;
    std::uint64_t step = 0;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
};

// Named trainable tensors of one network, in a fixed order, plus the
// optimizer state that belongs to them.
class ParamSet {
public:
    ParamSet() = default;

    void add(std::string name, Tensor value);

    std::size_t size() const noexcept { return values_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::vector<Tensor>& values() const noexcept { return values_; }
    const Tensor& operator[](std::size_t i) const { return values_.at(i); }
    const Tensor& get(const std::string& name) const;
    void set(std::size_t i, Tensor value);

    AdamState& optimizer() noexcept { return adam_; }
    const AdamState& optimizer() const noexcept { return adam_; }
    void reset_optimizer(const AdamHyper& hyper);

    bool bitwise_equal(const ParamSet& other) const;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    AdamState adam_;
};

// One Adam update with bias correction. grads align with params by index.
void adam_step(ParamSet& params, std::span<const Tensor> grads);

}  // namespace shapegan
