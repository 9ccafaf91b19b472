#include "shapegan/adam.hpp"

#include <cmath>

#include "shapegan/error.hpp"

namespace shapegan {

void ParamSet::add(std::string name, Tensor value) {
    for (const auto& existing : names_) {
        if (existing == name) throw ConfigError("duplicate parameter name " + name);
    }
    names_.push_back(std::move(name));
    adam_.first_moment.push_back(Tensor::zeros(value.shape()));
    adam_.second_moment.push_back(Tensor::zeros(value.shape()));
    values_.push_back(value.detach());
}

const Tensor& ParamSet::get(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) return values_[i];
    }
    throw ConfigError("unknown parameter " + name);
}

void ParamSet::set(std::size_t i, Tensor value) {
    if (value.shape() != values_.at(i).shape()) {
        throw ConfigError("parameter " + names_[i] + " expects shape " +
                          shape_string(values_[i].shape()) + ", got " + shape_string(value.shape()));
    }
    values_[i] = value.detach();
}

void ParamSet::reset_optimizer(const AdamHyper& hyper) {
    adam_.hyper = hyper;
    adam_.step = 0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        adam_.first_moment[i] = Tensor::zeros(values_[i].shape());
        adam_.second_moment[i] = Tensor::zeros(values_[i].shape());
    }
}

bool ParamSet::bitwise_equal(const ParamSet& other) const {
    if (names_ != other.names_) return false;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!values_[i].bitwise_equal(other.values_[i])) return false;
    }
    return true;
}

void adam_step(ParamSet& params, std::span<const Tensor> grads) {
    if (grads.size() != params.size()) {
        throw ConfigError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                          std::to_string(params.size()) + " parameters");
    }
    AdamState& state = params.optimizer();
    const AdamHyper& h = state.hyper;
    const double t = static_cast<double>(state.step + 1);
    const double correction1 = 1.0 - std::pow(h.beta1, t);
    const double correction2 = 1.0 - std::pow(h.beta2, t);

    // Computed in full before committing so a numeric failure leaves the
    // parameters and state untouched.
    std::vector<Tensor> new_values, new_first, new_second;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& p = params[i];
        const Tensor& g = grads[i];
        if (g.shape() != p.shape()) {
            throw ConfigError("adam_step: gradient for " + params.names()[i] + " has shape " +
                              shape_string(g.shape()) + ", expected " + shape_string(p.shape()));
        }
        auto pv = p.data();
        auto gv = g.data();
        auto mv = state.first_moment[i].data();
        auto vv = state.second_moment[i].data();
        std::vector<double> np(pv.size()), nm(pv.size()), nv(pv.size());
        for (std::size_t k = 0; k < pv.size(); ++k) {
            nm[k] = h.beta1 * mv[k] + (1.0 - h.beta1) * gv[k];
            nv[k] = h.beta2 * vv[k] + (1.0 - h.beta2) * gv[k] * gv[k];
            const double m_hat = nm[k] / correction1;
            const double v_hat = nv[k] / correction2;
            np[k] = pv[k] - h.learning_rate * m_hat / (std::sqrt(v_hat) + h.epsilon);
            if (!std::isfinite(np[k])) {
                throw NumericError("adam_step produced a non-finite value in " + params.names()[i]);
            }
        }
        new_first.emplace_back(p.shape(), std::move(nm));
        new_second.emplace_back(p.shape(), std::move(nv));
        new_values.emplace_back(p.shape(), std::move(np));
    }
    state.step += 1;
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.first_moment[i] = std::move(new_first[i]);
        state.second_moment[i] = std::move(new_second[i]);
        params.set(i, std::move(new_values[i]));
    }
}

}  // namespace shapegan
