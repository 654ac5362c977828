#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "lipsync/core/common.hpp"
#include "lipsync/core/tensor.hpp"

namespace lipsync {

// One learnable tensor. Gradient and optimizer slots live next to the value
// so checkpoints can capture the full training state.
template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> adam_m;  // allocated by the optimizer on first step
    Tensor<T> adam_v;
    bool trainable = true;
};

// Owns all parameters of one model. std::deque keeps addresses stable so
// layers can hold raw Parameter pointers.
template <class T>
class ParamStore {
public:
    Parameter<T>* create(const std::string& name, Tensor<T> init) {
        LIPSYNC_CHECK(find(name) == nullptr, ConfigError, "duplicate parameter name: " + name);
        params_.push_back(Parameter<T>{name, std::move(init), {}, {}, {}, true});
        Parameter<T>& p = params_.back();
        p.grad = Tensor<T>::zeros(p.value.shape());
        return &p;
    }

    Parameter<T>* find(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

    const Parameter<T>* find(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

    std::deque<Parameter<T>>& all() { return params_; }
    const std::deque<Parameter<T>>& all() const { return params_; }

    size_t size() const { return params_.size(); }

    int64_t total_weight_count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.value.numel();
        return n;
    }

    int64_t trainable_weight_count() const {
        int64_t n = 0;
        for (const auto& p : params_)
            if (p.trainable) n += p.value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p.grad.fill(T(0));
    }

    void set_all_trainable(bool trainable) {
        for (auto& p : params_) p.trainable = trainable;
    }

    // Marks trainable exactly the parameters selected by `match`.
    void set_trainable_where(const std::function<bool(const std::string&)>& match) {
        for (auto& p : params_) p.trainable = match(p.name);
    }

    std::vector<std::string> names_where(const std::function<bool(const Parameter<T>&)>& pred) const {
        std::vector<std::string> out;
        for (const auto& p : params_)
            if (pred(p)) out.push_back(p.name);
        return out;
    }

private:
    std::deque<Parameter<T>> params_;
};

}  // namespace lipsync
