// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "stip/autograd.hpp"
#include "stip/tensor.hpp"

namespace stip::nn {

struct OptimizerConfig {
    enum class Kind { AdamAmsgrad, SgdMomentum };
    Kind kind = Kind::AdamAmsgrad;
    double learning_rate = 1e-3;
    double momentum = 0.9;   // SGD only
    double beta1 = 0.9;      // Adam only
    double beta2 = 0.999;    // Adam only
    double epsilon = 1e-8;   // Adam only

    void validate() const {
        if (learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
        if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
        if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
            throw ConfigError("beta1/beta2 must be in (0,1)");
    }

    static OptimizerConfig adam_amsgrad(double lr) {
        OptimizerConfig c;
        c.kind = Kind::AdamAmsgrad;
        c.learning_rate = lr;
        return c;
    }
    static OptimizerConfig sgd_momentum(double lr, double m) {
        OptimizerConfig c;
        c.kind = Kind::SgdMomentum;
        c.learning_rate = lr;
        c.momentum = m;
        return c;
    }
};

template <typename T>
struct ParamEntry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
    bool grad_ready = false;
    // Optimizer state, allocated on first step.
    Tensor<T> opt_m, opt_v, opt_vmax;
    bool opt_init = false;
};

// Named parameter tensors with paired gradient buffers and optimizer state.
// Iteration follows insertion order, which keeps every downstream consumer
// (optimizer, checksum, checkpoints) deterministic.
template <typename T>
class ParameterStore {
public:
    using scalar = T;

    explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

    ParamEntry<T>& add(const std::string& name, Tensor<T> value, bool trainable = true) {
        if (by_name_.count(name)) throw ConfigError("duplicate parameter: " + name);
        auto e = std::make_unique<ParamEntry<T>>();
        e->name = name;
        e->grad = Tensor<T>::zeros(value.shape);
        e->value = std::move(value);
        e->trainable = trainable;
        ParamEntry<T>* raw = e.get();
        by_name_[name] = raw;
        order_.push_back(std::move(e));
        return *raw;
    }

    bool has(const std::string& name) const { return by_name_.count(name) != 0; }

    ParamEntry<T>& at(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw ConfigError("unknown parameter: " + name);
        return *it->second;
    }
    const ParamEntry<T>& at(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw ConfigError("unknown parameter: " + name);
        return *it->second;
    }

    std::vector<ParamEntry<T>*> entries() {
        std::vector<ParamEntry<T>*> out;
        out.reserve(order_.size());
        for (auto& e : order_) out.push_back(e.get());
        return out;
    }
    std::vector<const ParamEntry<T>*> entries() const {
        std::vector<const ParamEntry<T>*> out;
        out.reserve(order_.size());
        for (auto& e : order_) out.push_back(e.get());
        return out;
    }

    // Tape leaf for a trainable parameter; backward accumulates straight into
    // the entry's gradient buffer.
    Var<T> var(const std::string& name) {
        ParamEntry<T>& e = at(name);
        auto n = make_var(e.value, e.trainable);
        if (e.trainable) {
            ParamEntry<T>* ep = &e;
            n->backward_fn = [ep](Node<T>& self) {
                for (std::int64_t i = 0; i < self.value.numel(); ++i)
                    ep->grad.data[i] += self.grad.data[i];
                ep->grad_ready = true;
            };
        }
        return n;
    }

    void zero_grad() {
        for (auto& e : order_) {
            std::fill(e->grad.data.begin(), e->grad.data.end(), T(0));
            e->grad_ready = false;
        }
    }

    std::uint64_t checksum(const std::string& prefix = "") const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& e : order_) {
            if (e->name.rfind(prefix, 0) != 0) continue;
            h = fnv1a(e->name, h);
            h = fnv1a(e->value.data.data(), e->value.data.size() * sizeof(T), h);
        }
        return h;
    }

    std::int64_t count_trainable(const std::string& prefix = "") const {
        std::int64_t n = 0;
        for (const auto& e : order_)
            if (e->trainable && e->name.rfind(prefix, 0) == 0) n += e->value.numel();
        return n;
    }

    std::uint64_t seed() const { return seed_; }
    std::int64_t step_count() const { return step_; }
    void bump_step() { ++step_; }

private:
    std::vector<std::unique_ptr<ParamEntry<T>>> order_;
    std::unordered_map<std::string, ParamEntry<T>*> by_name_;
    std::uint64_t seed_ = 0;
    std::int64_t step_ = 0;
};

// Copies values (not optimizer state) into a store of another precision.
template <typename U, typename T>
ParameterStore<U> cast_store(const ParameterStore<T>& src) {
    ParameterStore<U> dst(src.seed());
    for (const ParamEntry<T>* e : src.entries())
        dst.add(e->name, e->value.template cast<U>(), e->trainable);
    return dst;
}

// One optimizer step over every trainable entry. Adam uses the AMSGrad
// max-of-second-moment variant; SGD uses v <- m*v - lr*g, p <- p + v.
template <typename T>
void optimizer_step(ParameterStore<T>& store, const OptimizerConfig& cfg) {
    cfg.validate();
    for (ParamEntry<T>* e : store.entries())
        if (e->trainable && !e->grad_ready)
            throw NumericError("optimizer_step: gradients not populated for " + e->name);
    store.bump_step();
    const auto t = static_cast<double>(store.step_count());
    for (ParamEntry<T>* e : store.entries()) {
        if (!e->trainable) continue;
        if (!e->opt_init) {
            e->opt_m = Tensor<T>::zeros(e->value.shape);
            if (cfg.kind == OptimizerConfig::Kind::AdamAmsgrad) {
                e->opt_v = Tensor<T>::zeros(e->value.shape);
                e->opt_vmax = Tensor<T>::zeros(e->value.shape);
            }
            e->opt_init = true;
        }
        if (cfg.kind == OptimizerConfig::Kind::SgdMomentum) {
            for (std::int64_t i = 0; i < e->value.numel(); ++i) {
                const T g = e->grad.data[i];
                e->opt_m.data[i] = static_cast<T>(cfg.momentum) * e->opt_m.data[i] -
                                   static_cast<T>(cfg.learning_rate) * g;
                e->value.data[i] += e->opt_m.data[i];
            }
        } else {
            const double bc1 = 1.0 - std::pow(cfg.beta1, t);
            const double bc2 = 1.0 - std::pow(cfg.beta2, t);
            for (std::int64_t i = 0; i < e->value.numel(); ++i) {
                const double g = static_cast<double>(e->grad.data[i]);
                const double m = cfg.beta1 * static_cast<double>(e->opt_m.data[i]) +
                                 (1.0 - cfg.beta1) * g;
                const double v = cfg.beta2 * static_cast<double>(e->opt_v.data[i]) +
                                 (1.0 - cfg.beta2) * g * g;
                const double vmax = std::max(static_cast<double>(e->opt_vmax.data[i]), v);
                e->opt_m.data[i] = static_cast<T>(m);
                e->opt_v.data[i] = static_cast<T>(v);
                e->opt_vmax.data[i] = static_cast<T>(vmax);
                const double update =
                    cfg.learning_rate * (m / bc1) / (std::sqrt(vmax / bc2) + cfg.epsilon);
                e->value.data[i] -= static_cast<T>(update);
            }
        }
        check_finite(e->value, "optimizer_step");
    }
}

}  // namespace stip::nn
