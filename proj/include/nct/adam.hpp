#pragma once

#include <cmath>
#include <map>
#include <string>

#include "nct/param_store.hpp"
#include "nct/tensor.hpp"

namespace nct {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled, applied as p -= lr*wd*p
};

// First/second moment state per parameter, persisted into checkpoints.
template <typename S>
struct AdamStateT {
    std::map<std::string, TensorT<S>> m, v;
    int64_t t = 0;
};

using AdamState = AdamStateT<float>;

// One Adam step over the trainable entries of the store. Parameters without
// a gradient entry (frozen or unused this step) are left untouched.
template <typename S>
void adam_step(ParamStoreT<S>& store, const std::map<std::string, TensorT<S>>& grads,
               AdamStateT<S>& state, const AdamConfig& cfg) {
    state.t += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (auto& [name, entry] : store.entries()) {
        if (!entry.trainable) continue;
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const TensorT<S>& g = git->second;
        require_same_shape(entry.value, g, "adam_step");
        for (int64_t i = 0; i < g.numel(); ++i)
            if (!std::isfinite(static_cast<double>(g[i])))
                throw ContractError("adam_step: non-finite gradient for param '" + name + "'");
        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            state.m[name] = TensorT<S>(entry.value.shape);
            state.v[name] = TensorT<S>(entry.value.shape);
            mit = state.m.find(name);
        }
        TensorT<S>& m = mit->second;
        TensorT<S>& v = state.v[name];
        TensorT<S>& p = entry.value;
        for (int64_t i = 0; i < p.numel(); ++i) {
            double gi = g[i];
            double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<S>(mi);
            v[i] = static_cast<S>(vi);
            double mhat = mi / bc1;
            double vhat = vi / bc2;
            double upd = cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps) +
                         cfg.lr * cfg.weight_decay * static_cast<double>(p[i]);
            p[i] = static_cast<S>(p[i] - upd);
        }
    }
}

}  // namespace nct
