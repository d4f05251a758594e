#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nct/param_store.hpp"
#include "nct/rng.hpp"
#include "nct/tape.hpp"

namespace nct {

// Central finite differences against the tape gradients. Relative error uses
// a small denominator floor: below the FD noise scale nothing tighter can be
// certified.
struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
    double analytic = 0.0, numeric = 0.0;
    int64_t checked = 0;
    std::map<std::string, double> per_param;
};

template <typename S>
GradCheckReport check_gradients(
    ParamStoreT<S>& store,
    const std::function<VarT<S>(TapeT<S>&, TapeParams<S>&)>& build_loss, double step = 1e-4,
    int64_t max_elems_per_param = -1, uint64_t sample_seed = 7) {
    GradCheckReport rep;

    // Analytic pass.
    std::map<std::string, TensorT<S>> analytic;
    {
        TapeT<S> tape;
        TapeParams<S> params(tape, store);
        VarT<S> loss = build_loss(tape, params);
        tape.backward(loss);
        analytic = params.grads();
    }

    auto eval_loss = [&]() -> double {
        TapeT<S> tape;
        TapeParams<S> params(tape, store);
        return static_cast<double>(build_loss(tape, params).val()[0]);
    };

    RngStream pick(sample_seed, "gradcheck-sample");
    for (auto& [name, entry] : store.entries()) {
        if (!entry.trainable) continue;
        auto git = analytic.find(name);
        TensorT<S> ga = git != analytic.end() ? git->second : TensorT<S>(entry.value.shape);
        std::vector<int64_t> idxs;
        int64_t n = entry.value.numel();
        if (max_elems_per_param < 0 || n <= max_elems_per_param) {
            idxs.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) idxs[static_cast<size_t>(i)] = i;
        } else {
            for (int64_t i = 0; i < max_elems_per_param; ++i)
                idxs.push_back(static_cast<int64_t>(pick.next_below(static_cast<uint64_t>(n))));
        }
        double param_worst = 0.0;
        for (int64_t i : idxs) {
            S orig = entry.value[i];
            entry.value[i] = orig + static_cast<S>(step);
            double lp = eval_loss();
            entry.value[i] = orig - static_cast<S>(step);
            double lm = eval_loss();
            entry.value[i] = orig;
            double fd = (lp - lm) / (2.0 * step);
            double an = static_cast<double>(ga[i]);
            double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
            double rel = std::abs(an - fd) / denom;
            param_worst = std::max(param_worst, rel);
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = name;
                rep.worst_index = i;
                rep.analytic = an;
                rep.numeric = fd;
            }
        }
        rep.per_param[name] = param_worst;
    }
    return rep;
}

}  // namespace nct
