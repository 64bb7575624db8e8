#include "dosing/nn/optim.hpp"

#include <cmath>

namespace dosing::nn {

void rmsprop_update(ParamSet& params, const GradSet& grads, RmsPropState& state, double lr) {
    for (const auto& [name, g] : grads) {
        Tensor& theta = params.at(name);
        if (theta.shape != g.shape) throw DimensionError("rmsprop: gradient shape mismatch for " + name);
        auto& v = state.square_avg[name];
        if (v.empty()) v.assign(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double gi = g.data[i];
            v[i] = state.alpha * v[i] + (1.0 - state.alpha) * gi * gi;
            theta.data[i] -= lr * gi / (std::sqrt(v[i]) + state.epsilon);
        }
    }
}

double clip_gradient_norm(GradSet& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& [_, t] : grads) {
            for (double& v : t.data) v *= s;
        }
    }
    return norm;
}

}  // namespace dosing::nn
