#pragma once

#include <map>
#include <string>
#include <vector>

#include "dosing/nn/tensor.hpp"

namespace dosing::nn {

/// RMSProp without momentum: v' = αv + (1-α)g², θ' = θ - lr·g/(√v' + ε).
struct RmsPropState {
    double alpha = 0.99;
    double epsilon = 1e-5;
    std::map<std::string, std::vector<double>> square_avg;
};

void rmsprop_update(ParamSet& params, const GradSet& grads, RmsPropState& state, double lr);

/// Rescales all gradients by max_norm/g when the global L2 norm g exceeds max_norm.
/// Returns the norm before clipping.
double clip_gradient_norm(GradSet& grads, double max_norm = 0.5);

}  // namespace dosing::nn
