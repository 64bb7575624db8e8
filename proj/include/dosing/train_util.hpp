#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dosing/nn/optim.hpp"
#include "dosing/nn/rng.hpp"
#include "dosing/nn/tensor.hpp"

namespace dosing {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

void scale_grads(nn::GradSet& grads, double factor);

/// Clip + RMSProp update. Throws TrainingError naming `what` when the gradients or the
/// updated parameters are not finite. Returns the pre-clip gradient norm.
double optimizer_step(nn::ParamSet& params, nn::GradSet& grads, nn::RmsPropState& state, double lr,
                      double max_grad_norm, const std::string& what);

}  // namespace dosing
