#include "dosing/train_util.hpp"

#include <cmath>
#include <random>

#include "dosing/cohort.hpp"

namespace dosing {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(seed ^ mix_seed(a + 1)) ^ mix_seed(b + 0x51ed27a1ULL));
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(out[i - 1], out[pick(rng)]);
    }
    return out;
}

void scale_grads(nn::GradSet& grads, double factor) {
    for (auto& [name, t] : grads)
        for (double& v : t.data) v *= factor;
}

double optimizer_step(nn::ParamSet& params, nn::GradSet& grads, nn::RmsPropState& state, double lr,
                      double max_grad_norm, const std::string& what) {
    if (!nn::all_finite(grads)) throw TrainingError(what + ": non-finite gradient");
    const double norm = nn::clip_gradient_norm(grads, max_grad_norm);
    nn::rmsprop_update(params, grads, state, lr);
    if (!nn::all_finite(params)) throw TrainingError(what + ": non-finite parameters after update");
    return norm;
}

}  // namespace dosing
