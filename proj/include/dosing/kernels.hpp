#pragma once

// Data-parallel kernels. Each has an OpenMP version (dosing::kernels) and a plain serial
// reference (dosing::kernels::serial) computing bit-identical results: work item i always
// draws from stream_rng(seed, i) and results are reduced in index order.

#include <cstdint>
#include <functional>
#include <vector>

#include "dosing/cohort.hpp"
#include "dosing/nn/tensor.hpp"

namespace dosing {
class Simulator;
class SimPolicy;
struct SearchModels;
struct SearchBudget;
}  // namespace dosing

namespace dosing::kernels {

/// Loss (and optionally gradients) of one work item. `count` is the number of terms the
/// loss sums over, used by callers for mean normalization.
struct LossGradient {
    double loss = 0.0;
    double count = 0.0;
    nn::GradSet grads;  // may be empty when only the loss is wanted
};
using LossGradientFn = std::function<LossGradient(std::size_t)>;

/// Evaluates items 0..n-1 and sums losses, counts and gradients in index order.
LossGradient sum_loss_gradients(std::size_t n, const LossGradientFn& item);

/// out[i] = fn(i).
std::vector<double> map_indices(std::size_t n, const std::function<double(std::size_t)>& fn);
/// Runs fn(i) for every i; each call must only write state owned by item i.
void for_each_index(std::size_t n, const std::function<void(std::size_t)>& fn);

std::vector<Admission> simulate_batch(const Simulator& sim, const SimPolicy& policy, std::size_t n,
                                      std::uint64_t seed);
std::vector<double> rollout_returns(const Simulator& sim, const SimPolicy& policy, std::size_t n,
                                    std::uint64_t seed);
/// Tree-search root values; root j draws from stream_rng(seed, j).
std::vector<double> search_targets(const std::vector<const std::vector<double>*>& roots, const SearchModels& models,
                                   const SearchBudget& budget, std::uint64_t seed);

namespace serial {
LossGradient sum_loss_gradients(std::size_t n, const LossGradientFn& item);
std::vector<double> map_indices(std::size_t n, const std::function<double(std::size_t)>& fn);
void for_each_index(std::size_t n, const std::function<void(std::size_t)>& fn);
std::vector<Admission> simulate_batch(const Simulator& sim, const SimPolicy& policy, std::size_t n,
                                      std::uint64_t seed);
std::vector<double> rollout_returns(const Simulator& sim, const SimPolicy& policy, std::size_t n,
                                    std::uint64_t seed);
std::vector<double> search_targets(const std::vector<const std::vector<double>*>& roots, const SearchModels& models,
                                   const SearchBudget& budget, std::uint64_t seed);
}  // namespace serial

/// Number of OpenMP threads the parallel kernels will use (1 when built without OpenMP).
int max_threads();

}  // namespace dosing::kernels
