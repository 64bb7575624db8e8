#pragma once

#include <cstdint>
#include <string>

#include "dosing/behavior.hpp"
#include "dosing/config.hpp"
#include "dosing/ope.hpp"
#include "dosing/policy_opt.hpp"
#include "dosing/sim.hpp"
#include "dosing/state_repr.hpp"

namespace dosing {

/// Every tunable of the pipeline. File keys are prefixed by section:
/// `run.`, `sim.`, `state.`, `behavior.`, `policy.`, `search.`, `ope.`.
struct RunConfig {
    std::uint64_t seed = 2024;
    std::size_t n_admissions = 2000;
    std::size_t n_test = 200;
    std::size_t rollouts = 1000;
    std::string rollout_action = "sample";

    SimConfig sim;
    StateReprConfig state;
    BehaviorConfig behavior;
    PolicyOptConfig policy;
    OpeConfig ope;

    RunConfig();

    /// Defaults overridden by `kv`; unknown keys throw ConfigError.
    static RunConfig from_kv(const KeyValueConfig& kv);
    /// Fully resolved configuration (all keys).
    KeyValueConfig to_kv() const;
};

/// Draws learning rate (log-uniform in [1e-5, 5e-4]) and RMSProp ε (log-uniform in
/// [1e-5, 1e-1]) for every training stage; used for seeded random hyperparameter search.
void sample_optimizer_hyperparameters(RunConfig& config, Rng& rng);

}  // namespace dosing
