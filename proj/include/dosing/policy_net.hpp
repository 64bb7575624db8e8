#pragma once

#include <span>

#include "dosing/nn/rng.hpp"
#include "dosing/nn/tape.hpp"
#include "dosing/nn/tensor.hpp"
#include "dosing/state_repr.hpp"

namespace dosing {

struct PolicyNetConfig {
    std::size_t hidden = 64;
    double log_std_min = -4.0;
    double log_std_max = 0.0;
};

/// Actor-critic on the belief: trunk relu(l2·relu(l1·s)) feeding three linear heads, the
/// Gaussian mean, a log-variance head (soft-bounded to 2·[log_std_min, log_std_max]) and V(s).
/// Parameters live under `pi.`.
struct PolicyValueNet {
    nn::ParamSet params;
    double log_std_min = -4.0;
    double log_std_max = 0.0;

    struct Output {
        EqAction mean{};
        EqAction log_std{};
        double value = 0.0;
    };
    struct TapeOutput {
        nn::Var mean, log_std, value;
    };

    static PolicyValueNet create(std::size_t belief_width, const PolicyNetConfig& config, Rng& rng);

    std::size_t belief_width() const;
    Output forward(std::span<const double> belief) const;
    double value(std::span<const double> belief) const;
    TapeOutput forward(nn::Tape& tape, const nn::ParamSet& p, nn::Var belief) const;

    nn::ParamSet to_checkpoint() const;
    static PolicyValueNet from_checkpoint(const nn::ParamSet& stored);
};

double policy_log_prob(const PolicyValueNet::Output& out, const EqAction& a);
/// Gaussian draw clipped to [0,1]².
EqAction policy_sample(const PolicyValueNet::Output& out, Rng& rng);
EqAction clip_action(const EqAction& a);

}  // namespace dosing
