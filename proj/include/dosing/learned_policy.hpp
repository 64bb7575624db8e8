#pragma once

#include <memory>

#include "dosing/policy_net.hpp"
#include "dosing/preprocess.hpp"
#include "dosing/sim.hpp"
#include "dosing/state_repr.hpp"

namespace dosing {

enum class RolloutAction { Mean, Sample };

/// Replays the belief pipeline online: sample-and-hold, equalization, one GRU step per hour,
/// then the policy mean (or a Gaussian draw) mapped back to raw doses.
class LearnedPolicy final : public SimPolicy {
  public:
    LearnedPolicy(Preprocessor pre, HistoryEncoder encoder, PolicyValueNet net, RolloutAction mode = RolloutAction::Sample);
    std::unique_ptr<EpisodePolicy> begin_episode(Rng& rng) const override;

    const Preprocessor& preprocessor() const { return pre_; }
    const HistoryEncoder& encoder() const { return encoder_; }
    const PolicyValueNet& net() const { return net_; }

  private:
    Preprocessor pre_;
    HistoryEncoder encoder_;
    PolicyValueNet net_;
    RolloutAction mode_;
};

RolloutAction parse_rollout_action(const std::string& name);

}  // namespace dosing
