#include "dosing/learned_policy.hpp"

#include "dosing/cohort.hpp"

namespace dosing {

namespace {

class LearnedEpisode final : public EpisodePolicy {
  public:
    explicit LearnedEpisode(const LearnedPolicy& owner)
        : owner_(owner), stream_(owner.preprocessor()), hidden_(owner.encoder().initial()) {}

    DoseAction act(const StepContext& ctx, Rng& rng) override {
        const auto input = stream_.push(ctx.observation);
        hidden_ = owner_.encoder().step(hidden_, prev_, input);
        const auto out = owner_.net().forward(hidden_);
        const EqAction a = sample_ ? policy_sample(out, rng) : clip_action(out.mean);
        const DoseAction dose = owner_.preprocessor().raw_action(a);
        prev_ = owner_.preprocessor().equalize_action(dose);
        return dose;
    }

    bool sample_ = false;

  private:
    const LearnedPolicy& owner_;
    ObservationStream stream_;
    Belief hidden_;
    EqAction prev_{0.0, 0.0};
};

}  // namespace

LearnedPolicy::LearnedPolicy(Preprocessor pre, HistoryEncoder encoder, PolicyValueNet net, RolloutAction mode)
    : pre_(std::move(pre)), encoder_(std::move(encoder)), net_(std::move(net)), mode_(mode) {}

std::unique_ptr<EpisodePolicy> LearnedPolicy::begin_episode(Rng&) const {
    auto ep = std::make_unique<LearnedEpisode>(*this);
    ep->sample_ = mode_ == RolloutAction::Sample;
    return ep;
}

RolloutAction parse_rollout_action(const std::string& name) {
    if (name == "mean") return RolloutAction::Mean;
    if (name == "sample") return RolloutAction::Sample;
    throw ConfigError("rollout_action must be 'mean' or 'sample', got '" + name + "'");
}

}  // namespace dosing
