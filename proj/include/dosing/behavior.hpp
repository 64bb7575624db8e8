#pragma once

#include <span>
#include <vector>

#include "dosing/nn/rng.hpp"
#include "dosing/nn/tape.hpp"
#include "dosing/nn/tensor.hpp"
#include "dosing/state_repr.hpp"

namespace dosing {

inline constexpr double kDensityFloor = 1e-30;

struct BehaviorConfig {
    std::size_t latent_dim = 8;
    std::size_t hidden = 64;
    double encoder_std = 0.1;
    double proposal_std = 0.7;  // width of the encoder-centred half of the density proposal
    double log_std_min = -5.0;
    double log_std_max = 0.0;
    double kl_weight = 1.0;
    std::size_t density_samples = 32;

    double learning_rate = 5e-4;
    double rms_epsilon = 1e-5;
    double max_grad_norm = 0.5;
    std::size_t epochs = 2;
    std::size_t batch_steps = 256;
    double holdout_fraction = 0.1;
};

/// Behavior-policy CVAE over equalized actions. Encoder q(z | a, s) = N(μ_q, encoder_std²)
/// (`bcvae.enc`); decoder `bcvae.dec` gives the action mean and a raw log-std that is
/// squashed into [log_std_min, log_std_max].
struct BehaviorCvae {
    nn::ParamSet params;
    std::size_t latent_dim = 0;
    double encoder_std = 0.1;
    double proposal_std = 0.7;
    double log_std_min = -5.0;
    double log_std_max = 0.0;

    struct Decoded {
        std::array<double, 2> mean{};
        std::array<double, 2> log_std{};
    };

    static BehaviorCvae create(std::size_t belief_width, const BehaviorConfig& config, Rng& rng);

    std::vector<double> encoder_mean(std::span<const double> belief, const EqAction& a) const;
    Decoded decode(std::span<const double> belief, std::span<const double> z) const;

    nn::ParamSet to_checkpoint() const;
    static BehaviorCvae from_checkpoint(const nn::ParamSet& stored);
};

/// Negative ELBO of one (s, a) pair; `belief` is a constant on the tape.
nn::Var behavior_loss(nn::Tape& tape, const nn::ParamSet& params, const BehaviorCvae& shape,
                      std::span<const double> belief, const EqAction& a, std::span<const double> noise,
                      double kl_weight = 1.0);
double behavior_loss(const BehaviorCvae& model, std::span<const double> belief, const EqAction& a,
                     std::span<const double> noise, double kl_weight = 1.0);

/// Importance estimate of π_b(a|s) over `samples` latent draws, half from the prior and half
/// from N(μ_q(a,s), proposal_std²), weighted against the equal mixture of the two. Floored at
/// kDensityFloor.
double behavior_density(const BehaviorCvae& model, std::span<const double> belief, const EqAction& a,
                        std::size_t samples, Rng& rng);
double behavior_log_density(const BehaviorCvae& model, std::span<const double> belief, const EqAction& a,
                            std::size_t samples, Rng& rng);

/// z ~ N(0, I), a ~ decoder, clipped to [0,1]².
EqAction behavior_sample(const BehaviorCvae& model, std::span<const double> belief, Rng& rng);

/// One training example: belief s_t and the logged equalized action a_t.
struct BeliefAction {
    Belief belief;
    EqAction action;
};

struct BehaviorReport {
    std::size_t train_pairs = 0;
    std::size_t holdout_pairs = 0;
    double initial_holdout_loss = 0.0;
    double final_holdout_loss = 0.0;
    std::vector<double> epoch_train_loss;
};

struct BehaviorModel {
    BehaviorCvae cvae;
    BehaviorReport report;
};

/// Beliefs from a frozen encoder paired with logged actions, admissions in order.
std::vector<BeliefAction> belief_action_pairs(const HistoryEncoder& encoder,
                                              const std::vector<PreparedAdmission>& admissions);

double mean_behavior_loss(const BehaviorCvae& model, const std::vector<BeliefAction>& pairs, double kl_weight,
                          std::uint64_t seed);

/// Throws DataError on an empty set, TrainingError on divergence.
BehaviorModel train_behavior_cvae(const std::vector<BeliefAction>& pairs, std::size_t belief_width,
                                  const BehaviorConfig& config, std::uint64_t seed);

/// log π_b(a_t | s_t) for every step; admission i draws from stream_rng(seed, i).
std::vector<std::vector<double>> behavior_log_densities(const BehaviorCvae& model,
                                                        const std::vector<std::vector<Belief>>& beliefs,
                                                        const std::vector<PreparedAdmission>& admissions,
                                                        std::size_t samples, std::uint64_t seed);

}  // namespace dosing
