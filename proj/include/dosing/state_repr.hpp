#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "dosing/nn/rng.hpp"
#include "dosing/nn/tape.hpp"
#include "dosing/nn/tensor.hpp"
#include "dosing/preprocess.hpp"

namespace dosing {

using EqAction = std::array<double, 2>;
using Belief = std::vector<double>;

struct StateReprConfig {
    std::size_t obs_embed = 32;
    std::size_t act_embed = 16;
    std::size_t embed_hidden = 64;
    std::size_t belief_width = 64;
    std::size_t latent_dim = 16;
    std::size_t cvae_hidden = 64;
    double encoder_std = 0.1;
    double kl_weight = 1.0;

    double learning_rate = 5e-4;
    double rms_epsilon = 1e-5;
    double max_grad_norm = 0.5;
    std::size_t epochs = 2;  // 0 = no pretraining
    std::size_t batch_admissions = 16;
    double holdout_fraction = 0.1;
};

/// History summarizer: o_t and a_{t-1} pass through their own two-layer perceptrons,
/// the concatenated embeddings drive a GRU whose hidden state is the belief s_t.
/// Parameters live under `enc.`; the initial hidden state is zero.
struct HistoryEncoder {
    nn::ParamSet params;

    static HistoryEncoder create(std::size_t input_width, const StateReprConfig& config, Rng& rng);

    std::size_t width() const;
    std::size_t input_width() const;
    Belief initial() const { return Belief(width(), 0.0); }
    Belief step(std::span<const double> hidden, const EqAction& prev_action, std::span<const double> input) const;
    /// Beliefs s_0..s_upto (upto < length). a_{-1} is the zero action.
    std::vector<Belief> encode(const PreparedAdmission& admission, std::size_t upto) const;
    std::vector<Belief> encode(const PreparedAdmission& admission) const;
};

nn::Var encoder_step(nn::Tape& tape, const nn::ParamSet& params, nn::Var hidden, const EqAction& prev_action,
                     std::span<const double> input);

/// Next-observation CVAE. Encoder q(z | o', s, a) = N(μ_q, encoder_std²) with μ_q from
/// `cvae.enc`; decoder `cvae.dec` maps (z, s, a) to C means, C log-stds and B logits.
struct ObsCvae {
    nn::ParamSet params;
    std::size_t n_continuous = 0;
    std::size_t n_binary = 0;
    std::size_t latent_dim = 0;
    double encoder_std = 0.1;

    struct Decoded {
        std::vector<double> mean, log_std, logits;
    };

    static ObsCvae create(std::size_t n_continuous, std::size_t n_binary, std::size_t belief_width,
                          const StateReprConfig& config, Rng& rng);

    std::size_t belief_width() const;
    std::vector<double> encoder_mean(std::span<const double> belief, const EqAction& a,
                                     std::span<const double> next_obs) const;
    Decoded decode(std::span<const double> belief, const EqAction& a, std::span<const double> z) const;

    /// Checkpoint view: params plus a `cvae.meta` entry holding the dimensions.
    nn::ParamSet to_checkpoint() const;
    static ObsCvae from_checkpoint(const nn::ParamSet& stored);
};

/// Negative ELBO for one (s_t, a_t, o_{t+1}) triple with latent noise ε (z = μ_q + σ_q·ε).
/// Continuous features with missing[i] != 0 are left out of the reconstruction term.
nn::Var cvae_loss(nn::Tape& tape, const nn::ParamSet& params, const ObsCvae& shape, nn::Var belief,
                  const EqAction& a, std::span<const double> next_obs, std::span<const double> missing,
                  std::span<const double> noise, double kl_weight = 1.0);
double cvae_loss(const ObsCvae& cvae, std::span<const double> belief, const EqAction& a,
                 std::span<const double> next_obs, std::span<const double> missing, std::span<const double> noise,
                 double kl_weight = 1.0);

/// z ~ N(0, I), o' ~ decoder. Binary entries are drawn as 0/1; nothing is masked.
std::vector<double> sample_next_observation(const ObsCvae& cvae, std::span<const double> belief, const EqAction& a,
                                            Rng& rng);

/// log p̂(o' | s, a). With latent_samples == 0 the decoder is evaluated at the prior mean z = 0;
/// otherwise an importance estimate with the encoder as proposal over `latent_samples` draws.
double observation_log_likelihood(const ObsCvae& cvae, std::span<const double> belief, const EqAction& a,
                                  std::span<const double> next_obs, std::size_t latent_samples = 0,
                                  Rng* rng = nullptr);
/// exp of the above, kept strictly positive.
double observation_likelihood(const ObsCvae& cvae, std::span<const double> belief, const EqAction& a,
                              std::span<const double> next_obs, std::size_t latent_samples = 0,
                              Rng* rng = nullptr);

struct StateReprReport {
    std::size_t train_triples = 0;
    std::size_t holdout_triples = 0;
    double initial_holdout_loss = 0.0;  // per triple
    double final_holdout_loss = 0.0;
    std::vector<double> epoch_train_loss;
    bool skipped = false;
};

struct StateModels {
    HistoryEncoder encoder;
    ObsCvae cvae;
    StateReprReport report;
};

std::size_t count_triples(const PreparedAdmission& admission);

/// Summed negative ELBO over every (s_t, a_t, o_{t+1}) of one admission, backpropagating
/// into the encoder. Latent noise is drawn from `rng` in time order.
nn::Var admission_cvae_loss(nn::Tape& tape, const nn::ParamSet& params, const ObsCvae& shape,
                            const PreparedAdmission& admission, double kl_weight, Rng& rng);

/// Fresh (untrained) encoder and CVAE.
StateModels init_state_models(std::size_t n_continuous, std::size_t n_binary, const StateReprConfig& config,
                              std::uint64_t seed);

/// Joint training of encoder and CVAE with RMSProp. A `holdout_fraction` of admissions is
/// kept aside to report held-out loss. Throws TrainingError on a non-finite loss.
StateModels train_state_representation(const std::vector<PreparedAdmission>& train, std::size_t n_continuous,
                                       std::size_t n_binary, const StateReprConfig& config, std::uint64_t seed);

/// Mean per-triple loss with latent noise from stream_rng(seed, admission index).
double mean_cvae_loss(const HistoryEncoder& encoder, const ObsCvae& cvae,
                      const std::vector<PreparedAdmission>& admissions, double kl_weight, std::uint64_t seed);

}  // namespace dosing
