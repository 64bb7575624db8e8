#include "dosing/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "dosing/cohort.hpp"
#include "dosing/kernels.hpp"
#include "dosing/log.hpp"
#include "dosing/nn/layers.hpp"
#include "dosing/train_util.hpp"

namespace dosing {

using nn::Tape;
using nn::Var;

namespace {

constexpr std::size_t kChunk = 32;

double standard_normal_log_prob(std::span<const double> z) {
    double lp = 0.0;
    for (double v : z) lp += -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * v * v;
    return lp;
}

}  // namespace

BehaviorCvae BehaviorCvae::create(std::size_t belief_width, const BehaviorConfig& config, Rng& rng) {
    BehaviorCvae m;
    m.latent_dim = config.latent_dim;
    m.encoder_std = config.encoder_std;
    m.proposal_std = config.proposal_std;
    m.log_std_min = config.log_std_min;
    m.log_std_max = config.log_std_max;
    nn::add_mlp(m.params, "bcvae.enc", {belief_width + 2, config.hidden, config.latent_dim}, rng);
    nn::add_mlp(m.params, "bcvae.dec", {config.latent_dim + belief_width, config.hidden, 4}, rng);
    return m;
}

std::vector<double> BehaviorCvae::encoder_mean(std::span<const double> belief, const EqAction& a) const {
    std::vector<double> x(belief.begin(), belief.end());
    x.insert(x.end(), a.begin(), a.end());
    return nn::mlp_apply(params, "bcvae.enc", x);
}

BehaviorCvae::Decoded BehaviorCvae::decode(std::span<const double> belief, std::span<const double> z) const {
    std::vector<double> x(z.begin(), z.end());
    x.insert(x.end(), belief.begin(), belief.end());
    const auto out = nn::mlp_apply(params, "bcvae.dec", x);
    Decoded d;
    for (int i = 0; i < 2; ++i) {
        d.mean[i] = out[i];
        d.log_std[i] = nn::soft_bound(out[2 + i], log_std_min, log_std_max);
    }
    return d;
}

nn::ParamSet BehaviorCvae::to_checkpoint() const {
    nn::ParamSet out = params;
    out.add("bcvae.meta",
            nn::Tensor::vector({static_cast<double>(latent_dim), encoder_std, log_std_min, log_std_max, proposal_std}));
    return out;
}

BehaviorCvae BehaviorCvae::from_checkpoint(const nn::ParamSet& stored) {
    if (!stored.contains("bcvae.meta")) throw nn::DimensionError("checkpoint has no bcvae.meta entry");
    const auto& meta = stored.at("bcvae.meta").data;
    if (meta.size() != 5) throw nn::DimensionError("bcvae.meta: expected 5 values");
    BehaviorCvae m;
    m.latent_dim = static_cast<std::size_t>(meta[0]);
    m.encoder_std = meta[1];
    m.log_std_min = meta[2];
    m.log_std_max = meta[3];
    m.proposal_std = meta[4];
    for (const auto& [name, t] : stored)
        if (name.rfind("bcvae.", 0) == 0 && name != "bcvae.meta") m.params.add(name, t);
    return m;
}

Var behavior_loss(Tape& tape, const nn::ParamSet& params, const BehaviorCvae& shape, std::span<const double> belief,
                  const EqAction& a, std::span<const double> noise, double kl_weight) {
    const std::size_t l = shape.latent_dim;
    if (noise.size() != l) throw nn::DimensionError("behavior_loss: noise width mismatch");
    Var s = tape.constant(belief);
    Var av = tape.constant(std::span<const double>(a));
    Var mu_q = nn::mlp_forward(tape, params, "bcvae.enc", tape.concat({s, av}));
    std::vector<double> scaled(noise.begin(), noise.end());
    for (double& v : scaled) v *= shape.encoder_std;
    Var z = tape.add(mu_q, tape.constant(std::move(scaled)));
    Var dec = nn::mlp_forward(tape, params, "bcvae.dec", tape.concat({z, s}));
    Var log_std = nn::soft_bound(tape, tape.slice(dec, 2, 2), shape.log_std_min, shape.log_std_max);
    Var loglik = tape.gaussian_log_prob(av, tape.slice(dec, 0, 2), log_std);
    Var kl = tape.kl_diag(mu_q, tape.constant(std::vector<double>(l, std::log(shape.encoder_std))),
                          tape.constant(std::vector<double>(l, 0.0)), tape.constant(std::vector<double>(l, 0.0)));
    return tape.sub(tape.scale(kl, kl_weight), loglik);
}

double behavior_loss(const BehaviorCvae& model, std::span<const double> belief, const EqAction& a,
                     std::span<const double> noise, double kl_weight) {
    Tape tape;
    return tape.scalar(behavior_loss(tape, model.params, model, belief, a, noise, kl_weight));
}

double behavior_log_density(const BehaviorCvae& model, std::span<const double> belief, const EqAction& a,
                            std::size_t samples, Rng& rng) {
    samples = std::max<std::size_t>(samples, 1);
    const auto mu = model.encoder_mean(belief, a);
    const std::vector<double> log_sq(model.latent_dim, std::log(model.proposal_std));
    // Proposal ½ prior + ½ N(μ_q, proposal_std²), drawn stratified. The posterior sits between
    // the two; the fixed encoder width alone is far too narrow and its weights vanish.
    const std::size_t from_prior = (samples + 1) / 2;
    const double log_half = std::log(0.5);
    std::vector<double> terms(samples), eps(model.latent_dim);
    for (std::size_t k = 0; k < samples; ++k) {
        for (double& v : eps) v = standard_normal(rng);
        const auto z = k < from_prior ? eps : nn::gaussian_sample(mu, log_sq, eps);
        const auto d = model.decode(belief, z);
        const double log_prior = standard_normal_log_prob(z);
        const double log_q = nn::gaussian_log_prob(z, mu, log_sq);
        const double log_mix = std::max(log_prior, log_q) + log_half + std::log1p(std::exp(-std::abs(log_prior - log_q)));
        terms[k] = nn::gaussian_log_prob(a, d.mean, d.log_std) + log_prior - log_mix;
    }
    const double lp = nn::log_sum_exp(terms) - std::log(static_cast<double>(samples));
    const double floor = std::log(kDensityFloor);
    return std::isnan(lp) ? floor : std::max(lp, floor);
}

double behavior_density(const BehaviorCvae& model, std::span<const double> belief, const EqAction& a,
                        std::size_t samples, Rng& rng) {
    return std::max(std::exp(behavior_log_density(model, belief, a, samples, rng)), kDensityFloor);
}

EqAction behavior_sample(const BehaviorCvae& model, std::span<const double> belief, Rng& rng) {
    std::vector<double> z(model.latent_dim);
    for (double& v : z) v = standard_normal(rng);
    const auto d = model.decode(belief, z);
    EqAction a;
    for (int i = 0; i < 2; ++i) a[i] = std::clamp(d.mean[i] + std::exp(d.log_std[i]) * standard_normal(rng), 0.0, 1.0);
    return a;
}

std::vector<BeliefAction> belief_action_pairs(const HistoryEncoder& encoder,
                                              const std::vector<PreparedAdmission>& admissions) {
    std::vector<std::vector<Belief>> beliefs(admissions.size());
    kernels::for_each_index(admissions.size(), [&](std::size_t i) { beliefs[i] = encoder.encode(admissions[i]); });
    std::vector<BeliefAction> out;
    for (std::size_t i = 0; i < admissions.size(); ++i)
        for (std::size_t t = 0; t < beliefs[i].size(); ++t)
            out.push_back({std::move(beliefs[i][t]), admissions[i].actions[t]});
    return out;
}

namespace {

// Sum of losses (and gradients) over pairs[idx[begin..end)], noise from stream_rng(seed, idx).
kernels::LossGradient chunk_loss(const nn::ParamSet& params, const BehaviorCvae& shape,
                                 const std::vector<BeliefAction>& pairs, std::span<const std::size_t> idx,
                                 double kl_weight, std::uint64_t seed, bool with_grads) {
    Tape tape;
    Var total = tape.constant(std::vector<double>{0.0});
    std::vector<double> noise(shape.latent_dim);
    for (std::size_t j : idx) {
        Rng rng = stream_rng(seed, j);
        for (double& v : noise) v = standard_normal(rng);
        total = tape.add(total, behavior_loss(tape, params, shape, pairs[j].belief, pairs[j].action, noise, kl_weight));
    }
    kernels::LossGradient out;
    out.loss = tape.scalar(total);
    out.count = static_cast<double>(idx.size());
    if (with_grads) {
        tape.backward(total);
        out.grads = tape.gradients(params);
    }
    return out;
}

}  // namespace

double mean_behavior_loss(const BehaviorCvae& model, const std::vector<BeliefAction>& pairs, double kl_weight,
                          std::uint64_t seed) {
    if (pairs.empty()) return 0.0;
    std::vector<std::size_t> all(pairs.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const std::size_t n_chunks = (all.size() + kChunk - 1) / kChunk;
    const auto total = kernels::sum_loss_gradients(n_chunks, [&](std::size_t c) {
        const std::size_t begin = c * kChunk;
        const std::size_t len = std::min(kChunk, all.size() - begin);
        return chunk_loss(model.params, model, pairs, std::span(all).subspan(begin, len), kl_weight, seed, false);
    });
    return total.loss / total.count;
}

BehaviorModel train_behavior_cvae(const std::vector<BeliefAction>& pairs, std::size_t belief_width,
                                  const BehaviorConfig& config, std::uint64_t seed) {
    if (pairs.empty()) throw DataError("train_behavior_cvae: no (belief, action) pairs");
    BehaviorModel out;
    Rng init_rng = stream_rng(seed, 0);
    out.cvae = BehaviorCvae::create(belief_width, config, init_rng);

    Rng split_rng = stream_rng(seed, 1);
    const auto order = shuffled_indices(pairs.size(), split_rng);
    std::size_t n_hold = static_cast<std::size_t>(config.holdout_fraction * static_cast<double>(pairs.size()));
    if (n_hold >= pairs.size()) n_hold = 0;
    std::vector<BeliefAction> holdout, fit;
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_hold ? holdout : fit).push_back(pairs[order[i]]);
    out.report.train_pairs = fit.size();
    out.report.holdout_pairs = holdout.size();

    const std::uint64_t eval_seed = derive_seed(seed, 2);
    out.report.initial_holdout_loss = mean_behavior_loss(out.cvae, holdout, config.kl_weight, eval_seed);

    nn::ParamSet params = out.cvae.params;
    nn::RmsPropState opt;
    opt.epsilon = config.rms_epsilon;
    const BehaviorCvae& shape = out.cvae;
    const std::size_t batch = std::max<std::size_t>(1, config.batch_steps);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng epoch_rng = stream_rng(derive_seed(seed, 3, epoch), 0);
        const auto perm = shuffled_indices(fit.size(), epoch_rng);
        double epoch_loss = 0.0, epoch_count = 0.0;
        for (std::size_t start = 0, b = 0; start < perm.size(); start += batch, ++b) {
            const std::size_t n = std::min(batch, perm.size() - start);
            const auto batch_idx = std::span(perm).subspan(start, n);
            const std::uint64_t batch_seed = derive_seed(seed, 4 + epoch, b);
            const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
            auto lg = kernels::sum_loss_gradients(n_chunks, [&](std::size_t c) {
                const std::size_t begin = c * kChunk;
                return chunk_loss(params, shape, fit, batch_idx.subspan(begin, std::min(kChunk, n - begin)),
                                  config.kl_weight, batch_seed, true);
            });
            if (!std::isfinite(lg.loss)) {
                std::ostringstream msg;
                msg << "train-behavior: non-finite loss at epoch " << epoch << ", batch " << b;
                throw TrainingError(msg.str());
            }
            scale_grads(lg.grads, 1.0 / lg.count);
            optimizer_step(params, lg.grads, opt, config.learning_rate, config.max_grad_norm, "train-behavior");
            epoch_loss += lg.loss;
            epoch_count += lg.count;
        }
        out.report.epoch_train_loss.push_back(epoch_loss / epoch_count);
        log_info("train-behavior epoch " + std::to_string(epoch) + " loss " +
                 std::to_string(out.report.epoch_train_loss.back()));
    }
    out.cvae.params = std::move(params);
    out.report.final_holdout_loss = mean_behavior_loss(out.cvae, holdout, config.kl_weight, eval_seed);
    return out;
}

std::vector<std::vector<double>> behavior_log_densities(const BehaviorCvae& model,
                                                        const std::vector<std::vector<Belief>>& beliefs,
                                                        const std::vector<PreparedAdmission>& admissions,
                                                        std::size_t samples, std::uint64_t seed) {
    std::vector<std::vector<double>> out(admissions.size());
    kernels::for_each_index(admissions.size(), [&](std::size_t i) {
        Rng rng = stream_rng(seed, i);
        out[i].reserve(admissions[i].length());
        for (std::size_t t = 0; t < admissions[i].length(); ++t)
            out[i].push_back(behavior_log_density(model, beliefs[i][t], admissions[i].actions[t], samples, rng));
    });
    return out;
}

}  // namespace dosing
