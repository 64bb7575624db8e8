#include "dosing/policy_opt.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dosing/behavior.hpp"
#include "dosing/cohort.hpp"
#include "dosing/kernels.hpp"
#include "dosing/log.hpp"
#include "dosing/train_util.hpp"

namespace dosing {

using nn::Tape;
using nn::Var;

TruncatedRatio truncated_ratio(double log_pi, double log_pi_b, double rho_bar, double c_bar) {
    TruncatedRatio r;
    r.ratio = std::exp(log_pi - log_pi_b);
    r.rho = std::min(rho_bar, r.ratio);
    r.c = std::min(c_bar, r.ratio);
    return r;
}

AdvantageVector upgoing_advantage(std::span<const double> values, std::span<const double> rewards,
                                  std::span<const double> rho, std::span<const double> c, double gamma,
                                  bool delta_uses_rho) {
    const std::size_t n = values.size();
    if (n == 0) throw std::invalid_argument("upgoing_advantage: empty trace");
    if (rewards.size() != n || rho.size() != n || c.size() != n)
        throw std::invalid_argument("upgoing_advantage: length mismatch");
    AdvantageVector out;
    out.advantage.resize(n);
    out.delta.resize(n);
    out.rho.assign(rho.begin(), rho.end());
    out.c.assign(c.begin(), c.end());
    for (std::size_t t = n; t-- > 0;) {
        const double next_v = t + 1 < n ? values[t + 1] : 0.0;
        const double td = rewards[t] + gamma * next_v - values[t];
        out.delta[t] = delta_uses_rho ? rho[t] * td : td;
        out.advantage[t] = out.delta[t];
        if (t + 1 < n) out.advantage[t] += gamma * c[t] * std::max(out.advantage[t + 1], 0.0);
    }
    return out;
}

std::vector<double> vtrace_targets(std::span<const double> values, std::span<const double> rewards,
                                   std::span<const double> rho, std::span<const double> c, double gamma) {
    const std::size_t n = values.size();
    std::vector<double> v(n);
    double next_target = 0.0, next_value = 0.0;
    for (std::size_t t = n; t-- > 0;) {
        const double delta = rho[t] * (rewards[t] + gamma * next_value - values[t]);
        v[t] = values[t] + delta + gamma * c[t] * (next_target - next_value);
        next_target = v[t];
        next_value = values[t];
    }
    return v;
}

ShiftWeights distribution_shift_weights(const std::vector<std::vector<double>>& ratios) {
    ShiftWeights out;
    out.weights.resize(ratios.size());
    double max_log = -std::numeric_limits<double>::infinity();
    std::size_t n = 0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        double cum = 0.0;
        for (std::size_t t = 0; t < ratios[i].size(); ++t) {
            out.weights[i].push_back(cum);
            max_log = std::max(max_log, cum);
            cum += std::log(ratios[i][t]);
            ++n;
        }
    }
    if (n == 0) return out;
    double sum = 0.0;
    for (auto& w : out.weights)
        for (double& v : w) {
            v = std::exp(v - max_log);
            sum += v;
        }
    const double scale = static_cast<double>(n) / sum;
    double sum2 = 0.0;
    for (auto& w : out.weights)
        for (double& v : w) {
            v *= scale;
            sum2 += v * v;
        }
    out.ess = static_cast<double>(n) * static_cast<double>(n) / sum2;
    return out;
}

Var actor_critic_loss(Tape& tape, const nn::ParamSet& params, const PolicyValueNet& net, const Trace& trace,
                      std::span<const double> advantages, std::span<const double> targets,
                      std::span<const double> weights, double lambda_bc, double value_weight, LossTerms* terms,
                      std::span<const double> value_scale) {
    const std::size_t n = trace.length();
    if (advantages.size() != n || targets.size() != n || weights.size() != n ||
        (!value_scale.empty() && value_scale.size() != n))
        throw std::invalid_argument("actor_critic_loss: length mismatch");
    Var total = tape.constant(std::vector<double>{0.0});
    LossTerms local;
    for (std::size_t t = 0; t < n; ++t) {
        const auto out = net.forward(tape, params, tape.constant(trace.beliefs[t]));
        Var logp = tape.gaussian_log_prob(tape.constant(std::span<const double>(trace.actions[t])), out.mean,
                                          out.log_std);
        Var err = tape.add_const(out.value, -targets[t]);
        Var pg = tape.scale(logp, -weights[t] * advantages[t]);
        Var vl = tape.scale(tape.square(err), value_weight * (value_scale.empty() ? 1.0 : value_scale[t]));
        Var bc = tape.scale(logp, -lambda_bc);
        total = tape.add(total, tape.add(pg, tape.add(vl, bc)));
        local.policy += tape.scalar(pg);
        local.value += tape.scalar(vl);
        local.bc += tape.scalar(bc);
    }
    if (terms != nullptr) *terms = local;
    return total;
}

std::vector<Trace> make_traces(const std::vector<PreparedAdmission>& admissions,
                               const std::vector<std::vector<Belief>>& beliefs,
                               const std::vector<std::vector<double>>& behavior_log_density) {
    std::vector<Trace> out(admissions.size());
    for (std::size_t i = 0; i < admissions.size(); ++i) {
        out[i].beliefs = beliefs[i];
        out[i].actions = admissions[i].actions;
        out[i].rewards = admissions[i].rewards;
        out[i].behavior_log_density = behavior_log_density[i];
    }
    return out;
}

namespace {

struct TraceEval {
    std::vector<double> values, log_pi, ratio, rho, c;
    AdvantageVector adv;
    std::vector<double> targets;
    std::vector<double> value_scale;
};

// Gradient of λ·(N/ESS - 1) with respect to the policy parameters, through the log π terms
// of the untruncated trajectory weights. Uses a linear surrogate Σ g_k log π_k whose
// gradient equals the penalty gradient.
nn::GradSet ess_penalty_gradient(const nn::ParamSet& params, const PolicyValueNet& net,
                                 const std::vector<const Trace*>& batch, const std::vector<TraceEval>& evals,
                                 double lambda) {
    std::vector<std::vector<double>> logw(batch.size());
    double max_log = -std::numeric_limits<double>::infinity();
    std::size_t n = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        double cum = 0.0;
        for (std::size_t t = 0; t < batch[i]->length(); ++t) {
            logw[i].push_back(cum);
            max_log = std::max(max_log, cum);
            cum += evals[i].log_pi[t] - batch[i]->behavior_log_density[t];
            ++n;
        }
    }
    double s = 0.0, q = 0.0;
    for (auto& lw : logw)
        for (double& v : lw) {
            v = std::exp(v - max_log);
            s += v;
            q += v * v;
        }
    const double dn = static_cast<double>(n);
    Tape tape;
    Var surrogate = tape.constant(std::vector<double>{0.0});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        // dP/dlog w_j = λ N (2 w_j² / S² - 2 Q w_j / S³); log w_j depends on log π_k for k < j.
        const std::size_t len = batch[i]->length();
        std::vector<double> suffix(len + 1, 0.0);
        for (std::size_t j = len; j-- > 0;) {
            const double w = logw[i][j];
            suffix[j] = suffix[j + 1] + lambda * dn * (2.0 * w * w / (s * s) - 2.0 * q * w / (s * s * s));
        }
        for (std::size_t k = 0; k + 1 < len; ++k) {
            const auto out = net.forward(tape, params, tape.constant(batch[i]->beliefs[k]));
            Var logp = tape.gaussian_log_prob(tape.constant(std::span<const double>(batch[i]->actions[k])), out.mean,
                                              out.log_std);
            surrogate = tape.add(surrogate, tape.scale(logp, suffix[k + 1]));
        }
    }
    tape.backward(surrogate);
    return tape.gradients(params);
}

}  // namespace

PolicyTrainResult train_policy(const std::vector<Trace>& traces, const HistoryEncoder& encoder, const ObsCvae& cvae,
                               const PolicyOptConfig& config, std::uint64_t seed,
                               const PolicyCheckpointFn& on_checkpoint) {
    if (traces.empty()) throw DataError("train_policy: no training traces");
    Rng init_rng = stream_rng(seed, 0);
    PolicyTrainResult result;
    result.net = PolicyValueNet::create(encoder.width(), config.net, init_rng);
    PolicyValueNet& net = result.net;
    nn::RmsPropState opt;
    opt.epsilon = config.rms_epsilon;
    SearchBudget budget = config.budget;
    budget.gamma = config.gamma;
    const SearchModels models{&encoder, &cvae, &net};

    for (std::size_t it = 0; it < config.iterations; ++it) {
        Rng rng = stream_rng(derive_seed(seed, 10, it), 0);
        const auto perm = shuffled_indices(traces.size(), rng);
        const std::size_t b = std::min(std::max<std::size_t>(1, config.batch_admissions), traces.size());
        std::vector<const Trace*> batch;
        for (std::size_t i = 0; i < b; ++i)
            if (traces[perm[i]].length() > 0) batch.push_back(&traces[perm[i]]);
        if (batch.empty()) continue;

        std::vector<TraceEval> evals(batch.size());
        std::vector<std::vector<double>> ratios(batch.size());
        kernels::for_each_index(batch.size(), [&](std::size_t i) {
            const Trace& tr = *batch[i];
            TraceEval& e = evals[i];
            for (std::size_t t = 0; t < tr.length(); ++t) {
                const auto out = net.forward(tr.beliefs[t]);
                e.values.push_back(out.value);
                e.log_pi.push_back(policy_log_prob(out, tr.actions[t]));
                const auto r = truncated_ratio(e.log_pi.back(), tr.behavior_log_density[t], config.rho_bar, config.c_bar);
                e.ratio.push_back(r.ratio);
                e.rho.push_back(r.rho);
                e.c.push_back(r.c);
            }
            e.adv = upgoing_advantage(e.values, tr.rewards, e.rho, e.c, config.gamma, config.delta_uses_rho);
            e.targets = vtrace_targets(e.values, tr.rewards, e.rho, e.c, config.gamma);
        });
        for (std::size_t i = 0; i < batch.size(); ++i) ratios[i] = evals[i].ratio;

        // Tree-search targets for a random subset of the minibatch states.
        std::vector<std::pair<std::size_t, std::size_t>> states;
        for (std::size_t i = 0; i < batch.size(); ++i)
            for (std::size_t t = 0; t < batch[i]->length(); ++t) states.emplace_back(i, t);
        const auto pick = shuffled_indices(states.size(), rng);
        const std::size_t n_search = std::min(config.search_states, states.size());
        std::vector<const std::vector<double>*> roots;
        for (std::size_t j = 0; j < n_search; ++j) {
            const auto [i, t] = states[pick[j]];
            roots.push_back(&batch[i]->beliefs[t]);
        }
        const auto tree_values = kernels::search_targets(roots, models, budget, derive_seed(seed, 11, it));
        for (std::size_t j = 0; j < n_search; ++j) {
            const auto [i, t] = states[pick[j]];
            evals[i].targets[t] = tree_values[j];
        }
        if (config.search_value_share >= 0.0 && n_search > 0 && n_search < states.size()) {
            const double n_all = static_cast<double>(states.size());
            const double rest = (1.0 - config.search_value_share) * n_all / (n_all - n_search);
            const double searched = config.search_value_share * n_all / n_search;
            for (std::size_t i = 0; i < batch.size(); ++i) evals[i].value_scale.assign(batch[i]->length(), rest);
            for (std::size_t j = 0; j < n_search; ++j) {
                const auto [i, t] = states[pick[j]];
                evals[i].value_scale[t] = searched;
            }
        }

        const ShiftWeights shift = distribution_shift_weights(ratios);
        std::vector<std::vector<double>> weights(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i)
            weights[i] = config.shift_weights ? shift.weights[i] : std::vector<double>(batch[i]->length(), 1.0);

        std::vector<LossTerms> terms(batch.size());
        const nn::ParamSet& params = net.params;
        auto lg = kernels::sum_loss_gradients(batch.size(), [&](std::size_t i) {
            Tape tape;
            Var loss = actor_critic_loss(tape, params, net, *batch[i], evals[i].adv.advantage, evals[i].targets,
                                         weights[i], config.lambda_bc, config.value_weight, &terms[i],
                                         evals[i].value_scale);
            kernels::LossGradient out;
            out.loss = tape.scalar(loss);
            out.count = static_cast<double>(batch[i]->length());
            tape.backward(loss);
            out.grads = tape.gradients(params);
            return out;
        });
        if (!std::isfinite(lg.loss))
            throw TrainingError("train-policy: non-finite loss at iteration " + std::to_string(it));
        scale_grads(lg.grads, 1.0 / lg.count);
        if (config.lambda_ess > 0.0)
            nn::accumulate(lg.grads, ess_penalty_gradient(params, net, batch, evals, config.lambda_ess));

        PolicyLogRow row;
        row.iteration = it;
        double abs_adv = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            row.policy_loss += terms[i].policy / lg.count;
            row.value_loss += terms[i].value / lg.count;
            row.bc_loss += terms[i].bc / lg.count;
            for (double a : evals[i].adv.advantage) abs_adv += std::abs(a);
        }
        row.mean_abs_advantage = abs_adv / lg.count;
        row.ess = shift.ess;
        row.grad_norm =
            optimizer_step(net.params, lg.grads, opt, config.learning_rate, config.max_grad_norm, "train-policy");
        result.log.push_back(row);
        if (it % 50 == 0)
            log_info("train-policy it " + std::to_string(it) + " pg " + std::to_string(row.policy_loss) + " v " +
                     std::to_string(row.value_loss) + " bc " + std::to_string(row.bc_loss));
        if (on_checkpoint && config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0)
            on_checkpoint(it + 1, net);
    }
    return result;
}

}  // namespace dosing
