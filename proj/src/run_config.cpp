#include "dosing/run_config.hpp"

#include <cmath>
#include <random>
#include <set>
#include <type_traits>

#include "dosing/cohort.hpp"

namespace dosing {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed is read through the size_t path");

namespace {

// Calls f(key, field) for every non-sim field.
template <class Config, class F>
void visit_fields(Config& c, F&& f) {
    f("run.seed", c.seed);
    f("run.n_admissions", c.n_admissions);
    f("run.n_test", c.n_test);
    f("run.rollouts", c.rollouts);
    f("run.rollout_action", c.rollout_action);

    auto& s = c.state;
    f("state.obs_embed", s.obs_embed);
    f("state.act_embed", s.act_embed);
    f("state.embed_hidden", s.embed_hidden);
    f("state.belief_width", s.belief_width);
    f("state.latent_dim", s.latent_dim);
    f("state.cvae_hidden", s.cvae_hidden);
    f("state.encoder_std", s.encoder_std);
    f("state.kl_weight", s.kl_weight);
    f("state.learning_rate", s.learning_rate);
    f("state.rms_epsilon", s.rms_epsilon);
    f("state.max_grad_norm", s.max_grad_norm);
    f("state.epochs", s.epochs);
    f("state.batch_admissions", s.batch_admissions);
    f("state.holdout_fraction", s.holdout_fraction);

    auto& b = c.behavior;
    f("behavior.latent_dim", b.latent_dim);
    f("behavior.hidden", b.hidden);
    f("behavior.encoder_std", b.encoder_std);
    f("behavior.proposal_std", b.proposal_std);
    f("behavior.log_std_min", b.log_std_min);
    f("behavior.log_std_max", b.log_std_max);
    f("behavior.kl_weight", b.kl_weight);
    f("behavior.density_samples", b.density_samples);
    f("behavior.learning_rate", b.learning_rate);
    f("behavior.rms_epsilon", b.rms_epsilon);
    f("behavior.max_grad_norm", b.max_grad_norm);
    f("behavior.epochs", b.epochs);
    f("behavior.batch_steps", b.batch_steps);
    f("behavior.holdout_fraction", b.holdout_fraction);

    auto& p = c.policy;
    f("policy.hidden", p.net.hidden);
    f("policy.log_std_min", p.net.log_std_min);
    f("policy.log_std_max", p.net.log_std_max);
    f("policy.gamma", p.gamma);
    f("policy.rho_bar", p.rho_bar);
    f("policy.c_bar", p.c_bar);
    f("policy.delta_uses_rho", p.delta_uses_rho);
    f("policy.lambda_bc", p.lambda_bc);
    f("policy.value_weight", p.value_weight);
    f("policy.search_value_share", p.search_value_share);
    f("policy.shift_weights", p.shift_weights);
    f("policy.lambda_ess", p.lambda_ess);
    f("policy.learning_rate", p.learning_rate);
    f("policy.rms_epsilon", p.rms_epsilon);
    f("policy.max_grad_norm", p.max_grad_norm);
    f("policy.iterations", p.iterations);
    f("policy.batch_admissions", p.batch_admissions);
    f("policy.search_states", p.search_states);
    f("policy.checkpoint_every", p.checkpoint_every);

    f("search.expansions", p.budget.expansions);
    f("search.candidates", p.budget.candidates);
    f("search.children", p.budget.children);
    f("search.likelihood_samples", p.budget.likelihood_samples);

    auto& o = c.ope;
    f("ope.lambda", o.retrace.lambda);
    f("ope.max_iterations", o.retrace.max_iterations);
    f("ope.tolerance", o.retrace.tolerance);
    f("ope.hidden", o.regressor.hidden);
    f("ope.steps_per_fit", o.regressor.steps_per_fit);
    f("ope.batch", o.regressor.batch);
    f("ope.learning_rate", o.regressor.learning_rate);
    f("ope.rms_epsilon", o.regressor.rms_epsilon);
    f("ope.bootstrap_resamples", o.bootstrap_resamples);
    f("ope.confidence", o.confidence);
}

struct Reader {
    const KeyValueConfig& kv;
    void operator()(const char* key, double& v) const { v = kv.get_double(key, v); }
    void operator()(const char* key, bool& v) const { v = kv.get_bool(key, v); }
    void operator()(const char* key, std::string& v) const { v = kv.get_string(key, v); }
    void operator()(const char* key, std::size_t& v) const {
        const long long x = kv.get_int(key, static_cast<long long>(v));
        if (x < 0) throw ConfigError(std::string(key) + " must be non-negative");
        v = static_cast<std::size_t>(x);
    }
};

struct Writer {
    KeyValueConfig& kv;
    void operator()(const char* key, double v) const { kv.set(key, format_double(v)); }
    void operator()(const char* key, bool v) const { kv.set(key, v ? "true" : "false"); }
    void operator()(const char* key, const std::string& v) const { kv.set(key, v); }
    void operator()(const char* key, std::size_t v) const { kv.set(key, std::to_string(v)); }
};

}  // namespace

RunConfig::RunConfig() { sim.finalize(); }

RunConfig RunConfig::from_kv(const KeyValueConfig& kv) {
    RunConfig c;
    std::set<std::string> known;
    visit_fields(c, [&](const char* key, auto&) { known.insert(key); });
    KeyValueConfig sim_kv, rest;
    for (const auto& [key, value] : kv.entries()) {
        if (key.rfind("sim.", 0) == 0) {
            sim_kv.set(key.substr(4), value);
        } else {
            rest.set(key, value);
        }
    }
    rest.reject_unknown(known);
    visit_fields(c, Reader{rest});
    c.sim = SimConfig::from_kv(sim_kv);
    c.sim.finalize();
    if (c.rollout_action != "mean" && c.rollout_action != "sample")
        throw ConfigError("run.rollout_action must be 'mean' or 'sample'");
    for (double w : {c.state.encoder_std, c.behavior.encoder_std, c.behavior.proposal_std})
        if (!(w > 0.0)) throw ConfigError("encoder and proposal widths must be positive");
    c.policy.budget.gamma = c.policy.gamma;
    c.ope.retrace.gamma = c.policy.gamma;
    c.policy.budget.validate();
    return c;
}

KeyValueConfig RunConfig::to_kv() const {
    KeyValueConfig kv;
    visit_fields(*this, Writer{kv});
    const KeyValueConfig sim_kv = sim.to_kv();
    for (const auto& [key, value] : sim_kv.entries()) kv.set("sim." + key, value);
    return kv;
}

void sample_optimizer_hyperparameters(RunConfig& config, Rng& rng) {
    auto log_uniform = [&](double lo, double hi) {
        std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
        return std::exp(u(rng));
    };
    for (auto* lr : {&config.state.learning_rate, &config.behavior.learning_rate, &config.policy.learning_rate})
        *lr = log_uniform(1e-5, 5e-4);
    for (auto* eps : {&config.state.rms_epsilon, &config.behavior.rms_epsilon, &config.policy.rms_epsilon})
        *eps = log_uniform(1e-5, 1e-1);
}

}  // namespace dosing
