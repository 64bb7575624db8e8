#include "dosing/sim.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "dosing/kernels.hpp"

namespace dosing {

void SimConfig::finalize() {
    const std::size_t k = latent_dim;
    if (k == 0) throw ConfigError("latent_dim must be >= 1");
    if (n_continuous < k) throw ConfigError("n_continuous must be >= latent_dim (direct readings)");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (!(death_threshold > survival_threshold) || survival_threshold < 0.0) {
        throw ConfigError("need death_threshold > survival_threshold >= 0");
    }
    if (process_noise < 0.0 || observation_noise < 0.0 || initial_std < 0.0 || clinician_dose_noise < 0.0) {
        throw ConfigError("noise standard deviations must be >= 0");
    }
    if (missing_prob < 0.0 || missing_prob >= 1.0) throw ConfigError("missing_prob must be in [0, 1)");
    if (gamma <= 0.0 || gamma > 1.0) throw ConfigError("gamma must be in (0, 1]");
    if (drift_matrix.empty()) {
        drift_matrix.assign(k * k, 0.0);
        for (std::size_t i = 0; i < k; ++i) {
            drift_matrix[i * k + i] = 1.01;
            const std::size_t partner = i ^ 1u;  // couple dims pairwise: (0,1), (2,3), ...
            if (partner < k) drift_matrix[i * k + partner] = 0.01;
        }
    }
    if (drift_bias.empty()) drift_bias.assign(k, 0.01);
    if (vaso_effect.empty()) {
        vaso_effect.assign(k, 0.0);
        const double v[] = {-0.06, -0.05, -0.01, 0.0};
        for (std::size_t i = 0; i < k; ++i) vaso_effect[i] = v[i % 4];
    }
    if (fluid_effect.empty()) {
        fluid_effect.assign(k, 0.0);
        const double f[] = {-0.01, 0.0, -0.06, -0.05};
        for (std::size_t i = 0; i < k; ++i) fluid_effect[i] = f[i % 4];
    }
    if (drift_matrix.size() != k * k || drift_bias.size() != k || vaso_effect.size() != k ||
        fluid_effect.size() != k) {
        throw ConfigError("sim vectors must match latent_dim");
    }
}

SimConfig SimConfig::from_kv(const KeyValueConfig& kv) {
    kv.reject_unknown({"latent_dim", "n_continuous", "n_binary", "drift_matrix", "drift_bias", "vaso_effect",
                       "fluid_effect", "vaso_half_saturation", "fluid_half_saturation", "process_noise",
                       "observation_noise", "binary_threshold", "missing_prob", "initial_mean", "initial_std",
                       "death_threshold", "survival_threshold", "horizon", "gamma", "emission_seed",
                       "clinician_pressor_first_prob", "clinician_style_persistence", "clinician_vaso_gain",
                       "clinician_fluid_gain", "clinician_maintenance_fluid", "clinician_dose_noise",
                       "clinician_treat_threshold"});
    SimConfig c;
    c.latent_dim = static_cast<std::size_t>(kv.get_int("latent_dim", static_cast<long long>(c.latent_dim)));
    c.n_continuous = static_cast<std::size_t>(kv.get_int("n_continuous", static_cast<long long>(c.n_continuous)));
    c.n_binary = static_cast<std::size_t>(kv.get_int("n_binary", static_cast<long long>(c.n_binary)));
    c.drift_matrix = kv.get_doubles("drift_matrix", {});
    c.drift_bias = kv.get_doubles("drift_bias", {});
    c.vaso_effect = kv.get_doubles("vaso_effect", {});
    c.fluid_effect = kv.get_doubles("fluid_effect", {});
    c.vaso_half_saturation = kv.get_double("vaso_half_saturation", c.vaso_half_saturation);
    c.fluid_half_saturation = kv.get_double("fluid_half_saturation", c.fluid_half_saturation);
    c.process_noise = kv.get_double("process_noise", c.process_noise);
    c.observation_noise = kv.get_double("observation_noise", c.observation_noise);
    c.binary_threshold = kv.get_double("binary_threshold", c.binary_threshold);
    c.missing_prob = kv.get_double("missing_prob", c.missing_prob);
    c.initial_mean = kv.get_double("initial_mean", c.initial_mean);
    c.initial_std = kv.get_double("initial_std", c.initial_std);
    c.death_threshold = kv.get_double("death_threshold", c.death_threshold);
    c.survival_threshold = kv.get_double("survival_threshold", c.survival_threshold);
    c.horizon = static_cast<std::size_t>(kv.get_int("horizon", static_cast<long long>(c.horizon)));
    c.gamma = kv.get_double("gamma", c.gamma);
    c.emission_seed = static_cast<std::uint64_t>(kv.get_int("emission_seed", static_cast<long long>(c.emission_seed)));
    c.clinician_pressor_first_prob = kv.get_double("clinician_pressor_first_prob", c.clinician_pressor_first_prob);
    c.clinician_style_persistence = kv.get_double("clinician_style_persistence", c.clinician_style_persistence);
    c.clinician_vaso_gain = kv.get_double("clinician_vaso_gain", c.clinician_vaso_gain);
    c.clinician_fluid_gain = kv.get_double("clinician_fluid_gain", c.clinician_fluid_gain);
    c.clinician_maintenance_fluid = kv.get_double("clinician_maintenance_fluid", c.clinician_maintenance_fluid);
    c.clinician_dose_noise = kv.get_double("clinician_dose_noise", c.clinician_dose_noise);
    c.clinician_treat_threshold = kv.get_double("clinician_treat_threshold", c.clinician_treat_threshold);
    c.finalize();
    return c;
}

KeyValueConfig SimConfig::to_kv() const {
    KeyValueConfig kv;
    kv.set("latent_dim", std::to_string(latent_dim));
    kv.set("n_continuous", std::to_string(n_continuous));
    kv.set("n_binary", std::to_string(n_binary));
    kv.set("drift_matrix", format_doubles(drift_matrix));
    kv.set("drift_bias", format_doubles(drift_bias));
    kv.set("vaso_effect", format_doubles(vaso_effect));
    kv.set("fluid_effect", format_doubles(fluid_effect));
    kv.set("vaso_half_saturation", format_double(vaso_half_saturation));
    kv.set("fluid_half_saturation", format_double(fluid_half_saturation));
    kv.set("process_noise", format_double(process_noise));
    kv.set("observation_noise", format_double(observation_noise));
    kv.set("binary_threshold", format_double(binary_threshold));
    kv.set("missing_prob", format_double(missing_prob));
    kv.set("initial_mean", format_double(initial_mean));
    kv.set("initial_std", format_double(initial_std));
    kv.set("death_threshold", format_double(death_threshold));
    kv.set("survival_threshold", format_double(survival_threshold));
    kv.set("horizon", std::to_string(horizon));
    kv.set("gamma", format_double(gamma));
    kv.set("emission_seed", std::to_string(emission_seed));
    kv.set("clinician_pressor_first_prob", format_double(clinician_pressor_first_prob));
    kv.set("clinician_style_persistence", format_double(clinician_style_persistence));
    kv.set("clinician_vaso_gain", format_double(clinician_vaso_gain));
    kv.set("clinician_fluid_gain", format_double(clinician_fluid_gain));
    kv.set("clinician_maintenance_fluid", format_double(clinician_maintenance_fluid));
    kv.set("clinician_dose_noise", format_double(clinician_dose_noise));
    kv.set("clinician_treat_threshold", format_double(clinician_treat_threshold));
    return kv;
}

Emission Emission::from_config(const SimConfig& config) {
    const std::size_t k = config.latent_dim;
    const std::size_t n_mix = config.n_continuous - k;
    Rng rng(mix_seed(config.emission_seed));
    Emission e;
    for (std::size_t i = 0; i < k; ++i) {
        e.base.push_back(std::round(20.0 + 80.0 * uniform01(rng)));
        const double mag = 1.0 + 9.0 * uniform01(rng);
        e.scale.push_back(i % 2 ? mag : -mag);
    }
    for (std::size_t j = 0; j < n_mix; ++j) {
        for (std::size_t i = 0; i < k; ++i) e.mix.push_back(0.5 * standard_normal(rng));
        e.mix_bias.push_back(0.3 * standard_normal(rng));
        e.mix_scale.push_back(1.0 + 19.0 * uniform01(rng));
        e.mix_offset.push_back(100.0 * uniform01(rng));
    }
    return e;
}

Simulator::Simulator(SimConfig config) : config_(std::move(config)) {
    config_.finalize();
    emission_ = Emission::from_config(config_);
}

double Simulator::severity(std::span<const double> latent) const {
    return std::sqrt(std::inner_product(latent.begin(), latent.end(), latent.begin(), 0.0));
}

std::vector<double> Simulator::initial_latent(Rng& rng) const {
    std::vector<double> x(config_.latent_dim);
    for (double& v : x) v = config_.initial_mean + config_.initial_std * standard_normal(rng);
    return x;
}

ObservationVector Simulator::observe(std::span<const double> latent, Rng& rng) const {
    const std::size_t k = config_.latent_dim;
    const double sd = config_.observation_noise;
    ObservationVector o;
    o.continuous.resize(config_.n_continuous);
    o.missing.assign(config_.n_continuous, 0);
    for (std::size_t i = 0; i < k; ++i) {
        o.continuous[i] = emission_.base[i] + emission_.scale[i] * (latent[i] + sd * standard_normal(rng));
    }
    for (std::size_t j = 0; j + k < config_.n_continuous; ++j) {
        double a = emission_.mix_bias[j];
        for (std::size_t i = 0; i < k; ++i) a += emission_.mix[j * k + i] * latent[i];
        o.continuous[k + j] = emission_.mix_offset[j] +
                              emission_.mix_scale[j] * (std::tanh(a) + 0.5 * sd * standard_normal(rng));
    }
    for (std::size_t j = 0; j < config_.n_binary; ++j) {
        const double v = latent[(2 * j) % k] + sd * standard_normal(rng);
        o.binary.push_back(v > config_.binary_threshold ? 1.0 : 0.0);
    }
    for (std::size_t c = 0; c < config_.n_continuous; ++c) {
        if (uniform01(rng) < config_.missing_prob) {
            o.missing[c] = 1;
            o.continuous[c] = 0.0;
        }
    }
    return o;
}

std::vector<double> Simulator::transition(std::span<const double> latent, const DoseAction& dose, Rng& rng) const {
    const std::size_t k = config_.latent_dim;
    const double sv = dose.vasopressor / (dose.vasopressor + config_.vaso_half_saturation);
    const double sf = dose.iv_fluid / (dose.iv_fluid + config_.fluid_half_saturation);
    std::vector<double> next(k);
    for (std::size_t i = 0; i < k; ++i) {
        double v = config_.drift_bias[i];
        for (std::size_t j = 0; j < k; ++j) v += config_.drift_matrix[i * k + j] * latent[j];
        v += config_.vaso_effect[i] * sv + config_.fluid_effect[i] * sf;
        next[i] = v + config_.process_noise * standard_normal(rng);
    }
    return next;
}

namespace {

// Plays one admission; `record` receives every step, returns (outcome, steps).
template <typename Record>
Outcome play(const Simulator& sim, const SimPolicy& policy, Rng& rng, Record&& record) {
    const SimConfig& cfg = sim.config();
    auto episode = policy.begin_episode(rng);
    std::vector<double> x = sim.initial_latent(rng);
    for (std::size_t t = 0;; ++t) {
        ObservationVector obs = sim.observe(x, rng);
        const StepContext ctx{obs, x, static_cast<int>(t)};
        DoseAction a = episode->act(ctx, rng);
        a.vasopressor = std::max(0.0, a.vasopressor);
        a.iv_fluid = std::max(0.0, a.iv_fluid);
        record(static_cast<int>(t), std::move(obs), a);
        const double sev = sim.severity(x);
        if (sev < cfg.survival_threshold) return Outcome::Survived;
        if (sev > cfg.death_threshold) return Outcome::Died;
        if (t + 1 >= cfg.horizon) return Outcome::Survived;
        x = sim.transition(x, a, rng);
    }
}

}  // namespace

Admission Simulator::simulate_admission(const SimPolicy& policy, Rng& rng, const std::string& id) const {
    Admission adm;
    adm.id = id;
    adm.outcome = play(*this, policy, rng, [&](int t, ObservationVector obs, const DoseAction& a) {
        Step s;
        s.time_index = t;
        s.observation = std::move(obs);
        s.action = a;
        adm.steps.push_back(std::move(s));
    });
    return assign_rewards(std::move(adm));
}

double Simulator::rollout_return(const SimPolicy& policy, Rng& rng) const {
    int last = 0;
    const Outcome outcome = play(*this, policy, rng, [&](int t, ObservationVector, const DoseAction&) { last = t; });
    const double r = outcome == Outcome::Survived ? kSurvivalReward : kDeathReward;
    return std::pow(config_.gamma, last) * r;
}

namespace {

class ScriptedEpisode final : public EpisodePolicy {
  public:
    ScriptedEpisode(const SimConfig& cfg, const Emission& em, bool pressor_first)
        : cfg_(cfg), em_(em), pressor_first_(pressor_first), estimate_(cfg.latent_dim, cfg.initial_mean) {}

    DoseAction act(const StepContext& ctx, Rng& rng) override {
        const std::size_t k = cfg_.latent_dim;
        for (std::size_t i = 0; i < k; ++i) {
            if (!ctx.observation.missing[i]) {
                estimate_[i] = (ctx.observation.continuous[i] - em_.base[i]) / em_.scale[i];
            }
        }
        double proxy = 0.0;
        for (double v : estimate_) proxy += v;
        proxy = std::max(0.0, proxy / static_cast<double>(k));

        const bool keep_style = uniform01(rng) < cfg_.clinician_style_persistence;
        const bool pressor = keep_style ? pressor_first_ : !pressor_first_;
        const double n1 = std::exp(cfg_.clinician_dose_noise * standard_normal(rng));
        const double n2 = std::exp(cfg_.clinician_dose_noise * standard_normal(rng));
        DoseAction a;
        a.iv_fluid = cfg_.clinician_maintenance_fluid * n2;
        if (proxy < cfg_.clinician_treat_threshold) return a;
        if (pressor) {
            a.vasopressor = cfg_.clinician_vaso_gain * proxy * n1;
        } else {
            a.iv_fluid = cfg_.clinician_fluid_gain * proxy * n1;
        }
        return a;
    }

  private:
    const SimConfig& cfg_;
    const Emission& em_;
    bool pressor_first_;
    std::vector<double> estimate_;
};

class ConstantEpisode final : public EpisodePolicy {
  public:
    explicit ConstantEpisode(DoseAction d) : d_(d) {}
    DoseAction act(const StepContext&, Rng&) override { return d_; }

  private:
    DoseAction d_;
};

}  // namespace

ScriptedClinician::ScriptedClinician(const SimConfig& config) : config_(config) {
    config_.finalize();
    emission_ = Emission::from_config(config_);
}

std::unique_ptr<EpisodePolicy> ScriptedClinician::begin_episode(Rng& rng) const {
    const bool pressor_first = uniform01(rng) < config_.clinician_pressor_first_prob;
    return std::make_unique<ScriptedEpisode>(config_, emission_, pressor_first);
}

std::unique_ptr<EpisodePolicy> ConstantPolicy::begin_episode(Rng&) const {
    return std::make_unique<ConstantEpisode>(dose_);
}

std::string admission_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sim-%06zu", index);
    return buf;
}

Cohort simulate_cohort(const Simulator& sim, const SimPolicy& policy, std::size_t n, std::uint64_t seed) {
    Cohort cohort;
    cohort.n_continuous = sim.config().n_continuous;
    cohort.n_binary = sim.config().n_binary;
    cohort.admissions = kernels::simulate_batch(sim, policy, n, seed);
    return cohort;
}

PolicyValue true_policy_value(const Simulator& sim, const SimPolicy& policy, std::size_t n_rollouts,
                              std::uint64_t seed) {
    if (n_rollouts == 0) throw ConfigError("n_rollouts must be >= 1");
    const auto returns = kernels::rollout_returns(sim, policy, n_rollouts, seed);
    PolicyValue v;
    v.n = n_rollouts;
    v.mean = std::accumulate(returns.begin(), returns.end(), 0.0) / static_cast<double>(n_rollouts);
    if (n_rollouts > 1) {
        double ss = 0.0;
        for (double r : returns) ss += (r - v.mean) * (r - v.mean);
        v.standard_error = std::sqrt(ss / static_cast<double>(n_rollouts - 1) / static_cast<double>(n_rollouts));
    }
    return v;
}

}  // namespace dosing
