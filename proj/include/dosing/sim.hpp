#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "dosing/cohort.hpp"
#include "dosing/config.hpp"
#include "dosing/nn/rng.hpp"

namespace dosing {

/// Synthetic septic-patient POMDP.
///
/// Latent x ∈ R^k evolves as
///   x' = A·x + b + e_vaso·sat(vaso, h_v) + e_fluid·sat(fluid, h_f) + σ_p·ε,   sat(u, h) = u/(u + h).
/// Severity is ‖x‖. The first k continuous observations are noisy linear readings
/// base_i + scale_i·x_i; the remaining ones are tanh warps of a fixed random affine map of x.
/// Binary observation j fires when x_{2j mod k} + noise exceeds its threshold. Each
/// continuous feature is missing independently with probability `missing_prob`.
///
/// Hour t is recorded (observation, action) and then the patient is classified on x_t:
/// severity < survival_threshold → survived, > death_threshold → died, t = horizon-1 →
/// survived; otherwise the latent advances.
struct SimConfig {
    std::size_t latent_dim = 4;
    std::size_t n_continuous = 8;
    std::size_t n_binary = 2;
    std::vector<double> drift_matrix;  // k×k row-major; empty → default
    std::vector<double> drift_bias;    // k; empty → default
    std::vector<double> vaso_effect;   // k; empty → default
    std::vector<double> fluid_effect;  // k; empty → default
    double vaso_half_saturation = 0.2;
    double fluid_half_saturation = 250.0;
    double process_noise = 0.03;
    double observation_noise = 0.3;
    double binary_threshold = 1.0;
    double missing_prob = 0.3;
    double initial_mean = 0.8;
    double initial_std = 0.3;
    double death_threshold = 3.0;
    double survival_threshold = 0.5;
    std::size_t horizon = 72;
    double gamma = 0.99;
    std::uint64_t emission_seed = 7;

    // Scripted clinician: per-admission style coin, per-step style persistence, gains.
    double clinician_pressor_first_prob = 0.5;
    double clinician_style_persistence = 0.7;
    double clinician_vaso_gain = 1.0;
    double clinician_fluid_gain = 1000.0;
    double clinician_maintenance_fluid = 30.0;
    double clinician_dose_noise = 0.3;
    double clinician_treat_threshold = 0.2;

    /// Fills defaults for empty vectors and checks invariants; throws ConfigError.
    void finalize();
    static SimConfig from_kv(const KeyValueConfig& kv);
    KeyValueConfig to_kv() const;
};

/// Fixed emission parameters derived from config.emission_seed.
struct Emission {
    std::vector<double> base, scale;         // direct readings, first k features
    std::vector<double> mix, mix_bias;       // (C-k)×k and C-k
    std::vector<double> mix_scale, mix_offset;

    static Emission from_config(const SimConfig& config);
};

/// Everything a policy may look at during a simulated hour. Learned and scripted
/// policies use only `observation`; ground-truth policies may use `latent`.
struct StepContext {
    const ObservationVector& observation;
    std::span<const double> latent;
    int time_index = 0;
};

class EpisodePolicy {
  public:
    virtual ~EpisodePolicy() = default;
    virtual DoseAction act(const StepContext& ctx, Rng& rng) = 0;
};

/// Factory for per-admission policy state. Implementations must be safe to call
/// concurrently from several threads.
class SimPolicy {
  public:
    virtual ~SimPolicy() = default;
    virtual std::unique_ptr<EpisodePolicy> begin_episode(Rng& rng) const = 0;
};

/// Noisy proportional controller on a held severity proxy with two response styles
/// (pressor-first / fluid-first) mixed per admission by a coin.
class ScriptedClinician final : public SimPolicy {
  public:
    explicit ScriptedClinician(const SimConfig& config);
    std::unique_ptr<EpisodePolicy> begin_episode(Rng& rng) const override;

  private:
    SimConfig config_;
    Emission emission_;
};

class ConstantPolicy final : public SimPolicy {
  public:
    explicit ConstantPolicy(DoseAction dose) : dose_(dose) {}
    std::unique_ptr<EpisodePolicy> begin_episode(Rng& rng) const override;

  private:
    DoseAction dose_;
};

class Simulator {
  public:
    explicit Simulator(SimConfig config);

    const SimConfig& config() const { return config_; }
    const Emission& emission() const { return emission_; }

    std::vector<double> initial_latent(Rng& rng) const;
    ObservationVector observe(std::span<const double> latent, Rng& rng) const;
    std::vector<double> transition(std::span<const double> latent, const DoseAction& dose, Rng& rng) const;
    double severity(std::span<const double> latent) const;

    Admission simulate_admission(const SimPolicy& policy, Rng& rng, const std::string& id = "sim") const;
    /// Discounted return Σ γ^t r_t of one rollout (no trajectory kept).
    double rollout_return(const SimPolicy& policy, Rng& rng) const;

  private:
    SimConfig config_;
    Emission emission_;
};

/// n admissions; admission i uses stream_rng(seed, i). Parallel over admissions.
Cohort simulate_cohort(const Simulator& sim, const SimPolicy& policy, std::size_t n, std::uint64_t seed);

struct PolicyValue {
    double mean = 0.0;
    double standard_error = 0.0;
    std::size_t n = 0;
};

/// Monte-Carlo discounted return. Rollout i uses stream_rng(seed, i) so two policies
/// evaluated with the same seed share initial states and noise draws.
PolicyValue true_policy_value(const Simulator& sim, const SimPolicy& policy, std::size_t n_rollouts,
                              std::uint64_t seed);

std::string admission_id(std::size_t index);

}  // namespace dosing
