#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dosing/nn/tape.hpp"
#include "dosing/policy_net.hpp"
#include "dosing/tree_search.hpp"

namespace dosing {

struct PolicyOptConfig {
    PolicyNetConfig net;
    SearchBudget budget;
    double gamma = 0.99;
    double rho_bar = 1.0;
    double c_bar = 1.0;
    bool delta_uses_rho = true;
    double lambda_bc = 0.1;
    double value_weight = 0.5;
    // Share of the value loss carried by the tree-searched states; the rest goes to the
    // V-trace targets of the other steps. Negative = plain per-step sum.
    double search_value_share = 0.5;
    bool shift_weights = false;
    double lambda_ess = 0.0;

    double learning_rate = 3e-4;
    double rms_epsilon = 1e-5;
    double max_grad_norm = 0.5;
    std::size_t iterations = 600;
    std::size_t batch_admissions = 16;
    std::size_t search_states = 32;
    std::size_t checkpoint_every = 0;  // 0 = no intermediate checkpoints
};

/// One admission with frozen beliefs and precomputed behavior densities.
struct Trace {
    std::vector<Belief> beliefs;
    std::vector<EqAction> actions;
    std::vector<double> rewards;
    std::vector<double> behavior_log_density;

    std::size_t length() const { return actions.size(); }
};

struct TruncatedRatio {
    double ratio = 1.0;
    double rho = 1.0;
    double c = 1.0;
};

/// ratio = π/π_b from log densities; ρ = min(ρ̄, ratio), c = min(c̄, ratio).
TruncatedRatio truncated_ratio(double log_pi, double log_pi_b, double rho_bar = 1.0, double c_bar = 1.0);

struct AdvantageVector {
    std::vector<double> advantage;
    std::vector<double> delta;
    std::vector<double> rho;
    std::vector<double> c;
};

/// Backward recursion from the last step (V after it is 0):
///   δ_t = ρ_t (r_t + γ V_{t+1} - V_t)   (without ρ_t when delta_uses_rho is false)
///   A_{T-1} = δ_{T-1},  A_t = γ c_t max(A_{t+1}, 0) + δ_t.
/// Throws std::invalid_argument for an empty trace.
AdvantageVector upgoing_advantage(std::span<const double> values, std::span<const double> rewards,
                                  std::span<const double> rho, std::span<const double> c, double gamma,
                                  bool delta_uses_rho = true);

/// V-trace style value targets v_t = V_t + δ_t + γ c_t (v_{t+1} - V_{t+1}), v_T = V_T = 0.
std::vector<double> vtrace_targets(std::span<const double> values, std::span<const double> rewards,
                                   std::span<const double> rho, std::span<const double> c, double gamma);

struct ShiftWeights {
    std::vector<std::vector<double>> weights;  // normalized to mean 1 over all steps
    double ess = 0.0;                          // (Σw)² / Σw² of the normalized weights
};

/// w_t = Π_{k<t} ratio_k per trajectory (w_0 = 1), normalized to mean 1 over the batch.
ShiftWeights distribution_shift_weights(const std::vector<std::vector<double>>& ratios);

struct LossTerms {
    double policy = 0.0;
    double value = 0.0;
    double bc = 0.0;
    double total() const { return policy + value + bc; }
};

/// Summed (not averaged) actor-critic loss of one trace:
///   -Σ w_t A_t log π(a_t|s_t) + value_weight·Σ u_t (V(s_t) - y_t)² + λ_bc·Σ -log π(a_t|s_t).
/// Advantages, targets and weights are constants. u_t = value_scale[t], or 1 when empty.
nn::Var actor_critic_loss(nn::Tape& tape, const nn::ParamSet& params, const PolicyValueNet& net, const Trace& trace,
                          std::span<const double> advantages, std::span<const double> targets,
                          std::span<const double> weights, double lambda_bc, double value_weight = 0.5,
                          LossTerms* terms = nullptr, std::span<const double> value_scale = {});

struct PolicyLogRow {
    std::size_t iteration = 0;
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double bc_loss = 0.0;
    double ess = 0.0;
    double mean_abs_advantage = 0.0;
    double grad_norm = 0.0;
};

struct PolicyTrainResult {
    PolicyValueNet net;
    std::vector<PolicyLogRow> log;
};

using PolicyCheckpointFn = std::function<void(std::size_t iteration, const PolicyValueNet& net)>;

/// Alternates tree-search targets on a random subset of minibatch states with an RMSProp
/// step on the actor-critic loss. `encoder` and `cvae` are frozen.
PolicyTrainResult train_policy(const std::vector<Trace>& traces, const HistoryEncoder& encoder, const ObsCvae& cvae,
                               const PolicyOptConfig& config, std::uint64_t seed,
                               const PolicyCheckpointFn& on_checkpoint = {});

/// Builds traces from prepared admissions with a frozen encoder and behavior densities.
std::vector<Trace> make_traces(const std::vector<PreparedAdmission>& admissions,
                               const std::vector<std::vector<Belief>>& beliefs,
                               const std::vector<std::vector<double>>& behavior_log_density);

}  // namespace dosing
