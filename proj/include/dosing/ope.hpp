#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dosing/nn/optim.hpp"
#include "dosing/nn/rng.hpp"
#include "dosing/nn/tensor.hpp"

namespace dosing {

inline constexpr double kRatioClipLow = 1e-30;
inline constexpr double kRatioClipHigh = 1e10;

/// One logged test trajectory: value-function features per step, rewards, and the behavior
/// log density of each logged action.
struct OpeTrajectory {
    std::vector<std::vector<double>> features;
    std::vector<double> rewards;
    std::vector<double> log_behavior;

    std::size_t length() const { return rewards.size(); }
};

/// log π(a_t | s_t) of the evaluated policy, per trajectory and step.
using LogProbs = std::vector<std::vector<double>>;

double discounted_return(std::span<const double> rewards, double gamma);

/// Σ w_i G_i / Σ w_i with w_i = clip(Π_t π/π_b, 1e-30, 1e10). Throws std::invalid_argument
/// for an empty set.
double wis(const std::vector<OpeTrajectory>& trajs, const LogProbs& log_target, double gamma);

/// Per-decision weighted IS: Σ_t γ^t Σ_i ŵ_{i,t} r_{i,t}, ŵ_{i,t} = w_{i,t} / Σ_j w_{j,t},
/// w_{i,t} = clip(Π_{k≤t} π/π_b). Finished trajectories keep their last weight and reward 0.
double stepwise_wis(const std::vector<OpeTrajectory>& trajs, const LogProbs& log_target, double gamma);

class ValueRegressor {
  public:
    virtual ~ValueRegressor() = default;
    virtual double predict(std::span<const double> x) const = 0;
    /// Least-squares fit of predict(x_i) to y_i.
    virtual void fit(const std::vector<const std::vector<double>*>& xs, const std::vector<double>& ys) = 0;
};

/// Feature vector x is a state id in x[0]; the fit is the per-id mean target (unseen ids → 0).
class TabularRegressor final : public ValueRegressor {
  public:
    double predict(std::span<const double> x) const override;
    void fit(const std::vector<const std::vector<double>*>& xs, const std::vector<double>& ys) override;

  private:
    std::vector<double> values_;
};

struct MlpRegressorConfig {
    std::size_t hidden = 64;
    std::size_t steps_per_fit = 300;
    std::size_t batch = 128;
    double learning_rate = 3e-4;
    double rms_epsilon = 1e-5;
    double max_grad_norm = 0.5;
};

/// Critic-shaped network (two relu layers + scalar head) trained by RMSProp on squared
/// error; successive fits warm-start from the previous weights.
class MlpRegressor final : public ValueRegressor {
  public:
    MlpRegressor(std::size_t input_width, const MlpRegressorConfig& config, std::uint64_t seed);
    double predict(std::span<const double> x) const override;
    void fit(const std::vector<const std::vector<double>*>& xs, const std::vector<double>& ys) override;

  private:
    MlpRegressorConfig config_;
    nn::ParamSet params_;
    nn::RmsPropState opt_;
    std::uint64_t seed_;
    std::size_t fits_ = 0;
};

struct RetraceConfig {
    double lambda = 0.9;
    double gamma = 0.99;
    std::size_t max_iterations = 20;
    double tolerance = 1e-6;
};

struct RetraceResult {
    std::size_t iterations = 0;
    bool converged = false;
    double last_change = 0.0;  // max |ΔV̂| over logged states in the final sweep
};

/// Retrace(λ) targets for one trajectory given current V̂ values:
///   y_t = V_t + Σ_{k≥t} γ^{k-t} (Π_{j=t+1..k} λ c_j) δ_k,  δ_k = c_k (r_k + γ V_{k+1} - V_k),
///   c_j = min(1, π/π_b), V after the last step = 0.
std::vector<double> retrace_targets(std::span<const double> values, std::span<const double> rewards,
                                    std::span<const double> log_ratio, double lambda, double gamma);

/// Alternates target computation and regression until predictions move less than
/// `tolerance` or the iteration cap is hit (reported, not thrown).
RetraceResult fit_value_retrace(const std::vector<OpeTrajectory>& trajs, const LogProbs& log_target,
                                const RetraceConfig& config, ValueRegressor& regressor);

/// Mean V̂(s_0) over trajectories.
double initial_state_value(const ValueRegressor& v, const std::vector<OpeTrajectory>& trajs);

/// Weighted doubly robust with the action-independent control variate Q̂(s_t, a_t) = V̂(s_t):
///   Σ_t γ^t Σ_i [ ŵ_{i,t} r_{i,t} - (ŵ_{i,t} - ŵ_{i,t-1}) V̂(s_{i,t}) ],  ŵ_{i,-1} = 1/n,
/// with ŵ as in stepwise_wis and V̂ = 0 after termination.
double wdr(const std::vector<OpeTrajectory>& trajs, const LogProbs& log_target, const ValueRegressor& v,
           double gamma);

struct Interval {
    double estimate = 0.0;
    double low = 0.0;
    double high = 0.0;
};

/// Percentile bootstrap over trajectories. `estimator` receives resampled indices. The
/// interval is widened when needed so that it contains the point estimate.
Interval bootstrap_interval(std::size_t n, const std::function<double(const std::vector<std::size_t>&)>& estimator,
                            std::size_t resamples, double level, std::uint64_t seed);

struct OpeRow {
    std::string variant;
    std::string estimator;  // wis, retrace, wdr
    Interval value;
};

/// Trajectory importance weights of one variant after clipping.
struct WeightDiagnostics {
    std::string variant;
    std::size_t trajectories = 0;
    std::size_t clipped_high = 0;
    std::size_t clipped_low = 0;
    double median_log_weight = 0.0;
    double ess = 0.0;  // (Σw)² / Σw² of the clipped weights
};

WeightDiagnostics weight_diagnostics(const std::vector<OpeTrajectory>& trajs, const LogProbs& log_target,
                                     const std::string& variant);

struct OpeReport {
    std::vector<OpeRow> rows;
    std::vector<WeightDiagnostics> weights;
    std::vector<std::string> warnings;

    /// Wide table: variant,wis,wis_low,wis_high,retrace,...
    void write_table(std::ostream& out) const;
    /// Long format: estimator,variant,estimate,low,high
    void write_plot_data(std::ostream& out) const;
    /// variant,trajectories,clipped_high,clipped_low,median_log_weight,ess
    void write_weights(std::ostream& out) const;
};

struct OpeVariant {
    std::string name;
    LogProbs log_target;
};

struct OpeConfig {
    RetraceConfig retrace;
    MlpRegressorConfig regressor;
    std::size_t bootstrap_resamples = 1000;
    double confidence = 0.95;
};

/// WIS, Retrace initial-state value and WDR (sharing one fitted V̂ per variant) with
/// bootstrap intervals, for every variant.
OpeReport evaluate_all(const std::vector<OpeTrajectory>& test, const std::vector<OpeVariant>& variants,
                       const OpeConfig& config, std::uint64_t seed);

}  // namespace dosing
