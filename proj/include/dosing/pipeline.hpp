#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dosing/behavior.hpp"
#include "dosing/ope.hpp"
#include "dosing/policy_opt.hpp"
#include "dosing/preprocess.hpp"
#include "dosing/run_config.hpp"
#include "dosing/sim.hpp"
#include "dosing/state_repr.hpp"

namespace dosing {

// Seed streams per stage. Every stage draws from derive_seed(run.seed, stage).
enum class SeedStage : std::uint64_t {
    Simulate = 1,
    Split = 2,
    State = 3,
    Behavior = 4,
    Density = 5,
    Policy = 6,
    Ope = 7,
    Rollout = 8,
    Validation = 9,
};

std::uint64_t stage_seed(const RunConfig& config, SeedStage stage);

/// Cohort of run.n_admissions from the scripted clinician.
Cohort simulate_stage(const RunConfig& config);

struct CohortSplit {
    Cohort train;
    Cohort test;
};
/// run.n_test admissions held out (fewer when the cohort is small: at most half).
CohortSplit split_stage(const Cohort& cohort, const RunConfig& config);

std::vector<PreparedAdmission> prepare_all(const Preprocessor& pre, const Cohort& cohort);

/// Encoder + observation CVAE. state.epochs = 0 leaves both at initialization.
StateModels state_stage(const std::vector<PreparedAdmission>& train, const Preprocessor& pre,
                        const RunConfig& config);

BehaviorModel behavior_stage(const std::vector<PreparedAdmission>& train, const HistoryEncoder& encoder,
                             const RunConfig& config);

std::vector<Trace> trace_stage(const std::vector<PreparedAdmission>& train, const HistoryEncoder& encoder,
                               const BehaviorCvae& behavior, const RunConfig& config);

PolicyTrainResult policy_stage(const std::vector<Trace>& traces, const StateModels& state, const RunConfig& config,
                               const PolicyCheckpointFn& on_checkpoint = {});

// Artifacts.
nn::ParamSet state_checkpoint(const StateModels& state);
StateModels state_from_checkpoint(const nn::ParamSet& stored);

std::string state_report_json(const StateReprReport& report);
std::string behavior_report_json(const BehaviorReport& report);
void write_policy_log(std::ostream& out, const std::vector<PolicyLogRow>& log);

/// A trained policy together with the encoder that feeds it.
struct PolicyBundle {
    std::string name;
    HistoryEncoder encoder;
    PolicyValueNet net;
};

/// Self-contained deployable policy: preprocessor (pre.*), encoder (enc.*) and net (pi.*).
nn::ParamSet policy_checkpoint(const Preprocessor& pre, const PolicyBundle& bundle);

struct DeployedPolicy {
    Preprocessor pre;
    PolicyBundle bundle;
};
DeployedPolicy policy_from_checkpoint(const nn::ParamSet& stored, const std::string& name);

/// Raw dose of the policy mean at step t, from o_0..o_t and a_0..a_{t-1} of `admission`.
DoseAction recommended_dose(const DeployedPolicy& policy, const Admission& admission, std::size_t t);

struct TrueValueRow {
    std::string policy;
    PolicyValue value;
};

/// Monte-Carlo value of the scripted clinician ("behavior") and of each bundle, all with
/// common rollout seeds.
std::vector<TrueValueRow> true_values(const Preprocessor& pre, const std::vector<PolicyBundle>& bundles,
                                      const RunConfig& config);
void write_true_values(std::ostream& out, const std::vector<TrueValueRow>& rows);

/// log π(a_t | h_t) of a bundle on every logged test step.
LogProbs policy_log_probs(const PolicyBundle& bundle, const std::vector<PreparedAdmission>& test);

/// OPE of every bundle on the test set. V̂ features and π_b come from the reference
/// encoder and behavior model.
OpeReport ope_stage(const std::vector<PreparedAdmission>& test, const HistoryEncoder& reference,
                    const BehaviorCvae& behavior, const std::vector<PolicyBundle>& bundles,
                    const RunConfig& config);

inline const char* kVariantFull = "full";
inline const char* kVariantNoPretrain = "no-cvae-pretrain";
inline const char* kVariantNoSearch = "no-tree-search";

struct ExperimentResult {
    std::vector<TrueValueRow> true_values;  // behavior, full, no-cvae-pretrain, no-tree-search
    OpeReport ope;
    std::vector<PolicyBundle> bundles;
    std::size_t clamped_actions = 0;

    const PolicyValue& value_of(const std::string& name) const;
};

/// Simulate → split → preprocess → the three variants → true values and OPE. When `out` is
/// non-empty every checkpoint and report is written there.
ExperimentResult run_experiment(const RunConfig& config, const std::filesystem::path& out = {});

}  // namespace dosing
