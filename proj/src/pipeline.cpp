#include "dosing/pipeline.hpp"

#include <fstream>
#include <sstream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "dosing/config.hpp"
#include "dosing/kernels.hpp"
#include "dosing/learned_policy.hpp"
#include "dosing/log.hpp"
#include "dosing/nn/checkpoint.hpp"
#include "dosing/train_util.hpp"

namespace dosing {

std::uint64_t stage_seed(const RunConfig& config, SeedStage stage) {
    return derive_seed(config.seed, static_cast<std::uint64_t>(stage));
}

Cohort simulate_stage(const RunConfig& config) {
    Simulator sim(config.sim);
    ScriptedClinician clinician(config.sim);
    return simulate_cohort(sim, clinician, config.n_admissions, stage_seed(config, SeedStage::Simulate));
}

CohortSplit split_stage(const Cohort& cohort, const RunConfig& config) {
    std::size_t n_test = std::min(config.n_test, cohort.size() / 2);
    if (n_test < config.n_test)
        log_warn("split: only " + std::to_string(cohort.size()) + " admissions, holding out " +
                 std::to_string(n_test));
    Rng rng = stream_rng(stage_seed(config, SeedStage::Split), 0);
    auto [train, test] = split_cohort(cohort, n_test, rng);
    return {std::move(train), std::move(test)};
}

std::vector<PreparedAdmission> prepare_all(const Preprocessor& pre, const Cohort& cohort) {
    std::vector<PreparedAdmission> out;
    out.reserve(cohort.size());
    for (const auto& a : cohort.admissions) out.push_back(pre.prepare(a));
    return out;
}

StateModels state_stage(const std::vector<PreparedAdmission>& train, const Preprocessor& pre,
                        const RunConfig& config) {
    const std::uint64_t seed = stage_seed(config, SeedStage::State);
    if (config.state.epochs == 0) {
        log_info("train-state: epochs = 0, encoder and CVAE left at initialization");
        StateModels m = init_state_models(pre.n_continuous(), pre.n_binary(), config.state, seed);
        m.report.skipped = true;
        return m;
    }
    return train_state_representation(train, pre.n_continuous(), pre.n_binary(), config.state, seed);
}

BehaviorModel behavior_stage(const std::vector<PreparedAdmission>& train, const HistoryEncoder& encoder,
                             const RunConfig& config) {
    return train_behavior_cvae(belief_action_pairs(encoder, train), encoder.width(), config.behavior,
                               stage_seed(config, SeedStage::Behavior));
}

std::vector<Trace> trace_stage(const std::vector<PreparedAdmission>& train, const HistoryEncoder& encoder,
                               const BehaviorCvae& behavior, const RunConfig& config) {
    std::vector<std::vector<Belief>> beliefs(train.size());
    kernels::for_each_index(train.size(), [&](std::size_t i) { beliefs[i] = encoder.encode(train[i]); });
    const auto log_pb = behavior_log_densities(behavior, beliefs, train, config.behavior.density_samples,
                                               stage_seed(config, SeedStage::Density));
    return make_traces(train, beliefs, log_pb);
}

PolicyTrainResult policy_stage(const std::vector<Trace>& traces, const StateModels& state, const RunConfig& config,
                               const PolicyCheckpointFn& on_checkpoint) {
    return train_policy(traces, state.encoder, state.cvae, config.policy, stage_seed(config, SeedStage::Policy),
                        on_checkpoint);
}

nn::ParamSet state_checkpoint(const StateModels& state) {
    nn::ParamSet p = state.encoder.params;
    p.merge(state.cvae.to_checkpoint());
    return p;
}

StateModels state_from_checkpoint(const nn::ParamSet& stored) {
    StateModels m;
    m.encoder.params = stored.subset("enc.");
    if (m.encoder.params.empty()) throw DataError("state checkpoint has no encoder (enc.*) entries");
    m.cvae = ObsCvae::from_checkpoint(stored.subset("cvae."));
    return m;
}

std::string state_report_json(const StateReprReport& r) {
    nlohmann::ordered_json j;
    j["train_triples"] = r.train_triples;
    j["holdout_triples"] = r.holdout_triples;
    j["initial_holdout_loss"] = r.initial_holdout_loss;
    j["final_holdout_loss"] = r.final_holdout_loss;
    j["epoch_train_loss"] = r.epoch_train_loss;
    j["skipped"] = r.skipped;
    return j.dump(2) + "\n";
}

std::string behavior_report_json(const BehaviorReport& r) {
    nlohmann::ordered_json j;
    j["train_pairs"] = r.train_pairs;
    j["holdout_pairs"] = r.holdout_pairs;
    j["initial_holdout_loss"] = r.initial_holdout_loss;
    j["final_holdout_loss"] = r.final_holdout_loss;
    j["epoch_train_loss"] = r.epoch_train_loss;
    return j.dump(2) + "\n";
}

void write_policy_log(std::ostream& out, const std::vector<PolicyLogRow>& log) {
    out << "iteration,policy_loss,value_loss,bc_loss,ess,mean_abs_advantage,grad_norm\n";
    for (const auto& r : log)
        out << r.iteration << ',' << format_double(r.policy_loss) << ',' << format_double(r.value_loss) << ','
            << format_double(r.bc_loss) << ',' << format_double(r.ess) << ',' << format_double(r.mean_abs_advantage)
            << ',' << format_double(r.grad_norm) << '\n';
}

nn::ParamSet policy_checkpoint(const Preprocessor& pre, const PolicyBundle& bundle) {
    nn::ParamSet p = pre.to_params();
    p.merge(bundle.encoder.params);
    p.merge(bundle.net.to_checkpoint());
    return p;
}

DeployedPolicy policy_from_checkpoint(const nn::ParamSet& stored, const std::string& name) {
    if (stored.subset("pre.").empty() || stored.subset("enc.").empty() || stored.subset("pi.").empty())
        throw DataError("policy checkpoint must hold pre.*, enc.* and pi.* entries");
    DeployedPolicy d{Preprocessor::from_params(stored.subset("pre.")), {name, {}, {}}};
    d.bundle.encoder.params = stored.subset("enc.");
    d.bundle.net = PolicyValueNet::from_checkpoint(stored.subset("pi."));
    if (d.bundle.net.belief_width() != d.bundle.encoder.width())
        throw DataError("policy checkpoint: encoder width does not match the policy input");
    return d;
}

DoseAction recommended_dose(const DeployedPolicy& policy, const Admission& admission, std::size_t t) {
    if (t >= admission.length())
        throw DataError("recommended_dose: t=" + std::to_string(t) + " outside admission " + admission.id);
    const PreparedAdmission prep = policy.pre.prepare(admission);
    const auto beliefs = policy.bundle.encoder.encode(prep, t);
    const auto out = policy.bundle.net.forward(beliefs.back());
    return policy.pre.raw_action(clip_action(out.mean));
}

std::vector<TrueValueRow> true_values(const Preprocessor& pre, const std::vector<PolicyBundle>& bundles,
                                      const RunConfig& config) {
    Simulator sim(config.sim);
    const std::uint64_t seed = stage_seed(config, SeedStage::Rollout);
    std::vector<TrueValueRow> rows;
    rows.push_back({"behavior", true_policy_value(sim, ScriptedClinician(config.sim), config.rollouts, seed)});
    const RolloutAction mode = parse_rollout_action(config.rollout_action);
    for (const auto& b : bundles) {
        LearnedPolicy policy(pre, b.encoder, b.net, mode);
        rows.push_back({b.name, true_policy_value(sim, policy, config.rollouts, seed)});
    }
    return rows;
}

void write_true_values(std::ostream& out, const std::vector<TrueValueRow>& rows) {
    out << "policy,mean,standard_error,rollouts\n";
    for (const auto& r : rows)
        out << r.policy << ',' << format_double(r.value.mean) << ',' << format_double(r.value.standard_error) << ','
            << r.value.n << '\n';
}

LogProbs policy_log_probs(const PolicyBundle& bundle, const std::vector<PreparedAdmission>& test) {
    LogProbs out(test.size());
    kernels::for_each_index(test.size(), [&](std::size_t i) {
        const auto beliefs = bundle.encoder.encode(test[i]);
        out[i].resize(test[i].length());
        for (std::size_t t = 0; t < test[i].length(); ++t)
            out[i][t] = policy_log_prob(bundle.net.forward(beliefs[t]), test[i].actions[t]);
    });
    return out;
}

OpeReport ope_stage(const std::vector<PreparedAdmission>& test, const HistoryEncoder& reference,
                    const BehaviorCvae& behavior, const std::vector<PolicyBundle>& bundles,
                    const RunConfig& config) {
    std::vector<std::vector<Belief>> beliefs(test.size());
    kernels::for_each_index(test.size(), [&](std::size_t i) { beliefs[i] = reference.encode(test[i]); });
    const auto log_pb = behavior_log_densities(behavior, beliefs, test, config.behavior.density_samples,
                                               derive_seed(stage_seed(config, SeedStage::Ope), 1));
    std::vector<OpeTrajectory> trajs(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        trajs[i].features = std::move(beliefs[i]);
        trajs[i].rewards = test[i].rewards;
        trajs[i].log_behavior = log_pb[i];
    }
    std::vector<OpeVariant> variants;
    for (const auto& b : bundles) variants.push_back({b.name, policy_log_probs(b, test)});
    OpeConfig oc = config.ope;
    oc.retrace.gamma = config.policy.gamma;
    return evaluate_all(trajs, variants, oc, derive_seed(stage_seed(config, SeedStage::Ope), 2));
}

const PolicyValue& ExperimentResult::value_of(const std::string& name) const {
    for (const auto& r : true_values)
        if (r.policy == name) return r.value;
    throw std::out_of_range("no true value for " + name);
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

}  // namespace

ExperimentResult run_experiment(const RunConfig& config, const std::filesystem::path& out) {
    const bool save = !out.empty();
    if (save) {
        std::filesystem::create_directories(out);
        config.to_kv().save(out / "config.resolved");
    }
    auto artifact = [&](const std::string& name, const std::string& text) {
        if (save) write_text(out / name, text);
    };
    auto checkpoint = [&](const std::string& name, const nn::ParamSet& p) {
        if (save) nn::save_checkpoint(out / name, p);
    };

    const Cohort cohort = simulate_stage(config);
    const CohortSplit split = split_stage(cohort, config);
    const Preprocessor pre = Preprocessor::fit(split.train);
    checkpoint("preprocessor.ckpt", pre.to_params());
    const auto train = prepare_all(pre, split.train);
    const auto test = prepare_all(pre, split.test);
    log_info("experiment: " + std::to_string(train.size()) + " train / " + std::to_string(test.size()) +
             " test admissions");

    ExperimentResult result;

    // Full model.
    const StateModels full_state = state_stage(train, pre, config);
    checkpoint("state.full.ckpt", state_checkpoint(full_state));
    artifact("state.full.json", state_report_json(full_state.report));
    const BehaviorModel full_behavior = behavior_stage(train, full_state.encoder, config);
    checkpoint("behavior.full.ckpt", full_behavior.cvae.to_checkpoint());
    artifact("behavior.full.json", behavior_report_json(full_behavior.report));
    const auto full_traces = trace_stage(train, full_state.encoder, full_behavior.cvae, config);

    auto train_variant = [&](const std::string& name, const std::vector<Trace>& traces, const StateModels& state,
                             const RunConfig& cfg) {
        log_info("experiment: training policy '" + name + "'");
        auto res = policy_stage(traces, state, cfg);
        PolicyBundle bundle{name, state.encoder, std::move(res.net)};
        checkpoint("policy." + name + ".ckpt", policy_checkpoint(pre, bundle));
        std::ostringstream log;
        write_policy_log(log, res.log);
        artifact("policy." + name + ".csv", log.str());
        result.bundles.push_back(std::move(bundle));
    };
    train_variant(kVariantFull, full_traces, full_state, config);

    // No CVAE pretraining: encoder and CVAE stay at initialization, everything downstream
    // (behavior model, densities, policy) is rebuilt on the untrained beliefs.
    {
        RunConfig cfg = config;
        cfg.state.epochs = 0;
        const StateModels state = state_stage(train, pre, cfg);
        checkpoint("state.no-cvae-pretrain.ckpt", state_checkpoint(state));
        const BehaviorModel behavior = behavior_stage(train, state.encoder, cfg);
        checkpoint("behavior.no-cvae-pretrain.ckpt", behavior.cvae.to_checkpoint());
        artifact("behavior.no-cvae-pretrain.json", behavior_report_json(behavior.report));
        train_variant(kVariantNoPretrain, trace_stage(train, state.encoder, behavior.cvae, cfg), state, cfg);
    }

    // No tree search: same data as the full model; E = 0 makes every tree target the
    // critic's own estimate.
    {
        RunConfig cfg = config;
        cfg.policy.budget.expansions = 0;
        train_variant(kVariantNoSearch, full_traces, full_state, cfg);
    }

    result.true_values = true_values(pre, result.bundles, config);
    std::ostringstream tv;
    write_true_values(tv, result.true_values);
    artifact("true_values.csv", tv.str());

    result.ope = ope_stage(test, full_state.encoder, full_behavior.cvae, result.bundles, config);
    for (const auto& w : result.ope.warnings) log_warn("ope: " + w);
    std::ostringstream table, plot, weights;
    result.ope.write_table(table);
    result.ope.write_plot_data(plot);
    result.ope.write_weights(weights);
    artifact("ope_table.csv", table.str());
    artifact("ope_plot.csv", plot.str());
    artifact("ope_weights.csv", weights.str());
    result.clamped_actions = clamped_action_count();
    return result;
}

}  // namespace dosing
