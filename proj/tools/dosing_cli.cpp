// dosing: stage-by-stage command line. Every stage reads its inputs from and writes its
// outputs to the run directory given by --out.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "dosing/learned_policy.hpp"
#include "dosing/log.hpp"
#include "dosing/nn/checkpoint.hpp"
#include "dosing/pipeline.hpp"
#include "dosing/shadow_service.hpp"
#include "dosing/shadow_study.hpp"

namespace fs = std::filesystem;
using namespace dosing;

namespace {

struct Common {
    std::string config_file;
    std::optional<std::uint64_t> seed;
    std::string out = "run";
    std::vector<std::string> sets;
    std::string log_level = "info";
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_file, "key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "overrides run.seed");
    cmd->add_option("--out", c.out, "run directory")->capture_default_str();
    cmd->add_option("--set", c.sets, "config override key=value (repeatable)");
    cmd->add_option("--log-level", c.log_level, "quiet, warn, info or debug")->capture_default_str();
}

// File < --set < dedicated flags (applied by the caller on the returned kv).
KeyValueConfig merged_kv(const Common& c) {
    KeyValueConfig kv;
    if (!c.config_file.empty()) kv = KeyValueConfig::from_file(c.config_file);
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        auto trim = [](std::string x) {
            x.erase(0, x.find_first_not_of(" \t"));
            x.erase(x.find_last_not_of(" \t") + 1);
            return x;
        };
        kv.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    if (c.seed) kv.set("run.seed", std::to_string(*c.seed));
    return kv;
}

LogLevel parse_level(const std::string& s) {
    if (s == "quiet") return LogLevel::Quiet;
    if (s == "warn") return LogLevel::Warn;
    if (s == "info") return LogLevel::Info;
    if (s == "debug") return LogLevel::Debug;
    throw ConfigError("unknown log level '" + s + "'");
}

RunConfig resolve(const Common& c, const KeyValueConfig& kv, const std::string& command) {
    set_log_level(parse_level(c.log_level));
    RunConfig cfg = RunConfig::from_kv(kv);
    fs::create_directories(c.out);
    cfg.to_kv().save(fs::path(c.out) / (command + ".config"));
    return cfg;
}

fs::path need(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw DataError("missing " + what + " " + p.string() + " (run the earlier stage first)");
    return p;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

Preprocessor load_preprocessor(const fs::path& dir) {
    return Preprocessor::from_params(nn::load_checkpoint(need(dir / "preprocessor.ckpt", "preprocessor")));
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

httplib::Server* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Offline RL dosing engine: simulate, ingest, train, evaluate, score and serve shadow studies"};
    app.require_subcommand(1);
    Common c;

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "simulate a cohort with the scripted clinician");
    std::optional<std::size_t> sim_n;
    std::string sim_format = "jsonl";
    add_common(sim_cmd, c);
    sim_cmd->add_option("--n", sim_n, "admissions (overrides run.n_admissions)");
    sim_cmd->add_option("--format", sim_format, "jsonl or csv")->capture_default_str();

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "validate a cohort, split train/test, fit preprocessing");
    std::string ingest_input, ingest_format;
    std::size_t study_patients = 10, points_per_patient = 3, min_length = 48;
    add_common(ingest_cmd, c);
    ingest_cmd->add_option("--input", ingest_input, "cohort file (default <out>/cohort.jsonl)");
    ingest_cmd->add_option("--format", ingest_format, "jsonl or csv (default: by extension)");
    ingest_cmd->add_option("--study-patients", study_patients, "validation patients for the shadow study")->capture_default_str();
    ingest_cmd->add_option("--points-per-patient", points_per_patient)->capture_default_str();
    ingest_cmd->add_option("--min-length", min_length, "minimum stay in hours for study patients")->capture_default_str();

    // train-state
    auto* state_cmd = app.add_subcommand("train-state", "train the history encoder and observation CVAE");
    std::string state_tag = "full";
    bool no_pretrain = false;
    add_common(state_cmd, c);
    state_cmd->add_option("--tag", state_tag, "artifact tag")->capture_default_str();
    state_cmd->add_flag("--no-pretrain", no_pretrain, "keep the models at initialization (state.epochs = 0)");

    // train-behavior
    auto* beh_cmd = app.add_subcommand("train-behavior", "train the behavior-policy CVAE on frozen beliefs");
    std::string beh_tag = "full", beh_state;
    add_common(beh_cmd, c);
    beh_cmd->add_option("--tag", beh_tag)->capture_default_str();
    beh_cmd->add_option("--state", beh_state, "state tag (default: --tag)");

    // train-policy
    auto* pol_cmd = app.add_subcommand("train-policy", "actor-critic with tree-search value targets");
    std::string pol_tag = "full", pol_state, pol_behavior;
    bool no_search = false;
    add_common(pol_cmd, c);
    pol_cmd->add_option("--tag", pol_tag)->capture_default_str();
    pol_cmd->add_option("--state", pol_state, "state tag (default: --tag)");
    pol_cmd->add_option("--behavior", pol_behavior, "behavior tag (default: --state)");
    pol_cmd->add_flag("--no-search", no_search, "V-trace targets only (search.expansions = 0)");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "off-policy evaluation and simulator ground truth");
    std::string eval_policies = "full", eval_reference = "full";
    bool no_true_value = false;
    add_common(eval_cmd, c);
    eval_cmd->add_option("--policies", eval_policies, "comma-separated policy tags")->capture_default_str();
    eval_cmd->add_option("--reference", eval_reference, "tag whose encoder and behavior model define V̂ features and π_b")
        ->capture_default_str();
    eval_cmd->add_flag("--no-true-value", no_true_value, "skip Monte-Carlo rollouts in the simulator");

    // score
    auto* score_cmd = app.add_subcommand("score", "P/C/zero-count table from a shadow-study log");
    std::string sc_log, sc_study, sc_cohort, sc_policy, sc_baseline;
    add_common(score_cmd, c);
    score_cmd->add_option("--log", sc_log, "session log (JSONL)")->required()->check(CLI::ExistingFile);
    score_cmd->add_option("--study", sc_study, "study file")->required()->check(CLI::ExistingFile);
    score_cmd->add_option("--cohort", sc_cohort, "cohort holding the study patients")->required()->check(CLI::ExistingFile);
    score_cmd->add_option("--policy-checkpoint", sc_policy)->required()->check(CLI::ExistingFile);
    score_cmd->add_option("--baseline-actions", sc_baseline)->required()->check(CLI::ExistingFile);

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "shadow-mode study HTTP service");
    std::string sv_host = "127.0.0.1", sv_cohort, sv_policy, sv_baseline, sv_study, sv_log;
    int sv_port = 8080;
    add_common(serve_cmd, c);
    serve_cmd->add_option("--host", sv_host)->capture_default_str();
    serve_cmd->add_option("--port", sv_port)->capture_default_str();
    serve_cmd->add_option("--cohort", sv_cohort)->required()->check(CLI::ExistingFile);
    serve_cmd->add_option("--study", sv_study)->required()->check(CLI::ExistingFile);
    serve_cmd->add_option("--policy-checkpoint", sv_policy)->check(CLI::ExistingFile);
    serve_cmd->add_option("--baseline-actions", sv_baseline)->check(CLI::ExistingFile);
    serve_cmd->add_option("--log", sv_log, "append-only session log (default <out>/sessions.jsonl)");

    CLI11_PARSE(app, argc, argv);

    try {
        KeyValueConfig kv = merged_kv(c);
        const fs::path out = c.out;

        if (*sim_cmd) {
            if (sim_n) kv.set("run.n_admissions", std::to_string(*sim_n));
            const RunConfig cfg = resolve(c, kv, "simulate");
            const auto format = parse_cohort_format(sim_format);
            const Cohort cohort = simulate_stage(cfg);
            const fs::path path = out / (format == CohortFormat::Csv ? "cohort.csv" : "cohort.jsonl");
            export_cohort(path, cohort, format);
            log_info("simulate: " + std::to_string(cohort.size()) + " admissions -> " + path.string());
        } else if (*ingest_cmd) {
            const RunConfig cfg = resolve(c, kv, "ingest");
            const fs::path input = ingest_input.empty() ? out / "cohort.jsonl" : fs::path(ingest_input);
            const auto format = ingest_format.empty() ? guess_cohort_format(input) : parse_cohort_format(ingest_format);
            const Cohort cohort = ingest_cohort(need(input, "cohort"), format);
            const CohortSplit split = split_stage(cohort, cfg);
            if (split.train.empty()) throw DataError("ingest: no training admissions");
            const Preprocessor pre = Preprocessor::fit(split.train);
            export_cohort(out / "train.jsonl", split.train, CohortFormat::Jsonl);
            export_cohort(out / "test.jsonl", split.test, CohortFormat::Jsonl);
            nn::save_checkpoint(out / "preprocessor.ckpt", pre.to_params());
            nlohmann::ordered_json summary{{"admissions", cohort.size()},
                                           {"train", split.train.size()},
                                           {"test", split.test.size()},
                                           {"n_continuous", cohort.n_continuous},
                                           {"n_binary", cohort.n_binary}};
            try {
                const Study study = make_study(split.test, study_patients, points_per_patient,
                                               stage_seed(cfg, SeedStage::Validation), min_length);
                study.save(out / "study.json");
                summary["study_points"] = study.points.size();
            } catch (const DataError& e) {
                log_warn(std::string("ingest: no shadow study written: ") + e.what());
            }
            write_file(out / "ingest.json", summary.dump(2) + "\n");
            log_info("ingest: " + std::to_string(split.train.size()) + " train / " + std::to_string(split.test.size()) +
                     " test admissions");
        } else if (*state_cmd) {
            if (no_pretrain) kv.set("state.epochs", "0");
            const RunConfig cfg = resolve(c, kv, "train-state");
            const Preprocessor pre = load_preprocessor(out);
            const auto train = prepare_all(pre, ingest_cohort(need(out / "train.jsonl", "training cohort"), CohortFormat::Jsonl));
            const StateModels m = state_stage(train, pre, cfg);
            nn::save_checkpoint(out / ("state." + state_tag + ".ckpt"), state_checkpoint(m));
            write_file(out / ("state." + state_tag + ".json"), state_report_json(m.report));
        } else if (*beh_cmd) {
            const RunConfig cfg = resolve(c, kv, "train-behavior");
            const std::string stag = beh_state.empty() ? beh_tag : beh_state;
            const Preprocessor pre = load_preprocessor(out);
            const auto train = prepare_all(pre, ingest_cohort(need(out / "train.jsonl", "training cohort"), CohortFormat::Jsonl));
            const StateModels state = state_from_checkpoint(nn::load_checkpoint(need(out / ("state." + stag + ".ckpt"), "state checkpoint")));
            const BehaviorModel m = behavior_stage(train, state.encoder, cfg);
            nn::save_checkpoint(out / ("behavior." + beh_tag + ".ckpt"), m.cvae.to_checkpoint());
            write_file(out / ("behavior." + beh_tag + ".json"), behavior_report_json(m.report));
        } else if (*pol_cmd) {
            if (no_search) kv.set("search.expansions", "0");
            const RunConfig cfg = resolve(c, kv, "train-policy");
            const std::string stag = pol_state.empty() ? pol_tag : pol_state;
            const std::string btag = pol_behavior.empty() ? stag : pol_behavior;
            const Preprocessor pre = load_preprocessor(out);
            const auto train = prepare_all(pre, ingest_cohort(need(out / "train.jsonl", "training cohort"), CohortFormat::Jsonl));
            const StateModels state = state_from_checkpoint(nn::load_checkpoint(need(out / ("state." + stag + ".ckpt"), "state checkpoint")));
            const BehaviorCvae behavior = BehaviorCvae::from_checkpoint(
                nn::load_checkpoint(need(out / ("behavior." + btag + ".ckpt"), "behavior checkpoint")));
            const auto traces = trace_stage(train, state.encoder, behavior, cfg);
            auto res = policy_stage(traces, state, cfg, [&](std::size_t it, const PolicyValueNet& net) {
                nn::save_checkpoint(out / ("policy." + pol_tag + ".iter" + std::to_string(it) + ".ckpt"),
                                    policy_checkpoint(pre, {pol_tag, state.encoder, net}));
            });
            nn::save_checkpoint(out / ("policy." + pol_tag + ".ckpt"), policy_checkpoint(pre, {pol_tag, state.encoder, res.net}));
            std::ofstream log(out / ("policy." + pol_tag + ".csv"));
            write_policy_log(log, res.log);
        } else if (*eval_cmd) {
            const RunConfig cfg = resolve(c, kv, "evaluate");
            const Preprocessor pre = load_preprocessor(out);
            const auto test = prepare_all(pre, ingest_cohort(need(out / "test.jsonl", "test cohort"), CohortFormat::Jsonl));
            std::vector<PolicyBundle> bundles;
            for (const auto& tag : split_list(eval_policies))
                bundles.push_back(policy_from_checkpoint(
                                      nn::load_checkpoint(need(out / ("policy." + tag + ".ckpt"), "policy checkpoint")), tag)
                                      .bundle);
            if (bundles.empty()) throw ConfigError("evaluate: --policies is empty");
            const StateModels ref = state_from_checkpoint(
                nn::load_checkpoint(need(out / ("state." + eval_reference + ".ckpt"), "reference state checkpoint")));
            const BehaviorCvae behavior = BehaviorCvae::from_checkpoint(
                nn::load_checkpoint(need(out / ("behavior." + eval_reference + ".ckpt"), "reference behavior checkpoint")));
            if (!test.empty()) {
                const OpeReport report = ope_stage(test, ref.encoder, behavior, bundles, cfg);
                for (const auto& w : report.warnings) log_warn("ope: " + w);
                std::ofstream table(out / "ope_table.csv"), plot(out / "ope_plot.csv"), weights(out / "ope_weights.csv");
                report.write_table(table);
                report.write_plot_data(plot);
                report.write_weights(weights);
                report.write_table(std::cout);
            } else {
                log_warn("evaluate: empty test cohort, OPE skipped");
            }
            if (!no_true_value) {
                const auto rows = true_values(pre, bundles, cfg);
                std::ofstream tv(out / "true_values.csv");
                write_true_values(tv, rows);
                write_true_values(std::cout, rows);
            }
        } else if (*score_cmd) {
            resolve(c, kv, "score");
            const Study study = Study::load(sc_study);
            const Cohort cohort = ingest_cohort(sc_cohort, guess_cohort_format(sc_cohort));
            const DeployedPolicy policy = policy_from_checkpoint(nn::load_checkpoint(sc_policy), "pomdp");
            const BaselineActions baseline = read_baseline_actions(sc_baseline);
            std::string detail;
            const std::string csv = score_csv(study, cohort, ShadowLog::read(sc_log), &baseline, &policy, &detail);
            write_file(out / "scores.csv", csv);
            write_file(out / "scores_detail.csv", detail);
            std::cout << csv;
        } else if (*serve_cmd) {
            resolve(c, kv, "serve");
            std::optional<DeployedPolicy> policy;
            if (!sv_policy.empty()) policy = policy_from_checkpoint(nn::load_checkpoint(sv_policy), "pomdp");
            std::optional<BaselineActions> baseline;
            if (!sv_baseline.empty()) baseline = read_baseline_actions(sv_baseline);
            const fs::path log_path = sv_log.empty() ? out / "sessions.jsonl" : fs::path(sv_log);
            ShadowService service(ingest_cohort(sv_cohort, guess_cohort_format(sv_cohort)), Study::load(sv_study),
                                  std::move(policy), std::move(baseline), log_path);
            httplib::Server server;
            service.mount(server);
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            if (!server.bind_to_port(sv_host, sv_port)) throw std::runtime_error("cannot bind " + sv_host + ":" + std::to_string(sv_port));
            std::cout << "listening on http://" << sv_host << ':' << sv_port << std::endl;
            server.listen_after_bind();
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what();
        if (e.line()) std::cerr << " (line " << e.line() << ')';
        std::cerr << '\n';
        return 3;
    } catch (const TrainingError& e) {
        std::cerr << "training error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
