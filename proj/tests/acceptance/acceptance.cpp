// Acceptance suite: one PASS/FAIL line per primary criterion. Exit status 1 when any fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dosing/behavior.hpp"
#include "dosing/log.hpp"
#include "dosing/ope.hpp"
#include "dosing/pipeline.hpp"
#include "dosing/policy_opt.hpp"
#include "dosing/run_config.hpp"
#include "dosing/shadow_metrics.hpp"
#include "dosing/tree_search.hpp"
#include "helpers.hpp"
#include "oracles.hpp"
#include "search_fixtures.hpp"

using namespace dosing;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 3) {
    std::ostringstream out;
    out << std::setprecision(precision) << v;
    return out.str();
}

void jitter(nn::ParamSet& params, std::uint64_t seed) {
    Rng rng = stream_rng(seed, 0);
    for (auto& [name, t] : params)
        for (double& x : t.data) x += 0.05 * (uniform01(rng) - 0.5);
}

// ---- gradients ----

Verdict gradients() {
    const auto start = std::chrono::steady_clock::now();
    const Cohort cohort = testing_util::small_cohort(4, 21);
    const Preprocessor pre = Preprocessor::fit(cohort);
    double worst_obs = 0.0, worst_beh = 0.0, worst_ac = 0.0;
    std::size_t n_obs = 0, n_beh = 0, n_ac = 0;

    {
        StateReprConfig sc;
        sc.obs_embed = 4;
        sc.act_embed = 3;
        sc.embed_hidden = 5;
        sc.belief_width = 4;
        sc.latent_dim = 2;
        sc.cvae_hidden = 5;
        const StateModels m = init_state_models(pre.n_continuous(), pre.n_binary(), sc, 2);
        nn::ParamSet params = m.encoder.params;
        params.merge(m.cvae.params);
        jitter(params, 3);
        n_obs = params.parameter_count();
        for (std::size_t i = 0; i < 3; ++i) {
            PreparedAdmission adm = pre.prepare(cohort.admissions[i]);
            const std::size_t n = std::min<std::size_t>(adm.length(), 5);
            adm.inputs.resize(n);
            adm.missing.resize(n);
            adm.actions.resize(n);
            adm.rewards.resize(n);
            auto loss = [&](nn::GradSet* g) {
                nn::Tape tape;
                Rng rng = stream_rng(40, i);
                auto l = admission_cvae_loss(tape, params, m.cvae, adm, 1.0, rng);
                if (g) {
                    tape.backward(l);
                    *g = tape.gradients(params);
                }
                return tape.scalar(l);
            };
            nn::GradSet g;
            loss(&g);
            worst_obs = std::max(worst_obs, testing_util::max_gradcheck_error(params, g, [&] { return loss(nullptr); }));
        }
    }
    {
        BehaviorConfig bc;
        bc.latent_dim = 3;
        bc.hidden = 16;
        Rng rng = stream_rng(5, 0);
        BehaviorCvae model = BehaviorCvae::create(6, bc, rng);
        jitter(model.params, 6);
        n_beh = model.params.parameter_count();
        std::vector<std::vector<double>> beliefs, noises;
        std::vector<EqAction> actions;
        for (int k = 0; k < 4; ++k) {
            beliefs.emplace_back();
            for (int j = 0; j < 6; ++j) beliefs.back().push_back(uniform01(rng) * 2 - 1);
            noises.push_back({standard_normal(rng), standard_normal(rng), standard_normal(rng)});
            actions.push_back({uniform01(rng), uniform01(rng)});
        }
        auto loss = [&](nn::GradSet* g) {
            nn::Tape tape;
            nn::Var total = tape.constant(std::vector<double>{0.0});
            for (std::size_t k = 0; k < beliefs.size(); ++k)
                total = tape.add(total, behavior_loss(tape, model.params, model, beliefs[k], actions[k], noises[k]));
            if (g) {
                tape.backward(total);
                *g = tape.gradients(model.params);
            }
            return tape.scalar(total);
        };
        nn::GradSet g;
        loss(&g);
        worst_beh = testing_util::max_gradcheck_error(model.params, g, [&] { return loss(nullptr); });
    }
    {
        Rng rng = stream_rng(7, 0);
        PolicyNetConfig pc;
        pc.hidden = 16;
        PolicyValueNet net = PolicyValueNet::create(6, pc, rng);
        jitter(net.params, 8);
        n_ac = net.params.parameter_count();
        Trace tr;
        std::vector<double> adv, targets, w, scale;
        for (int t = 0; t < 6; ++t) {
            tr.beliefs.emplace_back();
            for (int j = 0; j < 6; ++j) tr.beliefs.back().push_back(uniform01(rng) * 2 - 1);
            tr.actions.push_back({uniform01(rng), uniform01(rng)});
            tr.rewards.push_back(0.0);
            tr.behavior_log_density.push_back(0.0);
            adv.push_back(uniform01(rng) * 2 - 1);
            targets.push_back(uniform01(rng) * 4 - 2);
            w.push_back(0.5 + uniform01(rng));
            scale.push_back(uniform01(rng) * 3);
        }
        auto loss = [&](nn::GradSet* g) {
            nn::Tape tape;
            auto l = actor_critic_loss(tape, net.params, net, tr, adv, targets, w, 0.1, 0.5, nullptr, scale);
            if (g) {
                tape.backward(l);
                *g = tape.gradients(net.params);
            }
            return tape.scalar(l);
        };
        nn::GradSet g;
        loss(&g);
        worst_ac = testing_util::max_gradcheck_error(net.params, g, [&] { return loss(nullptr); });
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool small = n_obs <= 1000 && n_beh <= 1000 && n_ac <= 1000;
    const double worst = std::max({worst_obs, worst_beh, worst_ac});
    return {worst <= 1e-4 && secs < 60.0 && small,
            "max relative error obs-cvae " + fmt(worst_obs) + " (" + std::to_string(n_obs) + " params), behavior-cvae " +
                fmt(worst_beh) + " (" + std::to_string(n_beh) + "), actor-critic " + fmt(worst_ac) + " (" +
                std::to_string(n_ac) + "); " + fmt(secs) + " s"};
}

// ---- up-going advantage ----

Verdict advantage_oracle() {
    Rng rng = stream_rng(50, 0);
    double worst = 0.0;
    for (int trace = 0; trace < 200; ++trace) {
        const std::size_t n = 1 + static_cast<std::size_t>(uniform01(rng) * 20);
        std::vector<double> v(n), r(n), rho(n), c(n);
        for (std::size_t t = 0; t < n; ++t) {
            v[t] = uniform01(rng) * 10 - 5;
            r[t] = t + 1 == n ? (uniform01(rng) < 0.5 ? 10.0 : -10.0) : 0.0;
            const auto tr = truncated_ratio(uniform01(rng) * 4 - 2, uniform01(rng) * 4 - 2);
            rho[t] = tr.rho;
            c[t] = tr.c;
        }
        const auto got = upgoing_advantage(v, r, rho, c, 0.99);
        const auto want = oracle::upgoing(v, r, rho, c, 0.99);
        for (std::size_t t = 0; t < n; ++t) worst = std::max(worst, std::abs(got.advantage[t] - want[t]));
    }
    return {worst <= 1e-12, "200 traces, max |difference| " + fmt(worst)};
}

// ---- tree search ----

Verdict tree_oracles() {
    Rng rng = stream_rng(60, 0);
    std::size_t selection_mismatch = 0;
    double worst_backup = 0.0;
    for (int k = 0; k < 100; ++k) {
        auto [tree, o] = testing_util::random_tree(2 + static_cast<std::size_t>(uniform01(rng) * 29), rng);
        const double gamma = 0.9 + 0.1 * uniform01(rng);
        if (select_leaf(tree, gamma) != oracle::best_leaf(o, gamma)) ++selection_mismatch;
        backup(tree, gamma);
        for (std::size_t i = 0; i < tree.nodes.size(); ++i)
            worst_backup =
                std::max(worst_backup, std::abs(tree.nodes[i].backed_up - oracle::tree_value(o, static_cast<int>(i), gamma)));
    }

    const auto models = testing_util::tiny_models(61);
    SearchBudget budget;  // E = 16, M = 8, K = 5
    double worst_sum = 0.0;
    std::size_t expansions = 0;
    for (std::uint64_t root = 0; root < 10; ++root) {
        Rng r = stream_rng(62, root);
        std::vector<double> belief(6);
        for (double& x : belief) x = uniform01(r) - 0.5;
        SearchTree tree(belief, models.net.value(belief));
        while (tree.expansions < budget.expansions) {
            expand(tree, select_leaf(tree, budget.gamma), models.view(), budget, r);
            ++expansions;
            for (const auto& n : tree.nodes) {
                if (n.leaf()) continue;
                double sum = 0.0;
                for (int c : n.children) sum += tree.nodes[c].p_tilde;
                worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
            }
        }
    }
    return {selection_mismatch == 0 && worst_backup <= 1e-12 && worst_sum <= 1e-12,
            "100 trees: " + std::to_string(selection_mismatch) + " selection mismatches, max backup error " +
                fmt(worst_backup) + "; " + std::to_string(expansions) + " expansions, max |Σp̃ - 1| " + fmt(worst_sum)};
}

// ---- off-policy evaluation ----

OpeTrajectory with_ids(std::vector<double> rewards, std::vector<double> log_b, std::vector<double> ids) {
    OpeTrajectory t;
    t.rewards = std::move(rewards);
    t.log_behavior = std::move(log_b);
    for (double id : ids) t.features.push_back({id});
    return t;
}

// Two states, two actions, three decisions, π_b uniform. Every trajectory appears with a
// multiplicity proportional to its probability under π_b, so sample averages are exact
// expectations.
struct ToyMdp {
    static constexpr int kSteps = 3;
    double gamma = 0.9;
    double reward(int s, int a) const { return (s == 1 ? 1.0 : 0.0) + (a == 1 ? 0.3 : -0.1); }
    // P(s' = a | s, a) = 3/4
    double transition(int a, int next) const { return next == a ? 0.75 : 0.25; }
    double target(int s, int a) const {
        const double p1 = s == 0 ? 0.8 : 0.3;
        return a == 1 ? p1 : 1.0 - p1;
    }

    double exact_value() const {
        // backward DP over (t, s)
        std::array<double, 2> v{0.0, 0.0};
        for (int t = kSteps - 1; t >= 0; --t) {
            std::array<double, 2> nv{};
            for (int s = 0; s < 2; ++s)
                for (int a = 0; a < 2; ++a) {
                    double q = reward(s, a);
                    if (t + 1 < kSteps)
                        for (int n = 0; n < 2; ++n) q += gamma * transition(a, n) * v[n];
                    nv[s] += target(s, a) * q;
                }
            v = nv;
        }
        return 0.5 * (v[0] + v[1]);
    }

    void enumerate(std::vector<OpeTrajectory>& trajs, LogProbs& target_lp) const {
        // weights are multiples of 1/256: initial ½, action ½ per step, transitions ¼ or ¾
        std::function<void(int, int, int, std::vector<double>, std::vector<double>, std::vector<double>,
                           std::vector<double>)>
            walk = [&](int t, int s, int mult, std::vector<double> r, std::vector<double> lb, std::vector<double> lt,
                       std::vector<double> ids) {
                for (int a = 0; a < 2; ++a) {
                    auto r2 = r, lb2 = lb, lt2 = lt, ids2 = ids;
                    r2.push_back(reward(s, a));
                    lb2.push_back(std::log(0.5));
                    lt2.push_back(std::log(target(s, a)));
                    ids2.push_back(2.0 * t + s);
                    if (t + 1 == kSteps) {
                        for (int m = 0; m < mult; ++m) {
                            trajs.push_back(with_ids(r2, lb2, ids2));
                            target_lp.push_back(lt2);
                        }
                        continue;
                    }
                    for (int n = 0; n < 2; ++n) walk(t + 1, n, mult * (n == a ? 3 : 1), r2, lb2, lt2, ids2);
                }
            };
        for (int s = 0; s < 2; ++s) walk(0, s, 1, {}, {}, {}, {});
    }
};

Verdict ope_identities() {
    std::vector<std::string> notes;
    bool ok = true;

    // π = π_b
    {
        Rng rng = stream_rng(70, 0);
        std::vector<OpeTrajectory> trajs;
        LogProbs same;
        double mean = 0.0;
        double id = 0.0;
        const std::size_t n = 200;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t len = 1 + static_cast<std::size_t>(uniform01(rng) * 20);
            std::vector<double> r(len, 0.0), lb(len), ids(len);
            r.back() = uniform01(rng) < 0.5 ? 10.0 : -10.0;
            for (std::size_t t = 0; t < len; ++t) {
                lb[t] = std::log(0.05 + uniform01(rng));
                ids[t] = id++;
            }
            mean += std::pow(0.99, static_cast<double>(len - 1)) * r.back() / static_cast<double>(n);
            trajs.push_back(with_ids(r, lb, ids));
            same.push_back(lb);
        }
        TabularRegressor tab;
        fit_value_retrace(trajs, same, {0.9, 0.99, 200, 1e-13}, tab);
        MlpRegressorConfig mc;
        mc.hidden = 8;
        mc.steps_per_fit = 20;
        MlpRegressor mlp(1, mc, 3);
        fit_value_retrace(trajs, same, {0.9, 0.99, 3, 1e-6}, mlp);
        const double e_wis = std::abs(wis(trajs, same, 0.99) - mean);
        const double e_retrace = std::abs(initial_state_value(tab, trajs) - mean);
        const double e_wdr = std::max(std::abs(wdr(trajs, same, tab, 0.99) - mean), std::abs(wdr(trajs, same, mlp, 0.99) - mean));
        const double worst = std::max({e_wis, e_retrace, e_wdr});
        ok = ok && worst <= 1e-10;
        notes.push_back("pi=pi_b max error " + fmt(worst) + " (wis " + fmt(e_wis) + ", retrace " + fmt(e_retrace) +
                        ", wdr " + fmt(e_wdr) + ")");

        // V̂ ≡ 0
        LogProbs other = same;
        for (auto& row : other)
            for (double& x : row) x = std::log(0.05 + uniform01(rng));
        const TabularRegressor zero;
        const bool equal = wdr(trajs, other, zero, 0.99) == stepwise_wis(trajs, other, 0.99);
        ok = ok && equal;
        notes.push_back(std::string("wdr(V=0) ") + (equal ? "==" : "!=") + " stepwise wis");
    }

    // enumerable toy MDP
    {
        ToyMdp mdp;
        std::vector<OpeTrajectory> trajs;
        LogProbs lt;
        mdp.enumerate(trajs, lt);
        TabularRegressor v;
        fit_value_retrace(trajs, lt, {0.9, mdp.gamma, 50, 1e-12}, v);
        const double exact = mdp.exact_value();
        const double est = wdr(trajs, lt, v, mdp.gamma);
        const double err = std::abs(est - exact);
        ok = ok && err <= 1e-6 && trajs.size() == 256;
        notes.push_back("toy mdp wdr " + fmt(est, 10) + " vs exact " + fmt(exact, 10) + " over " +
                        std::to_string(trajs.size()) + " weighted trajectories");
    }
    std::string detail;
    for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
    return {ok, detail};
}

// ---- shadow scores ----

Verdict scores() {
    Rng rng = stream_rng(80, 0);
    std::vector<EvaluationPoint> points;
    for (int traj = 0; traj < 10; ++traj) {
        EvaluationPoint p;
        p.patient_id = "traj" + std::to_string(traj);
        p.time_index = traj;
        for (int c = 0; c < 3; ++c) {
            Recommendation r;
            r.clinician_id = "clin" + std::to_string(c);
            r.vasopressor = {uniform01(rng) * 0.5, 0.001 + 0.02 * uniform01(rng)};
            r.iv_fluid = {uniform01(rng) * 500, 100 + 5000 * uniform01(rng)};
            p.recommendations.push_back(r);
        }
        for (ActionSource s : kSources)
            p.actions[s] = {uniform01(rng) * 0.6, uniform01(rng) * 600};
        points.push_back(p);
    }
    const ScoreTable table = score_table(points);

    double worst = 0.0;
    for (ActionSource s : kSources) {
        for (int drug = 0; drug < 2; ++drug) {
            double p_sum = 0.0, c_sum = 0.0, zeros = 0.0;
            for (const auto& pt : points) {
                const DoseAction a = pt.actions.at(s);
                const double dose = drug == 0 ? a.iv_fluid : a.vasopressor;
                double p = 0.0, c = 0.0;
                for (const auto& r : pt.recommendations) {
                    const auto& d = drug == 0 ? r.iv_fluid : r.vasopressor;
                    const double density = oracle::normal_pdf(dose, d.mean, d.variance);
                    p += density / 3.0;
                    if (density >= 0.01) c += 1.0 / 3.0;
                }
                p_sum += p;
                c_sum += c;
                if (c == 0.0) zeros += 1.0;
            }
            const ScoreCell& cell = table.at(drug == 0 ? Drug::IvFluid : Drug::Vasopressor, s);
            worst = std::max({worst, std::abs(cell.p_score - p_sum / 10.0), std::abs(cell.c_score - c_sum / 10.0),
                              std::abs(cell.zero_count - zeros / 10.0)});
        }
    }

    // a variance whose density at the mean is exactly 0.01 in floating point
    double var = 1.0 / (2.0 * std::numbers::pi * kAcceptDensity * kAcceptDensity);
    for (int i = 0; i < 200 && gaussian_density(0.2, 0.2, var) != kAcceptDensity; ++i)
        var = std::nextafter(var, gaussian_density(0.2, 0.2, var) > kAcceptDensity ? 1e300 : 0.0);
    const std::vector<DrugRecommendation> edge{{0.2, var}};
    const bool boundary = gaussian_density(0.2, 0.2, var) == kAcceptDensity && c_score(0.2, edge) == 1.0;

    std::ostringstream csv;
    table.write(csv);
    std::istringstream in(csv.str());
    std::vector<std::vector<std::string>> rows;
    for (std::string line; std::getline(in, line);) {
        rows.emplace_back();
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) rows.back().push_back(cell);
    }
    const std::vector<std::string> header{"ACTION", "SCORE", "MIMIC", "MDP", "POMDP"};
    const std::vector<std::pair<std::string, std::string>> labels{
        {"IV Fluids", "P-Score"},    {"IV Fluids", "C-Score"},    {"IV Fluids", "Zero Count"},
        {"Vasopressors", "P-Score"}, {"Vasopressors", "C-Score"}, {"Vasopressors", "Zero Count"}};
    bool shape = rows.size() == 7 && rows[0] == header;
    for (std::size_t i = 0; shape && i < labels.size(); ++i)
        shape = rows[i + 1].size() == 5 && rows[i + 1][0] == labels[i].first && rows[i + 1][1] == labels[i].second;

    return {worst <= 1e-12 && boundary && shape,
            "3 clinicians x 10 trajectories, max |difference| " + fmt(worst) + "; boundary density 0.01 " +
                (boundary ? "accepted" : "rejected") + "; table " + (shape ? "2x3 rows by MIMIC/MDP/POMDP" : "misshapen")};
}

// ---- reward / preprocessing contracts ----

Verdict contracts() {
    SimConfig cfg;
    cfg.finalize();
    Simulator sim(cfg);
    ScriptedClinician clin(cfg);
    const Cohort cohort = simulate_cohort(sim, clin, 400, 90);
    const fs::path dir = fs::temp_directory_path() / "dosing_acceptance_contracts";
    fs::create_directories(dir);
    std::size_t bad_reward = 0, admissions = 0, out_of_range = 0, not_idempotent = 0, steps = 0;
    for (auto format : {CohortFormat::Jsonl, CohortFormat::Csv}) {
        const fs::path file = dir / (format == CohortFormat::Jsonl ? "cohort.jsonl" : "cohort.csv");
        export_cohort(file, cohort, format);
        const Cohort in = ingest_cohort(file, format);
        Rng rng = stream_rng(91, 0);
        const auto [train, test] = split_cohort(in, 100, rng);
        const Preprocessor pre = Preprocessor::fit(train);
        for (const auto& a : in.admissions) {
            ++admissions;
            for (std::size_t t = 0; t + 1 < a.length(); ++t) bad_reward += a.steps[t].reward != 0.0;
            const double last = a.steps.back().reward;
            bad_reward += !(last == 10.0 || last == -10.0);
        }
        for (const auto& a : test.admissions) {
            const auto p = pre.prepare(a);
            for (std::size_t t = 0; t < p.length(); ++t) {
                ++steps;
                for (double v : p.inputs[t]) out_of_range += !(v >= 0.0 && v <= 1.0);
                for (double v : p.actions[t]) out_of_range += !(v >= 0.0 && v <= 1.0);
            }
            std::vector<ObservationVector> obs;
            for (const auto& s : a.steps) obs.push_back(s.observation);
            const auto once = impute_sample_and_hold(obs, pre.medians());
            not_idempotent += impute_sample_and_hold(once, pre.medians()) != once;
        }
    }
    fs::remove_all(dir);
    return {bad_reward == 0 && out_of_range == 0 && not_idempotent == 0,
            std::to_string(admissions) + " ingested admissions (jsonl + csv): " + std::to_string(bad_reward) +
                " reward violations; " + std::to_string(steps) + " held-out steps: " + std::to_string(out_of_range) +
                " equalized values outside [0,1]; " + std::to_string(not_idempotent) + " non-idempotent imputations"};
}

// ---- determinism ----

RunConfig small_run() {
    std::istringstream in(R"(
run.seed = 5
run.n_admissions = 120
run.n_test = 30
run.rollouts = 50
sim.horizon = 24
state.belief_width = 8
state.obs_embed = 6
state.act_embed = 4
state.embed_hidden = 8
state.latent_dim = 3
state.cvae_hidden = 8
state.epochs = 1
behavior.latent_dim = 2
behavior.hidden = 8
behavior.epochs = 1
behavior.density_samples = 8
policy.hidden = 8
policy.iterations = 10
policy.batch_admissions = 8
policy.search_states = 6
search.expansions = 4
search.candidates = 3
search.children = 3
ope.hidden = 8
ope.steps_per_fit = 20
ope.max_iterations = 3
ope.bootstrap_resamples = 50
)");
    return RunConfig::from_kv(KeyValueConfig::parse(in));
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Verdict determinism() {
    const fs::path base = fs::temp_directory_path() / "dosing_acceptance_determinism";
    fs::remove_all(base);
    const RunConfig cfg = small_run();
    run_experiment(cfg, base / "first");
    run_experiment(cfg, base / "second");
    std::size_t files = 0, differ = 0;
    std::string first_diff;
    for (const auto& e : fs::directory_iterator(base / "first")) {
        ++files;
        const fs::path other = base / "second" / e.path().filename();
        if (!fs::exists(other) || slurp(e.path()) != slurp(other)) {
            ++differ;
            if (first_diff.empty()) first_diff = e.path().filename().string();
        }
    }
    std::size_t second_files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(base / "second")) ++second_files;
    fs::remove_all(base);
    return {differ == 0 && files == second_files && files > 0,
            std::to_string(files) + " checkpoints and reports compared, " + std::to_string(differ) + " differ" +
                (first_diff.empty() ? "" : " (first: " + first_diff + ")")};
}

// ---- end to end ----

Verdict end_to_end(const RunConfig& cfg, const fs::path& out) {
    const auto start = std::chrono::steady_clock::now();
    const ExperimentResult r = run_experiment(cfg, out);
    const auto& beh = r.value_of("behavior");
    const auto& full = r.value_of(kVariantFull);
    const auto& nopre = r.value_of(kVariantNoPretrain);
    const auto& nosearch = r.value_of(kVariantNoSearch);
    const double se = std::sqrt(full.standard_error * full.standard_error + beh.standard_error * beh.standard_error);
    const double margin = (full.mean - beh.mean) / se;
    const bool beats = margin >= 3.0;
    const bool ablations = nopre.mean < full.mean && nosearch.mean < full.mean;
    const double mins = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
    auto show = [](const PolicyValue& v) { return fmt(v.mean, 4) + " ± " + fmt(v.standard_error, 3); };
    return {beats && ablations,
            std::to_string(cfg.n_admissions) + " admissions, " + std::to_string(cfg.rollouts) + " rollouts: full " +
                show(full) + ", behavior " + show(beh) + " (" + fmt(margin) + " combined SE), no-cvae-pretrain " +
                show(nopre) + ", no-tree-search " + show(nosearch) + "; " + fmt(mins) + " min"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite"};
    std::vector<std::string> only;
    std::string out = "acceptance_run";
    std::vector<std::string> overrides;
    app.add_option("--only", only, "Run only these criteria");
    app.add_option("--out", out, "Directory for the end-to-end run artifacts");
    app.add_option("--set", overrides, "End-to-end config override key=value");
    CLI11_PARSE(app, argc, argv);
    set_log_level(LogLevel::Warn);

    KeyValueConfig kv;
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) {
            std::cerr << "--set expects key=value\n";
            return 2;
        }
        kv.set(o.substr(0, eq), o.substr(eq + 1));
    }
    const RunConfig e2e = RunConfig::from_kv(kv);

    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"gradient-correctness", gradients},
        {"upgoing-advantage-oracle", advantage_oracle},
        {"tree-search-oracles", tree_oracles},
        {"ope-identities", ope_identities},
        {"shadow-scores", scores},
        {"reward-preprocessing-contracts", contracts},
        {"determinism", determinism},
        {"end-to-end-learning", [&] { return end_to_end(e2e, out); }},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        Verdict v;
        try {
            v = run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failed += !v.pass;
        std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
