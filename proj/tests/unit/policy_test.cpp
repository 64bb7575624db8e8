#include <doctest.h>

#include <cmath>

#include "dosing/behavior.hpp"
#include "dosing/policy_opt.hpp"
#include "dosing/state_repr.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace dosing;

namespace {

StateReprConfig tiny_state() {
    StateReprConfig c;
    c.obs_embed = 4;
    c.act_embed = 3;
    c.embed_hidden = 5;
    c.belief_width = 4;
    c.latent_dim = 2;
    c.cvae_hidden = 5;
    return c;
}

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo, double hi) {
    std::vector<double> v(n);
    for (double& x : v) x = lo + (hi - lo) * uniform01(rng);
    return v;
}

}  // namespace

TEST_CASE("up-going advantage matches the brute-force recursion") {
    Rng rng = stream_rng(21, 0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + trial % 20;
        const auto v = random_vec(n, rng, -3, 3);
        const auto r = random_vec(n, rng, -1, 1);
        const auto rho = random_vec(n, rng, 0, 1);
        const auto c = random_vec(n, rng, 0, 1);
        for (bool use_rho : {true, false}) {
            const auto got = upgoing_advantage(v, r, rho, c, 0.97, use_rho);
            const auto want = oracle::upgoing(v, r, rho, c, 0.97, use_rho);
            for (std::size_t t = 0; t < n; ++t) CHECK(std::abs(got.advantage[t] - want[t]) <= 1e-12);
        }
    }
    CHECK_THROWS_AS(upgoing_advantage({}, {}, {}, {}, 0.9), std::invalid_argument);
}

TEST_CASE("up-going advantage ignores negative downstream advantage") {
    // V = 0, r = (0, -1): A_1 = -1, A_0 = 0 + γ·c·max(-1, 0) = 0
    const std::vector<double> v{0, 0}, r{0, -1}, one{1, 1};
    const auto a = upgoing_advantage(v, r, one, one, 0.9);
    CHECK(a.advantage[1] == -1.0);
    CHECK(a.advantage[0] == 0.0);
}

TEST_CASE("v-trace targets match the explicit sum") {
    Rng rng = stream_rng(22, 0);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + trial % 15;
        const auto v = random_vec(n, rng, -3, 3);
        const auto r = random_vec(n, rng, -1, 1);
        const auto rho = random_vec(n, rng, 0, 1);
        const auto c = random_vec(n, rng, 0, 1);
        const auto got = vtrace_targets(v, r, rho, c, 0.95);
        const auto want = oracle::vtrace(v, r, rho, c, 0.95);
        for (std::size_t t = 0; t < n; ++t) CHECK(std::abs(got[t] - want[t]) <= 1e-12);
    }
}

TEST_CASE("truncated ratios") {
    const auto a = truncated_ratio(std::log(3.0), 0.0, 1.0, 0.5);
    CHECK(a.ratio == doctest::Approx(3.0));
    CHECK(a.rho == 1.0);
    CHECK(a.c == 0.5);
    const auto b = truncated_ratio(0.0, std::log(4.0));
    CHECK(b.ratio == doctest::Approx(0.25));
    CHECK(b.rho == doctest::Approx(0.25));
}

TEST_CASE("shift weights are normalized prefix products") {
    const std::vector<std::vector<double>> ratios{{2.0, 0.5, 3.0}, {1.0}};
    const auto s = distribution_shift_weights(ratios);
    // raw: (1, 2, 1), (1); mean 5/4
    CHECK(s.weights[0][0] == doctest::Approx(0.8));
    CHECK(s.weights[0][1] == doctest::Approx(1.6));
    CHECK(s.weights[0][2] == doctest::Approx(0.8));
    CHECK(s.weights[1][0] == doctest::Approx(0.8));
    CHECK(s.ess == doctest::Approx(16.0 / (0.64 * 3 + 2.56)));
}

TEST_CASE("observation cvae loss gradient through the encoder") {
    const Cohort c = testing_util::small_cohort(3, 4);
    const Preprocessor pre = Preprocessor::fit(c);
    PreparedAdmission adm = pre.prepare(c.admissions[0]);
    adm.inputs.resize(std::min<std::size_t>(adm.length(), 4));
    adm.missing.resize(adm.inputs.size());
    adm.actions.resize(adm.inputs.size());
    adm.rewards.resize(adm.inputs.size());
    StateModels m = init_state_models(pre.n_continuous(), pre.n_binary(), tiny_state(), 3);
    nn::ParamSet params = m.encoder.params;
    for (const auto& [name, t] : m.cvae.params) params.add(name, t);
    CHECK(params.parameter_count() <= 1000);
    // zero biases and a_{-1} = 0 put relus exactly on their kink
    Rng jitter = stream_rng(4, 4);
    for (auto& [name, t] : params)
        for (double& x : t.data) x += 0.05 * (uniform01(jitter) - 0.5);
    auto eval = [&](bool grads, nn::GradSet* g) {
        nn::Tape tape;
        Rng rng = stream_rng(5, 0);
        auto loss = admission_cvae_loss(tape, params, m.cvae, adm, 1.0, rng);
        if (grads) {
            tape.backward(loss);
            *g = tape.gradients(params);
        }
        return tape.scalar(loss);
    };
    nn::GradSet g;
    eval(true, &g);
    CHECK(testing_util::max_gradcheck_error(params, g, [&] { return eval(false, nullptr); }) < 1e-4);
}

TEST_CASE("behavior cvae loss gradient") {
    BehaviorConfig cfg;
    cfg.latent_dim = 2;
    cfg.hidden = 6;
    Rng rng = stream_rng(6, 0);
    BehaviorCvae model = BehaviorCvae::create(4, cfg, rng);
    CHECK(model.params.parameter_count() <= 1000);
    const std::vector<double> belief{0.3, -0.2, 0.5, 0.1}, noise{0.4, -1.1};
    const EqAction a{0.7, 0.2};
    nn::Tape tape;
    auto loss = behavior_loss(tape, model.params, model, belief, a, noise);
    tape.backward(loss);
    const auto g = tape.gradients(model.params);
    CHECK(tape.scalar(loss) == doctest::Approx(behavior_loss(model, belief, a, noise)).epsilon(1e-12));
    const double err = testing_util::max_gradcheck_error(model.params, g, [&] {
        nn::Tape t;
        return t.scalar(behavior_loss(t, model.params, model, belief, a, noise));
    });
    CHECK(err < 1e-4);
}

TEST_CASE("actor-critic loss gradient and value scaling") {
    Rng rng = stream_rng(7, 0);
    PolicyNetConfig cfg;
    cfg.hidden = 8;
    PolicyValueNet net = PolicyValueNet::create(4, cfg, rng);
    Trace tr;
    for (int t = 0; t < 5; ++t) {
        tr.beliefs.push_back(random_vec(4, rng, -1, 1));
        tr.actions.push_back({uniform01(rng), uniform01(rng)});
        tr.rewards.push_back(t == 4 ? 10.0 : 0.0);
        tr.behavior_log_density.push_back(0.0);
    }
    const auto adv = random_vec(5, rng, -1, 1);
    const auto targets = random_vec(5, rng, -2, 2);
    const auto w = random_vec(5, rng, 0.5, 1.5);
    const std::vector<double> scale{0.5, 2.0, 1.0, 0.0, 3.0};
    nn::Tape tape;
    LossTerms terms;
    auto loss = actor_critic_loss(tape, net.params, net, tr, adv, targets, w, 0.1, 0.5, &terms, scale);
    tape.backward(loss);
    const auto g = tape.gradients(net.params);
    CHECK(terms.total() == doctest::Approx(tape.scalar(loss)));
    const double err = testing_util::max_gradcheck_error(net.params, g, [&] {
        nn::Tape t;
        return t.scalar(actor_critic_loss(t, net.params, net, tr, adv, targets, w, 0.1, 0.5, nullptr, scale));
    });
    CHECK(err < 1e-4);

    double value_oracle = 0.0;
    for (std::size_t t = 0; t < 5; ++t) {
        const double e = net.forward(tr.beliefs[t]).value - targets[t];
        value_oracle += 0.5 * scale[t] * e * e;
    }
    CHECK(terms.value == doctest::Approx(value_oracle).epsilon(1e-12));
}

TEST_CASE("belief prefixes agree with the full encoding") {
    const Cohort c = testing_util::small_cohort(2, 9);
    const Preprocessor pre = Preprocessor::fit(c);
    const auto adm = pre.prepare(c.admissions[1]);
    StateModels m = init_state_models(pre.n_continuous(), pre.n_binary(), tiny_state(), 4);
    const auto full = m.encoder.encode(adm);
    REQUIRE(full.size() == adm.length());
    const auto part = m.encoder.encode(adm, 2);
    REQUIRE(part.size() == 3);
    for (std::size_t t = 0; t < 3; ++t) CHECK(part[t] == full[t]);
    // s_1 = GRU(s_0, a_0, o_1)
    CHECK(m.encoder.step(full[0], adm.actions[0], adm.inputs[1]) == full[1]);
}

TEST_CASE("observation likelihood and checkpoints") {
    StateModels m = init_state_models(8, 2, tiny_state(), 5);
    const std::vector<double> s{0.1, 0.2, -0.3, 0.0};
    Rng rng = stream_rng(8, 0);
    const auto o = sample_next_observation(m.cvae, s, {0.5, 0.5}, rng);
    REQUIRE(o.size() == 10);
    for (std::size_t i = 8; i < 10; ++i) CHECK((o[i] == 0.0 || o[i] == 1.0));
    CHECK(observation_likelihood(m.cvae, s, {0.5, 0.5}, o) > 0.0);
    const double ll = observation_log_likelihood(m.cvae, s, {0.5, 0.5}, o);
    CHECK(std::isfinite(ll));
    const ObsCvae back = ObsCvae::from_checkpoint(m.cvae.to_checkpoint());
    CHECK(observation_log_likelihood(back, s, {0.5, 0.5}, o) == ll);
}

TEST_CASE("behavior density is floored and consistent with its log") {
    BehaviorConfig cfg;
    cfg.latent_dim = 2;
    cfg.hidden = 6;
    Rng rng = stream_rng(9, 0);
    BehaviorCvae model = BehaviorCvae::create(4, cfg, rng);
    const std::vector<double> s{0.1, 0.2, 0.3, 0.4};
    Rng r1 = stream_rng(1, 1), r2 = stream_rng(1, 1);
    const double d = behavior_density(model, s, {0.4, 0.6}, 16, r1);
    const double ld = behavior_log_density(model, s, {0.4, 0.6}, 16, r2);
    CHECK(std::log(d) == doctest::Approx(ld).epsilon(1e-12));
    Rng r3 = stream_rng(1, 2);
    CHECK(behavior_density(model, s, {1e6, -1e6}, 4, r3) >= kDensityFloor);
    const BehaviorCvae back = BehaviorCvae::from_checkpoint(model.to_checkpoint());
    CHECK(back.params == model.params);
}

TEST_CASE("behavior density integrates to one at the default latent width") {
    BehaviorConfig cfg;  // latent 8, encoder std 0.1
    cfg.hidden = 6;
    Rng rng = stream_rng(4, 0);
    const BehaviorCvae model = BehaviorCvae::create(4, cfg, rng);
    const std::vector<double> s{0.3, -0.2, 0.5, 0.1};
    // decoded means stay inside [-3.5, 3.5] for these weights; the grid covers them with margin
    Rng zr = stream_rng(4, 1);
    for (int k = 0; k < 200; ++k) {
        std::vector<double> z(cfg.latent_dim);
        for (double& v : z) v = standard_normal(zr);
        const auto d = model.decode(s, z);
        REQUIRE(std::abs(d.mean[0]) < 3.5);
        REQUIRE(std::abs(d.mean[1]) < 3.5);
    }
    const double lo = -5.0, h = 0.025;
    const int n = 400;
    double integral = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            Rng r = stream_rng(5, static_cast<std::uint64_t>(i * n + j));
            integral += behavior_density(model, s, {lo + (i + 0.5) * h, lo + (j + 0.5) * h}, 8, r) * h * h;
        }
    CHECK(integral == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("short state and behavior training lowers held-out loss") {
    const Cohort c = testing_util::small_cohort(60, 12);
    const Preprocessor pre = Preprocessor::fit(c);
    std::vector<PreparedAdmission> prep;
    for (const auto& a : c.admissions) prep.push_back(pre.prepare(a));
    StateReprConfig sc = tiny_state();
    sc.epochs = 3;
    sc.learning_rate = 3e-3;
    const StateModels m = train_state_representation(prep, pre.n_continuous(), pre.n_binary(), sc, 1);
    CHECK(m.report.final_holdout_loss < m.report.initial_holdout_loss);
    CHECK(m.report.epoch_train_loss.size() == 3);

    BehaviorConfig bc;
    bc.latent_dim = 2;
    bc.hidden = 8;
    bc.epochs = 3;
    bc.learning_rate = 3e-3;
    const auto pairs = belief_action_pairs(m.encoder, prep);
    const auto bm = train_behavior_cvae(pairs, m.encoder.width(), bc, 2);
    CHECK(bm.report.final_holdout_loss < bm.report.initial_holdout_loss);
    CHECK_THROWS_AS(train_behavior_cvae({}, 4, bc, 2), DataError);
}
