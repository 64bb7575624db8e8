#include "dosing/state_repr.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "dosing/cohort.hpp"
#include "dosing/kernels.hpp"
#include "dosing/log.hpp"
#include "dosing/nn/layers.hpp"
#include "dosing/train_util.hpp"

namespace dosing {

using nn::Tape;
using nn::Var;

namespace {

std::vector<double> concat3(std::span<const double> a, std::span<const double> b, std::span<const double> c) {
    std::vector<double> out;
    out.reserve(a.size() + b.size() + c.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    out.insert(out.end(), c.begin(), c.end());
    return out;
}

double bernoulli_log_prob(std::span<const double> logits, std::span<const double> targets) {
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i)
        total += targets[i] > 0.5 ? nn::log_sigmoid(logits[i]) : nn::log_sigmoid(-logits[i]);
    return total;
}

double decoded_log_prob(const ObsCvae& cvae, const ObsCvae::Decoded& d, std::span<const double> obs) {
    const std::size_t c = cvae.n_continuous;
    double lp = nn::gaussian_log_prob(obs.subspan(0, c), d.mean, d.log_std);
    lp += bernoulli_log_prob(d.logits, obs.subspan(c, cvae.n_binary));
    return lp;
}

double standard_normal_log_prob(std::span<const double> z) {
    double lp = 0.0;
    for (double v : z) lp += -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * v * v;
    return lp;
}

}  // namespace

// ---- HistoryEncoder ----

HistoryEncoder HistoryEncoder::create(std::size_t input_width, const StateReprConfig& config, Rng& rng) {
    HistoryEncoder enc;
    nn::add_mlp(enc.params, "enc.obs", {input_width, config.embed_hidden, config.obs_embed}, rng);
    nn::add_mlp(enc.params, "enc.act", {2, config.embed_hidden, config.act_embed}, rng);
    nn::add_gru(enc.params, "enc.gru", config.act_embed + config.obs_embed, config.belief_width, rng);
    return enc;
}

std::size_t HistoryEncoder::width() const { return nn::gru_hidden(params, "enc.gru"); }

std::size_t HistoryEncoder::input_width() const { return nn::mlp_shape(params, "enc.obs").in; }

Belief HistoryEncoder::step(std::span<const double> hidden, const EqAction& prev_action,
                            std::span<const double> input) const {
    const auto act = nn::mlp_apply(params, "enc.act", prev_action);
    const auto obs = nn::mlp_apply(params, "enc.obs", input);
    std::vector<double> x(act);
    x.insert(x.end(), obs.begin(), obs.end());
    return nn::gru_apply(params, "enc.gru", x, hidden);
}

std::vector<Belief> HistoryEncoder::encode(const PreparedAdmission& admission, std::size_t upto) const {
    std::vector<Belief> out;
    if (admission.length() == 0) return out;
    if (upto >= admission.length()) upto = admission.length() - 1;
    out.reserve(upto + 1);
    Belief h = initial();
    EqAction prev{0.0, 0.0};
    for (std::size_t t = 0; t <= upto; ++t) {
        h = step(h, prev, admission.inputs[t]);
        out.push_back(h);
        prev = admission.actions[t];
    }
    return out;
}

std::vector<Belief> HistoryEncoder::encode(const PreparedAdmission& admission) const {
    return encode(admission, admission.length() == 0 ? 0 : admission.length() - 1);
}

Var encoder_step(Tape& tape, const nn::ParamSet& params, Var hidden, const EqAction& prev_action,
                 std::span<const double> input) {
    Var act = nn::mlp_forward(tape, params, "enc.act", tape.constant(std::span<const double>(prev_action)));
    Var obs = nn::mlp_forward(tape, params, "enc.obs", tape.constant(input));
    return nn::gru_forward(tape, params, "enc.gru", tape.concat({act, obs}), hidden);
}

// ---- ObsCvae ----

ObsCvae ObsCvae::create(std::size_t n_continuous, std::size_t n_binary, std::size_t belief_width,
                        const StateReprConfig& config, Rng& rng) {
    ObsCvae cvae;
    cvae.n_continuous = n_continuous;
    cvae.n_binary = n_binary;
    cvae.latent_dim = config.latent_dim;
    cvae.encoder_std = config.encoder_std;
    const std::size_t obs = n_continuous + n_binary;
    nn::add_mlp(cvae.params, "cvae.enc", {belief_width + 2 + obs, config.cvae_hidden, config.latent_dim}, rng);
    nn::add_mlp(cvae.params, "cvae.dec",
                {config.latent_dim + belief_width + 2, config.cvae_hidden, 2 * n_continuous + n_binary}, rng);
    return cvae;
}

std::size_t ObsCvae::belief_width() const { return nn::mlp_shape(params, "cvae.dec").in - latent_dim - 2; }

std::vector<double> ObsCvae::encoder_mean(std::span<const double> belief, const EqAction& a,
                                          std::span<const double> next_obs) const {
    return nn::mlp_apply(params, "cvae.enc", concat3(belief, a, next_obs));
}

ObsCvae::Decoded ObsCvae::decode(std::span<const double> belief, const EqAction& a, std::span<const double> z) const {
    const auto out = nn::mlp_apply(params, "cvae.dec", concat3(z, belief, a));
    const std::size_t c = n_continuous;
    Decoded d;
    d.mean.assign(out.begin(), out.begin() + c);
    d.log_std.assign(out.begin() + c, out.begin() + 2 * c);
    d.logits.assign(out.begin() + 2 * c, out.end());
    return d;
}

nn::ParamSet ObsCvae::to_checkpoint() const {
    nn::ParamSet out = params;
    out.add("cvae.meta", nn::Tensor::vector({static_cast<double>(n_continuous), static_cast<double>(n_binary),
                                             static_cast<double>(latent_dim), encoder_std}));
    return out;
}

ObsCvae ObsCvae::from_checkpoint(const nn::ParamSet& stored) {
    if (!stored.contains("cvae.meta")) throw nn::DimensionError("checkpoint has no cvae.meta entry");
    const auto& meta = stored.at("cvae.meta").data;
    if (meta.size() != 4) throw nn::DimensionError("cvae.meta: expected 4 values");
    ObsCvae cvae;
    cvae.n_continuous = static_cast<std::size_t>(meta[0]);
    cvae.n_binary = static_cast<std::size_t>(meta[1]);
    cvae.latent_dim = static_cast<std::size_t>(meta[2]);
    cvae.encoder_std = meta[3];
    for (const auto& [name, t] : stored)
        if (name.rfind("cvae.", 0) == 0 && name != "cvae.meta") cvae.params.add(name, t);
    return cvae;
}

// ---- losses ----

Var cvae_loss(Tape& tape, const nn::ParamSet& params, const ObsCvae& shape, Var belief, const EqAction& a,
              std::span<const double> next_obs, std::span<const double> missing, std::span<const double> noise,
              double kl_weight) {
    const std::size_t c = shape.n_continuous;
    const std::size_t b = shape.n_binary;
    const std::size_t l = shape.latent_dim;
    if (next_obs.size() != c + b) throw nn::DimensionError("cvae_loss: observation width mismatch");
    if (noise.size() != l) throw nn::DimensionError("cvae_loss: noise width mismatch");

    Var av = tape.constant(std::span<const double>(a));
    Var mu_q = nn::mlp_forward(tape, params, "cvae.enc", tape.concat({belief, av, tape.constant(next_obs)}));
    std::vector<double> scaled(noise.begin(), noise.end());
    for (double& v : scaled) v *= shape.encoder_std;
    Var z = tape.add(mu_q, tape.constant(std::move(scaled)));
    Var dec = nn::mlp_forward(tape, params, "cvae.dec", tape.concat({z, belief, av}));

    Var loglik = tape.constant(std::vector<double>{0.0});
    if (c > 0) {
        Var target = tape.constant(next_obs.subspan(0, c));
        loglik = tape.add(loglik, tape.gaussian_log_prob(target, tape.slice(dec, 0, c), tape.slice(dec, c, c), missing));
    }
    if (b > 0) loglik = tape.add(loglik, tape.bernoulli_log_prob(tape.slice(dec, 2 * c, b), next_obs.subspan(c, b)));

    Var kl = tape.kl_diag(mu_q, tape.constant(std::vector<double>(l, std::log(shape.encoder_std))),
                          tape.constant(std::vector<double>(l, 0.0)), tape.constant(std::vector<double>(l, 0.0)));
    return tape.sub(tape.scale(kl, kl_weight), loglik);
}

double cvae_loss(const ObsCvae& cvae, std::span<const double> belief, const EqAction& a,
                 std::span<const double> next_obs, std::span<const double> missing, std::span<const double> noise,
                 double kl_weight) {
    Tape tape;
    Var s = tape.constant(belief);
    return tape.scalar(cvae_loss(tape, cvae.params, cvae, s, a, next_obs, missing, noise, kl_weight));
}

std::vector<double> sample_next_observation(const ObsCvae& cvae, std::span<const double> belief, const EqAction& a,
                                            Rng& rng) {
    std::vector<double> z(cvae.latent_dim);
    for (double& v : z) v = standard_normal(rng);
    const auto d = cvae.decode(belief, a, z);
    std::vector<double> out;
    out.reserve(cvae.n_continuous + cvae.n_binary);
    for (std::size_t i = 0; i < cvae.n_continuous; ++i)
        out.push_back(d.mean[i] + std::exp(d.log_std[i]) * standard_normal(rng));
    for (std::size_t j = 0; j < cvae.n_binary; ++j)
        out.push_back(uniform01(rng) < nn::sigmoid(d.logits[j]) ? 1.0 : 0.0);
    return out;
}

double observation_log_likelihood(const ObsCvae& cvae, std::span<const double> belief, const EqAction& a,
                                  std::span<const double> next_obs, std::size_t latent_samples, Rng* rng) {
    if (next_obs.size() != cvae.n_continuous + cvae.n_binary)
        throw nn::DimensionError("observation_likelihood: observation width mismatch");
    if (latent_samples == 0) {
        const std::vector<double> z(cvae.latent_dim, 0.0);
        return decoded_log_prob(cvae, cvae.decode(belief, a, z), next_obs);
    }
    if (rng == nullptr) throw std::invalid_argument("observation_likelihood: sampling needs an rng");
    const auto mu = cvae.encoder_mean(belief, a, next_obs);
    const std::vector<double> log_sq(cvae.latent_dim, std::log(cvae.encoder_std));
    std::vector<double> terms(latent_samples);
    std::vector<double> eps(cvae.latent_dim);
    for (std::size_t k = 0; k < latent_samples; ++k) {
        for (double& v : eps) v = standard_normal(*rng);
        const auto z = nn::gaussian_sample(mu, log_sq, eps);
        terms[k] = decoded_log_prob(cvae, cvae.decode(belief, a, z), next_obs) + standard_normal_log_prob(z) -
                   nn::gaussian_log_prob(z, mu, log_sq);
    }
    return nn::log_sum_exp(terms) - std::log(static_cast<double>(latent_samples));
}

double observation_likelihood(const ObsCvae& cvae, std::span<const double> belief, const EqAction& a,
                              std::span<const double> next_obs, std::size_t latent_samples, Rng* rng) {
    const double p = std::exp(observation_log_likelihood(cvae, belief, a, next_obs, latent_samples, rng));
    return std::max(p, std::numeric_limits<double>::min());
}

// ---- training ----

std::size_t count_triples(const PreparedAdmission& admission) {
    return admission.length() > 1 ? admission.length() - 1 : 0;
}

Var admission_cvae_loss(Tape& tape, const nn::ParamSet& params, const ObsCvae& shape,
                        const PreparedAdmission& admission, double kl_weight, Rng& rng) {
    Var total = tape.constant(std::vector<double>{0.0});
    const std::size_t n = count_triples(admission);
    if (n == 0) return total;
    Var h = tape.constant(std::vector<double>(nn::gru_hidden(params, "enc.gru"), 0.0));
    EqAction prev{0.0, 0.0};
    std::vector<double> noise(shape.latent_dim);
    for (std::size_t t = 0; t < n; ++t) {
        h = encoder_step(tape, params, h, prev, admission.inputs[t]);
        for (double& v : noise) v = standard_normal(rng);
        total = tape.add(total, cvae_loss(tape, params, shape, h, admission.actions[t], admission.inputs[t + 1],
                                          admission.missing[t + 1], noise, kl_weight));
        prev = admission.actions[t];
    }
    return total;
}

StateModels init_state_models(std::size_t n_continuous, std::size_t n_binary, const StateReprConfig& config,
                              std::uint64_t seed) {
    Rng rng = stream_rng(seed, 0);
    StateModels m;
    m.encoder = HistoryEncoder::create(n_continuous + n_binary, config, rng);
    m.cvae = ObsCvae::create(n_continuous, n_binary, config.belief_width, config, rng);
    return m;
}

double mean_cvae_loss(const HistoryEncoder& encoder, const ObsCvae& cvae,
                      const std::vector<PreparedAdmission>& admissions, double kl_weight, std::uint64_t seed) {
    nn::ParamSet params = encoder.params;
    params.merge(cvae.params);
    const auto total = kernels::sum_loss_gradients(admissions.size(), [&](std::size_t i) {
        Tape tape;
        Rng rng = stream_rng(seed, i);
        kernels::LossGradient out;
        out.loss = tape.scalar(admission_cvae_loss(tape, params, cvae, admissions[i], kl_weight, rng));
        out.count = static_cast<double>(count_triples(admissions[i]));
        return out;
    });
    return total.count > 0 ? total.loss / total.count : 0.0;
}

StateModels train_state_representation(const std::vector<PreparedAdmission>& train, std::size_t n_continuous,
                                       std::size_t n_binary, const StateReprConfig& config, std::uint64_t seed) {
    if (train.empty()) throw DataError("train_state_representation: empty training cohort");
    StateModels models = init_state_models(n_continuous, n_binary, config, seed);

    Rng split_rng = stream_rng(seed, 1);
    const auto order = shuffled_indices(train.size(), split_rng);
    std::size_t n_hold = static_cast<std::size_t>(config.holdout_fraction * static_cast<double>(train.size()));
    if (n_hold >= train.size()) n_hold = 0;
    std::vector<PreparedAdmission> holdout, fit;
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_hold ? holdout : fit).push_back(train[order[i]]);

    auto& report = models.report;
    for (const auto& a : fit) report.train_triples += count_triples(a);
    for (const auto& a : holdout) report.holdout_triples += count_triples(a);
    if (report.train_triples == 0) {
        log_warn("train-state: no (s, a, o') triples in the training cohort; models left at initialization");
        report.skipped = true;
        return models;
    }

    const std::uint64_t eval_seed = derive_seed(seed, 2);
    report.initial_holdout_loss = mean_cvae_loss(models.encoder, models.cvae, holdout, config.kl_weight, eval_seed);

    nn::ParamSet params = models.encoder.params;
    params.merge(models.cvae.params);
    nn::RmsPropState opt;
    opt.epsilon = config.rms_epsilon;
    const ObsCvae& shape = models.cvae;
    const std::size_t batch = std::max<std::size_t>(1, config.batch_admissions);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng epoch_rng = stream_rng(derive_seed(seed, 3, epoch), 0);
        const auto perm = shuffled_indices(fit.size(), epoch_rng);
        double epoch_loss = 0.0, epoch_count = 0.0;
        for (std::size_t start = 0, b = 0; start < perm.size(); start += batch, ++b) {
            const std::size_t n = std::min(batch, perm.size() - start);
            const std::uint64_t batch_seed = derive_seed(seed, 4 + epoch, b);
            auto lg = kernels::sum_loss_gradients(n, [&](std::size_t i) {
                const std::size_t idx = perm[start + i];
                Tape tape;
                Rng rng = stream_rng(batch_seed, idx);
                Var loss = admission_cvae_loss(tape, params, shape, fit[idx], config.kl_weight, rng);
                kernels::LossGradient out;
                out.loss = tape.scalar(loss);
                out.count = static_cast<double>(count_triples(fit[idx]));
                tape.backward(loss);
                out.grads = tape.gradients(params);
                return out;
            });
            if (lg.count == 0) continue;
            if (!std::isfinite(lg.loss)) {
                std::ostringstream msg;
                msg << "train-state: non-finite loss at epoch " << epoch << ", batch " << b;
                throw TrainingError(msg.str());
            }
            scale_grads(lg.grads, 1.0 / lg.count);
            optimizer_step(params, lg.grads, opt, config.learning_rate, config.max_grad_norm, "train-state");
            epoch_loss += lg.loss;
            epoch_count += lg.count;
        }
        report.epoch_train_loss.push_back(epoch_count > 0 ? epoch_loss / epoch_count : 0.0);
        log_info("train-state epoch " + std::to_string(epoch) + " loss " +
                 std::to_string(report.epoch_train_loss.back()));
    }

    models.encoder.params = params.subset("enc.");
    models.cvae.params = params.subset("cvae.");
    report.final_holdout_loss = mean_cvae_loss(models.encoder, models.cvae, holdout, config.kl_weight, eval_seed);
    return models;
}

}  // namespace dosing
