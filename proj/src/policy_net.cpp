#include "dosing/policy_net.hpp"

#include <algorithm>
#include <cmath>

#include "dosing/nn/layers.hpp"

namespace dosing {

using nn::Tape;
using nn::Var;

PolicyValueNet PolicyValueNet::create(std::size_t belief_width, const PolicyNetConfig& config, Rng& rng) {
    PolicyValueNet net;
    net.log_std_min = config.log_std_min;
    net.log_std_max = config.log_std_max;
    const double relu_gain = std::sqrt(2.0);
    nn::add_linear(net.params, "pi.l1", belief_width, config.hidden, rng, relu_gain);
    nn::add_linear(net.params, "pi.l2", config.hidden, config.hidden, rng, relu_gain);
    nn::add_linear(net.params, "pi.mean", config.hidden, 2, rng, 0.01);
    nn::add_linear(net.params, "pi.logvar", config.hidden, 2, rng, 0.01);
    nn::add_linear(net.params, "pi.v", config.hidden, 1, rng, 1.0);
    return net;
}

std::size_t PolicyValueNet::belief_width() const { return params.at("pi.l1.w").cols(); }

PolicyValueNet::Output PolicyValueNet::forward(std::span<const double> belief) const {
    auto h = nn::linear_apply(params, "pi.l1", belief);
    for (double& v : h) v = std::max(v, 0.0);
    h = nn::linear_apply(params, "pi.l2", h);
    for (double& v : h) v = std::max(v, 0.0);
    const auto mean = nn::linear_apply(params, "pi.mean", h);
    const auto logvar = nn::linear_apply(params, "pi.logvar", h);
    Output out;
    for (int i = 0; i < 2; ++i) {
        out.mean[i] = mean[i];
        out.log_std[i] = 0.5 * nn::soft_bound(logvar[i], 2.0 * log_std_min, 2.0 * log_std_max);
    }
    out.value = nn::linear_apply(params, "pi.v", h)[0];
    return out;
}

double PolicyValueNet::value(std::span<const double> belief) const { return forward(belief).value; }

PolicyValueNet::TapeOutput PolicyValueNet::forward(Tape& tape, const nn::ParamSet& p, Var belief) const {
    Var h = tape.relu(nn::linear_forward(tape, p, "pi.l1", belief));
    h = tape.relu(nn::linear_forward(tape, p, "pi.l2", h));
    TapeOutput out;
    out.mean = nn::linear_forward(tape, p, "pi.mean", h);
    Var logvar = nn::soft_bound(tape, nn::linear_forward(tape, p, "pi.logvar", h), 2.0 * log_std_min, 2.0 * log_std_max);
    out.log_std = tape.scale(logvar, 0.5);
    out.value = nn::linear_forward(tape, p, "pi.v", h);
    return out;
}

nn::ParamSet PolicyValueNet::to_checkpoint() const {
    nn::ParamSet out = params;
    out.add("pi.meta", nn::Tensor::vector({log_std_min, log_std_max}));
    return out;
}

PolicyValueNet PolicyValueNet::from_checkpoint(const nn::ParamSet& stored) {
    if (!stored.contains("pi.meta")) throw nn::DimensionError("checkpoint has no pi.meta entry");
    const auto& meta = stored.at("pi.meta").data;
    if (meta.size() != 2) throw nn::DimensionError("pi.meta: expected 2 values");
    PolicyValueNet net;
    net.log_std_min = meta[0];
    net.log_std_max = meta[1];
    for (const auto& [name, t] : stored)
        if (name.rfind("pi.", 0) == 0 && name != "pi.meta") net.params.add(name, t);
    return net;
}

double policy_log_prob(const PolicyValueNet::Output& out, const EqAction& a) {
    return nn::gaussian_log_prob(a, out.mean, out.log_std);
}

EqAction clip_action(const EqAction& a) { return {std::clamp(a[0], 0.0, 1.0), std::clamp(a[1], 0.0, 1.0)}; }

EqAction policy_sample(const PolicyValueNet::Output& out, Rng& rng) {
    EqAction a;
    for (int i = 0; i < 2; ++i) a[i] = out.mean[i] + std::exp(out.log_std[i]) * standard_normal(rng);
    return clip_action(a);
}

}  // namespace dosing
