#include "dosing/ope.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "dosing/config.hpp"
#include "dosing/kernels.hpp"
#include "dosing/nn/layers.hpp"
#include "dosing/nn/tape.hpp"
#include "dosing/train_util.hpp"

namespace dosing {

namespace {

const double kLogClipLow = std::log(kRatioClipLow);
const double kLogClipHigh = std::log(kRatioClipHigh);

double clipped_weight(double log_w) { return std::exp(std::clamp(log_w, kLogClipLow, kLogClipHigh)); }

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

void check_inputs(const std::vector<OpeTrajectory>& trajs, const LogProbs& log_target) {
    if (trajs.empty()) throw std::invalid_argument("ope: empty trajectory set");
    if (log_target.size() != trajs.size()) throw std::invalid_argument("ope: log-prob / trajectory count mismatch");
    for (std::size_t i = 0; i < trajs.size(); ++i)
        if (log_target[i].size() != trajs[i].length() || trajs[i].log_behavior.size() != trajs[i].length())
            throw std::invalid_argument("ope: per-step length mismatch");
}

double wis_indexed(const std::vector<OpeTrajectory>& trajs, const LogProbs& log_target, double gamma,
                   const std::vector<std::size_t>& idx) {
    double num = 0.0, den = 0.0;
    for (std::size_t i : idx) {
        double log_w = 0.0;
        for (std::size_t t = 0; t < trajs[i].length(); ++t) log_w += log_target[i][t] - trajs[i].log_behavior[t];
        const double w = clipped_weight(log_w);
        num += w * discounted_return(trajs[i].rewards, gamma);
        den += w;
    }
    return num / den;
}

// Stepwise WDR over the trajectories in idx; vhat[i][t] is V̂(s_{i,t}). vhat == nullptr
// gives per-decision WIS.
double wdr_indexed(const std::vector<OpeTrajectory>& trajs, const LogProbs& log_target,
                   const std::vector<std::vector<double>>* vhat, double gamma, const std::vector<std::size_t>& idx) {
    std::size_t horizon = 0;
    for (std::size_t i : idx) horizon = std::max(horizon, trajs[i].length());
    const std::size_t n = idx.size();
    std::vector<double> cum_log(n, 0.0), prev_norm(n, 1.0 / static_cast<double>(n)), w(n);
    double total = 0.0, discount = 1.0;
    for (std::size_t t = 0; t < horizon; ++t) {
        double sum_w = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t i = idx[j];
            if (t < trajs[i].length()) cum_log[j] += log_target[i][t] - trajs[i].log_behavior[t];
            w[j] = clipped_weight(cum_log[j]);
            sum_w += w[j];
        }
        double step = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t i = idx[j];
            const double wn = w[j] / sum_w;
            if (t < trajs[i].length()) {
                step += wn * trajs[i].rewards[t];
                if (vhat != nullptr) step -= (wn - prev_norm[j]) * (*vhat)[i][t];
            }
            prev_norm[j] = wn;
        }
        total += discount * step;
        discount *= gamma;
    }
    return total;
}

std::vector<std::vector<double>> predict_all(const ValueRegressor& v, const std::vector<OpeTrajectory>& trajs) {
    std::vector<std::vector<double>> out(trajs.size());
    for (std::size_t i = 0; i < trajs.size(); ++i)
        for (const auto& x : trajs[i].features) out[i].push_back(v.predict(x));
    return out;
}

}  // namespace

double discounted_return(std::span<const double> rewards, double gamma) {
    double g = 0.0, discount = 1.0;
    for (double r : rewards) {
        g += discount * r;
        discount *= gamma;
    }
    return g;
}

double wis(const std::vector<OpeTrajectory>& trajs, const LogProbs& log_target, double gamma) {
    check_inputs(trajs, log_target);
    return wis_indexed(trajs, log_target, gamma, all_indices(trajs.size()));
}

double stepwise_wis(const std::vector<OpeTrajectory>& trajs, const LogProbs& log_target, double gamma) {
    check_inputs(trajs, log_target);
    return wdr_indexed(trajs, log_target, nullptr, gamma, all_indices(trajs.size()));
}

double wdr(const std::vector<OpeTrajectory>& trajs, const LogProbs& log_target, const ValueRegressor& v,
           double gamma) {
    check_inputs(trajs, log_target);
    const auto vhat = predict_all(v, trajs);
    return wdr_indexed(trajs, log_target, &vhat, gamma, all_indices(trajs.size()));
}

// ---- regressors ----

double TabularRegressor::predict(std::span<const double> x) const {
    const auto id = static_cast<std::size_t>(x[0]);
    return id < values_.size() ? values_[id] : 0.0;
}

void TabularRegressor::fit(const std::vector<const std::vector<double>*>& xs, const std::vector<double>& ys) {
    std::vector<double> sum, count;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const auto id = static_cast<std::size_t>((*xs[i])[0]);
        if (id >= sum.size()) {
            sum.resize(id + 1, 0.0);
            count.resize(id + 1, 0.0);
        }
        sum[id] += ys[i];
        count[id] += 1.0;
    }
    values_.assign(sum.size(), 0.0);
    for (std::size_t id = 0; id < sum.size(); ++id)
        if (count[id] > 0) values_[id] = sum[id] / count[id];
}

MlpRegressor::MlpRegressor(std::size_t input_width, const MlpRegressorConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
    Rng rng = stream_rng(seed, 0);
    nn::add_linear(params_, "v.l1", input_width, config.hidden, rng, std::sqrt(2.0));
    nn::add_linear(params_, "v.l2", config.hidden, config.hidden, rng, std::sqrt(2.0));
    nn::add_linear(params_, "v.out", config.hidden, 1, rng, 1.0);
    opt_.epsilon = config.rms_epsilon;
}

double MlpRegressor::predict(std::span<const double> x) const {
    auto h = nn::linear_apply(params_, "v.l1", x);
    for (double& v : h) v = std::max(v, 0.0);
    h = nn::linear_apply(params_, "v.l2", h);
    for (double& v : h) v = std::max(v, 0.0);
    return nn::linear_apply(params_, "v.out", h)[0];
}

void MlpRegressor::fit(const std::vector<const std::vector<double>*>& xs, const std::vector<double>& ys) {
    if (xs.empty()) return;
    Rng rng = stream_rng(seed_, ++fits_);
    std::uniform_int_distribution<std::size_t> pick(0, xs.size() - 1);
    const std::size_t batch = std::min(config_.batch, xs.size());
    for (std::size_t step = 0; step < config_.steps_per_fit; ++step) {
        nn::Tape tape;
        nn::Var total = tape.constant(std::vector<double>{0.0});
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t i = pick(rng);
            nn::Var h = tape.relu(nn::linear_forward(tape, params_, "v.l1", tape.constant(*xs[i])));
            h = tape.relu(nn::linear_forward(tape, params_, "v.l2", h));
            nn::Var err = tape.add_const(nn::linear_forward(tape, params_, "v.out", h), -ys[i]);
            total = tape.add(total, tape.square(err));
        }
        tape.backward(total);
        auto grads = tape.gradients(params_);
        scale_grads(grads, 1.0 / static_cast<double>(batch));
        optimizer_step(params_, grads, opt_, config_.learning_rate, config_.max_grad_norm, "ope-value-fit");
    }
}

// ---- Retrace ----

std::vector<double> retrace_targets(std::span<const double> values, std::span<const double> rewards,
                                    std::span<const double> log_ratio, double lambda, double gamma) {
    const std::size_t n = values.size();
    std::vector<double> y(n);
    double g = 0.0;  // Σ_{k>t} ... correction carried backwards
    for (std::size_t t = n; t-- > 0;) {
        const double c = std::min(1.0, std::exp(log_ratio[t]));
        const double next_v = t + 1 < n ? values[t + 1] : 0.0;
        const double delta = c * (rewards[t] + gamma * next_v - values[t]);
        const double c_next = t + 1 < n ? std::min(1.0, std::exp(log_ratio[t + 1])) : 0.0;
        g = delta + (t + 1 < n ? gamma * lambda * c_next * g : 0.0);
        y[t] = values[t] + g;
    }
    return y;
}

RetraceResult fit_value_retrace(const std::vector<OpeTrajectory>& trajs, const LogProbs& log_target,
                                const RetraceConfig& config, ValueRegressor& regressor) {
    check_inputs(trajs, log_target);
    if (config.lambda < 0.0 || config.lambda > 1.0) throw std::invalid_argument("retrace: lambda must be in [0, 1]");
    std::vector<const std::vector<double>*> xs;
    for (const auto& tr : trajs)
        for (const auto& x : tr.features) xs.push_back(&x);

    RetraceResult result;
    auto current = predict_all(regressor, trajs);
    for (std::size_t iter = 0; iter < config.max_iterations; ++iter) {
        std::vector<double> ys;
        ys.reserve(xs.size());
        for (std::size_t i = 0; i < trajs.size(); ++i) {
            std::vector<double> log_ratio(trajs[i].length());
            for (std::size_t t = 0; t < log_ratio.size(); ++t)
                log_ratio[t] = log_target[i][t] - trajs[i].log_behavior[t];
            const auto y = retrace_targets(current[i], trajs[i].rewards, log_ratio, config.lambda, config.gamma);
            ys.insert(ys.end(), y.begin(), y.end());
        }
        regressor.fit(xs, ys);
        auto next = predict_all(regressor, trajs);
        double change = 0.0;
        for (std::size_t i = 0; i < next.size(); ++i)
            for (std::size_t t = 0; t < next[i].size(); ++t) change = std::max(change, std::abs(next[i][t] - current[i][t]));
        current = std::move(next);
        result.iterations = iter + 1;
        result.last_change = change;
        if (change < config.tolerance) {
            result.converged = true;
            break;
        }
    }
    return result;
}

double initial_state_value(const ValueRegressor& v, const std::vector<OpeTrajectory>& trajs) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& tr : trajs) {
        if (tr.features.empty()) continue;
        sum += v.predict(tr.features.front());
        ++n;
    }
    return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

// ---- bootstrap and report ----

Interval bootstrap_interval(std::size_t n, const std::function<double(const std::vector<std::size_t>&)>& estimator,
                            std::size_t resamples, double level, std::uint64_t seed) {
    Interval out;
    out.estimate = estimator(all_indices(n));
    out.low = out.high = out.estimate;
    if (n == 0 || resamples == 0) return out;
    std::vector<double> stats = kernels::map_indices(resamples, [&](std::size_t b) {
        Rng rng = stream_rng(seed, b);
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = pick(rng);
        return estimator(idx);
    });
    std::sort(stats.begin(), stats.end());
    const double alpha = (1.0 - level) / 2.0;
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(stats.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, stats.size() - 1);
        return stats[lo] + (pos - static_cast<double>(lo)) * (stats[hi] - stats[lo]);
    };
    out.low = std::min(quantile(alpha), out.estimate);
    out.high = std::max(quantile(1.0 - alpha), out.estimate);
    return out;
}

void OpeReport::write_table(std::ostream& out) const {
    out << "variant,wis,wis_low,wis_high,retrace,retrace_low,retrace_high,wdr,wdr_low,wdr_high\n";
    std::vector<std::string> order;
    for (const auto& r : rows)
        if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
    for (const auto& v : order) {
        out << v;
        for (const char* est : {"wis", "retrace", "wdr"}) {
            const auto it = std::find_if(rows.begin(), rows.end(),
                                         [&](const OpeRow& r) { return r.variant == v && r.estimator == est; });
            if (it == rows.end()) {
                out << ",,,";
            } else {
                out << ',' << format_double(it->value.estimate) << ',' << format_double(it->value.low) << ','
                    << format_double(it->value.high);
            }
        }
        out << '\n';
    }
}

WeightDiagnostics weight_diagnostics(const std::vector<OpeTrajectory>& trajs, const LogProbs& log_target,
                                     const std::string& variant) {
    check_inputs(trajs, log_target);
    WeightDiagnostics d;
    d.variant = variant;
    d.trajectories = trajs.size();
    std::vector<double> log_w(trajs.size(), 0.0);
    for (std::size_t i = 0; i < trajs.size(); ++i)
        for (std::size_t t = 0; t < trajs[i].length(); ++t) log_w[i] += log_target[i][t] - trajs[i].log_behavior[t];
    double sum = 0.0, sum_sq = 0.0;
    for (double lw : log_w) {
        d.clipped_high += lw > kLogClipHigh;
        d.clipped_low += lw < kLogClipLow;
        // scaled by 1e-10 so that Σw² stays finite; the ratio is scale free
        const double w = clipped_weight(lw) / kRatioClipHigh;
        sum += w;
        sum_sq += w * w;
    }
    if (sum_sq > 0.0) d.ess = sum * sum / sum_sq;
    if (!log_w.empty()) {
        auto mid = log_w.begin() + static_cast<std::ptrdiff_t>(log_w.size() / 2);
        std::nth_element(log_w.begin(), mid, log_w.end());
        d.median_log_weight = *mid;
    }
    return d;
}

void OpeReport::write_weights(std::ostream& out) const {
    out << "variant,trajectories,clipped_high,clipped_low,median_log_weight,ess\n";
    for (const auto& w : weights)
        out << w.variant << ',' << w.trajectories << ',' << w.clipped_high << ',' << w.clipped_low << ','
            << format_double(w.median_log_weight) << ',' << format_double(w.ess) << '\n';
}

void OpeReport::write_plot_data(std::ostream& out) const {
    out << "estimator,variant,estimate,low,high\n";
    for (const char* est : {"wis", "retrace", "wdr"})
        for (const auto& r : rows)
            if (r.estimator == est)
                out << r.estimator << ',' << r.variant << ',' << format_double(r.value.estimate) << ','
                    << format_double(r.value.low) << ',' << format_double(r.value.high) << '\n';
}

OpeReport evaluate_all(const std::vector<OpeTrajectory>& test, const std::vector<OpeVariant>& variants,
                       const OpeConfig& config, std::uint64_t seed) {
    if (test.empty()) throw std::invalid_argument("evaluate_all: empty test set");
    OpeReport report;
    const double gamma = config.retrace.gamma;
    const std::size_t width = test.front().features.empty() ? 0 : test.front().features.front().size();
    for (std::size_t v = 0; v < variants.size(); ++v) {
        const auto& var = variants[v];
        check_inputs(test, var.log_target);
        const std::uint64_t vseed = derive_seed(seed, 20, v);
        const WeightDiagnostics wd = weight_diagnostics(test, var.log_target, var.name);
        if (wd.clipped_high + wd.clipped_low > 0)
            report.warnings.push_back(var.name + ": " + std::to_string(wd.clipped_high) + " of " +
                                      std::to_string(wd.trajectories) + " trajectory weights at the upper clip, " +
                                      std::to_string(wd.clipped_low) + " at the lower; ESS " + format_double(wd.ess));
        report.weights.push_back(wd);

        report.rows.push_back({var.name, "wis",
                               bootstrap_interval(
                                   test.size(),
                                   [&](const std::vector<std::size_t>& idx) {
                                       return wis_indexed(test, var.log_target, gamma, idx);
                                   },
                                   config.bootstrap_resamples, config.confidence, derive_seed(vseed, 1))});

        MlpRegressor regressor(width, config.regressor, derive_seed(vseed, 2));
        const auto fit = fit_value_retrace(test, var.log_target, config.retrace, regressor);
        if (!fit.converged)
            report.warnings.push_back(var.name + ": Retrace value fit stopped after " + std::to_string(fit.iterations) +
                                      " iterations (last change " + format_double(fit.last_change) + ")");
        const auto vhat = predict_all(regressor, test);

        report.rows.push_back({var.name, "retrace",
                               bootstrap_interval(
                                   test.size(),
                                   [&](const std::vector<std::size_t>& idx) {
                                       double s = 0.0;
                                       for (std::size_t i : idx) s += vhat[i].empty() ? 0.0 : vhat[i][0];
                                       return s / static_cast<double>(idx.size());
                                   },
                                   config.bootstrap_resamples, config.confidence, derive_seed(vseed, 3))});

        report.rows.push_back({var.name, "wdr",
                               bootstrap_interval(
                                   test.size(),
                                   [&](const std::vector<std::size_t>& idx) {
                                       return wdr_indexed(test, var.log_target, &vhat, gamma, idx);
                                   },
                                   config.bootstrap_resamples, config.confidence, derive_seed(vseed, 4))});
    }
    return report;
}

}  // namespace dosing
