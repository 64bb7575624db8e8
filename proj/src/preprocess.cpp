#include "dosing/preprocess.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>

namespace dosing {

namespace {
std::atomic<std::size_t> g_clamped_actions{0};
}

std::size_t clamped_action_count() { return g_clamped_actions.load(); }

Equalizer Equalizer::from_references(std::size_t n_continuous, std::vector<std::vector<double>> references) {
    if (references.size() != n_continuous + 2) throw ConfigError("equalizer needs C + 2 reference arrays");
    for (std::size_t f = 0; f < references.size(); ++f) {
        auto& r = references[f];
        if (r.empty()) throw ConfigError("equalizer feature " + std::to_string(f) + " has no training values");
        std::sort(r.begin(), r.end());
    }
    Equalizer eq;
    eq.n_continuous_ = n_continuous;
    eq.references_ = std::move(references);
    return eq;
}

Equalizer Equalizer::fit(const Cohort& train) {
    std::vector<std::vector<double>> refs(train.n_continuous + 2);
    for (const Admission& a : train.admissions) {
        for (const Step& s : a.steps) {
            for (std::size_t c = 0; c < train.n_continuous; ++c) {
                if (!s.observation.missing[c]) refs[c].push_back(s.observation.continuous[c]);
            }
            refs[train.n_continuous].push_back(s.action.vasopressor);
            refs[train.n_continuous + 1].push_back(s.action.iv_fluid);
        }
    }
    return from_references(train.n_continuous, std::move(refs));
}

const std::vector<double>& Equalizer::reference(std::size_t feature) const {
    if (feature >= references_.size()) throw ConfigError("unknown equalizer feature " + std::to_string(feature));
    return references_[feature];
}

double Equalizer::apply(std::size_t feature, double value) const {
    const auto& ref = reference(feature);
    const auto lo = std::lower_bound(ref.begin(), ref.end(), value);
    const auto hi = std::upper_bound(lo, ref.end(), value);
    const double less = static_cast<double>(lo - ref.begin());
    const double equal = static_cast<double>(hi - lo);
    return (less + 0.5 * equal) / static_cast<double>(ref.size());
}

double Equalizer::inverse(std::size_t feature, double u) const {
    const auto& ref = reference(feature);
    const double n = static_cast<double>(ref.size());
    const double pos = std::clamp(u, 0.0, 1.0) * n - 0.5;  // fractional index
    if (pos <= 0.0) return ref.front();
    if (pos >= n - 1.0) return ref.back();
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(i);
    return ref[i] + frac * (ref[i + 1] - ref[i]);
}

std::vector<double> feature_medians(const Cohort& train) {
    std::vector<double> medians(train.n_continuous);
    for (std::size_t c = 0; c < train.n_continuous; ++c) {
        std::vector<double> vals;
        for (const Admission& a : train.admissions) {
            for (const Step& s : a.steps) {
                if (!s.observation.missing[c]) vals.push_back(s.observation.continuous[c]);
            }
        }
        if (vals.empty()) throw ConfigError("continuous feature " + std::to_string(c) + " is never observed in training");
        std::sort(vals.begin(), vals.end());
        const std::size_t n = vals.size();
        medians[c] = n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    }
    return medians;
}

std::vector<ObservationVector> impute_sample_and_hold(std::span<const ObservationVector> series,
                                                      std::span<const double> medians) {
    std::vector<ObservationVector> out(series.begin(), series.end());
    if (out.empty()) return out;
    const std::size_t n_c = out.front().continuous.size();
    if (medians.size() != n_c) throw ConfigError("median vector width does not match observations");
    std::vector<double> held(medians.begin(), medians.end());
    for (auto& o : out) {
        for (std::size_t c = 0; c < n_c; ++c) {
            if (o.missing[c]) {
                o.continuous[c] = held[c];
                o.missing[c] = 0;
            } else {
                held[c] = o.continuous[c];
            }
        }
    }
    return out;
}

Preprocessor::Preprocessor(Equalizer equalizer, std::vector<double> medians, std::size_t n_binary)
    : equalizer_(std::move(equalizer)), medians_(std::move(medians)), n_binary_(n_binary) {
    if (medians_.size() != equalizer_.n_continuous()) throw ConfigError("median count does not match equalizer");
}

Preprocessor Preprocessor::fit(const Cohort& train) {
    return Preprocessor(Equalizer::fit(train), feature_medians(train), train.n_binary);
}

std::vector<double> Preprocessor::model_input(const ObservationVector& imputed) const {
    std::vector<double> in;
    in.reserve(input_width());
    for (std::size_t c = 0; c < n_continuous(); ++c) in.push_back(equalizer_.apply(c, imputed.continuous[c]));
    in.insert(in.end(), imputed.binary.begin(), imputed.binary.end());
    return in;
}

std::array<double, 2> Preprocessor::equalize_action(const DoseAction& a) const {
    return {equalizer_.apply(equalizer_.vaso_feature(), a.vasopressor),
            equalizer_.apply(equalizer_.fluid_feature(), a.iv_fluid)};
}

DoseAction Preprocessor::raw_action(std::array<double, 2> equalized) const {
    for (double& u : equalized) {
        if (u < 0.0 || u > 1.0 || !std::isfinite(u)) {
            g_clamped_actions.fetch_add(1, std::memory_order_relaxed);
            u = std::isfinite(u) ? std::clamp(u, 0.0, 1.0) : 0.0;
        }
    }
    return {equalizer_.inverse(equalizer_.vaso_feature(), equalized[0]),
            equalizer_.inverse(equalizer_.fluid_feature(), equalized[1])};
}

PreparedAdmission Preprocessor::prepare(const Admission& admission) const {
    PreparedAdmission p;
    std::vector<ObservationVector> raw;
    raw.reserve(admission.length());
    for (const Step& s : admission.steps) raw.push_back(s.observation);
    const auto imputed = impute_sample_and_hold(raw, medians_);
    for (std::size_t t = 0; t < admission.length(); ++t) {
        const Step& s = admission.steps[t];
        p.inputs.push_back(model_input(imputed[t]));
        p.missing.emplace_back(s.observation.missing.begin(), s.observation.missing.end());
        p.actions.push_back(equalize_action(s.action));
        p.raw_actions.push_back(s.action);
        p.rewards.push_back(s.reward);
    }
    return p;
}

nn::ParamSet Preprocessor::to_params() const {
    nn::ParamSet ps;
    for (std::size_t f = 0; f < equalizer_.n_features(); ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "pre.eq.%04zu", f);
        ps.add(name, nn::Tensor::vector(equalizer_.reference(f)));
    }
    ps.add("pre.medians", nn::Tensor::vector(medians_));
    ps.add("pre.dims", nn::Tensor::vector({static_cast<double>(n_continuous()), static_cast<double>(n_binary_)}));
    return ps;
}

Preprocessor Preprocessor::from_params(const nn::ParamSet& params) {
    const auto& dims = params.at("pre.dims").data;
    const auto n_c = static_cast<std::size_t>(dims.at(0));
    const auto n_b = static_cast<std::size_t>(dims.at(1));
    std::vector<std::vector<double>> refs;
    for (std::size_t f = 0; f < n_c + 2; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "pre.eq.%04zu", f);
        refs.push_back(params.at(name).data);
    }
    return Preprocessor(Equalizer::from_references(n_c, std::move(refs)), params.at("pre.medians").data, n_b);
}

ObservationStream::ObservationStream(const Preprocessor& pre) : pre_(&pre), held_(pre.medians()) {}

std::vector<double> ObservationStream::push(const ObservationVector& raw) {
    ObservationVector filled = raw;
    for (std::size_t c = 0; c < held_.size(); ++c) {
        if (raw.missing[c]) {
            filled.continuous[c] = held_[c];
            filled.missing[c] = 0;
        } else {
            held_[c] = raw.continuous[c];
        }
    }
    return pre_->model_input(filled);
}

}  // namespace dosing
