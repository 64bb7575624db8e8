#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "dosing/nn/tensor.hpp"
#include "dosing/preprocess.hpp"
#include "dosing/sim.hpp"

namespace testing_util {

inline dosing::SimConfig small_sim() {
    dosing::SimConfig c;
    c.horizon = 24;
    c.finalize();
    return c;
}

inline dosing::Cohort small_cohort(std::size_t n, std::uint64_t seed = 1) {
    const auto cfg = small_sim();
    dosing::Simulator sim(cfg);
    dosing::ScriptedClinician clin(cfg);
    return dosing::simulate_cohort(sim, clin, n, seed);
}

// Largest relative error |a - n| / max(1e-8, |a| + |n|) between analytic gradients and
// central differences of `loss` over every parameter entry.
inline double max_gradcheck_error(dosing::nn::ParamSet& params, const dosing::nn::GradSet& analytic,
                                  const std::function<double()>& loss, double h = 1e-5) {
    double worst = 0.0;
    for (auto& [name, t] : params) {
        const auto& g = analytic.at(name).data;
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            const double keep = t.data[i];
            t.data[i] = keep + h;
            const double up = loss();
            t.data[i] = keep - h;
            const double down = loss();
            t.data[i] = keep;
            const double numeric = (up - down) / (2 * h);
            const double denom = std::max(1e-8, std::abs(g[i]) + std::abs(numeric));
            const double abs_err = std::abs(g[i] - numeric);
            if (abs_err < 1e-9) continue;  // both ~0
            worst = std::max(worst, abs_err / denom);
        }
    }
    return worst;
}

}  // namespace testing_util
