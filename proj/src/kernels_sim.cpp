#include "dosing/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dosing/sim.hpp"

namespace dosing::kernels {

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

std::vector<Admission> simulate_batch(const Simulator& sim, const SimPolicy& policy, std::size_t n,
                                      std::uint64_t seed) {
    std::vector<Admission> out(n);
    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t i = 0; i < count; ++i) {
        Rng rng = stream_rng(seed, static_cast<std::uint64_t>(i));
        out[i] = sim.simulate_admission(policy, rng, admission_id(static_cast<std::size_t>(i)));
    }
    return out;
}

std::vector<double> rollout_returns(const Simulator& sim, const SimPolicy& policy, std::size_t n,
                                    std::uint64_t seed) {
    std::vector<double> out(n);
    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t i = 0; i < count; ++i) {
        Rng rng = stream_rng(seed, static_cast<std::uint64_t>(i));
        out[i] = sim.rollout_return(policy, rng);
    }
    return out;
}

namespace serial {

std::vector<Admission> simulate_batch(const Simulator& sim, const SimPolicy& policy, std::size_t n,
                                      std::uint64_t seed) {
    std::vector<Admission> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = stream_rng(seed, i);
        out.push_back(sim.simulate_admission(policy, rng, admission_id(i)));
    }
    return out;
}

std::vector<double> rollout_returns(const Simulator& sim, const SimPolicy& policy, std::size_t n,
                                    std::uint64_t seed) {
    std::vector<double> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = stream_rng(seed, i);
        out.push_back(sim.rollout_return(policy, rng));
    }
    return out;
}

}  // namespace serial

}  // namespace dosing::kernels
