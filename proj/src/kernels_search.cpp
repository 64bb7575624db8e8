#include "dosing/kernels.hpp"
#include "dosing/tree_search.hpp"

namespace dosing::kernels {

std::vector<double> search_targets(const std::vector<const std::vector<double>*>& roots, const SearchModels& models,
                                   const SearchBudget& budget, std::uint64_t seed) {
    std::vector<double> out(roots.size());
    const auto count = static_cast<std::int64_t>(roots.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t j = 0; j < count; ++j) {
        Rng rng = stream_rng(seed, static_cast<std::uint64_t>(j));
        out[j] = search_value(*roots[j], models, budget, rng);
    }
    return out;
}

namespace serial {

std::vector<double> search_targets(const std::vector<const std::vector<double>*>& roots, const SearchModels& models,
                                   const SearchBudget& budget, std::uint64_t seed) {
    std::vector<double> out;
    out.reserve(roots.size());
    for (std::size_t j = 0; j < roots.size(); ++j) {
        Rng rng = stream_rng(seed, j);
        out.push_back(search_value(*roots[j], models, budget, rng));
    }
    return out;
}

}  // namespace serial

}  // namespace dosing::kernels
