#include "dosing/kernels.hpp"

namespace dosing::kernels {

namespace {

LossGradient reduce_in_order(std::vector<LossGradient>& parts) {
    LossGradient total;
    for (auto& part : parts) {
        total.loss += part.loss;
        total.count += part.count;
        if (part.grads.empty()) continue;
        if (total.grads.empty()) {
            total.grads = std::move(part.grads);
        } else {
            nn::accumulate(total.grads, part.grads);
        }
    }
    return total;
}

}  // namespace

LossGradient sum_loss_gradients(std::size_t n, const LossGradientFn& item) {
    std::vector<LossGradient> parts(n);
    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < count; ++i) parts[i] = item(static_cast<std::size_t>(i));
    return reduce_in_order(parts);
}

std::vector<double> map_indices(std::size_t n, const std::function<double(std::size_t)>& fn) {
    std::vector<double> out(n);
    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 4)
    for (std::int64_t i = 0; i < count; ++i) out[i] = fn(static_cast<std::size_t>(i));
    return out;
}

void for_each_index(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
}

namespace serial {

LossGradient sum_loss_gradients(std::size_t n, const LossGradientFn& item) {
    std::vector<LossGradient> parts;
    parts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) parts.push_back(item(i));
    return reduce_in_order(parts);
}

std::vector<double> map_indices(std::size_t n, const std::function<double(std::size_t)>& fn) {
    std::vector<double> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(fn(i));
    return out;
}

void for_each_index(std::size_t n, const std::function<void(std::size_t)>& fn) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
}

}  // namespace serial

}  // namespace dosing::kernels
