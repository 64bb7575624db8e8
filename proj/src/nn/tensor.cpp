#include "dosing/nn/tensor.hpp"

#include <cmath>
#include <numeric>

namespace dosing::nn {

std::size_t shape_volume(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    if (shape_volume(shape) != data.size()) {
        throw DimensionError("tensor data length does not match shape");
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape_) {
    const auto n = shape_volume(shape_);
    return Tensor(std::move(shape_), std::vector<double>(n, 0.0));
}

Tensor Tensor::vector(std::vector<double> values) {
    const auto n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

void ParamSet::add(const std::string& name, Tensor value) {
    if (!entries_.emplace(name, std::move(value)).second) {
        throw std::invalid_argument("duplicate parameter name: " + name);
    }
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

void ParamSet::assign(const std::string& name, const Tensor& value) {
    Tensor& dst = at(name);
    if (dst.shape != value.shape) throw DimensionError("shape mismatch assigning " + name);
    dst.data = value.data;
}

std::size_t ParamSet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (const auto& [name, t] : entries_) out.add(name, Tensor::zeros(t.shape));
    return out;
}

ParamSet ParamSet::subset(const std::string& prefix) const {
    ParamSet out;
    for (const auto& [name, t] : entries_) {
        if (name.rfind(prefix, 0) == 0) out.add(name, t);
    }
    return out;
}

void ParamSet::merge(const ParamSet& other) {
    for (const auto& [name, t] : other) add(name, t);
}

void accumulate(GradSet& grads, const GradSet& other, double scale) {
    for (const auto& [name, t] : other) {
        if (!grads.contains(name)) {
            Tensor scaled = t;
            for (double& v : scaled.data) v *= scale;
            grads.add(name, std::move(scaled));
            continue;
        }
        Tensor& dst = grads.at(name);
        if (dst.shape != t.shape) throw DimensionError("gradient shape mismatch: " + name);
        for (std::size_t i = 0; i < t.size(); ++i) dst.data[i] += scale * t.data[i];
    }
}

double global_norm(const GradSet& grads) {
    double sq = 0.0;
    for (const auto& [_, t] : grads) {
        for (double v : t.data) sq += v * v;
    }
    return std::sqrt(sq);
}

bool all_finite(const ParamSet& params) {
    for (const auto& [_, t] : params) {
        for (double v : t.data) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

}  // namespace dosing::nn
