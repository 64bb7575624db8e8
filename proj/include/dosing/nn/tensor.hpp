#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dosing::nn {

class DimensionError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of doubles. Rank 1 for vectors, rank 2 for weight matrices.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

    static Tensor zeros(std::vector<std::size_t> shape_);
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool operator==(const Tensor&) const = default;
};

std::size_t shape_volume(const std::vector<std::size_t>& shape);

/// Named tensors with sorted (stable) iteration order. Also used to hold gradients.
class ParamSet {
  public:
    using Map = std::map<std::string, Tensor>;

    void add(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    /// Replaces values of an existing entry; the shape must match.
    void assign(const std::string& name, const Tensor& value);

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::size_t parameter_count() const;

    Map::const_iterator begin() const { return entries_.begin(); }
    Map::const_iterator end() const { return entries_.end(); }
    Map::iterator begin() { return entries_.begin(); }
    Map::iterator end() { return entries_.end(); }

    /// Same names and shapes, all zeros.
    ParamSet zeros_like() const;
    /// Entries whose name starts with `prefix`.
    ParamSet subset(const std::string& prefix) const;
    /// Copies every entry of `other` in (names must not collide).
    void merge(const ParamSet& other);

    bool operator==(const ParamSet&) const = default;

  private:
    Map entries_;
};

using GradSet = ParamSet;

/// grads += other, entry by entry in name order.
void accumulate(GradSet& grads, const GradSet& other, double scale = 1.0);
double global_norm(const GradSet& grads);
bool all_finite(const ParamSet& params);

}  // namespace dosing::nn
