#pragma once

#include <span>
#include <string>
#include <vector>

#include "dosing/nn/rng.hpp"
#include "dosing/nn/tape.hpp"
#include "dosing/nn/tensor.hpp"

namespace dosing::nn {

/// Two-layer perceptron `prefix.{w1,b1,w2,b2}`: out = W2·relu(W1·x + b1) + b2.
struct MlpShape {
    std::size_t in = 0;
    std::size_t hidden = 0;
    std::size_t out = 0;
};

void add_mlp(ParamSet& params, const std::string& prefix, MlpShape shape, Rng& rng, double gain = 1.0);
MlpShape mlp_shape(const ParamSet& params, const std::string& prefix);
Var mlp_forward(Tape& tape, const ParamSet& params, const std::string& prefix, Var input);
std::vector<double> mlp_apply(const ParamSet& params, const std::string& prefix,
                              std::span<const double> input);

/// Single affine layer `prefix.{w,b}`.
void add_linear(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                double gain = 1.0);
Var linear_forward(Tape& tape, const ParamSet& params, const std::string& prefix, Var input);
std::vector<double> linear_apply(const ParamSet& params, const std::string& prefix, std::span<const double> input);

/// lo + (hi - lo)·σ(raw): keeps a log-scale head inside [lo, hi] with nonzero gradient.
Var soft_bound(Tape& tape, Var raw, double lo, double hi);
double soft_bound(double raw, double lo, double hi);

/// GRU cell `prefix.{wz,uz,bz,wr,ur,br,wh,uh,bh}`, single bias per gate:
///   z  = σ(Wz·x + Uz·h + bz)
///   r  = σ(Wr·x + Ur·h + br)
///   ĥ  = tanh(Wh·x + Uh·(r ⊙ h) + bh)
///   h' = (1 - z) ⊙ h + z ⊙ ĥ
void add_gru(ParamSet& params, const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng);
std::size_t gru_hidden(const ParamSet& params, const std::string& prefix);
Var gru_forward(Tape& tape, const ParamSet& params, const std::string& prefix, Var input, Var hidden);
std::vector<double> gru_apply(const ParamSet& params, const std::string& prefix,
                              std::span<const double> input, std::span<const double> hidden);

/// rows×cols matrix with orthonormal rows (rows ≤ cols) or columns (rows > cols), scaled by gain.
Tensor orthogonal_init(std::size_t rows, std::size_t cols, double gain, Rng& rng);

double gaussian_log_prob(std::span<const double> x, std::span<const double> mean,
                         std::span<const double> log_std);
std::vector<double> gaussian_sample(std::span<const double> mean, std::span<const double> log_std,
                                    std::span<const double> noise);
double kl_diag_gaussian(std::span<const double> mean_q, std::span<const double> log_std_q,
                        std::span<const double> mean_p, std::span<const double> log_std_p);

double sigmoid(double x);
double log_sigmoid(double x);
/// log Σ exp(v), stable.
double log_sum_exp(std::span<const double> v);

}  // namespace dosing::nn
