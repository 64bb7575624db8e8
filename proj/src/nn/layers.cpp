#include "dosing/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dosing::nn {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

void affine_into(const Tensor& w, const Tensor& b, std::span<const double> x, std::vector<double>& out) {
    const std::size_t rows = w.rows(), cols = w.cols();
    if (cols != x.size()) throw DimensionError("affine: weight columns do not match input width");
    out.assign(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = w.data.data() + r * cols;
        double acc = b.data[r];
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        out[r] = acc;
    }
}

void matvec_add(const Tensor& w, std::span<const double> x, std::vector<double>& acc) {
    const std::size_t rows = w.rows(), cols = w.cols();
    if (cols != x.size()) throw DimensionError("matvec: weight columns do not match input width");
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = w.data.data() + r * cols;
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
        acc[r] += s;
    }
}

}  // namespace

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log_sigmoid(double x) { return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)))); }

double log_sum_exp(std::span<const double> v) {
    if (v.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

Tensor orthogonal_init(std::size_t rows, std::size_t cols, double gain, Rng& rng) {
    // Orthonormalize the shorter dimension's vectors (Gram-Schmidt, two passes).
    const bool by_rows = rows <= cols;
    const std::size_t count = by_rows ? rows : cols;
    const std::size_t len = by_rows ? cols : rows;
    std::vector<std::vector<double>> vecs(count, std::vector<double>(len));
    for (auto& v : vecs) {
        for (double& x : v) x = standard_normal(rng);
    }
    for (std::size_t i = 0; i < count; ++i) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t j = 0; j < i; ++j) {
                double dot = 0.0;
                for (std::size_t k = 0; k < len; ++k) dot += vecs[i][k] * vecs[j][k];
                for (std::size_t k = 0; k < len; ++k) vecs[i][k] -= dot * vecs[j][k];
            }
        }
        double norm = 0.0;
        for (double x : vecs[i]) norm += x * x;
        norm = std::sqrt(norm);
        for (double& x : vecs[i]) x /= norm;
    }
    Tensor w = Tensor::zeros({rows, cols});
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t k = 0; k < len; ++k) {
            if (by_rows) {
                w.at(i, k) = gain * vecs[i][k];
            } else {
                w.at(k, i) = gain * vecs[i][k];
            }
        }
    }
    return w;
}

void add_mlp(ParamSet& params, const std::string& prefix, MlpShape shape, Rng& rng, double gain) {
    params.add(prefix + ".w1", orthogonal_init(shape.hidden, shape.in, gain, rng));
    params.add(prefix + ".b1", Tensor::zeros({shape.hidden}));
    params.add(prefix + ".w2", orthogonal_init(shape.out, shape.hidden, gain, rng));
    params.add(prefix + ".b2", Tensor::zeros({shape.out}));
}

MlpShape mlp_shape(const ParamSet& params, const std::string& prefix) {
    const Tensor& w1 = params.at(prefix + ".w1");
    const Tensor& w2 = params.at(prefix + ".w2");
    return {w1.cols(), w1.rows(), w2.rows()};
}

Var mlp_forward(Tape& tape, const ParamSet& params, const std::string& prefix, Var input) {
    Var h = tape.relu(tape.affine(tape.param(params, prefix + ".w1"), input, tape.param(params, prefix + ".b1")));
    return tape.affine(tape.param(params, prefix + ".w2"), h, tape.param(params, prefix + ".b2"));
}

std::vector<double> mlp_apply(const ParamSet& params, const std::string& prefix, std::span<const double> input) {
    std::vector<double> hidden, out;
    affine_into(params.at(prefix + ".w1"), params.at(prefix + ".b1"), input, hidden);
    for (double& v : hidden) v = v > 0.0 ? v : 0.0;
    affine_into(params.at(prefix + ".w2"), params.at(prefix + ".b2"), hidden, out);
    return out;
}

void add_linear(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                double gain) {
    params.add(prefix + ".w", orthogonal_init(out, in, gain, rng));
    params.add(prefix + ".b", Tensor::zeros({out}));
}

Var linear_forward(Tape& tape, const ParamSet& params, const std::string& prefix, Var input) {
    return tape.affine(tape.param(params, prefix + ".w"), input, tape.param(params, prefix + ".b"));
}

std::vector<double> linear_apply(const ParamSet& params, const std::string& prefix, std::span<const double> input) {
    std::vector<double> out;
    affine_into(params.at(prefix + ".w"), params.at(prefix + ".b"), input, out);
    return out;
}

Var soft_bound(Tape& tape, Var raw, double lo, double hi) {
    return tape.add_const(tape.scale(tape.sigmoid(raw), hi - lo), lo);
}

double soft_bound(double raw, double lo, double hi) { return lo + (hi - lo) * sigmoid(raw); }

void add_gru(ParamSet& params, const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng) {
    for (const char* gate : {"z", "r", "h"}) {
        params.add(prefix + ".w" + gate, orthogonal_init(hidden, input, 1.0, rng));
        params.add(prefix + ".u" + gate, orthogonal_init(hidden, hidden, 1.0, rng));
        params.add(prefix + ".b" + gate, Tensor::zeros({hidden}));
    }
}

std::size_t gru_hidden(const ParamSet& params, const std::string& prefix) {
    return params.at(prefix + ".bz").size();
}

Var gru_forward(Tape& tape, const ParamSet& params, const std::string& prefix, Var input, Var hidden) {
    auto p = [&](const char* name) { return tape.param(params, prefix + name); };
    Var z = tape.sigmoid(tape.add(tape.affine(p(".wz"), input, p(".bz")), tape.matvec(p(".uz"), hidden)));
    Var r = tape.sigmoid(tape.add(tape.affine(p(".wr"), input, p(".br")), tape.matvec(p(".ur"), hidden)));
    Var cand = tape.tanh(
        tape.add(tape.affine(p(".wh"), input, p(".bh")), tape.matvec(p(".uh"), tape.mul(r, hidden))));
    return tape.add(hidden, tape.mul(z, tape.sub(cand, hidden)));
}

std::vector<double> gru_apply(const ParamSet& params, const std::string& prefix, std::span<const double> input,
                              std::span<const double> hidden) {
    const std::size_t n = gru_hidden(params, prefix);
    if (hidden.size() != n) throw DimensionError("gru: hidden width mismatch");
    std::vector<double> z, r, cand;
    affine_into(params.at(prefix + ".wz"), params.at(prefix + ".bz"), input, z);
    matvec_add(params.at(prefix + ".uz"), hidden, z);
    affine_into(params.at(prefix + ".wr"), params.at(prefix + ".br"), input, r);
    matvec_add(params.at(prefix + ".ur"), hidden, r);
    std::vector<double> rh(n);
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = sigmoid(z[i]);
        rh[i] = sigmoid(r[i]) * hidden[i];
    }
    affine_into(params.at(prefix + ".wh"), params.at(prefix + ".bh"), input, cand);
    matvec_add(params.at(prefix + ".uh"), rh, cand);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = hidden[i] + z[i] * (std::tanh(cand[i]) - hidden[i]);
    return out;
}

double gaussian_log_prob(std::span<const double> x, std::span<const double> mean, std::span<const double> log_std) {
    if (x.size() != mean.size() || x.size() != log_std.size()) {
        throw DimensionError("gaussian_log_prob: shape mismatch");
    }
    double acc = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
        const double u = (x[d] - mean[d]) * std::exp(-log_std[d]);
        acc += -log_std[d] - kHalfLog2Pi - 0.5 * u * u;
    }
    return acc;
}

std::vector<double> gaussian_sample(std::span<const double> mean, std::span<const double> log_std,
                                    std::span<const double> noise) {
    if (mean.size() != log_std.size() || mean.size() != noise.size()) {
        throw DimensionError("gaussian_sample: shape mismatch");
    }
    std::vector<double> out(mean.size());
    for (std::size_t d = 0; d < mean.size(); ++d) out[d] = mean[d] + std::exp(log_std[d]) * noise[d];
    return out;
}

double kl_diag_gaussian(std::span<const double> mean_q, std::span<const double> log_std_q,
                        std::span<const double> mean_p, std::span<const double> log_std_p) {
    if (mean_q.size() != log_std_q.size() || mean_q.size() != mean_p.size() ||
        mean_q.size() != log_std_p.size()) {
        throw DimensionError("kl_diag_gaussian: shape mismatch");
    }
    double acc = 0.0;
    for (std::size_t d = 0; d < mean_q.size(); ++d) {
        const double diff = mean_q[d] - mean_p[d];
        const double vp = std::exp(2.0 * log_std_p[d]);
        acc += log_std_p[d] - log_std_q[d] + (std::exp(2.0 * log_std_q[d]) + diff * diff) / (2.0 * vp) - 0.5;
    }
    return acc;
}

}  // namespace dosing::nn
