#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dosing/nn/tensor.hpp"

namespace dosing::nn {

/// Handle to a value recorded on a Tape.
struct Var {
    int id = -1;
};

/// Reverse-mode gradient tape for the fixed set of vector operations the models here use.
///
/// Every value is a flat vector; weight matrices enter only through `param` and are
/// consumed by `affine`/`matvec`. A tape is single-use: record a forward pass, call
/// `backward` once on a scalar, then read `gradients()`.
class Tape {
  public:
    Var constant(std::vector<double> value);
    Var constant(std::span<const double> value) {
        return constant(std::vector<double>(value.begin(), value.end()));
    }
    /// Leaf bound to a parameter; repeated calls with the same name return the same node.
    Var param(const ParamSet& params, const std::string& name);

    Var matvec(Var w, Var x);
    Var affine(Var w, Var x, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var add_const(Var a, double c);
    Var relu(Var a);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var exp(Var a);
    Var square(Var a);
    Var concat(std::span<const Var> parts);
    Var concat(std::initializer_list<Var> parts) {
        return concat(std::span<const Var>(parts.begin(), parts.size()));
    }
    Var slice(Var a, std::size_t offset, std::size_t length);
    Var sum(Var a);

    /// Σ_d [-log_std - ½log 2π - ½((x-μ)/σ)²], skipping entries with mask != 0.
    Var gaussian_log_prob(Var x, Var mean, Var log_std, std::span<const double> missing_mask = {});
    /// KL(N(mq, e^{lsq}) || N(mp, e^{lsp})) summed over dimensions.
    Var kl_diag(Var mean_q, Var log_std_q, Var mean_p, Var log_std_p);
    /// Σ_d [y log σ(l) + (1-y) log(1-σ(l))] for fixed targets y.
    Var bernoulli_log_prob(Var logits, std::span<const double> targets);

    const std::vector<double>& value(Var v) const { return nodes_[v.id].value; }
    double scalar(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    void backward(Var loss);
    /// Gradients of every parameter referenced on this tape; zero where unused.
    GradSet gradients(const ParamSet& params) const;

  private:
    enum class Op {
        Leaf, Param, MatVec, Affine, Add, Sub, Mul, Scale, AddConst, Relu, Sigmoid, Tanh,
        Exp, Square, Concat, Slice, Sum, GaussLogProb, KlDiag, BernLogProb
    };
    struct Node {
        Op op = Op::Leaf;
        int in[4] = {-1, -1, -1, -1};
        std::vector<int> parts;
        std::vector<double> aux;
        double c = 0.0;
        std::size_t rows = 0, cols = 0;
        std::vector<double> value;
        std::vector<double> grad;
    };

    Var push(Node node);
    std::vector<double>& grad_of(int id);
    void check_same(Var a, Var b, const char* what) const;

    std::vector<Node> nodes_;
    std::unordered_map<std::string, int> param_ids_;
    std::vector<std::pair<std::string, int>> param_order_;
};

}  // namespace dosing::nn
