#include "dosing/nn/tape.hpp"

#include <cmath>
#include <numbers>

namespace dosing::nn {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // ½·log(2π)

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

std::vector<double>& Tape::grad_of(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

void Tape::check_same(Var a, Var b, const char* what) const {
    if (nodes_[a.id].value.size() != nodes_[b.id].value.size()) {
        throw DimensionError(std::string(what) + ": operand sizes differ");
    }
}

double Tape::scalar(Var v) const {
    const auto& val = nodes_[v.id].value;
    if (val.size() != 1) throw DimensionError("scalar(): value is not a scalar");
    return val[0];
}

Var Tape::constant(std::vector<double> value) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::param(const ParamSet& params, const std::string& name) {
    if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var{it->second};
    const Tensor& t = params.at(name);
    Node n;
    n.op = Op::Param;
    n.value = t.data;
    n.rows = t.rows();
    n.cols = t.shape.size() == 2 ? t.shape[1] : 1;
    Var v = push(std::move(n));
    param_ids_.emplace(name, v.id);
    param_order_.emplace_back(name, v.id);
    return v;
}

Var Tape::matvec(Var w, Var x) {
    const Node& wn = nodes_[w.id];
    const auto& xv = nodes_[x.id].value;
    if (wn.cols != xv.size() || wn.rows * wn.cols != wn.value.size()) {
        throw DimensionError("matvec: weight columns do not match input width");
    }
    Node n;
    n.op = Op::MatVec;
    n.in[0] = w.id;
    n.in[1] = x.id;
    n.value.assign(wn.rows, 0.0);
    for (std::size_t r = 0; r < wn.rows; ++r) {
        const double* row = wn.value.data() + r * wn.cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < wn.cols; ++c) acc += row[c] * xv[c];
        n.value[r] = acc;
    }
    return push(std::move(n));
}

Var Tape::affine(Var w, Var x, Var b) {
    const Node& wn = nodes_[w.id];
    const auto& xv = nodes_[x.id].value;
    const auto& bv = nodes_[b.id].value;
    if (wn.cols != xv.size() || wn.rows * wn.cols != wn.value.size()) {
        throw DimensionError("affine: weight columns do not match input width");
    }
    if (bv.size() != wn.rows) throw DimensionError("affine: bias length does not match rows");
    Node n;
    n.op = Op::Affine;
    n.in[0] = w.id;
    n.in[1] = x.id;
    n.in[2] = b.id;
    n.value.assign(wn.rows, 0.0);
    for (std::size_t r = 0; r < wn.rows; ++r) {
        const double* row = wn.value.data() + r * wn.cols;
        double acc = bv[r];
        for (std::size_t c = 0; c < wn.cols; ++c) acc += row[c] * xv[c];
        n.value[r] = acc;
    }
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    check_same(a, b, "add");
    Node n;
    n.op = Op::Add;
    n.in[0] = a.id;
    n.in[1] = b.id;
    n.value = nodes_[a.id].value;
    const auto& bv = nodes_[b.id].value;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] += bv[i];
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    check_same(a, b, "sub");
    Node n;
    n.op = Op::Sub;
    n.in[0] = a.id;
    n.in[1] = b.id;
    n.value = nodes_[a.id].value;
    const auto& bv = nodes_[b.id].value;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] -= bv[i];
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    check_same(a, b, "mul");
    Node n;
    n.op = Op::Mul;
    n.in[0] = a.id;
    n.in[1] = b.id;
    n.value = nodes_[a.id].value;
    const auto& bv = nodes_[b.id].value;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] *= bv[i];
    return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
    Node n;
    n.op = Op::Scale;
    n.in[0] = a.id;
    n.c = c;
    n.value = nodes_[a.id].value;
    for (double& v : n.value) v *= c;
    return push(std::move(n));
}

Var Tape::add_const(Var a, double c) {
    Node n;
    n.op = Op::AddConst;
    n.in[0] = a.id;
    n.value = nodes_[a.id].value;
    for (double& v : n.value) v += c;
    return push(std::move(n));
}

Var Tape::relu(Var a) {
    Node n;
    n.op = Op::Relu;
    n.in[0] = a.id;
    n.value = nodes_[a.id].value;
    for (double& v : n.value) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
    Node n;
    n.op = Op::Sigmoid;
    n.in[0] = a.id;
    n.value = nodes_[a.id].value;
    for (double& v : n.value) v = stable_sigmoid(v);
    return push(std::move(n));
}

Var Tape::tanh(Var a) {
    Node n;
    n.op = Op::Tanh;
    n.in[0] = a.id;
    n.value = nodes_[a.id].value;
    for (double& v : n.value) v = std::tanh(v);
    return push(std::move(n));
}

Var Tape::exp(Var a) {
    Node n;
    n.op = Op::Exp;
    n.in[0] = a.id;
    n.value = nodes_[a.id].value;
    for (double& v : n.value) v = std::exp(v);
    return push(std::move(n));
}

Var Tape::square(Var a) {
    Node n;
    n.op = Op::Square;
    n.in[0] = a.id;
    n.value = nodes_[a.id].value;
    for (double& v : n.value) v = v * v;
    return push(std::move(n));
}

Var Tape::concat(std::span<const Var> parts) {
    Node n;
    n.op = Op::Concat;
    for (Var p : parts) {
        n.parts.push_back(p.id);
        const auto& pv = nodes_[p.id].value;
        n.value.insert(n.value.end(), pv.begin(), pv.end());
    }
    return push(std::move(n));
}

Var Tape::slice(Var a, std::size_t offset, std::size_t length) {
    const auto& av = nodes_[a.id].value;
    if (offset + length > av.size()) throw DimensionError("slice out of range");
    Node n;
    n.op = Op::Slice;
    n.in[0] = a.id;
    n.rows = offset;
    n.value.assign(av.begin() + static_cast<std::ptrdiff_t>(offset),
                   av.begin() + static_cast<std::ptrdiff_t>(offset + length));
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    Node n;
    n.op = Op::Sum;
    n.in[0] = a.id;
    double acc = 0.0;
    for (double v : nodes_[a.id].value) acc += v;
    n.value = {acc};
    return push(std::move(n));
}

Var Tape::gaussian_log_prob(Var x, Var mean, Var log_std, std::span<const double> missing_mask) {
    check_same(x, mean, "gaussian_log_prob");
    check_same(x, log_std, "gaussian_log_prob");
    const auto& xv = nodes_[x.id].value;
    if (!missing_mask.empty() && missing_mask.size() != xv.size()) {
        throw DimensionError("gaussian_log_prob: mask length mismatch");
    }
    const auto& mv = nodes_[mean.id].value;
    const auto& sv = nodes_[log_std.id].value;
    Node n;
    n.op = Op::GaussLogProb;
    n.in[0] = x.id;
    n.in[1] = mean.id;
    n.in[2] = log_std.id;
    n.aux.assign(missing_mask.begin(), missing_mask.end());
    double acc = 0.0;
    for (std::size_t d = 0; d < xv.size(); ++d) {
        if (!missing_mask.empty() && missing_mask[d] != 0.0) continue;
        const double u = (xv[d] - mv[d]) * std::exp(-sv[d]);
        acc += -sv[d] - kHalfLog2Pi - 0.5 * u * u;
    }
    n.value = {acc};
    return push(std::move(n));
}

Var Tape::kl_diag(Var mean_q, Var log_std_q, Var mean_p, Var log_std_p) {
    check_same(mean_q, log_std_q, "kl_diag");
    check_same(mean_q, mean_p, "kl_diag");
    check_same(mean_q, log_std_p, "kl_diag");
    const auto& mq = nodes_[mean_q.id].value;
    const auto& lq = nodes_[log_std_q.id].value;
    const auto& mp = nodes_[mean_p.id].value;
    const auto& lp = nodes_[log_std_p.id].value;
    Node n;
    n.op = Op::KlDiag;
    n.in[0] = mean_q.id;
    n.in[1] = log_std_q.id;
    n.in[2] = mean_p.id;
    n.in[3] = log_std_p.id;
    double acc = 0.0;
    for (std::size_t d = 0; d < mq.size(); ++d) {
        const double diff = mq[d] - mp[d];
        const double vp = std::exp(2.0 * lp[d]);
        acc += lp[d] - lq[d] + (std::exp(2.0 * lq[d]) + diff * diff) / (2.0 * vp) - 0.5;
    }
    n.value = {acc};
    return push(std::move(n));
}

Var Tape::bernoulli_log_prob(Var logits, std::span<const double> targets) {
    const auto& lv = nodes_[logits.id].value;
    if (targets.size() != lv.size()) throw DimensionError("bernoulli_log_prob: target length mismatch");
    Node n;
    n.op = Op::BernLogProb;
    n.in[0] = logits.id;
    n.aux.assign(targets.begin(), targets.end());
    double acc = 0.0;
    for (std::size_t d = 0; d < lv.size(); ++d) acc += targets[d] * lv[d] - softplus(lv[d]);
    n.value = {acc};
    return push(std::move(n));
}

void Tape::backward(Var loss) {
    if (nodes_[loss.id].value.size() != 1) throw DimensionError("backward: loss must be scalar");
    grad_of(loss.id)[0] += 1.0;
    for (int id = loss.id; id >= 0; --id) {
        if (nodes_[id].grad.empty()) continue;
        Node& n = nodes_[id];
        const std::vector<double>& g = n.grad;
        switch (n.op) {
            case Op::Leaf:
            case Op::Param:
                break;
            case Op::MatVec:
            case Op::Affine: {
                const Node& wn = nodes_[n.in[0]];
                const auto& xv = nodes_[n.in[1]].value;
                auto& gw = grad_of(n.in[0]);
                auto& gx = grad_of(n.in[1]);
                for (std::size_t r = 0; r < wn.rows; ++r) {
                    const double gr = g[r];
                    if (gr == 0.0) continue;
                    const double* row = wn.value.data() + r * wn.cols;
                    double* gwrow = gw.data() + r * wn.cols;
                    for (std::size_t c = 0; c < wn.cols; ++c) {
                        gwrow[c] += gr * xv[c];
                        gx[c] += gr * row[c];
                    }
                }
                if (n.op == Op::Affine) {
                    auto& gb = grad_of(n.in[2]);
                    for (std::size_t r = 0; r < g.size(); ++r) gb[r] += g[r];
                }
                break;
            }
            case Op::Add: {
                auto& ga = grad_of(n.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                auto& gb = grad_of(n.in[1]);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                break;
            }
            case Op::Sub: {
                auto& ga = grad_of(n.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                auto& gb = grad_of(n.in[1]);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                break;
            }
            case Op::Mul: {
                const auto& av = nodes_[n.in[0]].value;
                const auto& bv = nodes_[n.in[1]].value;
                auto& ga = grad_of(n.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                auto& gb = grad_of(n.in[1]);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                break;
            }
            case Op::Scale: {
                auto& ga = grad_of(n.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.c;
                break;
            }
            case Op::AddConst: {
                auto& ga = grad_of(n.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                break;
            }
            case Op::Relu: {
                const auto& av = nodes_[n.in[0]].value;
                auto& ga = grad_of(n.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (av[i] > 0.0) ga[i] += g[i];
                }
                break;
            }
            case Op::Sigmoid: {
                auto& ga = grad_of(n.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
                }
                break;
            }
            case Op::Tanh: {
                auto& ga = grad_of(n.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
                }
                break;
            }
            case Op::Exp: {
                auto& ga = grad_of(n.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value[i];
                break;
            }
            case Op::Square: {
                const auto& av = nodes_[n.in[0]].value;
                auto& ga = grad_of(n.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * g[i] * av[i];
                break;
            }
            case Op::Concat: {
                std::size_t off = 0;
                for (int p : n.parts) {
                    auto& gp = grad_of(p);
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                    off += gp.size();
                }
                break;
            }
            case Op::Slice: {
                auto& ga = grad_of(n.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[n.rows + i] += g[i];
                break;
            }
            case Op::Sum: {
                auto& ga = grad_of(n.in[0]);
                for (double& v : ga) v += g[0];
                break;
            }
            case Op::GaussLogProb: {
                const auto& xv = nodes_[n.in[0]].value;
                const auto& mv = nodes_[n.in[1]].value;
                const auto& sv = nodes_[n.in[2]].value;
                auto& gx = grad_of(n.in[0]);
                auto& gm = grad_of(n.in[1]);
                auto& gs = grad_of(n.in[2]);
                for (std::size_t d = 0; d < xv.size(); ++d) {
                    if (!n.aux.empty() && n.aux[d] != 0.0) continue;
                    const double inv_sigma = std::exp(-sv[d]);
                    const double u = (xv[d] - mv[d]) * inv_sigma;
                    gx[d] += g[0] * (-u * inv_sigma);
                    gm[d] += g[0] * (u * inv_sigma);
                    gs[d] += g[0] * (u * u - 1.0);
                }
                break;
            }
            case Op::KlDiag: {
                const auto& mq = nodes_[n.in[0]].value;
                const auto& lq = nodes_[n.in[1]].value;
                const auto& mp = nodes_[n.in[2]].value;
                const auto& lp = nodes_[n.in[3]].value;
                auto& gmq = grad_of(n.in[0]);
                auto& glq = grad_of(n.in[1]);
                auto& gmp = grad_of(n.in[2]);
                auto& glp = grad_of(n.in[3]);
                for (std::size_t d = 0; d < mq.size(); ++d) {
                    const double diff = mq[d] - mp[d];
                    const double vp = std::exp(2.0 * lp[d]);
                    const double vq = std::exp(2.0 * lq[d]);
                    gmq[d] += g[0] * diff / vp;
                    gmp[d] -= g[0] * diff / vp;
                    glq[d] += g[0] * (vq / vp - 1.0);
                    glp[d] += g[0] * (1.0 - (vq + diff * diff) / vp);
                }
                break;
            }
            case Op::BernLogProb: {
                const auto& lv = nodes_[n.in[0]].value;
                auto& gl = grad_of(n.in[0]);
                for (std::size_t d = 0; d < lv.size(); ++d) gl[d] += g[0] * (n.aux[d] - stable_sigmoid(lv[d]));
                break;
            }
        }
    }
}

GradSet Tape::gradients(const ParamSet& params) const {
    GradSet out;
    for (const auto& [name, t] : params) {
        Tensor g = Tensor::zeros(t.shape);
        if (auto it = param_ids_.find(name); it != param_ids_.end()) {
            const auto& src = nodes_[it->second].grad;
            if (!src.empty()) g.data = src;
        }
        out.add(name, std::move(g));
    }
    return out;
}

}  // namespace dosing::nn
