#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "dosing/nn/checkpoint.hpp"
#include "dosing/nn/layers.hpp"
#include "dosing/nn/optim.hpp"
#include "dosing/nn/tape.hpp"
#include "helpers.hpp"

using namespace dosing;
using namespace dosing::nn;

namespace {

std::vector<double> randn(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = standard_normal(rng);
    return v;
}

// Plain loops, no shared code with the library.
std::vector<double> ref_matvec(const Tensor& w, const std::vector<double>& x) {
    std::vector<double> y(w.rows(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r)
        for (std::size_t c = 0; c < w.cols(); ++c) y[r] += w.data[r * w.cols() + c] * x[c];
    return y;
}

double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("mlp forward: zero weights give the output bias") {
    Rng rng = stream_rng(1, 0);
    ParamSet p;
    add_mlp(p, "m", {3, 4, 2}, rng);
    for (auto& [name, t] : p) std::fill(t.data.begin(), t.data.end(), 0.0);
    p.at("m.b2").data = {1.5, -2.0};
    const auto out = mlp_apply(p, "m", std::vector<double>{3.0, -1.0, 7.0});
    CHECK(out == std::vector<double>{1.5, -2.0});
}

TEST_CASE("mlp forward: identity layers apply relu") {
    ParamSet p;
    p.add("m.w1", Tensor::matrix(2, 2, {1, 0, 0, 1}));
    p.add("m.b1", Tensor::vector({0, 0}));
    p.add("m.w2", Tensor::matrix(2, 2, {1, 0, 0, 1}));
    p.add("m.b2", Tensor::vector({0, 0}));
    CHECK(mlp_apply(p, "m", std::vector<double>{-1.0, 2.0}) == std::vector<double>{0.0, 2.0});
}

TEST_CASE("mlp forward matches an independent matrix routine") {
    Rng rng = stream_rng(2, 0);
    ParamSet p;
    add_mlp(p, "m", {5, 7, 3}, rng);
    for (auto& [name, t] : p) t.data = randn(t.size(), rng);
    const auto x = randn(5, rng);
    auto h = ref_matvec(p.at("m.w1"), x);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::max(0.0, h[i] + p.at("m.b1").data[i]);
    auto y = ref_matvec(p.at("m.w2"), h);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += p.at("m.b2").data[i];
    const auto got = mlp_apply(p, "m", x);
    Tape tape;
    const auto taped = tape.value(mlp_forward(tape, p, "m", tape.constant(x)));
    for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(got[i] == doctest::Approx(y[i]).epsilon(1e-12));
        CHECK(taped[i] == got[i]);
    }
}

TEST_CASE("mlp forward rejects a wrong input width") {
    Rng rng = stream_rng(3, 0);
    ParamSet p;
    add_mlp(p, "m", {3, 4, 2}, rng);
    CHECK_THROWS_AS(mlp_apply(p, "m", std::vector<double>{1.0, 2.0}), DimensionError);
}

TEST_CASE("gru: zero parameters keep a zero state") {
    Rng rng = stream_rng(4, 0);
    ParamSet p;
    add_gru(p, "g", 3, 4, rng);
    for (auto& [name, t] : p) std::fill(t.data.begin(), t.data.end(), 0.0);
    const auto h = gru_apply(p, "g", std::vector<double>{0.3, -2.0, 1.0}, std::vector<double>(4, 0.0));
    for (double v : h) CHECK(v == 0.0);
}

TEST_CASE("gru: a closed update gate carries the state") {
    Rng rng = stream_rng(5, 0);
    ParamSet p;
    add_gru(p, "g", 3, 4, rng);
    std::fill(p.at("g.bz").data.begin(), p.at("g.bz").data.end(), -1e3);
    const std::vector<double> h0{0.1, -0.4, 0.7, 0.2};
    const auto h = gru_apply(p, "g", std::vector<double>{1.0, 2.0, -1.0}, h0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(h[i] == doctest::Approx(h0[i]).epsilon(1e-12));
}

TEST_CASE("gru matches a scalar reference cell") {
    Rng rng = stream_rng(6, 0);
    ParamSet p;
    const std::size_t I = 3, H = 5;
    add_gru(p, "g", I, H, rng);
    for (auto& [name, t] : p) t.data = randn(t.size(), rng);
    const auto x = randn(I, rng), h = randn(H, rng);
    auto W = [&](const char* n, std::size_t r, std::size_t c) { return p.at(std::string("g.") + n).at(r, c); };
    auto B = [&](const char* n, std::size_t r) { return p.at(std::string("g.") + n).data[r]; };
    std::vector<double> z(H), r(H), expect(H);
    for (std::size_t i = 0; i < H; ++i) {
        double az = B("bz", i), ar = B("br", i);
        for (std::size_t j = 0; j < I; ++j) az += W("wz", i, j) * x[j], ar += W("wr", i, j) * x[j];
        for (std::size_t j = 0; j < H; ++j) az += W("uz", i, j) * h[j], ar += W("ur", i, j) * h[j];
        z[i] = ref_sigmoid(az);
        r[i] = ref_sigmoid(ar);
    }
    for (std::size_t i = 0; i < H; ++i) {
        double ah = B("bh", i);
        for (std::size_t j = 0; j < I; ++j) ah += W("wh", i, j) * x[j];
        for (std::size_t j = 0; j < H; ++j) ah += W("uh", i, j) * r[j] * h[j];
        expect[i] = (1 - z[i]) * h[i] + z[i] * std::tanh(ah);
    }
    const auto got = gru_apply(p, "g", x, h);
    for (std::size_t i = 0; i < H; ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("gaussian log prob") {
    const double half_log_2pi = 0.5 * std::log(2 * std::numbers::pi);
    CHECK(gaussian_log_prob(std::vector<double>{0.7}, std::vector<double>{0.7}, std::vector<double>{0.0}) ==
          doctest::Approx(-0.918939).epsilon(1e-6));
    CHECK(gaussian_log_prob(std::vector<double>(6, 1.0), std::vector<double>(6, 1.0), std::vector<double>(6, 0.0)) ==
          doctest::Approx(-6 * half_log_2pi).epsilon(1e-14));
    Rng rng = stream_rng(7, 0);
    const auto x = randn(5, rng), m = randn(5, rng), ls = randn(5, rng);
    double expect = 0.0;
    for (int d = 0; d < 5; ++d) {
        const double s = std::exp(ls[d]);
        expect += std::log(1.0 / (s * std::sqrt(2 * std::numbers::pi))) - (x[d] - m[d]) * (x[d] - m[d]) / (2 * s * s);
    }
    CHECK(gaussian_log_prob(x, m, ls) == doctest::Approx(expect).epsilon(1e-12));
    Tape tape;
    CHECK(tape.scalar(tape.gaussian_log_prob(tape.constant(x), tape.constant(m), tape.constant(ls))) ==
          doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("gaussian sample") {
    const std::vector<double> m{1.0, -2.0}, ls{0.3, -0.5};
    CHECK(gaussian_sample(m, ls, std::vector<double>{0.0, 0.0}) == m);
    const auto s = gaussian_sample(m, std::vector<double>{0.0, 0.0}, std::vector<double>{0.25, -1.0});
    CHECK(s[0] == 1.25);
    CHECK(s[1] == -3.0);
    // d sample / d log_std = noise·exp(log_std) by finite differences
    const double n = 0.8, h = 1e-6;
    const double up = gaussian_sample(std::vector<double>{0.0}, std::vector<double>{0.3 + h}, std::vector<double>{n})[0];
    const double dn = gaussian_sample(std::vector<double>{0.0}, std::vector<double>{0.3 - h}, std::vector<double>{n})[0];
    CHECK((up - dn) / (2 * h) == doctest::Approx(n * std::exp(0.3)).epsilon(1e-8));
}

TEST_CASE("kl between diagonal gaussians") {
    const std::vector<double> m{0.4, -1.2}, ls{0.1, -0.3};
    CHECK(kl_diag_gaussian(m, ls, m, ls) == doctest::Approx(0.0));
    CHECK(kl_diag_gaussian(m, std::vector<double>{0, 0}, std::vector<double>{0, 0}, std::vector<double>{0, 0}) ==
          doctest::Approx((0.16 + 1.44) / 2).epsilon(1e-14));
    // Monte-Carlo oracle: E_q[log q - log p]
    const std::vector<double> mp{0.1, 0.3}, lsp{0.2, 0.1};
    Rng rng = stream_rng(8, 0);
    const int n = 1000000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const std::vector<double> noise{standard_normal(rng), standard_normal(rng)};
        const auto x = gaussian_sample(m, ls, noise);
        const double v = gaussian_log_prob(x, m, ls) - gaussian_log_prob(x, mp, lsp);
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n, se = std::sqrt((sum2 / n - mean * mean) / n);
    CHECK(std::abs(kl_diag_gaussian(m, ls, mp, lsp) - mean) < 3 * se);
    CHECK(kl_diag_gaussian(m, ls, mp, lsp) >= 0.0);
}

TEST_CASE("gradient clipping") {
    GradSet g;
    g.add("a", Tensor::vector({0.3}));
    GradSet keep = g;
    clip_gradient_norm(g, 0.5);
    CHECK(g == keep);
    GradSet one;
    one.add("a", Tensor::vector({1.0}));
    CHECK(clip_gradient_norm(one, 0.5) == 1.0);
    CHECK(one.at("a").data[0] == 0.5);

    Rng rng = stream_rng(9, 0);
    GradSet r;
    r.add("a", Tensor::vector(randn(7, rng)));
    r.add("b", Tensor::matrix(2, 3, randn(6, rng)));
    const double pre = global_norm(r);
    clip_gradient_norm(r, 0.5);
    CHECK(global_norm(r) == doctest::Approx(std::min(pre, 0.5)).epsilon(1e-12));
    GradSet again = r;
    clip_gradient_norm(again, 0.5);
    for (const auto& [name, t] : r)
        for (std::size_t i = 0; i < t.size(); ++i) CHECK(again.at(name).data[i] == doctest::Approx(t.data[i]).epsilon(1e-15));
}

TEST_CASE("rmsprop update") {
    ParamSet p;
    p.add("a", Tensor::vector({0.5, -0.25}));
    GradSet zero = p.zeros_like();
    RmsPropState st;
    rmsprop_update(p, zero, st, 1e-3);
    CHECK(p.at("a").data == std::vector<double>{0.5, -0.25});

    ParamSet q;
    q.add("a", Tensor::vector({0.0}));
    GradSet g;
    g.add("a", Tensor::vector({1.0}));
    RmsPropState s2;
    s2.epsilon = 0.0;
    rmsprop_update(q, g, s2, 1e-3);
    CHECK(s2.square_avg.at("a")[0] == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(q.at("a").data[0] == doctest::Approx(-0.01).epsilon(1e-12));

    ParamSet x1 = p, x2 = p;
    RmsPropState a1, a2;
    GradSet gg;
    gg.add("a", Tensor::vector({0.3, -0.7}));
    rmsprop_update(x1, gg, a1, 3e-4);
    rmsprop_update(x2, gg, a2, 3e-4);
    CHECK(x1 == x2);
}

TEST_CASE("orthogonal init") {
    Rng rng = stream_rng(10, 0);
    const Tensor one = orthogonal_init(1, 1, 1.0, rng);
    CHECK(std::abs(one.data[0]) == doctest::Approx(1.0).epsilon(1e-12));
    auto gram = [](const Tensor& w, bool rows) {
        const std::size_t n = rows ? w.rows() : w.cols();
        const std::size_t k = rows ? w.cols() : w.rows();
        std::vector<double> g(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t l = 0; l < k; ++l)
                    g[i * n + j] += rows ? w.at(i, l) * w.at(j, l) : w.at(l, i) * w.at(l, j);
        return g;
    };
    const Tensor sq = orthogonal_init(4, 4, 1.0, rng);
    auto g = gram(sq, false);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(g[i * 4 + j] - (i == j ? 1.0 : 0.0)) < 1e-8);
    const Tensor wide = orthogonal_init(3, 8, 2.0, rng);
    g = gram(wide, true);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(g[i * 3 + j] - (i == j ? 4.0 : 0.0)) < 1e-8);
    const Tensor tall = orthogonal_init(8, 3, 1.0, rng);
    g = gram(tall, false);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(g[i * 3 + j] - (i == j ? 1.0 : 0.0)) < 1e-8);
}

TEST_CASE("tape gradients of a small composite match finite differences") {
    Rng rng = stream_rng(11, 0);
    ParamSet p;
    add_mlp(p, "m", {3, 5, 4}, rng);
    add_gru(p, "g", 4, 3, rng);
    const auto x = randn(3, rng), h0 = randn(3, rng), target = randn(3, rng);
    auto build = [&](Tape& tape) {
        Var e = mlp_forward(tape, p, "m", tape.constant(x));
        Var h = gru_forward(tape, p, "g", tape.tanh(e), tape.constant(h0));
        Var ls = tape.scale(h, 0.5);
        return tape.sum(tape.add(tape.scale(tape.gaussian_log_prob(tape.constant(target), h, ls), -1.0),
                                 tape.kl_diag(h, ls, tape.constant(target), tape.constant(h0))));
    };
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
    const GradSet g = tape.gradients(p);
    const double err = testing_util::max_gradcheck_error(p, g, [&] {
        Tape t;
        return t.scalar(build(t));
    });
    CHECK(err < 1e-4);
}

TEST_CASE("checkpoint round trip is bit exact") {
    Rng rng = stream_rng(12, 0);
    ParamSet p;
    add_mlp(p, "m", {3, 5, 2}, rng);
    p.add("odd", Tensor::vector({1e-310, -0.0, 1.0 / 3.0, 6.02214076e23}));
    std::stringstream ss;
    write_checkpoint(ss, p);
    const ParamSet back = read_checkpoint(ss);
    CHECK(back == p);
    for (const auto& [name, t] : p)
        CHECK(std::memcmp(back.at(name).data.data(), t.data.data(), t.size() * sizeof(double)) == 0);
}

TEST_CASE("param set basics") {
    ParamSet p;
    p.add("a.x", Tensor::vector({1, 2}));
    p.add("b.y", Tensor::matrix(2, 2, {1, 2, 3, 4}));
    CHECK(p.parameter_count() == 6);
    CHECK(p.subset("a.").size() == 1);
    CHECK_THROWS(p.add("a.x", Tensor::vector({0})));
    CHECK_THROWS(p.assign("a.x", Tensor::vector({0})));
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
}
