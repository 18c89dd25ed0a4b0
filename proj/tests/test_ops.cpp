#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "evseg/ops.hpp"
#include "gradcheck.hpp"

using namespace evseg;
using evseg::testing::max_rel_err;
using evseg::testing::numeric_grad;
using evseg::testing::random_tensor;

namespace {

TensorD delta_kernel3() {
    TensorD w({1, 1, 3, 3});
    w.data[4] = 1.0;  // center tap
    return w;
}

// Scalar loss used by the finite-difference checks: weighted sum of the
// forward output against a fixed cotangent tensor.
double dot(const TensorD& a, const TensorD& b) {
    double s = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("conv2d forward: zero input gives bias per channel") {
    std::mt19937 rng(1);
    TensorD x({3, 4, 4});
    TensorD w = random_tensor({2, 3, 3, 3}, rng);
    TensorD b({2}, {0.7, -1.5});
    auto y = conv2d_forward(x, w, b);
    REQUIRE(y.shape == std::vector<int>({2, 4, 4}));
    for (int i = 0; i < 16; ++i) {
        CHECK(y[i] == doctest::Approx(0.7));
        CHECK(y[16 + i] == doctest::Approx(-1.5));
    }
}

TEST_CASE("conv2d forward: identity kernel reproduces input") {
    TensorD x({1, 2, 2}, {1, 2, 3, 4});
    auto y = conv2d_forward(x, delta_kernel3(), TensorD({1}));
    for (int i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv2d forward: all-ones kernel on 2x2 input sums the padded window") {
    TensorD x({1, 2, 2}, {1, 2, 3, 4});
    TensorD w({1, 1, 3, 3});
    w.data.assign(9, 1.0);
    auto y = conv2d_forward(x, w, TensorD({1}));
    // every 3x3 padded window covers the whole 2x2 input
    for (int i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(10.0));
}

TEST_CASE("conv2d rejects channel mismatch") {
    TensorD x({2, 4, 4});
    TensorD w({1, 3, 3, 3});
    CHECK_THROWS_AS(conv2d_forward(x, w, TensorD({1})), std::invalid_argument);
}

TEST_CASE("conv2d backward: zero cotangent gives zero gradients") {
    std::mt19937 rng(2);
    TensorD x = random_tensor({2, 4, 4}, rng);
    TensorD w = random_tensor({3, 2, 3, 3}, rng);
    auto [gi, gw, gb] = conv2d_backward(TensorD({3, 4, 4}), x, w);
    for (auto v : gi.data) CHECK(v == 0.0);
    for (auto v : gw.data) CHECK(v == 0.0);
    for (auto v : gb.data) CHECK(v == 0.0);
}

TEST_CASE("conv2d backward: identity case gradBias is the gradOut sum") {
    TensorD x({1, 2, 2}, {1, 2, 3, 4});
    TensorD gy({1, 2, 2}, {1, 1, 1, 1});
    auto [gi, gw, gb] = conv2d_backward(gy, x, delta_kernel3());
    CHECK(gb[0] == doctest::Approx(4.0));
    for (int i = 0; i < 4; ++i) CHECK(gi[i] == doctest::Approx(1.0));
}

TEST_CASE("conv2d backward matches finite differences on 20 random instances") {
    std::mt19937 rng(3);
    for (int it = 0; it < 20; ++it) {
        TensorD x = random_tensor({1, 4, 4}, rng);
        TensorD w = random_tensor({2, 1, 3, 3}, rng);
        TensorD b = random_tensor({2}, rng);
        TensorD gy = random_tensor({2, 4, 4}, rng);
        auto [gi, gw, gb] = conv2d_backward(gy, x, w);

        auto ni = numeric_grad([&](const TensorD& t) { return dot(conv2d_forward(t, w, b), gy); }, x);
        auto nw = numeric_grad([&](const TensorD& t) { return dot(conv2d_forward(x, t, b), gy); }, w);
        auto nb = numeric_grad([&](const TensorD& t) { return dot(conv2d_forward(x, w, t), gy); }, b);
        CHECK(max_rel_err(gi, ni) < 1e-4);
        CHECK(max_rel_err(gw, nw) < 1e-4);
        CHECK(max_rel_err(gb, nb) < 1e-4);
    }
}

TEST_CASE("conv2d is linear in its input for zero bias") {
    std::mt19937 rng(4);
    TensorD x = random_tensor({2, 4, 4}, rng);
    TensorD y = random_tensor({2, 4, 4}, rng);
    TensorD w = random_tensor({3, 2, 3, 3}, rng);
    TensorD zb({3});
    const double a = 1.7, b2 = -0.3;
    TensorD mix({2, 4, 4});
    for (std::int64_t i = 0; i < mix.numel(); ++i) mix[i] = a * x[i] + b2 * y[i];
    auto lhs = conv2d_forward(mix, w, zb);
    auto cx = conv2d_forward(x, w, zb);
    auto cy = conv2d_forward(y, w, zb);
    for (std::int64_t i = 0; i < lhs.numel(); ++i)
        CHECK(lhs[i] == doctest::Approx(a * cx[i] + b2 * cy[i]).epsilon(1e-12));
}

TEST_CASE("maxpool2 single window and trivial cases") {
    TensorD x({1, 2, 2}, {1, 0, 0, 0});
    auto [y, pi] = maxpool2_forward(x);
    CHECK(y[0] == 1.0);
    CHECK(pi.idx[0] == 0);

    TensorD z({1, 4, 4});
    auto [yz, piz] = maxpool2_forward(z);
    for (auto v : yz.data) CHECK(v == 0.0);

    CHECK_THROWS_AS(maxpool2_forward(TensorD({1, 3, 4})), std::invalid_argument);
}

TEST_CASE("maxpool2 keeps binary tensors binary") {
    std::mt19937 rng(5);
    std::bernoulli_distribution coin(0.4);
    TensorD x({2, 4, 4});
    for (auto& v : x.data) v = coin(rng) ? 1.0 : 0.0;
    auto [y, pi] = maxpool2_forward(x);
    for (auto v : y.data) CHECK((v == 0.0 || v == 1.0));
    // exhaustive window check
    for (int c = 0; c < 2; ++c)
        for (int yy = 0; yy < 2; ++yy)
            for (int xx = 0; xx < 2; ++xx) {
                double mx = std::max({x.at3(c, 2 * yy, 2 * xx), x.at3(c, 2 * yy, 2 * xx + 1),
                                      x.at3(c, 2 * yy + 1, 2 * xx), x.at3(c, 2 * yy + 1, 2 * xx + 1)});
                CHECK(y.at3(c, yy, xx) == mx);
            }
}

TEST_CASE("maxpool2 backward routes to the argmax only") {
    PoolIndices pi;
    pi.shape = {1, 1, 1};
    pi.idx = {0};
    TensorD gy({1, 1, 1}, {5.0});
    auto gi = maxpool2_backward(gy, pi);
    CHECK(gi[0] == 5.0);
    CHECK(gi[1] == 0.0);
    CHECK(gi[2] == 0.0);
    CHECK(gi[3] == 0.0);
}

TEST_CASE("maxpool2 backward matches finite differences away from ties") {
    std::mt19937 rng(6);
    for (int it = 0; it < 10; ++it) {
        // distinct values per window make the pool locally smooth
        TensorD x({1, 4, 4});
        std::vector<double> vals(16);
        for (int i = 0; i < 16; ++i) vals[i] = i * 0.13;
        std::shuffle(vals.begin(), vals.end(), rng);
        x.data = vals;
        TensorD gy = random_tensor({1, 2, 2}, rng);
        auto [y, pi] = maxpool2_forward(x);
        auto gi = maxpool2_backward(gy, pi);
        auto ni = numeric_grad(
            [&](const TensorD& t) { return dot(maxpool2_forward(t).first, gy); }, x);
        CHECK(max_rel_err(gi, ni) < 1e-4);
    }
}

TEST_CASE("tconv2 forward: zero input broadcasts the bias") {
    std::mt19937 rng(7);
    TensorD x({2, 3, 3});
    TensorD w = random_tensor({2, 3, 2, 2}, rng);
    TensorD b({3}, {0.5, -2.0, 1.0});
    auto y = tconv2_forward(x, w, b);
    REQUIRE(y.shape == std::vector<int>({3, 6, 6}));
    for (int o = 0; o < 3; ++o)
        for (int i = 0; i < 36; ++i) CHECK(y[o * 36 + i] == doctest::Approx(b[o]));
}

TEST_CASE("tconv2 forward: single pixel expands into the kernel") {
    TensorD x({1, 1, 1}, {3.0});
    TensorD w({1, 1, 2, 2}, {0.1, 0.2, 0.3, 0.4});
    auto y = tconv2_forward(x, w, TensorD({1}));
    CHECK(y[0] == doctest::Approx(0.3));
    CHECK(y[1] == doctest::Approx(0.6));
    CHECK(y[2] == doctest::Approx(0.9));
    CHECK(y[3] == doctest::Approx(1.2));
}

TEST_CASE("tconv2 forward matches a naive scatter-accumulate oracle") {
    std::mt19937 rng(8);
    TensorD x = random_tensor({1, 2, 2}, rng);
    TensorD w = random_tensor({1, 2, 2, 2}, rng);
    TensorD b = random_tensor({2}, rng);
    auto y = tconv2_forward(x, w, b);
    // quadruple-loop reference
    TensorD ref({2, 4, 4});
    for (int o = 0; o < 2; ++o)
        for (int i = 0; i < 16; ++i) ref[o * 16 + i] = b[o];
    for (int c = 0; c < 1; ++c)
        for (int o = 0; o < 2; ++o)
            for (int yy = 0; yy < 2; ++yy)
                for (int xx = 0; xx < 2; ++xx)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            ref.at3(o, 2 * yy + dy, 2 * xx + dx) +=
                                w.data[((c * 2 + o) * 2 + dy) * 2 + dx] * x.at3(c, yy, xx);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(ref[i]));
}

TEST_CASE("tconv2 backward: hand adjoint of the single-pixel case") {
    TensorD x({1, 1, 1}, {3.0});
    TensorD w({1, 1, 2, 2}, {0.1, 0.2, 0.3, 0.4});
    TensorD gy({1, 2, 2}, {1, 1, 1, 1});
    auto [gi, gw, gb] = tconv2_backward(gy, x, w);
    CHECK(gi[0] == doctest::Approx(1.0));  // a+b+c+d
    CHECK(gb[0] == doctest::Approx(4.0));
    for (int i = 0; i < 4; ++i) CHECK(gw[i] == doctest::Approx(3.0));

    auto [gi0, gw0, gb0] = tconv2_backward(TensorD({1, 2, 2}), x, w);
    for (auto v : gi0.data) CHECK(v == 0.0);
    for (auto v : gw0.data) CHECK(v == 0.0);
}

TEST_CASE("tconv2 backward matches finite differences, kernels 2 and 3") {
    std::mt19937 rng(9);
    for (int k : {2, 3}) {
        for (int it = 0; it < 10; ++it) {
            TensorD x = random_tensor({2, 2, 2}, rng);
            TensorD w = random_tensor({2, 3, k, k}, rng);
            TensorD b = random_tensor({3}, rng);
            TensorD gy = random_tensor({3, 4, 4}, rng);
            auto [gi, gw, gb] = tconv2_backward(gy, x, w);
            auto ni = numeric_grad([&](const TensorD& t) { return dot(tconv2_forward(t, w, b), gy); }, x);
            auto nw = numeric_grad([&](const TensorD& t) { return dot(tconv2_forward(x, t, b), gy); }, w);
            auto nb = numeric_grad([&](const TensorD& t) { return dot(tconv2_forward(x, w, t), gy); }, b);
            CHECK(max_rel_err(gi, ni) < 1e-4);
            CHECK(max_rel_err(gw, nw) < 1e-4);
            CHECK(max_rel_err(gb, nb) < 1e-4);
        }
    }
}

TEST_CASE("concat keeps order and binary values") {
    TensorD a({1, 1, 1}, {1.0});
    TensorD b({1, 1, 1}, {0.0});
    auto y = concat_channels(a, b);
    REQUIRE(y.shape == std::vector<int>({2, 1, 1}));
    CHECK(y[0] == 1.0);
    CHECK(y[1] == 0.0);
    CHECK(*std::max_element(y.data.begin(), y.data.end()) <= 1.0);

    CHECK_THROWS_AS(concat_channels(TensorD({1, 2, 2}), TensorD({1, 3, 3})),
                    std::invalid_argument);
}

TEST_CASE("concat then split is the identity on both halves") {
    std::mt19937 rng(10);
    TensorD a = random_tensor({3, 4, 4}, rng);
    TensorD b = random_tensor({2, 4, 4}, rng);
    auto [a2, b2] = split_channels(concat_channels(a, b), 3);
    CHECK(a2.data == a.data);
    CHECK(b2.data == b.data);
}

TEST_CASE("softmax_ce: uniform logits give ln C per pixel") {
    TensorD logits({2, 2, 2});
    ClassMap t(2, 2, 0);
    auto [loss, grad] = softmax_ce(logits, t);
    CHECK(loss == doctest::Approx(4 * std::log(2.0)));
}

TEST_CASE("softmax_ce: saturated logits give near-zero loss") {
    TensorD logits({2, 1, 1}, {100.0, 0.0});
    ClassMap t(1, 1, 0);
    auto [loss, grad] = softmax_ce(logits, t);
    CHECK(loss < 1e-6);
}

TEST_CASE("softmax_ce rejects out-of-range classes and honors ignore") {
    TensorD logits({2, 1, 2});
    ClassMap t(1, 2, 0);
    t.at(0, 1) = 3;
    CHECK_THROWS_AS(softmax_ce(logits, t), std::invalid_argument);
    t.at(0, 1) = kIgnoreLabel;
    auto [loss, grad] = softmax_ce(logits, t);
    CHECK(loss == doctest::Approx(std::log(2.0)));
    CHECK(grad.at3(0, 0, 1) == 0.0);
    CHECK(grad.at3(1, 0, 1) == 0.0);
}

TEST_CASE("softmax_ce gradient matches finite differences") {
    std::mt19937 rng(11);
    TensorD logits = random_tensor({3, 2, 2}, rng);
    ClassMap t(2, 2);
    std::uniform_int_distribution<int> cls(0, 2);
    for (auto& v : t.v) v = static_cast<std::uint8_t>(cls(rng));
    auto [loss, grad] = softmax_ce(logits, t);
    auto ng = numeric_grad(
        [&](const TensorD& l) { return softmax_ce(l, t).first; }, logits, 1e-5);
    CHECK(max_rel_err(grad, ng, 1e-5) < 1e-4);
}
