#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "nct/adam.hpp"
#include "nct/gradcheck.hpp"
#include "nct/gradsuite.hpp"
#include "nct/ops.hpp"
#include "nct/rng.hpp"

using namespace nct;

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.ndim() == 3);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
    Tensor r = t.reshaped({6, 4});
    CHECK(r.dim(0) == 6);
    CHECK(r.store.get() == t.store.get());  // view shares the buffer
    CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
}

TEST_CASE("matmul identity") {
    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.f;
    RngStream rng(1, "mm");
    Tensor x = rng.normal<float>({3, 5});
    Tensor y = kern::matmul(eye, x);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]));
}

TEST_CASE("mse of identical tensors is zero") {
    RngStream rng(2, "mse");
    Tensor a = rng.normal<float>({4, 4});
    CHECK(kern::mse(a, a)[0] == 0.f);
}

TEST_CASE("conv2d matches direct convolution on 5x5") {
    RngStream rng(3, "conv");
    Tensor x = rng.normal<float>({1, 2, 5, 5});
    Tensor w = rng.normal<float>({3, 2, 3, 3});
    Tensor b = rng.normal<float>({3});
    for (int stride : {1, 2}) {
        Tensor got = kern::conv2d(x, w, b, stride);
        int oe = kern::conv_out_extent(5, stride);
        // brute-force direct convolution oracle
        for (int o = 0; o < 3; ++o)
            for (int oy = 0; oy < oe; ++oy)
                for (int ox = 0; ox < oe; ++ox) {
                    double acc = b[o];
                    for (int c = 0; c < 2; ++c)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                int iy = oy * stride - 1 + ky, ix = ox * stride - 1 + kx;
                                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                                acc += static_cast<double>(w[((o * 2 + c) * 3 + ky) * 3 + kx]) *
                                       x[(c * 5 + iy) * 5 + ix];
                            }
                    CHECK(got[(o * oe + oy) * oe + ox] == doctest::Approx(acc).epsilon(1e-5));
                }
    }
}

TEST_CASE("conv2d delta kernel reproduces the image") {
    RngStream rng(4, "delta");
    Tensor x = rng.normal<float>({1, 1, 5, 5});
    Tensor w({1, 1, 3, 3});
    w[4] = 1.f;  // center tap
    Tensor b({1});
    Tensor y = kern::conv2d(x, w, b, 1);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("shape mismatch errors name both shapes") {
    Tensor a({2, 3}), b({3, 2});
    try {
        kern::add(a, b);
        CHECK(false);
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(3,2)") != std::string::npos);
    }
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape tape;
    RngStream rng(5, "bw");
    Var x = tape.leaf(rng.normal<float>({2, 2}), true);
    Var y = ops::mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("analytic derivative of mse at a point") {
    // d/dx mean((x-0)^2) at x=2, single element: 2*x = 4
    Tape tape;
    Var x = tape.leaf(Tensor::full({1}, 2.f), true);
    Var loss = ops::mse(x, tape.constant(Tensor({1})));
    tape.backward(loss);
    CHECK(tape.grad(x)[0] == doctest::Approx(4.f));
}

TEST_CASE("frozen leaves receive no gradient") {
    Tape tape;
    RngStream rng(6, "frozen");
    Var x = tape.leaf(rng.normal<float>({3}), true);
    Var w = tape.leaf(rng.normal<float>({3}), false);
    Var loss = ops::mean_all(ops::mul(x, w));
    tape.backward(loss);
    CHECK(tape.has_grad(x));
    CHECK(!tape.has_grad(w));
    Tensor g = tape.grad(w);  // zeros fallback
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.f);
}

TEST_CASE("two-layer MLP gradients match finite differences in 64-bit") {
    RngStream rng(7, "mlp");
    ParamStoreT<double> store;
    store.add("w1", rng.normal<double>({5, 8}));
    store.add("b1", rng.normal<double>({8}));
    store.add("w2", rng.normal<double>({8, 2}));
    store.add("b2", rng.normal<double>({2}));
    TensorT<double> x = rng.normal<double>({3, 5});
    TensorT<double> tgt = rng.normal<double>({3, 2});
    auto rep = check_gradients<double>(
        store,
        [&](TapeT<double>& t, TapeParams<double>& p) {
            auto h = ops::silu(ops::linear(t.constant(x), p("w1"), p("b1")));
            return ops::mse(ops::linear(h, p("w2"), p("b2")), t.constant(tgt));
        },
        1e-4);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("adam: zero gradient and zero decay leave parameters unchanged") {
    ParamStore store;
    store.add("p", Tensor::full({4}, 1.5f));
    AdamState state;
    std::map<std::string, Tensor> grads{{"p", Tensor({4})}};
    adam_step(store, grads, state, AdamConfig{1e-2, 0.9, 0.999, 1e-8, 0.0});
    for (int i = 0; i < 4; ++i) CHECK(store.at("p")[i] == 1.5f);
}

TEST_CASE("adam: single scalar step matches the hand-computed update") {
    ParamStore store;
    store.add("p", Tensor::full({1}, 1.0f));
    AdamState state;
    std::map<std::string, Tensor> grads{{"p", Tensor::full({1}, 0.5f)}};
    AdamConfig cfg{1e-2, 0.9, 0.999, 1e-8, 0.0};
    adam_step(store, grads, state, cfg);
    // m=0.05, v=2.5e-4; mhat=0.5, vhat=0.25; p -= lr*0.5/(0.5+eps)
    double expect = 1.0 - 1e-2 * 0.5 / (std::sqrt(0.25) + 1e-8);
    CHECK(store.at("p")[0] == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("adam: decoupled weight decay pulls parameters toward zero") {
    ParamStore store;
    store.add("p", Tensor::full({1}, 2.0f));
    AdamState state;
    std::map<std::string, Tensor> grads{{"p", Tensor({1})}};
    adam_step(store, grads, state, AdamConfig{1e-2, 0.9, 0.999, 1e-8, 0.1});
    CHECK(store.at("p")[0] == doctest::Approx(2.0 - 1e-2 * 0.1 * 2.0));
}

TEST_CASE("adam: NaN gradient raises an error naming the parameter") {
    ParamStore store;
    store.add("layer.weight", Tensor({2}));
    AdamState state;
    Tensor g({2});
    g[0] = std::nanf("");
    std::map<std::string, Tensor> grads{{"layer.weight", g}};
    try {
        adam_step(store, grads, state, AdamConfig{});
        CHECK(false);
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("layer.weight") != std::string::npos);
    }
}

TEST_CASE("adam: frozen params never change bytes") {
    RngStream rng(8, "freeze");
    ParamStore store;
    store.add("trainme", rng.normal<float>({4}), true);
    store.add("frozen", rng.normal<float>({4}), false);
    Tensor before = store.at("frozen").clone();
    AdamState state;
    std::map<std::string, Tensor> grads{{"trainme", rng.normal<float>({4})},
                                        {"frozen", rng.normal<float>({4})}};
    adam_step(store, grads, state, AdamConfig{1e-2, 0.9, 0.999, 1e-8, 0.1});
    CHECK(std::memcmp(before.data(), store.at("frozen").data(), 4 * sizeof(float)) == 0);
    CHECK(store.at("trainme")[0] != doctest::Approx(grads["trainme"][0]));
}

TEST_CASE("rng: statistics of 100k normal draws") {
    RngStream rng(1234, "stats");
    Tensor z = rng.normal<float>({100000});
    double mean = 0, var = 0;
    for (int64_t i = 0; i < z.numel(); ++i) mean += z[i];
    mean /= static_cast<double>(z.numel());
    for (int64_t i = 0; i < z.numel(); ++i) var += (z[i] - mean) * (z[i] - mean);
    var /= static_cast<double>(z.numel());
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("rng: same seed and label reproduce bit-identical tensors") {
    RngStream a(42, "x"), b(42, "x");
    Tensor ta = a.normal<float>({257});
    Tensor tb = b.normal<float>({257});
    CHECK(std::memcmp(ta.data(), tb.data(), sizeof(float) * 257) == 0);
    CHECK(a.counter() == b.counter());
}

TEST_CASE("rng: different labels decorrelate") {
    RngStream a(42, "x"), b(42, "y");
    Tensor ta = a.normal<float>({10000});
    Tensor tb = b.normal<float>({10000});
    double ma = 0, mb = 0;
    for (int i = 0; i < 10000; ++i) {
        ma += ta[i];
        mb += tb[i];
    }
    ma /= 10000;
    mb /= 10000;
    double cov = 0, va = 0, vb = 0;
    for (int i = 0; i < 10000; ++i) {
        cov += (ta[i] - ma) * (tb[i] - mb);
        va += (ta[i] - ma) * (ta[i] - ma);
        vb += (tb[i] - mb) * (tb[i] - mb);
    }
    CHECK(std::abs(cov / std::sqrt(va * vb)) < 0.02);
}

TEST_CASE("full 64-bit gradient suite passes its thresholds") {
    for (const auto& e : run_gradient_suite()) {
        INFO(e.name, " err=", e.max_rel_err);
        CHECK(e.max_rel_err < e.threshold);
    }
}
