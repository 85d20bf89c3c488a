#include <catch2/catch_amalgamated.hpp>

#include "specdrift/gradcheck.hpp"
#include "specdrift/tensor.hpp"

using namespace specdrift;

namespace {

ParameterStore store_with(const std::string& name, Shape shape, std::vector<double> v) {
    ParameterStore s;
    s.define(name, std::move(shape), std::move(v));
    return s;
}

ParameterStore random_store(const std::string& name, Shape shape, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal();
    ParameterStore s;
    s.define(name, std::move(shape), std::move(v));
    return s;
}

}  // namespace

TEST_CASE("scalar square gradient") {
    auto store = store_with("x", {1}, {3.0});
    auto rep = grad_check(store, [](ParameterStore& s, Tape* t) {
        Tensor x = s.tensor("x", t);
        return mul(x, x);
    }, 1e-5, 1e-7);
    CHECK(rep.passed);
    CHECK(store.at("x").grad[0] == Catch::Approx(6.0).margin(1e-9));
}

TEST_CASE("softmax symmetry and layer_norm zero-variance guard") {
    Tensor x = Tensor::from({1, 2}, {0.0, 0.0});
    Tensor y = softmax_last(x);
    CHECK(y.at(0) == Catch::Approx(0.5));
    CHECK(y.at(1) == Catch::Approx(0.5));

    Tensor ones = Tensor::from({1, 3}, {1.0, 1.0, 1.0});
    Tensor ln = layer_norm_last(ones);
    for (size_t i = 0; i < 3; ++i) CHECK(ln.at(i) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("conv1d_same hand example with replicate padding") {
    Tensor x = Tensor::from({1, 1, 3}, {1, 2, 3});
    Tensor w = Tensor::from({3}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
    Tensor y = conv1d_same(x, w);
    CHECK(y.at(0) == Catch::Approx(4.0 / 3).margin(1e-12));
    CHECK(y.at(1) == Catch::Approx(2.0).margin(1e-12));
    CHECK(y.at(2) == Catch::Approx(8.0 / 3).margin(1e-12));
}

TEST_CASE("elementwise and broadcast gradients") {
    auto store = random_store("a", {2, 3, 4}, 1);
    Rng rng(2);
    std::vector<double> bv(4);
    for (auto& v : bv) v = rng.normal();
    store.define("b", {1, 1, 4}, bv);

    auto rep = grad_check(store, [](ParameterStore& s, Tape* t) {
        Tensor a = s.tensor("a", t);
        Tensor b = s.tensor("b", t);
        Tensor y = mul(add(a, b), sub(a, mul_scalar(b, 0.5)));
        y = div(y, add_scalar(abs_t(b), 1.0));
        return sum_all(y);
    }, 1e-5, 1e-6);
    INFO(rep.worst_param << "[" << rep.worst_index << "] analytic " << rep.analytic_at_worst
                         << " numeric " << rep.numeric_at_worst);
    CHECK(rep.passed);
}

TEST_CASE("unary op gradients") {
    auto store = random_store("x", {3, 5}, 3);
    // keep inputs positive where log/sqrt need it
    for (auto& v : *store.at("x").value) v = std::fabs(v) + 0.5;
    auto rep = grad_check(store, [](ParameterStore& s, Tape* t) {
        Tensor x = s.tensor("x", t);
        Tensor y = add(gelu(x), tanh_t(x));
        y = add(y, log_t(add_scalar(x, 1.0)));
        y = add(y, sqrt_t(x));
        y = add(y, mul(sin_t(x), cos_t(x)));
        y = add(y, exp_t(mul_scalar(x, 0.1)));
        return sum_all(y);
    }, 1e-6, 1e-6);
    CHECK(rep.passed);
}

TEST_CASE("matmul gradients, both operand styles") {
    auto store = random_store("a", {2, 3, 4}, 4);
    Rng rng(5);
    std::vector<double> wv(4 * 2), bv(2 * 4 * 3);
    for (auto& v : wv) v = rng.normal();
    for (auto& v : bv) v = rng.normal();
    store.define("w", {4, 2}, wv);
    store.define("p", {2, 4, 3}, bv);

    auto rep = grad_check(store, [](ParameterStore& s, Tape* t) {
        Tensor a = s.tensor("a", t);   // [2,3,4]
        Tensor w = s.tensor("w", t);   // weight-style
        Tensor p = s.tensor("p", t);   // batched rhs
        Tensor y1 = matmul(a, w);      // [2,3,2]
        Tensor y2 = matmul(a, p);      // [2,3,3]
        return add(sum_all(y1), sum_all(tanh_t(y2)));
    }, 1e-5, 1e-6);
    CHECK(rep.passed);
}

TEST_CASE("reductions, softmax, layer_norm gradients") {
    auto store = random_store("x", {4, 6}, 6);
    auto rep = grad_check(store, [](ParameterStore& s, Tape* t) {
        Tensor x = s.tensor("x", t);
        Tensor y = add(mean_last(softmax_last(x), true), var_last(x, true));
        y = add(y, max_last(layer_norm_last(x), true));
        y = add(y, mean(x, 0, true));
        return sum_all(y);
    }, 1e-5, 1e-6);
    CHECK(rep.passed);
}

TEST_CASE("shape op gradients: permute, slice, concat, broadcast_to") {
    auto store = random_store("x", {2, 3, 4}, 7);
    auto rep = grad_check(store, [](ParameterStore& s, Tape* t) {
        Tensor x = s.tensor("x", t);
        Tensor p = permute(x, {2, 0, 1});           // [4,2,3]
        Tensor sl = slice(x, 2, 1, 2);              // [2,3,2]
        Tensor cc = concat({sl, sl}, 1);            // [2,6,2]
        Tensor bc = broadcast_to(reshape(mean_last(x, true), {2, 3, 1}), {2, 3, 4});
        return add(add(sum_all(tanh_t(p)), sum_all(mul(cc, cc))), sum_all(mul(bc, x)));
    }, 1e-5, 1e-6);
    CHECK(rep.passed);
}

TEST_CASE("conv gradients") {
    auto store = random_store("x", {2, 3, 8}, 8);
    Rng rng(9);
    std::vector<double> w1(3), w2(2 * 3), wc(3 * 3 * 3), bc(3);
    for (auto& v : w1) v = rng.normal();
    for (auto& v : w2) v = rng.normal();
    for (auto& v : wc) v = rng.normal();
    for (auto& v : bc) v = rng.normal();
    store.define("w_shared", {3}, w1);
    store.define("w_per", {2, 3}, w2);
    store.define("w_str", {3, 3, 3}, wc);
    store.define("b_str", {3}, bc);

    auto rep = grad_check(store, [](ParameterStore& s, Tape* t) {
        Tensor x = s.tensor("x", t);
        Tensor y1 = conv1d_same(x, s.tensor("w_shared", t));
        Tensor y2 = conv1d_same(x, s.tensor("w_per", t));
        Tensor y3 = conv1d_strided(x, s.tensor("w_str", t), s.tensor("b_str", t), 2);
        return add(add(sum_all(tanh_t(y1)), sum_all(mul(y2, y2))), sum_all(y3));
    }, 1e-5, 1e-6);
    CHECK(rep.passed);
}

TEST_CASE("conv1d_strided halves length with floor semantics") {
    for (size_t len : {8, 9, 15, 16}) {
        Tensor x = Tensor::full({1, 1, len}, 1.0);
        Tensor w = Tensor::from({1, 1, 3}, {0.0, 1.0, 0.0});
        Tensor b = Tensor::zeros({1});
        Tensor y = conv1d_strided(x, w, b, 2);
        CHECK(y.shape[2] == len / 2);
    }
}

TEST_CASE("rfft/irfft gradients through modulation") {
    auto store = random_store("x", {2, 16}, 10);
    store.define("gain", {2, 9}, std::vector<double>(18, 0.3));
    auto rep = grad_check(store, [](ParameterStore& s, Tape* t) {
        Tensor x = s.tensor("x", t);
        Tensor gain = s.tensor("gain", t);
        ComplexTensor z = rfft(x);
        ComplexTensor zm{mul(z.re, gain), mul(z.im, gain)};
        Tensor back = irfft(zm, 16);
        return sum_all(mul(back, back));
    }, 1e-5, 1e-5);
    INFO(rep.worst_param << " analytic " << rep.analytic_at_worst << " numeric " << rep.numeric_at_worst);
    CHECK(rep.passed);
}

TEST_CASE("rfft gradient on odd length") {
    auto store = random_store("x", {1, 15}, 11);
    auto rep = grad_check(store, [](ParameterStore& s, Tape* t) {
        Tensor x = s.tensor("x", t);
        ComplexTensor z = rfft(x);
        Tensor a = complex_abs(z.re, z.im);
        return sum_all(mul(a, a));
    }, 1e-5, 1e-5);
    CHECK(rep.passed);
}

TEST_CASE("cross_entropy gradient and value") {
    auto store = random_store("logits", {3, 4}, 12);
    std::vector<int> labels = {0, 2, 3};
    auto rep = grad_check(store, [&](ParameterStore& s, Tape* t) {
        return cross_entropy(s.tensor("logits", t), labels);
    }, 1e-5, 1e-6);
    CHECK(rep.passed);
}

TEST_CASE("stopgrad passes values and blocks gradient exactly") {
    auto store = store_with("x", {3}, {1.0, -2.0, 0.5});
    store.define("w", {3}, {0.7, 0.7, 0.7});
    store.zero_grad();
    Tape tape;
    Tensor x = store.tensor("x", &tape);
    Tensor w = store.tensor("w", &tape);
    Tensor blocked = stopgrad(x);
    for (size_t i = 0; i < 3; ++i) CHECK(blocked.at(i) == x.at(i));
    Tensor loss = sum_all(add(mul(blocked, w), mul_scalar(x, 2.0)));
    tape.backward(loss);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(store.at("x").grad[i] == 2.0);  // exactly, not approximately
        CHECK(store.at("w").grad[i] == Catch::Approx(x.at(i)));
    }
}

TEST_CASE("backward is linear in the seed") {
    auto store = random_store("x", {4, 4}, 13);
    auto run = [&](double seed) {
        store.zero_grad();
        Tape tape;
        Tensor x = store.tensor("x", &tape);
        Tensor loss = sum_all(mul(gelu(x), tanh_t(x)));
        tape.backward(loss, seed);
        return store.at("x").grad;
    };
    auto g1 = run(1.0);
    auto g2 = run(2.0);
    for (size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == 2.0 * g1[i]);  // bitwise doubling
}

TEST_CASE("determinism: identical runs produce identical values and gradients") {
    auto run = [] {
        auto store = random_store("x", {3, 8}, 14);
        Rng rng(15);
        std::vector<double> w(16);
        for (auto& v : w) v = rng.normal();
        store.define("w", {8, 2}, w);
        store.zero_grad();
        Tape tape;
        Tensor x = store.tensor("x", &tape);
        Tensor logits = matmul(gelu(x), store.tensor("w", &tape));
        Tensor loss = cross_entropy(logits, {0, 1, 0});
        tape.backward(loss);
        return std::make_pair(loss.scalar_value(), store.at("x").grad);
    };
    auto [l1, g1] = run();
    auto [l2, g2] = run();
    CHECK(l1 == l2);
    CHECK(g1 == g2);
}

TEST_CASE("non-finite forward raises NumericError") {
    Tensor x = Tensor::from({2}, {-1.0, 2.0});
    CHECK_THROWS_AS(log_t(x), NumericError);
}

TEST_CASE("shape mismatch raises DimensionError") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 4});
    CHECK_THROWS_AS(add(a, b), DimensionError);
    CHECK_THROWS_AS(matmul(a, Tensor::zeros({5, 2})), DimensionError);
    CHECK_THROWS_AS(concat({a, b}, 0), DimensionError);
}
