#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sled/autodiff.hpp"
#include "sled/error.hpp"

#include "gradsuite.hpp"
#include "testutil.hpp"

using namespace sled;
using namespace sled::test;

TEST_CASE("every op passes randomized finite-difference checks") {
    for (const OpGradReport& rep : run_gradient_suite(10, 42)) {
        INFO(rep.op);
        CHECK(rep.worst_rel_err < 1e-5);
    }
}

TEST_CASE("matmul identity and hand-computed product") {
    Rng rng(1);
    Graph g;
    const Tensor m = random_tensor({3, 3}, rng);
    const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const auto out = g.matmul(g.leaf(eye), g.leaf(m));
    CHECK(bit_equal(g.value(out), m));

    const auto prod = g.matmul(g.leaf(Tensor::from({2, 2}, {1, 2, 3, 4})),
                               g.leaf(Tensor::from({2, 2}, {5, 6, 7, 8})));
    CHECK(g.value(prod).vec() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("softmax of a constant row is uniform") {
    Graph g;
    const auto out = g.softmax(g.leaf(Tensor::from({3}, {0, 0, 0})));
    for (double v : g.value(out).vec())
        CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("backward of sum(x*x) is 2x") {
    Graph g;
    const auto x = g.leaf(Tensor::from({3}, {1, 2, 3}), true);
    const auto loss = g.reduce_sum(g.mul(x, x));
    auto grads = g.backward(loss);
    CHECK(grads.at(x).vec() == std::vector<double>{2, 4, 6});
}

TEST_CASE("leaf not reaching the loss gets zero gradient") {
    Graph g;
    const auto x = g.leaf(Tensor::from({2}, {1, 2}), true);
    const auto y = g.leaf(Tensor::from({2}, {5, 5}), true);
    const auto loss = g.reduce_sum(g.mul(x, x));
    auto grads = g.backward(loss);
    CHECK(grads.at(y).vec() == std::vector<double>{0, 0});
}

TEST_CASE("gradient linearity: backward of a sum equals sum of backwards") {
    Rng rng(2);
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({3, 4}, rng);

    auto loss1_grad = [&](bool first_only) {
        Graph g;
        const auto x = g.leaf(a, true);
        const auto w = g.leaf(b);
        const auto l1 = g.reduce_sum(g.mul(x, w));
        const auto l2 = g.reduce_mean(g.gelu(x));
        const auto loss = first_only ? l1 : l2;
        auto grads = g.backward(loss);
        return grads.at(x);
    };
    Graph g;
    const auto x = g.leaf(a, true);
    const auto w = g.leaf(b);
    const auto combined =
        g.add(g.reduce_sum(g.mul(x, w)), g.reduce_mean(g.gelu(x)));
    auto grads = g.backward(combined);
    const Tensor g1 = loss1_grad(true);
    const Tensor g2 = loss1_grad(false);
    const Tensor& gc = grads.at(x);
    for (std::size_t i = 0; i < gc.size(); ++i)
        CHECK(gc[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-14));
}

TEST_CASE("forward is deterministic") {
    Rng rng(3);
    const Tensor a = random_tensor({4, 5}, rng);
    const Tensor b = random_tensor({5, 3}, rng);
    auto run = [&]() {
        Graph g;
        return g.value(g.gelu(g.matmul(g.leaf(a), g.leaf(b))));
    };
    CHECK(bit_equal(run(), run()));
}

TEST_CASE("graphs are single-use and losses must be scalar") {
    Graph g;
    const auto x = g.leaf(Tensor::from({2}, {1, 2}), true);
    const auto vec_loss = g.mul(x, x);
    CHECK_THROWS_AS((void)g.backward(vec_loss), ShapeError);

    Graph g2;
    const auto y = g2.leaf(Tensor::from({2}, {1, 2}), true);
    const auto loss = g2.reduce_sum(g2.mul(y, y));
    (void)g2.backward(loss);
    CHECK_THROWS_AS((void)g2.backward(loss), ShapeError);
}

TEST_CASE("op contract violations throw") {
    Graph g;
    const auto a = g.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}));
    const auto b = g.leaf(Tensor::from({3}, {1, 2, 3}));
    CHECK_THROWS_AS((void)g.mul(a, b), ShapeError);
    CHECK_THROWS_AS((void)g.matmul(a, b), ShapeError);
    CHECK_THROWS_AS((void)g.slice_rows(a, 1, 1), ShapeError);
    CHECK_THROWS_AS((void)g.embed_lookup(a, {0, 5}), ShapeError);

    const double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS((void)g.leaf(Tensor::from({1}, {inf})), NumericError);
    CHECK_THROWS_AS((void)g.scale(a, inf), NumericError);
}

TEST_CASE("scatter-rows routes values and rejects bad indices") {
    Rng rng(4);
    const Tensor base = random_tensor({4, 3}, rng);
    const Tensor updates = random_tensor({2, 3}, rng);
    Graph g;
    const auto out =
        g.scatter_rows(g.leaf(base), g.leaf(updates), {1, 3});
    const Tensor& v = g.value(out);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(v.at(0, j) == base.at(0, j));
        CHECK(v.at(2, j) == base.at(2, j));
        CHECK(v.at(1, j) == updates.at(0, j));
        CHECK(v.at(3, j) == updates.at(1, j));
    }

    // all rows selected -> output equals updates
    const Tensor full = random_tensor({4, 3}, rng);
    const auto out2 = g.scatter_rows(g.leaf(base), g.leaf(full), {0, 1, 2, 3});
    CHECK(bit_equal(g.value(out2), full));

    CHECK_THROWS_AS((void)g.scatter_rows(g.leaf(base), g.leaf(updates), {1, 1}),
                    ShapeError);
    CHECK_THROWS_AS((void)g.scatter_rows(g.leaf(base), g.leaf(updates), {1, 4}),
                    ShapeError);
}

TEST_CASE("embed-lookup accumulates gradients for repeated ids") {
    Graph g;
    const auto table = g.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}), true);
    const auto out = g.embed_lookup(table, {0, 0, 1});
    const auto loss = g.reduce_sum(out);
    auto grads = g.backward(loss);
    CHECK(grads.at(table).vec() == std::vector<double>{2, 2, 1, 1});
}

TEST_CASE("layernorm handles near-zero variance through eps") {
    Graph g;
    const auto out = g.layernorm(g.leaf(Tensor::from({1, 4}, {2, 2, 2, 2})));
    for (double v : g.value(out).vec()) CHECK(v == 0.0);
}
