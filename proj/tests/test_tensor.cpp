#include <doctest.h>

#include <cmath>

#include "hierenv/optim.hpp"
#include "hierenv/tensor.hpp"

using namespace hierenv;

namespace {

Tensor random_tensor(std::vector<int> shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    int n = 1;
    for (int d : shape) n *= d;
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_values(std::move(shape), std::move(v));
}

// Reduces an op output to a scalar through a fixed random functional and
// fd-checks the inputs registered in the store.
double op_max_rel_err(ParamStore& params, const std::function<Tensor()>& forward,
                      uint64_t weight_seed = 11) {
    auto loss_fn = [&]() {
        Tensor out = forward();
        RngStream w(weight_seed);
        Tensor weights = random_tensor(out.shape(), w);
        return sum(mul(out, weights));
    };
    return finite_difference_check(loss_fn, params, 1e-6, 64).max_rel_err;
}

}  // namespace

TEST_CASE("sigmoid of zero is one half") {
    Tensor y = sigmoid(Tensor::from_values({1}, {0.0}));
    CHECK(y.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax of uniform logits is uniform") {
    Tensor y = softmax(Tensor::from_values({3}, {1.0, 1.0, 1.0}));
    for (double v : y.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));
}

TEST_CASE("matmul by the identity reproduces the input") {
    RngStream rng(3);
    Tensor m = random_tensor({3, 3}, rng);
    Tensor eye = Tensor::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor out = matmul(eye, m);
    for (int i = 0; i < 9; ++i) CHECK(out.values()[i] == m.values()[i]);
}

TEST_CASE("softmax rows sum to one and stay strictly positive") {
    RngStream rng(5);
    Tensor x = random_tensor({40, 7}, rng, -50.0, 50.0);
    Tensor y = softmax(x);
    for (int i = 0; i < 40; ++i) {
        double s = 0.0;
        for (int j = 0; j < 7; ++j) {
            const double v = y(i, j);
            CHECK(v > 0.0);
            s += v;
        }
        CHECK(std::fabs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("backward of x*x at x=3 gives 6") {
    ParamStore params;
    Tensor& x = params.add("x", Tensor::scalar(3.0));
    Tensor loss = mul(x, x);
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("backward of sigmoid at 0 gives 0.25") {
    ParamStore params;
    Tensor& x = params.add("x", Tensor::scalar(0.0));
    backward(sigmoid(x));
    CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("gradients accumulate additively across uses") {
    ParamStore params;
    Tensor& x = params.add("x", Tensor::scalar(1.7));
    auto f = [&](const Tensor& t) { return sigmoid(scale(t, 2.0)); };
    backward(add(f(x), f(x)));
    const double doubled = x.grad()[0];
    x.zero_grad();
    backward(f(x));
    CHECK(doubled == doctest::Approx(2.0 * x.grad()[0]).epsilon(1e-15));
}

TEST_CASE("backward contract violations") {
    Tensor v = Tensor::from_values({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(backward(v), ContractError);

    Tensor x = Tensor::scalar(1.0, true);
    Tensor loss = mul(x, x);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), ContractError);  // tape consumed
}

TEST_CASE("shape and domain errors") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
    CHECK_THROWS_AS(add(a, Tensor::zeros({2, 2})), ShapeError);
    CHECK_THROWS_AS(log(Tensor::from_values({1}, {-1.0})), DomainError);
    CHECK_THROWS_AS(log(Tensor::from_values({1}, {0.0})), DomainError);
    CHECK_THROWS_AS(exp(Tensor::from_values({1}, {1000.0})), DomainError);  // overflow is an error
}

TEST_CASE("forward values are bit-reproducible for a fixed seed") {
    auto run = [] {
        RngStream rng(99);
        Tensor x = random_tensor({6, 5}, rng);
        Tensor w = random_tensor({5, 4}, rng);
        return softmax(matmul(relu(x), w)).values();
    };
    CHECK(run() == run());
}

TEST_CASE("per-op gradients match central finite differences") {
    RngStream rng(17);

    SUBCASE("matmul") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({3, 4}, rng));
        Tensor& b = p.add("b", random_tensor({4, 2}, rng));
        CHECK(op_max_rel_err(p, [&] { return matmul(a, b); }) < 1e-7);
    }
    SUBCASE("transpose") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({3, 4}, rng));
        CHECK(op_max_rel_err(p, [&] { return transpose(a); }) < 1e-7);
    }
    SUBCASE("add same-shape and broadcasts") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({3, 4}, rng));
        Tensor& b = p.add("b", random_tensor({3, 4}, rng));
        Tensor& row = p.add("row", random_tensor({4}, rng));
        Tensor& s = p.add("s", random_tensor({1}, rng));
        CHECK(op_max_rel_err(p, [&] { return add(sub(add(a, b), row), s); }) < 1e-7);
    }
    SUBCASE("mul elementwise and scalar") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({3, 4}, rng));
        Tensor& b = p.add("b", random_tensor({3, 4}, rng));
        Tensor& s = p.add("s", random_tensor({1}, rng));
        CHECK(op_max_rel_err(p, [&] { return mul(mul(a, b), s); }) < 1e-7);
    }
    SUBCASE("concat on both axes") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({2, 3}, rng));
        Tensor& b = p.add("b", random_tensor({2, 2}, rng));
        Tensor& c = p.add("c", random_tensor({1, 5}, rng));
        CHECK(op_max_rel_err(p, [&] { return concat({concat({a, b}, 1), c}, 0); }) < 1e-7);
    }
    SUBCASE("pointwise nonlinearities") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({4, 3}, rng, 0.3, 2.0));
        CHECK(op_max_rel_err(p, [&] {
                  return log(add_const(exp(neg(sigmoid(relu(a)))), 1.0));
              }) < 1e-6);
    }
    SUBCASE("abs away from the kink") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({4, 3}, rng, 0.5, 1.5));
        Tensor sign = random_tensor({4, 3}, rng, -1.0, 1.0);
        for (double& v : sign.mutable_values()) v = v > 0 ? 1.0 : -1.0;
        CHECK(op_max_rel_err(p, [&] { return abs(mul(a, sign)); }) < 1e-7);
    }
    SUBCASE("softmax and log_softmax") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({5, 4}, rng, -2.0, 2.0));
        CHECK(op_max_rel_err(p, [&] { return softmax(a); }) < 1e-6);
        CHECK(op_max_rel_err(p, [&] { return log_softmax(a); }) < 1e-6);
    }
    SUBCASE("masked log_softmax") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({4, 4}, rng, -2.0, 2.0));
        Tensor mask = Tensor::from_values({4, 4}, {0, 1, 1, 1, 1, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1, 0});
        CHECK(op_max_rel_err(p, [&] { return masked_log_softmax(a, mask); }) < 1e-6);
    }
    SUBCASE("reductions") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({5, 4}, rng));
        CHECK(op_max_rel_err(p, [&] { return mean(a); }) < 1e-7);
        CHECK(op_max_rel_err(p, [&] { return sum(a); }) < 1e-7);
        CHECK(op_max_rel_err(p, [&] { return max_rows(a); }) < 1e-6);
    }
    SUBCASE("l2 normalization") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({4, 6}, rng, 0.5, 2.0));
        CHECK(op_max_rel_err(p, [&] { return l2_normalize_rows(a); }) < 1e-6);
    }
    SUBCASE("dropout under a frozen stream") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({6, 5}, rng));
        CHECK(op_max_rel_err(p, [&] {
                  RngStream drop(1234);
                  return dropout(a, 0.5, drop);
              }) < 1e-7);
    }
    SUBCASE("gather and reshape") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({5, 3}, rng));
        CHECK(op_max_rel_err(p, [&] {
                  return reshape(gather_rows(a, {0, 2, 2, 4}), {2, 6});
              }) < 1e-7);
    }
    SUBCASE("edge aggregation") {
        ParamStore p;
        Tensor& h = p.add("h", random_tensor({5, 3}, rng));
        Tensor& w = p.add("w", random_tensor({4}, rng, 0.1, 0.9));
        EdgeList edges = {{0, 1}, {1, 2}, {2, 3}, {0, 4}};
        CHECK(op_max_rel_err(p, [&] { return edge_aggregate(h, edges, w); }) < 1e-7);
        CHECK(op_max_rel_err(p, [&] { return edge_aggregate(h, edges); }) < 1e-7);
    }
    SUBCASE("mean pooling by group") {
        ParamStore p;
        Tensor& h = p.add("h", random_tensor({6, 3}, rng));
        CHECK(op_max_rel_err(p, [&] {
                  return pool_mean_rows(h, {0, 0, 1, 1, 1, 2}, 3);
              }) < 1e-7);
    }
    SUBCASE("dense scatter of edge weights") {
        ParamStore p;
        Tensor& w = p.add("w", random_tensor({3}, rng));
        EdgeList edges = {{0, 1}, {1, 2}, {0, 3}};
        CHECK(op_max_rel_err(p, [&] { return scatter_edges_dense(w, edges, 4); }) < 1e-7);
    }
    SUBCASE("soft selection mask") {
        ParamStore p;
        Tensor& raw = p.add("raw", random_tensor({6}, rng, -2.0, 2.0));
        std::vector<double> prev = {0, 1, 0, 0, 1, 0};
        CHECK(op_max_rel_err(p, [&] {
                  return select_mask_soft(sigmoid(raw), prev, 0.6);
              }) < 1e-6);
    }
    SUBCASE("classification losses") {
        ParamStore p;
        Tensor& z1 = p.add("z1", random_tensor({6}, rng, -2.0, 2.0));
        Tensor& z2 = p.add("z2", random_tensor({6, 3}, rng, -2.0, 2.0));
        std::vector<double> targets = {1, 0, 1, 1, 0, 0};
        std::vector<int> labels = {0, 2, 1, 1, 0, 2};
        CHECK(op_max_rel_err(p, [&] { return bce_with_logits(z1, targets); }) < 1e-6);
        CHECK(op_max_rel_err(p, [&] { return ce_with_logits(z2, labels); }) < 1e-6);
    }
    SUBCASE("clamp interior") {
        ParamStore p;
        Tensor& a = p.add("a", random_tensor({5}, rng, 0.2, 0.8));
        CHECK(op_max_rel_err(p, [&] { return clamp(a, 1e-6, 1.0 - 1e-6); }) < 1e-7);
    }
}

TEST_CASE("l2 normalization output rows have unit norm") {
    RngStream rng(23);
    Tensor y = l2_normalize_rows(random_tensor({7, 5}, rng));
    for (int i = 0; i < 7; ++i) {
        double n = 0.0;
        for (int j = 0; j < 5; ++j) n += y(i, j) * y(i, j);
        CHECK(std::fabs(std::sqrt(n) - 1.0) < 1e-9);
    }
}

TEST_CASE("max_rows breaks ties toward the lowest index") {
    ParamStore p;
    Tensor& a = p.add("a", Tensor::from_values({1, 3}, {2.0, 2.0, 1.0}));
    backward(sum(max_rows(a)));
    CHECK(a.grad()[0] == 1.0);
    CHECK(a.grad()[1] == 0.0);
}

TEST_CASE("dropout requires a valid keep probability and scales by 1/keep") {
    RngStream rng(31);
    Tensor a = Tensor::full({1000}, 1.0);
    CHECK_THROWS_AS(dropout(a, 0.0, rng), ContractError);
    Tensor out = dropout(a, 0.25, rng);
    int kept = 0;
    for (double v : out.values()) {
        CHECK((v == 0.0 || v == doctest::Approx(4.0)));
        if (v != 0.0) ++kept;
    }
    CHECK(kept > 150);
    CHECK(kept < 350);
}
