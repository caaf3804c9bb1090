#include <doctest.h>

#include <cmath>

#include "hierenv/optim.hpp"

using namespace hierenv;

namespace {

void set_grad(Tensor& t, const std::vector<double>& g) {
    t.zero_grad();
    for (size_t i = 0; i < g.size(); ++i) t.node->grad[i] = g[i];
}

}  // namespace

TEST_CASE("param store rejects duplicates and keeps insertion order") {
    ParamStore p;
    p.add("w", Tensor::zeros({2}));
    p.add("b", Tensor::zeros({1}));
    CHECK_THROWS_AS(p.add("w", Tensor::zeros({2})), ContractError);
    std::vector<std::string> names;
    for (const auto& [name, t] : p) names.push_back(name);
    CHECK(names == std::vector<std::string>{"w", "b"});
    CHECK_THROWS_AS(p.get("missing"), ContractError);
}

TEST_CASE("first Adam step moves by about -lr * sign(g)") {
    ParamStore p;
    Tensor& x = p.add("x", Tensor::from_values({2}, {1.0, -2.0}));
    Adam adam(p, AdamConfig{1e-3, 0.9, 0.999, 1e-8});
    set_grad(x, {0.5, -3.0});
    adam.step();
    CHECK(x.values()[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
    CHECK(x.values()[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-6));
    CHECK(adam.step_count() == 1);
}

TEST_CASE("zero gradient leaves the parameter unchanged but advances the counter") {
    ParamStore p;
    Tensor& x = p.add("x", Tensor::from_values({1}, {0.7}));
    Adam adam(p, AdamConfig{});
    set_grad(x, {0.0});
    adam.step();
    CHECK(x.values()[0] == 0.7);
    CHECK(adam.step_count() == 1);
}

TEST_CASE("two constant-gradient steps match the hand-evaluated recurrence") {
    const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.25;
    ParamStore p;
    Tensor& x = p.add("x", Tensor::from_values({1}, {1.0}));
    Adam adam(p, AdamConfig{lr, b1, b2, eps});

    // Oracle: unroll the recurrence independently.
    double m = 0.0, v = 0.0, theta = 1.0;
    for (int t = 1; t <= 2; ++t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        theta -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    }

    set_grad(x, {g});
    adam.step();
    const double after_one = x.values()[0];
    set_grad(x, {g});
    adam.step();
    CHECK(x.values()[0] == doctest::Approx(theta).epsilon(1e-15));
    // Second-moment accumulation keeps every step strictly below lr.
    CHECK(std::fabs(x.values()[0] - after_one) < lr);
    CHECK(std::fabs(after_one - 1.0) < lr);
}

TEST_CASE("Adam demands populated gradients") {
    ParamStore p;
    p.add("x", Tensor::zeros({3}));
    Adam adam(p, AdamConfig{});
    CHECK_THROWS_AS(adam.step(), ContractError);
}

TEST_CASE("Adam clears gradients after stepping") {
    ParamStore p;
    Tensor& x = p.add("x", Tensor::from_values({1}, {1.0}));
    Adam adam(p, AdamConfig{});
    set_grad(x, {1.0});
    adam.step();
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("finite differences are near-exact on a quadratic") {
    for (double eps : {1e-6, 1e-5, 1e-4}) {
        ParamStore p;
        Tensor& x = p.add("x", Tensor::from_values({3}, {1.0, -0.5, 2.0}));
        auto loss = [&] { return sum(mul(x, x)); };
        FdReport rep = finite_difference_check(loss, p, eps);
        CHECK(rep.max_rel_err < 1e-8);
    }
}

TEST_CASE("non-deterministic losses are rejected") {
    ParamStore p;
    Tensor& x = p.add("x", Tensor::from_values({4}, {1.0, 2.0, 3.0, 4.0}));
    RngStream shared(5);  // advances across calls: not frozen
    auto loss = [&] { return sum(dropout(x, 0.5, shared)); };
    CHECK_THROWS_AS(finite_difference_check(loss, p, 1e-5), ContractError);
}

TEST_CASE("snapshot and restore round-trip parameter values") {
    ParamStore p;
    Tensor& x = p.add("x", Tensor::from_values({2}, {1.0, 2.0}));
    auto snap = p.snapshot();
    x.mutable_values() = {9.0, 9.0};
    p.restore(snap);
    CHECK(x.values() == std::vector<double>{1.0, 2.0});
}
