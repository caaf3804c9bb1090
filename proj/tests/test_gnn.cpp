#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "hierenv/gnn.hpp"

using namespace hierenv;

namespace {

Graph featured_graph(const std::string& id, int n, EdgeList edges,
                     std::vector<std::vector<double>> feats, int label = 0) {
    Graph g;
    g.id = id;
    g.num_nodes = n;
    g.edges = std::move(edges);
    g.node_features = std::move(feats);
    g.label = label;
    return g;
}

void set_values(Tensor& t, const std::vector<double>& v) {
    REQUIRE(t.values().size() == v.size());
    t.mutable_values() = v;
}

void set_identity(Tensor& t) {
    const int n = t.size(0);
    REQUIRE(t.size(1) == n);
    std::vector<double> eye(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eye[static_cast<size_t>(i) * n + i] = 1.0;
    t.mutable_values() = eye;
}

}  // namespace

TEST_CASE("gin layer with no edges, zero eps, identity mlp passes features through") {
    ParamStore params;
    RngStream init(1);
    GinLayer layer = GinLayer::create(params, "l", 2, 2, init);
    set_identity(params.get("l.mlp.w1"));
    set_identity(params.get("l.mlp.w2"));
    set_values(params.get("l.mlp.b1"), {0, 0});
    set_values(params.get("l.mlp.b2"), {0, 0});
    set_values(params.get("l.eps"), {0});

    Tensor h = Tensor::from_values({3, 2}, {0.3, 0.7, 1.0, 0.2, 0.5, 0.5});
    Tensor out = layer.forward(h, {}, Tensor());
    for (int i = 0; i < 6; ++i) CHECK(out.values()[i] == doctest::Approx(h.values()[i]));
}

TEST_CASE("isolated nodes with equal features get equal embeddings") {
    ParamStore params;
    RngStream init(5);
    GinLayer layer = GinLayer::create(params, "l", 3, 4, init);
    Tensor h = Tensor::from_values({2, 3}, {0.1, 0.2, 0.3, 0.1, 0.2, 0.3});
    Tensor out = layer.forward(h, {}, Tensor());
    for (int j = 0; j < 4; ++j) CHECK(out(0, j) == out(1, j));
}

TEST_CASE("gin layer on a 3-node path matches explicit arithmetic") {
    ParamStore params;
    RngStream init(9);
    GinLayer layer = GinLayer::create(params, "l", 2, 2, init);
    const std::vector<double> w1 = {0.2, -0.4, 0.5, 0.1};
    const std::vector<double> b1 = {0.05, -0.02};
    const std::vector<double> w2 = {1.5, 0.3, -0.7, 0.8};
    const std::vector<double> b2 = {0.0, 0.1};
    const double eps = 0.25;
    set_values(params.get("l.mlp.w1"), w1);
    set_values(params.get("l.mlp.b1"), b1);
    set_values(params.get("l.mlp.w2"), w2);
    set_values(params.get("l.mlp.b2"), b2);
    set_values(params.get("l.eps"), {eps});

    const std::vector<std::vector<double>> x = {{1.0, 0.0}, {0.5, 0.5}, {0.0, 2.0}};
    EdgeList edges = {{0, 1}, {1, 2}};
    Tensor h = Tensor::from_values({3, 2}, {1.0, 0.0, 0.5, 0.5, 0.0, 2.0});
    Tensor out = layer.forward(h, edges, Tensor());

    // Independent evaluation with plain loops.
    const std::vector<std::vector<int>> nbrs = {{1}, {0, 2}, {2 - 1}};
    for (int i = 0; i < 3; ++i) {
        double agg[2] = {0, 0};
        for (int j : (i == 0 ? std::vector<int>{1}
                             : i == 1 ? std::vector<int>{0, 2} : std::vector<int>{1})) {
            agg[0] += x[j][0];
            agg[1] += x[j][1];
        }
        const double in0 = (1 + eps) * x[i][0] + agg[0];
        const double in1 = (1 + eps) * x[i][1] + agg[1];
        const double h1 = std::max(0.0, in0 * w1[0] + in1 * w1[2] + b1[0]);
        const double h2 = std::max(0.0, in0 * w1[1] + in1 * w1[3] + b1[1]);
        const double o0 = h1 * w2[0] + h2 * w2[2] + b2[0];
        const double o1 = h1 * w2[1] + h2 * w2[3] + b2[1];
        CHECK(out(i, 0) == doctest::Approx(o0).epsilon(1e-12));
        CHECK(out(i, 1) == doctest::Approx(o1).epsilon(1e-12));
    }
}

TEST_CASE("graph embeddings are invariant to node relabeling") {
    ParamStore params;
    RngStream init(11);
    GinEncoder enc = GinEncoder::create(params, "enc", 2, 8, 2, init);

    Graph g = featured_graph("a", 4, {{0, 1}, {1, 2}, {2, 3}},
                             {{1, 0}, {0, 1}, {1, 1}, {0.5, 0.5}});
    // Relabel via permutation (0 1 2 3) -> (2 0 3 1).
    Graph p = featured_graph("p", 4, {{0, 2}, {1, 3}, {0, 3}},
                             {{0, 1}, {0.5, 0.5}, {1, 0}, {1, 1}});

    Tensor ga = enc.encode(batch_graphs({g})).graph_embeddings;
    Tensor gp = enc.encode(batch_graphs({p})).graph_embeddings;
    for (int j = 0; j < 8; ++j) CHECK(std::fabs(ga(0, j) - gp(0, j)) < 1e-9);
}

TEST_CASE("all-ones edge weights reproduce the plain encoding") {
    ParamStore params;
    RngStream init(13);
    GinEncoder enc = GinEncoder::create(params, "enc", 2, 6, 1, init);
    Batch b = batch_graphs({featured_graph("a", 3, {{0, 1}, {1, 2}}, {{1, 0}, {0, 1}, {1, 1}})});
    Tensor plain = enc.encode(b).graph_embeddings;
    Tensor ones = Tensor::full({2}, 1.0);
    Tensor overridden = enc.encode(b, ones).graph_embeddings;
    CHECK(plain.values() == overridden.values());
}

TEST_CASE("encode rejects a mis-sized override") {
    ParamStore params;
    RngStream init(13);
    GinEncoder enc = GinEncoder::create(params, "enc", 2, 6, 1, init);
    Batch b = batch_graphs({featured_graph("a", 3, {{0, 1}, {1, 2}}, {{1, 0}, {0, 1}, {1, 1}})});
    CHECK_THROWS_AS(enc.encode(b, Tensor::full({5}, 1.0)), ContractError);
}

TEST_CASE("single-layer pooled encoding of a 2-node graph matches hand arithmetic") {
    ParamStore params;
    RngStream init(17);
    GinEncoder enc = GinEncoder::create(params, "enc", 1, 2, 1, init);
    set_values(params.get("enc.layer0.mlp.w1"), {1.0, -1.0});
    set_values(params.get("enc.layer0.mlp.b1"), {0.0, 0.5});
    set_values(params.get("enc.layer0.mlp.w2"), {2.0, 0.0, 1.0, 1.0});
    set_values(params.get("enc.layer0.mlp.b2"), {0.1, -0.1});
    set_values(params.get("enc.layer0.eps"), {0.5});

    Batch b = batch_graphs({featured_graph("a", 2, {{0, 1}}, {{2.0}, {4.0}})});
    Tensor pooled = enc.encode(b).graph_embeddings;

    auto node_out = [&](double self, double nbr) {
        const double in = 1.5 * self + nbr;
        const double h1 = std::max(0.0, in * 1.0 + 0.0);
        const double h2 = std::max(0.0, in * -1.0 + 0.5);
        return std::pair<double, double>{h1 * 2.0 + h2 * 1.0 + 0.1, h1 * 0.0 + h2 * 1.0 - 0.1};
    };
    auto [a0, a1] = node_out(2.0, 4.0);
    auto [b0, b1] = node_out(4.0, 2.0);
    CHECK(pooled(0, 0) == doctest::Approx((a0 + b0) / 2).epsilon(1e-12));
    CHECK(pooled(0, 1) == doctest::Approx((a1 + b1) / 2).epsilon(1e-12));
}

TEST_CASE("projection heads emit unit rows and distinct heads differ") {
    ParamStore params;
    RngStream init(19);
    ProjectionHead variant = ProjectionHead::create(params, "var", 6, 6, 4, init);
    ProjectionHead invariant = ProjectionHead::create(params, "inv", 6, 6, 4, init);

    RngStream data(23);
    std::vector<double> v(12);
    for (double& x : v) x = data.uniform(-1, 1);
    Tensor emb = Tensor::from_values({2, 6}, std::move(v));

    Tensor zv = variant.project(emb);
    Tensor zi = invariant.project(emb);
    for (int i = 0; i < 2; ++i) {
        double nv = 0, ni = 0, dot_self = 0;
        for (int j = 0; j < 4; ++j) {
            nv += zv(i, j) * zv(i, j);
            ni += zi(i, j) * zi(i, j);
            dot_self += zv(i, j) * zv(i, j);
        }
        CHECK(std::fabs(std::sqrt(nv) - 1.0) < 1e-9);
        CHECK(std::fabs(std::sqrt(ni) - 1.0) < 1e-9);
        CHECK(dot_self == doctest::Approx(1.0).epsilon(1e-9));  // cosine with itself
    }
    // same inputs, different parameters: heads disagree
    double diff = 0;
    for (int j = 0; j < 4; ++j) diff += std::fabs(zv(0, j) - zi(0, j));
    CHECK(diff > 1e-3);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    ParamStore params;
    RngStream init(29);
    GinEncoder::create(params, "enc", 3, 8, 2, init);
    Mlp::create(params, "head", 8, 8, 2, init);

    const std::string path = "/tmp/hierenv_test_ckpt.json";
    save_checkpoint(params, path);
    auto before = params.snapshot();
    for (auto& [name, t] : params)
        for (double& v : t.mutable_values()) v = 0.123;
    load_checkpoint(params, path);
    auto after = params.snapshot();
    REQUIRE(before.size() == after.size());
    for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
    std::remove(path.c_str());
}
