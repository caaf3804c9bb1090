#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <queue>
#include <sstream>

#include "hierenv/synthetic.hpp"

using namespace hierenv;

namespace {

std::string dump_to_string(const std::vector<Graph>& graphs) {
    const std::string path = "/tmp/hierenv_test_synth.jsonl";
    save_graphs(graphs, path);
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    std::remove(path.c_str());
    return ss.str();
}

// Connectivity over the motif core (all nodes except the two noise nodes).
bool core_connected(const Graph& g) {
    const int core = g.num_nodes - 2;
    std::vector<std::vector<int>> adj(static_cast<size_t>(core));
    for (const auto& e : g.edges) {
        if (e[0] >= core || e[1] >= core) continue;
        adj[e[0]].push_back(e[1]);
        adj[e[1]].push_back(e[0]);
    }
    std::vector<char> seen(static_cast<size_t>(core), 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    int count = 0;
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        ++count;
        for (int v : adj[u])
            if (!seen[v]) {
                seen[v] = 1;
                q.push(v);
            }
    }
    return count == core;
}

}  // namespace

TEST_CASE("identical configs generate byte-identical output") {
    SyntheticConfig cfg;
    cfg.n_train = 50;
    cfg.n_val = 10;
    cfg.n_test = 10;
    cfg.seed = 123;
    SyntheticDataset a = generate_synthetic(cfg);
    SyntheticDataset b = generate_synthetic(cfg);
    CHECK(dump_to_string(a.train) == dump_to_string(b.train));
    CHECK(dump_to_string(a.val) == dump_to_string(b.val));
    CHECK(dump_to_string(a.test) == dump_to_string(b.test));
}

TEST_CASE("environment ids, families, and features are structurally sound") {
    SyntheticConfig cfg;
    cfg.n_train = 400;
    cfg.n_val = 10;
    cfg.n_test = 10;
    cfg.seed = 7;
    SyntheticDataset ds = generate_synthetic(cfg);

    int family1 = 0;
    for (const auto& g : ds.train) {
        REQUIRE(g.true_env.has_value());
        REQUIRE(g.true_family.has_value());
        CHECK(*g.true_env >= 0);
        CHECK(*g.true_env < kSyntheticNumEnvs);
        CHECK(*g.true_family == *g.true_env / 4);
        family1 += *g.true_family;

        // one-hot degree features, capped at 10
        std::vector<int> degree(static_cast<size_t>(g.num_nodes), 0);
        for (const auto& e : g.edges) {
            ++degree[e[0]];
            ++degree[e[1]];
        }
        for (int i = 0; i < g.num_nodes; ++i) {
            int hot = -1;
            for (int d = 0; d < kSyntheticFeatureDim; ++d)
                if (g.node_features[i][d] == 1.0) {
                    CHECK(hot == -1);
                    hot = d;
                }
            CHECK(hot == std::min(degree[i], kSyntheticFeatureDim - 1));
        }
        CHECK(core_connected(g));
        g.validate();
    }
    // family sizes balanced within binomial noise (400 draws, p = 0.5)
    CHECK(family1 > 160);
    CHECK(family1 < 240);
}

TEST_CASE("rho 1 with no label noise makes family deterministic in the label") {
    SyntheticConfig cfg;
    cfg.n_train = 300;
    cfg.n_val = 10;
    cfg.n_test = 10;
    cfg.rho_train = 1.0;
    cfg.label_flip_prob = 0.0;
    cfg.seed = 9;
    SyntheticDataset ds = generate_synthetic(cfg);
    for (const auto& g : ds.train) {
        CHECK(*g.true_family == g.label);
        if (g.label == 1) CHECK(*g.true_env >= 4);  // clique family
    }
}

TEST_CASE("rho 0.5 decorrelates family and label") {
    SyntheticConfig cfg;
    cfg.n_train = 2000;
    cfg.n_val = 10;
    cfg.n_test = 10;
    cfg.rho_train = 0.5;
    cfg.label_flip_prob = 0.0;
    cfg.seed = 21;
    SyntheticDataset ds = generate_synthetic(cfg);
    int match = 0;
    for (const auto& g : ds.train) match += (*g.true_family == g.label) ? 1 : 0;
    const double rate = static_cast<double>(match) / cfg.n_train;
    CHECK(rate > 0.45);
    CHECK(rate < 0.55);
}

TEST_CASE("test split uses rho_test") {
    SyntheticConfig cfg;
    cfg.n_train = 50;
    cfg.n_val = 10;
    cfg.n_test = 1000;
    cfg.rho_train = 1.0;
    cfg.rho_test = 0.0;
    cfg.label_flip_prob = 0.0;
    cfg.seed = 33;
    SyntheticDataset ds = generate_synthetic(cfg);
    for (const auto& g : ds.test) CHECK(*g.true_family == 1 - g.label);
}

TEST_CASE("invalid configs are rejected") {
    SyntheticConfig cfg;
    cfg.n_train = 0;
    CHECK_THROWS_AS(generate_synthetic(cfg), ContractError);
    cfg.n_train = 10;
    cfg.rho_train = 1.5;
    CHECK_THROWS_AS(generate_synthetic(cfg), ContractError);
}
