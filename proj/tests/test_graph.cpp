#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "hierenv/graph.hpp"

using namespace hierenv;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/hierenv_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Graph simple_graph(const std::string& id, int n, EdgeList edges, int label = 0) {
    Graph g;
    g.id = id;
    g.num_nodes = n;
    g.edges = std::move(edges);
    g.node_features.assign(static_cast<size_t>(n), {1.0, 0.5});
    g.label = label;
    return g;
}

}  // namespace

TEST_CASE("loads a minimal two-node graph") {
    TempFile f("min.jsonl");
    write_file(f.path,
               R"({"id":"g0","num_nodes":2,"edges":[[0,1]],"node_features":[[1],[1]],"label":0})"
               "\n");
    auto graphs = load_graphs(f.path);
    REQUIRE(graphs.size() == 1);
    CHECK(graphs[0].id == "g0");
    CHECK(graphs[0].num_nodes == 2);
    auto adj = graphs[0].dense_adjacency();
    CHECK(adj[0][1] == 1.0);
    CHECK(adj[1][0] == 1.0);
    CHECK(adj[0][0] == 0.0);
}

TEST_CASE("self-loops are rejected with the offending line") {
    TempFile f("loop.jsonl");
    write_file(f.path,
               R"({"id":"a","num_nodes":2,"edges":[[0,1]],"node_features":[[1],[1]],"label":0})"
               "\n"
               R"({"id":"b","num_nodes":2,"edges":[[0,0]],"node_features":[[1],[1]],"label":0})"
               "\n");
    try {
        load_graphs(f.path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        CHECK(std::string(e.what()).find("self-loop") != std::string::npos);
    }
}

TEST_CASE("malformed rows name their line") {
    TempFile f("bad.jsonl");
    SUBCASE("invalid json") {
        write_file(f.path, "{not json}\n");
        CHECK_THROWS_AS(load_graphs(f.path), ParseError);
    }
    SUBCASE("unsorted edge endpoints") {
        write_file(f.path,
                   R"({"id":"a","num_nodes":2,"edges":[[1,0]],"node_features":[[1],[1]],"label":0})"
                   "\n");
        CHECK_THROWS_AS(load_graphs(f.path), ParseError);
    }
    SUBCASE("duplicate edge") {
        write_file(
            f.path,
            R"({"id":"a","num_nodes":2,"edges":[[0,1],[0,1]],"node_features":[[1],[1]],"label":0})"
            "\n");
        CHECK_THROWS_AS(load_graphs(f.path), ParseError);
    }
    SUBCASE("ragged features") {
        write_file(
            f.path,
            R"({"id":"a","num_nodes":2,"edges":[[0,1]],"node_features":[[1],[1,2]],"label":0})"
            "\n");
        CHECK_THROWS_AS(load_graphs(f.path), ParseError);
    }
    SUBCASE("edge endpoint out of range") {
        write_file(f.path,
                   R"({"id":"a","num_nodes":2,"edges":[[0,5]],"node_features":[[1],[1]],"label":0})"
                   "\n");
        CHECK_THROWS_AS(load_graphs(f.path), ParseError);
    }
}

TEST_CASE("save then load is an identity and bytes are stable") {
    Graph g;
    g.id = "g1";
    g.num_nodes = 4;
    g.edges = {{0, 1}, {1, 2}, {0, 3}};
    g.node_features = {{1, 0}, {0, 1}, {1, 1}, {0, 0}};
    g.label = 1;
    g.true_env = 3;
    g.true_family = 0;

    TempFile f1("rt1.jsonl"), f2("rt2.jsonl");
    save_graphs({g}, f1.path);
    auto loaded = load_graphs(f1.path);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].id == g.id);
    CHECK(loaded[0].edges == g.edges);
    CHECK(loaded[0].node_features == g.node_features);
    CHECK(loaded[0].label == g.label);
    CHECK(loaded[0].true_env == g.true_env);
    CHECK(loaded[0].true_family == g.true_family);

    save_graphs(loaded, f2.path);
    CHECK(read_file(f1.path) == read_file(f2.path));
}

TEST_CASE("two 3-node graphs batch into a zero off-block composition") {
    Batch b = batch_graphs({simple_graph("a", 3, {{0, 1}, {1, 2}}, 0),
                            simple_graph("b", 3, {{0, 2}}, 1)});
    CHECK(b.total_nodes == 6);
    CHECK(b.node_to_graph == std::vector<int>{0, 0, 0, 1, 1, 1});
    CHECK(b.labels == std::vector<int>{0, 1});
    Tensor adj = b.dense_adjacency();
    for (int i = 0; i < 3; ++i)
        for (int j = 3; j < 6; ++j) {
            CHECK(adj(i, j) == 0.0);
            CHECK(adj(j, i) == 0.0);
        }
    CHECK(adj(3, 5) == 1.0);
    CHECK(adj(0, 1) == 1.0);
}

TEST_CASE("single-graph batch reproduces the input and unbatch round-trips") {
    Graph g = simple_graph("solo", 4, {{0, 1}, {2, 3}}, 1);
    Batch b = batch_graphs({g});
    CHECK(b.total_nodes == 4);
    CHECK(b.edges == g.edges);
    auto back = b.unbatch();
    REQUIRE(back.size() == 1);
    CHECK(back[0].id == g.id);
    CHECK(back[0].edges == g.edges);

    Batch b2 = batch_graphs({g, simple_graph("x", 2, {{0, 1}})});
    auto both = b2.unbatch();
    CHECK(both[0].edges == g.edges);
    CHECK(both[1].num_nodes == 2);
}

TEST_CASE("batching rejects mixed feature widths") {
    Graph g1 = simple_graph("a", 2, {{0, 1}});
    Graph g2 = simple_graph("b", 2, {{0, 1}});
    g2.node_features = {{1.0}, {2.0}};
    CHECK_THROWS_AS(batch_graphs({g1, g2}), ContractError);
}

TEST_CASE("split_dataset partitions deterministically") {
    std::vector<Graph> graphs;
    for (int i = 0; i < 20; ++i)
        graphs.push_back(simple_graph("g" + std::to_string(i), 2, {{0, 1}}));

    SUBCASE("fraction 1.0 keeps everything") {
        auto parts = split_dataset(graphs, {1.0}, 7);
        REQUIRE(parts.size() == 1);
        CHECK(parts[0].size() == graphs.size());
    }
    SUBCASE("parts are disjoint and exhaustive") {
        auto parts = split_dataset(graphs, {0.5, 0.25, 0.25}, 7);
        std::set<std::string> seen;
        size_t total = 0;
        for (const auto& part : parts) {
            total += part.size();
            for (const auto& g : part) CHECK(seen.insert(g.id).second);
        }
        CHECK(total == graphs.size());
    }
    SUBCASE("same seed, same partition") {
        auto a = split_dataset(graphs, {0.7, 0.3}, 11);
        auto b = split_dataset(graphs, {0.7, 0.3}, 11);
        for (size_t k = 0; k < a.size(); ++k) {
            REQUIRE(a[k].size() == b[k].size());
            for (size_t i = 0; i < a[k].size(); ++i) CHECK(a[k][i].id == b[k][i].id);
        }
    }
    SUBCASE("invalid fractions") {
        CHECK_THROWS_AS(split_dataset(graphs, {0.5, 0.2}, 7), ContractError);
    }
}

TEST_CASE("manifest round trip") {
    TempFile f("manifest.json");
    DatasetManifest m;
    m.train = "train.jsonl";
    m.val = "val.jsonl";
    m.test = "test.jsonl";
    m.num_classes = 2;
    m.feature_dim = 11;
    save_manifest(m, f.path);
    DatasetManifest r = load_manifest(f.path);
    CHECK(r.train == m.train);
    CHECK(r.num_classes == 2);
    CHECK(r.feature_dim == 11);
}
