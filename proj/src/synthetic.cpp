#include "hierenv/synthetic.hpp"

#include <algorithm>
#include <string>

#include "hierenv/rng.hpp"

namespace hierenv {

void SyntheticConfig::validate() const {
    if (n_train <= 0 || n_val <= 0 || n_test <= 0)
        throw ContractError("SyntheticConfig: split counts must be positive");
    for (double p : {rho_train, rho_test, label_flip_prob})
        if (p < 0.0 || p > 1.0)
            throw ContractError("SyntheticConfig: probabilities must lie in [0, 1]");
}

namespace {

void add_edge(EdgeList& edges, int a, int b) {
    edges.push_back({std::min(a, b), std::max(a, b)});
}

bool has_edge(const EdgeList& edges, int a, int b) {
    std::array<int, 2> e = {std::min(a, b), std::max(a, b)};
    return std::find(edges.begin(), edges.end(), e) != edges.end();
}

// Label motifs occupy nodes [0, 5). y=0: 5-cycle. y=1: house, a 4-cycle
// 0-1-2-3 with roof node 4 on the 0-1 edge.
void place_label_motif(EdgeList& edges, int pre_flip_label) {
    if (pre_flip_label == 0) {
        for (int i = 0; i < 5; ++i) add_edge(edges, i, (i + 1) % 5);
    } else {
        for (int i = 0; i < 4; ++i) add_edge(edges, i, (i + 1) % 4);
        add_edge(edges, 0, 4);
        add_edge(edges, 1, 4);
    }
}

// Variant motif on nodes [base, base + size). Returns node count.
// ids 0-3: paths with 3..6 edges. ids 4-7: cliques on 3..6 nodes.
int place_variant_motif(EdgeList& edges, int motif_id, int base) {
    if (motif_id < 4) {
        const int path_edges = 3 + motif_id;
        for (int i = 0; i < path_edges; ++i) add_edge(edges, base + i, base + i + 1);
        return path_edges + 1;
    }
    const int k = 3 + (motif_id - 4);
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) add_edge(edges, base + i, base + j);
    return k;
}

Graph make_graph(const std::string& id, double rho, double flip_prob, RngStream rng) {
    const int pre_flip = rng.bernoulli(0.5) ? 1 : 0;
    const int family = rng.bernoulli(rho) ? pre_flip : 1 - pre_flip;
    const int motif_id = family * 4 + rng.uniform_int(4);

    Graph g;
    g.id = id;
    EdgeList edges;
    place_label_motif(edges, pre_flip);
    const int variant_nodes = place_variant_motif(edges, motif_id, 5);
    const int core_nodes = 5 + variant_nodes;

    // Two bridge edges between uniformly chosen endpoints of the two motifs.
    for (int b = 0; b < 2; ++b) {
        int u, v;
        do {
            u = rng.uniform_int(5);
            v = 5 + rng.uniform_int(variant_nodes);
        } while (has_edge(edges, u, v));
        add_edge(edges, u, v);
    }

    // Two noise nodes, one random edge each into the core.
    for (int k = 0; k < 2; ++k) add_edge(edges, core_nodes + k, rng.uniform_int(core_nodes));

    g.num_nodes = core_nodes + 2;
    std::sort(edges.begin(), edges.end());
    g.edges = std::move(edges);

    g.label = rng.bernoulli(flip_prob) ? 1 - pre_flip : pre_flip;
    g.true_env = motif_id;
    g.true_family = family;

    std::vector<int> degree(static_cast<size_t>(g.num_nodes), 0);
    for (const auto& e : g.edges) {
        ++degree[e[0]];
        ++degree[e[1]];
    }
    g.node_features.assign(static_cast<size_t>(g.num_nodes),
                           std::vector<double>(kSyntheticFeatureDim, 0.0));
    for (int i = 0; i < g.num_nodes; ++i)
        g.node_features[i][std::min(degree[i], kSyntheticFeatureDim - 1)] = 1.0;
    return g;
}

std::vector<Graph> make_split(const SyntheticConfig& cfg, const char* split, int count,
                              double rho) {
    std::vector<Graph> graphs;
    graphs.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        std::string id = std::string(split) + "-" + std::to_string(i);
        RngStream rng = derive_stream(cfg.seed, std::string("gen-") + split, static_cast<uint64_t>(i));
        graphs.push_back(make_graph(id, rho, cfg.label_flip_prob, rng));
    }
    return graphs;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
    config.validate();
    SyntheticDataset ds;
    ds.train = make_split(config, "train", config.n_train, config.rho_train);
    ds.val = make_split(config, "val", config.n_val, config.rho_train);
    ds.test = make_split(config, "test", config.n_test, config.rho_test);
    return ds;
}

}  // namespace hierenv
