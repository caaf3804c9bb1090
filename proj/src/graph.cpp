#include "hierenv/graph.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "hierenv/rng.hpp"

namespace hierenv {

using nlohmann::ordered_json;

std::vector<std::vector<double>> Graph::dense_adjacency() const {
    std::vector<std::vector<double>> a(static_cast<size_t>(num_nodes),
                                       std::vector<double>(static_cast<size_t>(num_nodes), 0.0));
    for (const auto& e : edges) {
        a[e[0]][e[1]] = 1.0;
        a[e[1]][e[0]] = 1.0;
    }
    return a;
}

void Graph::validate() const {
    if (num_nodes <= 0) throw ParseError("graph '" + id + "': num_nodes must be positive");
    if (static_cast<int>(node_features.size()) != num_nodes)
        throw ParseError("graph '" + id + "': node_features row count differs from num_nodes");
    const size_t d = node_features.empty() ? 0 : node_features[0].size();
    for (const auto& row : node_features)
        if (row.size() != d)
            throw ParseError("graph '" + id + "': ragged node_features");
    std::set<std::pair<int, int>> seen;
    for (const auto& e : edges) {
        if (e[0] == e[1])
            throw ParseError("graph '" + id + "': self-loop at node " + std::to_string(e[0]));
        if (e[0] < 0 || e[1] < 0 || e[0] >= num_nodes || e[1] >= num_nodes)
            throw ParseError("graph '" + id + "': edge endpoint out of range");
        if (e[0] >= e[1])
            throw ParseError("graph '" + id + "': edges must be stored with i < j");
        if (!seen.insert({e[0], e[1]}).second)
            throw ParseError("graph '" + id + "': duplicate edge");
    }
    if (label < 0) throw ParseError("graph '" + id + "': negative label");
}

Batch batch_graphs(const std::vector<Graph>& graphs) {
    if (graphs.empty()) throw ContractError("batch_graphs: empty graph list");
    Batch b;
    b.graphs = graphs;
    b.feature_dim = graphs[0].feature_dim();
    int offset = 0;
    std::vector<double> feat;
    for (size_t g = 0; g < graphs.size(); ++g) {
        const Graph& gr = graphs[g];
        if (gr.feature_dim() != b.feature_dim)
            throw ContractError("batch_graphs: feature width mismatch at graph '" + gr.id + "'");
        b.node_offset.push_back(offset);
        for (int i = 0; i < gr.num_nodes; ++i) {
            b.node_to_graph.push_back(static_cast<int>(g));
            feat.insert(feat.end(), gr.node_features[i].begin(), gr.node_features[i].end());
        }
        for (const auto& e : gr.edges) {
            b.edges.push_back({e[0] + offset, e[1] + offset});
            b.edge_to_graph.push_back(static_cast<int>(g));
        }
        b.labels.push_back(gr.label);
        offset += gr.num_nodes;
    }
    b.total_nodes = offset;
    b.features = Tensor::from_values({b.total_nodes, b.feature_dim}, std::move(feat));
    return b;
}

Tensor Batch::dense_adjacency() const {
    std::vector<double> a(static_cast<size_t>(total_nodes) * total_nodes, 0.0);
    for (const auto& e : edges) {
        a[static_cast<size_t>(e[0]) * total_nodes + e[1]] = 1.0;
        a[static_cast<size_t>(e[1]) * total_nodes + e[0]] = 1.0;
    }
    return Tensor::from_values({total_nodes, total_nodes}, std::move(a));
}

namespace {

Graph graph_from_json(const ordered_json& j, int line_no) {
    auto fail = [line_no](const std::string& what) {
        throw ParseError("line " + std::to_string(line_no) + ": " + what);
    };
    Graph g;
    try {
        g.id = j.at("id").get<std::string>();
        g.num_nodes = j.at("num_nodes").get<int>();
        for (const auto& e : j.at("edges")) {
            if (!e.is_array() || e.size() != 2) fail("edge entries must be [i, j] pairs");
            g.edges.push_back({e[0].get<int>(), e[1].get<int>()});
        }
        for (const auto& row : j.at("node_features"))
            g.node_features.push_back(row.get<std::vector<double>>());
        g.label = j.at("label").get<int>();
        if (j.contains("true_env")) g.true_env = j.at("true_env").get<int>();
        if (j.contains("true_family")) g.true_family = j.at("true_family").get<int>();
    } catch (const ordered_json::exception& e) {
        fail(std::string("malformed graph object: ") + e.what());
    }
    try {
        g.validate();
    } catch (const ParseError& e) {
        fail(e.what());
    }
    return g;
}

ordered_json graph_to_json(const Graph& g) {
    ordered_json j;
    j["id"] = g.id;
    j["num_nodes"] = g.num_nodes;
    ordered_json edges = ordered_json::array();
    EdgeList sorted = g.edges;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& e : sorted) edges.push_back({e[0], e[1]});
    j["edges"] = std::move(edges);
    j["node_features"] = g.node_features;
    j["label"] = g.label;
    if (g.true_env) j["true_env"] = *g.true_env;
    if (g.true_family) j["true_family"] = *g.true_family;
    return j;
}

}  // namespace

std::vector<Graph> load_graphs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("cannot open graph file: " + path);
    std::vector<Graph> graphs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ParseError("line " + std::to_string(line_no) + ": invalid JSON in " + path);
        graphs.push_back(graph_from_json(j, line_no));
    }
    return graphs;
}

void save_graphs(const std::vector<Graph>& graphs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DependencyError("cannot write graph file: " + path);
    for (const auto& g : graphs) out << graph_to_json(g).dump() << "\n";
}

std::vector<std::vector<Graph>> split_dataset(const std::vector<Graph>& graphs,
                                              const std::vector<double>& fractions,
                                              uint64_t seed) {
    if (fractions.empty()) throw ContractError("split_dataset: no fractions given");
    double total = 0.0;
    for (double f : fractions) {
        if (f < 0) throw ContractError("split_dataset: negative fraction");
        total += f;
    }
    if (std::fabs(total - 1.0) > 1e-9)
        throw ContractError("split_dataset: fractions must sum to 1");

    std::vector<int> order(graphs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    RngStream stream = derive_stream(seed, "split");
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
        std::swap(order[i], order[stream.uniform_int(i + 1)]);

    const int n = static_cast<int>(graphs.size());
    std::vector<int> counts;
    int assigned = 0;
    for (size_t k = 0; k + 1 < fractions.size(); ++k) {
        int c = static_cast<int>(fractions[k] * n);
        counts.push_back(c);
        assigned += c;
    }
    counts.push_back(n - assigned);

    std::vector<std::vector<Graph>> parts(fractions.size());
    int pos = 0;
    for (size_t k = 0; k < counts.size(); ++k)
        for (int i = 0; i < counts[k]; ++i) parts[k].push_back(graphs[order[pos++]]);
    return parts;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    ordered_json j;
    j["train"] = m.train;
    j["val"] = m.val;
    j["test"] = m.test;
    j["num_classes"] = m.num_classes;
    j["feature_dim"] = m.feature_dim;
    std::ofstream out(path);
    if (!out) throw DependencyError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("cannot open manifest: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const ordered_json::exception& e) {
        throw ParseError("manifest " + path + ": " + e.what());
    }
    DatasetManifest m;
    try {
        m.train = j.at("train").get<std::string>();
        m.val = j.at("val").get<std::string>();
        m.test = j.at("test").get<std::string>();
        m.num_classes = j.at("num_classes").get<int>();
        m.feature_dim = j.at("feature_dim").get<int>();
    } catch (const ordered_json::exception& e) {
        throw ParseError("manifest " + path + ": " + e.what());
    }
    return m;
}

}  // namespace hierenv
