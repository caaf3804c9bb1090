#include "hierenv/gnn.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace hierenv {

Tensor init_weight(int fan_in, int fan_out, RngStream& init) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(static_cast<size_t>(fan_in) * fan_out);
    for (double& v : w) v = init.uniform(-bound, bound);
    return Tensor::from_values({fan_in, fan_out}, std::move(w));
}

Mlp Mlp::create(ParamStore& params, const std::string& prefix, int in_dim, int hidden_dim,
                int out_dim, RngStream& init) {
    Mlp m;
    m.w1 = params.add(prefix + ".w1", init_weight(in_dim, hidden_dim, init));
    m.b1 = params.add(prefix + ".b1", Tensor::zeros({hidden_dim}));
    m.w2 = params.add(prefix + ".w2", init_weight(hidden_dim, out_dim, init));
    m.b2 = params.add(prefix + ".b2", Tensor::zeros({out_dim}));
    return m;
}

Tensor Mlp::forward(const Tensor& x) const {
    Tensor h = relu(add(matmul(x, w1), b1));
    return add(matmul(h, w2), b2);
}

GinLayer GinLayer::create(ParamStore& params, const std::string& prefix, int in_dim,
                          int hidden_dim, RngStream& init) {
    GinLayer layer;
    layer.eps = params.add(prefix + ".eps", Tensor::zeros({1}));
    layer.mlp = Mlp::create(params, prefix + ".mlp", in_dim, hidden_dim, hidden_dim, init);
    return layer;
}

Tensor GinLayer::forward(const Tensor& h, const EdgeList& edges,
                         const Tensor& edge_weights) const {
    Tensor agg = edge_aggregate(h, edges, edge_weights);
    Tensor self = mul(h, add_const(eps, 1.0));
    return mlp.forward(add(self, agg));
}

GinEncoder GinEncoder::create(ParamStore& params, const std::string& prefix, int in_dim,
                              int hidden_dim, int num_layers, RngStream& init) {
    if (num_layers < 1) throw ContractError("GinEncoder: need at least one layer");
    GinEncoder enc;
    enc.hidden_dim = hidden_dim;
    for (int l = 0; l < num_layers; ++l) {
        const int d = (l == 0) ? in_dim : hidden_dim;
        enc.layers.push_back(
            GinLayer::create(params, prefix + ".layer" + std::to_string(l), d, hidden_dim, init));
    }
    return enc;
}

GinEncoder::Encoding GinEncoder::encode(const Batch& batch, const Tensor& edge_weights) const {
    return encode_from(batch.features, batch, edge_weights);
}

GinEncoder::Encoding GinEncoder::encode_from(const Tensor& node_states, const Batch& batch,
                                             const Tensor& edge_weights) const {
    if (edge_weights.defined() && edge_weights.numel() != static_cast<int>(batch.edges.size()))
        throw ContractError("GinEncoder::encode: edge weight count differs from batch edges");
    if (node_states.size(0) != batch.total_nodes)
        throw ContractError("GinEncoder::encode: node state rows differ from batch nodes");
    Tensor h = node_states;
    for (const auto& layer : layers) h = layer.forward(h, batch.edges, edge_weights);
    Encoding enc;
    enc.node_embeddings = h;
    enc.graph_embeddings = pool_mean_rows(h, batch.node_to_graph, batch.num_graphs());
    return enc;
}

ProjectionHead ProjectionHead::create(ParamStore& params, const std::string& prefix, int in_dim,
                                      int hidden_dim, int out_dim, RngStream& init) {
    ProjectionHead head;
    head.mlp = Mlp::create(params, prefix, in_dim, hidden_dim, out_dim, init);
    return head;
}

Tensor ProjectionHead::project(const Tensor& graph_embeddings) const {
    return l2_normalize_rows(mlp.forward(graph_embeddings));
}

void save_checkpoint(const ParamStore& params, const std::string& path) {
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& [name, t] : params) {
        nlohmann::ordered_json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["values"] = t.values();
        entries.push_back(std::move(e));
    }
    std::ofstream out(path);
    if (!out) throw DependencyError("cannot write checkpoint: " + path);
    out << entries.dump() << "\n";
}

void load_checkpoint(ParamStore& params, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("cannot open checkpoint: " + path);
    nlohmann::ordered_json entries;
    try {
        in >> entries;
    } catch (const nlohmann::ordered_json::exception& e) {
        throw ParseError("checkpoint " + path + ": " + e.what());
    }
    for (const auto& e : entries) {
        const std::string name = e.at("name").get<std::string>();
        if (!params.has(name))
            throw ContractError("checkpoint " + path + ": unknown parameter '" + name + "'");
        Tensor& t = params.get(name);
        if (e.at("shape").get<std::vector<int>>() != t.shape())
            throw ContractError("checkpoint " + path + ": shape mismatch for '" + name + "'");
        t.mutable_values() = e.at("values").get<std::vector<double>>();
    }
}

}  // namespace hierenv
