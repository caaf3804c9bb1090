#pragma once

#include <string>
#include <vector>

#include "hierenv/graph.hpp"
#include "hierenv/optim.hpp"
#include "hierenv/rng.hpp"
#include "hierenv/tensor.hpp"

namespace hierenv {

// Two-layer perceptron, linear -> ReLU -> linear. Parameters live in a
// ParamStore under the given name prefix.
struct Mlp {
    Tensor w1, b1, w2, b2;

    static Mlp create(ParamStore& params, const std::string& prefix, int in_dim, int hidden_dim,
                      int out_dim, RngStream& init);
    Tensor forward(const Tensor& x) const;
    int in_dim() const { return w1.size(0); }
    int out_dim() const { return w2.size(1); }
};

// One GIN layer: h' = MLP((1 + eps) * h + sum_{j in N(i)} w_ij * h_j).
struct GinLayer {
    Tensor eps;  // learnable scalar
    Mlp mlp;

    static GinLayer create(ParamStore& params, const std::string& prefix, int in_dim,
                           int hidden_dim, RngStream& init);
    Tensor forward(const Tensor& h, const EdgeList& edges, const Tensor& edge_weights) const;
};

struct GinEncoder {
    std::vector<GinLayer> layers;
    int hidden_dim = 0;

    static GinEncoder create(ParamStore& params, const std::string& prefix, int in_dim,
                             int hidden_dim, int num_layers, RngStream& init);

    // Stacked GIN layers over the batch followed by per-graph mean pooling.
    // edge_weights, when defined, must have one entry per batch edge and
    // replaces the implicit all-ones adjacency weights (a masked adjacency).
    struct Encoding {
        Tensor node_embeddings;   // [N, H]
        Tensor graph_embeddings;  // [B, H]
    };
    Encoding encode(const Batch& batch, const Tensor& edge_weights = Tensor()) const;

    // Same, but starting from the given node states instead of the batch
    // features (chains one level's encoder onto the previous level's output).
    Encoding encode_from(const Tensor& node_states, const Batch& batch,
                         const Tensor& edge_weights = Tensor()) const;
};

// MLP head followed by row-wise L2 normalization; variant and invariant
// heads are two distinct instances with independent parameters.
struct ProjectionHead {
    Mlp mlp;

    static ProjectionHead create(ParamStore& params, const std::string& prefix, int in_dim,
                                 int hidden_dim, int out_dim, RngStream& init);
    Tensor project(const Tensor& graph_embeddings) const;
};

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weight matrix.
Tensor init_weight(int fan_in, int fan_out, RngStream& init);

// Flat (name, shape, float64 values) JSON checkpoint; round-trips bit-exactly.
void save_checkpoint(const ParamStore& params, const std::string& path);
void load_checkpoint(ParamStore& params, const std::string& path);

}  // namespace hierenv
