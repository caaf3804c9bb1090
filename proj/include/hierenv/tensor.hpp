#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hierenv/errors.hpp"
#include "hierenv/rng.hpp"

namespace hierenv {

// Dense row-major float64 tensor participating in reverse-mode
// differentiation. The autodiff graph hangs off the shared node: each
// forward op links the result to its inputs and stores a closure that
// scatters the result's gradient back into them. backward() walks that
// graph once and then consumes it.
class Tensor {
public:
    struct Node {
        std::vector<int> shape;
        std::vector<double> values;
        std::vector<double> grad;  // allocated lazily, same length as values
        bool requires_grad = false;
        bool consumed = false;

        std::vector<std::shared_ptr<Node>> parents;
        std::function<void()> backward_fn;

        int numel() const { return static_cast<int>(values.size()); }
        void ensure_grad() {
            if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
        }
    };

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node != nullptr; }
    const std::vector<int>& shape() const { return node->shape; }
    int dim() const { return static_cast<int>(node->shape.size()); }
    int size(int axis) const { return node->shape.at(static_cast<size_t>(axis)); }
    int numel() const { return node->numel(); }
    int rows() const;
    int cols() const;

    const std::vector<double>& values() const { return node->values; }
    std::vector<double>& mutable_values() { return node->values; }
    double item() const;

    bool requires_grad() const { return node->requires_grad; }
    const std::vector<double>& grad() const;
    bool has_grad() const { return node && !node->grad.empty(); }
    void ensure_grad() { node->ensure_grad(); }
    void zero_grad();

    double operator()(int i) const { return node->values[static_cast<size_t>(i)]; }
    double operator()(int i, int j) const {
        return node->values[static_cast<size_t>(i) * cols() + j];
    }

    std::shared_ptr<Node> node;
};

// Backpropagates from a scalar loss. Gradients accumulate additively into
// every requires_grad tensor reachable from the loss; the graph is released
// afterwards and a second call on the same loss is a contract error.
void backward(const Tensor& loss);

// Throws DomainError if any entry is NaN/Inf; called on every op result.
void check_finite(const std::vector<double>& values, const char* op);

using EdgeList = std::vector<std::array<int, 2>>;

// ---- forward ops --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// add/sub accept equal shapes, a scalar rhs, or a row vector broadcast over
// the rows of a 2-D lhs. mul accepts equal shapes or a scalar on either side.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, int axis);

Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// Row-wise over the last axis for 2-D inputs, whole tensor for 1-D.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

// log-softmax restricted to entries where mask != 0; masked-out outputs are 0
// and receive no gradient. mask must not require grad.
Tensor masked_log_softmax(const Tensor& a, const Tensor& mask);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor max_rows(const Tensor& a);  // [R,C] -> [R]; ties resolve to the lowest index

// Rows scaled to unit L2 norm; rows with norm below 1e-12 are left divided by
// the epsilon guard and counted (see l2_guard_count).
Tensor l2_normalize_rows(const Tensor& a);
long l2_guard_count();

Tensor dropout(const Tensor& a, double keep_prob, RngStream& stream);

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
Tensor reshape(const Tensor& a, std::vector<int> shape);

// out_i = sum over incident edges (i,j) of w_e * h_j. Equivalent to A*h for
// the symmetric adjacency defined by `edges` with per-edge weights w (all
// ones when w is undefined), without materializing the matrix.
Tensor edge_aggregate(const Tensor& h, const EdgeList& edges, const Tensor& w = Tensor());

// Per-group mean of rows; group g averages rows r with row_to_group[r] == g.
Tensor pool_mean_rows(const Tensor& h, const std::vector<int>& row_to_group, int num_groups);

// Dense symmetric n x n matrix with w_e at both (i,j) and (j,i).
Tensor scatter_edges_dense(const Tensor& w, const EdgeList& edges, int n);

// Cumulative edge-selection masks. prev is the previous level's binary mask.
// An edge is newly selected when prev == 0 and p_hat > threshold (strict).
// hard: forward emits {0,1}; backward passes gradient to p_hat on newly
// selected edges only (straight-through). soft: forward keeps p_hat itself on
// newly selected edges, making the composition differentiable end to end.
Tensor select_mask_hard(const Tensor& p_hat, const std::vector<double>& prev, double threshold);
Tensor select_mask_soft(const Tensor& p_hat, const std::vector<double>& prev, double threshold);

// Mean binary cross-entropy over a vector of logits, computed in the stable
// max(z,0) - z*y + log1p(exp(-|z|)) form.
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets);

// Mean multi-class cross-entropy over [B,C] logits.
Tensor ce_with_logits(const Tensor& logits, const std::vector<int>& labels);

// Constant one-hot matrix [B, num_classes].
Tensor onehot(const std::vector<int>& labels, int num_classes);

}  // namespace hierenv
