#include "hierenv/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace hierenv {

namespace {

std::atomic<long> g_l2_guard_count{0};

int shape_numel(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape");
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Builds the result node, wiring parents and the backward closure only when
// some input requires grad.
Tensor make_op(std::vector<int> shape, std::vector<double> values,
               std::vector<Tensor> inputs,
               std::function<void(Tensor::Node&)> backward, const char* op) {
    check_finite(values, op);
    Tensor out;
    out.node = std::make_shared<Tensor::Node>();
    out.node->shape = std::move(shape);
    out.node->values = std::move(values);
    if (out.node->numel() != shape_numel(out.node->shape))
        throw ShapeError(std::string(op) + ": result size does not match shape");

    bool rg = false;
    for (const auto& t : inputs) rg = rg || (t.defined() && t.node->requires_grad);
    out.node->requires_grad = rg;
    if (rg && backward) {
        for (auto& t : inputs)
            if (t.defined()) out.node->parents.push_back(t.node);
        Tensor::Node* raw = out.node.get();
        out.node->backward_fn = [raw, fn = std::move(backward)]() { fn(*raw); };
    }
    return out;
}

bool wants_grad(const Tensor& t) { return t.defined() && t.node->requires_grad; }

void require_2d(const Tensor& t, const char* op) {
    if (t.dim() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

}  // namespace

// ---- Tensor basics -------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t;
    t.node = std::make_shared<Node>();
    int n = shape_numel(shape);
    t.node->shape = std::move(shape);
    t.node->values.assign(static_cast<size_t>(n), value);
    t.node->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values,
                           bool requires_grad) {
    if (shape_numel(shape) != static_cast<int>(values.size()))
        throw ShapeError("from_values: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_str(shape));
    check_finite(values, "from_values");
    Tensor t;
    t.node = std::make_shared<Node>();
    t.node->shape = std::move(shape);
    t.node->values = std::move(values);
    t.node->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({1}, {value}, requires_grad);
}

int Tensor::rows() const {
    require_2d(*this, "rows");
    return node->shape[0];
}

int Tensor::cols() const {
    require_2d(*this, "cols");
    return node->shape[1];
}

double Tensor::item() const {
    if (!defined() || numel() != 1) throw ContractError("item: tensor is not a scalar");
    return node->values[0];
}

const std::vector<double>& Tensor::grad() const {
    if (!node->requires_grad) throw ContractError("grad: tensor does not require grad");
    const_cast<Node*>(node.get())->ensure_grad();
    return node->grad;
}

void Tensor::zero_grad() {
    node->ensure_grad();
    std::fill(node->grad.begin(), node->grad.end(), 0.0);
}

void check_finite(const std::vector<double>& values, const char* op) {
    for (double v : values)
        if (!std::isfinite(v))
            throw DomainError(std::string(op) + ": non-finite value in result");
}

long l2_guard_count() { return g_l2_guard_count.load(); }

// ---- backward ------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward: loss must be a defined scalar");
    if (loss.node->consumed)
        throw ContractError("backward: tape already consumed for this loss");

    // Iterative post-order DFS over parents.
    std::vector<Tensor::Node*> topo;
    std::unordered_set<Tensor::Node*> visited;
    std::vector<std::pair<Tensor::Node*, size_t>> stack;
    stack.emplace_back(loss.node.get(), 0);
    visited.insert(loss.node.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Tensor::Node* p = n->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }

    loss.node->ensure_grad();
    loss.node->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn();

    // Consume the tape: release closures and parent links.
    for (auto* n : topo) {
        n->backward_fn = nullptr;
        n->parents.clear();
    }
    loss.node->consumed = true;
}

// ---- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int m = a.size(0), k = a.size(1), n = b.size(1);
    if (b.size(0) != k)
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (int i = 0; i < m; ++i) {
        double* orow = out.data() + static_cast<size_t>(i) * n;
        const double* arow = av + static_cast<size_t>(i) * k;
        for (int l = 0; l < k; ++l) {
            const double ail = arow[l];
            if (ail == 0.0) continue;
            const double* brow = bv + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) orow[j] += ail * brow[j];
        }
    }
    return make_op({m, n}, std::move(out), {a, b},
                   [a, b, m, k, n](Tensor::Node& o) {
                       if (wants_grad(a)) {
                           a.node->ensure_grad();
                           // dA = dOut * B^T
                           for (int i = 0; i < m; ++i)
                               for (int l = 0; l < k; ++l) {
                                   double acc = 0.0;
                                   const double* gout = o.grad.data() + static_cast<size_t>(i) * n;
                                   const double* brow = b.values().data() + static_cast<size_t>(l) * n;
                                   for (int j = 0; j < n; ++j) acc += gout[j] * brow[j];
                                   a.node->grad[static_cast<size_t>(i) * k + l] += acc;
                               }
                       }
                       if (wants_grad(b)) {
                           b.node->ensure_grad();
                           // dB = A^T * dOut
                           for (int i = 0; i < m; ++i) {
                               const double* arow = a.values().data() + static_cast<size_t>(i) * k;
                               const double* gout = o.grad.data() + static_cast<size_t>(i) * n;
                               for (int l = 0; l < k; ++l) {
                                   const double ail = arow[l];
                                   if (ail == 0.0) continue;
                                   double* gb = b.node->grad.data() + static_cast<size_t>(l) * n;
                                   for (int j = 0; j < n; ++j) gb[j] += ail * gout[j];
                               }
                           }
                       }
                   },
                   "matmul");
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const int m = a.size(0), n = a.size(1);
    std::vector<double> out(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(j) * m + i] = a.values()[static_cast<size_t>(i) * n + j];
    return make_op({n, m}, std::move(out), {a},
                   [a, m, n](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (int i = 0; i < m; ++i)
                           for (int j = 0; j < n; ++j)
                               a.node->grad[static_cast<size_t>(i) * n + j] +=
                                   o.grad[static_cast<size_t>(j) * m + i];
                   },
                   "transpose");
}

namespace {

enum class Broadcast { Same, ScalarRhs, RowRhs };

Broadcast classify_broadcast(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::Same;
    if (b.numel() == 1) return Broadcast::ScalarRhs;
    if (a.dim() == 2 && ((b.dim() == 1 && b.size(0) == a.size(1)) ||
                         (b.dim() == 2 && b.size(0) == 1 && b.size(1) == a.size(1))))
        return Broadcast::RowRhs;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
}

Tensor add_sub(const Tensor& a, const Tensor& b, double sign, const char* op) {
    Broadcast mode = classify_broadcast(a, b, op);
    std::vector<double> out = a.values();
    const auto& bv = b.values();
    const int n = a.numel();
    switch (mode) {
        case Broadcast::Same:
            for (int i = 0; i < n; ++i) out[i] += sign * bv[i];
            break;
        case Broadcast::ScalarRhs:
            for (int i = 0; i < n; ++i) out[i] += sign * bv[0];
            break;
        case Broadcast::RowRhs: {
            const int c = a.size(1);
            for (int i = 0; i < n; ++i) out[i] += sign * bv[i % c];
            break;
        }
    }
    return make_op(a.shape(), std::move(out), {a, b},
                   [a, b, sign, mode](Tensor::Node& o) {
                       const int n = static_cast<int>(o.values.size());
                       if (wants_grad(a)) {
                           a.node->ensure_grad();
                           for (int i = 0; i < n; ++i) a.node->grad[i] += o.grad[i];
                       }
                       if (wants_grad(b)) {
                           b.node->ensure_grad();
                           switch (mode) {
                               case Broadcast::Same:
                                   for (int i = 0; i < n; ++i) b.node->grad[i] += sign * o.grad[i];
                                   break;
                               case Broadcast::ScalarRhs: {
                                   double acc = 0.0;
                                   for (int i = 0; i < n; ++i) acc += o.grad[i];
                                   b.node->grad[0] += sign * acc;
                                   break;
                               }
                               case Broadcast::RowRhs: {
                                   const int c = b.numel();
                                   for (int i = 0; i < n; ++i) b.node->grad[i % c] += sign * o.grad[i];
                                   break;
                               }
                           }
                       }
                   },
                   op);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_sub(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_sub(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.numel() == 1 && b.numel() != 1) return mul(b, a);
    bool scalar_rhs = (b.numel() == 1);
    if (!scalar_rhs && a.shape() != b.shape())
        throw ShapeError("mul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    std::vector<double> out = a.values();
    const int n = a.numel();
    if (scalar_rhs) {
        const double s = b.values()[0];
        for (int i = 0; i < n; ++i) out[i] *= s;
    } else {
        for (int i = 0; i < n; ++i) out[i] *= b.values()[i];
    }
    return make_op(a.shape(), std::move(out), {a, b},
                   [a, b, scalar_rhs](Tensor::Node& o) {
                       const int n = static_cast<int>(o.values.size());
                       if (wants_grad(a)) {
                           a.node->ensure_grad();
                           if (scalar_rhs) {
                               const double s = b.values()[0];
                               for (int i = 0; i < n; ++i) a.node->grad[i] += o.grad[i] * s;
                           } else {
                               for (int i = 0; i < n; ++i)
                                   a.node->grad[i] += o.grad[i] * b.values()[i];
                           }
                       }
                       if (wants_grad(b)) {
                           b.node->ensure_grad();
                           if (scalar_rhs) {
                               double acc = 0.0;
                               for (int i = 0; i < n; ++i) acc += o.grad[i] * a.values()[i];
                               b.node->grad[0] += acc;
                           } else {
                               for (int i = 0; i < n; ++i)
                                   b.node->grad[i] += o.grad[i] * a.values()[i];
                           }
                       }
                   },
                   "mul");
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out = a.values();
    for (double& v : out) v *= c;
    return make_op(a.shape(), std::move(out), {a},
                   [a, c](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (size_t i = 0; i < o.grad.size(); ++i) a.node->grad[i] += c * o.grad[i];
                   },
                   "scale");
}

Tensor add_const(const Tensor& a, double c) {
    std::vector<double> out = a.values();
    for (double& v : out) v += c;
    return make_op(a.shape(), std::move(out), {a},
                   [a](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (size_t i = 0; i < o.grad.size(); ++i) a.node->grad[i] += o.grad[i];
                   },
                   "add_const");
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const int d = parts[0].dim();
    if (d == 1 && axis != 0) throw ShapeError("concat: 1-D tensors concat on axis 0");
    if (d == 2 && axis != 0 && axis != 1) throw ShapeError("concat: axis out of range");

    if (d == 1) {
        int total = 0;
        for (const auto& p : parts) {
            if (p.dim() != 1) throw ShapeError("concat: mixed ranks");
            total += p.numel();
        }
        std::vector<double> out;
        out.reserve(static_cast<size_t>(total));
        std::vector<int> offsets;
        for (const auto& p : parts) {
            offsets.push_back(static_cast<int>(out.size()));
            out.insert(out.end(), p.values().begin(), p.values().end());
        }
        return make_op({total}, std::move(out), parts,
                       [parts, offsets](Tensor::Node& o) {
                           for (size_t p = 0; p < parts.size(); ++p) {
                               if (!wants_grad(parts[p])) continue;
                               parts[p].node->ensure_grad();
                               for (int i = 0; i < parts[p].numel(); ++i)
                                   parts[p].node->grad[i] += o.grad[offsets[p] + i];
                           }
                       },
                       "concat");
    }

    // 2-D
    const int fixed = (axis == 0) ? parts[0].size(1) : parts[0].size(0);
    int total = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat");
        if ((axis == 0 ? p.size(1) : p.size(0)) != fixed)
            throw ShapeError("concat: mismatched non-concat dimension");
        total += (axis == 0) ? p.size(0) : p.size(1);
    }
    int R = (axis == 0) ? total : fixed;
    int C = (axis == 0) ? fixed : total;
    std::vector<double> out(static_cast<size_t>(R) * C);
    std::vector<int> offsets;
    int off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const int pr = p.size(0), pc = p.size(1);
        for (int i = 0; i < pr; ++i)
            for (int j = 0; j < pc; ++j) {
                int oi = (axis == 0) ? off + i : i;
                int oj = (axis == 0) ? j : off + j;
                out[static_cast<size_t>(oi) * C + oj] = p(i, j);
            }
        off += (axis == 0) ? pr : pc;
    }
    return make_op({R, C}, std::move(out), parts,
                   [parts, offsets, axis, C](Tensor::Node& o) {
                       for (size_t p = 0; p < parts.size(); ++p) {
                           if (!wants_grad(parts[p])) continue;
                           parts[p].node->ensure_grad();
                           const int pr = parts[p].size(0), pc = parts[p].size(1);
                           const int off = offsets[p];
                           for (int i = 0; i < pr; ++i)
                               for (int j = 0; j < pc; ++j) {
                                   int oi = (axis == 0) ? off + i : i;
                                   int oj = (axis == 0) ? j : off + j;
                                   parts[p].node->grad[static_cast<size_t>(i) * pc + j] +=
                                       o.grad[static_cast<size_t>(oi) * C + oj];
                               }
                       }
                   },
                   "concat");
}

namespace {

Tensor unary_op(const Tensor& a, const char* name, double (*f)(double),
                std::function<double(double x, double y)> dfdx) {
    std::vector<double> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(a.values()[i]);
    return make_op(a.shape(), std::move(out), {a},
                   [a, dfdx](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (size_t i = 0; i < o.grad.size(); ++i)
                           a.node->grad[i] += o.grad[i] * dfdx(a.values()[i], o.values[i]);
                   },
                   name);
}

}  // namespace

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, "sigmoid",
        +[](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary_op(a, "relu", +[](double x) { return x > 0 ? x : 0.0; },
                    [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& a) {
    return unary_op(a, "abs", +[](double x) { return std::fabs(x); },
                    [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& a) {
    return unary_op(a, "exp", +[](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (double v : a.values())
        if (v <= 0.0) throw DomainError("log: non-positive input");
    return unary_op(a, "log", +[](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (lo > hi) throw ContractError("clamp: lo > hi");
    std::vector<double> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, a.values()[i]));
    return make_op(a.shape(), std::move(out), {a},
                   [a, lo, hi](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (size_t i = 0; i < o.grad.size(); ++i) {
                           double x = a.values()[i];
                           if (x > lo && x < hi) a.node->grad[i] += o.grad[i];
                       }
                   },
                   "clamp");
}

namespace {

struct RowView {
    int rows, cols;
};

RowView row_view(const Tensor& a, const char* op) {
    if (a.dim() == 1) return {1, a.size(0)};
    if (a.dim() == 2) return {a.size(0), a.size(1)};
    throw ShapeError(std::string(op) + ": expected 1-D or 2-D tensor");
}

}  // namespace

Tensor softmax(const Tensor& a) {
    auto [R, C] = row_view(a, "softmax");
    if (C == 0) throw ContractError("softmax: empty rows");
    std::vector<double> out(a.values().size());
    for (int i = 0; i < R; ++i) {
        const double* x = a.values().data() + static_cast<size_t>(i) * C;
        double* y = out.data() + static_cast<size_t>(i) * C;
        double mx = x[0];
        for (int j = 1; j < C; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int j = 0; j < C; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        for (int j = 0; j < C; ++j) y[j] /= s;
    }
    return make_op(a.shape(), std::move(out), {a},
                   [a, R = R, C = C](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (int i = 0; i < R; ++i) {
                           const double* y = o.values.data() + static_cast<size_t>(i) * C;
                           const double* gy = o.grad.data() + static_cast<size_t>(i) * C;
                           double dot = 0.0;
                           for (int j = 0; j < C; ++j) dot += gy[j] * y[j];
                           double* gx = a.node->grad.data() + static_cast<size_t>(i) * C;
                           for (int j = 0; j < C; ++j) gx[j] += (gy[j] - dot) * y[j];
                       }
                   },
                   "softmax");
}

Tensor log_softmax(const Tensor& a) {
    auto [R, C] = row_view(a, "log_softmax");
    if (C == 0) throw ContractError("log_softmax: empty rows");
    std::vector<double> out(a.values().size());
    for (int i = 0; i < R; ++i) {
        const double* x = a.values().data() + static_cast<size_t>(i) * C;
        double* y = out.data() + static_cast<size_t>(i) * C;
        double mx = x[0];
        for (int j = 1; j < C; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int j = 0; j < C; ++j) s += std::exp(x[j] - mx);
        const double lse = mx + std::log(s);
        for (int j = 0; j < C; ++j) y[j] = x[j] - lse;
    }
    return make_op(a.shape(), std::move(out), {a},
                   [a, R = R, C = C](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (int i = 0; i < R; ++i) {
                           const double* y = o.values.data() + static_cast<size_t>(i) * C;
                           const double* gy = o.grad.data() + static_cast<size_t>(i) * C;
                           double gsum = 0.0;
                           for (int j = 0; j < C; ++j) gsum += gy[j];
                           double* gx = a.node->grad.data() + static_cast<size_t>(i) * C;
                           for (int j = 0; j < C; ++j) gx[j] += gy[j] - std::exp(y[j]) * gsum;
                       }
                   },
                   "log_softmax");
}

Tensor masked_log_softmax(const Tensor& a, const Tensor& mask) {
    if (mask.shape() != a.shape())
        throw ShapeError("masked_log_softmax: mask shape differs from input");
    if (mask.requires_grad())
        throw ContractError("masked_log_softmax: mask must not require grad");
    auto [R, C] = row_view(a, "masked_log_softmax");
    std::vector<double> out(a.values().size(), 0.0);
    for (int i = 0; i < R; ++i) {
        const double* x = a.values().data() + static_cast<size_t>(i) * C;
        const double* m = mask.values().data() + static_cast<size_t>(i) * C;
        double* y = out.data() + static_cast<size_t>(i) * C;
        double mx = -1e300;
        int active = 0;
        for (int j = 0; j < C; ++j)
            if (m[j] != 0.0) {
                mx = std::max(mx, x[j]);
                ++active;
            }
        if (active == 0)
            throw ContractError("masked_log_softmax: row " + std::to_string(i) +
                                " has no unmasked entries");
        double s = 0.0;
        for (int j = 0; j < C; ++j)
            if (m[j] != 0.0) s += std::exp(x[j] - mx);
        const double lse = mx + std::log(s);
        for (int j = 0; j < C; ++j) y[j] = (m[j] != 0.0) ? x[j] - lse : 0.0;
    }
    return make_op(a.shape(), std::move(out), {a},
                   [a, mask, R = R, C = C](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (int i = 0; i < R; ++i) {
                           const double* m = mask.values().data() + static_cast<size_t>(i) * C;
                           const double* y = o.values.data() + static_cast<size_t>(i) * C;
                           const double* gy = o.grad.data() + static_cast<size_t>(i) * C;
                           double gsum = 0.0;
                           for (int j = 0; j < C; ++j)
                               if (m[j] != 0.0) gsum += gy[j];
                           double* gx = a.node->grad.data() + static_cast<size_t>(i) * C;
                           for (int j = 0; j < C; ++j)
                               if (m[j] != 0.0) gx[j] += gy[j] - std::exp(y[j]) * gsum;
                       }
                   },
                   "masked_log_softmax");
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make_op({1}, {s}, {a},
                   [a](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (double& g : a.node->grad) g += o.grad[0];
                   },
                   "sum");
}

Tensor mean(const Tensor& a) {
    const int n = a.numel();
    if (n == 0) throw ContractError("mean: empty tensor");
    double s = 0.0;
    for (double v : a.values()) s += v;
    s /= n;
    return make_op({1}, {s}, {a},
                   [a, n](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       const double g = o.grad[0] / n;
                       for (double& gv : a.node->grad) gv += g;
                   },
                   "mean");
}

Tensor max_rows(const Tensor& a) {
    require_2d(a, "max_rows");
    const int R = a.size(0), C = a.size(1);
    if (C == 0) throw ContractError("max_rows: empty rows");
    std::vector<double> out(static_cast<size_t>(R));
    std::vector<int> argmax(static_cast<size_t>(R));
    for (int i = 0; i < R; ++i) {
        const double* x = a.values().data() + static_cast<size_t>(i) * C;
        int best = 0;
        for (int j = 1; j < C; ++j)
            if (x[j] > x[best]) best = j;
        out[i] = x[best];
        argmax[i] = best;
    }
    return make_op({R}, std::move(out), {a},
                   [a, argmax, C](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (size_t i = 0; i < argmax.size(); ++i)
                           a.node->grad[i * C + argmax[i]] += o.grad[i];
                   },
                   "max_rows");
}

Tensor l2_normalize_rows(const Tensor& a) {
    require_2d(a, "l2_normalize_rows");
    const int R = a.size(0), C = a.size(1);
    constexpr double kEps = 1e-12;
    std::vector<double> out(a.values().size());
    std::vector<double> norms(static_cast<size_t>(R));
    std::vector<char> guarded(static_cast<size_t>(R), 0);
    for (int i = 0; i < R; ++i) {
        const double* x = a.values().data() + static_cast<size_t>(i) * C;
        double sq = 0.0;
        for (int j = 0; j < C; ++j) sq += x[j] * x[j];
        double nrm = std::sqrt(sq);
        if (nrm < kEps) {
            nrm = kEps;
            guarded[i] = 1;
            g_l2_guard_count.fetch_add(1);
        }
        norms[i] = nrm;
        for (int j = 0; j < C; ++j) out[static_cast<size_t>(i) * C + j] = x[j] / nrm;
    }
    return make_op(a.shape(), std::move(out), {a},
                   [a, norms, guarded, R, C](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (int i = 0; i < R; ++i) {
                           const double* y = o.values.data() + static_cast<size_t>(i) * C;
                           const double* gy = o.grad.data() + static_cast<size_t>(i) * C;
                           double* gx = a.node->grad.data() + static_cast<size_t>(i) * C;
                           if (guarded[i]) {
                               for (int j = 0; j < C; ++j) gx[j] += gy[j] / norms[i];
                               continue;
                           }
                           double dot = 0.0;
                           for (int j = 0; j < C; ++j) dot += gy[j] * y[j];
                           for (int j = 0; j < C; ++j) gx[j] += (gy[j] - y[j] * dot) / norms[i];
                       }
                   },
                   "l2_normalize_rows");
}

Tensor dropout(const Tensor& a, double keep_prob, RngStream& stream) {
    if (keep_prob <= 0.0 || keep_prob > 1.0)
        throw ContractError("dropout: keep probability must be in (0, 1]");
    if (keep_prob == 1.0) return add_const(a, 0.0);
    std::vector<double> mask(a.values().size());
    for (double& m : mask) m = stream.uniform() < keep_prob ? 1.0 / keep_prob : 0.0;
    std::vector<double> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * mask[i];
    return make_op(a.shape(), std::move(out), {a},
                   [a, mask = std::move(mask)](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (size_t i = 0; i < o.grad.size(); ++i)
                           a.node->grad[i] += o.grad[i] * mask[i];
                   },
                   "dropout");
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
    require_2d(a, "gather_rows");
    const int R = a.size(0), C = a.size(1);
    std::vector<double> out(idx.size() * static_cast<size_t>(C));
    for (size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= R) throw ContractError("gather_rows: index out of range");
        const double* src = a.values().data() + static_cast<size_t>(idx[r]) * C;
        std::copy(src, src + C, out.data() + r * C);
    }
    return make_op({static_cast<int>(idx.size()), C}, std::move(out), {a},
                   [a, idx, C](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (size_t r = 0; r < idx.size(); ++r) {
                           const double* g = o.grad.data() + r * C;
                           double* dst = a.node->grad.data() + static_cast<size_t>(idx[r]) * C;
                           for (int j = 0; j < C; ++j) dst[j] += g[j];
                       }
                   },
                   "gather_rows");
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: element count mismatch");
    std::vector<double> out = a.values();
    return make_op(std::move(shape), std::move(out), {a},
                   [a](Tensor::Node& o) {
                       if (!wants_grad(a)) return;
                       a.node->ensure_grad();
                       for (size_t i = 0; i < o.grad.size(); ++i) a.node->grad[i] += o.grad[i];
                   },
                   "reshape");
}

Tensor edge_aggregate(const Tensor& h, const EdgeList& edges, const Tensor& w) {
    require_2d(h, "edge_aggregate");
    const int N = h.size(0), H = h.size(1);
    const bool weighted = w.defined();
    if (weighted && w.numel() != static_cast<int>(edges.size()))
        throw ShapeError("edge_aggregate: weight count differs from edge count");
    std::vector<double> out(static_cast<size_t>(N) * H, 0.0);
    for (size_t e = 0; e < edges.size(); ++e) {
        const int i = edges[e][0], j = edges[e][1];
        if (i < 0 || i >= N || j < 0 || j >= N)
            throw ContractError("edge_aggregate: edge endpoint out of range");
        const double we = weighted ? w.values()[e] : 1.0;
        if (we == 0.0) continue;
        const double* hi = h.values().data() + static_cast<size_t>(i) * H;
        const double* hj = h.values().data() + static_cast<size_t>(j) * H;
        double* oi = out.data() + static_cast<size_t>(i) * H;
        double* oj = out.data() + static_cast<size_t>(j) * H;
        for (int c = 0; c < H; ++c) {
            oi[c] += we * hj[c];
            oj[c] += we * hi[c];
        }
    }
    std::vector<Tensor> inputs = {h};
    if (weighted) inputs.push_back(w);
    return make_op({N, H}, std::move(out), inputs,
                   [h, w, edges, weighted, H](Tensor::Node& o) {
                       if (wants_grad(h)) h.node->ensure_grad();
                       if (weighted && wants_grad(w)) w.node->ensure_grad();
                       for (size_t e = 0; e < edges.size(); ++e) {
                           const int i = edges[e][0], j = edges[e][1];
                           const double we = weighted ? w.values()[e] : 1.0;
                           const double* gi = o.grad.data() + static_cast<size_t>(i) * H;
                           const double* gj = o.grad.data() + static_cast<size_t>(j) * H;
                           if (wants_grad(h) && we != 0.0) {
                               double* dhi = h.node->grad.data() + static_cast<size_t>(i) * H;
                               double* dhj = h.node->grad.data() + static_cast<size_t>(j) * H;
                               for (int c = 0; c < H; ++c) {
                                   dhj[c] += we * gi[c];
                                   dhi[c] += we * gj[c];
                               }
                           }
                           if (weighted && wants_grad(w)) {
                               const double* hi = h.values().data() + static_cast<size_t>(i) * H;
                               const double* hj = h.values().data() + static_cast<size_t>(j) * H;
                               double acc = 0.0;
                               for (int c = 0; c < H; ++c) acc += hj[c] * gi[c] + hi[c] * gj[c];
                               w.node->grad[e] += acc;
                           }
                       }
                   },
                   "edge_aggregate");
}

Tensor pool_mean_rows(const Tensor& h, const std::vector<int>& row_to_group, int num_groups) {
    require_2d(h, "pool_mean_rows");
    const int N = h.size(0), H = h.size(1);
    if (static_cast<int>(row_to_group.size()) != N)
        throw ShapeError("pool_mean_rows: group map length differs from row count");
    std::vector<int> counts(static_cast<size_t>(num_groups), 0);
    for (int g : row_to_group) {
        if (g < 0 || g >= num_groups) throw ContractError("pool_mean_rows: group id out of range");
        ++counts[g];
    }
    for (int g = 0; g < num_groups; ++g)
        if (counts[g] == 0) throw ContractError("pool_mean_rows: empty group " + std::to_string(g));
    std::vector<double> out(static_cast<size_t>(num_groups) * H, 0.0);
    for (int r = 0; r < N; ++r) {
        const double* src = h.values().data() + static_cast<size_t>(r) * H;
        double* dst = out.data() + static_cast<size_t>(row_to_group[r]) * H;
        for (int c = 0; c < H; ++c) dst[c] += src[c];
    }
    for (int g = 0; g < num_groups; ++g) {
        double* row = out.data() + static_cast<size_t>(g) * H;
        for (int c = 0; c < H; ++c) row[c] /= counts[g];
    }
    return make_op({num_groups, H}, std::move(out), {h},
                   [h, row_to_group, counts, H](Tensor::Node& o) {
                       if (!wants_grad(h)) return;
                       h.node->ensure_grad();
                       for (size_t r = 0; r < row_to_group.size(); ++r) {
                           const int g = row_to_group[r];
                           const double inv = 1.0 / counts[g];
                           const double* gs = o.grad.data() + static_cast<size_t>(g) * H;
                           double* dst = h.node->grad.data() + r * H;
                           for (int c = 0; c < H; ++c) dst[c] += gs[c] * inv;
                       }
                   },
                   "pool_mean_rows");
}

Tensor scatter_edges_dense(const Tensor& w, const EdgeList& edges, int n) {
    if (w.numel() != static_cast<int>(edges.size()))
        throw ShapeError("scatter_edges_dense: weight count differs from edge count");
    std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
    for (size_t e = 0; e < edges.size(); ++e) {
        const int i = edges[e][0], j = edges[e][1];
        if (i < 0 || i >= n || j < 0 || j >= n)
            throw ContractError("scatter_edges_dense: edge endpoint out of range");
        out[static_cast<size_t>(i) * n + j] += w.values()[e];
        out[static_cast<size_t>(j) * n + i] += w.values()[e];
    }
    return make_op({n, n}, std::move(out), {w},
                   [w, edges, n](Tensor::Node& o) {
                       if (!wants_grad(w)) return;
                       w.node->ensure_grad();
                       for (size_t e = 0; e < edges.size(); ++e) {
                           const int i = edges[e][0], j = edges[e][1];
                           w.node->grad[e] += o.grad[static_cast<size_t>(i) * n + j] +
                                              o.grad[static_cast<size_t>(j) * n + i];
                       }
                   },
                   "scatter_edges_dense");
}

namespace {

Tensor select_mask_impl(const Tensor& p_hat, const std::vector<double>& prev, double threshold,
                        bool soft) {
    if (p_hat.dim() != 1)
        throw ShapeError("select_mask: expected 1-D per-edge probabilities");
    if (prev.size() != p_hat.values().size())
        throw ShapeError("select_mask: previous mask length differs from edge count");
    const size_t E = prev.size();
    std::vector<double> out(E);
    std::vector<char> newly(E, 0);
    for (size_t e = 0; e < E; ++e) {
        if (prev[e] != 0.0) {
            out[e] = 1.0;  // selection is irreversible across levels
        } else if (p_hat.values()[e] > threshold) {
            out[e] = soft ? p_hat.values()[e] : 1.0;
            newly[e] = 1;
        } else {
            out[e] = 0.0;
        }
    }
    return make_op({static_cast<int>(E)}, std::move(out), {p_hat},
                   [p_hat, newly = std::move(newly)](Tensor::Node& o) {
                       if (!wants_grad(p_hat)) return;
                       p_hat.node->ensure_grad();
                       for (size_t e = 0; e < newly.size(); ++e)
                           if (newly[e]) p_hat.node->grad[e] += o.grad[e];
                   },
                   "select_mask");
}

}  // namespace

Tensor select_mask_hard(const Tensor& p_hat, const std::vector<double>& prev, double threshold) {
    return select_mask_impl(p_hat, prev, threshold, false);
}

Tensor select_mask_soft(const Tensor& p_hat, const std::vector<double>& prev, double threshold) {
    return select_mask_impl(p_hat, prev, threshold, true);
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
    if (static_cast<size_t>(logits.numel()) != targets.size())
        throw ShapeError("bce_with_logits: logit count differs from target count");
    const int B = logits.numel();
    if (B == 0) throw ContractError("bce_with_logits: empty batch");
    double loss = 0.0;
    for (int i = 0; i < B; ++i) {
        const double z = logits.values()[i], y = targets[i];
        loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
    }
    loss /= B;
    return make_op({1}, {loss}, {logits},
                   [logits, targets, B](Tensor::Node& o) {
                       if (!wants_grad(logits)) return;
                       logits.node->ensure_grad();
                       const double g = o.grad[0] / B;
                       for (int i = 0; i < B; ++i) {
                           const double z = logits.values()[i];
                           const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                                   : std::exp(z) / (1.0 + std::exp(z));
                           logits.node->grad[i] += g * (s - targets[i]);
                       }
                   },
                   "bce_with_logits");
}

Tensor ce_with_logits(const Tensor& logits, const std::vector<int>& labels) {
    require_2d(logits, "ce_with_logits");
    const int B = logits.size(0), C = logits.size(1);
    if (static_cast<size_t>(B) != labels.size())
        throw ShapeError("ce_with_logits: batch size differs from label count");
    if (B == 0) throw ContractError("ce_with_logits: empty batch");
    double loss = 0.0;
    for (int i = 0; i < B; ++i) {
        if (labels[i] < 0 || labels[i] >= C)
            throw ContractError("ce_with_logits: label out of range");
        const double* x = logits.values().data() + static_cast<size_t>(i) * C;
        double mx = x[0];
        for (int j = 1; j < C; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int j = 0; j < C; ++j) s += std::exp(x[j] - mx);
        loss += mx + std::log(s) - x[labels[i]];
    }
    loss /= B;
    return make_op({1}, {loss}, {logits},
                   [logits, labels, B, C](Tensor::Node& o) {
                       if (!wants_grad(logits)) return;
                       logits.node->ensure_grad();
                       const double g = o.grad[0] / B;
                       for (int i = 0; i < B; ++i) {
                           const double* x = logits.values().data() + static_cast<size_t>(i) * C;
                           double mx = x[0];
                           for (int j = 1; j < C; ++j) mx = std::max(mx, x[j]);
                           double s = 0.0;
                           for (int j = 0; j < C; ++j) s += std::exp(x[j] - mx);
                           double* gx = logits.node->grad.data() + static_cast<size_t>(i) * C;
                           for (int j = 0; j < C; ++j) {
                               const double p = std::exp(x[j] - mx) / s;
                               gx[j] += g * (p - (j == labels[i] ? 1.0 : 0.0));
                           }
                       }
                   },
                   "ce_with_logits");
}

Tensor onehot(const std::vector<int>& labels, int num_classes) {
    if (num_classes <= 0) throw ContractError("onehot: num_classes must be positive");
    std::vector<double> out(labels.size() * static_cast<size_t>(num_classes), 0.0);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw ContractError("onehot: label out of range");
        out[i * num_classes + labels[i]] = 1.0;
    }
    return Tensor::from_values({static_cast<int>(labels.size()), num_classes}, std::move(out));
}

}  // namespace hierenv
