#include "sled/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "sled/error.hpp"
#include "sled/kernels.hpp"

namespace sled {

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::matmul: return "matmul";
        case OpKind::reduce_sum: return "reduce-sum";
        case OpKind::reduce_mean: return "reduce-mean";
        case OpKind::softmax: return "softmax";
        case OpKind::layernorm: return "layernorm";
        case OpKind::gelu: return "gelu";
        case OpKind::embed_lookup: return "embed-lookup";
        case OpKind::concat: return "concat";
        case OpKind::slice: return "slice";
        case OpKind::scatter_rows: return "scatter-rows";
        case OpKind::scale: return "scale";
    }
    return "?";
}

void Graph::check_id(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw ShapeError("invalid node id " + std::to_string(id));
}

const Graph::Node& Graph::node(NodeId id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)];
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }
OpKind Graph::kind(NodeId id) const { return node(id).kind; }
bool Graph::requires_grad(NodeId id) const { return node(id).requires_grad; }

Graph::NodeId Graph::push(Node n, const char* what) {
    n.value.require_finite(what);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Graph::NodeId Graph::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.kind = OpKind::leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n), "leaf");
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    const bool broadcast = !ta.same_shape(tb);
    if (broadcast) {
        const bool row_vec = (tb.ndim() == 1 && tb.size() == ta.cols()) ||
                             (tb.ndim() == 2 && tb.rows() == 1 && tb.cols() == ta.cols());
        if (!(ta.ndim() == 2 && row_vec))
            throw ShapeError("add: incompatible shapes " + ta.shape_str() + " vs " +
                             tb.shape_str());
    }
    Node n;
    n.kind = OpKind::add;
    n.in0 = a;
    n.in1 = b;
    n.flag = broadcast;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = ta;
    if (broadcast) {
        const std::size_t rows = ta.rows(), cols = ta.cols();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) n.value[i * cols + j] += tb[j];
    } else {
        for (std::size_t i = 0; i < ta.size(); ++i) n.value[i] += tb[i];
    }
    return push(std::move(n), "add");
}

Graph::NodeId Graph::mul(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb))
        throw ShapeError("mul: shape mismatch " + ta.shape_str() + " vs " +
                         tb.shape_str());
    Node n;
    n.kind = OpKind::mul;
    n.in0 = a;
    n.in1 = b;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = ta;
    for (std::size_t i = 0; i < ta.size(); ++i) n.value[i] *= tb[i];
    return push(std::move(n), "mul");
}

Graph::NodeId Graph::matmul(NodeId a, NodeId b, bool transpose_b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.ndim() != 2 || tb.ndim() != 2)
        throw ShapeError("matmul: rank-2 operands required");
    const std::size_t m = ta.rows(), k = ta.cols();
    const std::size_t bn = transpose_b ? tb.rows() : tb.cols();
    const std::size_t bk = transpose_b ? tb.cols() : tb.rows();
    if (bk != k)
        throw ShapeError("matmul: inner dimension mismatch " + ta.shape_str() +
                         " vs " + tb.shape_str());
    Node n;
    n.kind = OpKind::matmul;
    n.in0 = a;
    n.in1 = b;
    n.flag = transpose_b;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = Tensor({m, bn});
    if (transpose_b)
        kernels::mm_nt(n.value.data(), ta.data(), tb.data(), m, k, bn);
    else
        kernels::mm_nn(n.value.data(), ta.data(), tb.data(), m, k, bn);
    return push(std::move(n), "matmul");
}

Graph::NodeId Graph::reduce_sum(NodeId a) {
    const Tensor& ta = value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) s += ta[i];
    Node n;
    n.kind = OpKind::reduce_sum;
    n.in0 = a;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor::scalar(s);
    return push(std::move(n), "reduce-sum");
}

Graph::NodeId Graph::reduce_mean(NodeId a) {
    const Tensor& ta = value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) s += ta[i];
    Node n;
    n.kind = OpKind::reduce_mean;
    n.in0 = a;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor::scalar(s / static_cast<double>(ta.size()));
    return push(std::move(n), "reduce-mean");
}

Graph::NodeId Graph::softmax(NodeId a) {
    const Tensor& ta = value(a);
    if (ta.ndim() > 2) throw ShapeError("softmax: rank 1 or 2 required");
    Node n;
    n.kind = OpKind::softmax;
    n.in0 = a;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor(ta.shape());
    kernels::softmax_rows(n.value.data(), ta.data(), ta.rows(), ta.cols());
    return push(std::move(n), "softmax");
}

Graph::NodeId Graph::layernorm(NodeId a) {
    const Tensor& ta = value(a);
    if (ta.ndim() > 2) throw ShapeError("layernorm: rank 1 or 2 required");
    Node n;
    n.kind = OpKind::layernorm;
    n.in0 = a;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor(ta.shape());
    n.saved = Tensor({ta.rows()});
    kernels::layernorm_rows(n.value.data(), ta.data(), ta.rows(), ta.cols(),
                            layernorm_eps, n.saved.data());
    return push(std::move(n), "layernorm");
}

Graph::NodeId Graph::gelu(NodeId a) {
    const Tensor& ta = value(a);
    Node n;
    n.kind = OpKind::gelu;
    n.in0 = a;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor(ta.shape());
    kernels::gelu(n.value.data(), ta.data(), ta.size());
    return push(std::move(n), "gelu");
}

Graph::NodeId Graph::embed_lookup(NodeId table, const std::vector<int>& ids) {
    const Tensor& tt = value(table);
    if (tt.ndim() != 2) throw ShapeError("embed-lookup: rank-2 table required");
    const std::size_t v = tt.rows(), d = tt.cols();
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw ShapeError("embed-lookup: id " + std::to_string(id) +
                             " out of range [0," + std::to_string(v) + ")");
    Node n;
    n.kind = OpKind::embed_lookup;
    n.in0 = table;
    n.ids = ids;
    n.requires_grad = node(table).requires_grad;
    n.value = Tensor({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(tt.data() + static_cast<std::size_t>(ids[i]) * d, d,
                    n.value.data() + i * d);
    return push(std::move(n), "embed-lookup");
}

Graph::NodeId Graph::concat_rows(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.cols() != tb.cols())
        throw ShapeError("concat rows: column mismatch " + ta.shape_str() + " vs " +
                         tb.shape_str());
    Node n;
    n.kind = OpKind::concat;
    n.in0 = a;
    n.in1 = b;
    n.flag = false; // axis 0
    n.a0 = ta.rows();
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = Tensor({ta.rows() + tb.rows(), ta.cols()});
    std::copy_n(ta.data(), ta.size(), n.value.data());
    std::copy_n(tb.data(), tb.size(), n.value.data() + ta.size());
    return push(std::move(n), "concat");
}

Graph::NodeId Graph::concat_cols(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.rows() != tb.rows())
        throw ShapeError("concat cols: row mismatch " + ta.shape_str() + " vs " +
                         tb.shape_str());
    const std::size_t rows = ta.rows(), ca = ta.cols(), cb = tb.cols();
    Node n;
    n.kind = OpKind::concat;
    n.in0 = a;
    n.in1 = b;
    n.flag = true; // axis 1
    n.a0 = ca;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = Tensor({rows, ca + cb});
    for (std::size_t i = 0; i < rows; ++i) {
        std::copy_n(ta.data() + i * ca, ca, n.value.data() + i * (ca + cb));
        std::copy_n(tb.data() + i * cb, cb, n.value.data() + i * (ca + cb) + ca);
    }
    return push(std::move(n), "concat");
}

Graph::NodeId Graph::slice_rows(NodeId a, std::size_t r0, std::size_t r1) {
    const Tensor& ta = value(a);
    if (ta.ndim() != 2 || r0 >= r1 || r1 > ta.rows())
        throw ShapeError("slice rows: bad range [" + std::to_string(r0) + "," +
                         std::to_string(r1) + ") for " + ta.shape_str());
    const std::size_t cols = ta.cols();
    Node n;
    n.kind = OpKind::slice;
    n.in0 = a;
    n.flag = false;
    n.a0 = r0;
    n.a1 = r1;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor({r1 - r0, cols});
    std::copy_n(ta.data() + r0 * cols, (r1 - r0) * cols, n.value.data());
    return push(std::move(n), "slice");
}

Graph::NodeId Graph::slice_cols(NodeId a, std::size_t c0, std::size_t c1) {
    const Tensor& ta = value(a);
    if (ta.ndim() != 2 || c0 >= c1 || c1 > ta.cols())
        throw ShapeError("slice cols: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + ta.shape_str());
    const std::size_t rows = ta.rows(), cols = ta.cols(), w = c1 - c0;
    Node n;
    n.kind = OpKind::slice;
    n.in0 = a;
    n.flag = true;
    n.a0 = c0;
    n.a1 = c1;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor({rows, w});
    for (std::size_t i = 0; i < rows; ++i)
        std::copy_n(ta.data() + i * cols + c0, w, n.value.data() + i * w);
    return push(std::move(n), "slice");
}

Graph::NodeId Graph::scatter_rows(NodeId base, NodeId updates,
                                  const std::vector<std::size_t>& indices) {
    const Tensor& tb = value(base);
    const Tensor& tu = value(updates);
    if (tb.ndim() != 2 || tu.ndim() != 2 || tb.cols() != tu.cols())
        throw ShapeError("scatter-rows: column mismatch");
    if (tu.rows() != indices.size())
        throw ShapeError("scatter-rows: |indices| != update rows");
    std::set<std::size_t> seen;
    for (std::size_t idx : indices) {
        if (idx >= tb.rows())
            throw ShapeError("scatter-rows: index " + std::to_string(idx) +
                             " out of range [0," + std::to_string(tb.rows()) + ")");
        if (!seen.insert(idx).second)
            throw ShapeError("scatter-rows: duplicate index " + std::to_string(idx));
    }
    const std::size_t cols = tb.cols();
    Node n;
    n.kind = OpKind::scatter_rows;
    n.in0 = base;
    n.in1 = updates;
    n.indices = indices;
    n.requires_grad = node(base).requires_grad || node(updates).requires_grad;
    n.value = tb;
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy_n(tu.data() + i * cols, cols, n.value.data() + indices[i] * cols);
    return push(std::move(n), "scatter-rows");
}

Graph::NodeId Graph::scale(NodeId a, double c) {
    if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
    const Tensor& ta = value(a);
    Node n;
    n.kind = OpKind::scale;
    n.in0 = a;
    n.scalar = c;
    n.requires_grad = node(a).requires_grad;
    n.value = ta;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] *= c;
    return push(std::move(n), "scale");
}

Tensor& Graph::grad_buffer(NodeId id) {
    Tensor& g = grads_[static_cast<std::size_t>(id)];
    if (g.size() == 0) g = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape());
    return g;
}

const Tensor& Graph::grad(NodeId id) const {
    check_id(id);
    if (!backward_done_) throw ShapeError("grad: backward has not run");
    static const Tensor empty;
    const Tensor& g = grads_[static_cast<std::size_t>(id)];
    return g.size() ? g : empty;
}

std::unordered_map<Graph::NodeId, Tensor> Graph::backward(NodeId loss) {
    check_id(loss);
    if (backward_done_) throw ShapeError("backward: graph already consumed (single-use)");
    if (value(loss).size() != 1) throw ShapeError("backward: loss must be scalar");
    backward_done_ = true;
    grads_.assign(nodes_.size(), Tensor());
    grad_buffer(loss)[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad || grads_[static_cast<std::size_t>(id)].size() == 0)
            continue;
        backprop_node(id);
    }
    std::unordered_map<NodeId, Tensor> out;
    for (NodeId id = 0; id <= loss; ++id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.kind == OpKind::leaf && n.requires_grad)
            out.emplace(id, grads_[static_cast<std::size_t>(id)].size()
                                ? grads_[static_cast<std::size_t>(id)]
                                : Tensor(n.value.shape()));
    }
    return out;
}

void Graph::backprop_node(NodeId id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& g = grads_[static_cast<std::size_t>(id)];
    const bool need0 = n.in0 >= 0 && nodes_[static_cast<std::size_t>(n.in0)].requires_grad;
    const bool need1 = n.in1 >= 0 && nodes_[static_cast<std::size_t>(n.in1)].requires_grad;
    if (!need0 && !need1) return;

    switch (n.kind) {
        case OpKind::leaf:
            return;
        case OpKind::add: {
            if (need0) {
                Tensor& ga = grad_buffer(n.in0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (need1) {
                Tensor& gb = grad_buffer(n.in1);
                if (n.flag) {
                    const std::size_t rows = n.value.rows(), cols = n.value.cols();
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                }
            }
            return;
        }
        case OpKind::mul: {
            const Tensor& ta = value(n.in0);
            const Tensor& tb = value(n.in1);
            if (need0) {
                Tensor& ga = grad_buffer(n.in0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * tb[i];
            }
            if (need1) {
                Tensor& gb = grad_buffer(n.in1);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ta[i];
            }
            return;
        }
        case OpKind::matmul: {
            const Tensor& ta = value(n.in0);
            const Tensor& tb = value(n.in1);
            const std::size_t m = ta.rows(), k = ta.cols(), nn = n.value.cols();
            if (!n.flag) {
                // C = A*B: dA = G*B^T, dB = A^T*G
                if (need0)
                    kernels::mm_nt(grad_buffer(n.in0).data(), g.data(), tb.data(), m,
                                   nn, k, true);
                if (need1)
                    kernels::mm_tn(grad_buffer(n.in1).data(), ta.data(), g.data(), k,
                                   m, nn, true);
            } else {
                // C = A*B^T: dA = G*B, dB = G^T*A
                if (need0)
                    kernels::mm_nn(grad_buffer(n.in0).data(), g.data(), tb.data(), m,
                                   nn, k, true);
                if (need1)
                    kernels::mm_tn(grad_buffer(n.in1).data(), g.data(), ta.data(), nn,
                                   m, k, true);
            }
            return;
        }
        case OpKind::reduce_sum: {
            Tensor& ga = grad_buffer(n.in0);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
            return;
        }
        case OpKind::reduce_mean: {
            Tensor& ga = grad_buffer(n.in0);
            const double s = g[0] / static_cast<double>(ga.size());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
            return;
        }
        case OpKind::softmax: {
            Tensor& ga = grad_buffer(n.in0);
            const std::size_t rows = n.value.rows(), cols = n.value.cols();
            for (std::size_t i = 0; i < rows; ++i) {
                const double* y = n.value.data() + i * cols;
                const double* gy = g.data() + i * cols;
                double dot = 0.0;
                for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
                double* gx = ga.data() + i * cols;
                for (std::size_t j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
            return;
        }
        case OpKind::layernorm: {
            Tensor& ga = grad_buffer(n.in0);
            const std::size_t rows = n.value.rows(), cols = n.value.cols();
            for (std::size_t i = 0; i < rows; ++i) {
                const double* y = n.value.data() + i * cols;
                const double* gy = g.data() + i * cols;
                const double inv_std = n.saved[i];
                double mean_g = 0.0, mean_gy = 0.0;
                for (std::size_t j = 0; j < cols; ++j) {
                    mean_g += gy[j];
                    mean_gy += gy[j] * y[j];
                }
                mean_g /= static_cast<double>(cols);
                mean_gy /= static_cast<double>(cols);
                double* gx = ga.data() + i * cols;
                for (std::size_t j = 0; j < cols; ++j)
                    gx[j] += inv_std * (gy[j] - mean_g - y[j] * mean_gy);
            }
            return;
        }
        case OpKind::gelu: {
            const Tensor& ta = value(n.in0);
            kernels::gelu_grad(grad_buffer(n.in0).data(), ta.data(), g.data(),
                               ta.size(), true);
            return;
        }
        case OpKind::embed_lookup: {
            Tensor& gt = grad_buffer(n.in0);
            const std::size_t d = n.value.cols();
            for (std::size_t i = 0; i < n.ids.size(); ++i) {
                double* row = gt.data() + static_cast<std::size_t>(n.ids[i]) * d;
                const double* gr = g.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) row[j] += gr[j];
            }
            return;
        }
        case OpKind::concat: {
            if (!n.flag) {
                const std::size_t split = n.a0 * n.value.cols();
                if (need0) {
                    Tensor& ga = grad_buffer(n.in0);
                    for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
                }
                if (need1) {
                    Tensor& gb = grad_buffer(n.in1);
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[split + i];
                }
            } else {
                const std::size_t rows = n.value.rows(), cols = n.value.cols();
                const std::size_t ca = n.a0, cb = cols - ca;
                if (need0) {
                    Tensor& ga = grad_buffer(n.in0);
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < ca; ++j)
                            ga[i * ca + j] += g[i * cols + j];
                }
                if (need1) {
                    Tensor& gb = grad_buffer(n.in1);
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < cb; ++j)
                            gb[i * cb + j] += g[i * cols + ca + j];
                }
            }
            return;
        }
        case OpKind::slice: {
            Tensor& ga = grad_buffer(n.in0);
            const std::size_t cols_in = value(n.in0).cols();
            if (!n.flag) {
                const std::size_t off = n.a0 * cols_in;
                for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
            } else {
                const std::size_t rows = n.value.rows(), w = n.a1 - n.a0;
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        ga[i * cols_in + n.a0 + j] += g[i * w + j];
            }
            return;
        }
        case OpKind::scatter_rows: {
            const std::size_t cols = n.value.cols();
            if (need0) {
                Tensor& gb = grad_buffer(n.in0);
                std::vector<bool> selected(value(n.in0).rows(), false);
                for (std::size_t idx : n.indices) selected[idx] = true;
                for (std::size_t r = 0; r < selected.size(); ++r) {
                    if (selected[r]) continue;
                    for (std::size_t j = 0; j < cols; ++j)
                        gb[r * cols + j] += g[r * cols + j];
                }
            }
            if (need1) {
                Tensor& gu = grad_buffer(n.in1);
                for (std::size_t i = 0; i < n.indices.size(); ++i)
                    for (std::size_t j = 0; j < cols; ++j)
                        gu[i * cols + j] += g[n.indices[i] * cols + j];
            }
            return;
        }
        case OpKind::scale: {
            Tensor& ga = grad_buffer(n.in0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.scalar * g[i];
            return;
        }
    }
}

} // namespace sled
