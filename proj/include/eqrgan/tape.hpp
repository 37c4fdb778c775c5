#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "eqrgan/matrix.hpp"

namespace eqrgan::diffcore {

using NodeId = int32_t;

enum class Op : uint8_t {
    Const,
    Param,
    MatMul,      // a: weight (p x q), b: input (q x n)
    AddBias,     // a: input (p x n), b: bias (p x 1) broadcast over columns
    Add,
    Sub,
    Mul,         // elementwise, same shape
    Scale,       // c * a
    AddScalar,   // a + c
    Tanh,
    Square,
    AbsPow,      // |a|^c
    SignAbsPow,  // sign(a)|a|^c
    Softplus,
    ConcatRows,  // rows of a stacked above rows of b
    SliceRows,   // rows [c0, c0+rows) of a
    SumAll,      // 1x1 sum of all entries
};

// Append-only computational graph. Values are computed eagerly as nodes are
// built, so the forward pass is the construction itself; backward() runs one
// reverse sweep from a scalar root. Parameter leaves reference tensors held
// in an external store and are identified by their slot index.
template <typename T>
class Tape {
  public:
    struct Node {
        Op op;
        NodeId a = -1;
        NodeId b = -1;
        T c = T(0);
        int i0 = 0;       // SliceRows offset
        int slot = -1;    // Param: index into the owning parameter store
        Matrix<T> val;
        Matrix<T> grad;   // allocated lazily during backward
    };

    std::vector<Node> nodes;

    void reset() { nodes.clear(); }
    int size() const { return static_cast<int>(nodes.size()); }

    const Matrix<T>& val(NodeId id) const { return nodes[id].val; }
    const Matrix<T>& grad(NodeId id) const { return nodes[id].grad; }

    NodeId constant(Matrix<T> v) { return push(Op::Const, -1, -1, std::move(v)); }

    NodeId scalar(T v) { return push(Op::Const, -1, -1, Matrix<T>::full(1, 1, v)); }

    NodeId param(const Matrix<T>& tensor, int slot) {
        NodeId id = push(Op::Param, -1, -1, tensor);
        nodes[id].slot = slot;
        return id;
    }

    NodeId matmul(NodeId w, NodeId x) {
        check(nodes[w].val.cols == nodes[x].val.rows, "matmul: inner dimensions disagree");
        Matrix<T> out(nodes[w].val.rows, nodes[x].val.cols);
        kernels::gemm(nodes[w].val, nodes[x].val, out);
        return push(Op::MatMul, w, x, std::move(out));
    }

    NodeId add_bias(NodeId x, NodeId bias) {
        check(nodes[bias].val.cols == 1 && nodes[bias].val.rows == nodes[x].val.rows,
              "add_bias: bias must be a column matching the input rows");
        Matrix<T> out = nodes[x].val;
        kernels::add_col_bias(out, nodes[bias].val);
        return push(Op::AddBias, x, bias, std::move(out));
    }

    NodeId add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
    NodeId sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
    NodeId mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }

    NodeId scale(NodeId a, T c) {
        Matrix<T> out = nodes[a].val;
        for (T& v : out.a) v *= c;
        NodeId id = push(Op::Scale, a, -1, std::move(out));
        nodes[id].c = c;
        return id;
    }

    NodeId add_scalar(NodeId a, T c) {
        Matrix<T> out = nodes[a].val;
        for (T& v : out.a) v += c;
        NodeId id = push(Op::AddScalar, a, -1, std::move(out));
        nodes[id].c = c;
        return id;
    }

    NodeId tanh_(NodeId a) {
        Matrix<T> out = nodes[a].val;
        kernels::tanh_inplace(out);
        return push(Op::Tanh, a, -1, std::move(out));
    }

    NodeId square(NodeId a) {
        Matrix<T> out = nodes[a].val;
        for (T& v : out.a) v *= v;
        return push(Op::Square, a, -1, std::move(out));
    }

    NodeId abs_pow(NodeId a, T p) {
        Matrix<T> out = nodes[a].val;
        for (T& v : out.a) v = kernels::abs_pow_scalar(v, p);
        NodeId id = push(Op::AbsPow, a, -1, std::move(out));
        nodes[id].c = p;
        return id;
    }

    NodeId sign_abs_pow(NodeId a, T p) {
        Matrix<T> out = nodes[a].val;
        for (T& v : out.a) v = kernels::sign_abs_pow_scalar(v, p);
        NodeId id = push(Op::SignAbsPow, a, -1, std::move(out));
        nodes[id].c = p;
        return id;
    }

    NodeId softplus(NodeId a) {
        Matrix<T> out = nodes[a].val;
        for (T& v : out.a) v = kernels::softplus_scalar(v);
        return push(Op::Softplus, a, -1, std::move(out));
    }

    NodeId concat_rows(NodeId a, NodeId b) {
        const Matrix<T>& va = nodes[a].val;
        const Matrix<T>& vb = nodes[b].val;
        check(va.cols == vb.cols, "concat_rows: column counts disagree");
        Matrix<T> out(va.rows + vb.rows, va.cols);
        std::copy(va.a.begin(), va.a.end(), out.a.begin());
        std::copy(vb.a.begin(), vb.a.end(), out.a.begin() + va.size());
        return push(Op::ConcatRows, a, b, std::move(out));
    }

    NodeId slice_rows(NodeId a, int first, int count) {
        const Matrix<T>& va = nodes[a].val;
        check(first >= 0 && first + count <= va.rows, "slice_rows: range out of bounds");
        Matrix<T> out(count, va.cols);
        std::copy(va.row(first), va.row(first) + static_cast<size_t>(count) * va.cols,
                  out.a.begin());
        NodeId id = push(Op::SliceRows, a, -1, std::move(out));
        nodes[id].i0 = first;
        return id;
    }

    NodeId sum_all(NodeId a) {
        T acc = T(0);
        for (const T& v : nodes[a].val.a) acc += v;
        return push(Op::SumAll, a, -1, Matrix<T>::full(1, 1, acc));
    }

    // Reverse sweep from a scalar root. Gradients of unreachable nodes stay
    // unallocated (treated as zero), so harvesting reads them as 0.
    void backward(NodeId root) {
        check(root >= 0 && root < size(), "backward: root out of range");
        check(nodes[root].val.rows == 1 && nodes[root].val.cols == 1,
              "backward: root must be scalar");
        for (Node& n : nodes) n.grad = Matrix<T>();
        nodes[root].grad = Matrix<T>::full(1, 1, T(1));
        for (NodeId id = root; id >= 0; --id) {
            Node& n = nodes[id];
            if (n.grad.empty()) continue;
            pull(n);
        }
    }

    // Accumulate parameter-leaf gradients into a slot-indexed buffer set.
    // Leaves never touched by the sweep contribute nothing.
    void harvest_param_grads(std::vector<Matrix<T>>& grads) const {
        for (const Node& n : nodes) {
            if (n.op != Op::Param || n.grad.empty()) continue;
            Matrix<T>& g = grads[n.slot];
            if (!g.same_shape(n.val)) g = Matrix<T>::zeros(n.val.rows, n.val.cols);
            for (size_t i = 0; i < g.size(); ++i) g.a[i] += n.grad.a[i];
        }
    }

  private:
    static void check(bool ok, const char* msg) {
        if (!ok) throw UsageError(msg);
    }

    NodeId push(Op op, NodeId a, NodeId b, Matrix<T> val) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.val = std::move(val);
        nodes.push_back(std::move(n));
        return static_cast<NodeId>(nodes.size() - 1);
    }

    NodeId binary(Op op, NodeId a, NodeId b) {
        const Matrix<T>& va = nodes[a].val;
        const Matrix<T>& vb = nodes[b].val;
        check(va.same_shape(vb), "binary op: shapes disagree");
        Matrix<T> out(va.rows, va.cols);
        switch (op) {
            case Op::Add:
                for (size_t i = 0; i < out.size(); ++i) out.a[i] = va.a[i] + vb.a[i];
                break;
            case Op::Sub:
                for (size_t i = 0; i < out.size(); ++i) out.a[i] = va.a[i] - vb.a[i];
                break;
            case Op::Mul:
                for (size_t i = 0; i < out.size(); ++i) out.a[i] = va.a[i] * vb.a[i];
                break;
            default:
                check(false, "binary: bad op");
        }
        return push(op, a, b, std::move(out));
    }

    Matrix<T>& grad_buf(NodeId id) {
        Node& n = nodes[id];
        if (n.grad.empty()) n.grad = Matrix<T>::zeros(n.val.rows, n.val.cols);
        return n.grad;
    }

    void pull(Node& n) {
        const Matrix<T>& g = n.grad;
        switch (n.op) {
            case Op::Const:
            case Op::Param:
                break;
            case Op::MatMul: {
                kernels::gemm_acc_a_bt(g, nodes[n.b].val, grad_buf(n.a));
                kernels::gemm_acc_at_b(nodes[n.a].val, g, grad_buf(n.b));
                break;
            }
            case Op::AddBias: {
                Matrix<T>& ga = grad_buf(n.a);
                for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i];
                Matrix<T>& gb = grad_buf(n.b);
                for (int i = 0; i < g.rows; ++i) {
                    const T* gi = g.row(i);
                    T acc = T(0);
                    for (int j = 0; j < g.cols; ++j) acc += gi[j];
                    gb(i, 0) += acc;
                }
                break;
            }
            case Op::Add: {
                Matrix<T>& ga = grad_buf(n.a);
                for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i];
                Matrix<T>& gb = grad_buf(n.b);
                for (size_t i = 0; i < g.size(); ++i) gb.a[i] += g.a[i];
                break;
            }
            case Op::Sub: {
                Matrix<T>& ga = grad_buf(n.a);
                for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i];
                Matrix<T>& gb = grad_buf(n.b);
                for (size_t i = 0; i < g.size(); ++i) gb.a[i] -= g.a[i];
                break;
            }
            case Op::Mul: {
                const Matrix<T>& va = nodes[n.a].val;
                const Matrix<T>& vb = nodes[n.b].val;
                Matrix<T>& ga = grad_buf(n.a);
                for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * vb.a[i];
                Matrix<T>& gb = grad_buf(n.b);
                for (size_t i = 0; i < g.size(); ++i) gb.a[i] += g.a[i] * va.a[i];
                break;
            }
            case Op::Scale: {
                Matrix<T>& ga = grad_buf(n.a);
                for (size_t i = 0; i < g.size(); ++i) ga.a[i] += n.c * g.a[i];
                break;
            }
            case Op::AddScalar: {
                Matrix<T>& ga = grad_buf(n.a);
                for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i];
                break;
            }
            case Op::Tanh: {
                Matrix<T>& ga = grad_buf(n.a);
                for (size_t i = 0; i < g.size(); ++i)
                    ga.a[i] += g.a[i] * (T(1) - n.val.a[i] * n.val.a[i]);
                break;
            }
            case Op::Square: {
                const Matrix<T>& va = nodes[n.a].val;
                Matrix<T>& ga = grad_buf(n.a);
                for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * T(2) * va.a[i];
                break;
            }
            case Op::AbsPow: {
                const Matrix<T>& va = nodes[n.a].val;
                Matrix<T>& ga = grad_buf(n.a);
                for (size_t i = 0; i < g.size(); ++i)
                    ga.a[i] += g.a[i] * kernels::abs_pow_grad_scalar(va.a[i], n.c);
                break;
            }
            case Op::SignAbsPow: {
                const Matrix<T>& va = nodes[n.a].val;
                Matrix<T>& ga = grad_buf(n.a);
                for (size_t i = 0; i < g.size(); ++i)
                    ga.a[i] += g.a[i] * kernels::sign_abs_pow_grad_scalar(va.a[i], n.c);
                break;
            }
            case Op::Softplus: {
                const Matrix<T>& va = nodes[n.a].val;
                Matrix<T>& ga = grad_buf(n.a);
                for (size_t i = 0; i < g.size(); ++i) {
                    const T x = va.a[i];
                    const T sig = x > T(0) ? T(1) / (T(1) + std::exp(-x))
                                           : std::exp(x) / (T(1) + std::exp(x));
                    ga.a[i] += g.a[i] * sig;
                }
                break;
            }
            case Op::ConcatRows: {
                const Matrix<T>& va = nodes[n.a].val;
                Matrix<T>& ga = grad_buf(n.a);
                for (size_t i = 0; i < va.size(); ++i) ga.a[i] += g.a[i];
                Matrix<T>& gb = grad_buf(n.b);
                for (size_t i = 0; i < gb.size(); ++i) gb.a[i] += g.a[va.size() + i];
                break;
            }
            case Op::SliceRows: {
                Matrix<T>& ga = grad_buf(n.a);
                const size_t off = static_cast<size_t>(n.i0) * ga.cols;
                for (size_t i = 0; i < g.size(); ++i) ga.a[off + i] += g.a[i];
                break;
            }
            case Op::SumAll: {
                Matrix<T>& ga = grad_buf(n.a);
                const T s = g(0, 0);
                for (T& v : ga.a) v += s;
                break;
            }
        }
    }
};

}  // namespace eqrgan::diffcore
