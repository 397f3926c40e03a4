#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "terraphys/numkit/tensor.hpp"

namespace terraphys::numkit {

// Reverse-mode autodiff over a dynamically built computation graph.
//
// Nodes are appended in construction order, which is already a topological
// order, so backward() is a single reverse sweep that visits each node once.
// All ops work on 2-D tensors; scalars are [1,1].
class Tape {
public:
    enum class Op {
        Leaf,
        MatMul,
        Add,        // same shape, or rhs broadcast as a [1,n] row vector
        Sub,
        Mul,        // elementwise
        Scale,      // by aux constant
        Transpose,
        Sigmoid,
        Tanh,
        LeakyRelu,  // aux constant = negative slope
        SoftmaxRows,
        Mse,
        SumAll,
        MeanAll,
        Concat,     // i0 = axis (0 rows, 1 cols)
        Slice,      // i0..i3 = r0, r1, c0, c1
        TimeToBatchMajor, // i0 = T, i1 = B; row t*B+b -> row b*T+t
        BlockMatMulNT,    // i0 = block; per-block A_g * B_g^T
        BlockMatMulNN,    // i0 = block; per-block S_g * V_g
        StackRows,        // n-ary row concat; inputs in Node::ins
    };

    int leaf(Tensor t, bool requires_grad = false) {
        return push(Op::Leaf, -1, -1, std::move(t), requires_grad);
    }

    int matmul(int a, int b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.cols() != B.rows())
            fail("matmul: inner dims differ, lhs ", shape_str(A.shape), " rhs ", shape_str(B.shape));
        Tensor out = Tensor::zeros({A.rows(), B.cols()});
        mat::mul(A.values.data(), B.values.data(), out.values.data(), A.rows(), A.cols(), B.cols());
        return push(Op::MatMul, a, b, std::move(out));
    }

    int add(int a, int b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.same_shape(B)) {
            Tensor out = A;
            for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += B.values[i];
            return push(Op::Add, a, b, std::move(out));
        }
        if (B.rows() == 1 && B.cols() == A.cols()) {
            Tensor out = A;
            for (int i = 0; i < A.rows(); ++i)
                for (int j = 0; j < A.cols(); ++j) out.at(i, j) += B.at(0, j);
            return push(Op::Add, a, b, std::move(out));
        }
        fail("add: shape mismatch ", shape_str(A.shape), " vs ", shape_str(B.shape));
    }

    int sub(int a, int b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (!A.same_shape(B))
            fail("sub: shape mismatch ", shape_str(A.shape), " vs ", shape_str(B.shape));
        Tensor out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out.values[i] -= B.values[i];
        return push(Op::Sub, a, b, std::move(out));
    }

    int mul(int a, int b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (!A.same_shape(B))
            fail("elementwise-mul: shape mismatch ", shape_str(A.shape), " vs ", shape_str(B.shape));
        Tensor out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= B.values[i];
        return push(Op::Mul, a, b, std::move(out));
    }

    int scale(int a, double c) {
        Tensor out = val(a);
        for (double& v : out.values) v *= c;
        int id = push(Op::Scale, a, -1, std::move(out));
        nodes_[id].c = c;
        return id;
    }

    int transpose(int a) {
        const Tensor& A = val(a);
        Tensor out = Tensor::zeros({A.cols(), A.rows()});
        for (int i = 0; i < A.rows(); ++i)
            for (int j = 0; j < A.cols(); ++j) out.at(j, i) = A.at(i, j);
        return push(Op::Transpose, a, -1, std::move(out));
    }

    int sigmoid(int a) {
        Tensor out = val(a);
        for (double& v : out.values) v = 1.0 / (1.0 + std::exp(-v));
        return push(Op::Sigmoid, a, -1, std::move(out));
    }

    int tanh_op(int a) {
        Tensor out = val(a);
        for (double& v : out.values) v = std::tanh(v);
        return push(Op::Tanh, a, -1, std::move(out));
    }

    int leaky_relu(int a, double slope = 0.01) {
        Tensor out = val(a);
        for (double& v : out.values) v = v > 0.0 ? v : slope * v;
        int id = push(Op::LeakyRelu, a, -1, std::move(out));
        nodes_[id].c = slope;
        return id;
    }

    int softmax_rows(int a) {
        const Tensor& A = val(a);
        Tensor out = A;
        const int n = A.cols();
        for (int i = 0; i < A.rows(); ++i) {
            double* row = out.values.data() + static_cast<std::size_t>(i) * n;
            double mx = row[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            for (int j = 0; j < n; ++j) row[j] /= sum;
        }
        return push(Op::SoftmaxRows, a, -1, std::move(out));
    }

    int mse(int a, int b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (!A.same_shape(B))
            fail("mse: shape mismatch ", shape_str(A.shape), " vs ", shape_str(B.shape));
        double acc = 0.0;
        for (std::size_t i = 0; i < A.size(); ++i) {
            const double d = A.values[i] - B.values[i];
            acc += d * d;
        }
        return push(Op::Mse, a, b, Tensor::scalar(acc / static_cast<double>(A.size())));
    }

    int sum_all(int a) {
        const Tensor& A = val(a);
        double acc = 0.0;
        for (double v : A.values) acc += v;
        return push(Op::SumAll, a, -1, Tensor::scalar(acc));
    }

    int mean_all(int a) {
        const Tensor& A = val(a);
        double acc = 0.0;
        for (double v : A.values) acc += v;
        return push(Op::MeanAll, a, -1, Tensor::scalar(acc / static_cast<double>(A.size())));
    }

    int concat(int a, int b, int axis) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (axis == 1) {
            if (A.rows() != B.rows())
                fail("concat(cols): row mismatch ", shape_str(A.shape), " vs ", shape_str(B.shape));
            Tensor out = Tensor::zeros({A.rows(), A.cols() + B.cols()});
            for (int i = 0; i < A.rows(); ++i) {
                for (int j = 0; j < A.cols(); ++j) out.at(i, j) = A.at(i, j);
                for (int j = 0; j < B.cols(); ++j) out.at(i, A.cols() + j) = B.at(i, j);
            }
            int id = push(Op::Concat, a, b, std::move(out));
            nodes_[id].i0 = 1;
            return id;
        }
        if (axis == 0) {
            if (A.cols() != B.cols())
                fail("concat(rows): col mismatch ", shape_str(A.shape), " vs ", shape_str(B.shape));
            Tensor out = Tensor::zeros({A.rows() + B.rows(), A.cols()});
            std::copy(A.values.begin(), A.values.end(), out.values.begin());
            std::copy(B.values.begin(), B.values.end(), out.values.begin() + A.size());
            int id = push(Op::Concat, a, b, std::move(out));
            nodes_[id].i0 = 0;
            return id;
        }
        fail("concat: axis must be 0 or 1, got ", axis);
    }

    int slice(int a, int r0, int r1, int c0, int c1) {
        const Tensor& A = val(a);
        if (r0 < 0 || r1 > A.rows() || c0 < 0 || c1 > A.cols() || r0 >= r1 || c0 >= c1)
            fail("slice: window [", r0, ",", r1, ")x[", c0, ",", c1, ") invalid for ", shape_str(A.shape));
        Tensor out = Tensor::zeros({r1 - r0, c1 - c0});
        for (int i = r0; i < r1; ++i)
            for (int j = c0; j < c1; ++j) out.at(i - r0, j - c0) = A.at(i, j);
        int id = push(Op::Slice, a, -1, std::move(out));
        nodes_[id].i0 = r0;
        nodes_[id].i1 = r1;
        nodes_[id].i2 = c0;
        nodes_[id].i3 = c1;
        return id;
    }

    // Reorders GRU outputs stacked time-major ([t*B+b]) into per-window
    // contiguous blocks ([b*T+t]) so attention can run block-wise.
    int time_to_batch_major(int a, int T, int B) {
        const Tensor& A = val(a);
        if (A.rows() != T * B)
            fail("time_to_batch_major: rows ", A.rows(), " != T*B = ", T * B);
        Tensor out = Tensor::zeros(A.shape);
        const int n = A.cols();
        for (int t = 0; t < T; ++t)
            for (int b = 0; b < B; ++b) {
                const double* src = A.values.data() + static_cast<std::size_t>(t * B + b) * n;
                double* dst = out.values.data() + static_cast<std::size_t>(b * T + t) * n;
                std::copy(src, src + n, dst);
            }
        int id = push(Op::TimeToBatchMajor, a, -1, std::move(out));
        nodes_[id].i0 = T;
        nodes_[id].i1 = B;
        return id;
    }

    // Per-block scores: A and B are [G*block, H]; out[g] = A_g * B_g^T, [G*block, block].
    int block_matmul_nt(int a, int b, int block) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (!A.same_shape(B) || block <= 0 || A.rows() % block != 0)
            fail("block_matmul_nt: bad shapes ", shape_str(A.shape), " vs ", shape_str(B.shape),
                 " block ", block);
        const int G = A.rows() / block;
        const int H = A.cols();
        Tensor out = Tensor::zeros({A.rows(), block});
        for (int g = 0; g < G; ++g) {
            const double* Ag = A.values.data() + static_cast<std::size_t>(g) * block * H;
            const double* Bg = B.values.data() + static_cast<std::size_t>(g) * block * H;
            double* Og = out.values.data() + static_cast<std::size_t>(g) * block * block;
            mat::mul_nt_acc(Ag, Bg, Og, block, H, block);
        }
        int id = push(Op::BlockMatMulNT, a, b, std::move(out));
        nodes_[id].i0 = block;
        return id;
    }

    // Per-block context: S is [G*block, block], V is [G*block, H]; out[g] = S_g * V_g.
    int block_matmul_nn(int s, int v, int block) {
        const Tensor& S = val(s);
        const Tensor& V = val(v);
        if (block <= 0 || S.cols() != block || S.rows() % block != 0 || V.rows() != S.rows())
            fail("block_matmul_nn: bad shapes ", shape_str(S.shape), " vs ", shape_str(V.shape),
                 " block ", block);
        const int G = S.rows() / block;
        const int H = V.cols();
        Tensor out = Tensor::zeros({V.rows(), H});
        for (int g = 0; g < G; ++g) {
            const double* Sg = S.values.data() + static_cast<std::size_t>(g) * block * block;
            const double* Vg = V.values.data() + static_cast<std::size_t>(g) * block * H;
            double* Og = out.values.data() + static_cast<std::size_t>(g) * block * H;
            mat::mul(Sg, Vg, Og, block, block, H);
        }
        int id = push(Op::BlockMatMulNN, s, v, std::move(out));
        nodes_[id].i0 = block;
        return id;
    }

    // Stacks many same-width tensors along rows in one node; the recurrent
    // loop emits T small outputs and attention wants them as one matrix.
    int stack_rows(const std::vector<int>& parts) {
        if (parts.empty()) fail("stack_rows: no inputs");
        const int cols = val(parts[0]).cols();
        int rows = 0;
        bool rg = false;
        for (int p : parts) {
            const Tensor& t = val(p);
            if (t.cols() != cols)
                fail("stack_rows: column mismatch ", t.cols(), " vs ", cols);
            rows += t.rows();
            rg = rg || nodes_[p].rg;
        }
        Tensor out = Tensor::zeros({rows, cols});
        double* dst = out.values.data();
        for (int p : parts) {
            const Tensor& t = val(p);
            std::copy(t.values.begin(), t.values.end(), dst);
            dst += t.size();
        }
        Node n;
        n.op = Op::StackRows;
        n.in0 = -1;
        n.in1 = -1;
        n.ins = parts;
        n.val = std::move(out);
        n.rg = rg;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Seeds d(loss)/d(loss)=1 and sweeps the graph once in reverse topological
    // (= reverse construction) order.
    void backward(int loss) {
        const Tensor& L = val(loss);
        if (!L.is_scalar()) fail("backward: loss must be scalar, got ", shape_str(L.shape));
        for (Node& n : nodes_) n.grad.values.clear();
        ensure_grad(loss);
        nodes_[loss].grad.values[0] = 1.0;
        for (int id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.rg || n.grad.values.empty()) continue;
            propagate(id);
        }
    }

    const Tensor& value(int id) const { return nodes_[at(id)].val; }

    const Tensor& grad(int id) const {
        const Node& n = nodes_[at(id)];
        if (n.grad.values.empty())
            fail("grad: node ", id, " has no gradient (run backward first, or node unused)");
        return n.grad;
    }

    bool has_grad(int id) const { return !nodes_[at(id)].grad.values.empty(); }

    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Op op;
        int in0, in1;
        int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
        double c = 0.0;
        std::vector<int> ins; // StackRows only
        Tensor val;
        Tensor grad;
        bool rg;
    };

    int at(int id) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size())) fail("Tape: bad node id ", id);
        return id;
    }

    const Tensor& val(int id) const { return nodes_[at(id)].val; }

    int push(Op op, int a, int b, Tensor out, bool leaf_rg = false) {
        Node n;
        n.op = op;
        n.in0 = a;
        n.in1 = b;
        n.val = std::move(out);
        n.rg = op == Op::Leaf ? leaf_rg
                              : ((a >= 0 && nodes_[a].rg) || (b >= 0 && nodes_[b].rg));
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void ensure_grad(int id) {
        Node& n = nodes_[id];
        if (n.grad.values.empty()) n.grad = Tensor::zeros(n.val.shape);
    }

    // Accumulates into in0/in1 grads from node id's grad.
    void propagate(int id) {
        Node& n = nodes_[id];
        const Tensor& g = n.grad;
        if (n.op == Op::StackRows) {
            const double* src = g.values.data();
            for (int p : n.ins) {
                Node& part = nodes_[p];
                if (part.rg) {
                    ensure_grad(p);
                    for (std::size_t i = 0; i < part.val.size(); ++i)
                        part.grad.values[i] += src[i];
                }
                src += part.val.size();
            }
            return;
        }
        const int a = n.in0, b = n.in1;
        const bool wa = a >= 0 && nodes_[a].rg;
        const bool wb = b >= 0 && nodes_[b].rg;
        if (!wa && !wb) return;
        if (wa) ensure_grad(a);
        if (wb) ensure_grad(b);
        Tensor* ga = wa ? &nodes_[a].grad : nullptr;
        Tensor* gb = wb ? &nodes_[b].grad : nullptr;
        const Tensor& va = a >= 0 ? nodes_[a].val : n.val;
        switch (n.op) {
        case Op::Leaf:
            break;
        case Op::MatMul: {
            const Tensor& A = nodes_[a].val;
            const Tensor& B = nodes_[b].val;
            if (ga)
                mat::mul_nt_acc(g.values.data(), B.values.data(), ga->values.data(),
                                A.rows(), B.cols(), A.cols());
            if (gb)
                mat::mul_tn_acc(A.values.data(), g.values.data(), gb->values.data(),
                                A.rows(), A.cols(), B.cols());
            break;
        }
        case Op::Add: {
            if (ga)
                for (std::size_t i = 0; i < g.size(); ++i) ga->values[i] += g.values[i];
            if (gb) {
                const Tensor& B = nodes_[b].val;
                if (B.same_shape(n.val)) {
                    for (std::size_t i = 0; i < g.size(); ++i) gb->values[i] += g.values[i];
                } else { // row-vector broadcast
                    for (int i = 0; i < g.rows(); ++i)
                        for (int j = 0; j < g.cols(); ++j) gb->at(0, j) += g.at(i, j);
                }
            }
            break;
        }
        case Op::Sub: {
            if (ga)
                for (std::size_t i = 0; i < g.size(); ++i) ga->values[i] += g.values[i];
            if (gb)
                for (std::size_t i = 0; i < g.size(); ++i) gb->values[i] -= g.values[i];
            break;
        }
        case Op::Mul: {
            const Tensor& A = nodes_[a].val;
            const Tensor& B = nodes_[b].val;
            if (ga)
                for (std::size_t i = 0; i < g.size(); ++i) ga->values[i] += g.values[i] * B.values[i];
            if (gb)
                for (std::size_t i = 0; i < g.size(); ++i) gb->values[i] += g.values[i] * A.values[i];
            break;
        }
        case Op::Scale: {
            if (ga)
                for (std::size_t i = 0; i < g.size(); ++i) ga->values[i] += n.c * g.values[i];
            break;
        }
        case Op::Transpose: {
            if (ga)
                for (int i = 0; i < g.rows(); ++i)
                    for (int j = 0; j < g.cols(); ++j) ga->at(j, i) += g.at(i, j);
            break;
        }
        case Op::Sigmoid: {
            if (ga)
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double s = n.val.values[i];
                    ga->values[i] += g.values[i] * s * (1.0 - s);
                }
            break;
        }
        case Op::Tanh: {
            if (ga)
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double t = n.val.values[i];
                    ga->values[i] += g.values[i] * (1.0 - t * t);
                }
            break;
        }
        case Op::LeakyRelu: {
            if (ga)
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga->values[i] += g.values[i] * (va.values[i] > 0.0 ? 1.0 : n.c);
            break;
        }
        case Op::SoftmaxRows: {
            if (ga) {
                const int cols = n.val.cols();
                for (int i = 0; i < n.val.rows(); ++i) {
                    const double* s = n.val.values.data() + static_cast<std::size_t>(i) * cols;
                    const double* gr = g.values.data() + static_cast<std::size_t>(i) * cols;
                    double dot = 0.0;
                    for (int j = 0; j < cols; ++j) dot += gr[j] * s[j];
                    double* dst = ga->values.data() + static_cast<std::size_t>(i) * cols;
                    for (int j = 0; j < cols; ++j) dst[j] += s[j] * (gr[j] - dot);
                }
            }
            break;
        }
        case Op::Mse: {
            const Tensor& A = nodes_[a].val;
            const Tensor& B = nodes_[b].val;
            const double k = 2.0 * g.values[0] / static_cast<double>(A.size());
            for (std::size_t i = 0; i < A.size(); ++i) {
                const double d = k * (A.values[i] - B.values[i]);
                if (ga) ga->values[i] += d;
                if (gb) gb->values[i] -= d;
            }
            break;
        }
        case Op::SumAll: {
            if (ga) {
                const double s = g.values[0];
                for (double& v : ga->values) v += s;
            }
            break;
        }
        case Op::MeanAll: {
            if (ga) {
                const double s = g.values[0] / static_cast<double>(ga->size());
                for (double& v : ga->values) v += s;
            }
            break;
        }
        case Op::Concat: {
            const Tensor& A = nodes_[a].val;
            if (n.i0 == 1) {
                const int ca = A.cols();
                for (int i = 0; i < g.rows(); ++i) {
                    if (ga)
                        for (int j = 0; j < ca; ++j) ga->at(i, j) += g.at(i, j);
                    if (gb)
                        for (int j = ca; j < g.cols(); ++j) gb->at(i, j - ca) += g.at(i, j);
                }
            } else {
                const std::size_t na = A.size();
                if (ga)
                    for (std::size_t i = 0; i < na; ++i) ga->values[i] += g.values[i];
                if (gb)
                    for (std::size_t i = na; i < g.size(); ++i) gb->values[i - na] += g.values[i];
            }
            break;
        }
        case Op::Slice: {
            if (ga)
                for (int i = n.i0; i < n.i1; ++i)
                    for (int j = n.i2; j < n.i3; ++j) ga->at(i, j) += g.at(i - n.i0, j - n.i2);
            break;
        }
        case Op::TimeToBatchMajor: {
            if (ga) {
                const int T = n.i0, B = n.i1, cols = n.val.cols();
                for (int t = 0; t < T; ++t)
                    for (int bb = 0; bb < B; ++bb) {
                        const double* src = g.values.data() + static_cast<std::size_t>(bb * T + t) * cols;
                        double* dst = ga->values.data() + static_cast<std::size_t>(t * B + bb) * cols;
                        for (int j = 0; j < cols; ++j) dst[j] += src[j];
                    }
            }
            break;
        }
        case Op::BlockMatMulNT: {
            const Tensor& A = nodes_[a].val;
            const Tensor& B = nodes_[b].val;
            const int block = n.i0, H = A.cols(), G = A.rows() / block;
            for (int grp = 0; grp < G; ++grp) {
                const std::size_t moff = static_cast<std::size_t>(grp) * block * H;
                const std::size_t soff = static_cast<std::size_t>(grp) * block * block;
                if (ga)
                    mat::mul_acc(g.values.data() + soff, B.values.data() + moff,
                                 ga->values.data() + moff, block, block, H);
                if (gb)
                    mat::mul_tn_acc(g.values.data() + soff, A.values.data() + moff,
                                    gb->values.data() + moff, block, block, H);
            }
            break;
        }
        case Op::StackRows:
            break; // handled before the switch
        case Op::BlockMatMulNN: {
            const Tensor& S = nodes_[a].val;
            const Tensor& V = nodes_[b].val;
            const int block = n.i0, H = V.cols(), G = S.rows() / block;
            for (int grp = 0; grp < G; ++grp) {
                const std::size_t soff = static_cast<std::size_t>(grp) * block * block;
                const std::size_t voff = static_cast<std::size_t>(grp) * block * H;
                if (ga)
                    mat::mul_nt_acc(g.values.data() + voff, V.values.data() + voff,
                                    ga->values.data() + soff, block, H, block);
                if (gb)
                    mat::mul_tn_acc(S.values.data() + soff, g.values.data() + voff,
                                    gb->values.data() + voff, block, block, H);
            }
            break;
        }
        }
    }

    std::vector<Node> nodes_;
};

} // namespace terraphys::numkit
