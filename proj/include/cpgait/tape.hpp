// Reverse-mode autodiff tape over the dense primitives the model needs.
//
// Usage: create a Tape per forward pass, insert leaves (inputs and
// parameters), apply primitives, call backward on a scalar node, then read
// gradients back per leaf. Nodes are recorded in application order, which is
// already a topological order, so backward is a single reverse sweep that
// visits each node exactly once.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cpgait/common.hpp"
#include "cpgait/tensor.hpp"

namespace cpgait::ad {

template <class T>
class Tape {
public:
    using Var = std::int32_t;
    static constexpr Var kNull = -1;

    Var leaf(Tensor<T> value, bool requires_grad = false);

    const Tensor<T>& val(Var v) const { return nodes_[static_cast<std::size_t>(v)].value; }
    bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v)].requires_grad; }
    // Gradient of the last backward() target w.r.t. node v; zeros if v was
    // not reached.
    const Tensor<T>& grad(Var v);
    std::size_t num_nodes() const { return nodes_.size(); }

    // --- primitives -------------------------------------------------------
    Var matmul(Var a, Var b);                       // [m,k] x [k,n] -> [m,n]
    Var linear(Var x, Var w, Var b);                // [N,F] x [G,F]^T + [G] -> [N,G]
    Var pointwise_linear(Var x, Var w, Var b);      // [N,C,T,V], [O,C], [O] -> [N,O,T,V]
    Var temporal_conv(Var x, Var w, Var b, int stride, int padding);  // w: [O,C,k]
    Var graph_mul(Var x, const Tensor<T>& a_hat);   // y[n,c,t,v] = sum_u x[n,c,t,u] A[u,v]
    // Batch normalization. per_node=false: channels are dim 1 of [N,C,T,V],
    // stats over (N,T,V). per_node=true: each (c,v) pair is a channel, stats
    // over (N,T). Running stats are updated in train mode.
    Var batch_norm(Var x, Var gamma, Var beta, Tensor<T>* running_mean, Tensor<T>* running_var,
                   Mode mode, T momentum, T eps, bool per_node = false);
    Var layer_norm(Var x, Var gain, Var bias, T eps);  // per row of [N,D]
    Var relu(Var x);
    Var sigmoid(Var x);
    Var dropout(Var x, T rate, Mode mode, Rng& rng);
    Var add(Var a, Var b);                          // same shape
    Var mul(Var a, Var b);                          // hadamard
    Var scale(Var x, T c);
    Var sum(Var x);                                 // -> scalar
    Var global_avg_pool(Var x);                     // [N,C,T,V] -> [N,C]
    Var concat_cols(Var a, Var b);                  // [N,D1],[N,D2] -> [N,D1+D2]
    Var rowwise_dot(Var a, Var b);                  // [N,D],[N,D] -> [N]
    Var scale_rows(Var x, Var s);                   // x[N,D] * s[N]
    Var softmax_cross_entropy(Var logits, const std::vector<int>& labels);  // -> scalar
    // Weighted mean cross-entropy: sum_i w_i*ce_i / sum_i w_i.
    Var softmax_cross_entropy(Var logits, const std::vector<int>& labels,
                              const std::vector<double>& weights);
    Var select_scalar(Var x, std::int64_t flat_index);                      // -> scalar

    // Reverse sweep from a scalar node. May be called once per tape.
    void backward(Var loss);

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;   // allocated lazily
        bool requires_grad = false;
        bool grad_ready = false;
        std::function<void(Tape&)> back;  // empty for leaves
    };

    Node& node(Var v) { return nodes_[static_cast<std::size_t>(v)]; }
    Var push(Tensor<T> value, bool requires_grad, std::function<void(Tape&)> back);
    Tensor<T>& grad_buf(Var v);  // allocate-on-demand accumulator
    void accumulate(Var v, const Tensor<T>& g);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Softmax over the last dim of a [N,K] tensor; forward-only helper for
// prediction paths.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

extern template class Tape<float>;
extern template class Tape<double>;
extern template Tensor<float> softmax_rows<float>(const Tensor<float>&);
extern template Tensor<double> softmax_rows<double>(const Tensor<double>&);

}  // namespace cpgait::ad
