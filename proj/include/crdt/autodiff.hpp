#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crdt/rng.hpp"
#include "crdt/tensor.hpp"

namespace crdt {

// Define-by-run reverse-mode tape. Building an op runs its forward pass
// immediately and records a backward closure; backward() replays the tape
// in reverse creation order, which is a valid reverse topological order by
// construction. One Tape instance corresponds to one forward/backward pass.

class Tape;

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- graph inputs -------------------------------------------------
    // Parameter leaf: value is read from *param, gradients accumulate into
    // param->grad after backward(). The tensor must outlive the tape.
    Var param(Tensor* param);
    // Owned leaf that wants a gradient (finite-difference tests).
    Var variable(Tensor value);
    // Owned leaf without gradient (data, masks, labels).
    Var constant(Tensor value);

    // --- ops ----------------------------------------------------------
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);         // a (m,k) * b(n,k)^T -> (m,n)
    Var add(Var a, Var b);               // same shape
    Var sub(Var a, Var b);               // same shape
    Var mul(Var a, Var b);               // elementwise, same shape
    Var scale(Var a, double s);
    Var add_bias(Var x, Var bias);       // bias (c) broadcast over rows of x (r,c)
    Var gelu(Var x);
    Var clip(Var x, double lo, double hi);
    Var layer_norm(Var x, Var gain, Var bias);  // per-row over columns
    // Row-wise softmax restricted to entries where allowed != 0; disallowed
    // entries get probability 0. A fully disallowed row becomes all zeros.
    Var softmax_rows_masked(Var x, const std::vector<std::uint8_t>& allowed);
    // Element dropout: zero with probability rate, survivors scaled by
    // 1/(1-rate). rate must be in [0, 1). active=false is the identity.
    Var dropout(Var x, double rate, bool active, Rng& rng);
    Var embedding_rows(Var table, const std::vector<std::size_t>& ids);
    Var select_rows(Var x, const std::vector<std::size_t>& rows);
    // Interleaves three (t, d) inputs into (3t, d): a0,b0,c0,a1,b1,c1,...
    Var interleave3(Var a, Var b, Var c);
    Var slice_cols(Var x, std::size_t start, std::size_t count);
    Var concat_cols(const std::vector<Var>& parts);
    Var sum_all(Var x);                  // scalar

    // --- losses (scalar outputs, masked by per-row validity) -----------
    // Mean negative log probability of the labelled class over valid rows.
    // Probabilities are floored at 1e-12; the floor region contributes no
    // gradient.
    Var cross_entropy_logits(Var logits, const std::vector<std::size_t>& labels,
                             const std::vector<std::uint8_t>& valid);
    // Mean over valid rows of the squared row error (summed over columns).
    Var mse_rows(Var pred, const Tensor& target, const std::vector<std::uint8_t>& valid);
    // Mean over valid rows of sum_d [ (t-mu)^2/(2 s2) + 0.5 log(2 pi s2) ]
    // with s2 = exp(logvar).
    Var gaussian_nll_rows(Var mu, Var logvar, const Tensor& target,
                          const std::vector<std::uint8_t>& valid);

    // --- execution ------------------------------------------------------
    const Tensor& value(Var v) const;
    // Gradient buffer of a tape node (valid after backward()).
    const std::vector<double>& grad(Var v) const;
    // Runs reverse pass from a scalar loss; accumulates into the .grad of
    // every parameter leaf whose tensor has requires_grad set.
    void backward(Var loss);
    bool backward_done() const { return backward_done_; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor owned;
        Tensor* external = nullptr;
        std::vector<double> grad;
        std::vector<int> inputs;
        std::function<void(Tape&, int)> back;
        const char* op = "";
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;
    bool backward_done_ = false;

    int push(Node&& n);
    Node& node(Var v);
    const Node& node(Var v) const;
    const Tensor& val(int id) const;
    bool needs(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
    double* grad_buf(int id);
    void check_same_shape(const char* op, Var a, Var b) const;

    friend struct TapeOps;
};

}  // namespace crdt
