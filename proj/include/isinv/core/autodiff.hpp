#pragma once

// Define-by-run reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every primitive op as a node in creation order, which is a
// topological order by construction. Backward replays nodes from the loss
// towards the leaves, visiting each node at most once. Leaves either own
// their value (attack variables) or borrow it (model weights); borrowed
// tensors must outlive the tape.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "isinv/core/tensor.hpp"

namespace isinv::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;
    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

struct GradResult {
    std::vector<Tensor> grads;
    /// Per-wrt flag: true when no path connects the loss to that tensor.
    std::vector<bool> disconnected;
    /// Set when any wrt entry was disconnected (its gradient is explicit zero).
    bool warning = false;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& out, const Tensor& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Owned leaf; gradient tracked iff value.requires_grad.
    Var variable(Tensor value);
    /// Borrowed leaf that never receives a gradient.
    Var constant(const Tensor& value);
    Var constant(Tensor&&) = delete;
    /// Borrowed leaf that receives a gradient (training).
    Var parameter(const Tensor& value);
    Var parameter(Tensor&&) = delete;

    /// d loss / d wrt for every wrt. `loss` must be a single-element tensor.
    GradResult grad(const Var& loss, std::span<const Var> wrt);
    GradResult grad(const Var& loss, std::initializer_list<Var> wrt) {
        return grad(loss, std::span<const Var>(wrt.begin(), wrt.size()));
    }

    std::size_t size() const { return nodes_.size(); }

    // Op-author interface.
    Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
    Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);
    const Tensor& value_of(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    /// Gradient accumulator of `v`, zero-initialized on first access.
    Tensor& grad_of(const Var& v);

private:
    struct Node {
        Tensor owned;
        const Tensor* borrowed = nullptr;
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward;
        Tensor grad;
    };

    std::vector<Node> nodes_;
};

// Linear algebra.
Var matmul(const Var& a, const Var& b);     // a[m x k] . b[k x n]
Var matmul_nt(const Var& a, const Var& b);  // a[m x k] . b[n x k]^T

// Elementwise / broadcast. `add` accepts b as a single row broadcast over a's rows.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var silu(const Var& x);
Var arctan(const Var& x);
Var tanh(const Var& x);

// Row-wise.
Var softmax_row(const Var& x);
Var rmsnorm_row(const Var& x, const Var& gain, double eps);
Var mean_rows(const Var& x);  // [m x n] -> [1 x n]

// Reductions to a scalar.
Var sum(const Var& x);
Var mean(const Var& x);
Var l2norm(const Var& x);
Var mse(const Var& a, const Var& b);
/// 1 - mean_i cos(a_i, b_i), with 1e-12 added to each denominator.
Var cosine_distance_rows(const Var& a, const Var& b);
/// Mean next-token negative log-likelihood of `targets` under row logits.
Var cross_entropy(const Var& logits, std::span<const int> targets);

// Indexing.
Var gather_rows(const Var& table, std::span<const int> ids);
/// Rows [begin, begin + count) of x.
Var slice_rows(const Var& x, std::size_t begin, std::size_t count);
/// Stacks row blocks of equal width.
Var concat_rows(std::span<const Var> parts);

// Transformer pieces.
/// Rotary position encoding applied per head on interleaved pairs.
Var rope(const Var& x, std::size_t heads, double base, std::size_t position_offset = 0);
/// Scaled dot-product multi-head attention; q[m x d], k/v[n x d].
/// With `causal`, m must equal n and query i only sees keys j <= i.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, bool causal);

}  // namespace isinv::ad
