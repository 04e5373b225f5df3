#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hetmeta/tape.hpp"
#include "hetmeta/tensor.hpp"

namespace hetmeta {

// Differentiable primitives. Every function validates shapes, computes the
// forward value and records itself on the active tapes. Rank support is
// 0 (scalar), 1 (vector) and 2 (matrix) unless stated otherwise. Shape
// coercions are always explicit; broadcast is limited to prepending
// leading dimensions.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);

/// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m x k] * [k] -> [m]
Tensor matvec(const Tensor& a, const Tensor& x);
/// [k] . [k] -> scalar
Tensor dot(const Tensor& x, const Tensor& y);
/// [m] outer [k] -> [m x k]
Tensor outer(const Tensor& u, const Tensor& v);
/// [m x k] -> [k x m]
Tensor transpose(const Tensor& a);

/// Affine layer: x [in] -> [out] or x [B x in] -> [B x out] with weight
/// [out x in]; bias [out] is optional (pass a default-constructed Tensor).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor recip(const Tensor& a);

/// Sums away the first k axes.
Tensor sum_leading(const Tensor& a, std::size_t k);
/// Sums away the last axis.
Tensor sum_last(const Tensor& a);
/// Full reduction to a scalar.
Tensor sum_all(const Tensor& a);
/// Mean of all elements.
Tensor mean_all(const Tensor& a);
/// Replicates along new leading axes; a.shape() must be a suffix of target.
Tensor broadcast_to(const Tensor& a, Shape target);
/// Appends a trailing axis of size n, replicating each element.
Tensor broadcast_last(const Tensor& a, std::size_t n);

/// Softmax over the last axis (rank 1 or 2), computed with a max shift.
Tensor softmax(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len);
/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
/// Picks index i of the leading axis, dropping that axis.
Tensor index_leading(const Tensor& a, std::size_t i);
Tensor reshape(const Tensor& a, Shape shape);

/// -log(softmax(logits)[label]) for rank-1 logits of length n_way.
Tensor cross_entropy_loss(const Tensor& logits, std::size_t label);
/// Mean cross-entropy over rows of [B x N] logits.
Tensor cross_entropy_mean(const Tensor& logits, std::span<const std::size_t> labels);

/// Argmax per row of [B x N] logits (or the single index for rank 1);
/// ties break toward the lowest class index.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

/// Vector-Jacobian product of one recorded entry with respect to one
/// input, expressed in primitives so it is itself differentiable.
Tensor op_vjp(const TapeEntry& entry, const Tensor& out_grad, std::size_t input_index);

} // namespace hetmeta
