#pragma once

#include <cstdint>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hetmeta/tensor.hpp"

namespace hetmeta {

enum class Op : std::uint8_t {
    Add,
    Sub,
    Mul,
    Scale,
    MatMul,
    MatVec,
    Dot,
    Outer,
    Transpose,
    Linear,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Recip,
    SumLeading,
    SumLast,
    BroadcastTo,
    BroadcastLast,
    Softmax,
    Concat,
    Slice,
    Stack,
    IndexLeading,
    Reshape,
};

const char* op_name(Op op);

struct OpAttrs {
    double scalar = 0.0;
    std::vector<std::int64_t> ints;
};

struct TapeEntry {
    Op op;
    OpAttrs attrs;
    std::vector<Tensor> inputs;
    Tensor output;
};

/// Gradients of one backward pass, keyed by leaf identity. Every leaf the
/// tape watched is present; leaves unreachable from the traversed output
/// map to exact zeros.
class GradMap {
public:
    const Tensor& at(const Tensor& leaf) const;
    const Tensor& at(std::uint64_t id) const;
    bool contains(const Tensor& leaf) const { return grads_.count(leaf.id()) != 0; }
    std::size_t size() const { return grads_.size(); }

private:
    friend class Tape;
    std::unordered_map<std::uint64_t, Tensor> grads_;
};

/// Records primitive operations for reverse-mode differentiation.
///
/// Tapes nest: constructing a Tape pushes it onto a thread-local stack and
/// remembers the enclosing tape as its parent. An executed primitive is
/// recorded on every active tape that already knows at least one of its
/// inputs (watched leaf or previous entry output). The backward pass
/// replays vector-Jacobian products as ordinary primitives, so when an
/// enclosing tape is still active the gradient computation itself gets
/// recorded and gradients-of-gradients come out of the enclosing tape.
///
/// A tape and the tensors recorded on it are confined to one thread.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Marks a leaf whose gradient should be tracked and reported.
    void watch(const Tensor& t);

    bool knows(std::uint64_t id) const { return known_.count(id) != 0; }
    bool is_watched(const Tensor& t) const { return watched_ids_.count(t.id()) != 0; }
    std::size_t entry_count() const { return entries_.size(); }
    const Tape* parent() const { return parent_; }

    /// Backward pass from a scalar output with implicit seed 1.
    GradMap gradient(const Tensor& output);
    /// Backward pass with an explicit seed of the output's shape.
    GradMap gradient(const Tensor& output, const Tensor& seed);

private:
    std::vector<TapeEntry> entries_;
    std::unordered_set<std::uint64_t> known_;
    std::vector<Tensor> watched_;
    std::unordered_set<std::uint64_t> watched_ids_;
    Tape* parent_ = nullptr;
    bool paused_ = false;

    friend void record_op(Op op, OpAttrs attrs, const std::vector<Tensor>& inputs,
                          const Tensor& output);
};

/// Spec-level entry point; equivalent to tape.gradient(output, seed).
GradMap backward(Tape& tape, const Tensor& output, const Tensor& seed);

namespace detail {
/// Active tapes on this thread, innermost last. Exposed for tests.
std::size_t active_tape_depth();
} // namespace detail

/// Records one executed primitive on every active, unpaused tape that
/// knows at least one input. Called by the primitive implementations.
void record_op(Op op, OpAttrs attrs, const std::vector<Tensor>& inputs, const Tensor& output);

} // namespace hetmeta
