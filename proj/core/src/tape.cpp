#include "hetmeta/tape.hpp"

#include "hetmeta/error.hpp"
#include "hetmeta/ops.hpp"

namespace hetmeta {

namespace {

thread_local std::vector<Tape*> g_tape_stack;

struct ScopedPause {
    explicit ScopedPause(bool& flag) : flag_(flag) { flag_ = true; }
    ~ScopedPause() { flag_ = false; }
    bool& flag_;
};

} // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::MatMul: return "matmul";
        case Op::MatVec: return "matvec";
        case Op::Dot: return "dot";
        case Op::Outer: return "outer";
        case Op::Transpose: return "transpose";
        case Op::Linear: return "linear";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Recip: return "recip";
        case Op::SumLeading: return "sum_leading";
        case Op::SumLast: return "sum_last";
        case Op::BroadcastTo: return "broadcast_to";
        case Op::BroadcastLast: return "broadcast_last";
        case Op::Softmax: return "softmax";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::Stack: return "stack";
        case Op::IndexLeading: return "index_leading";
        case Op::Reshape: return "reshape";
    }
    return "?";
}

const Tensor& GradMap::at(const Tensor& leaf) const { return at(leaf.id()); }

const Tensor& GradMap::at(std::uint64_t id) const {
    auto it = grads_.find(id);
    if (it == grads_.end()) {
        throw ValueError("GradMap: tensor " + std::to_string(id) + " is not a watched leaf");
    }
    return it->second;
}

Tape::Tape() {
    parent_ = g_tape_stack.empty() ? nullptr : g_tape_stack.back();
    g_tape_stack.push_back(this);
}

Tape::~Tape() {
    // Tapes are scoped objects; out-of-order destruction is a program bug.
    if (!g_tape_stack.empty() && g_tape_stack.back() == this) {
        g_tape_stack.pop_back();
    }
}

void Tape::watch(const Tensor& t) {
    if (!t.defined()) throw ValueError("watch: undefined tensor");
    if (watched_ids_.insert(t.id()).second) {
        watched_.push_back(t);
        known_.insert(t.id());
    }
}

GradMap Tape::gradient(const Tensor& output) {
    if (output.rank() != 0) {
        throw ShapeError("backward: output " + shape_str(output.shape()) +
                         " is not scalar-shaped; pass an explicit seed");
    }
    return gradient(output, Tensor::scalar(1.0));
}

GradMap Tape::gradient(const Tensor& output, const Tensor& seed) {
    if (!knows(output.id())) {
        throw ValueError("backward: output was not produced under this tape");
    }
    if (seed.shape() != output.shape()) {
        throw ShapeError("backward: seed shape " + shape_str(seed.shape()) +
                         " does not match output shape " + shape_str(output.shape()));
    }

    // The tape itself must not record its own vector-Jacobian products;
    // enclosing tapes still do, which is what makes nested differentiation
    // (gradients of gradients) work.
    ScopedPause pause(paused_);

    std::unordered_map<std::uint64_t, Tensor> adjoint;
    adjoint.reserve(entries_.size() + 1);
    adjoint.emplace(output.id(), seed);

    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        const TapeEntry& e = *it;
        auto found = adjoint.find(e.output.id());
        if (found == adjoint.end()) continue;
        const Tensor g = found->second;
        for (std::size_t i = 0; i < e.inputs.size(); ++i) {
            const Tensor& input = e.inputs[i];
            // Inputs this tape never saw cannot reach a watched leaf.
            if (!knows(input.id())) continue;
            Tensor contribution = op_vjp(e, g, i);
            auto slot = adjoint.find(input.id());
            if (slot == adjoint.end()) {
                adjoint.emplace(input.id(), std::move(contribution));
            } else {
                slot->second = add(slot->second, contribution);
            }
        }
    }

    GradMap out;
    out.grads_.reserve(watched_.size());
    for (const Tensor& leaf : watched_) {
        auto found = adjoint.find(leaf.id());
        if (found != adjoint.end()) {
            out.grads_.emplace(leaf.id(), found->second);
        } else {
            out.grads_.emplace(leaf.id(), Tensor::zeros(leaf.shape()));
        }
    }
    return out;
}

GradMap backward(Tape& tape, const Tensor& output, const Tensor& seed) {
    return tape.gradient(output, seed);
}

void record_op(Op op, OpAttrs attrs, const std::vector<Tensor>& inputs, const Tensor& output) {
    if (g_tape_stack.empty()) return;
    for (Tape* tape : g_tape_stack) {
        if (tape->paused_) continue;
        bool relevant = false;
        for (const Tensor& in : inputs) {
            if (tape->known_.count(in.id())) {
                relevant = true;
                break;
            }
        }
        if (!relevant) continue;
        tape->entries_.push_back(TapeEntry{op, attrs, inputs, output});
        tape->known_.insert(output.id());
    }
}

namespace detail {
std::size_t active_tape_depth() { return g_tape_stack.size(); }
} // namespace detail

} // namespace hetmeta
