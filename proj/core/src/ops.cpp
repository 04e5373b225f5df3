#include "hetmeta/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hetmeta/error.hpp"

namespace hetmeta {

namespace {

void require_defined(const char* prim, const Tensor& t) {
    if (!t.defined()) throw ValueError(std::string(prim) + ": undefined tensor operand");
}

void require_same_shape(const char* prim, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(prim) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

Tensor elementwise(Op op, const Tensor& a, const Tensor& b, double (*fn)(double, double)) {
    require_defined(op_name(op), a);
    require_defined(op_name(op), b);
    require_same_shape(op_name(op), a, b);
    const auto pa = a.data();
    const auto pb = b.data();
    std::vector<double> out(pa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(pa[i], pb[i]);
    Tensor r = make_tensor(a.shape(), std::move(out));
    record_op(op, {}, {a, b}, r);
    return r;
}

Tensor unary(Op op, const Tensor& a, double (*fn)(double)) {
    require_defined(op_name(op), a);
    const auto pa = a.data();
    std::vector<double> out(pa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(pa[i]);
    Tensor r = make_tensor(a.shape(), std::move(out));
    record_op(op, {}, {a}, r);
    return r;
}

std::size_t prefix_numel(const Shape& s, std::size_t upto) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < upto; ++i) n *= s[i];
    return n;
}

std::size_t suffix_numel(const Shape& s, std::size_t from) {
    std::size_t n = 1;
    for (std::size_t i = from; i < s.size(); ++i) n *= s[i];
    return n;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise(Op::Add, a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return elementwise(Op::Sub, a, b, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return elementwise(Op::Mul, a, b, [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double c) {
    require_defined("scale", a);
    const auto pa = a.data();
    std::vector<double> out(pa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * c;
    Tensor r = make_tensor(a.shape(), std::move(out));
    OpAttrs attrs;
    attrs.scalar = c;
    record_op(Op::Scale, std::move(attrs), {a}, r);
    return r;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined("matmul", a);
    require_defined("matmul", b);
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(m * n, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        double* orow = out.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = pb + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    Tensor r = make_tensor({m, n}, std::move(out));
    record_op(Op::MatMul, {}, {a, b}, r);
    return r;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
    require_defined("matvec", a);
    require_defined("matvec", x);
    if (a.rank() != 2 || x.rank() != 1 || a.shape()[1] != x.shape()[0]) {
        throw ShapeError("matvec: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(x.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const double* pa = a.data().data();
    const double* px = x.data().data();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += arow[j] * px[j];
        out[i] = s;
    }
    Tensor r = make_tensor({m}, std::move(out));
    record_op(Op::MatVec, {}, {a, x}, r);
    return r;
}

Tensor dot(const Tensor& x, const Tensor& y) {
    require_defined("dot", x);
    require_defined("dot", y);
    if (x.rank() != 1 || y.rank() != 1 || x.size() != y.size()) {
        throw ShapeError("dot: incompatible shapes " + shape_str(x.shape()) + " vs " +
                         shape_str(y.shape()));
    }
    const double* px = x.data().data();
    const double* py = y.data().data();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += px[i] * py[i];
    Tensor r = make_tensor({}, {s});
    record_op(Op::Dot, {}, {x, y}, r);
    return r;
}

Tensor outer(const Tensor& u, const Tensor& v) {
    require_defined("outer", u);
    require_defined("outer", v);
    if (u.rank() != 1 || v.rank() != 1) {
        throw ShapeError("outer: expects two vectors, got " + shape_str(u.shape()) + " and " +
                         shape_str(v.shape()));
    }
    const std::size_t m = u.size(), k = v.size();
    std::vector<double> out(m * k);
    const double* pu = u.data().data();
    const double* pv = v.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = pu[i] * pv[j];
    }
    Tensor r = make_tensor({m, k}, std::move(out));
    record_op(Op::Outer, {}, {u, v}, r);
    return r;
}

Tensor transpose(const Tensor& a) {
    require_defined("transpose", a);
    if (a.rank() != 2) {
        throw ShapeError("transpose: expects rank-2, got " + shape_str(a.shape()));
    }
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    const double* pa = a.data().data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = pa[i * n + j];
    }
    Tensor r = make_tensor({n, m}, std::move(out));
    record_op(Op::Transpose, {}, {a}, r);
    return r;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_defined("linear", x);
    require_defined("linear", weight);
    if (weight.rank() != 2) {
        throw ShapeError("linear: weight must be rank-2, got " + shape_str(weight.shape()));
    }
    const std::size_t out_dim = weight.shape()[0], in_dim = weight.shape()[1];
    if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != out_dim)) {
        throw ShapeError("linear: bias shape " + shape_str(bias.shape()) +
                         " does not match weight " + shape_str(weight.shape()));
    }
    const double* pw = weight.data().data();
    const double* pb = bias.defined() ? bias.data().data() : nullptr;
    const double* px = x.data().data();

    Tensor r;
    if (x.rank() == 1) {
        if (x.shape()[0] != in_dim) {
            throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(weight.shape()));
        }
        std::vector<double> out(out_dim);
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double* wrow = pw + o * in_dim;
            double s = pb ? pb[o] : 0.0;
            for (std::size_t i = 0; i < in_dim; ++i) s += wrow[i] * px[i];
            out[o] = s;
        }
        r = make_tensor({out_dim}, std::move(out));
    } else if (x.rank() == 2) {
        if (x.shape()[1] != in_dim) {
            throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(weight.shape()));
        }
        const std::size_t batch = x.shape()[0];
        std::vector<double> out(batch * out_dim);
        for (std::size_t b = 0; b < batch; ++b) {
            const double* xrow = px + b * in_dim;
            double* orow = out.data() + b * out_dim;
            for (std::size_t o = 0; o < out_dim; ++o) {
                const double* wrow = pw + o * in_dim;
                double s = pb ? pb[o] : 0.0;
                for (std::size_t i = 0; i < in_dim; ++i) s += wrow[i] * xrow[i];
                orow[o] = s;
            }
        }
        r = make_tensor({batch, out_dim}, std::move(out));
    } else {
        throw ShapeError("linear: input must be rank-1 or rank-2, got " + shape_str(x.shape()));
    }

    if (bias.defined()) {
        record_op(Op::Linear, {}, {x, weight, bias}, r);
    } else {
        record_op(Op::Linear, {}, {x, weight}, r);
    }
    return r;
}

Tensor sigmoid(const Tensor& a) {
    return unary(Op::Sigmoid, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor tanh(const Tensor& a) {
    return unary(Op::Tanh, a, [](double x) { return std::tanh(x); });
}

Tensor exp(const Tensor& a) {
    return unary(Op::Exp, a, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
    return unary(Op::Log, a, [](double x) { return std::log(x); });
}

Tensor recip(const Tensor& a) {
    return unary(Op::Recip, a, [](double x) { return 1.0 / x; });
}

Tensor sum_leading(const Tensor& a, std::size_t k) {
    require_defined("sum_leading", a);
    if (k > a.rank()) {
        throw ShapeError("sum_leading: cannot reduce " + std::to_string(k) + " axes of " +
                         shape_str(a.shape()));
    }
    if (k == 0) return a;
    Shape out_shape(a.shape().begin() + static_cast<std::ptrdiff_t>(k), a.shape().end());
    const std::size_t groups = prefix_numel(a.shape(), k);
    const std::size_t block = suffix_numel(a.shape(), k);
    const double* pa = a.data().data();
    std::vector<double> out(block, 0.0);
    for (std::size_t g = 0; g < groups; ++g) {
        const double* row = pa + g * block;
        for (std::size_t j = 0; j < block; ++j) out[j] += row[j];
    }
    Tensor r = make_tensor(std::move(out_shape), std::move(out));
    OpAttrs attrs;
    attrs.ints = {static_cast<std::int64_t>(k)};
    record_op(Op::SumLeading, std::move(attrs), {a}, r);
    return r;
}

Tensor sum_last(const Tensor& a) {
    require_defined("sum_last", a);
    if (a.rank() == 0) throw ShapeError("sum_last: scalar has no axis to reduce");
    const std::size_t last = a.shape().back();
    const std::size_t rows = a.size() / last;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    const double* pa = a.data().data();
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = pa + r * last;
        double s = 0.0;
        for (std::size_t j = 0; j < last; ++j) s += row[j];
        out[r] = s;
    }
    Tensor r = make_tensor(std::move(out_shape), std::move(out));
    record_op(Op::SumLast, {}, {a}, r);
    return r;
}

Tensor sum_all(const Tensor& a) {
    require_defined("sum_all", a);
    return sum_leading(a, a.rank());
}

Tensor mean_all(const Tensor& a) {
    require_defined("mean_all", a);
    if (a.size() == 0) throw ValueError("mean_all: empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor broadcast_to(const Tensor& a, Shape target) {
    require_defined("broadcast_to", a);
    const Shape& s = a.shape();
    if (target.size() < s.size() ||
        !std::equal(s.begin(), s.end(), target.end() - static_cast<std::ptrdiff_t>(s.size()))) {
        throw ShapeError("broadcast_to: " + shape_str(s) + " is not a suffix of " +
                         shape_str(target));
    }
    if (target == s) return a;
    const std::size_t copies = numel(target) / std::max<std::size_t>(a.size(), 1);
    const std::size_t block = a.size();
    std::vector<double> out(copies * block);
    const double* pa = a.data().data();
    for (std::size_t c = 0; c < copies; ++c) {
        std::memcpy(out.data() + c * block, pa, block * sizeof(double));
    }
    Tensor r = make_tensor(std::move(target), std::move(out));
    record_op(Op::BroadcastTo, {}, {a}, r);
    return r;
}

Tensor broadcast_last(const Tensor& a, std::size_t n) {
    require_defined("broadcast_last", a);
    if (n == 0) throw ShapeError("broadcast_last: trailing axis must be positive");
    Shape out_shape = a.shape();
    out_shape.push_back(n);
    const double* pa = a.data().data();
    std::vector<double> out(a.size() * n);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = pa[i];
        double* row = out.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) row[j] = v;
    }
    Tensor r = make_tensor(std::move(out_shape), std::move(out));
    OpAttrs attrs;
    attrs.ints = {static_cast<std::int64_t>(n)};
    record_op(Op::BroadcastLast, std::move(attrs), {a}, r);
    return r;
}

Tensor softmax(const Tensor& a) {
    require_defined("softmax", a);
    if (a.rank() < 1 || a.rank() > 2) {
        throw ShapeError("softmax: expects rank-1 or rank-2, got " + shape_str(a.shape()));
    }
    const std::size_t last = a.shape().back();
    const std::size_t rows = a.size() / last;
    const double* pa = a.data().data();
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = pa + r * last;
        double* orow = out.data() + r * last;
        double mx = row[0];
        for (std::size_t j = 1; j < last; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < last; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (std::size_t j = 0; j < last; ++j) orow[j] /= denom;
    }
    Tensor r = make_tensor(a.shape(), std::move(out));
    record_op(Op::Softmax, {}, {a}, r);
    return r;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ValueError("concat: empty part list");
    for (const Tensor& p : parts) require_defined("concat", p);
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s0));
    }
    std::size_t axis_total = 0;
    for (const Tensor& p : parts) {
        const Shape& sp = p.shape();
        if (sp.size() != s0.size()) {
            throw ShapeError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(sp));
        }
        for (std::size_t i = 0; i < s0.size(); ++i) {
            if (i != axis && sp[i] != s0[i]) {
                throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " +
                                 shape_str(sp));
            }
        }
        axis_total += sp[axis];
    }
    Shape out_shape = s0;
    out_shape[axis] = axis_total;
    const std::size_t outer_n = prefix_numel(s0, axis);
    const std::size_t suffix = suffix_numel(s0, axis + 1);
    std::vector<double> out(numel(out_shape));
    std::size_t dst_off = 0;
    for (std::size_t o = 0; o < outer_n; ++o) {
        for (const Tensor& p : parts) {
            const std::size_t block = p.shape()[axis] * suffix;
            std::memcpy(out.data() + dst_off, p.data().data() + o * block,
                        block * sizeof(double));
            dst_off += block;
        }
    }
    Tensor r = make_tensor(std::move(out_shape), std::move(out));
    OpAttrs attrs;
    attrs.ints = {static_cast<std::int64_t>(axis)};
    record_op(Op::Concat, std::move(attrs), parts, r);
    return r;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
    require_defined("slice", a);
    const Shape& s = a.shape();
    if (axis >= s.size()) {
        throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
    }
    if (len == 0 || start + len > s[axis]) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for axis " +
                         std::to_string(axis) + " of " + shape_str(s));
    }
    Shape out_shape = s;
    out_shape[axis] = len;
    const std::size_t outer_n = prefix_numel(s, axis);
    const std::size_t suffix = suffix_numel(s, axis + 1);
    const std::size_t src_block = s[axis] * suffix;
    const std::size_t dst_block = len * suffix;
    const double* pa = a.data().data();
    std::vector<double> out(numel(out_shape));
    for (std::size_t o = 0; o < outer_n; ++o) {
        std::memcpy(out.data() + o * dst_block, pa + o * src_block + start * suffix,
                    dst_block * sizeof(double));
    }
    Tensor r = make_tensor(std::move(out_shape), std::move(out));
    OpAttrs attrs;
    attrs.ints = {static_cast<std::int64_t>(axis), static_cast<std::int64_t>(start),
                  static_cast<std::int64_t>(len)};
    record_op(Op::Slice, std::move(attrs), {a}, r);
    return r;
}

Tensor stack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ValueError("stack: empty part list");
    for (const Tensor& p : parts) {
        require_defined("stack", p);
        require_same_shape("stack", parts[0], p);
    }
    Shape out_shape;
    out_shape.push_back(parts.size());
    out_shape.insert(out_shape.end(), parts[0].shape().begin(), parts[0].shape().end());
    const std::size_t block = parts[0].size();
    std::vector<double> out(parts.size() * block);
    for (std::size_t p = 0; p < parts.size(); ++p) {
        std::memcpy(out.data() + p * block, parts[p].data().data(), block * sizeof(double));
    }
    Tensor r = make_tensor(std::move(out_shape), std::move(out));
    record_op(Op::Stack, {}, parts, r);
    return r;
}

Tensor index_leading(const Tensor& a, std::size_t i) {
    require_defined("index_leading", a);
    if (a.rank() == 0) throw ShapeError("index_leading: scalar has no leading axis");
    if (i >= a.shape()[0]) {
        throw ShapeError("index_leading: index " + std::to_string(i) + " out of range for " +
                         shape_str(a.shape()));
    }
    Shape out_shape(a.shape().begin() + 1, a.shape().end());
    const std::size_t block = suffix_numel(a.shape(), 1);
    std::vector<double> out(block);
    std::memcpy(out.data(), a.data().data() + i * block, block * sizeof(double));
    Tensor r = make_tensor(std::move(out_shape), std::move(out));
    OpAttrs attrs;
    attrs.ints = {static_cast<std::int64_t>(i)};
    record_op(Op::IndexLeading, std::move(attrs), {a}, r);
    return r;
}

Tensor reshape(const Tensor& a, Shape shape) {
    require_defined("reshape", a);
    if (numel(shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    }
    if (shape == a.shape()) return a;
    std::vector<double> out(a.data().begin(), a.data().end());
    Tensor r = make_tensor(std::move(shape), std::move(out));
    record_op(Op::Reshape, {}, {a}, r);
    return r;
}

namespace {

/// Detached per-row maxima of [B x N] logits, used as a constant shift.
Tensor row_max_constant(const Tensor& logits) {
    const std::size_t n = logits.shape()[1];
    const std::size_t rows = logits.shape()[0];
    const double* p = logits.data().data();
    std::vector<double> mx(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = p + r * n;
        double m = row[0];
        for (std::size_t j = 1; j < n; ++j) m = std::max(m, row[j]);
        mx[r] = m;
    }
    return Tensor::from_vector(std::move(mx));
}

} // namespace

Tensor cross_entropy_mean(const Tensor& logits, std::span<const std::size_t> labels) {
    require_defined("cross_entropy", logits);
    if (logits.rank() != 2) {
        throw ShapeError("cross_entropy: logits must be [batch x n_way], got " +
                         shape_str(logits.shape()));
    }
    const std::size_t batch = logits.shape()[0];
    const std::size_t n_way = logits.shape()[1];
    if (labels.size() != batch) {
        throw ValueError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + " rows");
    }
    std::vector<double> onehot(batch * n_way, 0.0);
    for (std::size_t r = 0; r < batch; ++r) {
        if (labels[r] >= n_way) {
            throw ValueError("cross_entropy: label " + std::to_string(labels[r]) +
                             " out of range [0, " + std::to_string(n_way) + ")");
        }
        onehot[r * n_way + labels[r]] = 1.0;
    }
    // The max shift is a detached constant: the result is mathematically
    // shift-independent, so treating it as constant keeps gradients exact
    // while preventing exp overflow.
    Tensor shift = broadcast_last(row_max_constant(logits), n_way);
    Tensor shifted = sub(logits, shift);
    Tensor lse = log(sum_last(exp(shifted)));
    Tensor log_probs = sub(shifted, broadcast_last(lse, n_way));
    Tensor picked = mul(log_probs, Tensor::from_data({batch, n_way}, std::move(onehot)));
    return scale(sum_all(picked), -1.0 / static_cast<double>(batch));
}

Tensor cross_entropy_loss(const Tensor& logits, std::size_t label) {
    require_defined("cross_entropy", logits);
    if (logits.rank() != 1) {
        throw ShapeError("cross_entropy: logits must be rank-1, got " +
                         shape_str(logits.shape()));
    }
    const std::size_t labels[1] = {label};
    return cross_entropy_mean(reshape(logits, {1, logits.shape()[0]}),
                              std::span<const std::size_t>(labels, 1));
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
    require_defined("argmax", logits);
    if (logits.rank() != 1 && logits.rank() != 2) {
        throw ShapeError("argmax: expects rank-1 or rank-2, got " + shape_str(logits.shape()));
    }
    const std::size_t n = logits.shape().back();
    const std::size_t rows = logits.size() / n;
    const double* p = logits.data().data();
    std::vector<std::size_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = p + r * n;
        std::size_t best = 0;
        for (std::size_t j = 1; j < n; ++j) {
            if (row[j] > row[best]) best = j;
        }
        out[r] = best;
    }
    return out;
}

Tensor op_vjp(const TapeEntry& e, const Tensor& g, std::size_t idx) {
    switch (e.op) {
        case Op::Add:
            return g;
        case Op::Sub:
            return idx == 0 ? g : neg(g);
        case Op::Mul:
            return mul(g, e.inputs[1 - idx]);
        case Op::Scale:
            return scale(g, e.attrs.scalar);
        case Op::MatMul:
            return idx == 0 ? matmul(g, transpose(e.inputs[1]))
                            : matmul(transpose(e.inputs[0]), g);
        case Op::MatVec:
            return idx == 0 ? outer(g, e.inputs[1]) : matvec(transpose(e.inputs[0]), g);
        case Op::Dot:
            return mul(e.inputs[1 - idx], broadcast_to(g, e.inputs[1 - idx].shape()));
        case Op::Outer:
            return idx == 0 ? matvec(g, e.inputs[1]) : matvec(transpose(g), e.inputs[0]);
        case Op::Transpose:
            return transpose(g);
        case Op::Linear: {
            const Tensor& x = e.inputs[0];
            const Tensor& w = e.inputs[1];
            if (x.rank() == 2) {
                if (idx == 0) return matmul(g, w);
                if (idx == 1) return matmul(transpose(g), x);
                return sum_leading(g, 1);
            }
            if (idx == 0) return matvec(transpose(w), g);
            if (idx == 1) return outer(g, x);
            return g;
        }
        case Op::Sigmoid: {
            const Tensor& y = e.output;
            return mul(g, mul(y, sub(Tensor::ones(y.shape()), y)));
        }
        case Op::Tanh: {
            const Tensor& y = e.output;
            return mul(g, sub(Tensor::ones(y.shape()), mul(y, y)));
        }
        case Op::Exp:
            return mul(g, e.output);
        case Op::Log:
            return mul(g, recip(e.inputs[0]));
        case Op::Recip:
            return neg(mul(g, mul(e.output, e.output)));
        case Op::SumLeading:
            return broadcast_to(g, e.inputs[0].shape());
        case Op::SumLast:
            return broadcast_last(g, e.inputs[0].shape().back());
        case Op::BroadcastTo:
            return sum_leading(g, e.output.rank() - e.inputs[0].rank());
        case Op::BroadcastLast:
            return sum_last(g);
        case Op::Softmax: {
            const Tensor& y = e.output;
            Tensor t = mul(g, y);
            Tensor s = sum_last(t);
            return sub(t, mul(y, broadcast_last(s, y.shape().back())));
        }
        case Op::Concat: {
            const std::size_t axis = static_cast<std::size_t>(e.attrs.ints[0]);
            std::size_t offset = 0;
            for (std::size_t p = 0; p < idx; ++p) offset += e.inputs[p].shape()[axis];
            return slice(g, axis, offset, e.inputs[idx].shape()[axis]);
        }
        case Op::Slice: {
            const std::size_t axis = static_cast<std::size_t>(e.attrs.ints[0]);
            const std::size_t start = static_cast<std::size_t>(e.attrs.ints[1]);
            const std::size_t len = static_cast<std::size_t>(e.attrs.ints[2]);
            const Shape& in_shape = e.inputs[0].shape();
            std::vector<Tensor> parts;
            if (start > 0) {
                Shape s = in_shape;
                s[axis] = start;
                parts.push_back(Tensor::zeros(std::move(s)));
            }
            parts.push_back(g);
            if (start + len < in_shape[axis]) {
                Shape s = in_shape;
                s[axis] = in_shape[axis] - start - len;
                parts.push_back(Tensor::zeros(std::move(s)));
            }
            if (parts.size() == 1) return g;
            return concat(parts, axis);
        }
        case Op::Stack:
            return index_leading(g, idx);
        case Op::IndexLeading: {
            const std::size_t i = static_cast<std::size_t>(e.attrs.ints[0]);
            const std::size_t rows = e.inputs[0].shape()[0];
            std::vector<Tensor> parts;
            parts.reserve(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                if (r == i) {
                    parts.push_back(g);
                } else {
                    parts.push_back(Tensor::zeros(g.shape()));
                }
            }
            return stack(parts);
        }
        case Op::Reshape:
            return reshape(g, e.inputs[0].shape());
    }
    throw ValueError("op_vjp: unhandled op");
}

} // namespace hetmeta
