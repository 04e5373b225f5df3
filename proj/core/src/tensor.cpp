#include "hetmeta/tensor.hpp"

#include <atomic>
#include <cstring>

namespace hetmeta {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::uint64_t fresh_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

} // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

Tensor make_tensor(Shape shape, std::vector<double> data) {
    if (numel(shape) != data.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    }
    Tensor t;
    auto p = std::make_shared<Tensor::Payload>();
    p->data = std::move(data);
    p->shape = std::move(shape);
    t.payload_ = std::move(p);
    t.id_ = fresh_id();
    return t;
}

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> d(numel(shape), 0.0);
    return make_tensor(std::move(shape), std::move(d));
}

Tensor Tensor::full(Shape shape, double value) {
    std::vector<double> d(numel(shape), value);
    return make_tensor(std::move(shape), std::move(d));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    return make_tensor(std::move(shape), std::move(data));
}

Tensor Tensor::from_vector(std::vector<double> data) {
    Shape s{data.size()};
    return make_tensor(std::move(s), std::move(data));
}

Tensor Tensor::from_matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return make_tensor({rows, cols}, std::move(data));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> d(numel(shape));
    for (double& x : d) x = rng.uniform(lo, hi);
    return make_tensor(std::move(shape), std::move(d));
}

const Shape& Tensor::shape() const {
    static const Shape empty;
    return payload_ ? payload_->shape : empty;
}

std::span<const double> Tensor::data() const {
    if (!payload_) return {};
    return {payload_->data.data(), payload_->data.size()};
}

double Tensor::value() const {
    if (!payload_ || !payload_->shape.empty()) {
        throw ShapeError("value: tensor is not scalar-shaped, got " + shape_str(shape()));
    }
    return payload_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    if (rank() != 2) throw ShapeError("at: tensor is not rank-2, got " + shape_str(shape()));
    return payload_->data[r * shape()[1] + c];
}

Tensor detach(const Tensor& t) {
    Tensor out;
    out.payload_ = t.payload_;
    out.id_ = fresh_id();
    return out;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    if (a.size() == 0) return true;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

} // namespace hetmeta
